// SPDX-License-Identifier: Apache-2.0
#include "dat/synthetic_world.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "dat/digest.hpp"
#include "dat/inference.hpp"

namespace dat {
namespace {

std::mt19937_64 stream(std::uint64_t seed, std::string_view tag) {
  const auto h = fnv1a64(tag);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

std::string image_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", prefix, i);
  return buf;
}

class SceneSampler {
 public:
  SceneSampler(const SyntheticWorldConfig& cfg, std::mt19937_64 rng) : cfg_(cfg), rng_(std::move(rng)) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }

  ClassId base_class() { return integer(0, cfg_.n_base - 1); }
  ClassId novel_class() { return cfg_.n_base + integer(0, cfg_.n_novel - 1); }

  BoundingBox object_box() {
    const double w = uniform(40.0, 200.0);
    const double h = uniform(40.0, 200.0);
    const double x = uniform(0.0, cfg_.image_width - w);
    const double y = uniform(0.0, cfg_.image_height - h);
    return {x, y, x + w, y + h};
  }

  /// Detector box: ground truth with each edge moved by up to jitter * size.
  /// May overhang the image edge; the dataset builder clamps.
  BoundingBox jittered(const BoundingBox& b) {
    const double jw = cfg_.box_jitter * b.width();
    const double jh = cfg_.box_jitter * b.height();
    BoundingBox out{b.x_min + uniform(-jw, jw), b.y_min + uniform(-jh, jh), b.x_max + uniform(-jw, jw),
                    b.y_max + uniform(-jh, jh)};
    return out;
  }

 private:
  const SyntheticWorldConfig& cfg_;
  std::mt19937_64 rng_;
};

}  // namespace

void SyntheticWorldConfig::validate() const {
  if (n_base < 1 || n_novel < 0) throw Error(ErrorCode::kValidation, "synthetic world needs n_base >= 1, n_novel >= 0");
  if (train_images < 0 || eval_scenes < 0 || regions_per_image < 0 || low_conf_per_image < 0 ||
      background_per_image < 0) {
    throw Error(ErrorCode::kValidation, "synthetic world counts must be non-negative");
  }
  if (min_objects < 1 || max_objects < min_objects) throw Error(ErrorCode::kValidation, "need 1 <= min_objects <= max_objects");
  if (!(tau_conf > 0.0 && tau_conf < 1.0)) throw Error(ErrorCode::kValidation, "synthetic tau_conf must lie in (0,1)");
  if (!(novel_fraction >= 0.0 && novel_fraction <= 1.0) || !(missed_base_fraction >= 0.0 && missed_base_fraction <= 1.0)) {
    throw Error(ErrorCode::kValidation, "synthetic fractions must lie in [0,1]");
  }
  if (n_novel == 0 && (novel_fraction > 0.0 || background_per_image > 0)) {
    throw Error(ErrorCode::kValidation, "novel objects requested but n_novel is 0");
  }
  if (image_width < 240 || image_height < 240) throw Error(ErrorCode::kValidation, "synthetic images must be >= 240 px");
  if (!(box_jitter >= 0.0 && box_jitter < 0.5)) throw Error(ErrorCode::kValidation, "box_jitter must lie in [0,0.5)");
}

Json synthetic_world_config_to_json(const SyntheticWorldConfig& c) {
  return {{"n_base", c.n_base},
          {"n_novel", c.n_novel},
          {"train_images", c.train_images},
          {"regions_per_image", c.regions_per_image},
          {"low_conf_per_image", c.low_conf_per_image},
          {"background_per_image", c.background_per_image},
          {"tau_conf", c.tau_conf},
          {"eval_scenes", c.eval_scenes},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"novel_fraction", c.novel_fraction},
          {"missed_base_fraction", c.missed_base_fraction},
          {"image_width", c.image_width},
          {"image_height", c.image_height},
          {"box_jitter", c.box_jitter}};
}

SyntheticWorldConfig synthetic_world_config_from_json(const Json& j, SyntheticWorldConfig c) {
  c.n_base = j.value("n_base", c.n_base);
  c.n_novel = j.value("n_novel", c.n_novel);
  c.train_images = j.value("train_images", c.train_images);
  c.regions_per_image = j.value("regions_per_image", c.regions_per_image);
  c.low_conf_per_image = j.value("low_conf_per_image", c.low_conf_per_image);
  c.background_per_image = j.value("background_per_image", c.background_per_image);
  c.tau_conf = j.value("tau_conf", c.tau_conf);
  c.eval_scenes = j.value("eval_scenes", c.eval_scenes);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.novel_fraction = j.value("novel_fraction", c.novel_fraction);
  c.missed_base_fraction = j.value("missed_base_fraction", c.missed_base_fraction);
  c.image_width = j.value("image_width", c.image_width);
  c.image_height = j.value("image_height", c.image_height);
  c.box_jitter = j.value("box_jitter", c.box_jitter);
  return c;
}

SyntheticWorld make_synthetic_world(const SyntheticWorldConfig& cfg, const SyntheticOptions& embedding) {
  cfg.validate();
  SyntheticWorld w;
  std::vector<std::string> names, novel;
  for (int i = 0; i < cfg.n_base; ++i) names.push_back("base_" + std::to_string(i));
  for (int i = 0; i < cfg.n_novel; ++i) {
    names.push_back("novel_" + std::to_string(i));
    novel.push_back(names.back());
  }
  w.vocab = ClassVocabulary(names, novel);

  SceneSampler train(cfg, stream(embedding.seed, "synthetic-train"));
  for (int i = 0; i < cfg.train_images; ++i) {
    const auto id = image_name("train", i);
    w.train_images.push_back({id, cfg.image_width, cfg.image_height, id + ".jpg"});
    auto add_object = [&](ClassId c, double score, ClassId detected_as) {
      const auto gt = train.object_box();
      w.train_ground_truth.push_back({id, gt, c});
      w.train_detections.push_back({id, train.jittered(gt), score, detected_as});
    };
    for (int k = 0; k < cfg.regions_per_image; ++k) {
      const auto c = train.base_class();
      add_object(c, train.uniform(cfg.tau_conf + 0.01, 0.99), c);
    }
    for (int k = 0; k < cfg.low_conf_per_image; ++k) {
      const auto c = train.base_class();
      add_object(c, train.uniform(0.05, cfg.tau_conf - 0.01), c);
    }
    for (int k = 0; k < cfg.background_per_image; ++k) {
      add_object(train.novel_class(), train.uniform(0.3, 0.9), kBackground);
    }
  }

  SceneSampler eval(cfg, stream(embedding.seed, "synthetic-eval"));
  std::vector<ClassId> bg_truth;
  std::vector<DetectionRecord> bg_records;
  for (int i = 0; i < cfg.eval_scenes; ++i) {
    const auto id = image_name("eval", i);
    w.eval_images.push_back({id, cfg.image_width, cfg.image_height, id + ".jpg"});
    const int k = eval.integer(cfg.min_objects, cfg.max_objects);
    for (int o = 0; o < k; ++o) {
      const bool is_novel = cfg.n_novel > 0 && eval.chance(cfg.novel_fraction);
      const ClassId c = is_novel ? eval.novel_class() : eval.base_class();
      const auto gt = eval.object_box();
      w.eval_ground_truth.push_back({id, gt, c});
      const bool as_background = is_novel || eval.chance(cfg.missed_base_fraction);
      DetectionRecord det{id, eval.jittered(gt), 0.0, as_background ? kBackground : c};
      det.score = as_background ? eval.uniform(0.3, 1.0) : eval.uniform(0.5, 1.0);
      w.eval_detections.push_back(det);
      if (as_background) {
        bg_truth.push_back(c);
        bg_records.push_back(det);
      }
    }
  }
  const auto keys = background_keys(bg_records);
  w.eval_background_features = synthetic_region_embeddings(bg_truth, keys, embedding);
  return w;
}

}  // namespace dat
