// SPDX-License-Identifier: Apache-2.0
#include "dat/region_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "dat/digest.hpp"

namespace dat {
namespace {

bool selection_order(const RegionSample& a, const RegionSample& b) {
  if (a.detector_score != b.detector_score) return a.detector_score > b.detector_score;
  if (a.pseudo_label != b.pseudo_label) return a.pseudo_label < b.pseudo_label;
  return a.box < b.box;
}

bool output_order(const RegionSample& a, const RegionSample& b) {
  if (a.detector_score != b.detector_score) return a.detector_score > b.detector_score;
  if (a.box != b.box) return a.box < b.box;
  return a.pseudo_label < b.pseudo_label;
}

}  // namespace

void BuilderConfig::validate() const {
  if (n_max < 1) throw Error(ErrorCode::kValidation, "n_max must be >= 1");
  if (!(tau_conf >= 0.0 && tau_conf <= 1.0)) throw Error(ErrorCode::kValidation, "tau_conf must lie in [0,1]");
  if (crop_size < 1) throw Error(ErrorCode::kValidation, "crop_size must be >= 1");
}

RegionDataset build_dataset(std::span<const DetectionRecord> detections, std::span<const ImageMeta> images,
                            const ClassVocabulary& vocab, const BuilderConfig& config) {
  config.validate();
  std::unordered_map<std::string, const ImageMeta*> meta_by_id;
  for (const auto& m : images) meta_by_id.emplace(m.image_id, &m);

  RegionDataset ds;
  ds.vocabulary = vocab;
  ds.config = config;

  std::map<std::string, std::vector<RegionSample>> per_image;
  for (const auto& d : detections) {
    auto it = meta_by_id.find(d.image_id);
    if (it == meta_by_id.end()) throw Error(ErrorCode::kUnknownImage, "unknown image_id '" + d.image_id + "'");
    if (d.is_background()) {
      ds.background.push_back(d);
      continue;
    }
    if (!vocab.contains(d.class_id)) {
      throw Error(ErrorCode::kUnknownCategory, "class id " + std::to_string(d.class_id) + " not in vocabulary");
    }
    if (!vocab.is_base(d.class_id)) {
      throw Error(ErrorCode::kValidation,
                  "closed-set detection on '" + d.image_id + "' carries novel label '" + vocab.name(d.class_id) + "'");
    }
    if (d.score < config.tau_conf) continue;
    BoundingBox clamped;
    try {
      clamped = clamp_box(d.box, *it->second);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kZeroArea) throw;
      ++ds.skipped_zero_area;
      continue;
    }
    per_image[d.image_id].push_back({d.image_id, clamped, d.class_id, d.score, config.crop_size, {}});
  }

  const auto n_max = static_cast<std::size_t>(config.n_max);
  for (auto& [image_id, samples] : per_image) {
    std::sort(samples.begin(), samples.end(), selection_order);
    if (samples.size() > n_max) samples.resize(n_max);
    std::sort(samples.begin(), samples.end(), output_order);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      samples[k].key = region_key(image_id, k);
      ds.samples.push_back(std::move(samples[k]));
    }
  }
  return ds;
}

DatasetStats dataset_stats(const RegionDataset& ds) {
  DatasetStats s;
  for (const auto& sample : ds.samples) {
    ++s.per_class[sample.pseudo_label];
    ++s.per_image[sample.image_id];
    ++s.total;
  }
  return s;
}

Json builder_config_to_json(const BuilderConfig& cfg) {
  return {{"n_max", cfg.n_max}, {"tau_conf", cfg.tau_conf}, {"crop_size", cfg.crop_size}};
}

BuilderConfig builder_config_from_json(const Json& j, BuilderConfig cfg) {
  if (j.contains("n_max")) cfg.n_max = j.at("n_max").get<int>();
  if (j.contains("tau_conf")) cfg.tau_conf = j.at("tau_conf").get<double>();
  if (j.contains("crop_size")) cfg.crop_size = j.at("crop_size").get<int>();
  return cfg;
}

Json manifest_to_json(const RegionDataset& ds) {
  Json samples = Json::array();
  for (const auto& s : ds.samples) {
    samples.push_back({{"image_id", s.image_id},
                       {"bbox", box_to_json(s.box)},
                       {"label", ds.vocabulary.name(s.pseudo_label)},
                       {"score", s.detector_score},
                       {"key", s.key}});
  }
  Json config = builder_config_to_json(ds.config);
  config["resize"] = "square";
  Json doc = {{"format", "dat-region-manifest"},
              {"version", 1},
              {"config", config},
              {"vocab", vocabulary_to_json(ds.vocabulary)},
              {"samples", samples},
              {"background", detections_to_json(ds.background, ds.vocabulary)},
              {"skipped_zero_area", ds.skipped_zero_area},
              {"provenance", ds.provenance}};
  doc["digest"] = sha256_hex(doc.dump());
  return doc;
}

RegionDataset manifest_from_json(const Json& j) {
  if (!j.is_object() || j.value("format", "") != "dat-region-manifest") {
    throw Error(ErrorCode::kParse, "not a region manifest");
  }
  Json body = j;
  const auto digest = body.value("digest", "");
  body.erase("digest");
  if (digest != sha256_hex(body.dump())) {
    throw Error(ErrorCode::kDigestMismatch, "manifest content digest does not match its contents");
  }
  RegionDataset ds;
  ds.vocabulary = vocabulary_from_json(j.at("vocab"));
  ds.config = builder_config_from_json(j.at("config"));
  for (const auto& item : j.at("samples")) {
    RegionSample s;
    s.image_id = item.at("image_id").get<std::string>();
    s.box = box_from_json(item.at("bbox"));
    const auto label = item.at("label").get<std::string>();
    auto id = ds.vocabulary.find(label);
    if (!id) throw Error(ErrorCode::kUnknownCategory, "unknown category '" + label + "'");
    s.pseudo_label = *id;
    s.detector_score = item.at("score").get<double>();
    s.crop_size = ds.config.crop_size;
    s.key = item.at("key").get<std::string>();
    ds.samples.push_back(std::move(s));
  }
  ds.background = detections_from_json(j.at("background"), ds.vocabulary);
  ds.skipped_zero_area = j.value("skipped_zero_area", std::size_t{0});
  ds.provenance = j.value("provenance", std::map<std::string, std::string>{});
  return ds;
}

}  // namespace dat
