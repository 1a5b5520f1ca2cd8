// SPDX-License-Identifier: Apache-2.0
#include "dat/pipeline.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "dat/digest.hpp"

namespace dat {
namespace {

Json embedding_section(const PipelineConfig& cfg) {
  return {{"dim", cfg.embedding.dim},
          {"noise_scale", cfg.embedding.noise_scale},
          {"text_shift", cfg.embedding.text_shift},
          {"text_noise", cfg.embedding.text_noise},
          {"templates", cfg.templates}};
}

Json train_section(const PipelineConfig& cfg) {
  Json j = train_config_to_json(cfg.train);
  j.erase("seed");
  return j;
}

std::string format_ap(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v * 100.0);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_alpha(double a) {
  std::ostringstream os;
  os << a;
  return os.str();
}

}  // namespace

void PipelineConfig::sync_seed() {
  train.seed = seed;
  embedding.seed = seed;
}

void PipelineConfig::validate() const {
  builder.validate();
  train.validate();
  merge.validate();
  fusion.validate();
  if (embedding.dim < 2) throw Error(ErrorCode::kValidation, "embedding dim must be >= 2");
  if (!(embedding.noise_scale >= 0.0) || !(embedding.text_noise >= 0.0)) {
    throw Error(ErrorCode::kValidation, "noise scales must be non-negative");
  }
  PromptTemplateSet check(templates);
  synthetic.validate();
}

Json pipeline_config_to_json(const PipelineConfig& cfg) {
  return {{"seed", cfg.seed},
          {"builder", builder_config_to_json(cfg.builder)},
          {"train", train_section(cfg)},
          {"merge", {{"alpha", cfg.merge.alpha}}},
          {"fusion", fusion_config_to_json(cfg.fusion)},
          {"eval", {{"max_dets_per_image", cfg.eval.max_dets_per_image}}},
          {"embedding", embedding_section(cfg)},
          {"synthetic", synthetic_world_config_to_json(cfg.synthetic)}};
}

PipelineConfig pipeline_config_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, "config must be a JSON object");
  PipelineConfig cfg;
  const Json empty = Json::object();
  auto section = [&](const char* name) -> const Json& { return j.contains(name) ? j.at(name) : empty; };
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.builder = builder_config_from_json(section("builder"), cfg.builder);
    cfg.train = train_config_from_json(section("train"), cfg.train);
    cfg.merge.alpha = section("merge").value("alpha", cfg.merge.alpha);
    cfg.fusion = fusion_config_from_json(section("fusion"), cfg.fusion);
    cfg.eval.max_dets_per_image = section("eval").value("max_dets_per_image", cfg.eval.max_dets_per_image);
    const Json& e = section("embedding");
    cfg.embedding.dim = e.value("dim", cfg.embedding.dim);
    cfg.embedding.noise_scale = e.value("noise_scale", cfg.embedding.noise_scale);
    cfg.embedding.text_shift = e.value("text_shift", cfg.embedding.text_shift);
    cfg.embedding.text_noise = e.value("text_noise", cfg.embedding.text_noise);
    cfg.templates = e.value("templates", cfg.templates);
    cfg.synthetic = synthetic_world_config_from_json(section("synthetic"), cfg.synthetic);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParse, std::string("config: ") + ex.what());
  }
  cfg.sync_seed();
  return cfg;
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kDataset: return "dataset";
    case Stage::kEmbeddings: return "embeddings";
    case Stage::kTrain: return "train";
    case Stage::kMerge: return "merge";
    case Stage::kInfer: return "infer";
    case Stage::kEval: return "eval";
  }
  return "unknown";
}

std::optional<Stage> stage_from_name(std::string_view name) {
  for (Stage s : {Stage::kDataset, Stage::kEmbeddings, Stage::kTrain, Stage::kMerge, Stage::kInfer, Stage::kEval}) {
    if (stage_name(s) == name) return s;
  }
  return std::nullopt;
}

std::string config_digest(const PipelineConfig& cfg, Stage stage) {
  Json doc = {{"stage", stage_name(stage)}};
  const Json full = pipeline_config_to_json(cfg);
  auto take = [&](const char* key) { doc[key] = full.at(key); };
  switch (stage) {
    case Stage::kDataset:
      take("builder");
      break;
    case Stage::kEmbeddings:
      take("seed");
      take("embedding");
      break;
    case Stage::kEval:
      take("eval");
      [[fallthrough]];
    case Stage::kInfer:
      take("fusion");
      [[fallthrough]];
    case Stage::kMerge:
      take("merge");
      [[fallthrough]];
    case Stage::kTrain:
      take("seed");
      take("builder");
      take("embedding");
      take("train");
      break;
  }
  return sha256_hex(doc.dump());
}

HeadParameters<float> initial_head(Eigen::Index d_in, Eigen::Index d_out) {
  return HeadParameters<float>::identity(d_in, d_out);
}

std::vector<DetectionRecord> cooperative_inference(std::span<const DetectionRecord> closed_set_output,
                                                   std::span<const DetectionRecord> open_set,
                                                   const EmbeddingTable& bg_features, const EmbeddingTable& text_emb,
                                                   const HeadParameters<float>& theta, const ClassVocabulary& vocab,
                                                   const FusionConfig& fusion, double ln_eps) {
  std::vector<DetectionRecord> labelled(open_set.begin(), open_set.end());
  std::vector<DetectionRecord> background;
  for (const auto& r : closed_set_output) (r.is_background() ? background : labelled).push_back(r);
  const auto relabelled = classify_regions(background, bg_features, text_emb, theta.cast<double>(), vocab,
                                           fusion.use_objectness, ln_eps);
  return fuse(labelled, relabelled, fusion);
}

std::string_view region_source_name(RegionSource source) {
  return source == RegionSource::kPseudo ? "pseudo" : "ground_truth";
}

RegionDataset synthetic_training_set(const SyntheticWorld& world, const BuilderConfig& builder, RegionSource source) {
  if (source == RegionSource::kPseudo) {
    return build_dataset(world.train_detections, world.train_images, world.vocab, builder);
  }
  std::vector<DetectionRecord> annotated;
  for (const auto& g : world.train_ground_truth) {
    if (world.vocab.is_base(g.class_id)) annotated.push_back({g.image_id, g.box, 1.0, g.class_id});
  }
  return build_dataset(annotated, world.train_images, world.vocab, builder);
}

EvalReport evaluate_head(const SyntheticWorld& world, const EmbeddingTable& text_emb,
                         const HeadParameters<float>& theta, const PipelineConfig& cfg) {
  const auto fused = cooperative_inference(world.eval_detections, {}, world.eval_background_features, text_emb, theta,
                                           world.vocab, cfg.fusion, cfg.train.ln_epsilon);
  return evaluate(fused, world.eval_ground_truth, world.vocab, cfg.eval);
}

SyntheticRun run_synthetic_pipeline(const SyntheticWorld& world, const PipelineConfig& cfg, RegionSource source) {
  SyntheticRun run;
  run.dataset = synthetic_training_set(world, cfg.builder, source);
  run.region_emb = synthetic_region_embeddings(run.dataset, cfg.embedding);
  run.text_emb = synthetic_text_embeddings(world.vocab, cfg.embedding, cfg.prompt_templates());
  run.theta_pre = initial_head(run.region_emb.dim(), run.text_emb.dim());
  auto trained = train(run.dataset, run.region_emb, run.text_emb, run.theta_pre.cast<double>(), cfg.train);
  run.theta_ft = trained.theta.cast<float>();
  run.history = std::move(trained.history);
  run.theta_merged = interpolate(run.theta_pre, run.theta_ft, cfg.merge);
  run.untrained = evaluate_head(world, run.text_emb, run.theta_pre, cfg);
  run.merged = evaluate_head(world, run.text_emb, run.theta_merged, cfg);
  return run;
}

SweepSpec sweep_spec_from_json(const Json& j) {
  SweepSpec s;
  try {
    s.sizes = j.value("sizes", std::vector<int>{});
    s.alphas = j.value("alphas", std::vector<double>{});
    for (const auto& name : j.value("region_sources", std::vector<std::string>{})) {
      if (name == "pseudo") {
        s.sources.push_back(RegionSource::kPseudo);
      } else if (name == "ground_truth") {
        s.sources.push_back(RegionSource::kGroundTruth);
      } else {
        throw Error(ErrorCode::kValidation, "unknown region source '" + name + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("sweep spec: ") + e.what());
  }
  for (int size : s.sizes) {
    if (size < 0) throw Error(ErrorCode::kValidation, "sweep sizes must be non-negative");
  }
  for (double a : s.alphas) MergeConfig{a}.validate();
  return s;
}

std::vector<AblationRow> run_ablation(const PipelineConfig& cfg, const SweepSpec& sweep) {
  const auto sizes = sweep.sizes.empty() ? std::vector<int>{cfg.synthetic.train_images} : sweep.sizes;
  const auto alphas = sweep.alphas.empty() ? std::vector<double>{cfg.merge.alpha} : sweep.alphas;
  const auto sources = sweep.sources.empty() ? std::vector<RegionSource>{RegionSource::kPseudo} : sweep.sources;

  std::vector<AblationRow> rows;
  for (int size : sizes) {
    for (RegionSource source : sources) {
      const std::string prefix =
          "size=" + std::to_string(size) + ";source=" + std::string(region_source_name(source)) + ";alpha=";
      std::optional<SyntheticWorld> world;
      EmbeddingTable text_emb;
      HeadParameters<float> theta_pre, theta_ft;
      std::string setup_error;
      try {
        auto world_cfg = cfg.synthetic;
        world_cfg.train_images = size;
        world = make_synthetic_world(world_cfg, cfg.embedding);
        const auto ds = synthetic_training_set(*world, cfg.builder, source);
        const auto region_emb = synthetic_region_embeddings(ds, cfg.embedding);
        text_emb = synthetic_text_embeddings(world->vocab, cfg.embedding, cfg.prompt_templates());
        theta_pre = initial_head(region_emb.dim(), text_emb.dim());
        theta_ft = train(ds, region_emb, text_emb, theta_pre.cast<double>(), cfg.train).theta.cast<float>();
      } catch (const std::exception& e) {
        setup_error = e.what();
      }
      for (double alpha : alphas) {
        AblationRow row;
        row.variant = prefix + format_alpha(alpha);
        try {
          if (!setup_error.empty()) throw Error(ErrorCode::kInvalidArgument, setup_error);
          const auto merged = interpolate(theta_pre, theta_ft, MergeConfig{alpha});
          const auto report = evaluate_head(*world, text_emb, merged, cfg);
          row.novel_ap50 = report.novel.metrics.ap50;
          row.base_ap50 = report.base.metrics.ap50;
          row.all_ap50 = report.all.metrics.ap50;
        } catch (const std::exception& e) {
          row.status = std::string("error: ") + e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,novel_ap50,base_ap50,all_ap50,status\n";
  for (const auto& r : rows) {
    os << csv_field(r.variant) << ',' << format_ap(r.novel_ap50) << ',' << format_ap(r.base_ap50) << ','
       << format_ap(r.all_ap50) << ',' << csv_field(r.status) << '\n';
  }
  return os.str();
}

}  // namespace dat
