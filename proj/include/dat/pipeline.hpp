// SPDX-License-Identifier: Apache-2.0
//
// Whole-pipeline plumbing shared by the command-line tool and the ablation
// harness: the run configuration document, stage digests, and in-process
// runs over synthetic scenes.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dat/checkpoint.hpp"
#include "dat/embedding.hpp"
#include "dat/evaluator.hpp"
#include "dat/inference.hpp"
#include "dat/merge.hpp"
#include "dat/region_dataset.hpp"
#include "dat/synthetic_world.hpp"
#include "dat/trainer.hpp"

namespace dat {

/// One configuration document. Defaults: n_max 80, tau_conf 0.7, crop 224,
/// batch 64, lr 1e-5, 5 epochs, alpha 0.5.
struct PipelineConfig {
  std::uint64_t seed = 0;
  BuilderConfig builder;
  TrainConfig train;
  MergeConfig merge;
  FusionConfig fusion;
  EvalConfig eval;
  SyntheticOptions embedding;
  std::vector<std::string> templates = {"a photo of a [CLASS]"};
  SyntheticWorldConfig synthetic;

  /// Propagates `seed` into the train and embedding sections.
  void sync_seed();
  void validate() const;
  PromptTemplateSet prompt_templates() const { return PromptTemplateSet(templates); }
};

Json pipeline_config_to_json(const PipelineConfig& cfg);
/// Missing sections or fields keep their defaults.
PipelineConfig pipeline_config_from_json(const Json& j);

/// Pipeline stages; each digest covers the config sections that can
/// influence artifacts of that stage.
enum class Stage { kDataset, kEmbeddings, kTrain, kMerge, kInfer, kEval };

std::string_view stage_name(Stage stage);
std::optional<Stage> stage_from_name(std::string_view name);
std::string config_digest(const PipelineConfig& cfg, Stage stage);

/// Identity-initialised head, stored precision.
HeadParameters<float> initial_head(Eigen::Index d_in, Eigen::Index d_out);

/// Splits closed-set output into labelled and background records,
/// classifies the background ones with the head, and fuses both branches
/// with optional open-set detections.
std::vector<DetectionRecord> cooperative_inference(std::span<const DetectionRecord> closed_set_output,
                                                   std::span<const DetectionRecord> open_set,
                                                   const EmbeddingTable& bg_features, const EmbeddingTable& text_emb,
                                                   const HeadParameters<float>& theta, const ClassVocabulary& vocab,
                                                   const FusionConfig& fusion,
                                                   double ln_eps = kDefaultLayerNormEps);

enum class RegionSource {
  kPseudo,       ///< closed-set detector output
  kGroundTruth,  ///< base-class annotations, score 1
};

std::string_view region_source_name(RegionSource source);

RegionDataset synthetic_training_set(const SyntheticWorld& world, const BuilderConfig& builder, RegionSource source);

/// Runs cooperative inference on the world's evaluation scenes and scores it.
EvalReport evaluate_head(const SyntheticWorld& world, const EmbeddingTable& text_emb,
                         const HeadParameters<float>& theta, const PipelineConfig& cfg);

struct SyntheticRun {
  RegionDataset dataset;
  EmbeddingTable region_emb;
  EmbeddingTable text_emb;
  HeadParameters<float> theta_pre;
  HeadParameters<float> theta_ft;
  HeadParameters<float> theta_merged;
  std::vector<HistoryEntry> history;
  EvalReport untrained;
  EvalReport merged;
};

/// build -> embed -> train -> merge -> infer -> eval, plus the untrained
/// baseline on the same scenes.
SyntheticRun run_synthetic_pipeline(const SyntheticWorld& world, const PipelineConfig& cfg,
                                    RegionSource source = RegionSource::kPseudo);

struct SweepSpec {
  std::vector<int> sizes;
  std::vector<double> alphas;
  std::vector<RegionSource> sources;
};

SweepSpec sweep_spec_from_json(const Json& j);

struct AblationRow {
  std::string variant;
  std::optional<double> novel_ap50;
  std::optional<double> base_ap50;
  std::optional<double> all_ap50;
  std::string status = "ok";
};

/// One row per (size, source, alpha) cell; unspecified axes use the config
/// value. A failing cell records its error and the sweep continues.
std::vector<AblationRow> run_ablation(const PipelineConfig& cfg, const SweepSpec& sweep);

/// Columns: variant,novel_ap50,base_ap50,all_ap50,status (AP50 x100).
std::string ablation_to_csv(const std::vector<AblationRow>& rows);

}  // namespace dat
