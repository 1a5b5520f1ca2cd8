// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dat/core.hpp"
#include "dat/embedding.hpp"
#include "dat/evaluator.hpp"
#include "dat/json_io.hpp"

namespace dat {

/// Seeded desk-scale scenes standing in for a closed-set detector run over
/// training images and a held-out evaluation set.
struct SyntheticWorldConfig {
  int n_base = 8;
  int n_novel = 4;

  int train_images = 100;
  int regions_per_image = 4;    ///< confident base detections per training image
  int low_conf_per_image = 1;   ///< detections scored below tau_conf
  int background_per_image = 1; ///< unlabelled proposals per training image
  double tau_conf = 0.7;

  int eval_scenes = 200;
  int min_objects = 1;
  int max_objects = 4;
  double novel_fraction = 0.4;          ///< chance an evaluation object is novel
  double missed_base_fraction = 0.1;    ///< base objects left as background

  int image_width = 640;
  int image_height = 480;
  /// Relative box jitter between ground truth and detector output.
  double box_jitter = 0.03;

  void validate() const;
};

Json synthetic_world_config_to_json(const SyntheticWorldConfig& cfg);
SyntheticWorldConfig synthetic_world_config_from_json(const Json& j, SyntheticWorldConfig defaults = {});

struct SyntheticWorld {
  ClassVocabulary vocab;

  std::vector<ImageMeta> train_images;
  std::vector<DetectionRecord> train_detections;
  std::vector<GroundTruthRecord> train_ground_truth;

  std::vector<ImageMeta> eval_images;
  /// Labelled closed-set detections plus background proposals.
  std::vector<DetectionRecord> eval_detections;
  std::vector<GroundTruthRecord> eval_ground_truth;
  /// Frozen features of the eval background proposals, in record order.
  EmbeddingTable eval_background_features;
};

/// Training and evaluation scenes come from independent seeded streams, so
/// changing `train_images` leaves the evaluation set untouched.
SyntheticWorld make_synthetic_world(const SyntheticWorldConfig& cfg, const SyntheticOptions& embedding);

}  // namespace dat
