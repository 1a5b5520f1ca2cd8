// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "dat/core.hpp"
#include "dat/embedding.hpp"
#include "dat/head.hpp"
#include "dat/json_io.hpp"

namespace dat {

struct FusionConfig {
  double nms_iou = 0.5;
  double min_score = 0.05;
  /// Multiply the VLM confidence by the proposal's objectness score.
  bool use_objectness = true;

  void validate() const;
};

Json fusion_config_to_json(const FusionConfig& cfg);
FusionConfig fusion_config_from_json(const Json& j, FusionConfig defaults = {});

/// Row key of the k-th background proposal of an image ("<image_id>#bg<k>").
std::string background_key(const std::string& image_id, std::size_t k);

/// Keys for background records in their given order.
std::vector<std::string> background_keys(std::span<const DetectionRecord> bg_records);

/// Re-labels background proposals with the adapted head. For each region the
/// class is argmax_j z_j over every class with a text row (first index on
/// ties), and the score becomes sigmoid(z_max), times the proposal score when
/// `use_objectness` is set. Boxes are unchanged.
std::vector<DetectionRecord> classify_regions(std::span<const DetectionRecord> bg_records,
                                              const EmbeddingTable& bg_features, const EmbeddingTable& text_emb,
                                              const HeadParameters<double>& theta, const ClassVocabulary& vocab,
                                              bool use_objectness = true, double ln_eps = kDefaultLayerNormEps);

/// Greedy per-(image, class) suppression of records whose IoU with an
/// already kept record exceeds `iou_thresh`. Candidates are visited by
/// descending score, ties by box; output keeps that order.
std::vector<DetectionRecord> nms(std::span<const DetectionRecord> records, double iou_thresh);

/// Concatenates both branches, drops scores below min_score, applies NMS,
/// and orders the result by score, image_id, then box.
std::vector<DetectionRecord> fuse(std::span<const DetectionRecord> closed_set,
                                  std::span<const DetectionRecord> vlm_labeled, const FusionConfig& cfg);

}  // namespace dat
