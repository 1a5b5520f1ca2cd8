// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dat/core.hpp"

namespace dat {

struct GroundTruthRecord {
  std::string image_id;
  BoundingBox box;
  ClassId class_id = 0;

  friend bool operator==(const GroundTruthRecord&, const GroundTruthRecord&) = default;
};

/// One ranked detection for a single class: its score and whether it
/// matched a ground-truth box.
struct RankedFlag {
  double score = 0.0;
  bool true_positive = false;
};

/// Greedy matching for one (image, class) cell. Detections are visited in
/// descending score order (stable on input order); each takes the unmatched
/// ground truth with the highest IoU >= `iou_thresh`. Returns one flag per
/// detection, in input order.
std::vector<bool> match_detections(std::span<const DetectionRecord> dets,
                                   std::span<const GroundTruthRecord> gts, double iou_thresh);

/// 101-point interpolated AP over flags already sorted by descending score.
/// Precision is made non-increasing from the right and sampled at recall
/// k/100 for k = 0..100. Returns nullopt when `n_gt` is 0 (class excluded).
std::optional<double> average_precision(std::span<const RankedFlag> ranked, std::size_t n_gt);

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

struct EvalConfig {
  /// Per-image cap on detections considered per class; 0 means no cap.
  std::size_t max_dets_per_image = 0;
};

struct ApTriple {
  std::optional<double> ap;
  std::optional<double> ap50;
  std::optional<double> ap75;
};

struct ClassMetrics {
  ClassId class_id = 0;
  std::string name;
  bool novel = false;
  std::size_t n_gt = 0;
  std::size_t n_dets = 0;
  ApTriple metrics;
};

struct SplitMetrics {
  ApTriple metrics;
  std::size_t n_classes_scored = 0;
  std::size_t n_gt = 0;
  std::size_t n_dets = 0;
};

struct EvalReport {
  SplitMetrics novel;
  SplitMetrics base;
  SplitMetrics all;
  std::vector<ClassMetrics> per_class;
};

/// Per class and IoU threshold: match, rank, AP. Class AP is the mean over
/// thresholds; split AP is the mean over classes with at least one ground
/// truth in that split. Background detections are ignored.
EvalReport evaluate(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts,
                    const ClassVocabulary& vocab, const EvalConfig& cfg = {});

/// Fixed-width "Novel / Base / All" table, values x100.
std::string format_report_table(const EvalReport& report);

}  // namespace dat
