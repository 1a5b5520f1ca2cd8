// SPDX-License-Identifier: Apache-2.0
#include "dat/inference.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include "dat/trainer.hpp"

namespace dat {
namespace {

bool nms_order(const DetectionRecord& a, const DetectionRecord& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box != b.box) return a.box < b.box;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  return a.class_id < b.class_id;
}

bool fused_order(const DetectionRecord& a, const DetectionRecord& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  if (a.box != b.box) return a.box < b.box;
  return a.class_id < b.class_id;
}

}  // namespace

void FusionConfig::validate() const {
  if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw Error(ErrorCode::kValidation, "nms_iou must lie in [0,1]");
  if (!(min_score >= 0.0 && min_score <= 1.0)) throw Error(ErrorCode::kValidation, "min_score must lie in [0,1]");
}

Json fusion_config_to_json(const FusionConfig& cfg) {
  return {{"nms_iou", cfg.nms_iou}, {"min_score", cfg.min_score}, {"use_objectness", cfg.use_objectness}};
}

FusionConfig fusion_config_from_json(const Json& j, FusionConfig cfg) {
  cfg.nms_iou = j.value("nms_iou", cfg.nms_iou);
  cfg.min_score = j.value("min_score", cfg.min_score);
  cfg.use_objectness = j.value("use_objectness", cfg.use_objectness);
  return cfg;
}

std::string background_key(const std::string& image_id, std::size_t k) {
  return image_id + "#bg" + std::to_string(k);
}

std::vector<std::string> background_keys(std::span<const DetectionRecord> bg_records) {
  std::unordered_map<std::string, std::size_t> seen;
  std::vector<std::string> keys;
  keys.reserve(bg_records.size());
  for (const auto& r : bg_records) keys.push_back(background_key(r.image_id, seen[r.image_id]++));
  return keys;
}

std::vector<DetectionRecord> classify_regions(std::span<const DetectionRecord> bg_records,
                                              const EmbeddingTable& bg_features, const EmbeddingTable& text_emb,
                                              const HeadParameters<double>& theta, const ClassVocabulary& vocab,
                                              bool use_objectness, double ln_eps) {
  if (static_cast<std::size_t>(bg_features.rows()) != bg_records.size()) {
    throw Error(ErrorCode::kAlignmentMismatch, "background features have " + std::to_string(bg_features.rows()) +
                                                   " rows for " + std::to_string(bg_records.size()) + " records");
  }
  const auto keys = background_keys(bg_records);
  for (std::size_t i = 0; i < bg_records.size(); ++i) {
    if (!bg_records[i].is_background()) {
      throw Error(ErrorCode::kValidation, "classify_regions expects background records only");
    }
    if (bg_features.item_ids[i] != keys[i]) {
      throw Error(ErrorCode::kAlignmentMismatch, "background feature row " + std::to_string(i) + " is '" +
                                                     bg_features.item_ids[i] + "', expected '" + keys[i] + "'");
    }
  }
  if (bg_records.empty()) return {};

  const auto text_row = text_rows_by_class(text_emb, vocab);
  std::vector<ClassId> classes;
  for (std::size_t c = 0; c < text_row.size(); ++c) {
    if (text_row[c] >= 0) classes.push_back(static_cast<ClassId>(c));
  }
  if (classes.empty()) throw Error(ErrorCode::kAlignmentMismatch, "text embeddings cover no vocabulary class");
  Matrix<double> texts(static_cast<Eigen::Index>(classes.size()), text_emb.dim());
  for (std::size_t j = 0; j < classes.size(); ++j) {
    texts.row(static_cast<Eigen::Index>(j)) = text_emb.data.row(text_row[static_cast<std::size_t>(classes[j])]).cast<double>();
  }

  const Matrix<double> features = bg_features.data.cast<double>();
  const Matrix<double> v = head_forward(features, theta, ln_eps);
  const Matrix<double> z = pair_logits(v, texts, theta.log_t, theta.b);

  std::vector<DetectionRecord> out;
  out.reserve(bg_records.size());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < z.cols(); ++j) {
      if (z(i, j) > z(i, best)) best = j;
    }
    DetectionRecord r = bg_records[static_cast<std::size_t>(i)];
    const double objectness = use_objectness ? r.score : 1.0;
    r.class_id = classes[static_cast<std::size_t>(best)];
    r.score = stable_sigmoid(z(i, best)) * objectness;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<DetectionRecord> nms(std::span<const DetectionRecord> records, double iou_thresh) {
  std::vector<DetectionRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), nms_order);
  std::map<std::pair<std::string, ClassId>, std::vector<std::size_t>> kept_by_cell;
  std::vector<DetectionRecord> kept;
  for (const auto& r : sorted) {
    auto& cell = kept_by_cell[{r.image_id, r.class_id}];
    const bool suppressed =
        std::any_of(cell.begin(), cell.end(), [&](std::size_t k) { return iou(kept[k].box, r.box) > iou_thresh; });
    if (suppressed) continue;
    cell.push_back(kept.size());
    kept.push_back(r);
  }
  return kept;
}

std::vector<DetectionRecord> fuse(std::span<const DetectionRecord> closed_set,
                                  std::span<const DetectionRecord> vlm_labeled, const FusionConfig& cfg) {
  cfg.validate();
  std::vector<DetectionRecord> pool;
  pool.reserve(closed_set.size() + vlm_labeled.size());
  for (auto branch : {closed_set, vlm_labeled}) {
    for (const auto& r : branch) {
      if (r.is_background()) throw Error(ErrorCode::kValidation, "fuse expects labelled records only");
      if (r.score >= cfg.min_score) pool.push_back(r);
    }
  }
  auto out = nms(pool, cfg.nms_iou);
  std::sort(out.begin(), out.end(), fused_order);
  return out;
}

}  // namespace dat
