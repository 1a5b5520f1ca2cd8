// SPDX-License-Identifier: Apache-2.0
#include "dat/core.hpp"

#include <algorithm>
#include <cmath>

namespace dat {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kInputNotFound: return "input not found";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kUnknownImage: return "unknown image_id";
    case ErrorCode::kUnknownCategory: return "unknown category";
    case ErrorCode::kZeroArea: return "zero area";
    case ErrorCode::kDegenerate: return "degenerate configuration";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kAlignmentMismatch: return "alignment mismatch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncatedPayload: return "truncated payload";
    case ErrorCode::kIdCountMismatch: return "row/id count mismatch";
    case ErrorCode::kDigestMismatch: return "digest mismatch";
    case ErrorCode::kIo: return "io error";
  }
  return "error";
}

bool BoundingBox::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
}

BoundingBox make_box(double x_min, double y_min, double x_max, double y_max) {
  BoundingBox box{x_min, y_min, x_max, y_max};
  if (!box.valid()) {
    throw Error(ErrorCode::kValidation, "invalid bounding box: coordinates must be finite with min <= max");
  }
  return box;
}

ClassVocabulary::ClassVocabulary(std::vector<std::string> names,
                                 const std::vector<std::string>& novel_names)
    : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const auto id = static_cast<ClassId>(i);
    if (names_[i] == kBackgroundName) {
      throw Error(ErrorCode::kValidation, "class name '__background__' is reserved");
    }
    if (!index_.emplace(names_[i], id).second) {
      throw Error(ErrorCode::kValidation, "duplicate class name '" + names_[i] + "'");
    }
  }
  for (const auto& n : novel_names) {
    auto it = index_.find(n);
    if (it == index_.end()) {
      throw Error(ErrorCode::kUnknownCategory, "novel class '" + n + "' is not in the vocabulary");
    }
    novel_ids_.insert(it->second);
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const auto id = static_cast<ClassId>(i);
    if (!novel_ids_.count(id)) base_ids_.insert(id);
  }
}

const std::string& ClassVocabulary::name(ClassId id) const {
  if (!contains(id)) {
    throw Error(ErrorCode::kInvalidArgument, "class id " + std::to_string(id) + " out of range");
  }
  return names_[static_cast<std::size_t>(id)];
}

std::optional<ClassId> ClassVocabulary::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BoundingBox clamp_box(const BoundingBox& box, const ImageMeta& meta) {
  if (meta.width <= 0 || meta.height <= 0) {
    throw Error(ErrorCode::kValidation, "image '" + meta.image_id + "' has non-positive size");
  }
  const double w = meta.width;
  const double h = meta.height;
  BoundingBox out{std::clamp(box.x_min, 0.0, w), std::clamp(box.y_min, 0.0, h),
                  std::clamp(box.x_max, 0.0, w), std::clamp(box.y_max, 0.0, h)};
  if (!(out.area() > 0.0)) {
    throw Error(ErrorCode::kZeroArea, "box on image '" + meta.image_id + "' has zero area after clamping");
  }
  return out;
}

std::string region_key(const std::string& image_id, std::size_t k) {
  return image_id + "#" + std::to_string(k);
}

}  // namespace dat
