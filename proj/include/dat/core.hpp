// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dat/error.hpp"

namespace dat {

using ClassId = int;

/// Reserved label for proposals the closed-set detector left unassigned.
/// Never a vocabulary index.
inline constexpr ClassId kBackground = -1;
inline constexpr const char* kBackgroundName = "__background__";

/// Corner-form box in continuous pixel coordinates (x right, y down).
/// Area is (x_max - x_min) * (y_max - y_min); no "+1" pixel convention.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
  friend auto operator<=>(const BoundingBox&, const BoundingBox&) = default;
};

/// Throws kValidation unless ordering holds and all coordinates are finite.
BoundingBox make_box(double x_min, double y_min, double x_max, double y_max);

struct DetectionRecord {
  std::string image_id;
  BoundingBox box;
  double score = 0.0;
  ClassId class_id = kBackground;

  bool is_background() const { return class_id == kBackground; }

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

struct ImageMeta {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::string path;

  friend bool operator==(const ImageMeta&, const ImageMeta&) = default;
};

/// Ordered class names partitioned into base (seen by the closed-set
/// detector) and novel (held out) ids.
class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  /// Every name not listed in `novel_names` is a base class.
  ClassVocabulary(std::vector<std::string> names, const std::vector<std::string>& novel_names);

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(ClassId id) const;
  std::optional<ClassId> find(const std::string& name) const;

  bool contains(ClassId id) const { return id >= 0 && static_cast<std::size_t>(id) < names_.size(); }
  bool is_base(ClassId id) const { return base_ids_.count(id) > 0; }
  bool is_novel(ClassId id) const { return novel_ids_.count(id) > 0; }
  const std::set<ClassId>& base_ids() const { return base_ids_; }
  const std::set<ClassId>& novel_ids() const { return novel_ids_; }

  friend bool operator==(const ClassVocabulary& a, const ClassVocabulary& b) {
    return a.names_ == b.names_ && a.novel_ids_ == b.novel_ids_;
  }

 private:
  std::vector<std::string> names_;
  std::set<ClassId> base_ids_;
  std::set<ClassId> novel_ids_;
  std::unordered_map<std::string, ClassId> index_;
};

/// Intersection over union; 0 when the union is empty.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Clips the box to [0,width] x [0,height]. Throws kZeroArea when nothing
/// of positive area remains.
BoundingBox clamp_box(const BoundingBox& box, const ImageMeta& meta);

/// Stable string key for the k-th region of an image ("<image_id>#<k>").
/// Embedding rows are aligned to records through these keys.
std::string region_key(const std::string& image_id, std::size_t k);

}  // namespace dat
