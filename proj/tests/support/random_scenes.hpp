// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "dat/core.hpp"
#include "dat/evaluator.hpp"

namespace fixtures {

struct TinyScene {
  std::vector<dat::DetectionRecord> dets;
  std::vector<dat::GroundTruthRecord> gts;
};

/// Up to 5 ground truths and 8 detections over two classes and two images.
/// Most detections are jittered copies of a ground truth so that matches
/// happen at a spread of IoU values.
inline TinyScene random_tiny_scene(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_gt(0, 5), n_det(0, 8), cls(0, 1), img(0, 1);
  std::uniform_real_distribution<double> pos(0.0, 30.0), size(4.0, 20.0), jitter(-4.0, 4.0), unit(0.0, 1.0);
  TinyScene s;
  const int g = n_gt(rng);
  for (int i = 0; i < g; ++i) {
    const double x = pos(rng), y = pos(rng);
    s.gts.push_back({"im" + std::to_string(img(rng)), {x, y, x + size(rng), y + size(rng)}, cls(rng)});
  }
  const int d = n_det(rng);
  for (int i = 0; i < d; ++i) {
    dat::BoundingBox b;
    std::string image;
    if (!s.gts.empty() && unit(rng) < 0.7) {
      const auto& gt = s.gts[std::uniform_int_distribution<std::size_t>(0, s.gts.size() - 1)(rng)];
      b = {gt.box.x_min + jitter(rng), gt.box.y_min + jitter(rng), gt.box.x_max + jitter(rng),
           gt.box.y_max + jitter(rng)};
      if (b.x_max < b.x_min) std::swap(b.x_min, b.x_max);
      if (b.y_max < b.y_min) std::swap(b.y_min, b.y_max);
      image = gt.image_id;
    } else {
      const double x = pos(rng), y = pos(rng);
      b = {x, y, x + size(rng), y + size(rng)};
      image = "im" + std::to_string(img(rng));
    }
    s.dets.push_back({image, b, unit(rng), cls(rng)});
  }
  return s;
}

/// Up to `n` scored boxes over three classes and three images, dense enough
/// that many pairs overlap.
inline std::vector<dat::DetectionRecord> random_detection_set(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> pos(0.0, 60.0), size(5.0, 40.0), score(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, 2), img(0, 2);
  std::vector<dat::DetectionRecord> out;
  for (int i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    out.push_back({"img" + std::to_string(img(rng)), {x, y, x + size(rng), y + size(rng)}, score(rng), cls(rng)});
  }
  return out;
}

}  // namespace fixtures
