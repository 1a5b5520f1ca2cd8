// SPDX-License-Identifier: Apache-2.0
#include "dat/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace dat {
namespace {

std::vector<std::size_t> score_order(std::span<const DetectionRecord> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

std::optional<double> mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

struct ImageCell {
  std::vector<DetectionRecord> dets;
  std::vector<GroundTruthRecord> gts;
};

}  // namespace

std::vector<bool> match_detections(std::span<const DetectionRecord> dets,
                                   std::span<const GroundTruthRecord> gts, double iou_thresh) {
  std::vector<bool> flags(dets.size(), false);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : score_order(dets)) {
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double o = iou(dets[d].box, gts[g].box);
      if (o >= iou_thresh && o > best) {
        best = o;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      taken[best_g] = true;
      flags[d] = true;
    }
  }
  return flags;
}

std::optional<double> average_precision(std::span<const RankedFlag> ranked, std::size_t n_gt) {
  if (n_gt == 0) return std::nullopt;
  const std::size_t n = ranked.size();
  std::vector<double> recall(n), precision(n);
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    (ranked[i].true_positive ? tp : fp) += 1.0;
    recall[i] = tp / static_cast<double>(n_gt);
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t(10);
  for (int k = 0; k < 10; ++k) t[static_cast<std::size_t>(k)] = 0.5 + 0.05 * k;
  return t;
}

EvalReport evaluate(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts,
                    const ClassVocabulary& vocab, const EvalConfig& cfg) {
  const auto thresholds = coco_iou_thresholds();
  constexpr std::size_t kAp50 = 0;
  constexpr std::size_t kAp75 = 5;

  // class -> image_id -> cell; std::map keeps the image order fixed.
  std::vector<std::map<std::string, ImageCell>> cells(vocab.size());
  for (const auto& g : gts) {
    if (!vocab.contains(g.class_id)) {
      throw Error(ErrorCode::kUnknownCategory, "ground truth class id " + std::to_string(g.class_id) + " not in vocabulary");
    }
    cells[static_cast<std::size_t>(g.class_id)][g.image_id].gts.push_back(g);
  }
  for (const auto& d : dets) {
    if (d.is_background()) continue;
    if (!vocab.contains(d.class_id)) {
      throw Error(ErrorCode::kUnknownCategory, "detection class id " + std::to_string(d.class_id) + " not in vocabulary");
    }
    cells[static_cast<std::size_t>(d.class_id)][d.image_id].dets.push_back(d);
  }

  EvalReport report;
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    const auto cid = static_cast<ClassId>(c);
    ClassMetrics cm;
    cm.class_id = cid;
    cm.name = vocab.name(cid);
    cm.novel = vocab.is_novel(cid);

    for (auto& [image_id, cell] : cells[c]) {
      std::stable_sort(cell.dets.begin(), cell.dets.end(),
                       [](const DetectionRecord& a, const DetectionRecord& b) { return a.score > b.score; });
      if (cfg.max_dets_per_image > 0 && cell.dets.size() > cfg.max_dets_per_image) {
        cell.dets.resize(cfg.max_dets_per_image);
      }
      cm.n_gt += cell.gts.size();
      cm.n_dets += cell.dets.size();
    }

    std::vector<double> per_threshold;
    for (double t : thresholds) {
      std::vector<RankedFlag> ranked;
      ranked.reserve(cm.n_dets);
      for (const auto& [image_id, cell] : cells[c]) {
        const auto flags = match_detections(cell.dets, cell.gts, t);
        for (std::size_t i = 0; i < cell.dets.size(); ++i) ranked.push_back({cell.dets[i].score, flags[i]});
      }
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const RankedFlag& a, const RankedFlag& b) { return a.score > b.score; });
      if (auto ap = average_precision(ranked, cm.n_gt)) per_threshold.push_back(*ap);
    }
    if (!per_threshold.empty()) {
      cm.metrics.ap = mean_of(per_threshold);
      cm.metrics.ap50 = per_threshold[kAp50];
      cm.metrics.ap75 = per_threshold[kAp75];
    }
    report.per_class.push_back(std::move(cm));
  }

  auto aggregate = [&](auto&& in_split) {
    SplitMetrics s;
    std::vector<double> ap, ap50, ap75;
    for (const auto& cm : report.per_class) {
      if (!in_split(cm)) continue;
      s.n_gt += cm.n_gt;
      s.n_dets += cm.n_dets;
      if (!cm.metrics.ap) continue;
      ap.push_back(*cm.metrics.ap);
      ap50.push_back(*cm.metrics.ap50);
      ap75.push_back(*cm.metrics.ap75);
    }
    s.n_classes_scored = ap.size();
    s.metrics = {mean_of(ap), mean_of(ap50), mean_of(ap75)};
    return s;
  };
  report.novel = aggregate([](const ClassMetrics& cm) { return cm.novel; });
  report.base = aggregate([](const ClassMetrics& cm) { return !cm.novel; });
  report.all = aggregate([](const ClassMetrics&) { return true; });
  return report;
}

std::string format_report_table(const EvalReport& report) {
  auto cell = [](const std::optional<double>& v) {
    char buf[16];
    if (v) {
      std::snprintf(buf, sizeof buf, "%6.1f", *v * 100.0);
    } else {
      std::snprintf(buf, sizeof buf, "%6s", "-");
    }
    return std::string(buf);
  };
  std::ostringstream os;
  os << "          |        Novel         |         Base         |         All\n";
  os << "          |   AP   AP50   AP75   |   AP   AP50   AP75   |   AP   AP50   AP75\n";
  os << "----------+----------------------+----------------------+---------------------\n";
  os << "  metrics |";
  for (const SplitMetrics* s : {&report.novel, &report.base, &report.all}) {
    os << cell(s->metrics.ap) << ' ' << cell(s->metrics.ap50) << ' ' << cell(s->metrics.ap75) << " |";
  }
  os << '\n';
  return os.str();
}

}  // namespace dat
