// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner. Each criterion prints one line of the form
//   [PASS] <n> <name>: <measured detail>
// and the process exits nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dat/checkpoint.hpp"
#include "dat/cli.hpp"
#include "dat/digest.hpp"
#include "dat/evaluator.hpp"
#include "dat/head.hpp"
#include "dat/inference.hpp"
#include "dat/json_io.hpp"
#include "dat/merge.hpp"
#include "dat/optimizer.hpp"
#include "dat/pipeline.hpp"
#include "dat/region_dataset.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/random_scenes.hpp"

namespace fs = std::filesystem;
using namespace dat;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::fprintf(stderr, "cli %s failed: %s\n", args.empty() ? "" : args[0].c_str(), err.str().c_str());
  return code;
}

// 1. Analytic gradients agree with central differences.
Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int worst_seed = -1;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const auto theta = fixtures::random_head(rng, 16, 8);
    const auto batch = fixtures::random_batch(rng, 16, 8, 4, 3);
    const auto analytic = oracle::flatten(loss_gradients(batch, theta).grads);
    const auto numeric =
        oracle::numeric_gradient(theta, [&](const HeadParameters<double>& p) { return batch_loss(batch, p); }, 1e-4);
    const double e = oracle::max_relative_error(analytic, numeric);
    if (e > worst) {
      worst = e;
      worst_seed = seed;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 5.0,
          fmt("max relative error %.3g (seed %.0f), %.2f s", worst, worst_seed, secs)};
}

// 2. Merge endpoints are exact and the midpoint is the elementwise mean.
Outcome merge_identities() {
  bool ok = true;
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pd = fixtures::random_head(rng, 16, 8);
    const auto fd = fixtures::random_head(rng, 16, 8);
    const auto pf = pd.cast<float>();
    const auto ff = fd.cast<float>();
    ok = ok && interpolate(pf, ff, MergeConfig{1.0}) == pf && interpolate(pf, ff, MergeConfig{0.0}) == ff;
    ok = ok && interpolate(pd, fd, MergeConfig{1.0}) == pd && interpolate(pd, fd, MergeConfig{0.0}) == fd;
  }
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = fixtures::random_head(rng, 16, 8);
    const auto f = fixtures::random_head(rng, 16, 8);
    const auto m = interpolate(p, f, MergeConfig{0.5});
    auto track = [&](double got, double a, double b) {
      const double want = (a + b) / 2.0;
      if (want != 0.0) worst = std::max(worst, std::abs(got - want) / std::abs(want));
    };
    for (Eigen::Index i = 0; i < m.W.size(); ++i) track(m.W.data()[i], p.W.data()[i], f.W.data()[i]);
    for (Eigen::Index i = 0; i < m.gamma.size(); ++i) track(m.gamma[i], p.gamma[i], f.gamma[i]);
    for (Eigen::Index i = 0; i < m.beta.size(); ++i) track(m.beta[i], p.beta[i], f.beta[i]);
    track(m.log_t, p.log_t, f.log_t);
    track(m.b, p.b, f.b);
  }
  return {ok && worst <= 1e-7,
          std::string("endpoints exact: ") + (ok ? "yes" : "no") + fmt("; midpoint max relative error %.3g", worst)};
}

// 3. Parameter census and frozen features.
Outcome census_and_frozen_features(const fs::path& dir) {
  bool ok = true;
  for (auto [d_in, d_out] : std::vector<std::pair<int, int>>{{16, 16}, {64, 32}, {512, 512}, {7, 3}}) {
    const auto theta = HeadParameters<float>::identity(d_in, d_out);
    const std::size_t want = 2u * d_in + std::size_t(d_in) * d_out + 2u;
    ok = ok && census(theta).total == want && trainable_parameter_count(d_in, d_out) == want;
  }
  ok = ok && trainable_parameter_count(64, 32) == 2178;

  fs::create_directories(dir);
  write_text_file(dir / "cfg.json", R"({"train": {"lr0": 0.01}, "synthetic": {"train_images": 30, "eval_scenes": 20}})");
  const auto p = [&](const char* name) { return (dir / name).string(); };
  const auto cfg = p("cfg.json");
  ok = ok && cli({"synth-scenes", "--config", cfg, "--out-dir", p("w")}) == 0;
  ok = ok && cli({"build-dataset", "--config", cfg, "--detections", p("w/train_detections.json"), "--images",
                  p("w/train_images.json"), "--vocab", p("w/vocab.json"), "--out", p("manifest.json")}) == 0;
  ok = ok && cli({"embed-synth", "--config", cfg, "--manifest", p("manifest.json"), "--regions-out", p("regions.date"),
                  "--vocab", p("w/vocab.json"), "--text-out", p("text.date")}) == 0;
  if (!ok) return {false, "census or setup failed"};
  const std::vector<fs::path> frozen = {dir / "regions.date", dir / "text.date", dir / "w/eval_background.date"};
  std::vector<std::string> before;
  for (const auto& f : frozen) before.push_back(sha256_file(f));
  ok = cli({"train", "--config", cfg, "--manifest", p("manifest.json"), "--regions", p("regions.date"), "--text",
            p("text.date"), "--out-dir", p("run")}) == 0;
  bool same = ok;
  for (std::size_t i = 0; ok && i < frozen.size(); ++i) same = same && sha256_file(frozen[i]) == before[i];
  const auto ft = read_checkpoint(dir / "run/head_ft.ckpt").theta;
  const bool trained_census = ft.parameter_count() == 2 * 16 + 16 * 16 + 2;
  return {ok && same && trained_census,
          std::string("2*64+64*32+2 = ") + std::to_string(trainable_parameter_count(64, 32)) +
              "; feature files unchanged by train: " + (same ? "yes" : "no")};
}

// 4. Builder filtering and cap, plus a byte-identical CLI rebuild.
Outcome builder_filter(const fs::path& dir) {
  fs::create_directories(dir);
  const auto p = [&](const char* name) { return (dir / name).string(); };
  write_text_file(dir / "cfg.json",
                  R"({"synthetic": {"train_images": 12, "regions_per_image": 100, "low_conf_per_image": 30, "eval_scenes": 1}})");
  const auto cfg = p("cfg.json");
  if (cli({"synth-scenes", "--config", cfg, "--out-dir", p("w")}) != 0) return {false, "synth-scenes failed"};
  auto build = [&](const char* out) {
    return cli({"build-dataset", "--config", cfg, "--detections", p("w/train_detections.json"), "--images",
                p("w/train_images.json"), "--vocab", p("w/vocab.json"), "--out", p(out), "--tau-conf", "0.7",
                "--n-max", "80"});
  };
  if (build("a.json") != 0 || build("b.json") != 0) return {false, "build-dataset failed"};

  const auto dets = read_json_file(dir / "w/train_detections.json");
  std::map<std::string, int> candidates;
  for (const auto& d : dets) candidates[d["image_id"].get<std::string>()] += 1;
  int min_candidates = std::numeric_limits<int>::max();
  for (const auto& [img, n] : candidates) min_candidates = std::min(min_candidates, n);

  const auto ds = manifest_from_json(read_json_file(dir / "a.json"));
  std::map<std::string, int> per_image;
  double min_score = 1.0;
  for (const auto& s : ds.samples) {
    per_image[s.image_id] += 1;
    min_score = std::min(min_score, s.detector_score);
  }
  int max_kept = 0;
  for (const auto& [img, n] : per_image) max_kept = std::max(max_kept, n);
  const bool identical = read_text_file(dir / "a.json") == read_text_file(dir / "b.json");
  const bool ok = min_candidates > 80 && min_score >= 0.7 && max_kept <= 80 && identical && !ds.samples.empty();
  return {ok, fmt("min candidates/image %.0f, max kept/image %.0f, min kept score %.3f", min_candidates, max_kept,
                  min_score) +
                  "; rebuild identical: " + (identical ? "yes" : "no")};
}

// 5. COCO-style AP against a brute-force oracle.
Outcome ap_oracle() {
  const ClassVocabulary vocab({"p", "q"}, {"q"});
  std::mt19937_64 rng(5);
  double worst = 0.0;
  bool presence = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = fixtures::random_tiny_scene(rng);
    const auto r = evaluate(s.dets, s.gts, vocab);
    for (ClassId c : {0, 1}) {
      const auto want = oracle::class_ap(s.dets, s.gts, c);
      const auto& got = r.per_class[static_cast<std::size_t>(c)].metrics.ap;
      presence = presence && got.has_value() == want.has_value();
      if (got && want) worst = std::max(worst, std::abs(*got - *want));
    }
  }
  std::vector<RankedFlag> ranked = {{0.9, true}, {0.8, false}, {0.7, true}};
  const double tft = average_precision(ranked, 2).value_or(-1.0);
  const double want = *oracle::interpolated_ap({true, false, true}, 2);
  const bool ok = presence && worst <= 1e-9 && std::abs(tft - want) <= 1e-12;
  return {ok, fmt("1000 scenes max |AP - oracle| %.3g; TP,FP,TP AP %.6f (oracle %.6f)", worst, tft, want)};
}

// 6. End-to-end novel-class gain on the synthetic benchmark.
Outcome end_to_end() {
  const auto t0 = Clock::now();
  PipelineConfig cfg;
  cfg.train.lr0 = 1e-2;
  const auto world = make_synthetic_world(cfg.synthetic, cfg.embedding);
  const auto run = run_synthetic_pipeline(world, cfg);
  const double secs = seconds_since(t0);
  if (!run.untrained.novel.metrics.ap50 || !run.merged.novel.metrics.ap50) return {false, "novel AP50 undefined"};
  const double before = *run.untrained.novel.metrics.ap50 * 100.0;
  const double after = *run.merged.novel.metrics.ap50 * 100.0;
  const bool ok = run.dataset.samples.size() == 400 && after - before >= 10.0 && secs < 120.0;
  return {ok, fmt("novel AP50 %.1f -> %.1f over %.0f regions", before, after, double(run.dataset.samples.size())) +
                  fmt(", %.1f s", secs)};
}

// 7. Ablation endpoint alpha = 1 reproduces the untrained head.
Outcome ablation_endpoint(const fs::path& dir) {
  fs::create_directories(dir);
  const char* config_text = R"({"train": {"lr0": 0.01}, "synthetic": {"train_images": 40, "eval_scenes": 60}})";
  write_text_file(dir / "cfg.json", config_text);
  write_text_file(dir / "sweep.json", R"({"alphas": [0, 0.5, 1]})");
  if (cli({"ablate", "--config", (dir / "cfg.json").string(), "--sweep", (dir / "sweep.json").string(), "--out",
           (dir / "table.csv").string()}) != 0) {
    return {false, "ablate failed"};
  }
  const auto cfg = pipeline_config_from_json(Json::parse(config_text));
  const auto world = make_synthetic_world(cfg.synthetic, cfg.embedding);
  const auto text = synthetic_text_embeddings(world.vocab, cfg.embedding, cfg.prompt_templates());
  const auto baseline = evaluate_head(world, text, initial_head(cfg.embedding.dim, cfg.embedding.dim), cfg);

  std::istringstream csv(read_text_file(dir / "table.csv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(csv, line);) lines.push_back(line);
  if (lines.size() != 4) return {false, "expected a header and 3 rows"};

  // Render the baseline through the same CSV writer and compare the text row.
  AblationRow expect;
  expect.variant = lines[3].substr(0, lines[3].find(','));
  expect.novel_ap50 = baseline.novel.metrics.ap50;
  expect.base_ap50 = baseline.base.metrics.ap50;
  expect.all_ap50 = baseline.all.metrics.ap50;
  const auto rendered = ablation_to_csv({expect});
  const bool line_match = rendered == lines[0] + "\n" + lines[3] + "\n";

  SweepSpec sweep;
  sweep.alphas = {0.0, 0.5, 1.0};
  const auto rows = run_ablation(cfg, sweep);
  const bool values = rows.size() == 3 && rows[2].novel_ap50 == expect.novel_ap50 &&
                      rows[2].base_ap50 == expect.base_ap50 && rows[2].all_ap50 == expect.all_ap50;
  return {values && line_match && expect.variant.ends_with("alpha=1"),
          "alpha=1 row \"" + lines[3] + "\" equals untrained evaluation: " + (values && line_match ? "yes" : "no")};
}

// 8. Cosine schedule endpoints and midpoint.
Outcome cosine_schedule() {
  bool ok = true;
  double worst_mid = 0.0;
  for (double lr0 : {1e-5, 1e-3, 0.1, 1.0}) {
    for (long T : {1L, 2L, 10L, 31L, 1000L}) {
      ok = ok && cosine_lr(0, T, lr0) == lr0;
      ok = ok && std::abs(cosine_lr(T, T, lr0)) <= 1e-15 * lr0;
      if (T % 2 == 0) worst_mid = std::max(worst_mid, std::abs(cosine_lr(T / 2, T, lr0) - lr0 / 2) / lr0);
    }
  }
  const double eps = std::numeric_limits<double>::epsilon();
  ok = ok && worst_mid <= 4 * eps;
  return {ok, fmt("lr(T) within 1e-15*lr0; max |lr(T/2) - lr0/2| / lr0 = %.3g (limit %.3g)", worst_mid, 4 * eps)};
}

// 9. NMS invariants on random sets.
Outcome nms_invariants() {
  std::mt19937_64 rng(9);
  const double thr = 0.5;
  int violations = 0;
  std::size_t total_in = 0, total_kept = 0;
  auto same_group = [](const DetectionRecord& a, const DetectionRecord& b) {
    return a.image_id == b.image_id && a.class_id == b.class_id;
  };
  auto key_equal = [](const DetectionRecord& a, const DetectionRecord& b) {
    return a.image_id == b.image_id && a.class_id == b.class_id && a.box == b.box && a.score == b.score;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const auto recs = fixtures::random_detection_set(rng, 1 + trial % 40);
    const auto kept = nms(recs, thr);
    total_in += recs.size();
    total_kept += kept.size();
    const auto again = nms(kept, thr);
    if (again.size() != kept.size()) ++violations;
    for (std::size_t i = 0; i < again.size() && i < kept.size(); ++i) violations += key_equal(again[i], kept[i]) ? 0 : 1;
    std::vector<bool> used(recs.size(), false);
    for (const auto& k : kept) {
      bool found = false;
      for (std::size_t j = 0; j < recs.size() && !found; ++j) {
        if (!used[j] && key_equal(recs[j], k)) used[j] = found = true;
      }
      violations += found ? 0 : 1;
    }
    for (std::size_t j = 0; j < recs.size(); ++j) {
      if (used[j]) continue;
      bool covered = false;
      for (const auto& k : kept) {
        covered = covered || (same_group(k, recs[j]) && k.score >= recs[j].score && iou(k.box, recs[j].box) > thr);
      }
      violations += covered ? 0 : 1;
    }
    for (std::size_t a = 0; a < kept.size(); ++a) {
      for (std::size_t b = a + 1; b < kept.size(); ++b) {
        if (same_group(kept[a], kept[b]) && iou(kept[a].box, kept[b].box) > thr) ++violations;
      }
    }
  }
  return {violations == 0, fmt("1000 sets, %.0f of %.0f boxes kept, %.0f violations", double(total_kept),
                               double(total_in), violations)};
}

}  // namespace

int main() {
  fixtures::TempDir tmp("acceptance");
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient check", gradient_check},
      {"merge identities", merge_identities},
      {"parameter census and frozen features", [&] { return census_and_frozen_features(tmp / "census"); }},
      {"region filter and cap", [&] { return builder_filter(tmp / "builder"); }},
      {"AP oracle", ap_oracle},
      {"end-to-end novel gain", end_to_end},
      {"ablation alpha=1 endpoint", [&] { return ablation_endpoint(tmp / "ablate"); }},
      {"cosine schedule", cosine_schedule},
      {"NMS invariants", nms_invariants},
  };
  int failures = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", index - failures, index);
  return failures == 0 ? 0 : 1;
}
