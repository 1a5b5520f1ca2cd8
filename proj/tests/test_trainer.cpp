// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "dat/pipeline.hpp"

using namespace dat;

namespace {

struct Setup {
  RegionDataset ds;
  EmbeddingTable regions;
  EmbeddingTable text;
};

Setup make_setup(int images = 100) {
  SyntheticWorldConfig wc;
  wc.train_images = images;
  wc.eval_scenes = 0;
  SyntheticOptions emb;
  const auto world = make_synthetic_world(wc, emb);
  Setup s;
  s.ds = synthetic_training_set(world, BuilderConfig{}, RegionSource::kPseudo);
  s.regions = synthetic_region_embeddings(s.ds, emb);
  s.text = synthetic_text_embeddings(world.vocab, emb);
  return s;
}

HeadParameters<double> init(const Setup& s) { return initial_head(s.regions.dim(), s.text.dim()).cast<double>(); }

}  // namespace

TEST_CASE("step count is epochs times batches per epoch") {
  TrainConfig cfg;
  CHECK(total_train_steps(400, cfg) == 35);
  cfg.batch_size = 400;
  cfg.epochs = 1;
  CHECK(total_train_steps(400, cfg) == 1);
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("one epoch with a batch covering the data runs exactly one step") {
  const auto s = make_setup(10);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1000;
  const auto r = train(s.ds, s.regions, s.text, init(s), cfg);
  REQUIRE(r.history.size() == 1);
  CHECK(r.history[0].step == 0);
  CHECK(r.history[0].lr == cfg.lr0);
}

TEST_CASE("training is deterministic for a seed and depends on it") {
  const auto s = make_setup(30);
  TrainConfig cfg;
  cfg.lr0 = 1e-2;
  const auto a = train(s.ds, s.regions, s.text, init(s), cfg);
  const auto b = train(s.ds, s.regions, s.text, init(s), cfg);
  CHECK(a.theta == b.theta);
  CHECK(history_to_csv(a.history) == history_to_csv(b.history));
  cfg.seed = 1;
  CHECK_FALSE(train(s.ds, s.regions, s.text, init(s), cfg).theta == a.theta);
}

TEST_CASE("loss decreases on separable synthetic data and inputs stay untouched") {
  const auto s = make_setup(100);
  REQUIRE(s.ds.samples.size() == 400);
  const auto regions_before = encode_embeddings(s.regions);
  const auto text_before = encode_embeddings(s.text);
  TrainConfig cfg;
  cfg.lr0 = 1e-2;
  const auto r = train(s.ds, s.regions, s.text, init(s), cfg);
  REQUIRE(r.history.size() == 35);
  CHECK(r.history.back().loss < r.history.front().loss);
  CHECK(encode_embeddings(s.regions) == regions_before);
  CHECK(encode_embeddings(s.text) == text_before);
  CHECK(r.history.back().lr == doctest::Approx(cosine_lr(34, 35, 1e-2)));
}

TEST_CASE("full-vocabulary pairing trains too") {
  const auto s = make_setup(20);
  TrainConfig cfg;
  cfg.lr0 = 1e-2;
  cfg.pairing = PairingMode::kFullVocabulary;
  const auto r = train(s.ds, s.regions, s.text, init(s), cfg);
  CHECK(r.history.back().loss < r.history.front().loss);
  cfg.pairing = PairingMode::kBatchClasses;
  CHECK_FALSE(train(s.ds, s.regions, s.text, init(s), cfg).theta == r.theta);
}

TEST_CASE("misaligned inputs are rejected before training") {
  auto s = make_setup(10);
  TrainConfig cfg;
  auto shuffled = s.regions;
  std::swap(shuffled.item_ids[0], shuffled.item_ids[1]);
  try {
    train(s.ds, shuffled, s.text, init(s), cfg);
    FAIL("misaligned rows accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kAlignmentMismatch);
  }

  auto short_table = s.regions;
  short_table.data.conservativeResize(short_table.rows() - 1, Eigen::NoChange);
  short_table.item_ids.pop_back();
  CHECK_THROWS_AS(train(s.ds, short_table, s.text, init(s), cfg), Error);

  try {
    train(s.ds, s.regions, s.text, initial_head(s.regions.dim() + 1, s.text.dim()).cast<double>(), cfg);
    FAIL("wrong head width accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }

  auto missing = s.text;
  missing.item_ids[static_cast<std::size_t>(s.ds.samples[0].pseudo_label)] = "renamed";
  CHECK_THROWS_AS(train(s.ds, s.regions, missing, init(s), cfg), Error);
}

TEST_CASE("history CSV layout") {
  const std::vector<HistoryEntry> h = {{0, 1e-5, 0.5}, {1, 5e-6, 0.25}};
  CHECK(history_to_csv(h) == "step,lr,loss\n0,1.0000000000000001e-05,0.5\n1,5.0000000000000004e-06,0.25\n");
}

TEST_CASE("train config JSON round trip") {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.lr0 = 0.25;
  cfg.pairing = PairingMode::kFullVocabulary;
  const auto back = train_config_from_json(train_config_to_json(cfg));
  CHECK(back.batch_size == 8);
  CHECK(back.lr0 == 0.25);
  CHECK(back.pairing == PairingMode::kFullVocabulary);
  CHECK_THROWS_AS(train_config_from_json({{"pairing", "all"}}), Error);
}
