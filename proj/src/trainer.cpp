// SPDX-License-Identifier: Apache-2.0
#include "dat/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace dat {

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorCode::kValidation, "batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw Error(ErrorCode::kValidation, "lr0 must be > 0");
  if (epochs < 1) throw Error(ErrorCode::kValidation, "epochs must be >= 1");
  if (!(ln_epsilon > 0.0)) throw Error(ErrorCode::kValidation, "ln_epsilon must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw Error(ErrorCode::kValidation, "optimizer moments must lie in [0,1) with eps > 0");
  }
}

Json train_config_to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size},
          {"lr0", cfg.lr0},
          {"epochs", cfg.epochs},
          {"ln_epsilon", cfg.ln_epsilon},
          {"seed", cfg.seed},
          {"beta1", cfg.adam.beta1},
          {"beta2", cfg.adam.beta2},
          {"adam_eps", cfg.adam.eps},
          {"pairing", cfg.pairing == PairingMode::kBatchClasses ? "batch" : "vocabulary"}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig cfg) {
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr0 = j.value("lr0", cfg.lr0);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.ln_epsilon = j.value("ln_epsilon", cfg.ln_epsilon);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.adam.beta1 = j.value("beta1", cfg.adam.beta1);
  cfg.adam.beta2 = j.value("beta2", cfg.adam.beta2);
  cfg.adam.eps = j.value("adam_eps", cfg.adam.eps);
  if (j.contains("pairing")) {
    const auto mode = j.at("pairing").get<std::string>();
    if (mode == "batch") {
      cfg.pairing = PairingMode::kBatchClasses;
    } else if (mode == "vocabulary") {
      cfg.pairing = PairingMode::kFullVocabulary;
    } else {
      throw Error(ErrorCode::kValidation, "pairing must be \"batch\" or \"vocabulary\"");
    }
  }
  return cfg;
}

long total_train_steps(std::size_t n_samples, const TrainConfig& cfg) {
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  return static_cast<long>(cfg.epochs) * static_cast<long>((n_samples + batch - 1) / batch);
}

std::vector<Eigen::Index> text_rows_by_class(const EmbeddingTable& text_emb, const ClassVocabulary& vocab) {
  std::vector<Eigen::Index> rows(vocab.size(), -1);
  for (std::size_t r = 0; r < text_emb.item_ids.size(); ++r) {
    if (auto id = vocab.find(text_emb.item_ids[r])) rows[static_cast<std::size_t>(*id)] = static_cast<Eigen::Index>(r);
  }
  return rows;
}

TrainResult train(const RegionDataset& ds, const EmbeddingTable& region_emb, const EmbeddingTable& text_emb,
                  const HeadParameters<double>& theta_init, const TrainConfig& cfg) {
  cfg.validate();
  theta_init.check_shapes();
  const std::size_t n = ds.samples.size();
  if (static_cast<std::size_t>(region_emb.rows()) != n || region_emb.item_ids.size() != n) {
    throw Error(ErrorCode::kAlignmentMismatch, "region embeddings have " + std::to_string(region_emb.rows()) +
                                                   " rows for " + std::to_string(n) + " dataset samples");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (region_emb.item_ids[i] != ds.samples[i].key) {
      throw Error(ErrorCode::kAlignmentMismatch, "region embedding row " + std::to_string(i) + " is '" +
                                                     region_emb.item_ids[i] + "', expected '" + ds.samples[i].key + "'");
    }
  }
  if (region_emb.dim() != theta_init.d_in() || text_emb.dim() != theta_init.d_out()) {
    throw Error(ErrorCode::kShapeMismatch, "embedding dims do not match head (d_in=" + std::to_string(theta_init.d_in()) +
                                               ", d_out=" + std::to_string(theta_init.d_out()) + ")");
  }
  const auto text_row = text_rows_by_class(text_emb, ds.vocabulary);
  for (const auto& s : ds.samples) {
    if (text_row[static_cast<std::size_t>(s.pseudo_label)] < 0) {
      throw Error(ErrorCode::kAlignmentMismatch, "no text embedding for class '" + ds.vocabulary.name(s.pseudo_label) + "'");
    }
  }

  const Matrix<double> features = region_emb.data.cast<double>();
  const Matrix<double> texts = text_emb.data.cast<double>();
  std::vector<ClassId> all_classes;
  for (std::size_t c = 0; c < text_row.size(); ++c) {
    if (text_row[c] >= 0) all_classes.push_back(static_cast<ClassId>(c));
  }

  TrainResult result;
  result.theta = theta_init;
  auto state = AdamState<double>::zeros_like(theta_init);
  const long total = total_train_steps(n, cfg);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      const auto rows = static_cast<Eigen::Index>(end - start);
      Matrix<double> batch_features(rows, features.cols());
      std::vector<ClassId> labels;
      labels.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        batch_features.row(static_cast<Eigen::Index>(k - start)) = features.row(static_cast<Eigen::Index>(order[k]));
        labels.push_back(ds.samples[order[k]].pseudo_label);
      }
      std::vector<ClassId> classes;
      if (cfg.pairing == PairingMode::kBatchClasses) {
        const std::set<ClassId> present(labels.begin(), labels.end());
        classes.assign(present.begin(), present.end());
      } else {
        classes = all_classes;
      }
      Matrix<double> batch_texts(static_cast<Eigen::Index>(classes.size()), texts.cols());
      for (std::size_t j = 0; j < classes.size(); ++j) {
        batch_texts.row(static_cast<Eigen::Index>(j)) = texts.row(text_row[static_cast<std::size_t>(classes[j])]);
      }
      const auto batch = make_pair_batch(std::move(batch_features), std::move(labels), std::move(batch_texts),
                                         std::move(classes));
      const auto lg = loss_gradients(batch, result.theta, cfg.ln_epsilon);
      const double lr = cosine_lr(step, total, cfg.lr0);
      std::tie(result.theta, state) = optimizer_step(result.theta, lg.grads, state, lr, cfg.adam);
      result.history.push_back({step, lr, lg.loss});
      ++step;
    }
  }
  return result;
}

std::string history_to_csv(const std::vector<HistoryEntry>& history) {
  std::ostringstream os;
  os << "step,lr,loss\n";
  char buf[96];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g\n", h.step, h.lr, h.loss);
    os << buf;
  }
  return os.str();
}

}  // namespace dat
