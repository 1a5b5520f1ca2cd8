// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dat/embedding.hpp"
#include "dat/head.hpp"
#include "dat/json_io.hpp"
#include "dat/optimizer.hpp"
#include "dat/region_dataset.hpp"

namespace dat {

enum class PairingMode {
  kBatchClasses,    ///< text set = distinct classes present in the batch
  kFullVocabulary,  ///< text set = every class with a text row
};

struct TrainConfig {
  int batch_size = 64;
  double lr0 = 1e-5;
  int epochs = 5;
  double ln_epsilon = kDefaultLayerNormEps;
  std::uint64_t seed = 0;
  AdamConfig adam;
  PairingMode pairing = PairingMode::kBatchClasses;

  void validate() const;
};

Json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j, TrainConfig defaults = {});

struct HistoryEntry {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  HeadParameters<double> theta;
  std::vector<HistoryEntry> history;
};

/// Number of optimizer steps: epochs * ceil(n / batch_size).
long total_train_steps(std::size_t n_samples, const TrainConfig& cfg);

/// Each step: seeded shuffle (once per epoch), build the region x class pair
/// batch, loss and gradients, cosine learning rate, adaptive-moment update.
/// History holds the pre-update batch loss. Inputs are never modified.
TrainResult train(const RegionDataset& ds, const EmbeddingTable& region_emb, const EmbeddingTable& text_emb,
                  const HeadParameters<double>& theta_init, const TrainConfig& cfg);

/// "step,lr,loss" with a header row.
std::string history_to_csv(const std::vector<HistoryEntry>& history);

/// Text-table row index for every vocabulary class, -1 where absent.
std::vector<Eigen::Index> text_rows_by_class(const EmbeddingTable& text_emb, const ClassVocabulary& vocab);

}  // namespace dat
