// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dat/core.hpp"

namespace dat {

struct RegionDataset;

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n x d float32 feature table; row i belongs to item_ids[i].
struct EmbeddingTable {
  RowMatrixXf data;
  bool normalized = false;
  std::vector<std::string> item_ids;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
  std::optional<Eigen::Index> find(const std::string& item_id) const;

  /// Checks |item_ids| == rows, finiteness, and unit norms (1e-5) when normalized.
  void validate() const;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b);
};

inline constexpr double kUnitNormTolerance = 1e-5;

/// Fixed prompt templates, each holding exactly one "[CLASS]" placeholder.
class PromptTemplateSet {
 public:
  static constexpr const char* kPlaceholder = "[CLASS]";

  explicit PromptTemplateSet(std::vector<std::string> templates);
  static PromptTemplateSet defaults();

  const std::vector<std::string>& templates() const { return templates_; }

 private:
  std::vector<std::string> templates_;
};

struct Prompt {
  ClassId class_id = 0;
  std::string text;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

/// Class-major expansion: every template for class 0, then class 1, ...
std::vector<Prompt> expand_prompts(const PromptTemplateSet& templates, const ClassVocabulary& vocab);

/// Mean-pools prompt rows per class and re-normalizes; one row per class in
/// vocabulary order, ids are class names.
EmbeddingTable aggregate_prompt_embeddings(const EmbeddingTable& per_prompt, std::span<const Prompt> prompts,
                                           const ClassVocabulary& vocab);

/// Parameters of the desk-scale stand-in for a frozen backbone.
struct SyntheticOptions {
  int dim = 16;
  std::uint64_t seed = 0;
  /// Per-component standard deviation of region noise.
  double noise_scale = 0.05;
  /// Strength of the fixed rotation separating text from visual space.
  double text_shift = 0.2;
  /// Per-prompt noise on text rows; 0 makes all templates of a class agree.
  double text_noise = 0.0;
};

/// Seeded unit anchor for class `c`; depends only on (c, dim, seed).
Eigen::VectorXd class_anchor(ClassId c, int dim, std::uint64_t seed);

/// Orthogonal matrix near identity (sign-fixed QR of I + shift * G).
Eigen::MatrixXd text_rotation(int dim, std::uint64_t seed, double shift);

/// Row k = normalize(anchor(labels[k]) + eps_k), eps_k seeded by (seed, keys[k]).
EmbeddingTable synthetic_region_embeddings(std::span<const ClassId> labels, std::span<const std::string> keys,
                                           const SyntheticOptions& opts);
EmbeddingTable synthetic_region_embeddings(const RegionDataset& ds, const SyntheticOptions& opts);

/// Per-prompt rows normalize(R * anchor(c) + text_noise * eps), then
/// aggregated per class.
EmbeddingTable synthetic_text_embeddings(const ClassVocabulary& vocab, const SyntheticOptions& opts,
                                         const PromptTemplateSet& templates = PromptTemplateSet::defaults());

// Binary interchange ("DATE"), little-endian:
//   "DATE" | u32 version=1 | u32 n | u32 d | u8 normalized | n*d f32 row-major
//   | u32 json_len | json_len bytes of UTF-8 JSON array of item ids
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table);
/// Decodes one table starting at `bytes[0]`; `consumed` receives its size.
EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dat
