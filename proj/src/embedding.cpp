// SPDX-License-Identifier: Apache-2.0
#include "dat/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include <nlohmann/json.hpp>

#include "dat/digest.hpp"
#include "dat/region_dataset.hpp"

namespace dat {
namespace {

std::mt19937_64 seeded_stream(std::uint64_t seed, std::string_view purpose, std::uint64_t salt) {
  const std::uint64_t tag = fnv1a64(purpose);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

Eigen::VectorXd gaussian_vector(std::mt19937_64& rng, int dim, double stddev) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = stddev * normal(rng);
  return v;
}

Eigen::VectorXd unit(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw Error(ErrorCode::kDegenerate, "cannot normalize a zero vector");
  return v / n;
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw Error(ErrorCode::kTruncatedPayload, std::string("truncated payload while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int s = 0; s < 32; s += 8) v |= static_cast<std::uint32_t>(in_[pos_++]) << s;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::optional<Eigen::Index> EmbeddingTable::find(const std::string& item_id) const {
  for (std::size_t i = 0; i < item_ids.size(); ++i) {
    if (item_ids[i] == item_id) return static_cast<Eigen::Index>(i);
  }
  return std::nullopt;
}

void EmbeddingTable::validate() const {
  if (static_cast<std::size_t>(data.rows()) != item_ids.size()) {
    throw Error(ErrorCode::kIdCountMismatch, "embedding table has " + std::to_string(data.rows()) + " rows but " +
                                                 std::to_string(item_ids.size()) + " item ids");
  }
  if (!data.allFinite()) throw Error(ErrorCode::kNonFinite, "embedding table contains non-finite values");
  if (normalized) {
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      const double n = data.row(i).cast<double>().norm();
      if (std::abs(n - 1.0) > kUnitNormTolerance) {
        throw Error(ErrorCode::kValidation, "row " + std::to_string(i) + " of a normalized table has norm " +
                                                std::to_string(n));
      }
    }
  }
}

bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
  if (a.normalized != b.normalized || a.item_ids != b.item_ids) return false;
  if (a.data.rows() != b.data.rows() || a.data.cols() != b.data.cols()) return false;
  return std::memcmp(a.data.data(), b.data.data(), sizeof(float) * static_cast<std::size_t>(a.data.size())) == 0;
}

PromptTemplateSet::PromptTemplateSet(std::vector<std::string> templates) : templates_(std::move(templates)) {
  const std::string ph = kPlaceholder;
  for (const auto& t : templates_) {
    const auto first = t.find(ph);
    if (first == std::string::npos || t.find(ph, first + 1) != std::string::npos) {
      throw Error(ErrorCode::kValidation, "template must contain \"[CLASS]\" exactly once: \"" + t + "\"");
    }
  }
}

PromptTemplateSet PromptTemplateSet::defaults() { return PromptTemplateSet({"a photo of a [CLASS]"}); }

std::vector<Prompt> expand_prompts(const PromptTemplateSet& templates, const ClassVocabulary& vocab) {
  const std::string ph = PromptTemplateSet::kPlaceholder;
  std::vector<Prompt> out;
  out.reserve(templates.templates().size() * vocab.size());
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    const auto id = static_cast<ClassId>(c);
    for (auto text : templates.templates()) {
      text.replace(text.find(ph), ph.size(), vocab.name(id));
      out.push_back({id, std::move(text)});
    }
  }
  return out;
}

EmbeddingTable aggregate_prompt_embeddings(const EmbeddingTable& per_prompt, std::span<const Prompt> prompts,
                                           const ClassVocabulary& vocab) {
  if (static_cast<std::size_t>(per_prompt.rows()) != prompts.size()) {
    throw Error(ErrorCode::kAlignmentMismatch, "prompt table rows do not match prompt count");
  }
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab.size()), per_prompt.dim());
  std::vector<int> counts(vocab.size(), 0);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto c = static_cast<std::size_t>(prompts[i].class_id);
    if (!vocab.contains(prompts[i].class_id)) throw Error(ErrorCode::kUnknownCategory, "prompt class out of range");
    sums.row(static_cast<Eigen::Index>(c)) += per_prompt.data.row(static_cast<Eigen::Index>(i)).cast<double>();
    ++counts[c];
  }
  EmbeddingTable out;
  out.data.resize(sums.rows(), sums.cols());
  out.normalized = true;
  out.item_ids = vocab.names();
  for (Eigen::Index c = 0; c < sums.rows(); ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw Error(ErrorCode::kAlignmentMismatch, "no prompts for class '" + vocab.names()[static_cast<std::size_t>(c)] + "'");
    }
    out.data.row(c) = unit(sums.row(c).transpose()).transpose().cast<float>();
  }
  return out;
}

Eigen::VectorXd class_anchor(ClassId c, int dim, std::uint64_t seed) {
  if (dim < 2) throw Error(ErrorCode::kInvalidArgument, "embedding dim must be >= 2");
  auto rng = seeded_stream(seed, "class-anchor", static_cast<std::uint64_t>(c) ^ (static_cast<std::uint64_t>(dim) << 32));
  return unit(gaussian_vector(rng, dim, 1.0));
}

Eigen::MatrixXd text_rotation(int dim, std::uint64_t seed, double shift) {
  auto rng = seeded_stream(seed, "text-rotation", static_cast<std::uint64_t>(dim));
  Eigen::MatrixXd g(dim, dim);
  for (int j = 0; j < dim; ++j) g.col(j) = gaussian_vector(rng, dim, 1.0);
  const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(dim, dim) + shift * g;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

EmbeddingTable synthetic_region_embeddings(std::span<const ClassId> labels, std::span<const std::string> keys,
                                           const SyntheticOptions& opts) {
  if (labels.size() != keys.size()) throw Error(ErrorCode::kAlignmentMismatch, "labels and keys differ in length");
  if (opts.dim < 2) throw Error(ErrorCode::kInvalidArgument, "embedding dim must be >= 2");
  EmbeddingTable t;
  t.data.resize(static_cast<Eigen::Index>(labels.size()), opts.dim);
  t.normalized = true;
  t.item_ids.assign(keys.begin(), keys.end());
  for (std::size_t k = 0; k < labels.size(); ++k) {
    Eigen::VectorXd v = class_anchor(labels[k], opts.dim, opts.seed);
    if (opts.noise_scale > 0.0) {
      auto rng = seeded_stream(opts.seed, "region-noise", fnv1a64(keys[k]));
      v += gaussian_vector(rng, opts.dim, opts.noise_scale);
    }
    t.data.row(static_cast<Eigen::Index>(k)) = unit(v).transpose().cast<float>();
  }
  return t;
}

EmbeddingTable synthetic_region_embeddings(const RegionDataset& ds, const SyntheticOptions& opts) {
  std::vector<ClassId> labels;
  std::vector<std::string> keys;
  labels.reserve(ds.samples.size());
  keys.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    labels.push_back(s.pseudo_label);
    keys.push_back(s.key);
  }
  return synthetic_region_embeddings(labels, keys, opts);
}

EmbeddingTable synthetic_text_embeddings(const ClassVocabulary& vocab, const SyntheticOptions& opts,
                                         const PromptTemplateSet& templates) {
  const auto prompts = expand_prompts(templates, vocab);
  const Eigen::MatrixXd rot = text_rotation(opts.dim, opts.seed, opts.text_shift);
  EmbeddingTable per_prompt;
  per_prompt.data.resize(static_cast<Eigen::Index>(prompts.size()), opts.dim);
  per_prompt.normalized = true;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Eigen::VectorXd v = rot * class_anchor(prompts[i].class_id, opts.dim, opts.seed);
    if (opts.text_noise > 0.0) {
      auto rng = seeded_stream(opts.seed, "prompt-noise", fnv1a64(prompts[i].text));
      v += gaussian_vector(rng, opts.dim, opts.text_noise);
    }
    per_prompt.data.row(static_cast<Eigen::Index>(i)) = unit(v).transpose().cast<float>();
    per_prompt.item_ids.push_back(prompts[i].text);
  }
  return aggregate_prompt_embeddings(per_prompt, prompts, vocab);
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table) {
  table.validate();
  Writer w;
  w.bytes("DATE");
  w.u32(kEmbeddingFormatVersion);
  w.u32(static_cast<std::uint32_t>(table.rows()));
  w.u32(static_cast<std::uint32_t>(table.dim()));
  w.u8(table.normalized ? 1 : 0);
  for (Eigen::Index i = 0; i < table.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.data.cols(); ++j) w.f32(table.data(i, j));
  }
  const std::string ids = nlohmann::json(table.item_ids).dump();
  w.u32(static_cast<std::uint32_t>(ids.size()));
  w.bytes(ids);
  return w.take();
}

EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  Reader r(bytes);
  if (bytes.size() < 4 || r.bytes(4, "magic") != "DATE") throw Error(ErrorCode::kBadMagic, "bad magic: not a DATE embedding file");
  const auto version = r.u32("version");
  if (version != kEmbeddingFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch, "version mismatch: expected " + std::to_string(kEmbeddingFormatVersion) +
                                                 ", found " + std::to_string(version));
  }
  const auto n = r.u32("row count");
  const auto d = r.u32("dim");
  const auto flag = r.u8("normalized flag");
  if (flag > 1) throw Error(ErrorCode::kParse, "normalized flag must be 0 or 1");
  r.need(static_cast<std::size_t>(n) * d * 4, "payload");
  EmbeddingTable t;
  t.normalized = flag == 1;
  t.data.resize(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) t.data(i, j) = r.f32("payload");
  }
  const auto len = r.u32("item id length");
  const auto ids = r.bytes(len, "item ids");
  try {
    t.item_ids = nlohmann::json::parse(ids).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("item id block: ") + e.what());
  }
  if (t.item_ids.size() != n) {
    throw Error(ErrorCode::kIdCountMismatch, "row/id count mismatch: " + std::to_string(n) + " rows, " +
                                                 std::to_string(t.item_ids.size()) + " ids");
  }
  t.validate();
  if (consumed) *consumed = r.position();
  return t;
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kInputNotFound, "input not found: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  write_binary_file(path, encode_embeddings(table));
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  std::size_t used = 0;
  auto t = decode_embeddings(bytes, &used);
  if (used != bytes.size()) throw Error(ErrorCode::kParse, "trailing bytes after embedding table in " + path.string());
  return t;
}

}  // namespace dat
