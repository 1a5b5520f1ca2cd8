// SPDX-License-Identifier: Apache-2.0
#include "dat/checkpoint.hpp"

#include "dat/embedding.hpp"

namespace dat {
namespace {

EmbeddingTable block(const std::string& name, const RowMatrixXf& data) {
  EmbeddingTable t;
  t.data = data;
  if (data.rows() == 1) {
    t.item_ids = {name};
  } else {
    for (Eigen::Index i = 0; i < data.rows(); ++i) t.item_ids.push_back(name + "[" + std::to_string(i) + "]");
  }
  return t;
}

RowMatrixXf scalar_block(float v) {
  RowMatrixXf m(1, 1);
  m(0, 0) = v;
  return m;
}

void append(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int s = 0; s < 4; ++s) v |= static_cast<std::uint32_t>(bytes[at + static_cast<std::size_t>(s)]) << (8 * s);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const HeadParameters<float>& theta, Json header) {
  theta.check_shapes();
  header["d_in"] = theta.d_in();
  header["d_out"] = theta.d_out();
  const std::string text = header.dump();

  std::vector<std::uint8_t> out = {'D', 'A', 'T', 'C'};
  for (std::uint32_t v : {kCheckpointVersion, static_cast<std::uint32_t>(text.size())}) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  }
  out.insert(out.end(), text.begin(), text.end());
  append(out, encode_embeddings(block("gamma", theta.gamma.transpose())));
  append(out, encode_embeddings(block("beta", theta.beta.transpose())));
  append(out, encode_embeddings(block("W", theta.W)));
  append(out, encode_embeddings(block("log_t", scalar_block(theta.log_t))));
  append(out, encode_embeddings(block("b", scalar_block(theta.b))));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != "DATC") {
    throw Error(ErrorCode::kBadMagic, "bad magic: not a DATC checkpoint");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::kTruncatedPayload, "truncated payload in checkpoint header");
  const auto version = read_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch, "checkpoint version mismatch: found " + std::to_string(version));
  }
  const auto len = read_u32(bytes, 8);
  if (bytes.size() - 12 < len) throw Error(ErrorCode::kTruncatedPayload, "truncated payload in checkpoint header");
  Checkpoint ck;
  try {
    ck.header = Json::parse(std::string_view(reinterpret_cast<const char*>(bytes.data() + 12), len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("checkpoint header: ") + e.what());
  }
  std::size_t pos = 12 + len;
  auto next = [&]() {
    std::size_t used = 0;
    auto t = decode_embeddings(bytes.subspan(pos), &used);
    pos += used;
    return t;
  };
  const auto gamma = next();
  const auto beta = next();
  const auto w = next();
  const auto log_t = next();
  const auto b = next();
  if (pos != bytes.size()) throw Error(ErrorCode::kParse, "trailing bytes after checkpoint");

  const auto d_in = ck.header.at("d_in").get<Eigen::Index>();
  const auto d_out = ck.header.at("d_out").get<Eigen::Index>();
  if (gamma.rows() != 1 || gamma.dim() != d_in || beta.rows() != 1 || beta.dim() != d_in || w.rows() != d_in ||
      w.dim() != d_out || log_t.data.size() != 1 || b.data.size() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "checkpoint blocks disagree with header dims");
  }
  ck.theta.gamma = gamma.data.row(0).transpose();
  ck.theta.beta = beta.data.row(0).transpose();
  ck.theta.W = w.data;
  ck.theta.log_t = log_t.data(0, 0);
  ck.theta.b = b.data(0, 0);
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const HeadParameters<float>& theta, Json header) {
  write_binary_file(path, encode_checkpoint(theta, std::move(header)));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_binary_file(path)); }

}  // namespace dat
