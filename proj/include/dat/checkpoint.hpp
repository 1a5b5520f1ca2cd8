// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "dat/head.hpp"
#include "dat/json_io.hpp"

namespace dat {

// Layout, little-endian:
//   "DATC" | u32 version=1 | u32 header_len | header JSON
//   | DATE block gamma (1 x d_in) | beta (1 x d_in) | W (d_in x d_out)
//   | log_t (1 x 1) | b (1 x 1)
// The header always carries "d_in" and "d_out"; callers add provenance.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  HeadParameters<float> theta;
  Json header;
};

std::vector<std::uint8_t> encode_checkpoint(const HeadParameters<float>& theta, Json header);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const HeadParameters<float>& theta, Json header);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dat
