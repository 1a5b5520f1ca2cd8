// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dat/head.hpp"

namespace fixtures {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("dat_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline dat::Matrix<double> gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  dat::Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline dat::Matrix<double> unit_rows(dat::Matrix<double> m) {
  m.rowwise().normalize();
  return m;
}

/// Generic (non-identity) head so every gradient term is exercised.
inline dat::HeadParameters<double> random_head(std::mt19937_64& rng, Eigen::Index d_in, Eigen::Index d_out) {
  dat::HeadParameters<double> p;
  p.gamma = (1.0 + 0.2 * gaussian(rng, d_in, 1).array()).matrix();
  p.beta = 0.1 * gaussian(rng, d_in, 1);
  p.W = gaussian(rng, d_in, d_out, 1.0 / std::sqrt(static_cast<double>(d_in)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  p.log_t = std::log(1.0 + 9.0 * u(rng));
  p.b = -5.0 * u(rng);
  return p;
}

/// Random B x C batch over C classes where every region's class is in scope.
inline dat::PairBatch<double> random_batch(std::mt19937_64& rng, Eigen::Index d_in, Eigen::Index d_out, int B, int C) {
  std::uniform_int_distribution<int> cls(0, C - 1);
  std::vector<dat::ClassId> labels(static_cast<std::size_t>(B));
  for (auto& l : labels) l = cls(rng);
  std::vector<dat::ClassId> classes(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) classes[static_cast<std::size_t>(c)] = c;
  return dat::make_pair_batch<double>(gaussian(rng, B, d_in), labels, unit_rows(gaussian(rng, C, d_out)), classes);
}

}  // namespace fixtures
