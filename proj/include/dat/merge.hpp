// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dat/head.hpp"

namespace dat {

struct MergeConfig {
  double alpha = 0.5;  ///< weight on the pre-trained parameters

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kValidation, "alpha must lie in [0,1]");
  }
};

/// Tensor names whose shapes differ between the two parameter sets.
template <typename Scalar>
std::vector<std::string> mismatched_tensors(const HeadParameters<Scalar>& a, const HeadParameters<Scalar>& b) {
  std::vector<std::string> out;
  if (a.gamma.size() != b.gamma.size()) out.push_back("gamma");
  if (a.beta.size() != b.beta.size()) out.push_back("beta");
  if (a.W.rows() != b.W.rows() || a.W.cols() != b.W.cols()) out.push_back("W");
  return out;
}

/// Elementwise alpha * pre + (1 - alpha) * ft over all five tensors.
///
/// Evaluated with std::lerp(ft, pre, alpha): exact at alpha in {0, 1} and
/// returns the common value when pre == ft.
template <typename Scalar>
HeadParameters<Scalar> interpolate(const HeadParameters<Scalar>& pre, const HeadParameters<Scalar>& ft,
                                   const MergeConfig& cfg) {
  cfg.validate();
  if (const auto bad = mismatched_tensors(pre, ft); !bad.empty()) {
    std::string msg = "shape mismatch in tensors:";
    for (const auto& name : bad) msg += " " + name;
    throw Error(ErrorCode::kShapeMismatch, msg);
  }
  const auto a = static_cast<Scalar>(cfg.alpha);
  const auto mix = [a](Scalar f, Scalar p) { return std::lerp(f, p, a); };
  HeadParameters<Scalar> out;
  out.gamma = ft.gamma.binaryExpr(pre.gamma, mix);
  out.beta = ft.beta.binaryExpr(pre.beta, mix);
  out.W = ft.W.binaryExpr(pre.W, mix);
  out.log_t = mix(ft.log_t, pre.log_t);
  out.b = mix(ft.b, pre.b);
  return out;
}

}  // namespace dat
