// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "dat/head.hpp"

namespace dat {

/// lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
inline double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw Error(ErrorCode::kInvalidArgument, "cosine_lr: need 0 <= step <= total_steps and total_steps >= 1");
  }
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, shaped like the parameters.
template <typename Scalar>
struct AdamState {
  HeadParameters<Scalar> m;
  HeadParameters<Scalar> v;
  long step = 0;

  static AdamState zeros_like(const HeadParameters<Scalar>& theta) {
    AdamState s;
    for (auto* p : {&s.m, &s.v}) {
      p->gamma = Vector<Scalar>::Zero(theta.gamma.size());
      p->beta = Vector<Scalar>::Zero(theta.beta.size());
      p->W = Matrix<Scalar>::Zero(theta.W.rows(), theta.W.cols());
      p->log_t = Scalar(0);
      p->b = Scalar(0);
    }
    return s;
  }
};

namespace detail {

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& g, const char* name) {
  if (!g.allFinite()) throw Error(ErrorCode::kNonFinite, std::string("non-finite gradient in tensor '") + name + "'");
}

template <typename Scalar>
void require_finite_scalar(Scalar g, const char* name) {
  if (!std::isfinite(static_cast<double>(g))) {
    throw Error(ErrorCode::kNonFinite, std::string("non-finite gradient in tensor '") + name + "'");
  }
}

template <typename P, typename G, typename M>
void adam_update(P& param, const G& grad, M& m, M& v, double lr, const AdamConfig& cfg, double c1, double c2) {
  using S = typename P::Scalar;
  m = (S(cfg.beta1) * m.array() + S(1 - cfg.beta1) * grad.array()).matrix();
  v = (S(cfg.beta2) * v.array() + S(1 - cfg.beta2) * grad.array().square()).matrix();
  param.array() -= S(lr) * (m.array() / S(c1)) / ((v.array() / S(c2)).sqrt() + S(cfg.eps));
}

template <typename Scalar>
void adam_update_scalar(Scalar& param, Scalar grad, Scalar& m, Scalar& v, double lr, const AdamConfig& cfg,
                        double c1, double c2) {
  m = Scalar(cfg.beta1) * m + Scalar(1 - cfg.beta1) * grad;
  v = Scalar(cfg.beta2) * v + Scalar(1 - cfg.beta2) * grad * grad;
  param -= Scalar(lr) * (m / Scalar(c1)) / (std::sqrt(v / Scalar(c2)) + Scalar(cfg.eps));
}

}  // namespace detail

/// One bias-corrected adaptive-moment update of every trainable tensor.
/// Gradients are checked for finiteness before anything is modified.
template <typename Scalar>
std::pair<HeadParameters<Scalar>, AdamState<Scalar>> optimizer_step(const HeadParameters<Scalar>& theta,
                                                                    const HeadGradients<Scalar>& grads,
                                                                    const AdamState<Scalar>& state, double lr,
                                                                    const AdamConfig& cfg = {}) {
  detail::require_finite(grads.gamma, "gamma");
  detail::require_finite(grads.beta, "beta");
  detail::require_finite(grads.W, "W");
  detail::require_finite_scalar(grads.log_t, "log_t");
  detail::require_finite_scalar(grads.b, "b");
  if (grads.gamma.size() != theta.gamma.size() || grads.beta.size() != theta.beta.size() ||
      grads.W.rows() != theta.W.rows() || grads.W.cols() != theta.W.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient shapes do not match parameters");
  }

  auto next = theta;
  auto s = state;
  ++s.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  detail::adam_update(next.gamma, grads.gamma, s.m.gamma, s.v.gamma, lr, cfg, c1, c2);
  detail::adam_update(next.beta, grads.beta, s.m.beta, s.v.beta, lr, cfg, c1, c2);
  detail::adam_update(next.W, grads.W, s.m.W, s.v.W, lr, cfg, c1, c2);
  detail::adam_update_scalar(next.log_t, grads.log_t, s.m.log_t, s.v.log_t, lr, cfg, c1, c2);
  detail::adam_update_scalar(next.b, grads.b, s.m.b, s.v.b, lr, cfg, c1, c2);
  return {std::move(next), std::move(s)};
}

}  // namespace dat
