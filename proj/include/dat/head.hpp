// SPDX-License-Identifier: Apache-2.0
//
// Trainable slice on top of frozen region features:
//   v = normalize(LayerNorm(f; gamma, beta) * W)
//   z = exp(log_t) * <v, u> + b
// plus the mean sigmoid contrastive loss over a region x class grid and its
// closed-form gradients.
#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dat/core.hpp"

namespace dat {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kDefaultLayerNormEps = 1e-6;
inline constexpr double kInitTemperature = 10.0;
inline constexpr double kInitBias = -10.0;

inline constexpr std::size_t trainable_parameter_count(std::size_t d_in, std::size_t d_out) {
  return 2 * d_in + d_in * d_out + 2;
}

template <typename Scalar>
struct HeadParameters {
  Vector<Scalar> gamma;  ///< LayerNorm gain, d_in
  Vector<Scalar> beta;   ///< LayerNorm bias, d_in
  Matrix<Scalar> W;      ///< projection, d_in x d_out
  Scalar log_t{};        ///< log temperature
  Scalar b{};            ///< logit bias

  Eigen::Index d_in() const { return W.rows(); }
  Eigen::Index d_out() const { return W.cols(); }

  /// Unit gain, zero bias, rectangular identity projection, t = 10, b = -10.
  static HeadParameters identity(Eigen::Index d_in, Eigen::Index d_out) {
    HeadParameters p;
    p.gamma = Vector<Scalar>::Ones(d_in);
    p.beta = Vector<Scalar>::Zero(d_in);
    p.W = Matrix<Scalar>::Identity(d_in, d_out);
    p.log_t = static_cast<Scalar>(std::log(kInitTemperature));
    p.b = static_cast<Scalar>(kInitBias);
    return p;
  }

  template <typename Other>
  HeadParameters<Other> cast() const {
    HeadParameters<Other> p;
    p.gamma = gamma.template cast<Other>();
    p.beta = beta.template cast<Other>();
    p.W = W.template cast<Other>();
    p.log_t = static_cast<Other>(log_t);
    p.b = static_cast<Other>(b);
    return p;
  }

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(gamma.size() + beta.size() + W.size()) + 2;
  }

  bool all_finite() const {
    return gamma.allFinite() && beta.allFinite() && W.allFinite() && std::isfinite(static_cast<double>(log_t)) &&
           std::isfinite(static_cast<double>(b));
  }

  /// Throws kShapeMismatch when gamma/beta do not match W's input dim.
  void check_shapes() const {
    if (gamma.size() != W.rows() || beta.size() != W.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "head parameters: gamma/beta length must equal W rows");
    }
  }

  friend bool operator==(const HeadParameters& a, const HeadParameters& b) {
    return a.gamma.size() == b.gamma.size() && a.beta.size() == b.beta.size() && a.W.rows() == b.W.rows() &&
           a.W.cols() == b.W.cols() && a.gamma == b.gamma && a.beta == b.beta && a.W == b.W &&
           a.log_t == b.log_t && a.b == b.b;
  }
};

/// Same layout as HeadParameters, holding dL/dtheta.
template <typename Scalar>
using HeadGradients = HeadParameters<Scalar>;

/// Trainable census with and without the two loss scalars.
struct ParameterCensus {
  std::size_t layer_norm_and_projection = 0;
  std::size_t total = 0;
};

template <typename Scalar>
ParameterCensus census(const HeadParameters<Scalar>& p) {
  const std::size_t total = p.parameter_count();
  return {total - 2, total};
}

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, population variance.
template <typename Derived, typename Scalar>
Vector<Scalar> layer_norm(const Eigen::MatrixBase<Derived>& x, const Vector<Scalar>& gamma, const Vector<Scalar>& beta,
                          Scalar eps = Scalar(kDefaultLayerNormEps)) {
  const Vector<Scalar> xv = x.template cast<Scalar>();
  const Scalar mean = xv.mean();
  const Vector<Scalar> centered = xv.array() - mean;
  const Scalar var = centered.squaredNorm() / static_cast<Scalar>(xv.size());
  const Scalar inv_std = Scalar(1) / std::sqrt(var + eps);
  return (gamma.array() * centered.array() * inv_std + beta.array()).matrix();
}

/// Intermediate values kept for the backward pass.
template <typename Scalar>
struct HeadForward {
  Matrix<Scalar> normalized_input;  ///< (x - mean) / sqrt(var + eps), B x d_in
  Matrix<Scalar> hidden;            ///< LayerNorm output, B x d_in
  Vector<Scalar> proj_norm;         ///< ||hidden_i W||, B
  Matrix<Scalar> output;            ///< unit rows, B x d_out
};

template <typename Scalar>
HeadForward<Scalar> head_forward_cached(const Matrix<Scalar>& features, const HeadParameters<Scalar>& theta,
                                        Scalar eps = Scalar(kDefaultLayerNormEps)) {
  theta.check_shapes();
  if (features.cols() != theta.d_in()) {
    throw Error(ErrorCode::kShapeMismatch, "features have " + std::to_string(features.cols()) +
                                               " columns, head expects " + std::to_string(theta.d_in()));
  }
  const Eigen::Index rows = features.rows();
  const Eigen::Index d = features.cols();
  HeadForward<Scalar> f;
  f.normalized_input.resize(rows, d);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Scalar mean = features.row(i).mean();
    const auto centered = (features.row(i).array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / static_cast<Scalar>(d);
    f.normalized_input.row(i) = centered / std::sqrt(var + eps);
  }
  f.hidden = (f.normalized_input.array().rowwise() * theta.gamma.transpose().array()).rowwise() +
             theta.beta.transpose().array();
  const Matrix<Scalar> projected = f.hidden * theta.W;
  f.proj_norm = projected.rowwise().norm();
  f.output.resize(rows, theta.d_out());
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Scalar n = f.proj_norm[i];
    if (!(n > Scalar(0))) {
      throw Error(ErrorCode::kDegenerate, "projected row " + std::to_string(i) + " has zero norm");
    }
    f.output.row(i) = projected.row(i) / n;
  }
  return f;
}

/// Rows are normalize(layer_norm(f_i) * W).
template <typename Scalar>
Matrix<Scalar> head_forward(const Matrix<Scalar>& features, const HeadParameters<Scalar>& theta,
                            Scalar eps = Scalar(kDefaultLayerNormEps)) {
  return head_forward_cached(features, theta, eps).output;
}

/// z[i][j] = exp(log_t) * (v_i . u_j) + b.
template <typename Scalar>
Matrix<Scalar> pair_logits(const Matrix<Scalar>& v, const Matrix<Scalar>& u, Scalar log_t, Scalar b) {
  if (v.cols() != u.cols()) throw Error(ErrorCode::kShapeMismatch, "visual and text embeddings differ in dim");
  return ((std::exp(log_t) * (v * u.transpose())).array() + b).matrix();
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar z) {
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

/// log(1 + exp(z)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar z) {
  return std::max(z, Scalar(0)) + std::log1p(std::exp(-std::abs(z)));
}

/// Mean over all B*C pairs of y*softplus(-z) + (1-y)*softplus(z), which
/// equals -[y log s(z) + (1-y) log(1-s(z))].
template <typename Scalar>
Scalar sigmoid_contrastive_loss(const Matrix<Scalar>& z, const Matrix<Scalar>& y) {
  if (z.rows() != y.rows() || z.cols() != y.cols()) throw Error(ErrorCode::kShapeMismatch, "logit/label shape mismatch");
  if (z.size() == 0) return Scalar(0);
  Scalar sum(0);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const Scalar zz = z(i, j);
      const Scalar yy = y(i, j);
      sum += yy * softplus(-zz) + (Scalar(1) - yy) * softplus(zz);
    }
  }
  return sum / static_cast<Scalar>(z.size());
}

/// Region features against the text rows of the classes in scope.
template <typename Scalar>
struct PairBatch {
  Matrix<Scalar> region_features;      ///< B x d_in
  std::vector<ClassId> region_labels;  ///< B
  Matrix<Scalar> text_embeddings;      ///< C x d_out, unit rows
  std::vector<ClassId> text_classes;   ///< C
  Matrix<Scalar> y;                    ///< B x C, 1 iff labels match
};

template <typename Scalar>
Matrix<Scalar> label_matrix(std::span<const ClassId> region_labels, std::span<const ClassId> text_classes) {
  Matrix<Scalar> y = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(region_labels.size()),
                                          static_cast<Eigen::Index>(text_classes.size()));
  for (std::size_t i = 0; i < region_labels.size(); ++i) {
    for (std::size_t j = 0; j < text_classes.size(); ++j) {
      if (region_labels[i] == text_classes[j]) y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = Scalar(1);
    }
  }
  return y;
}

template <typename Scalar>
PairBatch<Scalar> make_pair_batch(Matrix<Scalar> region_features, std::vector<ClassId> region_labels,
                                  Matrix<Scalar> text_embeddings, std::vector<ClassId> text_classes) {
  if (static_cast<std::size_t>(region_features.rows()) != region_labels.size() ||
      static_cast<std::size_t>(text_embeddings.rows()) != text_classes.size()) {
    throw Error(ErrorCode::kAlignmentMismatch, "pair batch rows do not match their labels");
  }
  PairBatch<Scalar> batch;
  batch.y = label_matrix<Scalar>(region_labels, text_classes);
  batch.region_features = std::move(region_features);
  batch.region_labels = std::move(region_labels);
  batch.text_embeddings = std::move(text_embeddings);
  batch.text_classes = std::move(text_classes);
  return batch;
}

template <typename Scalar>
struct LossAndGradients {
  Scalar loss{};
  HeadGradients<Scalar> grads;
};

template <typename Scalar>
Scalar batch_loss(const PairBatch<Scalar>& batch, const HeadParameters<Scalar>& theta,
                  Scalar eps = Scalar(kDefaultLayerNormEps)) {
  const Matrix<Scalar> v = head_forward(batch.region_features, theta, eps);
  return sigmoid_contrastive_loss(pair_logits(v, batch.text_embeddings, theta.log_t, theta.b), batch.y);
}

/// Loss and closed-form gradients with respect to every trainable tensor.
///   G     = (sigmoid(z) - y) / N
///   db    = sum G,   dlog_t = t * sum G .* (V U^T)
///   dV    = t * G U
///   dP_i  = (dV_i - v_i (v_i . dV_i)) / ||p_i||
///   dW    = H^T dP,  dH = dP W^T
///   dgamma = sum_i dH_i .* xhat_i,  dbeta = sum_i dH_i
template <typename Scalar>
LossAndGradients<Scalar> loss_gradients(const PairBatch<Scalar>& batch, const HeadParameters<Scalar>& theta,
                                        Scalar eps = Scalar(kDefaultLayerNormEps)) {
  const auto fwd = head_forward_cached(batch.region_features, theta, eps);
  const Matrix<Scalar>& v = fwd.output;
  const Matrix<Scalar>& u = batch.text_embeddings;
  const Matrix<Scalar> cos = v * u.transpose();
  const Scalar t = std::exp(theta.log_t);
  const Matrix<Scalar> z = ((t * cos).array() + theta.b).matrix();

  LossAndGradients<Scalar> out;
  out.loss = sigmoid_contrastive_loss(z, batch.y);

  const Scalar n_pairs = static_cast<Scalar>(std::max<Eigen::Index>(z.size(), 1));
  Matrix<Scalar> g(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) g(i, j) = (stable_sigmoid(z(i, j)) - batch.y(i, j)) / n_pairs;
  }

  auto& grads = out.grads;
  grads.b = g.sum();
  grads.log_t = t * (g.array() * cos.array()).sum();

  const Matrix<Scalar> dv = t * (g * u);
  Matrix<Scalar> dp(dv.rows(), dv.cols());
  for (Eigen::Index i = 0; i < dv.rows(); ++i) {
    const Scalar radial = v.row(i).dot(dv.row(i));
    dp.row(i) = (dv.row(i) - radial * v.row(i)) / fwd.proj_norm[i];
  }
  grads.W = fwd.hidden.transpose() * dp;
  const Matrix<Scalar> dh = dp * theta.W.transpose();
  grads.gamma = (dh.array() * fwd.normalized_input.array()).colwise().sum().transpose();
  grads.beta = dh.colwise().sum().transpose();
  return out;
}

}  // namespace dat
