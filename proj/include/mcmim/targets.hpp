#pragma once

#include <cmath>
#include <string>

#include "mcmim/errors.hpp"
#include "mcmim/matrix.hpp"

namespace mcmim {

// Per-patch soft target distributions over the token vocabulary. All of
// p, affinity and z_hat are row-stochastic; z_hat is treated as a constant
// during optimization (no gradient flows into the target branch).
template <typename T>
struct TargetDistribution {
  Matrix<T> p;         // N x V tokenizer soft probabilities
  Matrix<T> affinity;  // N x N row-stochastic inter-patch weights
  Matrix<T> z_hat;     // N x V blended target
  T tau = T(0);
  T omega = T(0);
};

// Temperature softmax over tokenizer logits. Small tau sharpens towards
// the single-choice (hard id) limit, large tau smooths the distribution.
template <typename T>
Matrix<T> soft_probs(const Matrix<T>& z, T tau) {
  if (!(tau > T(0)))
    throw ConfigError("soft_probs: tau must be positive, got " + std::to_string(tau));
  Matrix<T> p = z;
  const T inv_tau = T(1) / tau;
  scale_inplace(p, inv_tau);
  softmax_rows(p);
  return p;
}

// Row-softmax over cosine similarities of patch features, the diagonal
// included. Zero-norm feature rows are treated as orthogonal to everything,
// which yields a uniform row.
template <typename T>
Matrix<T> patch_affinity(const Matrix<T>& features) {
  const int n = features.rows;
  const int d = features.cols;
  Matrix<T> normed(n, d);
  for (int i = 0; i < n; ++i) {
    const T* f = features.row(i);
    T sq = T(0);
    for (int j = 0; j < d; ++j) sq += f[j] * f[j];
    T* o = normed.row(i);
    if (sq > T(0)) {
      const T inv = T(1) / std::sqrt(sq);
      for (int j = 0; j < d; ++j) o[j] = f[j] * inv;
    }
    // zero-norm rows stay zero: inner products vanish
  }
  Matrix<T> w = matmul_bt(normed, normed);
  softmax_rows(w);
  return w;
}

// Blended multi-choice target: omega*p + (1-omega)*W*p. omega=1 keeps the
// tokenizer distribution, omega=0 uses only the affinity-propagated one.
template <typename T>
Matrix<T> blend_targets(const Matrix<T>& p, const Matrix<T>& w, T omega) {
  if (!(omega >= T(0) && omega <= T(1)))
    throw ConfigError("blend_targets: omega must be in [0,1], got " + std::to_string(omega));
  if (omega == T(1)) return p;
  Matrix<T> wp = matmul(w, p);
  if (omega == T(0)) return wp;
  Matrix<T> out(p.rows, p.cols);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = omega * p.data[i] + (T(1) - omega) * wp.data[i];
  return out;
}

// Full multi-choice target construction from tokenizer logits and the
// in-training encoder's features on the corrupted image. The features are
// consumed as constants.
template <typename T>
TargetDistribution<T> build_targets(const Matrix<T>& z, const Matrix<T>& features, T tau,
                                    T omega) {
  TargetDistribution<T> t;
  t.tau = tau;
  t.omega = omega;
  t.p = soft_probs(z, tau);
  t.affinity = patch_affinity(features);
  t.z_hat = blend_targets(t.p, t.affinity, omega);
  return t;
}

// Shannon entropy (nats) of one distribution row.
template <typename T>
T row_entropy(const T* p, int n) {
  T h = T(0);
  for (int i = 0; i < n; ++i)
    if (p[i] > T(0)) h -= p[i] * std::log(p[i]);
  return h;
}

template <typename T>
T mean_row_entropy(const Matrix<T>& p) {
  T total = T(0);
  for (int i = 0; i < p.rows; ++i) total += row_entropy(p.row(i), p.cols);
  return p.rows > 0 ? total / static_cast<T>(p.rows) : T(0);
}

}  // namespace mcmim
