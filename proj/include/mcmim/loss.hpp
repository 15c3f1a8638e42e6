#pragma once

#include <vector>

#include "mcmim/errors.hpp"
#include "mcmim/masking.hpp"
#include "mcmim/matrix.hpp"

namespace mcmim {

template <typename T>
struct LossResult {
  T loss = T(0);
  Matrix<T> d_logits;  // nonzero only on masked rows
};

// Soft-label cross-entropy over the masked patches: the mean over i in M
// of -sum_k z_hat[i,k] * log softmax(logits_i)_k. Unmasked rows contribute
// nothing and receive exactly zero gradient. The gradient per masked row
// is (softmax(logits_i) - z_hat_i) / |M|.
template <typename T>
LossResult<T> mc_mim_loss(const Matrix<T>& logits, const Matrix<T>& z_hat,
                          const MaskSpec& m) {
  if (m.masked.empty()) throw ConfigError("mc_mim_loss: empty mask set");
  const Matrix<T> logq = log_softmax_rows(logits);
  LossResult<T> res;
  res.d_logits = Matrix<T>(logits.rows, logits.cols);
  const T inv_m = T(1) / static_cast<T>(m.masked.size());
  T total = T(0);
  for (int i : m.masked) {
    if (i < 0 || i >= logits.rows)
      throw ConfigError("mc_mim_loss: masked index out of range");
    const T* zr = z_hat.row(i);
    const T* lr = logq.row(i);
    T* dr = res.d_logits.row(i);
    T ce = T(0);
    for (int k = 0; k < logits.cols; ++k) {
      ce -= zr[k] * lr[k];
      dr[k] = (std::exp(lr[k]) - zr[k]) * inv_m;
    }
    total += ce;
  }
  res.loss = total * inv_m;
  return res;
}

// Hard-label baseline: the multi-choice loss with one-hot targets at the
// argmax token ids.
template <typename T>
LossResult<T> hard_mim_loss(const Matrix<T>& logits, const std::vector<int>& ids,
                            const MaskSpec& m) {
  if (static_cast<int>(ids.size()) != logits.rows)
    throw ConfigError("hard_mim_loss: id count does not match logit rows");
  Matrix<T> one_hot(logits.rows, logits.cols);
  for (int i = 0; i < logits.rows; ++i) {
    if (ids[i] < 0 || ids[i] >= logits.cols)
      throw ConfigError("hard_mim_loss: token id out of range");
    one_hot(i, ids[i]) = T(1);
  }
  return mc_mim_loss(logits, one_hot, m);
}

}  // namespace mcmim
