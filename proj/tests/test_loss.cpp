#include <doctest.h>

#include <cmath>

#include "mcmim/loss.hpp"
#include "mcmim/rng.hpp"
#include "mcmim/targets.hpp"

using namespace mcmim;

namespace {

template <typename T>
Matrix<T> random_matrix(int r, int c, uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  Matrix<T> m(r, c);
  for (auto& v : m.data) v = static_cast<T>(rng.uniform(lo, hi));
  return m;
}

MaskSpec mask_of(std::vector<int> idx) {
  MaskSpec m;
  m.masked = std::move(idx);
  return m;
}

// Termwise double-precision oracle for the soft-label masked CE.
double naive_loss(const Matrix<double>& logits, const Matrix<double>& z_hat,
                  const std::vector<int>& masked) {
  double total = 0;
  for (int i : masked) {
    double sum = 0;
    for (int k = 0; k < logits.cols; ++k) sum += std::exp(logits(i, k));
    for (int k = 0; k < logits.cols; ++k)
      total -= z_hat(i, k) * std::log(std::exp(logits(i, k)) / sum);
  }
  return total / masked.size();
}

}  // namespace

TEST_CASE("mc_mim_loss: one-hot target on a single masked patch equals hard CE") {
  const Matrix<double> logits = random_matrix<double>(4, 5, 1);
  Matrix<double> z_hat(4, 5);
  z_hat(2, 3) = 1.0;
  const MaskSpec m = mask_of({2});
  const LossResult<double> res = mc_mim_loss(logits, z_hat, m);
  // -log softmax(logits_2)_3
  double sum = 0;
  for (int k = 0; k < 5; ++k) sum += std::exp(logits(2, k));
  CHECK(res.loss == doctest::Approx(-std::log(std::exp(logits(2, 3)) / sum)).epsilon(1e-12));
}

TEST_CASE("mc_mim_loss: uniform logits give log V for any stochastic target") {
  Matrix<double> logits(3, 8);
  logits.fill(0.42);
  const Matrix<double> z_hat = soft_probs(random_matrix<double>(3, 8, 2), 1.0);
  const LossResult<double> res = mc_mim_loss(logits, z_hat, mask_of({0, 2}));
  CHECK(res.loss == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("mc_mim_loss: matches the termwise naive oracle") {
  const Matrix<double> logits = random_matrix<double>(4, 5, 3);
  const Matrix<double> z_hat = soft_probs(random_matrix<double>(4, 5, 4), 2.0);
  const MaskSpec m = mask_of({1, 3});
  const LossResult<double> res = mc_mim_loss(logits, z_hat, m);
  CHECK(res.loss == doctest::Approx(naive_loss(logits, z_hat, m.masked)).epsilon(1e-12));
}

TEST_CASE("mc_mim_loss: empty mask is an error") {
  const Matrix<double> logits = random_matrix<double>(2, 3, 5);
  const Matrix<double> z_hat = soft_probs(logits, 1.0);
  CHECK_THROWS_AS(mc_mim_loss(logits, z_hat, MaskSpec{}), ConfigError);
}

TEST_CASE("mc_mim_loss: gradient is (softmax - target)/|M| on masked rows, zero elsewhere") {
  const Matrix<double> logits = random_matrix<double>(5, 6, 7);
  const Matrix<double> z_hat = soft_probs(random_matrix<double>(5, 6, 8), 3.0);
  const MaskSpec m = mask_of({0, 4});
  const LossResult<double> res = mc_mim_loss(logits, z_hat, m);
  Matrix<double> sm = logits;
  softmax_rows(sm);
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 6; ++k) {
      if (i == 0 || i == 4)
        CHECK(res.d_logits(i, k) ==
              doctest::Approx((sm(i, k) - z_hat(i, k)) / 2.0).epsilon(1e-12));
      else
        CHECK(res.d_logits(i, k) == 0.0);
    }
}

TEST_CASE("mc_mim_loss: invariant under joint vocabulary permutation") {
  const Matrix<double> logits = random_matrix<double>(3, 7, 9);
  const Matrix<double> z_hat = soft_probs(random_matrix<double>(3, 7, 10), 1.5);
  const MaskSpec m = mask_of({0, 1, 2});
  const std::vector<int> perm = {4, 0, 6, 2, 5, 1, 3};
  Matrix<double> pl(3, 7), pz(3, 7);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 7; ++k) {
      pl(i, k) = logits(i, perm[k]);
      pz(i, k) = z_hat(i, perm[k]);
    }
  const double a = mc_mim_loss(logits, z_hat, m).loss;
  const double b = mc_mim_loss(pl, pz, m).loss;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("mc_mim_loss: nonnegative and at least the target entropy") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(1, 6);
    const int v = rng.uniform_int(2, 12);
    const Matrix<double> logits = random_matrix<double>(n, v, rng.bits(), -3, 3);
    const Matrix<double> z_hat =
        soft_probs(random_matrix<double>(n, v, rng.bits(), -3, 3), 2.0);
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    const LossResult<double> res = mc_mim_loss(logits, z_hat, mask_of(all));
    CHECK(res.loss >= 0.0);
    CHECK(res.loss >= mean_row_entropy(z_hat) - 1e-9);  // H(z,q) >= H(z)
  }
}

TEST_CASE("hard_mim_loss: bitwise equal to mc_mim_loss with one-hot targets") {
  const Matrix<double> logits = random_matrix<double>(6, 9, 11);
  std::vector<int> ids(6);
  Rng rng(12);
  for (auto& id : ids) id = rng.uniform_int(0, 8);
  const MaskSpec m = mask_of({1, 2, 5});
  Matrix<double> one_hot(6, 9);
  for (int i = 0; i < 6; ++i) one_hot(i, ids[i]) = 1.0;
  const LossResult<double> a = hard_mim_loss(logits, ids, m);
  const LossResult<double> b = mc_mim_loss(logits, one_hot, m);
  CHECK(a.loss == b.loss);
  CHECK(a.d_logits.data == b.d_logits.data);
}

TEST_CASE("hard_mim_loss: perfect prediction drives the loss to zero") {
  Matrix<double> logits(2, 4);
  logits(0, 1) = 200.0;  // overwhelming margin
  logits(1, 3) = 200.0;
  const LossResult<double> res = hard_mim_loss(logits, {1, 3}, mask_of({0, 1}));
  CHECK(res.loss < 1e-12);
}

TEST_CASE("hard_mim_loss: matches the naive oracle") {
  const Matrix<double> logits = random_matrix<double>(3, 4, 13);
  const std::vector<int> ids = {2, 0, 3};
  Matrix<double> one_hot(3, 4);
  for (int i = 0; i < 3; ++i) one_hot(i, ids[i]) = 1.0;
  const MaskSpec m = mask_of({0, 2});
  CHECK(hard_mim_loss(logits, ids, m).loss ==
        doctest::Approx(naive_loss(logits, one_hot, m.masked)).epsilon(1e-12));
}
