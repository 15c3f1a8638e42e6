#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mcmim/errors.hpp"
#include "mcmim/matrix.hpp"
#include "mcmim/patchify.hpp"
#include "mcmim/rng.hpp"

namespace mcmim {

// V learned code vectors defining the visual vocabulary. Frozen after
// fitting; the tokenizer never receives gradients.
//
// Codes live in a standardized tokenizer space: pooled patch vectors are
// shifted/scaled by a fixed (input_mean, input_scale) estimated from the
// fitting data. Raw pixel distances are far too small for the published
// temperature range; standardization puts the logit spread where the
// tau grid {0.1, 1, 4, 10} moves between sharp and smooth targets.
template <typename T>
struct Codebook {
  Matrix<T> codes;  // V x d_tok, standardized space
  T input_mean = T(0);
  T input_scale = T(1);
  int vocab() const { return codes.rows; }
  int dim() const { return codes.cols; }
};

// Fixed linear pooling from patch space to tokenizer space: mean over
// contiguous groups of size dim/d_tok. Identity when d_tok == dim.
template <typename T>
Matrix<T> to_tokenizer_space(const Matrix<T>& patches, int d_tok) {
  if (d_tok == patches.cols) return patches;
  if (d_tok <= 0 || patches.cols % d_tok != 0)
    throw ConfigError("tokenizer: patch dim " + std::to_string(patches.cols) +
                      " not poolable to d_tok " + std::to_string(d_tok));
  const int group = patches.cols / d_tok;
  Matrix<T> out(patches.rows, d_tok);
  for (int i = 0; i < patches.rows; ++i) {
    const T* src = patches.row(i);
    T* dst = out.row(i);
    for (int j = 0; j < d_tok; ++j) {
      T acc = T(0);
      for (int g = 0; g < group; ++g) acc += src[j * group + g];
      dst[j] = acc / static_cast<T>(group);
    }
  }
  return out;
}

namespace detail {

template <typename T>
T sq_dist(const T* a, const T* b, int d) {
  T acc = T(0);
  for (int i = 0; i < d; ++i) {
    const T diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

template <typename T>
T sq_norm(const T* a, int d) {
  T acc = T(0);
  for (int i = 0; i < d; ++i) acc += a[i] * a[i];
  return acc;
}

template <typename T>
int count_distinct(const Matrix<T>& pts) {
  std::vector<int> order(pts.rows);
  for (int i = 0; i < pts.rows; ++i) order[i] = i;
  auto less = [&](int a, int b) {
    const T* ra = pts.row(a);
    const T* rb = pts.row(b);
    for (int j = 0; j < pts.cols; ++j) {
      if (ra[j] != rb[j]) return ra[j] < rb[j];
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  int distinct = pts.rows > 0 ? 1 : 0;
  for (int i = 1; i < pts.rows; ++i)
    if (less(order[i - 1], order[i])) ++distinct;
  return distinct;
}

}  // namespace detail

// k-means++ seeding: first center uniform, each next sampled with
// probability proportional to squared distance from the chosen set.
template <typename T>
Matrix<T> kmeans_pp_init(const Matrix<T>& pts, int k, Rng& rng) {
  const int n = pts.rows;
  Matrix<T> centers(k, pts.cols);
  std::vector<T> d2(n);
  int first = rng.uniform_int(0, n - 1);
  for (int j = 0; j < pts.cols; ++j) centers(0, j) = pts(first, j);
  for (int i = 0; i < n; ++i) d2[i] = detail::sq_dist(pts.row(i), centers.row(0), pts.cols);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += static_cast<double>(d2[i]);
    int pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cum = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        cum += static_cast<double>(d2[i]);
        if (cum >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(0, n - 1);
    }
    for (int j = 0; j < pts.cols; ++j) centers(c, j) = pts(pick, j);
    for (int i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], detail::sq_dist(pts.row(i), centers.row(c), pts.cols));
  }
  return centers;
}

// One Lloyd pass over the given centers: assign, recompute means, reseed
// empty clusters from the point farthest from its assigned center.
// Returns true if the assignment changed. Assignment distances use the
// expanded |p|^2 - 2p.c + |c|^2 form so the cross term is one matmul.
template <typename T>
bool lloyd_step(const Matrix<T>& pts, Matrix<T>& centers, std::vector<int>& assign) {
  const int n = pts.rows;
  const int k = centers.rows;
  const int d = pts.cols;
  bool changed = false;
  std::vector<T> p_norm(n), c_norm(k);
  for (int i = 0; i < n; ++i) p_norm[i] = detail::sq_norm(pts.row(i), d);
  for (int c = 0; c < k; ++c) c_norm[c] = detail::sq_norm(centers.row(c), d);
  const Matrix<T> cross = matmul(pts, transpose(centers));
  std::vector<T> min_d(n);
  for (int i = 0; i < n; ++i) {
    const T* xrow = cross.row(i);
    int best = 0;
    T best_d = p_norm[i] - T(2) * xrow[0] + c_norm[0];
    for (int c = 1; c < k; ++c) {
      const T dist = p_norm[i] - T(2) * xrow[c] + c_norm[c];
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    min_d[i] = best_d;
    if (assign[i] != best) {
      assign[i] = best;
      changed = true;
    }
  }
  Matrix<T> sums(k, d);
  std::vector<int> counts(k, 0);
  for (int i = 0; i < n; ++i) {
    ++counts[assign[i]];
    const T* p = pts.row(i);
    T* s = sums.row(assign[i]);
    for (int j = 0; j < d; ++j) s[j] += p[j];
  }
  std::vector<char> reseeded(n, 0);
  for (int c = 0; c < k; ++c) {
    if (counts[c] > 0) {
      const T inv = T(1) / static_cast<T>(counts[c]);
      for (int j = 0; j < d; ++j) centers(c, j) = sums(c, j) * inv;
    } else {
      int far = -1;
      T far_d = T(-1);
      for (int i = 0; i < n; ++i) {
        if (reseeded[i]) continue;
        if (min_d[i] > far_d) {
          far_d = min_d[i];
          far = i;
        }
      }
      reseeded[far] = 1;
      for (int j = 0; j < d; ++j) centers(c, j) = pts(far, j);
      changed = true;
    }
  }
  return changed;
}

template <typename T>
T kmeans_inertia(const Matrix<T>& pts, const Matrix<T>& centers) {
  T total = T(0);
  for (int i = 0; i < pts.rows; ++i) {
    T best = detail::sq_dist(pts.row(i), centers.row(0), pts.cols);
    for (int c = 1; c < centers.rows; ++c)
      best = std::min(best, detail::sq_dist(pts.row(i), centers.row(c), pts.cols));
    total += best;
  }
  return total;
}

// Lloyd iterations run to `iters` or until the assignment reaches a
// fixpoint; deterministic given seed.
template <typename T>
Codebook<T> fit_codebook(const Matrix<T>& patches, int vocab, int iters, uint64_t seed) {
  if (vocab < 2) throw ConfigError("fit_codebook: vocabulary size must be >= 2");
  if (detail::count_distinct(patches) < vocab)
    throw ConfigError("fit_codebook: fewer than " + std::to_string(vocab) +
                      " distinct patch vectors");
  Rng rng(mix_seed(seed, 0x6b6d6e73ULL));
  Codebook<T> cb;
  cb.codes = kmeans_pp_init(patches, vocab, rng);
  std::vector<int> assign(patches.rows, -1);
  for (int it = 0; it < iters; ++it) {
    if (!lloyd_step(patches, cb.codes, assign)) break;
  }
  for (int a = 0; a < vocab; ++a)
    for (int b = a + 1; b < vocab; ++b)
      if (detail::sq_dist(cb.codes.row(a), cb.codes.row(b), cb.codes.cols) == T(0))
        throw NumericError("fit_codebook: duplicate codes after fitting");
  return cb;
}

// Per-patch unnormalized scores: z[i,k] = -|u_i - c_k|^2 / sqrt(d_tok),
// where u_i is patch i's tokenizer-space vector. Uses the expanded form
// |u|^2 - 2u.c + |c|^2 with a vectorizable matmul for the cross term.
template <typename T>
Matrix<T> encode_logits(const Matrix<T>& patches, const Codebook<T>& cb) {
  Matrix<T> u = to_tokenizer_space(patches, cb.dim());
  if (cb.input_mean != T(0) || cb.input_scale != T(1)) {
    const T inv = T(1) / cb.input_scale;
    for (T& x : u.data) x = (x - cb.input_mean) * inv;
  }
  const int v = cb.vocab();
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(cb.dim()));
  std::vector<T> u_norm(u.rows), c_norm(v);
  for (int i = 0; i < u.rows; ++i) u_norm[i] = detail::sq_norm(u.row(i), u.cols);
  for (int k = 0; k < v; ++k) c_norm[k] = detail::sq_norm(cb.codes.row(k), cb.codes.cols);
  Matrix<T> z = matmul(u, transpose(cb.codes));  // u.c
  for (int i = 0; i < u.rows; ++i) {
    T* zrow = z.row(i);
    for (int k = 0; k < v; ++k)
      zrow[k] = -(u_norm[i] - T(2) * zrow[k] + c_norm[k]) * inv_scale;
  }
  return z;
}

template <typename T>
Matrix<T> encode_logits(const PatchGrid& pg, const Codebook<T>& cb) {
  return encode_logits(pg.patches.template cast<T>(), cb);
}

// Argmax token id per patch; ties broken by lowest index.
template <typename T>
std::vector<int> hard_ids(const Matrix<T>& z) {
  std::vector<int> ids(z.rows);
  for (int i = 0; i < z.rows; ++i) {
    const T* r = z.row(i);
    int best = 0;
    for (int k = 1; k < z.cols; ++k)
      if (r[k] > r[best]) best = k;
    ids[i] = best;
  }
  return ids;
}

}  // namespace mcmim
