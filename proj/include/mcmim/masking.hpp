#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mcmim/errors.hpp"
#include "mcmim/matrix.hpp"
#include "mcmim/rng.hpp"

namespace mcmim {

enum class MaskStrategy { kRandom, kBlock };

// The set M of masked patch indices, sorted and unique.
struct MaskSpec {
  std::vector<int> masked;
  MaskStrategy strategy = MaskStrategy::kRandom;
  double ratio = 0.0;

  int count() const { return static_cast<int>(masked.size()); }
  bool contains(int i) const {
    return std::binary_search(masked.begin(), masked.end(), i);
  }
};

// Uniformly random subset of exactly round(ratio*N) indices.
inline MaskSpec random_mask(int n, double ratio, Rng& rng) {
  if (ratio <= 0.0 || ratio >= 1.0)
    throw ConfigError("random_mask: ratio must be in (0,1), got " + std::to_string(ratio));
  const int k = static_cast<int>(std::llround(ratio * n));
  if (k < 1) throw ConfigError("random_mask: round(ratio*N) must be >= 1");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[rng.uniform_int(i, n - 1)]);
  MaskSpec m;
  m.strategy = MaskStrategy::kRandom;
  m.ratio = ratio;
  m.masked.assign(idx.begin(), idx.begin() + k);
  std::sort(m.masked.begin(), m.masked.end());
  return m;
}

// Blockwise masking: unions rectangular blocks (area >= 4 patches, aspect
// ratio in [0.3, 1/0.3], uniform log-area) until |masked| >= ratio*N.
// Candidate blocks that would push the fraction past ratio+0.1 are skipped;
// at most 200 attempts.
inline MaskSpec block_mask(int rows, int cols, double ratio, Rng& rng) {
  const int n = rows * cols;
  if (n < 16) throw ConfigError("block_mask: grid must have at least 16 patches");
  if (ratio <= 0.0 || ratio >= 1.0)
    throw ConfigError("block_mask: ratio must be in (0,1), got " + std::to_string(ratio));
  const double target = ratio * n;
  const double cap = (ratio + 0.1) * n;
  const double max_area = std::max(4.0, std::min(target, static_cast<double>(n)));
  std::vector<char> masked(n, 0);
  int total = 0;
  constexpr int kMaxAttempts = 200;
  for (int attempt = 0; attempt < kMaxAttempts && total < target; ++attempt) {
    const double area = std::exp(rng.uniform(std::log(4.0), std::log(max_area)));
    const double aspect = std::exp(rng.uniform(std::log(0.3), std::log(1.0 / 0.3)));
    int bh = std::max(1, static_cast<int>(std::lround(std::sqrt(area * aspect))));
    int bw = std::max(1, static_cast<int>(std::lround(std::sqrt(area / aspect))));
    bw = std::max(bw, (4 + bh - 1) / bh);  // keep block area >= 4 after rounding
    if (bh > rows || bw > cols) continue;
    const int top = rng.uniform_int(0, rows - bh);
    const int left = rng.uniform_int(0, cols - bw);
    int added = 0;
    for (int y = top; y < top + bh; ++y)
      for (int x = left; x < left + bw; ++x)
        if (!masked[y * cols + x]) ++added;
    if (total + added > cap) continue;
    for (int y = top; y < top + bh; ++y)
      for (int x = left; x < left + bw; ++x) masked[y * cols + x] = 1;
    total += added;
  }
  if (total < target)
    throw NumericError("block_mask: attempt cap reached at ratio " +
                       std::to_string(static_cast<double>(total) / n) + ", wanted " +
                       std::to_string(ratio));
  MaskSpec m;
  m.strategy = MaskStrategy::kBlock;
  m.ratio = ratio;
  for (int i = 0; i < n; ++i)
    if (masked[i]) m.masked.push_back(i);
  return m;
}

// Replaces rows in M with the learned mask token; all other rows are
// untouched. Positional embeddings are added by the caller afterwards.
template <typename T>
Matrix<T> apply_mask_tokens(const Matrix<T>& embedded, const MaskSpec& m,
                            const Matrix<T>& mask_token) {
  Matrix<T> out = embedded;
  for (int i : m.masked) {
    if (i < 0 || i >= embedded.rows)
      throw ConfigError("apply_mask_tokens: index " + std::to_string(i) + " out of range");
    T* r = out.row(i);
    for (int j = 0; j < out.cols; ++j) r[j] = mask_token.data[j];
  }
  return out;
}

}  // namespace mcmim
