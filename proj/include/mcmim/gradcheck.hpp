#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "mcmim/config.hpp"
#include "mcmim/dataset.hpp"
#include "mcmim/loss.hpp"
#include "mcmim/masking.hpp"
#include "mcmim/targets.hpp"
#include "mcmim/tokenizer.hpp"
#include "mcmim/train.hpp"
#include "mcmim/vit.hpp"

namespace mcmim {

struct GradCheckBlock {
  std::string name;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_error = 0.0;
  double seconds = 0.0;
};

namespace detail {

// Per-tensor coordinate sample: the largest-magnitude analytic entries plus
// random ones, so relative errors are measured where the gradient lives.
inline std::vector<size_t> sample_coords(const std::vector<double>& analytic, int want,
                                         Rng& rng) {
  const size_t n = analytic.size();
  if (static_cast<size_t>(want) >= n) {
    std::vector<size_t> all(n);
    for (size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::abs(analytic[a]) > std::abs(analytic[b]);
  });
  std::vector<size_t> picked(order.begin(), order.begin() + want / 2);
  while (picked.size() < static_cast<size_t>(want)) {
    const size_t c = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(n) - 1));
    if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
  }
  return picked;
}

}  // namespace detail

// Compares analytic gradients of the full masked-prediction pipeline
// (embedding -> encoder -> head -> soft-label CE with frozen targets)
// against a float64 central-difference oracle (h=1e-5). The target branch
// is excluded by construction: z_hat is precomputed once and held constant.
//
// Per tensor the error is |analytic - fd|_2 over sampled coordinates,
// normalized by the full-gradient 2-norm. Block-local normalization is
// degenerate here: the key-projection bias has an identically zero true
// gradient (a row-constant shift of K cancels in the attention softmax),
// which would turn finite-difference noise into a relative error of 1.
template <typename T>
GradCheckReport run_grad_check(const TrainConfig& cfg, int coords_per_tensor = 8) {
  const auto t0 = std::chrono::steady_clock::now();
  const Arch arch = cfg.arch();

  // Small corpus: enough distinct patches to fit the full vocabulary.
  const int n_fit = std::max(8, (2 * cfg.model_vocab) / arch.seq_len() + 1);
  const Dataset ds = generate_toy_dataset(cfg.seed, n_fit, 2, cfg.data_classes,
                                          cfg.data_image_size);
  const Codebook<T> cb = fit_tokenizer<T>(cfg, ds.train);

  const ModelParams<T> params = init_params<T>(arch, cfg.seed);
  const PatchGrid pg = patchify(ds.train[0], arch.patch);
  const Matrix<T> pm = pg.patches.template cast<T>();
  Rng mask_rng(mix_seed(cfg.seed, 0x6d61736bULL));
  const MaskSpec mask = random_mask(arch.seq_len(), cfg.mask_ratio, mask_rng);

  // Frozen multi-choice target, built once at the evaluation point.
  const Matrix<T> z = encode_logits(pm, cb);
  const ForwardCache<T> cache0 = vit_forward(params, embed_patches(params, pm, &mask));
  const Matrix<T> z_hat =
      build_targets(z, cache0.features, static_cast<T>(cfg.tau), static_cast<T>(cfg.omega))
          .z_hat;

  // Analytic gradients in the working precision.
  ModelParams<T> grads = zeros_like(params);
  const LossResult<T> res = mc_mim_loss(cache0.logits, z_hat, mask);
  const Matrix<T> d_input = vit_backward(params, cache0, &res.d_logits, nullptr, grads);
  embed_backward(params, pm, &mask, d_input, grads);

  // float64 oracle evaluated at the same point.
  ModelParams<double> params64 = [&] {
    if constexpr (std::is_same_v<T, double>) return params;
    else {
      ModelParams<double> out = make_params_shell<double>(arch);
      std::vector<Matrix<double>*> dst;
      for_each_tensor(out, [&](const std::string&, Matrix<double>& m, bool) { dst.push_back(&m); });
      size_t idx = 0;
      for_each_tensor(params, [&](const std::string&, const Matrix<T>& m, bool) {
        *dst[idx++] = m.template cast<double>();
      });
      return out;
    }
  }();
  const Matrix<double> pm64 = pm.template cast<double>();
  const Matrix<double> z_hat64 = z_hat.template cast<double>();
  auto loss64 = [&]() {
    const ForwardCache<double> c = vit_forward(params64, embed_patches(params64, pm64, &mask));
    return static_cast<double>(mc_mim_loss(c.logits, z_hat64, mask).loss);
  };

  std::vector<Matrix<double>*> tensors64;
  for_each_tensor(params64,
                  [&](const std::string&, Matrix<double>& m, bool) { tensors64.push_back(&m); });
  std::vector<const Matrix<T>*> grad_tensors;
  std::vector<std::string> names;
  for_each_tensor(grads, [&](const std::string& n, const Matrix<T>& m, bool) {
    names.push_back(n);
    grad_tensors.push_back(&m);
  });

  double grad_norm_sq = 0.0;
  for (const Matrix<T>* g : grad_tensors)
    for (T v : g->data) grad_norm_sq += static_cast<double>(v) * static_cast<double>(v);
  const double scale = std::max(std::sqrt(grad_norm_sq), 1e-300);

  constexpr double h = 1e-5;
  Rng pick_rng(mix_seed(cfg.seed, 0x636f6f7264ULL));
  GradCheckReport report;
  for (size_t ti = 0; ti < grad_tensors.size(); ++ti) {
    std::vector<double> analytic(grad_tensors[ti]->data.begin(), grad_tensors[ti]->data.end());
    const std::vector<size_t> coords =
        detail::sample_coords(analytic, coords_per_tensor, pick_rng);
    double err_sq = 0.0;
    for (size_t c : coords) {
      double& w = tensors64[ti]->data[c];
      const double saved = w;
      w = saved + h;
      const double lp = loss64();
      w = saved - h;
      const double lm = loss64();
      w = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double diff = analytic[c] - fd;
      err_sq += diff * diff;
    }
    report.blocks.push_back({names[ti], std::sqrt(err_sq) / scale});
    report.max_rel_error = std::max(report.max_rel_error, report.blocks.back().rel_error);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace mcmim
