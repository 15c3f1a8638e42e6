#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <vector>

#include "mcmim/augment.hpp"
#include "mcmim/config.hpp"
#include "mcmim/dataset.hpp"
#include "mcmim/loss.hpp"
#include "mcmim/masking.hpp"
#include "mcmim/optim.hpp"
#include "mcmim/patchify.hpp"
#include "mcmim/targets.hpp"
#include "mcmim/tokenizer.hpp"
#include "mcmim/vit.hpp"

namespace mcmim {

struct StepMetrics {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double target_entropy = 0.0;
};

template <typename T = float>
struct TrainState {
  ModelParams<T> params;
  AdamState<T> opt;
  Codebook<T> codebook;
  int64_t step = 0;
  Rng rng{0};
  std::vector<double> loss_history;
};

// Tokenizer-space patch matrix of an entire image list (one row per patch).
template <typename T>
Matrix<T> collect_tokenizer_patches(const std::vector<Image>& images, int patch,
                                    int d_tok) {
  if (images.empty()) throw ConfigError("collect_tokenizer_patches: no images");
  const PatchGrid first = patchify(images[0], patch);
  const int n = first.count();
  Matrix<T> all(static_cast<int>(images.size()) * n, d_tok);
  for (size_t i = 0; i < images.size(); ++i) {
    const PatchGrid pg = patchify(images[i], patch);
    const Matrix<T> u = to_tokenizer_space(pg.patches.template cast<T>(), d_tok);
    for (int r = 0; r < n; ++r) {
      T* dst = all.row(static_cast<int>(i) * n + r);
      const T* src = u.row(r);
      for (int c = 0; c < d_tok; ++c) dst[c] = src[c];
    }
  }
  return all;
}

template <typename T>
Codebook<T> fit_tokenizer(const TrainConfig& cfg, const std::vector<Image>& images) {
  Matrix<T> pts =
      collect_tokenizer_patches<T>(images, cfg.model_patch, cfg.tokenizer_dim_resolved());
  // standardize the tokenizer space on the fitting data
  double sum = 0.0, sum_sq = 0.0;
  for (T v : pts.data) {
    sum += static_cast<double>(v);
    sum_sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double mean = sum / static_cast<double>(pts.data.size());
  const double var = std::max(sum_sq / static_cast<double>(pts.data.size()) - mean * mean,
                              1e-12);
  const T mu = static_cast<T>(mean);
  // bandwidth: half the data std, so the default temperature sits in the
  // multi-choice regime (target entropy well below log V) while the tau
  // grid still spans sharp to smooth
  const T sigma = static_cast<T>(0.5 * std::sqrt(var));
  const T inv = T(1) / sigma;
  for (T& v : pts.data) v = (v - mu) * inv;
  Codebook<T> cb =
      fit_codebook(pts, cfg.model_vocab, cfg.tokenizer_iters, mix_seed(cfg.seed, 0x746f6bULL));
  cb.input_mean = mu;
  cb.input_scale = sigma;
  return cb;
}

template <typename T>
TrainState<T> init_train_state(const TrainConfig& cfg, Codebook<T> codebook) {
  TrainState<T> st;
  st.params = init_params<T>(cfg.arch(), cfg.seed);
  st.opt = make_adam_state(st.params);
  st.codebook = std::move(codebook);
  st.rng = Rng(mix_seed(cfg.seed, 0x747261696eULL));
  return st;
}

template <typename T>
MaskSpec sample_mask(const TrainConfig& cfg, const Arch& arch, Rng& rng) {
  if (cfg.mask_strategy == "block")
    return block_mask(arch.grid_rows, arch.grid_cols, cfg.mask_ratio, rng);
  return random_mask(arch.seq_len(), cfg.mask_ratio, rng);
}

// One optimizer step over a batch: augment -> patchify -> tokenizer logits
// -> mask -> forward -> multi-choice targets (constants) -> soft-label CE
// -> backward -> clip -> AdamW. The loss is the per-batch mean over all
// masked patches.
template <typename T>
StepMetrics train_step(TrainState<T>& state, const std::vector<const Image*>& batch,
                       const TrainConfig& cfg, const LrSchedule& schedule) {
  const Arch& arch = state.params.arch;
  ModelParams<T> grads = zeros_like(state.params);

  struct PerImage {
    Matrix<T> patch_matrix;
    MaskSpec mask;
    ForwardCache<T> cache;
    Matrix<T> d_logits;  // scaled by |M_i|
  };
  std::vector<PerImage> items;
  items.reserve(batch.size());
  double loss_weighted = 0.0;
  double entropy_weighted = 0.0;
  int64_t total_masked = 0;

  for (const Image* img : batch) {
    PerImage it;
    const Image aug = augment_train(*img, state.rng);
    const PatchGrid pg = patchify(aug, arch.patch);
    it.patch_matrix = pg.patches.template cast<T>();
    const Matrix<T> z = encode_logits(it.patch_matrix, state.codebook);
    it.mask = sample_mask<T>(cfg, arch, state.rng);
    const Matrix<T> embedded = embed_patches(state.params, it.patch_matrix, &it.mask);
    it.cache = vit_forward(state.params, embedded);

    LossResult<T> lr_res;
    Matrix<T> z_hat;
    if (cfg.loss_mode == "hard") {
      lr_res = hard_mim_loss(it.cache.logits, hard_ids(z), it.mask);
      z_hat = Matrix<T>(0, 0);
      // entropy of a one-hot target is zero
    } else {
      const TargetDistribution<T> targets =
          build_targets(z, it.cache.features, static_cast<T>(cfg.tau),
                        static_cast<T>(cfg.omega));
      lr_res = mc_mim_loss(it.cache.logits, targets.z_hat, it.mask);
      for (int i : it.mask.masked)
        entropy_weighted += static_cast<double>(
            row_entropy(targets.z_hat.row(i), targets.z_hat.cols));
    }
    const int m_count = it.mask.count();
    loss_weighted += static_cast<double>(lr_res.loss) * m_count;
    total_masked += m_count;
    it.d_logits = std::move(lr_res.d_logits);
    scale_inplace(it.d_logits, static_cast<T>(m_count));  // undo per-image mean
    items.push_back(std::move(it));
  }

  const T inv_total = static_cast<T>(1.0 / static_cast<double>(total_masked));
  for (PerImage& it : items) {
    scale_inplace(it.d_logits, inv_total);
    const Matrix<T> d_input =
        vit_backward(state.params, it.cache, &it.d_logits, nullptr, grads);
    embed_backward(state.params, it.patch_matrix, &it.mask, d_input, grads);
  }

  clip_global_norm(grads, cfg.grad_clip);
  const double lr = schedule.at(state.step);
  AdamHyper hp{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
  adamw_update(state.params, grads, state.opt, lr, hp);

  StepMetrics m;
  m.step = state.step;
  m.lr = lr;
  m.loss = loss_weighted / static_cast<double>(total_masked);
  m.target_entropy = entropy_weighted / static_cast<double>(total_masked);
  if (!std::isfinite(m.loss))
    throw NumericError("train_step: non-finite loss at step " + std::to_string(state.step));
  ++state.step;
  state.loss_history.push_back(m.loss);
  return m;
}

inline int steps_per_epoch(int n_images, int batch_size) {
  return (n_images + batch_size - 1) / batch_size;
}

inline LrSchedule make_schedule(const TrainConfig& cfg, int n_images) {
  const int spe = steps_per_epoch(n_images, cfg.batch_size);
  LrSchedule s;
  s.peak = cfg.peak_lr;
  s.min = cfg.min_lr;
  s.warmup_steps = static_cast<int64_t>(cfg.warmup_epochs) * spe;
  s.total_steps = static_cast<int64_t>(cfg.epochs) * spe;
  return s;
}

// Metrics CSV schema consumed by downstream tooling: one row per step.
inline void write_metrics_csv(const std::vector<StepMetrics>& metrics,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics: " + path);
  out << "step,lr,loss,target_entropy\n";
  for (const StepMetrics& m : metrics)
    out << m.step << "," << detail::fmt_double(m.lr) << "," << detail::fmt_double(m.loss)
        << "," << detail::fmt_double(m.target_entropy) << "\n";
}

// Full pre-training loop. The optional epoch hook runs after each epoch
// (checkpointing, logging).
template <typename T>
std::vector<StepMetrics> pretrain(
    TrainState<T>& state, const Dataset& ds, const TrainConfig& cfg,
    const std::function<void(int, const TrainState<T>&)>& epoch_hook = {}) {
  const int n = static_cast<int>(ds.train.size());
  const LrSchedule schedule = make_schedule(cfg, n);
  const int spe = steps_per_epoch(n, cfg.batch_size);
  std::vector<StepMetrics> metrics;
  metrics.reserve(static_cast<size_t>(cfg.epochs) * spe);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[state.rng.uniform_int(0, i)]);
    for (int b = 0; b < spe; ++b) {
      std::vector<const Image*> batch;
      const int lo = b * cfg.batch_size;
      const int hi = std::min(n, lo + cfg.batch_size);
      batch.reserve(hi - lo);
      for (int i = lo; i < hi; ++i) batch.push_back(&ds.train[order[i]]);
      metrics.push_back(train_step(state, batch, cfg, schedule));
    }
    if (epoch_hook) epoch_hook(epoch, state);
  }
  return metrics;
}

}  // namespace mcmim
