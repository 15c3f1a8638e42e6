#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mcmim/augment.hpp"
#include "mcmim/config.hpp"
#include "mcmim/dataset.hpp"
#include "mcmim/errors.hpp"
#include "mcmim/matrix.hpp"
#include "mcmim/optim.hpp"
#include "mcmim/patchify.hpp"
#include "mcmim/rng.hpp"
#include "mcmim/vit.hpp"

namespace mcmim {

struct MetricsRow {
  std::string run_id;
  std::string mode;  // probe | finetune
  int epoch = 0;     // best epoch
  double top1 = 0.0;
  double loss = 0.0;
};

inline double top1_accuracy(const std::vector<int>& predictions,
                            const std::vector<int>& labels) {
  if (predictions.empty()) throw ConfigError("top1_accuracy: empty input");
  if (predictions.size() != labels.size())
    throw ConfigError("top1_accuracy: prediction/label length mismatch");
  int matches = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++matches;
  return 100.0 * static_cast<double>(matches) / static_cast<double>(predictions.size());
}

// Mean-pooled encoder features of clean (unmasked, unaugmented) images.
template <typename T>
Matrix<T> pooled_features(const ModelParams<T>& params, const std::vector<Image>& images) {
  const int d = params.arch.dim;
  Matrix<T> out(static_cast<int>(images.size()), d);
  for (size_t i = 0; i < images.size(); ++i) {
    const PatchGrid pg = patchify(images[i], params.arch.patch);
    const Matrix<T> pm = pg.patches.template cast<T>();
    const ForwardCache<T> cache = vit_forward(params, embed_patches(params, pm, nullptr));
    T* row = out.row(static_cast<int>(i));
    for (int r = 0; r < cache.features.rows; ++r)
      for (int j = 0; j < d; ++j) row[j] += cache.features(r, j);
    const T inv = T(1) / static_cast<T>(cache.features.rows);
    for (int j = 0; j < d; ++j) row[j] *= inv;
  }
  return out;
}

template <typename T>
std::vector<int> labels_of(const std::vector<Image>& images, const char* who) {
  std::vector<int> out;
  out.reserve(images.size());
  for (const Image& img : images) {
    if (!img.label) throw ConfigError(std::string(who) + ": dataset has unlabeled images");
    out.push_back(*img.label);
  }
  return out;
}

namespace detail {

template <typename T>
struct SoftmaxClassifier {
  Matrix<T> w;  // D x classes
  Matrix<T> b;  // 1 x classes
};

template <typename T>
int classify_row(const SoftmaxClassifier<T>& clf, const T* feat, int d) {
  int best = 0;
  T best_v = T(0);
  for (int k = 0; k < clf.w.cols; ++k) {
    T v = clf.b.data[k];
    for (int j = 0; j < d; ++j) v += feat[j] * clf.w(j, k);
    if (k == 0 || v > best_v) {
      best_v = v;
      best = k;
    }
  }
  return best;
}

// Softmax CE on one feature row; returns loss and d_logits (1 x classes).
template <typename T>
T ce_forward_backward(const SoftmaxClassifier<T>& clf, const T* feat, int d, int label,
                      Matrix<T>& d_logits) {
  Matrix<T> logits(1, clf.w.cols);
  for (int k = 0; k < clf.w.cols; ++k) {
    T v = clf.b.data[k];
    for (int j = 0; j < d; ++j) v += feat[j] * clf.w(j, k);
    logits(0, k) = v;
  }
  const Matrix<T> logq = log_softmax_rows(logits);
  d_logits = Matrix<T>(1, clf.w.cols);
  for (int k = 0; k < clf.w.cols; ++k)
    d_logits(0, k) = std::exp(logq(0, k)) - (k == label ? T(1) : T(0));
  return -logq(0, label);
}

}  // namespace detail

// Trains a linear softmax classifier on fixed feature rows; reports the
// best test top-1 across epochs. Exposed separately so sanity features can
// be injected in tests.
template <typename T>
MetricsRow train_linear_classifier(const Matrix<T>& train_x, const std::vector<int>& train_y,
                                   const Matrix<T>& test_x, const std::vector<int>& test_y,
                                   int classes, int epochs, double lr, uint64_t seed) {
  const int d = train_x.cols;
  const int n = train_x.rows;
  Rng rng(mix_seed(seed, 0x70726f6265ULL));
  detail::SoftmaxClassifier<T> clf{Matrix<T>(d, classes), Matrix<T>(1, classes)};
  for (auto& v : clf.w.data) v = static_cast<T>(rng.trunc_normal(0.02));
  Matrix<T> mw(d, classes), vw(d, classes), mb(1, classes), vb(1, classes);
  int64_t t = 0;

  MetricsRow best;
  best.mode = "probe";
  best.top1 = -1.0;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  constexpr int kBatch = 64;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    for (int lo = 0; lo < n; lo += kBatch) {
      const int hi = std::min(n, lo + kBatch);
      Matrix<T> dw(d, classes), db(1, classes);
      for (int i = lo; i < hi; ++i) {
        const T* feat = train_x.row(order[i]);
        Matrix<T> d_logits;
        detail::ce_forward_backward(clf, feat, d, train_y[order[i]], d_logits);
        const T inv = T(1) / static_cast<T>(hi - lo);
        for (int k = 0; k < classes; ++k) {
          const T g = d_logits(0, k) * inv;
          db.data[k] += g;
          for (int j = 0; j < d; ++j) dw(j, k) += feat[j] * g;
        }
      }
      ++t;
      adam_update_tensor(clf.w, dw, mw, vw, t, static_cast<T>(lr), T(0.9), T(0.999),
                         T(1e-8), T(0));
      adam_update_tensor(clf.b, db, mb, vb, t, static_cast<T>(lr), T(0.9), T(0.999),
                         T(1e-8), T(0));
    }
    // test metrics
    std::vector<int> pred(test_x.rows);
    double test_loss = 0.0;
    for (int i = 0; i < test_x.rows; ++i) {
      pred[i] = detail::classify_row(clf, test_x.row(i), d);
      Matrix<T> unused;
      test_loss += static_cast<double>(
          detail::ce_forward_backward(clf, test_x.row(i), d, test_y[i], unused));
    }
    const double top1 = top1_accuracy(pred, test_y);
    if (top1 > best.top1) {
      best.top1 = top1;
      best.epoch = epoch;
      best.loss = test_loss / test_x.rows;
    }
  }
  return best;
}

// Linear probing: the encoder stays frozen (const), the MIM head is unused,
// and only a linear layer on mean-pooled features is trained.
template <typename T>
MetricsRow linear_probe(const ModelParams<T>& params, const Dataset& ds, int epochs,
                        double lr, uint64_t seed) {
  const std::vector<int> train_y = labels_of<T>(ds.train, "linear_probe");
  const std::vector<int> test_y = labels_of<T>(ds.test, "linear_probe");
  const Matrix<T> train_x = pooled_features(params, ds.train);
  const Matrix<T> test_x = pooled_features(params, ds.test);
  return train_linear_classifier(train_x, train_y, test_x, test_y, ds.classes, epochs, lr,
                                 seed);
}

inline int steps_per_epoch_eval(int n, int batch) { return (n + batch - 1) / batch; }

struct FinetuneOptions {
  int epochs = 20;
  int batch_size = 32;
  double peak_lr = 1e-3;
  double min_lr = 1e-6;
  int warmup_epochs = 2;
  double layer_decay = 0.65;
  double weight_decay = 0.05;
  uint64_t seed = 1;

  static FinetuneOptions from_config(const TrainConfig& cfg) {
    FinetuneOptions o;
    o.epochs = cfg.finetune_epochs;
    o.batch_size = cfg.batch_size;
    o.peak_lr = cfg.finetune_peak_lr;
    o.min_lr = cfg.finetune_min_lr;
    o.warmup_epochs = cfg.finetune_warmup_epochs;
    o.layer_decay = cfg.finetune_layer_decay;
    o.weight_decay = cfg.finetune_weight_decay;
    o.seed = cfg.seed;
    return o;
  }
};

// Full fine-tuning: every encoder parameter is trainable with layer-wise
// learning-rate decay; the MIM head is dropped (frozen); a linear classifier
// on mean-pooled features is trained jointly.
template <typename T>
MetricsRow fine_tune(ModelParams<T>& params, const Dataset& ds, const FinetuneOptions& opt) {
  const std::vector<int> train_y = labels_of<T>(ds.train, "fine_tune");
  const std::vector<int> test_y = labels_of<T>(ds.test, "fine_tune");
  const Arch& arch = params.arch;
  const int n = static_cast<int>(ds.train.size());
  const int d = arch.dim;
  Rng rng(mix_seed(opt.seed, 0x66696e65ULL));

  detail::SoftmaxClassifier<T> clf{Matrix<T>(d, ds.classes), Matrix<T>(1, ds.classes)};
  for (auto& v : clf.w.data) v = static_cast<T>(rng.trunc_normal(0.02));
  Matrix<T> mw(d, ds.classes), vw(d, ds.classes), mb(1, ds.classes), vb(1, ds.classes);

  AdamState<T> opt_state = make_adam_state(params);
  const int spe = steps_per_epoch_eval(n, opt.batch_size);
  LrSchedule schedule;
  schedule.peak = opt.peak_lr;
  schedule.min = opt.min_lr;
  schedule.warmup_steps = static_cast<int64_t>(opt.warmup_epochs) * spe;
  schedule.total_steps = static_cast<int64_t>(opt.epochs) * spe;
  AdamHyper hp{0.9, 0.999, 1e-8, opt.weight_decay};
  auto lr_scale = [&](const std::string& name) {
    if (name.rfind("head.", 0) == 0) return -1.0;  // MIM head dropped
    return layer_lr_multiplier(name, arch.layers, opt.layer_decay);
  };

  MetricsRow best;
  best.mode = "finetune";
  best.top1 = -1.0;
  int64_t step = 0;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    for (int lo = 0; lo < n; lo += opt.batch_size) {
      const int hi = std::min(n, lo + opt.batch_size);
      ModelParams<T> grads = zeros_like(params);
      Matrix<T> dw(d, ds.classes), db(1, ds.classes);
      const T inv_b = T(1) / static_cast<T>(hi - lo);
      for (int bi = lo; bi < hi; ++bi) {
        const Image aug = augment_train(ds.train[order[bi]], rng);
        const PatchGrid pg = patchify(aug, arch.patch);
        const Matrix<T> pm = pg.patches.template cast<T>();
        const ForwardCache<T> cache = vit_forward(params, embed_patches(params, pm, nullptr));
        const int rows = cache.features.rows;
        Matrix<T> pooled(1, d);
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) pooled.data[j] += cache.features(r, j);
        scale_inplace(pooled, T(1) / static_cast<T>(rows));

        Matrix<T> d_logits;
        detail::ce_forward_backward(clf, pooled.row(0), d, train_y[order[bi]], d_logits);
        scale_inplace(d_logits, inv_b);
        for (int k = 0; k < ds.classes; ++k) {
          db.data[k] += d_logits(0, k);
          for (int j = 0; j < d; ++j) dw(j, k) += pooled.data[j] * d_logits(0, k);
        }
        Matrix<T> d_pool(1, d);
        for (int k = 0; k < ds.classes; ++k)
          for (int j = 0; j < d; ++j) d_pool.data[j] += d_logits(0, k) * clf.w(j, k);
        Matrix<T> d_features(rows, d);
        const T inv_rows = T(1) / static_cast<T>(rows);
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) d_features(r, j) = d_pool.data[j] * inv_rows;
        const Matrix<T> d_input =
            vit_backward(params, cache, nullptr, &d_features, grads);
        embed_backward(params, pm, nullptr, d_input, grads);
      }
      const double lr = schedule.at(step);
      adamw_update(params, grads, opt_state, lr, hp, lr_scale);
      ++step;
      adam_update_tensor(clf.w, dw, mw, vw, step, static_cast<T>(lr), T(0.9), T(0.999),
                         T(1e-8), static_cast<T>(opt.weight_decay));
      adam_update_tensor(clf.b, db, mb, vb, step, static_cast<T>(lr), T(0.9), T(0.999),
                         T(1e-8), T(0));
    }
    // test metrics on clean images
    const Matrix<T> test_x = pooled_features(params, ds.test);
    std::vector<int> pred(test_x.rows);
    double test_loss = 0.0;
    for (int i = 0; i < test_x.rows; ++i) {
      pred[i] = detail::classify_row(clf, test_x.row(i), d);
      Matrix<T> unused;
      test_loss += static_cast<double>(
          detail::ce_forward_backward(clf, test_x.row(i), d, test_y[i], unused));
    }
    const double top1 = top1_accuracy(pred, test_y);
    if (top1 > best.top1) {
      best.top1 = top1;
      best.epoch = epoch;
      best.loss = test_loss / test_x.rows;
    }
  }
  return best;
}

}  // namespace mcmim
