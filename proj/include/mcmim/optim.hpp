#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mcmim/matrix.hpp"
#include "mcmim/vit.hpp"

namespace mcmim {

// Cosine decay with linear warmup: 0 at step 0, peak at the end of warmup,
// min at the final step.
struct LrSchedule {
  double peak = 1e-3;
  double min = 1e-5;
  int64_t warmup_steps = 0;
  int64_t total_steps = 1;

  double at(int64_t step) const {
    if (warmup_steps > 0 && step <= warmup_steps)
      return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const int64_t last = total_steps - 1;
    if (step >= last) return min;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(last - warmup_steps);
    return min + 0.5 * (peak - min) * (1.0 + std::cos(M_PI * progress));
  }
};

template <typename T>
struct AdamState {
  ModelParams<T> m, v;
  int64_t step = 0;  // updates applied so far
};

template <typename T>
AdamState<T> make_adam_state(const ModelParams<T>& p) {
  return AdamState<T>{zeros_like(p), zeros_like(p), 0};
}

// Global-norm gradient clipping over every tensor; returns the pre-clip norm.
template <typename T>
double clip_global_norm(ModelParams<T>& grads, double max_norm) {
  double sq = 0.0;
  for_each_tensor(grads, [&](const std::string&, const Matrix<T>& g, bool) {
    for (T v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for_each_tensor(grads, [&](const std::string&, Matrix<T>& g, bool) {
      for (T& v : g.data) v *= s;
    });
  }
  return norm;
}

template <typename T>
void adam_update_tensor(Matrix<T>& w, const Matrix<T>& g, Matrix<T>& m, Matrix<T>& v,
                        int64_t t, T lr, T beta1, T beta2, T eps, T wd) {
  const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
  const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
  for (size_t i = 0; i < w.data.size(); ++i) {
    m.data[i] = beta1 * m.data[i] + (T(1) - beta1) * g.data[i];
    v.data[i] = beta2 * v.data[i] + (T(1) - beta2) * g.data[i] * g.data[i];
    const T mhat = m.data[i] / bc1;
    const T vhat = v.data[i] / bc2;
    w.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w.data[i]);
  }
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Decoupled-weight-decay Adam over all model tensors. `lr_scale(name)`
// returns a per-tensor learning-rate multiplier; a negative value skips
// the tensor entirely (used to freeze the MIM head during fine-tuning).
template <typename T, typename ScaleFn>
void adamw_update(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& st,
                  double lr, const AdamHyper& hp, ScaleFn&& lr_scale) {
  ++st.step;
  std::vector<Matrix<T>*> pw, pm, pv;
  std::vector<const Matrix<T>*> pg;
  std::vector<std::string> names;
  std::vector<bool> decays;
  for_each_tensor(params, [&](const std::string& n, Matrix<T>& t, bool d) {
    names.push_back(n);
    pw.push_back(&t);
    decays.push_back(d);
  });
  for_each_tensor(grads, [&](const std::string&, const Matrix<T>& t, bool) { pg.push_back(&t); });
  for_each_tensor(st.m, [&](const std::string&, Matrix<T>& t, bool) { pm.push_back(&t); });
  for_each_tensor(st.v, [&](const std::string&, Matrix<T>& t, bool) { pv.push_back(&t); });
  for (size_t i = 0; i < pw.size(); ++i) {
    const double scale = lr_scale(names[i]);
    if (scale < 0.0) continue;
    const T wd = decays[i] ? static_cast<T>(hp.weight_decay) : T(0);
    adam_update_tensor(*pw[i], *pg[i], *pm[i], *pv[i], st.step,
                       static_cast<T>(lr * scale), static_cast<T>(hp.beta1),
                       static_cast<T>(hp.beta2), static_cast<T>(hp.eps), wd);
  }
}

template <typename T>
void adamw_update(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& st,
                  double lr, const AdamHyper& hp) {
  adamw_update(params, grads, st, lr, hp, [](const std::string&) { return 1.0; });
}

// Fine-tuning layer-wise learning-rate multipliers: decay^(L - l) with the
// input embedding at l=0, transformer layer i at l=i+1, and everything
// after the last layer at l=L.
inline double layer_lr_multiplier(const std::string& name, int num_layers, double decay) {
  int level = num_layers;
  if (name.rfind("patch_embed", 0) == 0 || name == "pos_embed" || name == "mask_token") {
    level = 0;
  } else if (name.rfind("layers.", 0) == 0) {
    const size_t dot = name.find('.', 7);
    level = std::stoi(name.substr(7, dot - 7)) + 1;
  }
  return std::pow(decay, num_layers - level);
}

}  // namespace mcmim
