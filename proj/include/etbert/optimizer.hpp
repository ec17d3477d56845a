#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "etbert/common.hpp"
#include "etbert/errors.hpp"
#include "etbert/model.hpp"
#include "etbert/tensor.hpp"

namespace etbert {

struct AdamWConfig {
  double lr = 1e-3;  // peak; the schedule scales it
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled, skipped for bias and layer-norm params
};

// Linear warmup to the peak then linear decay to zero; step is 1-based.
inline double scheduled_lr(double peak, int64_t step, int64_t total_steps, double warmup_ratio) {
  int64_t warmup = std::max<int64_t>(1, int64_t(std::llround(warmup_ratio * double(total_steps))));
  if (step <= warmup) return peak * double(step) / double(warmup);
  if (total_steps <= warmup) return peak;
  return peak * double(total_steps - step) / double(total_steps - warmup);
}

template <class T>
class AdamW {
public:
  AdamWConfig cfg;
  int64_t step_count = 0;
  std::vector<Tensor<T>> m, v;  // aligned with param_refs order

  void attach(Weights<T>& w) {
    auto refs = param_refs(w);
    m.clear();
    v.clear();
    for (auto& r : refs) {
      m.push_back(Tensor<T>(r.t->shape));
      v.push_back(Tensor<T>(r.t->shape));
    }
  }

  // One update with grads shaped like the weights (dense token table).
  void step(Weights<T>& w, Weights<T>& g, double lr_now) {
    auto wr = param_refs(w);
    auto gr = param_refs(g);
    if (wr.size() != gr.size() || wr.size() != m.size())
      throw InternalError("optimizer state misaligned with parameters");
    step_count++;
    double bc1 = 1.0 - std::pow(cfg.beta1, double(step_count));
    double bc2 = 1.0 - std::pow(cfg.beta2, double(step_count));
    for (size_t pi = 0; pi < wr.size(); pi++) {
      Tensor<T>& wt = *wr[pi].t;
      Tensor<T>& gt = *gr[pi].t;
      Tensor<T>& mt = m[pi];
      Tensor<T>& vt = v[pi];
      if (wt.numel() != gt.numel()) throw InternalError("gradient shape mismatch");
      bool decay = wr[pi].decay;
      T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
      size_t n = wt.numel();
      parallel_for(n, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; i++) {
          T gv = gt.v[i];
          mt.v[i] = b1 * mt.v[i] + (T(1) - b1) * gv;
          vt.v[i] = b2 * vt.v[i] + (T(1) - b2) * gv * gv;
          double mhat = double(mt.v[i]) / bc1;
          double vhat = double(vt.v[i]) / bc2;
          double upd = mhat / (std::sqrt(vhat) + cfg.eps);
          if (decay) upd += cfg.weight_decay * double(wt.v[i]);
          wt.v[i] = T(double(wt.v[i]) - lr_now * upd);
        }
      });
    }
  }
};

}  // namespace etbert
