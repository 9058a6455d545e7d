// SGD with momentum and coupled weight decay, plus the warmup-cosine
// learning-rate schedule used by every training run.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cdsp/autodiff.hpp"

namespace cdsp {

template <class T>
class SgdOptimizer {
 public:
  SgdOptimizer(T lr, T momentum, T weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void add_param(const std::string& name, const Var<T>& p) {
    CDSP_CHECK(p.requires_grad(), "optimizer param '", name, "' does not require grad");
    slots_.push_back({name, p, TensorData<T>::zeros(p.value().shape)});
  }

  // v <- momentum*v + g + wd*p ; p <- p - lr*v
  void step() {
    for (auto& s : slots_) {
      CDSP_CHECK(s.param.has_grad(), "missing gradient for param '", s.name, "'");
      auto& p = s.param.value();
      const auto& g = s.param.grad();
      CDSP_CHECK(s.velocity.same_shape(p), "velocity shape drifted for '", s.name, "'");
      for (int64_t i = 0; i < p.numel(); ++i) {
        s.velocity[i] = momentum_ * s.velocity[i] + g[i] + weight_decay_ * p[i];
        p[i] -= lr_ * s.velocity[i];
      }
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }

  size_t num_params() const { return slots_.size(); }

 private:
  struct Slot {
    std::string name;
    Var<T> param;
    TensorData<T> velocity;
  };
  T lr_, momentum_, weight_decay_;
  std::vector<Slot> slots_;
};

// Linear warmup to base_lr over warmup_steps, then cosine decay to zero over
// the remaining steps. `step` counts from 0; at step == warmup_steps the rate
// is exactly base_lr.
inline double warmup_cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps,
                               double base_lr) {
  CDSP_CHECK(total_steps > 0 && warmup_steps >= 0 && warmup_steps <= total_steps,
             "invalid schedule: total ", total_steps, " warmup ", warmup_steps);
  if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps == warmup_steps) return base_lr;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(t, 1.0)));
}

}  // namespace cdsp
