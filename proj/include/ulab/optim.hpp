// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>

#include "ulab/errors.hpp"

namespace ulab {

/// Linear warmup to `peak_lr` over `warmup_steps`, then linear decay to zero
/// at `total_steps`.
struct Schedule {
  double peak_lr = 3e-3;
  long total_steps = 1;
  long warmup_steps = 0;

  double lr_at(long step) const {
    if (step < 0 || step > total_steps) {
      throw InputError("schedule step " + std::to_string(step) + " outside [0, " +
                       std::to_string(total_steps) + "]");
    }
    if (warmup_steps > 0 && step <= warmup_steps) {
      return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return 0.0;
    return peak_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup_steps);
  }
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Moments share the parameter layout.
template <typename Vector>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const AdamWConfig& cfg, Eigen::Index n)
      : cfg_(cfg), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

  void step(Vector& params, const Vector& grad, double lr) {
    using S = typename Vector::Scalar;
    ++t_;
    if (lr == 0.0) {
      m_ = S(cfg_.beta1) * m_ + S(1 - cfg_.beta1) * grad;
      v_ = S(cfg_.beta2) * v_ + S(1 - cfg_.beta2) * grad.cwiseAbs2();
      return;
    }
    m_ = S(cfg_.beta1) * m_ + S(1 - cfg_.beta1) * grad;
    v_ = S(cfg_.beta2) * v_ + S(1 - cfg_.beta2) * grad.cwiseAbs2();
    const S bc1 = S(1) - S(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const S bc2 = S(1) - S(std::pow(cfg_.beta2, static_cast<double>(t_)));
    const S step = S(lr);
    params.array() -= step * ((m_.array() / bc1) / ((v_.array() / bc2).sqrt() + S(cfg_.eps)) +
                              S(cfg_.weight_decay) * params.array());
  }

  const AdamWConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }

  /// Restores a saved state (checkpoint resume).
  void restore(long t, Vector m, Vector v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  Vector m_, v_;
};

}  // namespace ulab
