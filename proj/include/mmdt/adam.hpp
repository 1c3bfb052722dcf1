#pragma once

#include <cmath>
#include <vector>

#include "mmdt/autograd.hpp"

namespace mmdt {

/// Adam with decoupled weight decay. Parameters without an accumulated gradient are
/// treated as having a zero gradient.
template <typename S>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam(std::vector<Var<S>> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.push_back(VecX<S>::Zero(p.value().size()));
      v_.push_back(VecX<S>::Zero(p.value().size()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(opts_.beta1), b2 = static_cast<S>(opts_.beta2);
    const S step = static_cast<S>(opts_.lr / bc1);
    const S inv_bc2 = static_cast<S>(1.0 / bc2);
    const S eps = static_cast<S>(opts_.eps);
    const S decay = static_cast<S>(opts_.lr * opts_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto& w = p.mutable_value().flat();
      if (decay != S(0)) w -= decay * w;
      if (!p.has_grad()) {
        m_[i] *= b1;
        v_[i] *= b2;
      } else {
        const auto& g = p.grad().flat();
        m_[i] = b1 * m_[i] + (S(1) - b1) * g;
        v_[i] = b2 * v_[i] + (S(1) - b2) * g.cwiseProduct(g);
      }
      w.array() -= step * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void set_lr(double lr) { opts_.lr = lr; }
  long steps() const noexcept { return t_; }

 private:
  std::vector<Var<S>> params_;
  Options opts_;
  std::vector<VecX<S>> m_, v_;
  long t_ = 0;
};

}  // namespace mmdt
