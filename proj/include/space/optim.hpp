#pragma once

#include <cmath>
#include <vector>

#include "space/autodiff.hpp"
#include "space/networks.hpp"

namespace space {

// Adam with decoupled weight decay; each group carries its own decay rate.
template <typename T>
class AdamW {
 public:
  struct Group {
    std::vector<Var<T>> params;
    double weight_decay = 0;
  };

  AdamW(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add_group(const NamedParams<T>& params, double weight_decay) {
    Group g;
    g.weight_decay = weight_decay;
    for (const auto& [name, v] : params) g.params.push_back(v);
    State s;
    for (const auto& v : g.params) {
      s.m.emplace_back(v.value().size(), 0.0);
      s.v.emplace_back(v.value().size(), 0.0);
    }
    groups_.push_back(std::move(g));
    states_.push_back(std::move(s));
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      auto& g = groups_[gi];
      auto& st = states_[gi];
      for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
        Var<T>& p = g.params[pi];
        const Tensor<T> grad = p.grad();
        Tensor<T>& w = p.mutable_value();
        auto& m = st.m[pi];
        auto& v = st.v[pi];
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gr = grad[i];
          m[i] = beta1_ * m[i] + (1 - beta1_) * gr;
          v[i] = beta2_ * v[i] + (1 - beta2_) * gr * gr;
          const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
          const double decayed = static_cast<double>(w[i]) * (1 - lr_ * g.weight_decay);
          w[i] = static_cast<T>(decayed - lr_ * update);
        }
      }
    }
  }

  long steps() const { return t_; }

 private:
  struct State {
    std::vector<std::vector<double>> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Group> groups_;
  std::vector<State> states_;
};

}  // namespace space
