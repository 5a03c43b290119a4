#pragma once

// Optimizer plumbing shared by VAE and diffusion training: parameter
// collection, global-norm clipping and Adam. LAMB lives with the diffusion
// trainer.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "genau/core/autograd.hpp"
#include "genau/core/checkpoint.hpp"

namespace genau::optim {

template <class T>
using ParamList = std::vector<Parameter<T>*>;

template <class T, class Visit>
ParamList<T> collect(Visit&& visit) {
  ParamList<T> out;
  visit([&](Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <class T>
void zero_grad(const ParamList<T>& ps) {
  for (auto* p : ps) p->zero_grad();
}

template <class T>
double global_grad_norm(const ParamList<T>& ps) {
  double s = 0;
  for (auto* p : ps)
    for (T g : p->grad.vec()) s += double(g) * double(g);
  return std::sqrt(s);
}

template <class T>
bool grads_finite(const ParamList<T>& ps) {
  for (auto* p : ps)
    if (!p->grad.all_finite()) return false;
  return true;
}

// Scales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <class T>
double clip_grad_norm(const ParamList<T>& ps, double max_norm) {
  const double n = global_grad_norm(ps);
  if (n > max_norm && n > 0) {
    const T f = static_cast<T>(max_norm / n);
    for (auto* p : ps)
      for (T& g : p->grad.vec()) g *= f;
  }
  return n;
}

// First and second moments per parameter plus the step counter; shared by
// Adam and LAMB so both checkpoint the same way.
template <class T>
struct MomentState {
  std::vector<Tensor<T>> m, v;
  long step = 0;

  void ensure(const ParamList<T>& ps) {
    if (m.size() == ps.size()) return;
    m.clear();
    v.clear();
    for (auto* p : ps) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
  }

  void store(checkpoint::Checkpoint& ck, const ParamList<T>& ps, const std::string& prefix) const {
    for (std::size_t i = 0; i < m.size(); ++i) {
      ck.add(prefix + "m." + ps[i]->name, m[i].template cast<float>());
      ck.add(prefix + "v." + ps[i]->name, v[i].template cast<float>());
    }
    ck.meta[prefix + "step"] = step;
  }

  void load(const checkpoint::Checkpoint& ck, const ParamList<T>& ps, const std::string& prefix) {
    ensure(ps);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto& mm = ck.at(prefix + "m." + ps[i]->name);
      const auto& vv = ck.at(prefix + "v." + ps[i]->name);
      if (mm.shape() != m[i].shape() || vv.shape() != v[i].shape())
        throw FormatError("checkpoint", "optimizer moment shape mismatch for '" + ps[i]->name + "'");
      m[i] = mm.template cast<T>();
      v[i] = vv.template cast<T>();
    }
    step = ck.meta.at(prefix + "step").template get<long>();
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const ParamList<T>& ps, double lr) {
    state_.ensure(ps);
    ++state_.step;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(state_.step));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(state_.step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& w = ps[i]->value.vec();
      const auto& g = ps[i]->grad.vec();
      auto& m = state_.m[i].vec();
      auto& v = state_.v[i].vec();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = static_cast<T>(cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g[j]);
        v[j] = static_cast<T>(cfg_.beta2 * v[j] + (1 - cfg_.beta2) * double(g[j]) * g[j]);
        const double mh = m[j] / bc1, vh = v[j] / bc2;
        w[j] = static_cast<T>(w[j] - lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }
  void step(const ParamList<T>& ps) { step(ps, cfg_.lr); }

  MomentState<T>& state() { return state_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  MomentState<T> state_;
};

// Exponential moving average used for "smoothed" loss curves.
class Ema {
 public:
  explicit Ema(double decay = 0.9) : decay_(decay) {}
  double update(double x) {
    value_ = initialized_ ? decay_ * value_ + (1 - decay_) * x : x;
    initialized_ = true;
    return value_;
  }
  double value() const { return value_; }

 private:
  double decay_;
  double value_ = 0;
  bool initialized_ = false;
};

}  // namespace genau::optim
