#pragma once

// Epsilon-prediction training of the FIT denoiser and guided sampling.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "genau/conditioning/conditioning.hpp"
#include "genau/diffusion/lamb.hpp"
#include "genau/diffusion/schedule.hpp"
#include "genau/fit/fit.hpp"

namespace genau::diffusion {

using checkpoint::json;

struct TrainingExample {
  Tensor<float> z0;  // [c, L]
  cond::TextEmbedding text;
  std::size_t dataset_index = 0;
};

struct DiffusionConfig {
  std::size_t timesteps = kDefaultSteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  double p_uncond = 0.1;
  long steps = 2000;
  long warmup = 100;
  std::size_t batch = 8;
  double grad_clip = 1.0;
  double ema_decay = 0.98;
  LambConfig lamb;
  std::uint64_t seed = 0;

  void validate() const {
    if (p_uncond < 0 || p_uncond > 1) throw ConfigError("diffusion.p_uncond must be in [0, 1]");
    if (steps < 0 || warmup < 0) throw ConfigError("diffusion steps and warmup must be non-negative");
    if (batch == 0) throw ConfigError("diffusion.batch must be positive");
    if (!(grad_clip > 0)) throw ConfigError("diffusion.grad_clip must be positive");
    if (!(lamb.lr > 0)) throw ConfigError("diffusion lr must be positive");
  }

  NoiseSchedule schedule() const { return linear_schedule(timesteps, beta_start, beta_end); }

  json to_json() const {
    return {{"timesteps", timesteps}, {"beta_start", beta_start}, {"beta_end", beta_end}, {"p_uncond", p_uncond},
            {"steps", steps},         {"warmup", warmup},         {"batch", batch},       {"grad_clip", grad_clip},
            {"ema_decay", ema_decay}, {"lr", lamb.lr},            {"weight_decay", lamb.weight_decay},
            {"seed", seed}};
  }
};

struct StepRecord {
  long step = 0;
  double loss = 0;
  double smoothed = 0;
  double lr = 0;
  double grad_norm = 0;
  bool skipped = false;
};

// Stacks equally shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  const Shape& s = items.at(0).shape();
  Shape bs{items.size()};
  bs.insert(bs.end(), s.begin(), s.end());
  Tensor<T> out(bs);
  const std::size_t n = numel(s);
  for (std::size_t b = 0; b < items.size(); ++b) {
    if (items[b].shape() != s) throw DimensionError("batch items differ in shape: " + shape_str(s) + " vs " + shape_str(items[b].shape()));
    std::copy(items[b].vec().begin(), items[b].vec().end(), out.vec().begin() + b * n);
  }
  return out;
}

// Mean squared error between predicted and true noise for a batch of z0 at
// the given timesteps. `predict` maps the stacked z_t [B, c, L] to eps_hat.
template <class T, class Predict>
Var<T> epsilon_loss(Predict&& predict, Tape<T>& tape, const NoiseSchedule& sched, const std::vector<Tensor<T>>& z0,
                    const std::vector<std::size_t>& t, const std::vector<Tensor<T>>& eps) {
  std::vector<Tensor<T>> zt;
  for (std::size_t i = 0; i < z0.size(); ++i) zt.push_back(q_sample(z0[i], t[i], eps[i], sched));
  Var<T> target = tape.constant(stack_batch(eps));
  return ops::mse_loss(predict(tape.constant(stack_batch(zt))), target);
}

template <class T>
class DiffusionTrainer {
 public:
  DiffusionTrainer(fit::Fit<T>& model, DiffusionConfig cfg)
      : model_(model), cfg_(std::move(cfg)), sched_(cfg_.schedule()), lamb_(cfg_.lamb), rng_(cfg_.seed),
        ema_(cfg_.ema_decay), params_(optim::collect<T>(model.visitor())) {
    cfg_.validate();
  }

  StepRecord train_step(const std::vector<TrainingExample>& data) {
    if (data.empty()) throw ContractError("diffusion", "empty training set");
    const std::size_t b = std::min(cfg_.batch, data.size());
    const std::size_t null_index = model_.datasets().rows() - 1;
    std::vector<Tensor<T>> z0, eps;
    std::vector<std::size_t> ts;
    std::vector<cond::ConditioningBundle> bundles;
    bundles.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      const auto& ex = data[rng_.index(data.size())];
      const std::size_t t = rng_.index(sched_.size());
      const bool drop = rng_.uniform() < cfg_.p_uncond;
      const auto emb = cond::timestep_embedding(double(t), model_.config().cond_width);
      if (drop)
        bundles.push_back({cond::null_text_embedding(model_.config().cond_width), emb, null_index});
      else
        bundles.push_back({ex.text, emb, ex.dataset_index});
      z0.push_back(ex.z0.template cast<T>());
      eps.push_back(rng_.normal_tensor<T>(ex.z0.shape()));
      ts.push_back(t);
    }
    std::vector<const cond::ConditioningBundle*> ptrs;
    for (const auto& x : bundles) ptrs.push_back(&x);
    Tape<T> tape;
    nn::ForwardContext ctx{true, &rng_};
    auto predict = [&](const Var<T>& z) { return model_.forward(tape, z, ptrs, ctx); };
    Var<T> loss = epsilon_loss(predict, tape, sched_, z0, ts, eps);
    StepRecord rec;
    rec.step = step_;
    rec.loss = double(loss.value().item());
    rec.lr = cosine_lr(cfg_.lamb.lr, step_, cfg_.warmup, cfg_.steps);
    optim::zero_grad(params_);
    tape.backward(loss);
    if (!std::isfinite(rec.loss) || !optim::grads_finite(params_)) {
      rec.skipped = true;
      rec.grad_norm = NAN;
    } else {
      rec.grad_norm = optim::clip_grad_norm(params_, cfg_.grad_clip);
      rec.skipped = !lamb_.step(params_, rec.lr);
    }
    rec.smoothed = rec.skipped ? ema_.value() : ema_.update(rec.loss);
    ++step_;
    return rec;
  }

  void save(checkpoint::Checkpoint& ck) {
    checkpoint::store_parameters<T>(ck, model_.visitor());
    lamb_.state().ensure(params_);
    lamb_.state().store(ck, params_, "opt.");
    ck.meta["kind"] = "fit";
    ck.meta["fit_config"] = model_.config().to_json();
    ck.meta["diffusion_config"] = cfg_.to_json();
    ck.meta["train_step"] = step_;
    ck.meta["rng_state"] = rng_.state();
    ck.meta["loss_ema"] = ema_.value();
  }

  void load(const checkpoint::Checkpoint& ck) {
    checkpoint::load_parameters<T>(ck, model_.visitor());
    lamb_.state().load(ck, params_, "opt.");
    step_ = ck.meta.at("train_step").get<long>();
    rng_.set_state(ck.meta.at("rng_state").get<std::string>());
    ema_ = optim::Ema(cfg_.ema_decay);
    if (step_ > 0) ema_.update(ck.meta.at("loss_ema").get<double>());
  }

  long step() const { return step_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const DiffusionConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }

 private:
  fit::Fit<T>& model_;
  DiffusionConfig cfg_;
  NoiseSchedule sched_;
  Lamb<T> lamb_;
  Rng rng_;
  optim::Ema ema_;
  optim::ParamList<T> params_;
  long step_ = 0;
};

struct SampleOptions {
  double cfg_scale = 3.0;
  std::size_t steps = 200;
  bool ddim = false;
};

// Reverse chain from N(0, I) over respaced timesteps with classifier-free
// guidance. Returns a latent [c, length].
template <class T>
Tensor<T> sample(fit::Fit<T>& model, const NoiseSchedule& sched, const cond::TextEmbedding& text,
                 std::size_t dataset_index, std::size_t length, const SampleOptions& opt, Rng& rng) {
  const std::size_t c = model.config().latent_channels, d = model.config().cond_width;
  const std::size_t null_index = model.datasets().rows() - 1;
  const auto ts = respaced_timesteps(sched.size(), opt.steps);
  Tensor<T> z = rng.normal_tensor<T>(Shape{c, length});
  const auto null_text = cond::null_text_embedding(d);
  for (std::size_t i = ts.size(); i-- > 0;) {
    const std::size_t t = ts[i];
    const auto emb = cond::timestep_embedding(double(t), d);
    const cond::ConditioningBundle cb{text, emb, dataset_index};
    Tensor<T> eps;
    if (opt.cfg_scale == 1.0) {
      eps = model.predict(z, cb);
    } else {
      const cond::ConditioningBundle ub{null_text, emb, null_index};
      Tape<T> tape;
      Var<T> zz = tape.constant(stack_batch<T>({z, z}));
      Tensor<T> both = model.forward(tape, zz, {&cb, &ub}).value();
      const std::size_t n = z.size();
      Tensor<T> ec(z.shape(), std::vector<T>(both.vec().begin(), both.vec().begin() + n));
      Tensor<T> eu(z.shape(), std::vector<T>(both.vec().begin() + n, both.vec().end()));
      eps = guide(eu, ec, opt.cfg_scale);
    }
    const double ab_t = sched.alpha_bars[t];
    const double ab_prev = i == 0 ? 1.0 : sched.alpha_bars[ts[i - 1]];
    z = opt.ddim ? ddim_step_between(z, eps, ab_t, ab_prev) : ddpm_step_between(z, eps, ab_t, ab_prev, &rng);
  }
  return z;
}

}  // namespace genau::diffusion
