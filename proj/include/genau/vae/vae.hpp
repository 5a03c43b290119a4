#pragma once

// 1D-convolutional VAE over log-mel spectrograms. Mel bins are the channels
// of a 1D signal over time; three stride-2 stages give an 8x shorter latent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "genau/audio/mel.hpp"
#include "genau/core/checkpoint.hpp"
#include "genau/core/nn.hpp"
#include "genau/core/optim.hpp"

namespace genau::vae {

using checkpoint::json;

struct VaeConfig {
  std::size_t in_channels = 64;
  std::size_t bottleneck = 64;
  // One entry per stride-2 stage; the first is also the conv_in width.
  std::vector<std::size_t> hidden{64, 96, 128};
  double kl_weight = 1e-6;
  double logvar_min = -30.0;
  double logvar_max = 20.0;
  double logvar_init = -6.0;
  // Fixed affine map applied to log-mel input: (x - shift) / scale. The
  // decoder output is mapped back, so reconstructions are in log-mel units.
  double input_shift = -5.0;
  double input_scale = 4.0;

  std::size_t downsample() const { return std::size_t{1} << hidden.size(); }

  void validate() const {
    if (in_channels == 0 || bottleneck == 0) throw ConfigError("vae channels must be positive");
    if (hidden.empty()) throw ConfigError("vae.hidden needs at least one stage");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("vae.hidden widths must be positive");
    if (kl_weight < 0) throw ConfigError("vae.kl_weight must be non-negative");
    if (!(logvar_min < logvar_max)) throw ConfigError("vae logvar clamp is empty");
    if (!(input_scale > 0)) throw ConfigError("vae.input_scale must be positive");
  }

  json to_json() const {
    return {{"in_channels", in_channels}, {"bottleneck", bottleneck}, {"hidden", hidden},
            {"kl_weight", kl_weight},     {"logvar_min", logvar_min}, {"logvar_max", logvar_max}, {"logvar_init", logvar_init},
            {"input_shift", input_shift}, {"input_scale", input_scale}};
  }
  static VaeConfig from_json(const json& j) {
    VaeConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.bottleneck = j.at("bottleneck").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.kl_weight = j.at("kl_weight").get<double>();
    c.logvar_min = j.at("logvar_min").get<double>();
    c.logvar_max = j.at("logvar_max").get<double>();
    c.logvar_init = j.value("logvar_init", c.logvar_init);
    c.input_shift = j.at("input_shift").get<double>();
    c.input_scale = j.at("input_scale").get<double>();
    c.validate();
    return c;
  }
};

// Channels-first view of a mel spectrogram: [n_mels, T].
inline Tensor<float> mel_channels(const audio::MelSpectrogram& mel) { return transpose_last(mel.frames); }

template <class T>
struct Posterior {
  Var<T> mean;    // [c, L/8] or [B, c, L/8]
  Var<T> logvar;  // same shape, clamped
};

template <class T>
struct VaeLoss {
  Var<T> total, recon, kl;
};

template <class T>
class Vae {
 public:
  Vae() = default;
  Vae(VaeConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& h = cfg_.hidden;
    const double g = std::sqrt(2.0);
    enc_in_ = nn::Conv1d<T>("vae.enc.in", cfg_.in_channels, h[0], 3, 1, 1, rng, g);
    for (std::size_t i = 0; i < h.size(); ++i) {
      const std::size_t from = h[i == 0 ? 0 : i - 1];
      enc_down_.emplace_back("vae.enc.down" + std::to_string(i), from, h[i], 4, 2, 1, rng, g);
      enc_mix_.emplace_back("vae.enc.mix" + std::to_string(i), h[i], h[i], 3, 1, 1, rng, g);
    }
    enc_out_ = nn::Conv1d<T>("vae.enc.out", h.back(), 2 * cfg_.bottleneck, 3, 1, 1, rng, 0.5);
    // Start with a narrow posterior; with a tiny KL weight the optimum is
    // narrow anyway and unit variance would drown the mean early on.
    for (std::size_t c = cfg_.bottleneck; c < 2 * cfg_.bottleneck; ++c)
      enc_out_.bias().value[c] = static_cast<T>(cfg_.logvar_init);
    dec_in_ = nn::Conv1d<T>("vae.dec.in", cfg_.bottleneck, h.back(), 3, 1, 1, rng, g);
    for (std::size_t j = h.size(); j-- > 0;) {
      const std::size_t to = h[j == 0 ? 0 : j - 1];
      dec_mix_.emplace_back("vae.dec.mix" + std::to_string(j), h[j], h[j], 3, 1, 1, rng, g);
      dec_up_.emplace_back("vae.dec.up" + std::to_string(j), h[j], to, 3, 1, 1, rng, g);
    }
    dec_out_ = nn::Conv1d<T>("vae.dec.out", h[0], cfg_.in_channels, 3, 1, 1, rng, 0.1);
  }

  const VaeConfig& config() const { return cfg_; }

  // mel: [in_channels, L] or [B, in_channels, L], L divisible by 8.
  Posterior<T> encode(Tape<T>& tape, const Var<T>& mel) {
    check_input(mel.shape(), cfg_.in_channels, "encode", true);
    Var<T> x = ops::scale(ops::add_scalar(mel, static_cast<T>(-cfg_.input_shift)), static_cast<T>(1.0 / cfg_.input_scale));
    x = ops::gelu(enc_in_(tape, x));
    for (std::size_t i = 0; i < enc_down_.size(); ++i) {
      x = ops::gelu(enc_down_[i](tape, x));
      x = ops::add(x, ops::gelu(enc_mix_[i](tape, x)));
    }
    Var<T> h = enc_out_(tape, x);
    const long ch = static_cast<long>(h.rank()) - 2;
    Var<T> mean = ops::slice(h, ch, 0, cfg_.bottleneck);
    Var<T> logvar = ops::clamp(ops::slice(h, ch, cfg_.bottleneck, 2 * cfg_.bottleneck), static_cast<T>(cfg_.logvar_min),
                               static_cast<T>(cfg_.logvar_max));
    return {mean, logvar};
  }

  // z: [c, L/8] or [B, c, L/8] -> log-mel [in_channels, L].
  Var<T> decode(Tape<T>& tape, const Var<T>& z) {
    check_input(z.shape(), cfg_.bottleneck, "decode", false);
    Var<T> x = ops::gelu(dec_in_(tape, z));
    for (std::size_t i = 0; i < dec_up_.size(); ++i) {
      x = ops::add(x, ops::gelu(dec_mix_[i](tape, x)));
      x = ops::gelu(dec_up_[i](tape, ops::upsample_nearest(x, 2)));
    }
    Var<T> y = dec_out_(tape, x);
    return ops::add_scalar(ops::scale(y, static_cast<T>(cfg_.input_scale)), static_cast<T>(cfg_.input_shift));
  }

  void visit(const nn::ParamVisitor<T>& f) {
    enc_in_.visit(f);
    for (std::size_t i = 0; i < enc_down_.size(); ++i) {
      enc_down_[i].visit(f);
      enc_mix_[i].visit(f);
    }
    enc_out_.visit(f);
    dec_in_.visit(f);
    for (std::size_t i = 0; i < dec_up_.size(); ++i) {
      dec_mix_[i].visit(f);
      dec_up_[i].visit(f);
    }
    dec_out_.visit(f);
  }
  auto visitor() {
    return [this](const nn::ParamVisitor<T>& f) { visit(f); };
  }

  // Tape-free conveniences for inference.
  Tensor<T> encode_mean(const Tensor<T>& mel) {
    Tape<T> tape;
    return encode(tape, tape.constant(mel)).mean.value();
  }
  std::pair<Tensor<T>, Tensor<T>> encode_posterior(const Tensor<T>& mel) {
    Tape<T> tape;
    auto p = encode(tape, tape.constant(mel));
    return {p.mean.value(), p.logvar.value()};
  }
  Tensor<T> decode_tensor(const Tensor<T>& z) {
    Tape<T> tape;
    return decode(tape, tape.constant(z)).value();
  }

 private:
  void check_input(const Shape& s, std::size_t channels, const char* what, bool check_div) const {
    if ((s.size() != 2 && s.size() != 3) || s[s.size() - 2] != channels)
      throw DimensionError(std::string("vae ") + what + " expects [" + std::to_string(channels) + ", L] or [B, " +
                           std::to_string(channels) + ", L], got " + shape_str(s));
    if (check_div && s.back() % cfg_.downsample() != 0)
      throw DimensionError(std::string("vae ") + what + ": length " + std::to_string(s.back()) +
                           " is not divisible by " + std::to_string(cfg_.downsample()));
  }

  VaeConfig cfg_;
  nn::Conv1d<T> enc_in_, enc_out_, dec_in_, dec_out_;
  std::vector<nn::Conv1d<T>> enc_down_, enc_mix_, dec_mix_, dec_up_;
};

// z = mean + exp(logvar / 2) * eps, eps ~ N(0, 1).
template <class T>
Var<T> reparameterize(const Var<T>& mean, const Var<T>& logvar, Rng& rng) {
  Tensor<T> eps = rng.normal_tensor<T>(mean.shape());
  Var<T> std_dev = ops::exp(ops::scale(logvar, T(0.5)));
  return ops::add(mean, ops::mul(std_dev, mean.tape().constant(std::move(eps))));
}

template <class T>
Tensor<T> reparameterize(const Tensor<T>& mean, const Tensor<T>& logvar, Rng& rng) {
  Tensor<T> z(mean.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = static_cast<T>(mean[i] + std::exp(0.5 * double(logvar[i])) * rng.normal());
  return z;
}

// recon = L1(mel, mel_hat); kl = 0.5 * mean(exp(logvar) + mean^2 - 1 - logvar).
template <class T>
VaeLoss<T> vae_loss(const Var<T>& mel, const Var<T>& mel_hat, const Var<T>& mean, const Var<T>& logvar, double kl_weight) {
  Var<T> recon = ops::l1_loss(mel_hat, mel);
  Var<T> kl_terms = ops::sub(ops::add(ops::exp(logvar), ops::square(mean)), ops::add_scalar(logvar, T(1)));
  Var<T> kl = ops::scale(ops::mean(kl_terms), T(0.5));
  Var<T> total = ops::add(recon, ops::scale(kl, static_cast<T>(kl_weight)));
  return {total, recon, kl};
}

struct VaeTrainOptions {
  int steps = 500;
  std::size_t batch = 8;
  double lr = 1e-3;
  double grad_clip = 1.0;
  double ema_decay = 0.98;
  std::uint64_t seed = 0;
};

struct VaeStepRecord {
  int step;
  double total, recon, kl, smoothed_recon;
};

struct VaeTrainResult {
  std::vector<VaeStepRecord> history;
  bool diverged = false;
  double final_smoothed_recon() const { return history.empty() ? NAN : history.back().smoothed_recon; }
};

template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items, const std::vector<std::size_t>& idx) {
  const Shape& s = items.at(idx.at(0)).shape();
  Shape bs{idx.size()};
  bs.insert(bs.end(), s.begin(), s.end());
  Tensor<T> out(bs);
  const std::size_t n = numel(s);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& it = items.at(idx[b]);
    if (it.shape() != s) throw DimensionError("batch items differ in shape: " + shape_str(s) + " vs " + shape_str(it.shape()));
    std::copy(it.vec().begin(), it.vec().end(), out.vec().begin() + b * n);
  }
  return out;
}

// Adam on recon + beta * KL. Corpus items are channels-first mels of equal
// length. On a non-finite loss the parameters are rolled back to the last
// good step and training stops.
template <class T>
VaeTrainResult train_vae(Vae<T>& model, const std::vector<Tensor<T>>& corpus, const VaeTrainOptions& opt,
                         const std::function<void(const VaeStepRecord&)>& on_step = {}) {
  if (corpus.empty()) throw ContractError("vae1d", "empty training corpus");
  auto params = optim::collect<T>(model.visitor());
  optim::Adam<T> adam({opt.lr});
  Rng rng(opt.seed);
  optim::Ema ema(opt.ema_decay);
  VaeTrainResult res;
  std::vector<Tensor<T>> last_good;
  for (auto* p : params) last_good.push_back(p->value);
  const std::size_t batch = std::min(opt.batch, corpus.size());
  for (int step = 0; step < opt.steps; ++step) {
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.index(corpus.size());
    Tape<T> tape;
    Var<T> mel = tape.constant(stack_batch(corpus, idx));
    auto post = model.encode(tape, mel);
    Var<T> z = reparameterize(post.mean, post.logvar, rng);
    auto loss = vae_loss(mel, model.decode(tape, z), post.mean, post.logvar, model.config().kl_weight);
    const double total = loss.total.value().item();
    if (!std::isfinite(total)) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = last_good[i];
      res.diverged = true;
      break;
    }
    optim::zero_grad(params);
    tape.backward(loss.total);
    if (!optim::grads_finite(params)) {
      res.diverged = true;
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = last_good[i];
      break;
    }
    for (std::size_t i = 0; i < params.size(); ++i) last_good[i] = params[i]->value;
    optim::clip_grad_norm(params, opt.grad_clip);
    adam.step(params);
    const double recon = loss.recon.value().item();
    VaeStepRecord rec{step, total, recon, loss.kl.value().item(), ema.update(recon)};
    res.history.push_back(rec);
    if (on_step) on_step(rec);
  }
  return res;
}

template <class T>
checkpoint::Checkpoint to_checkpoint(Vae<T>& model) {
  checkpoint::Checkpoint ck;
  ck.meta["kind"] = "vae";
  ck.meta["vae_config"] = model.config().to_json();
  checkpoint::store_parameters<T>(ck, model.visitor());
  return ck;
}

template <class T>
Vae<T> from_checkpoint(const checkpoint::Checkpoint& ck) {
  if (!ck.meta.contains("vae_config")) throw FormatError("checkpoint", "not a VAE checkpoint (no vae_config)");
  Rng rng(0);
  Vae<T> model(VaeConfig::from_json(ck.meta.at("vae_config")), rng);
  checkpoint::load_parameters<T>(ck, model.visitor());
  return model;
}

}  // namespace genau::vae
