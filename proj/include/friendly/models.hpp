#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "friendly/adam.hpp"
#include "friendly/params.hpp"
#include "friendly/rng.hpp"
#include "friendly/tape.hpp"
#include "friendly/tensor.hpp"

namespace friendly {

enum class ClassifierKind { toy_2d, fc_a, fc_b, cnn_a };

inline const char* classifier_kind_name(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::toy_2d: return "toy_2d";
    case ClassifierKind::fc_a: return "fc_a";
    case ClassifierKind::fc_b: return "fc_b";
    case ClassifierKind::cnn_a: return "cnn_a";
  }
  return "?";
}

inline ClassifierKind classifier_kind_from(const std::string& s) {
  if (s == "toy_2d") return ClassifierKind::toy_2d;
  if (s == "fc_a") return ClassifierKind::fc_a;
  if (s == "fc_b") return ClassifierKind::fc_b;
  if (s == "cnn_a") return ClassifierKind::cnn_a;
  throw Error("unknown classifier kind: " + s);
}

inline std::size_t scaled_width(double base, double sigma) {
  const long w = std::lround(base * sigma);
  return w < 1 ? 1 : static_cast<std::size_t>(w);
}

struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::toy_2d;
  std::size_t input_dim = 2;  // flattened; cnn_a derives it from channels*h*w
  std::size_t channels = 1, height = 0, width = 0;
  int class_count = 2;
  std::vector<std::size_t> hidden;  // optional width override for fc kinds
  double sigma = 1.0;

  void validate() const {
    if (class_count < 2) throw Error("classifier: class_count must be >= 2");
    if (sigma <= 0.0 || sigma > 1.0) throw Error("classifier: sigma must be in (0,1]");
    if (kind == ClassifierKind::cnn_a) {
      if (channels < 1 || height < 5 || width < 5)
        throw Error("classifier: cnn_a needs channels>=1 and spatial dims >= 5");
    } else if (input_dim < 1) {
      throw Error("classifier: input_dim must be positive");
    }
  }

  std::size_t flat_dim() const {
    return kind == ClassifierKind::cnn_a ? channels * height * width : input_dim;
  }

  std::vector<std::size_t> hidden_widths() const {
    if (!hidden.empty()) return hidden;
    switch (kind) {
      case ClassifierKind::toy_2d: return {5};
      case ClassifierKind::fc_a: return {scaled_width(10, sigma)};
      case ClassifierKind::fc_b:
        return {scaled_width(2500, sigma), scaled_width(2000, sigma),
                scaled_width(1500, sigma), scaled_width(1000, sigma),
                scaled_width(500, sigma)};
      case ClassifierKind::cnn_a: return {scaled_width(128, sigma)};
    }
    return {};
  }
};

/// Execution context for one forward build: train/eval mode, whether
/// batchnorm running stats may be advanced, and the dropout stream key.
struct ForwardCtx {
  bool train = false;
  bool update_bn_running = false;
  std::uint64_t dropout_key = 0;
};

namespace detail {

template <class Real>
Tensor<Real> glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                            std::size_t fan_out, Rng& rng) {
  Tensor<Real> t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Real& v : t.data) v = static_cast<Real>(rng.uniform(-limit, limit));
  return t;
}

template <class Real>
void add_linear(ParamStore<Real>& ps, const std::string& prefix, std::size_t in,
                std::size_t out, Rng& rng, bool zero_init = false) {
  if (zero_init) {
    ps.add(prefix + ".w", Tensor<Real>::zeros({in, out}));
  } else {
    ps.add(prefix + ".w", glorot_uniform<Real>({in, out}, in, out, rng));
  }
  ps.add(prefix + ".b", Tensor<Real>::zeros({out}));
}

template <class Real>
void add_conv(ParamStore<Real>& ps, const std::string& prefix, std::size_t cin,
              std::size_t cout, std::size_t k, Rng& rng, bool zero_init = false) {
  if (zero_init) {
    ps.add(prefix + ".k", Tensor<Real>::zeros({cout, cin, k, k}));
  } else {
    ps.add(prefix + ".k",
           glorot_uniform<Real>({cout, cin, k, k}, cin * k * k, cout * k * k, rng));
  }
  ps.add(prefix + ".b", Tensor<Real>::zeros({cout}));
}

template <class Real>
void add_batchnorm(ParamStore<Real>& ps, const std::string& prefix, std::size_t n) {
  ps.add(prefix + ".gamma", Tensor<Real>::full({n}, Real(1)));
  ps.add(prefix + ".beta", Tensor<Real>::zeros({n}));
  ps.add(prefix + ".run_mean", Tensor<Real>::zeros({n}), /*trainable=*/false);
  ps.add(prefix + ".run_var", Tensor<Real>::full({n}, Real(1)), /*trainable=*/false);
}

template <class Real>
int linear(Tape<Real>& tape, int x, const ParamBinding<Real>& pb,
           const std::string& prefix) {
  return tape.add(tape.matmul(x, pb.var(prefix + ".w")), pb.var(prefix + ".b"));
}

}  // namespace detail

/// The classifier f(x, w). Batches travel as flat [b×d]; cnn_a reshapes
/// internally. Eval mode is a pure function of (x, w).
template <class Real>
class Classifier {
 public:
  Classifier(ClassifierSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng = stream(seed, {stream_tag::kInit});
    build(rng);
  }

  const ClassifierSpec& spec() const { return spec_; }
  ParamStore<Real>& params() { return params_; }
  const ParamStore<Real>& params() const { return params_; }

  int forward(Tape<Real>& tape, int x, const ParamBinding<Real>& pb,
              const ForwardCtx& ctx) const {
    switch (spec_.kind) {
      case ClassifierKind::toy_2d:
      case ClassifierKind::fc_a: {
        int h = tape.tanh_fn(detail::linear(tape, x, pb, "fc1"));
        return detail::linear(tape, h, pb, "out");
      }
      case ClassifierKind::fc_b: {
        int h = x;
        const auto widths = spec_.hidden_widths();
        for (std::size_t i = 0; i < widths.size(); ++i) {
          const std::string p = "fc" + std::to_string(i + 1);
          h = detail::linear(tape, h, pb, p);
          h = tape.batchnorm1d(h, pb.var(p + ".bn.gamma"), pb.var(p + ".bn.beta"),
                               &pb.store->get(p + ".bn.run_mean"),
                               &pb.store->get(p + ".bn.run_var"), ctx.train,
                               ctx.update_bn_running);
          h = tape.relu(h);
        }
        return detail::linear(tape, h, pb, "out");
      }
      case ClassifierKind::cnn_a: {
        int img = tape.reshape(x, {tape.value(x).shape[0], spec_.channels, spec_.height,
                                   spec_.width});
        int h = tape.relu(tape.add(tape.conv2d(img, pb.var("conv1.k")), pb.var("conv1.b")));
        h = tape.relu(tape.add(tape.conv2d(h, pb.var("conv2.k")), pb.var("conv2.b")));
        h = tape.maxpool2d(h);
        h = tape.dropout(h, Real(0.25), ctx.train, mix_key(ctx.dropout_key, 1));
        const auto& s = tape.value(h).shape;
        h = tape.reshape(h, {s[0], s[1] * s[2] * s[3]});
        h = tape.relu(detail::linear(tape, h, pb, "fc1"));
        return detail::linear(tape, h, pb, "out");
      }
    }
    throw Error("classifier: unreachable kind");
  }

  /// Eval-mode logits for a raw batch, no gradients.
  Tensor<Real> logits_eval(const Tensor<Real>& x) {
    Tape<Real> tape;
    const int xv = tape.leaf(x);
    auto pb = bind_params(tape, params_, /*trainable=*/false);
    return tape.value(forward(tape, xv, pb, ForwardCtx{}));
  }

 private:
  ClassifierSpec spec_;
  ParamStore<Real> params_;

  void build(Rng& rng) {
    const std::size_t d = spec_.flat_dim();
    const std::size_t c = static_cast<std::size_t>(spec_.class_count);
    const auto widths = spec_.hidden_widths();
    switch (spec_.kind) {
      case ClassifierKind::toy_2d:
      case ClassifierKind::fc_a:
        detail::add_linear(params_, "fc1", d, widths[0], rng);
        detail::add_linear(params_, "out", widths[0], c, rng);
        break;
      case ClassifierKind::fc_b: {
        std::size_t prev = d;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          const std::string p = "fc" + std::to_string(i + 1);
          detail::add_linear(params_, p, prev, widths[i], rng);
          detail::add_batchnorm(params_, p + ".bn", widths[i]);
          prev = widths[i];
        }
        detail::add_linear(params_, "out", prev, c, rng);
        break;
      }
      case ClassifierKind::cnn_a: {
        const std::size_t f1 = scaled_width(32, spec_.sigma);
        const std::size_t f2 = scaled_width(64, spec_.sigma);
        detail::add_conv(params_, "conv1", spec_.channels, f1, 3, rng);
        detail::add_conv(params_, "conv2", f1, f2, 3, rng);
        const std::size_t ph = (spec_.height - 4) / 2, pw = (spec_.width - 4) / 2;
        detail::add_linear(params_, "fc1", f2 * ph * pw, widths[0], rng);
        detail::add_linear(params_, "out", widths[0], c, rng);
        break;
      }
    }
  }
};

enum class AuxKind { identity, fc_residual, conv_bottleneck };

inline const char* aux_kind_name(AuxKind k) {
  switch (k) {
    case AuxKind::identity: return "identity";
    case AuxKind::fc_residual: return "fc_residual";
    case AuxKind::conv_bottleneck: return "conv_bottleneck";
  }
  return "?";
}

inline AuxKind aux_kind_from(const std::string& s) {
  if (s == "identity") return AuxKind::identity;
  if (s == "fc_residual") return AuxKind::fc_residual;
  if (s == "conv_bottleneck") return AuxKind::conv_bottleneck;
  throw Error("unknown auxiliary kind: " + s);
}

struct AuxNetSpec {
  AuxKind kind = AuxKind::fc_residual;
  std::size_t input_dim = 2;  // flattened
  std::size_t channels = 1, height = 0, width = 0;  // conv_bottleneck only
  std::size_t hidden = 256;
  std::size_t n_f = 64;
  int nu = 1;
  bool residual = true;
  double sigma = 1.0;

  void validate() const {
    if (kind == AuxKind::identity) return;
    if (kind == AuxKind::fc_residual) {
      if (input_dim < 1 || hidden < 1) throw Error("auxiliary: invalid fc dimensions");
      return;
    }
    if (n_f != 64 && n_f != 96 && n_f != 128)
      throw Error("auxiliary: n_f must be one of {64,96,128}, got " + std::to_string(n_f));
    if (nu != 1 && nu != 2)
      throw Error("auxiliary: nu must be 1 or 2, got " + std::to_string(nu));
    if (channels < 1 || height < 4 || width < 4)
      throw Error("auxiliary: conv_bottleneck needs spatial dims >= 4");
    std::size_t h = height, w = width;
    for (int i = 0; i < nu; ++i) {
      if (h % 2 != 0 || w % 2 != 0)
        throw Error("auxiliary: spatial dims must halve evenly " + std::to_string(nu) +
                    " times");
      h /= 2;
      w /= 2;
    }
  }

  std::size_t flat_dim() const {
    return kind == AuxKind::conv_bottleneck ? channels * height * width : input_dim;
  }
};

/// The simplifier s(x, theta). Output dimensionality always equals input
/// dimensionality; with the residual flag the final layer starts at zero so
/// that s is the exact identity before any training step.
template <class Real>
class Auxiliary {
 public:
  Auxiliary(AuxNetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng = stream(seed, {stream_tag::kInit, 0xa0});
    build(rng);
  }

  const AuxNetSpec& spec() const { return spec_; }
  ParamStore<Real>& params() { return params_; }
  const ParamStore<Real>& params() const { return params_; }
  bool is_identity() const { return spec_.kind == AuxKind::identity; }

  int forward(Tape<Real>& tape, int x, const ParamBinding<Real>& pb,
              const ForwardCtx& ctx) const {
    (void)ctx;
    switch (spec_.kind) {
      case AuxKind::identity:
        return x;
      case AuxKind::fc_residual: {
        int h = tape.tanh_fn(detail::linear(tape, x, pb, "aux1"));
        int g = detail::linear(tape, h, pb, "aux_out");
        return spec_.residual ? tape.add(g, x) : g;
      }
      case AuxKind::conv_bottleneck: {
        const std::size_t b = tape.value(x).shape[0];
        int img = tape.reshape(x, {b, spec_.channels, spec_.height, spec_.width});
        auto conv_relu = [&](int in, const std::string& p) {
          return tape.relu(
              tape.add(tape.conv2d(tape.pad2d(in, 1), pb.var(p + ".k")), pb.var(p + ".b")));
        };
        int h = conv_relu(img, "enc1");
        h = conv_relu(h, "enc2");
        for (int i = 0; i < spec_.nu; ++i) {
          const std::string p = "down" + std::to_string(i + 1);
          h = tape.maxpool2d(h);
          h = conv_relu(h, p + "a");
          h = conv_relu(h, p + "b");
        }
        for (int i = 0; i < spec_.nu; ++i) {
          const std::string p = "up" + std::to_string(i + 1);
          h = tape.upsample2d(h);
          h = conv_relu(h, p + "a");
          h = conv_relu(h, p + "b");
        }
        // final 1x1 conv, linear activation, back to input channel count
        int g = tape.add(tape.conv2d(h, pb.var("head.k")), pb.var("head.b"));
        int flat = tape.reshape(g, {b, spec_.flat_dim()});
        return spec_.residual ? tape.add(flat, x) : flat;
      }
    }
    throw Error("auxiliary: unreachable kind");
  }

 private:
  AuxNetSpec spec_;
  ParamStore<Real> params_;

  void build(Rng& rng) {
    switch (spec_.kind) {
      case AuxKind::identity:
        break;
      case AuxKind::fc_residual:
        detail::add_linear(params_, "aux1", spec_.input_dim, spec_.hidden, rng);
        detail::add_linear(params_, "aux_out", spec_.hidden, spec_.input_dim, rng,
                           /*zero_init=*/spec_.residual);
        break;
      case AuxKind::conv_bottleneck: {
        const std::size_t nf = scaled_width(static_cast<double>(spec_.n_f), spec_.sigma);
        detail::add_conv(params_, "enc1", spec_.channels, nf, 3, rng);
        detail::add_conv(params_, "enc2", nf, nf, 3, rng);
        for (int i = 0; i < spec_.nu; ++i) {
          const std::string p = "down" + std::to_string(i + 1);
          detail::add_conv(params_, p + "a", nf, nf, 3, rng);
          detail::add_conv(params_, p + "b", nf, nf, 3, rng);
        }
        for (int i = 0; i < spec_.nu; ++i) {
          const std::string p = "up" + std::to_string(i + 1);
          detail::add_conv(params_, p + "a", nf, nf, 3, rng);
          detail::add_conv(params_, p + "b", nf, nf, 3, rng);
        }
        detail::add_conv(params_, "head", nf, spec_.channels, 1, rng,
                         /*zero_init=*/spec_.residual);
        break;
      }
    }
  }
};

/// x_tilde = s(x, theta) and delta = x_tilde - x, in eval mode. A null or
/// identity auxiliary returns x bit-exactly and a zero delta. The returned
/// x_tilde is recomputed as x + delta so that identity holds to 0 ulp.
template <class Real>
std::pair<Tensor<Real>, Tensor<Real>> simplify(const Tensor<Real>& x,
                                               Auxiliary<Real>* aux) {
  if (aux == nullptr || aux->is_identity())
    return {x, Tensor<Real>::zeros(x.shape)};
  Tape<Real> tape;
  const int xv = tape.leaf(x);
  auto pb = bind_params(tape, aux->params(), /*trainable=*/false);
  const int sv = aux->forward(tape, xv, pb, ForwardCtx{});
  Tensor<Real> delta = tape.value(sv);
  for (std::size_t i = 0; i < delta.numel(); ++i) delta[i] -= x[i];
  Tensor<Real> xt = x;
  for (std::size_t i = 0; i < xt.numel(); ++i) xt[i] += delta[i];
  return {std::move(xt), std::move(delta)};
}

}  // namespace friendly
