#ifndef RVS_NETS_HPP
#define RVS_NETS_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rvs/batchnorm.hpp"
#include "rvs/conv.hpp"
#include "rvs/ops.hpp"
#include "rvs/optim.hpp"
#include "rvs/random.hpp"

namespace rvs {

/// Perturbation generator shape. The first schedule entry is the channel
/// count after the reshape, each middle entry is one stride-2 deconv block
/// (deconv, batchnorm, leaky ReLU) and the last entry is the output conv.
struct GeneratorConfig {
  int z_dim = 640;
  int base_spatial = 8;
  std::vector<int> channel_schedule{64, 32, 16, 3};
  int out_h = 32, out_w = 32, out_c = 3;
  double leak = 0.2;
  int kernel = 4;

  int deconv_blocks() const { return static_cast<int>(channel_schedule.size()) - 2; }

  void validate() const {
    if (z_dim < 1 || base_spatial < 1) throw ConfigError("generator: z_dim and base_spatial must be positive");
    if (channel_schedule.size() < 2) throw ConfigError("generator: channel_schedule needs >= 2 entries");
    for (int c : channel_schedule)
      if (c < 1) throw ConfigError("generator: channel counts must be positive");
    if (base_spatial << deconv_blocks() != out_h || out_h != out_w)
      throw ConfigError("generator: base_spatial * 2^deconv_blocks must equal the output height/width");
    if (channel_schedule.back() != out_c)
      throw ConfigError("generator: final channel count must equal image channels");
    if (!(leak >= 0 && leak < 1)) throw ConfigError("generator: leak must be in [0,1)");
  }
};

struct ConvLayerSpec {
  int channels;
  int stride;
};

/// Plain CNN: 3x3 conv + batchnorm + leaky ReLU per layer, global average
/// pool to the latent vector, one linear layer to the logits.
struct ClassifierConfig {
  std::vector<ConvLayerSpec> conv_blocks{{16, 1}, {16, 1}, {32, 2}, {32, 1}, {64, 2}, {64, 1}};
  int latent_dim = 64;
  int num_classes = 10;
  int in_h = 32, in_w = 32, in_c = 3;
  double leak = 0.1;
  int kernel = 3;

  void validate() const {
    if (conv_blocks.empty()) throw ConfigError("classifier: conv_blocks must be non-empty");
    for (const auto& b : conv_blocks)
      if (b.channels < 1 || b.stride < 1) throw ConfigError("classifier: bad conv block");
    if (conv_blocks.back().channels != latent_dim)
      throw ConfigError("classifier: latent_dim must equal the last conv block's channels");
    if (num_classes < 2) throw ConfigError("classifier: need at least two classes");
    if (in_h < 1 || in_w < 1 || in_c < 1) throw ConfigError("classifier: bad input shape");
    if (!(leak >= 0 && leak < 1)) throw ConfigError("classifier: leak must be in [0,1)");
  }
};

inline void validate_pair(const GeneratorConfig& g, const ClassifierConfig& c) {
  g.validate();
  c.validate();
  if (g.z_dim != c.latent_dim)
    throw ConfigError("generator z_dim must equal classifier latent_dim (z lives in the latent space)");
  if (g.out_h != c.in_h || g.out_w != c.in_w || g.out_c != c.in_c)
    throw ConfigError("generator output shape must equal classifier input shape");
}

/// The l-infinity ball of allowed perturbations and the pixel domain.
struct PerturbationBudget {
  double epsilon = 8.0 / 255.0;
  double pixel_min = 0.0;
  double pixel_max = 1.0;

  void validate() const {
    if (!(epsilon >= 0)) throw ConfigError("budget: epsilon must be >= 0");
    if (!(pixel_min < pixel_max)) throw ConfigError("budget: pixel_min must be < pixel_max");
  }
};

template <typename T>
using BnStates = std::map<std::string, BatchNormState<T>>;

namespace detail {

template <typename T>
Tensor<T> he_normal(const Shape& shape, double fan_in, Rng& rng) {
  return normal_tensor<T>(shape, rng, std::sqrt(2.0 / fan_in));
}

inline std::size_t uz(int v) { return static_cast<std::size_t>(v); }

}  // namespace detail

/// Closest bounds [lo, hi] around pixel x such that, evaluated in T,
/// |v - x| <= eps and pixel_min <= v <= pixel_max for every v in between.
template <typename T>
std::pair<T, T> ball_bounds(T x, T eps, T pixel_min, T pixel_max) {
  T lo = std::max(pixel_min, T(x - eps));
  while (x - lo > eps) lo = std::nextafter(lo, std::numeric_limits<T>::infinity());
  T hi = std::min(pixel_max, T(x + eps));
  while (hi - x > eps) hi = std::nextafter(hi, -std::numeric_limits<T>::infinity());
  return {std::min(lo, x), std::max(hi, x)};
}

/// Projects `cand` onto {v : |v - x| <= eps} intersected with the pixel domain.
template <typename T>
Tensor<T> project_to_ball(const Tensor<T>& x, const Tensor<T>& cand, const PerturbationBudget& b) {
  require_same_shape(x.shape(), cand.shape(), "project_to_ball");
  Tensor<T> out(x.shape());
  const T eps = T(b.epsilon), pmin = T(b.pixel_min), pmax = T(b.pixel_max);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [lo, hi] = ball_bounds(x[i], eps, pmin, pmax);
    out[i] = std::clamp(cand[i], lo, hi);
  }
  return out;
}

/// x_adv = clip(x + delta) to the pixel domain. The result also satisfies
/// |x_adv - x| <= epsilon exactly in T arithmetic. Gradient flows to both
/// inputs where x + delta lies strictly inside the pixel domain.
template <typename T>
Var<T> apply_perturbation(Var<T> x, Var<T> delta, const PerturbationBudget& b) {
  require_same_shape(x.shape(), delta.shape(), "apply_perturbation");
  const auto& xv = x.value();
  const auto& dv = delta.value();
  const T eps = T(b.epsilon), pmin = T(b.pixel_min), pmax = T(b.pixel_max);
  Tensor<T> out(x.shape());
  std::vector<char> pass(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T s = xv[i] + dv[i];
    pass[i] = s > pmin && s < pmax;
    auto [lo, hi] = ball_bounds(std::clamp(xv[i], pmin, pmax), eps, pmin, pmax);
    out[i] = std::clamp(s, lo, hi);
  }
  return x.tape().record(std::move(out), {x, delta},
                         [x, delta, pass = std::move(pass)](Tape<T>& t, const Tensor<T>& g) {
                           for (Var<T> v : {x, delta}) {
                             if (!v.requires_grad()) continue;
                             auto& buf = t.grad_buffer(v.id());
                             for (std::size_t i = 0; i < g.size(); ++i)
                               if (pass[i]) buf[i] += g[i];
                           }
                         });
}

template <typename T>
Tensor<T> apply_perturbation(const Tensor<T>& x, const Tensor<T>& delta, const PerturbationBudget& b) {
  Tape<T> tape;
  return apply_perturbation(tape.constant(x), tape.constant(delta), b).value();
}

template <typename T>
struct Generator {
  GeneratorConfig cfg;
  ParamStore<T> params;
  BnStates<T> bn;

  static Generator create(const GeneratorConfig& cfg, Rng& rng) {
    cfg.validate();
    using detail::uz;
    Generator g{cfg, {}, {}};
    const auto& ch = cfg.channel_schedule;
    const std::size_t base = uz(cfg.base_spatial), k = uz(cfg.kernel);
    const std::size_t fc_out = base * base * uz(ch[0]);
    g.params.add("fc.w", detail::he_normal<T>(Shape{uz(cfg.z_dim), fc_out}, cfg.z_dim, rng));
    g.params.add("fc.b", Tensor<T>(Shape{fc_out}));
    for (int i = 0; i < cfg.deconv_blocks(); ++i) {
      const auto s = std::to_string(i);
      const std::size_t cin = uz(ch[uz(i)]), cout = uz(ch[uz(i) + 1]);
      g.params.add("deconv" + s + ".w",
                   detail::he_normal<T>(Shape{k, k, cout, cin}, double(k * k * cin) / 4.0, rng));
      g.params.add("bn" + s + ".gamma", Tensor<T>(Shape{cout}, T(1)));
      g.params.add("bn" + s + ".beta", Tensor<T>(Shape{cout}));
      g.bn.emplace("bn" + s, BatchNormState<T>(cout));
    }
    const std::size_t cin = uz(ch[ch.size() - 2]), cout = uz(ch.back());
    g.params.add("out.w", detail::he_normal<T>(Shape{k, k, cin, cout}, double(k * k * cin), rng));
    g.params.add("out.b", Tensor<T>(Shape{cout}));
    return g;
  }

  /// Raw (unclipped) generator output, [n, out_h, out_w, out_c]. Train-mode
  /// batch statistics are folded into `update` when given.
  Var<T> forward(const BoundParams<T>& p, Var<T> z, BnMode mode, BnStates<T>* update = nullptr) const {
    using detail::uz;
    if (z.shape().size() != 2 || z.shape()[1] != uz(cfg.z_dim))
      throw DimensionError("generator: z must be [n, " + std::to_string(cfg.z_dim) + "], got " +
                           shape_str(z.shape()));
    const std::size_t n = z.shape()[0], base = uz(cfg.base_spatial);
    Var<T> h = add_bias(matmul(z, p.at("fc.w")), p.at("fc.b"));
    h = reshape(h, Shape{n, base, base, uz(cfg.channel_schedule[0])});
    for (int i = 0; i < cfg.deconv_blocks(); ++i) {
      const auto s = std::to_string(i);
      h = deconv2d(h, p.at("deconv" + s + ".w"), 2);
      h = batchnorm(h, p.at("bn" + s + ".gamma"), p.at("bn" + s + ".beta"), mode, &bn.at("bn" + s),
                    update ? &update->at("bn" + s) : nullptr);
      h = leaky_relu(h, T(cfg.leak));
    }
    h = conv2d(h, p.at("out.w"), 1, PadMode::same);
    return add_bias(h, p.at("out.b"));
  }
};

/// delta_g = clip(G(z), -eps, eps).
template <typename T>
Var<T> generate_perturbation(const Generator<T>& gen, const BoundParams<T>& p, Var<T> z,
                             const PerturbationBudget& b, BnMode mode,
                             BnStates<T>* update = nullptr) {
  const T eps = T(b.epsilon);
  return clip(gen.forward(p, z, mode, update), -eps, eps);
}

/// Eval-mode perturbations for a plain batch of latent vectors.
template <typename T>
Tensor<T> generate_perturbation(const Generator<T>& gen, const Tensor<T>& z, const PerturbationBudget& b) {
  Tape<T> tape;
  auto p = bind(tape, gen.params, false);
  const T eps = T(b.epsilon);
  return clip(gen.forward(p, tape.constant(z), BnMode::eval), -eps, eps).value();
}

template <typename T>
struct ClassifierOutput {
  Var<T> latent;
  Var<T> logits;
};

template <typename T>
struct Classifier {
  ClassifierConfig cfg;
  ParamStore<T> params;
  BnStates<T> bn;

  static Classifier create(const ClassifierConfig& cfg, Rng& rng) {
    cfg.validate();
    using detail::uz;
    Classifier c{cfg, {}, {}};
    const std::size_t k = uz(cfg.kernel);
    std::size_t cin = uz(cfg.in_c);
    for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
      const auto s = std::to_string(i);
      const std::size_t cout = uz(cfg.conv_blocks[i].channels);
      c.params.add("conv" + s + ".w", detail::he_normal<T>(Shape{k, k, cin, cout}, double(k * k * cin), rng));
      c.params.add("bn" + s + ".gamma", Tensor<T>(Shape{cout}, T(1)));
      c.params.add("bn" + s + ".beta", Tensor<T>(Shape{cout}));
      c.bn.emplace("bn" + s, BatchNormState<T>(cout));
      cin = cout;
    }
    c.params.add("fc.w", detail::he_normal<T>(Shape{uz(cfg.latent_dim), uz(cfg.num_classes)}, cfg.latent_dim, rng));
    c.params.add("fc.b", Tensor<T>(Shape{uz(cfg.num_classes)}));
    return c;
  }

  ClassifierOutput<T> forward(const BoundParams<T>& p, Var<T> x, BnMode mode,
                              BnStates<T>* update = nullptr) const {
    using detail::uz;
    const Shape& xs = x.shape();
    if (xs.size() != 4 || xs[1] != uz(cfg.in_h) || xs[2] != uz(cfg.in_w) || xs[3] != uz(cfg.in_c))
      throw DimensionError("classifier: input " + shape_str(xs) + " does not match config " +
                           shape_str(Shape{uz(cfg.in_h), uz(cfg.in_w), uz(cfg.in_c)}));
    Var<T> h = x;
    for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
      const auto s = std::to_string(i);
      h = conv2d(h, p.at("conv" + s + ".w"), uz(cfg.conv_blocks[i].stride), PadMode::same);
      h = batchnorm(h, p.at("bn" + s + ".gamma"), p.at("bn" + s + ".beta"), mode, &bn.at("bn" + s),
                    update ? &update->at("bn" + s) : nullptr);
      h = leaky_relu(h, T(cfg.leak));
    }
    Var<T> latent = global_avg_pool(h);
    Var<T> logits = add_bias(matmul(latent, p.at("fc.w")), p.at("fc.b"));
    return {latent, logits};
  }

  /// Eval-mode latent and logits for a plain batch.
  std::pair<Tensor<T>, Tensor<T>> classify(const Tensor<T>& x) const {
    Tape<T> tape;
    auto p = bind(tape, params, false);
    auto out = forward(p, tape.constant(x), BnMode::eval);
    return {out.latent.value(), out.logits.value()};
  }
};

}  // namespace rvs

#endif  // RVS_NETS_HPP
