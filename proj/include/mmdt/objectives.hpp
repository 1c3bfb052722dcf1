#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mmdt/image.hpp"
#include "mmdt/nn.hpp"

namespace mmdt {

inline constexpr int kScales = 3;

struct LossWeights {
  double lambda1 = 1.0;  ///< regularizer
  double lambda2 = 1.0;  ///< generator
  double lambda3 = 1.0;  ///< discriminator
  double lambda4 = 10.0;  ///< pixel
  double alpha1 = 10.0;  ///< genuine-trace magnitude
  double alpha2 = 1e-4;  ///< recaptured-trace magnitude

  void validate() const;
};

/// Hidden widths base, 2, 4, 8 times `base`.
struct DiscriminatorConfig {
  Index base = 32;
};

/// 8 convolutions (3 of them stride 2), LeakyReLU between, single-channel score map at side/8.
template <typename S>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(ParamStore<S>& store, const std::string& name, Index base, Rng& rng) {
    const Index b = base;
    const std::array<std::array<Index, 3>, 7> hidden{{{3, b, 1},
                                                      {b, b, 1},
                                                      {b, 2 * b, 2},
                                                      {2 * b, 2 * b, 1},
                                                      {2 * b, 4 * b, 2},
                                                      {4 * b, 4 * b, 1},
                                                      {4 * b, 8 * b, 2}}};
    for (std::size_t i = 0; i < hidden.size(); ++i)
      layers_.emplace_back(store, name + ".conv" + std::to_string(i + 1), hidden[i][0], hidden[i][1],
                           3, static_cast<int>(hidden[i][2]), rng);
    score_ = {store, name + ".score", 8 * b, 1, 3, 1, rng, true, 0.5};
  }

  Var<S> operator()(Var<S> x) const {
    for (const auto& layer : layers_) x = leaky_relu(layer(x), S(nn::kLeakySlope));
    return score_(x);
  }

 private:
  std::vector<nn::Conv2d<S>> layers_;
  nn::Conv2d<S> score_;
};

/// D_1, D_2, D_3 at full, half and quarter resolution.
template <typename S>
class DiscriminatorBank {
 public:
  explicit DiscriminatorBank(const DiscriminatorConfig& cfg = {}, std::uint64_t seed = 0) : cfg_(cfg) {
    Rng rng(seed);
    for (int n = 0; n < kScales; ++n)
      members_[n] = PatchDiscriminator<S>(store_, "d" + std::to_string(n + 1), cfg.base, rng);
  }

  DiscriminatorBank(const DiscriminatorBank&) = delete;
  DiscriminatorBank& operator=(const DiscriminatorBank&) = delete;

  /// x: (N, 3, H, W) with H, W divisible by 32. Returns score maps (N, 1, H/8, W/8), (N, 1, H/16,
  /// W/16), (N, 1, H/32, W/32).
  std::vector<Var<S>> forward(const Var<S>& x) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 32 != 0 || s[3] % 32 != 0 || s[2] == 0 || s[3] == 0)
      throw ShapeError("discriminator input must be (N,3,H,W) with sides divisible by 32, got " +
                       shape_str(s));
    std::vector<Var<S>> out;
    for (int n = 0; n < kScales; ++n) {
      const Var<S> xs = n == 0 ? x : resize_bilinear(x, s[2] >> n, s[3] >> n);
      out.push_back(members_[n](xs));
    }
    return out;
  }

  ParamStore<S>& params() noexcept { return store_; }
  const ParamStore<S>& params() const noexcept { return store_; }
  const DiscriminatorConfig& config() const noexcept { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  ParamStore<S> store_;
  std::array<PatchDiscriminator<S>, kScales> members_;
};

/// Score maps of one image group at each scale.
template <typename S>
using ScaleScores = std::vector<Var<S>>;

/// Per-scale score maps for the genuine and recaptured groups.
template <typename S>
struct BankScores {
  ScaleScores<S> genuine;
  ScaleScores<S> recaptured;
};

namespace detail {
template <typename S>
void require_scales(const ScaleScores<S>& maps, const char* what) {
  if (maps.size() != kScales)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(kScales) +
                     " score maps, got " + std::to_string(maps.size()));
  for (const auto& m : maps)
    if (!m.defined() || m.value().size() == 0) throw ShapeError(std::string(what) + ": empty score map");
}
}  // namespace detail

/// mean |a - b| over all elements.
template <typename S>
Var<S> pixel_loss(const Var<S>& pseudo_genuine, const Var<S>& genuine) {
  if (pseudo_genuine.shape() != genuine.shape())
    throw ShapeError("pixel_loss: " + shape_str(pseudo_genuine.shape()) + " vs " +
                     shape_str(genuine.shape()));
  return mean_abs_diff(pseudo_genuine, genuine);
}

/// alpha1 * mean(G_genuine^2) + alpha2 * mean(G_recaptured^2).
template <typename S>
Var<S> regularizer_loss(const Var<S>& trace_genuine, const Var<S>& trace_recaptured,
                        const LossWeights& w) {
  if (trace_genuine.value().size() == 0 || trace_recaptured.value().size() == 0)
    throw BatchError("regularizer_loss needs non-empty genuine and recaptured batches");
  return add(scale(mean_square(trace_genuine), static_cast<S>(w.alpha1)),
             scale(mean_square(trace_recaptured), static_cast<S>(w.alpha2)));
}

/// Least-squares objective summed over scales: reals towards 1, reconstructions towards 0.
template <typename S>
Var<S> discriminator_loss(const BankScores<S>& real, const BankScores<S>& fake) {
  for (const auto* m : {&real.genuine, &real.recaptured, &fake.genuine, &fake.recaptured})
    detail::require_scales(*m, "discriminator_loss");
  Var<S> total;
  for (int n = 0; n < kScales; ++n) {
    auto term = add(add(mean_square_to(real.genuine[n], S(1)), mean_square(fake.genuine[n])),
                    add(mean_square_to(real.recaptured[n], S(1)), mean_square(fake.recaptured[n])));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Least-squares objective pushing reconstructions towards the real target 1.
template <typename S>
Var<S> generator_loss(const BankScores<S>& fake) {
  detail::require_scales(fake.genuine, "generator_loss");
  detail::require_scales(fake.recaptured, "generator_loss");
  Var<S> total;
  for (int n = 0; n < kScales; ++n) {
    auto term = add(mean_square_to(fake.genuine[n], S(1)), mean_square_to(fake.recaptured[n], S(1)));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

struct LossTerms {
  double L_R = 0, L_G = 0, L_D = 0, L_P = 0;
};

/// lambda1 L_R + lambda2 L_G + lambda3 L_D + lambda4 L_P; NumericError on non-finite input.
double total_loss(const LossTerms& terms, const LossWeights& w);

/// Differentiable counterpart; undefined components are skipped.
template <typename S>
Var<S> total_loss(const Var<S>& l_r, const Var<S>& l_g, const Var<S>& l_d, const Var<S>& l_p,
                  const LossWeights& w) {
  Var<S> total;
  const std::array<std::pair<const Var<S>*, double>, 4> parts{
      {{&l_r, w.lambda1}, {&l_g, w.lambda2}, {&l_d, w.lambda3}, {&l_p, w.lambda4}}};
  for (const auto& [v, lambda] : parts) {
    if (!v->defined()) continue;
    auto term = scale(*v, static_cast<S>(lambda));
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) throw ParamError("total_loss needs at least one component");
  return total;
}

// ---- image-level interface ---------------------------------------------------------------------

/// Scalar score maps per scale for one 224 x 224 image (sides 28, 14, 7).
std::vector<Tensor<float>> discriminate(const DiscriminatorBank<float>& bank, const Image& image);

}  // namespace mmdt
