#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmdt/image.hpp"
#include "mmdt/nn.hpp"

namespace mmdt {

inline constexpr Index kTraceSide = 224;  ///< N
inline constexpr Index kContentSide = 56;  ///< L

/// Channel ladder of the encoder: stem `base`, then 2, 4, 8 times `base` after each stride-2
/// stage. The default gives the 28 x 28 x 96 latent at 224 input.
struct DisentanglerConfig {
  Index base = 12;
  double head_gain = 0.1;  ///< init scale of the two tanh trace heads
};

/// Network-side trace components in (N, 3, h, w) layout.
template <typename S>
struct TraceVars {
  Var<S> C;       ///< (N, 3, H/4, W/4)
  Var<S> T;       ///< (N, 3, H, W)
  Var<S> G;       ///< resize_up(C) + T
  Var<S> latent;  ///< (N, 8 base, H/8, W/8)
};

/// Bilinear upsampling of the content trace to the texture-trace resolution.
template <typename S>
Var<S> resize_up(const Var<S>& c, Index side_h, Index side_w) {
  return resize_bilinear(c, side_h, side_w);
}

/// Encoder-decoder with skip connections; C is read out at the H/4 decoder stage and T at
/// full resolution, both through tanh.
template <typename S>
class Disentangler {
 public:
  explicit Disentangler(const DisentanglerConfig& cfg = {}, std::uint64_t seed = 0) : cfg_(cfg) {
    Rng rng(seed);
    const Index b = cfg.base;
    auto& p = store_;
    stem_ = {p, "enc0", 3, b, 1, rng};
    down1_ = {p, "enc1.down", b, 2 * b, 2, rng};
    ref1_ = {p, "enc1.refine", 2 * b, 2 * b, 1, rng};
    down2_ = {p, "enc2.down", 2 * b, 4 * b, 2, rng};
    ref2_ = {p, "enc2.refine", 4 * b, 4 * b, 1, rng};
    down3_ = {p, "enc3.down", 4 * b, 8 * b, 2, rng};
    ref3_ = {p, "enc3.refine", 8 * b, 8 * b, 1, rng};
    up2_ = {p, "dec2.up", 8 * b, 4 * b, rng};
    fuse2_ = {p, "dec2.fuse", 8 * b, 4 * b, 1, rng};
    up1_ = {p, "dec1.up", 4 * b, 2 * b, rng};
    fuse1_ = {p, "dec1.fuse", 4 * b, 2 * b, 1, rng};
    up0_ = {p, "dec0.up", 2 * b, b, rng};
    fuse0_ = {p, "dec0.fuse", 2 * b, b, 1, rng};
    c_head_ = {p, "c_head", 4 * b, 3, 3, 1, rng, true, cfg.head_gain};
    t_head_ = {p, "t_head", b, 3, 3, 1, rng, true, cfg.head_gain};
  }

  // Layers hold Var handles into the store; copying would alias parameters.
  Disentangler(const Disentangler&) = delete;
  Disentangler& operator=(const Disentangler&) = delete;
  Disentangler(Disentangler&&) = default;
  Disentangler& operator=(Disentangler&&) = default;

  /// x: (N, 3, H, W) with H, W divisible by 8.
  TraceVars<S> forward(const Var<S>& x, NormMode mode) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 8 != 0 || s[3] % 8 != 0 || s[2] < 8 || s[3] < 8)
      throw ShapeError("disentangler input must be (N,3,H,W) with sides divisible by 8, got " +
                       shape_str(s));
    const S slope = S(nn::kLeakySlope);
    auto e0 = stem_(x, mode);
    auto e1 = ref1_(down1_(e0, mode), mode);
    auto e2 = ref2_(down2_(e1, mode), mode);
    auto f = ref3_(down3_(e2, mode), mode);

    auto d2 = fuse2_(concat_channels<S>({leaky_relu(up2_(f), slope), e2}), mode);
    auto c = tanh(c_head_(d2));
    auto d1 = fuse1_(concat_channels<S>({leaky_relu(up1_(d2), slope), e1}), mode);
    auto d0 = fuse0_(concat_channels<S>({leaky_relu(up0_(d1), slope), e0}), mode);
    auto t = tanh(t_head_(d0));
    auto g = add(resize_up(c, s[2], s[3]), t);
    return {c, t, g, f};
  }

  ParamStore<S>& params() noexcept { return store_; }
  const ParamStore<S>& params() const noexcept { return store_; }
  const DisentanglerConfig& config() const noexcept { return cfg_; }

 private:
  DisentanglerConfig cfg_;
  ParamStore<S> store_;
  nn::ConvBnAct<S> stem_, down1_, ref1_, down2_, ref2_, down3_, ref3_, fuse2_, fuse1_, fuse0_;
  nn::ConvTranspose2d<S> up2_, up1_, up0_;
  nn::Conv2d<S> c_head_, t_head_;
};

/// I_hat_G = clamp(I - G, 0, 1).
template <typename S>
Var<S> reconstruct_genuine(const Var<S>& image, const Var<S>& trace) {
  if (image.shape() != trace.shape())
    throw ShapeError("reconstruct_genuine: image " + shape_str(image.shape()) + " vs trace " +
                     shape_str(trace.shape()));
  return clamp(sub(image, trace), S(0), S(1));
}

// ---- image-level interface (H x W x 3) ---------------------------------------------------------

struct ForensicTrace {
  Image C;  ///< 56 x 56 x 3 for a 224 patch
  Image T;  ///< 224 x 224 x 3
  Image G;
};

Image resize_up(const Image& c, Index side_h, Index side_w);
inline Image resize_up(const Image& c) { return resize_up(c, kTraceSide, kTraceSide); }

/// Inference-mode forward (running statistics, no graph).
ForensicTrace disentangle(const Disentangler<float>& net, const Image& image);
std::vector<ForensicTrace> disentangle(const Disentangler<float>& net,
                                       std::span<const Image> images);

Image reconstruct_genuine(const Image& image, const ForensicTrace& trace);

}  // namespace mmdt
