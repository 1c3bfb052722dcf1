#pragma once

#include <cstdint>
#include <vector>

#include "mmdt/disentangler.hpp"

namespace mmdt {

/// Channel widths are base, 2, 4, 8 times `base`; base 32 reaches 28 x 28 x 256 features.
struct SynthesizerConfig {
  Index base = 32;
  int res_blocks = 4;
  double head_gain = 0.1;
};

namespace nn {

/// Two Conv-BN-LeakyReLU blocks per level with a strided conv between levels.
template <typename S>
struct SynthEncoder {
  std::vector<ConvBnAct<S>> blocks;
  std::vector<Conv2d<S>> pools;

  SynthEncoder() = default;
  SynthEncoder(ParamStore<S>& p, const std::string& name, Index base, Rng& rng) {
    Index cin = 3;
    for (int level = 0; level < 4; ++level) {
      const Index c = base << level;
      const std::string pre = name + ".l" + std::to_string(level + 1);
      blocks.emplace_back(p, pre + ".conv1", cin, c, 1, rng);
      blocks.emplace_back(p, pre + ".conv2", c, c, 1, rng);
      if (level < 3) pools.emplace_back(p, pre + ".pool", c, 2 * c, 3, 2, rng);
      cin = 2 * c;
    }
  }
  Var<S> operator()(Var<S> x, NormMode mode) const {
    for (int level = 0; level < 4; ++level) {
      x = blocks[2 * level + 1](blocks[2 * level](x, mode), mode);
      if (level < 3) x = leaky_relu(pools[level](x), S(kLeakySlope));
    }
    return x;
  }
};

/// x + BN(conv(LeakyReLU(BN(conv(x))))).
template <typename S>
struct ResBlock {
  ConvBnAct<S> first;
  Conv2d<S> conv;
  BatchNorm2d<S> bn;

  ResBlock() = default;
  ResBlock(ParamStore<S>& p, const std::string& name, Index c, Rng& rng)
      : first(p, name + ".block1", c, c, 1, rng),
        conv(p, name + ".conv2", c, c, 3, 1, rng, false),
        bn(p, name + ".bn2", c) {}
  Var<S> operator()(const Var<S>& x, NormMode mode) const {
    return add(x, bn(conv(first(x, mode)), mode));
  }
};

/// Two blocks per level with a LeakyReLU transposed conv between levels.
template <typename S>
struct SynthDecoder {
  std::vector<ConvBnAct<S>> blocks;
  std::vector<ConvTranspose2d<S>> ups;

  SynthDecoder() = default;
  SynthDecoder(ParamStore<S>& p, const std::string& name, Index base, Rng& rng) {
    for (int level = 0; level < 4; ++level) {
      const Index c = base << (3 - level);
      const std::string pre = name + ".l" + std::to_string(level + 1);
      blocks.emplace_back(p, pre + ".conv1", c, c, 1, rng);
      blocks.emplace_back(p, pre + ".conv2", c, c, 1, rng);
      if (level < 3) ups.emplace_back(p, pre + ".deconv", c, c / 2, rng);
    }
  }
  Var<S> operator()(Var<S> x, NormMode mode) const {
    for (int level = 0; level < 4; ++level) {
      x = blocks[2 * level + 1](blocks[2 * level](x, mode), mode);
      if (level < 3) x = leaky_relu(ups[level](x), S(kLeakySlope));
    }
    return x;
  }
};

}  // namespace nn

template <typename S>
struct SynthesisVars {
  Var<S> G_hat;  ///< (N, 3, H, W), tanh range
  Var<S> F_G;    ///< image-encoder features (N, 8 base, H/8, W/8)
  Var<S> F_R;    ///< trace-encoder features
};

/// Retargets a recaptured trace to the content of a genuine image.
template <typename S>
class Synthesizer {
 public:
  explicit Synthesizer(const SynthesizerConfig& cfg = {}, std::uint64_t seed = 0) : cfg_(cfg) {
    Rng rng(seed);
    const Index b = cfg.base, top = 8 * cfg.base;
    image_enc_ = {store_, "enc_image", b, rng};
    trace_enc_ = {store_, "enc_trace", b, rng};
    fuse_ = {store_, "fuse", 2 * top, top, 1, 1, rng};
    for (int i = 0; i < cfg.res_blocks; ++i)
      res_.emplace_back(store_, "res" + std::to_string(i + 1), top, rng);
    decoder_ = {store_, "dec", b, rng};
    head_ = {store_, "head", b, 3, 3, 1, rng, true, cfg.head_gain};
  }

  Synthesizer(const Synthesizer&) = delete;
  Synthesizer& operator=(const Synthesizer&) = delete;

  /// image, trace: (N, 3, H, W) with sides divisible by 8.
  SynthesisVars<S> forward(const Var<S>& image, const Var<S>& trace, NormMode mode) const {
    const auto& s = image.shape();
    if (s != trace.shape())
      throw ShapeError("synthesizer inputs differ: " + shape_str(s) + " vs " + shape_str(trace.shape()));
    if (s.size() != 4 || s[1] != 3 || s[2] % 8 != 0 || s[3] % 8 != 0 || s[2] < 8 || s[3] < 8)
      throw ShapeError("synthesizer input must be (N,3,H,W) with sides divisible by 8, got " +
                       shape_str(s));
    auto fg = image_enc_(image, mode);
    auto fr = trace_enc_(trace, mode);
    auto h = fuse_(concat_channels<S>({fg, fr}));
    for (const auto& block : res_) h = block(h, mode);
    return {tanh(head_(decoder_(h, mode))), fg, fr};
  }

  ParamStore<S>& params() noexcept { return store_; }
  const ParamStore<S>& params() const noexcept { return store_; }
  const SynthesizerConfig& config() const noexcept { return cfg_; }

 private:
  SynthesizerConfig cfg_;
  ParamStore<S> store_;
  nn::SynthEncoder<S> image_enc_, trace_enc_;
  nn::Conv2d<S> fuse_;
  std::vector<nn::ResBlock<S>> res_;
  nn::SynthDecoder<S> decoder_;
  nn::Conv2d<S> head_;
};

/// I_hat_R = clamp(I_G + G_hat, 0, 1).
template <typename S>
Var<S> reconstruct_recaptured(const Var<S>& genuine, const Var<S>& trace) {
  if (genuine.shape() != trace.shape())
    throw ShapeError("reconstruct_recaptured: image " + shape_str(genuine.shape()) + " vs trace " +
                     shape_str(trace.shape()));
  return clamp(add(genuine, trace), S(0), S(1));
}

// ---- image-level interface ---------------------------------------------------------------------

/// Inference-mode retargeting of `trace` (e.g. a G_R) onto `genuine`.
Image synthesize_trace(const Synthesizer<float>& net, const Image& genuine, const Image& trace);
Image reconstruct_recaptured(const Image& genuine, const Image& g_hat);
/// resize_up(C) [use_c] + T [use_t]; ParamError when neither is selected.
Image compose_partial_trace(const ForensicTrace& trace, bool use_c, bool use_t);

}  // namespace mmdt
