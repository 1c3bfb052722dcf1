#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mmdt/data_pipeline.hpp"
#include "mmdt/disentangler.hpp"
#include "mmdt/nn.hpp"

namespace mmdt {

enum class Modality : int { kRgb = 0, kC = 1, kT = 2 };

const char* to_string(Modality m);
Modality parse_modality(const std::string& text);
/// Sorted, duplicate-free, RGB first. Throws ParamError when RGB is missing.
std::vector<Modality> normalize_modalities(std::vector<Modality> active);
/// "rgb,c,t" style lists.
std::vector<Modality> parse_modalities(const std::string& text);
std::string modalities_string(const std::vector<Modality>& active);

/// One 224 patch with its traces. `c_map` is the content trace already upsampled to the patch side.
struct ModalityBundle {
  Image rgb;
  Image c_map;
  Image t_map;
  std::vector<Modality> active{Modality::kRgb, Modality::kC, Modality::kT};

  void validate() const;
  const Image& map(Modality m) const;
};

ModalityBundle make_bundle(const Image& rgb, const ForensicTrace& trace,
                           std::vector<Modality> active = {Modality::kRgb, Modality::kC, Modality::kT});

struct BackboneConfig {
  Index patch_side = 16;
  Index token_dim = 768;
  Index depth = 12;
  Index heads = 12;
  Index mlp_ratio = 4;
  Index ama_hidden = 64;
  Index num_classes = 2;
  Index image_side = 224;
  std::filesystem::path pretrained_weights;  ///< optional archive with backbone tensors

  void validate() const;
  Index grid() const { return image_side / patch_side; }
  Index tokens_per_modality() const { return grid() * grid(); }
  /// Depth 4, width 192, 3 heads.
  static BackboneConfig desk();
};

/// Contiguous run of tokens belonging to one modality; the RGB span includes the class token.
struct TokenSpan {
  Index start = 0;
  Index length = 0;
};

/// Adapter of one encoder block. Every modality has its own down-projection; the modality
/// weights come from a shared score on the pooled hidden features.
template <typename S>
struct AmaBlock {
  std::vector<nn::Linear<S>> down;
  nn::Linear<S> score;
  nn::Linear<S> fuse;
  nn::Linear<S> up;  ///< zero at init, so the adapter starts as the identity
};

/// Softmax modality weights of the adapter, (B, 1, M).
template <typename S>
Var<S> ama_weights(const std::vector<Var<S>>& pooled, const AmaBlock<S>& ama) {
  std::vector<Var<S>> scores;
  for (const auto& p : pooled) scores.push_back(ama.score(p));
  return softmax_last(concat_last(scores));
}

/// tokens + up(gelu(fuse(w_m * h_m + sum_k w_k mean(h_k)))) per modality span m, where
/// h_m = gelu(down_m(tokens_m)).
template <typename S>
Var<S> ama_forward(const Var<S>& tokens, const std::vector<TokenSpan>& spans, const AmaBlock<S>& ama) {
  const Shape& s = tokens.shape();
  if (s.size() != 3) throw ShapeError("ama_forward expects (B, L, D) tokens, got " + shape_str(s));
  if (spans.size() != ama.down.size() || spans.empty())
    throw ShapeError("ama_forward: " + std::to_string(spans.size()) + " spans for " +
                     std::to_string(ama.down.size()) + " modality projections");
  Index next = 0;
  for (const auto& sp : spans) {
    if (sp.start != next || sp.length <= 0) throw ShapeError("ama_forward: spans must partition the tokens");
    next += sp.length;
  }
  if (next != s[1])
    throw ShapeError("ama_forward: spans cover " + std::to_string(next) + " of " + std::to_string(s[1]) + " tokens");

  const std::size_t m = spans.size();
  std::vector<Var<S>> hidden, pooled;
  for (std::size_t i = 0; i < m; ++i) {
    hidden.push_back(gelu(ama.down[i](token_slice(tokens, spans[i].start, spans[i].length))));
    pooled.push_back(token_mean(hidden.back()));
  }
  const auto weights = ama_weights(pooled, ama);
  std::vector<Var<S>> w(m);
  Var<S> context;
  for (std::size_t i = 0; i < m; ++i) {
    w[i] = slice_last(weights, static_cast<Index>(i), 1);
    auto term = scale_per_sample(pooled[i], w[i]);
    context = context.defined() ? add(context, term) : term;
  }
  std::vector<Var<S>> updates;
  for (std::size_t i = 0; i < m; ++i) {
    auto z = add_per_token(scale_per_sample(hidden[i], w[i]), context);
    updates.push_back(ama.up(gelu(ama.fuse(z))));
  }
  return add(tokens, token_concat(updates));
}

/// Pre-norm transformer block.
template <typename S>
struct EncoderBlock {
  nn::LayerNorm<S> norm1, norm2;
  nn::Linear<S> qkv, proj, fc1, fc2;
  int heads = 1;

  Var<S> operator()(const Var<S>& x) const {
    auto h = add(x, proj(attention(qkv(norm1(x)), heads)));
    return add(h, fc2(gelu(fc1(norm2(h)))));
  }
};

/// (N, 3, H, W) -> (N, (H/p)(W/p), 3 p p), channel-major inside each patch.
template <typename S>
Tensor<S> patchify(const Tensor<S>& images, Index patch);

/// Vision transformer over concatenated per-modality token streams with an adapter after each
/// block. Only parameters under "ama." and "head." are trainable.
template <typename S>
class MmdtModel {
 public:
  /// Uninitialized; every forward raises StateError.
  MmdtModel() = default;
  MmdtModel(const BackboneConfig& cfg, std::vector<Modality> active, std::uint64_t seed = 0);

  MmdtModel(const MmdtModel&) = delete;
  MmdtModel& operator=(const MmdtModel&) = delete;
  MmdtModel(MmdtModel&&) = default;
  MmdtModel& operator=(MmdtModel&&) = default;

  bool initialized() const noexcept { return initialized_; }
  const BackboneConfig& config() const noexcept { return cfg_; }
  const std::vector<Modality>& active() const noexcept { return active_; }
  std::vector<TokenSpan> spans() const;
  ParamStore<S>& params() noexcept { return store_; }
  const ParamStore<S>& params() const noexcept { return store_; }
  /// Name belongs to the frozen backbone (everything outside "ama." and "head.").
  static bool is_backbone(const std::string& name);

  /// One (N, 3, H, W) tensor per active modality, in `active()` order -> (N, 196 m + 1, D).
  Var<S> embed_tokens(const std::vector<Tensor<S>>& inputs) const;
  Var<S> encode(const Var<S>& tokens, bool adapters = true) const;
  /// Logits (N, num_classes) read from the class token.
  Var<S> forward(const std::vector<Tensor<S>>& inputs, bool adapters = true) const;

  /// Copies backbone tensors from `state`; C and T embeddings fall back to the RGB ones when absent.
  void load_backbone(const NamedTensors<S>& state);

  const AmaBlock<S>& adapter(Index block) const { return ama_.at(static_cast<std::size_t>(block)); }

 private:
  void require_initialized() const;

  BackboneConfig cfg_;
  std::vector<Modality> active_;
  bool initialized_ = false;
  ParamStore<S> store_;
  std::vector<nn::Linear<S>> embed_;  ///< per active modality
  std::vector<Var<S>> pos_;           ///< RGB table has 1 + 196 rows, the others 196
  Var<S> cls_;
  std::vector<EncoderBlock<S>> blocks_;
  std::vector<AmaBlock<S>> ama_;
  nn::LayerNorm<S> norm_;
  nn::Linear<S> head_;
};

/// Stacks bundles into per-modality (N, 3, H, W) batches ordered like `model.active()`.
/// RGB is mapped to [-1, 1]; trace maps are used as they are.
std::vector<Tensor<float>> model_inputs(const MmdtModel<float>& model, std::span<const ModalityBundle> bundles);

/// Token sequence (196 m + 1, D) of one bundle. Uses the bundle's own active set, which must
/// match the model's.
Tensor<float> embed_tokens(const ModalityBundle& bundle, const MmdtModel<float>& model);

/// (p_genuine, p_recaptured).
std::pair<double, double> classify(const ModalityBundle& bundle, const MmdtModel<float>& model);
/// Recaptured probability for each bundle, evaluated in chunks.
std::vector<double> recaptured_probabilities(std::span<const ModalityBundle> bundles,
                                             const MmdtModel<float>& model, Index chunk = 16);

struct LabeledPatch {
  std::string id;
  Image rgb;
  Label label = Label::kGenuine;
};

using TraceProvider = std::function<ForensicTrace(const LabeledPatch&)>;

/// Traces from a trained disentangler, memoized by patch id.
TraceProvider disentangler_traces(const Disentangler<float>& net);

struct FinetuneConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.05;
  Index batch_size = 64;
  int max_epochs = 30;
  int patience = 0;  ///< stop after this many epochs without a better validation accuracy; 0 never stops early
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  /// Stop once an epoch reaches this train accuracy; > 1 disables.
  double target_train_accuracy = 2.0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_accuracy = -1;  ///< -1 without a validation set
};

struct FinetuneResult {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  ///< the returned model holds this epoch's adapters and head
};

/// Cross-entropy training of the adapters and head; backbone tensors are left bit-identical.
/// With a validation set the adapters and head of the best validation epoch are restored.
FinetuneResult finetune(MmdtModel<float>& model, const std::vector<LabeledPatch>& train,
                        const TraceProvider& traces, const FinetuneConfig& cfg,
                        const std::vector<LabeledPatch>& val = {});

/// Checkpoint metadata records the backbone shape and the active modalities.
void save_model(const MmdtModel<float>& model, const std::filesystem::path& path,
                const std::map<std::string, std::string>& extra = {});
MmdtModel<float> load_model(const std::filesystem::path& path);

}  // namespace mmdt
