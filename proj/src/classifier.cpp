#include "mmdt/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include "mmdt/adam.hpp"
#include "mmdt/archive.hpp"

namespace mmdt {

const char* to_string(Modality m) {
  switch (m) {
    case Modality::kRgb: return "rgb";
    case Modality::kC: return "c";
    case Modality::kT: return "t";
  }
  return "?";
}

Modality parse_modality(const std::string& text) {
  if (text == "rgb" || text == "RGB") return Modality::kRgb;
  if (text == "c" || text == "C") return Modality::kC;
  if (text == "t" || text == "T") return Modality::kT;
  throw ParamError("unknown modality '" + text + "'");
}

std::vector<Modality> normalize_modalities(std::vector<Modality> active) {
  std::sort(active.begin(), active.end());
  active.erase(std::unique(active.begin(), active.end()), active.end());
  if (active.empty() || active.front() != Modality::kRgb) throw ParamError("RGB must be an active modality");
  return active;
}

std::vector<Modality> parse_modalities(const std::string& text) {
  std::vector<Modality> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(parse_modality(item));
  return normalize_modalities(std::move(out));
}

std::string modalities_string(const std::vector<Modality>& active) {
  std::string out;
  for (auto m : active) out += (out.empty() ? "" : ",") + std::string(to_string(m));
  return out;
}

void ModalityBundle::validate() const {
  normalize_modalities(active);
  validate_image(rgb);
  for (auto m : active) {
    const Image& im = map(m);
    if (im.shape() != rgb.shape())
      throw ShapeError(std::string(to_string(m)) + " map " + shape_str(im.shape()) + " does not match rgb " +
                       shape_str(rgb.shape()));
  }
}

const Image& ModalityBundle::map(Modality m) const {
  switch (m) {
    case Modality::kRgb: return rgb;
    case Modality::kC: return c_map;
    case Modality::kT: return t_map;
  }
  throw ParamError("bad modality");
}

ModalityBundle make_bundle(const Image& rgb, const ForensicTrace& trace, std::vector<Modality> active) {
  ModalityBundle b;
  b.rgb = rgb;
  b.active = normalize_modalities(std::move(active));
  b.c_map = resize_up(trace.C, image_height(rgb), image_width(rgb));
  b.t_map = trace.T;
  b.validate();
  return b;
}

void BackboneConfig::validate() const {
  if (patch_side <= 0 || image_side <= 0 || image_side % patch_side != 0)
    throw ParamError("image_side must be a positive multiple of patch_side");
  if (token_dim <= 0 || heads <= 0 || token_dim % heads != 0)
    throw ParamError("token_dim must be divisible by heads");
  if (ama_hidden <= 0 || ama_hidden >= token_dim) throw ParamError("ama_hidden must be in (0, token_dim)");
  if (depth <= 0 || mlp_ratio <= 0 || num_classes < 2) throw ParamError("invalid backbone depth, mlp_ratio or classes");
}

BackboneConfig BackboneConfig::desk() {
  BackboneConfig c;
  c.token_dim = 192;
  c.depth = 4;
  c.heads = 3;
  return c;
}

template <typename S>
Tensor<S> patchify(const Tensor<S>& images, Index p) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) % p != 0 || images.dim(3) % p != 0)
    throw ShapeError("patchify expects (N, 3, H, W) with sides divisible by " + std::to_string(p) + ", got " +
                     shape_str(images.shape()));
  const Index n = images.dim(0), h = images.dim(2), w = images.dim(3);
  const Index gh = h / p, gw = w / p, per = 3 * p * p;
  Tensor<S> out(Shape{n, gh * gw, per});
  S* dst = out.data();
  for (Index b = 0; b < n; ++b)
    for (Index gy = 0; gy < gh; ++gy)
      for (Index gx = 0; gx < gw; ++gx)
        for (Index c = 0; c < 3; ++c)
          for (Index y = 0; y < p; ++y) {
            const S* src = images.data() + ((b * 3 + c) * h + gy * p + y) * w + gx * p;
            std::copy(src, src + p, dst);
            dst += p;
          }
  return out;
}

template <typename S>
MmdtModel<S>::MmdtModel(const BackboneConfig& cfg, std::vector<Modality> active, std::uint64_t seed)
    : cfg_(cfg), active_(normalize_modalities(std::move(active))), initialized_(true) {
  cfg_.validate();
  Rng rng(seed);
  const Index d = cfg_.token_dim, per = 3 * cfg_.patch_side * cfg_.patch_side, n = cfg_.tokens_per_modality();
  auto& p = store_;

  // RGB weights are drawn first so C and T can start from them.
  for (auto m : active_) {
    const std::string mod = to_string(m);
    if (m == Modality::kRgb) {
      embed_.emplace_back(p, "embed.rgb", per, d, rng);
      pos_.push_back(p.add_param("pos.rgb", trunc_normal_tensor<S>({1, n + 1, d}, 0.02, rng)));
    } else {
      embed_.push_back({});
      embed_.back().weight = p.add_param("embed." + mod + ".weight", embed_.front().weight.value());
      embed_.back().bias = p.add_param("embed." + mod + ".bias", embed_.front().bias.value());
      const auto& rgb_pos = pos_.front().value();
      Tensor<S> table(Shape{1, n, d});
      table.flat() = rgb_pos.flat().segment(d, n * d);
      pos_.push_back(p.add_param("pos." + mod, std::move(table)));
    }
  }
  cls_ = p.add_param("cls", trunc_normal_tensor<S>({1, 1, d}, 0.02, rng));

  const Index hidden = cfg_.ama_hidden, mlp = cfg_.mlp_ratio * d;
  for (Index i = 0; i < cfg_.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    EncoderBlock<S> blk;
    blk.norm1 = {p, b + ".norm1", d};
    blk.qkv = {p, b + ".qkv", d, 3 * d, rng};
    blk.proj = {p, b + ".proj", d, d, rng};
    blk.norm2 = {p, b + ".norm2", d};
    blk.fc1 = {p, b + ".fc1", d, mlp, rng};
    blk.fc2 = {p, b + ".fc2", mlp, d, rng};
    blk.heads = static_cast<int>(cfg_.heads);
    blocks_.push_back(std::move(blk));
  }
  norm_ = {p, "norm", d};

  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double hid_std = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Index i = 0; i < cfg_.depth; ++i) {
    const std::string a = "ama." + std::to_string(i);
    AmaBlock<S> ama;
    for (auto m : active_) ama.down.emplace_back(p, a + ".down." + to_string(m), d, hidden, rng, in_std);
    ama.score = {p, a + ".score", hidden, 1, rng, hid_std};
    ama.fuse = {p, a + ".fuse", hidden, hidden, rng, hid_std};
    ama.up = {p, a + ".up", hidden, d, rng};
    ama.up.weight.mutable_value().flat().setZero();
    ama_.push_back(std::move(ama));
  }
  head_ = {p, "head", d, cfg_.num_classes, rng};

  store_.set_trainable([](const std::string& name) { return !is_backbone(name); });
  if (!cfg_.pretrained_weights.empty()) load_backbone(load_archive(cfg_.pretrained_weights).get<S>());
}

template <typename S>
bool MmdtModel<S>::is_backbone(const std::string& name) {
  return name.rfind("ama.", 0) != 0 && name.rfind("head.", 0) != 0;
}

template <typename S>
void MmdtModel<S>::require_initialized() const {
  if (!initialized_) throw StateError("model is not initialized");
}

template <typename S>
std::vector<TokenSpan> MmdtModel<S>::spans() const {
  require_initialized();
  const Index n = cfg_.tokens_per_modality();
  std::vector<TokenSpan> out{{0, n + 1}};
  for (std::size_t i = 1; i < active_.size(); ++i) out.push_back({out.back().start + out.back().length, n});
  return out;
}

template <typename S>
Var<S> MmdtModel<S>::embed_tokens(const std::vector<Tensor<S>>& inputs) const {
  require_initialized();
  if (inputs.size() != active_.size())
    throw ShapeError("expected " + std::to_string(active_.size()) + " modality inputs, got " +
                     std::to_string(inputs.size()));
  const Index side = cfg_.image_side;
  std::vector<Var<S>> parts;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& x = inputs[i];
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != side || x.dim(3) != side ||
        x.dim(0) != inputs.front().dim(0))
      throw ShapeError(std::string(to_string(active_[i])) + " input must be (N, 3, " + std::to_string(side) + ", " +
                       std::to_string(side) + "), got " + shape_str(x.shape()));
    auto tok = add_broadcast(embed_[i](Var<S>(patchify(x, cfg_.patch_side))),
                             i == 0 ? token_slice(pos_[0], 1, cfg_.tokens_per_modality()) : pos_[i]);
    if (i == 0) {
      auto cls = add(cls_, token_slice(pos_[0], 0, 1));
      tok = token_concat<S>({repeat_batch(cls, x.dim(0)), tok});
    }
    parts.push_back(tok);
  }
  return parts.size() == 1 ? parts.front() : token_concat(parts);
}

template <typename S>
Var<S> MmdtModel<S>::encode(const Var<S>& tokens, bool adapters) const {
  require_initialized();
  const auto sp = spans();
  Var<S> x = tokens;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i](x);
    if (adapters) x = ama_forward(x, sp, ama_[i]);
  }
  return norm_(x);
}

template <typename S>
Var<S> MmdtModel<S>::forward(const std::vector<Tensor<S>>& inputs, bool adapters) const {
  auto x = encode(embed_tokens(inputs), adapters);
  auto logits = head_(token_slice(x, 0, 1));
  return reshape(logits, {logits.dim(0), cfg_.num_classes});
}

template <typename S>
void MmdtModel<S>::load_backbone(const NamedTensors<S>& state) {
  require_initialized();
  for (const auto& e : store_.entries()) {
    if (!is_backbone(e.name)) continue;
    auto it = state.find(e.name);
    std::string source = e.name;
    if (it == state.end() && (e.name.rfind("embed.", 0) == 0 || e.name.rfind("pos.", 0) == 0)) {
      const auto dot = e.name.find('.');
      const auto rest = e.name.substr(e.name.find('.', dot + 1) == std::string::npos ? e.name.size()
                                                                                      : e.name.find('.', dot + 1));
      source = e.name.substr(0, dot) + ".rgb" + rest;
      it = state.find(source);
    }
    if (it == state.end()) throw StateError("pretrained weights lack '" + e.name + "'");
    Tensor<S> value = it->second;
    if (source != e.name && e.name.rfind("pos.", 0) == 0) {
      // RGB table carries the class position in row 0.
      const Index d = cfg_.token_dim, n = cfg_.tokens_per_modality();
      if (value.size() != (n + 1) * d) throw ShapeError("pretrained pos.rgb has the wrong size");
      Tensor<S> table(Shape{1, n, d});
      table.flat() = value.flat().segment(d, n * d);
      value = std::move(table);
    }
    if (value.shape() != e.var.shape())
      throw ShapeError("pretrained '" + source + "' has shape " + shape_str(value.shape()) + ", expected " +
                       shape_str(e.var.shape()));
    auto v = e.var;
    v.mutable_value() = std::move(value);
  }
}

template class MmdtModel<float>;
template class MmdtModel<double>;
template Tensor<float> patchify(const Tensor<float>&, Index);
template Tensor<double> patchify(const Tensor<double>&, Index);

std::vector<Tensor<float>> model_inputs(const MmdtModel<float>& model, std::span<const ModalityBundle> bundles) {
  if (bundles.empty()) throw BatchError("no bundles to classify");
  std::vector<Tensor<float>> out;
  for (auto m : model.active()) {
    std::vector<Image> maps;
    maps.reserve(bundles.size());
    for (const auto& b : bundles) {
      if (b.active != model.active())
        throw ParamError("bundle modalities " + modalities_string(b.active) + " do not match the model's " +
                         modalities_string(model.active()));
      b.validate();
      maps.push_back(b.map(m));
    }
    auto t = to_batch<float>(std::span<const Image>(maps));
    if (m == Modality::kRgb) t.flat().array() = t.flat().array() * 2.f - 1.f;
    out.push_back(std::move(t));
  }
  return out;
}

Tensor<float> embed_tokens(const ModalityBundle& bundle, const MmdtModel<float>& model) {
  normalize_modalities(bundle.active);
  NoGradGuard no_grad;
  auto tok = model.embed_tokens(model_inputs(model, std::span<const ModalityBundle>(&bundle, 1))).value();
  return tok.reshaped({tok.dim(1), tok.dim(2)});
}

namespace {

std::vector<double> softmax_recaptured(const Tensor<float>& logits) {
  std::vector<double> out;
  const Index n = logits.dim(0), k = logits.dim(1);
  for (Index b = 0; b < n; ++b) {
    double mx = -INFINITY;
    for (Index j = 0; j < k; ++j) mx = std::max(mx, double(logits.data()[b * k + j]));
    double z = 0;
    for (Index j = 0; j < k; ++j) z += std::exp(double(logits.data()[b * k + j]) - mx);
    out.push_back(std::exp(double(logits.data()[b * k + 1]) - mx) / z);
  }
  return out;
}

}  // namespace

std::pair<double, double> classify(const ModalityBundle& bundle, const MmdtModel<float>& model) {
  if (!model.initialized()) throw StateError("model is not initialized");
  const double p = recaptured_probabilities(std::span<const ModalityBundle>(&bundle, 1), model).front();
  return {1.0 - p, p};
}

std::vector<double> recaptured_probabilities(std::span<const ModalityBundle> bundles, const MmdtModel<float>& model,
                                             Index chunk) {
  if (!model.initialized()) throw StateError("model is not initialized");
  NoGradGuard no_grad;
  std::vector<double> out;
  for (std::size_t i = 0; i < bundles.size(); i += static_cast<std::size_t>(chunk)) {
    const auto part = bundles.subspan(i, std::min<std::size_t>(chunk, bundles.size() - i));
    const auto p = softmax_recaptured(model.forward(model_inputs(model, part)).value());
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

TraceProvider disentangler_traces(const Disentangler<float>& net) {
  auto cache = std::make_shared<std::map<std::string, ForensicTrace>>();
  auto mutex = std::make_shared<std::mutex>();
  return [&net, cache, mutex](const LabeledPatch& patch) {
    {
      std::lock_guard lock(*mutex);
      if (auto it = cache->find(patch.id); it != cache->end()) return it->second;
    }
    auto trace = disentangle(net, patch.rgb);
    std::lock_guard lock(*mutex);
    return cache->emplace(patch.id, std::move(trace)).first->second;
  };
}

void FinetuneConfig::validate() const {
  if (!(learning_rate >= 0) || !(weight_decay >= 0)) throw ParamError("learning_rate and weight_decay must be >= 0");
  if (batch_size < 1 || max_epochs < 1 || patience < 0) throw ParamError("batch_size and max_epochs must be >= 1");
}

namespace {

std::vector<ModalityBundle> bundles_for(const std::vector<LabeledPatch>& patches, const TraceProvider& traces,
                                        const std::vector<Modality>& active) {
  std::vector<ModalityBundle> out;
  out.reserve(patches.size());
  for (const auto& p : patches) {
    ForensicTrace tr;
    try {
      tr = traces(p);
    } catch (const std::exception& e) {
      throw TraceError("trace computation failed for patch '" + p.id + "': " + e.what());
    }
    out.push_back(make_bundle(p.rgb, tr, active));
  }
  return out;
}

double accuracy(const std::vector<double>& p_recaptured, const std::vector<LabeledPatch>& patches) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < patches.size(); ++i)
    hit += (p_recaptured[i] >= 0.5) == (patches[i].label == Label::kRecaptured);
  return static_cast<double>(hit) / static_cast<double>(patches.size());
}

}  // namespace

FinetuneResult finetune(MmdtModel<float>& model, const std::vector<LabeledPatch>& train, const TraceProvider& traces,
                        const FinetuneConfig& cfg, const std::vector<LabeledPatch>& val) {
  cfg.validate();
  if (!model.initialized()) throw StateError("model is not initialized");
  if (train.empty()) throw BatchError("finetune needs training patches");
  model.params().set_trainable([](const std::string& n) { return !MmdtModel<float>::is_backbone(n); });

  const auto train_bundles = bundles_for(train, traces, model.active());
  const auto val_bundles = bundles_for(val, traces, model.active());
  std::vector<int> labels;
  for (const auto& p : train) labels.push_back(static_cast<int>(p.label));

  Adam<float> opt(model.params().trainable(),
                  {cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  FinetuneResult result;
  double best_val = -1;
  NamedTensors<float> best_state;
  int since_best = 0;
  const auto snapshot = [&] {
    NamedTensors<float> s;
    for (const auto& e : model.params().entries())
      if (!MmdtModel<float>::is_backbone(e.name)) s.emplace(e.name, e.var.value());
    return s;
  };

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - i);
      std::vector<ModalityBundle> batch;
      std::vector<int> y;
      for (std::size_t j = 0; j < n; ++j) {
        batch.push_back(train_bundles[order[i + j]]);
        y.push_back(labels[order[i + j]]);
      }
      auto logits = model.forward(model_inputs(model, batch));
      auto loss = cross_entropy(logits, y);
      opt.zero_grad();
      backward(loss);
      opt.step();
      opt.zero_grad();
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(n);
      const auto p = softmax_recaptured(logits.value());
      for (std::size_t j = 0; j < n; ++j) hits += (p[j] >= 0.5) == (y[j] == 1);
    }
    if (!std::isfinite(loss_sum)) throw NumericError("non-finite loss in finetune epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(train.size());
    if (!val.empty()) {
      rec.val_accuracy = accuracy(recaptured_probabilities(val_bundles, model), val);
      if (rec.val_accuracy > best_val) {
        best_val = rec.val_accuracy;
        result.best_epoch = epoch;
        best_state = snapshot();
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(rec);
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
    if (rec.train_accuracy >= cfg.target_train_accuracy) break;
  }
  if (!best_state.empty()) model.params().assign(best_state);
  return result;
}

void save_model(const MmdtModel<float>& model, const std::filesystem::path& path,
                const std::map<std::string, std::string>& extra) {
  if (!model.initialized()) throw StateError("model is not initialized");
  Archive a;
  a.put(model.params().state());
  a.metadata = extra;
  const auto& c = model.config();
  a.metadata["kind"] = "mmdt";
  a.metadata["patch_side"] = std::to_string(c.patch_side);
  a.metadata["token_dim"] = std::to_string(c.token_dim);
  a.metadata["depth"] = std::to_string(c.depth);
  a.metadata["heads"] = std::to_string(c.heads);
  a.metadata["mlp_ratio"] = std::to_string(c.mlp_ratio);
  a.metadata["ama_hidden"] = std::to_string(c.ama_hidden);
  a.metadata["num_classes"] = std::to_string(c.num_classes);
  a.metadata["image_side"] = std::to_string(c.image_side);
  a.metadata["modalities"] = modalities_string(model.active());
  save_archive(a, path);
}

MmdtModel<float> load_model(const std::filesystem::path& path) {
  const Archive a = load_archive(path);
  if (a.meta("kind") != "mmdt") throw StateError(path.string() + " is not a classifier checkpoint");
  const auto num = [&](const char* key) { return static_cast<Index>(std::stoll(a.meta(key))); };
  BackboneConfig c;
  c.patch_side = num("patch_side");
  c.token_dim = num("token_dim");
  c.depth = num("depth");
  c.heads = num("heads");
  c.mlp_ratio = num("mlp_ratio");
  c.ama_hidden = num("ama_hidden");
  c.num_classes = num("num_classes");
  c.image_side = num("image_side");
  MmdtModel<float> model(c, parse_modalities(a.meta("modalities")));
  model.params().load_state(a.get<float>());
  return model;
}

}  // namespace mmdt
