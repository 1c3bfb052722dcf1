#include "mmdt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "mmdt/errors.hpp"

namespace mmdt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("bad value for " + key + ": '" + text + "'");
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Binds a numeric field reached through `ref`.
template <typename Ref>
Field number(std::string key, Ref ref) {
  using T = std::remove_cvref_t<decltype(ref(std::declval<RunConfig&>()))>;
  return {key, [ref](const RunConfig& c) { return format_number(ref(c)); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(key, v); }};
}

Field triple(std::string key, std::array<double, 3> RecaptureParams::*member) {
  return {key,
          [member](const RunConfig& c) {
            const auto& a = c.recapture.*member;
            return format_number(a[0]) + "," + format_number(a[1]) + "," + format_number(a[2]);
          },
          [member, key](RunConfig& c, const std::string& v) {
            std::array<double, 3> a{};
            std::stringstream ss(v);
            std::string part;
            std::size_t n = 0;
            while (std::getline(ss, part, ',')) {
              if (n == 3) throw ConfigError(key + " takes three comma-separated values");
              a[n++] = parse_number<double>(key, trim(part));
            }
            if (n != 3) throw ConfigError(key + " takes three comma-separated values");
            c.recapture.*member = a;
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    // disentangler training
    f.push_back(number("train.learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; }));
    f.push_back(number("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    f.push_back(number("train.total_iterations", [](auto& c) -> auto& { return c.train.total_iterations; }));
    f.push_back(number("train.beta1", [](auto& c) -> auto& { return c.train.beta1; }));
    f.push_back(number("train.beta2", [](auto& c) -> auto& { return c.train.beta2; }));
    f.push_back(number("train.seed", [](auto& c) -> auto& { return c.train.seed; }));
    f.push_back(number("train.checkpoint_every", [](auto& c) -> auto& { return c.train.checkpoint_every; }));
    f.push_back(number("train.epoch_size", [](auto& c) -> auto& { return c.train.epoch_size; }));
    f.push_back(number("train.val_every", [](auto& c) -> auto& { return c.train.val_every; }));
    f.push_back(number("loss.lambda1", [](auto& c) -> auto& { return c.train.weights.lambda1; }));
    f.push_back(number("loss.lambda2", [](auto& c) -> auto& { return c.train.weights.lambda2; }));
    f.push_back(number("loss.lambda3", [](auto& c) -> auto& { return c.train.weights.lambda3; }));
    f.push_back(number("loss.lambda4", [](auto& c) -> auto& { return c.train.weights.lambda4; }));
    f.push_back(number("loss.alpha1", [](auto& c) -> auto& { return c.train.weights.alpha1; }));
    f.push_back(number("loss.alpha2", [](auto& c) -> auto& { return c.train.weights.alpha2; }));
    f.push_back(number("disentangler.base", [](auto& c) -> auto& { return c.train.disentangler.base; }));
    f.push_back(number("disentangler.head_gain", [](auto& c) -> auto& { return c.train.disentangler.head_gain; }));
    f.push_back(number("synthesizer.base", [](auto& c) -> auto& { return c.train.synthesizer.base; }));
    f.push_back(number("synthesizer.res_blocks", [](auto& c) -> auto& { return c.train.synthesizer.res_blocks; }));
    f.push_back(number("synthesizer.head_gain", [](auto& c) -> auto& { return c.train.synthesizer.head_gain; }));
    f.push_back(number("discriminator.base", [](auto& c) -> auto& { return c.train.discriminator.base; }));
    // classifier
    f.push_back(number("backbone.patch_side", [](auto& c) -> auto& { return c.backbone.patch_side; }));
    f.push_back(number("backbone.token_dim", [](auto& c) -> auto& { return c.backbone.token_dim; }));
    f.push_back(number("backbone.depth", [](auto& c) -> auto& { return c.backbone.depth; }));
    f.push_back(number("backbone.heads", [](auto& c) -> auto& { return c.backbone.heads; }));
    f.push_back(number("backbone.mlp_ratio", [](auto& c) -> auto& { return c.backbone.mlp_ratio; }));
    f.push_back(number("backbone.ama_hidden", [](auto& c) -> auto& { return c.backbone.ama_hidden; }));
    f.push_back(number("backbone.num_classes", [](auto& c) -> auto& { return c.backbone.num_classes; }));
    f.push_back(number("backbone.image_side", [](auto& c) -> auto& { return c.backbone.image_side; }));
    f.push_back({"backbone.pretrained_weights",
                 [](const RunConfig& c) { return c.backbone.pretrained_weights.string(); },
                 [](RunConfig& c, const std::string& v) { c.backbone.pretrained_weights = v; }});
    f.push_back(number("finetune.learning_rate", [](auto& c) -> auto& { return c.finetune.learning_rate; }));
    f.push_back(number("finetune.weight_decay", [](auto& c) -> auto& { return c.finetune.weight_decay; }));
    f.push_back(number("finetune.batch_size", [](auto& c) -> auto& { return c.finetune.batch_size; }));
    f.push_back(number("finetune.max_epochs", [](auto& c) -> auto& { return c.finetune.max_epochs; }));
    f.push_back(number("finetune.patience", [](auto& c) -> auto& { return c.finetune.patience; }));
    f.push_back(number("finetune.beta1", [](auto& c) -> auto& { return c.finetune.beta1; }));
    f.push_back(number("finetune.beta2", [](auto& c) -> auto& { return c.finetune.beta2; }));
    f.push_back(number("finetune.seed", [](auto& c) -> auto& { return c.finetune.seed; }));
    f.push_back(number("finetune.target_train_accuracy",
                       [](auto& c) -> auto& { return c.finetune.target_train_accuracy; }));
    // recapture simulator
    f.push_back(number("recapture.blur_sigma1", [](auto& c) -> auto& { return c.recapture.blur_sigma1; }));
    f.push_back(number("recapture.dither_blend", [](auto& c) -> auto& { return c.recapture.dither_blend; }));
    f.push_back(number("recapture.dither_cell", [](auto& c) -> auto& { return c.recapture.dither_cell; }));
    f.push_back(triple("recapture.color_gain", &RecaptureParams::color_gain));
    f.push_back(triple("recapture.color_offset", &RecaptureParams::color_offset));
    f.push_back(number("recapture.blur_sigma2", [](auto& c) -> auto& { return c.recapture.blur_sigma2; }));
    f.push_back(number("recapture.noise_std", [](auto& c) -> auto& { return c.recapture.noise_std; }));
    f.push_back(number("recapture.seed", [](auto& c) -> auto& { return c.recapture.seed; }));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  train.seed = seed;
  finetune.seed = seed;
  recapture.seed = seed;
}

void RunConfig::validate() const {
  try {
    train.validate();
    backbone.validate();
    finetune.validate();
    recapture.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return field(key).get(config); }

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected 'key = value'");
    try {
      set_config_value(c, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(n) + ": " + e.what());
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace mmdt
