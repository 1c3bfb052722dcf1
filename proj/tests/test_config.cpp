#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <sstream>

#include "mmdt/config.hpp"
#include "mmdt/image.hpp"
#include "mmdt/workflows.hpp"

using namespace mmdt;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults carry the published hyperparameters") {
  const RunConfig c;
  const auto& w = c.train.weights;
  CHECK(w.lambda1 == 1.0);
  CHECK(w.lambda2 == 1.0);
  CHECK(w.lambda3 == 1.0);
  CHECK(w.lambda4 == 10.0);
  CHECK(w.alpha1 == 10.0);
  CHECK(w.alpha2 == 1e-4);
  CHECK(c.train.learning_rate == 2e-5);
  CHECK(c.train.batch_size == 4);
  CHECK(c.train.total_iterations == 100000);
  CHECK(c.finetune.learning_rate == 1e-4);
  CHECK(c.finetune.batch_size == 64);
  CHECK(c.finetune.max_epochs == 30);
  CHECK(c.finetune.weight_decay == 0.05);
  CHECK(c.backbone.token_dim == 768);
  CHECK(c.backbone.ama_hidden == 64);

  const std::string text = to_text(c);
  std::vector<std::string> written;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) written.push_back(line.substr(0, line.find(" = ")));
  CHECK(written == config_keys());
  for (const auto& key : config_keys()) CHECK(std::count(written.begin(), written.end(), key) == 1);
  CHECK(text.find("loss.lambda4 = 10\n") != std::string::npos);
  CHECK(text.find("train.learning_rate = 2e-05\n") != std::string::npos);
  CHECK(text.find("finetune.weight_decay = 0.05\n") != std::string::npos);
}

TEST_CASE("text round trip") {
  RunConfig c;
  c.train.learning_rate = 3.125e-4;
  c.train.seed = 123456789012345ULL;
  c.backbone = BackboneConfig::desk();
  c.recapture.color_gain = {0.9, 0.8, 1.1};
  c.recapture.dither_cell = 8;
  c.backbone.pretrained_weights = "weights/vit.ckpt";
  const RunConfig back = parse_run_config(to_text(c));
  CHECK(to_text(back) == to_text(c));
  CHECK(back.train.learning_rate == c.train.learning_rate);
  CHECK(back.recapture.color_gain == c.recapture.color_gain);
  CHECK(back.backbone.pretrained_weights == c.backbone.pretrained_weights);
  CHECK(back.train.seed == c.train.seed);
}

TEST_CASE("parsing") {
  const auto c = parse_run_config("# desk run\n\n  train.total_iterations = 10  \nbackbone.depth=4\n");
  CHECK(c.train.total_iterations == 10);
  CHECK(c.backbone.depth == 4);
  CHECK(c.backbone.token_dim == 768);

  CHECK(error_of("train.learning_rat = 1").find("line 1") != std::string::npos);
  CHECK(error_of("\n\nfoo.bar = 1").find("line 3") != std::string::npos);
  CHECK(error_of("train.batch_size = 4.5").find("train.batch_size") != std::string::npos);
  CHECK_FALSE(error_of("train.batch_size = four").empty());
  CHECK_FALSE(error_of("train.learning_rate = 1e-3x").empty());
  CHECK_FALSE(error_of("train.learning_rate = ").empty());
  CHECK_FALSE(error_of("train.seed = -1").empty());
  CHECK_FALSE(error_of("recapture.color_gain = 1,2").empty());
  CHECK_FALSE(error_of("recapture.color_gain = 1,2,3,4").empty());
  CHECK_FALSE(error_of("just words").empty());
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), IoError);
}

TEST_CASE("seeds and validation") {
  RunConfig c;
  c.set_seed(9);
  CHECK(c.train.seed == 9);
  CHECK(c.finetune.seed == 9);
  CHECK(c.recapture.seed == 9);
  c.validate();
  c.train.batch_size = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.recapture.dither_blend = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("train patches share ids and pixels with eval patches") {
  const auto root = fs::temp_directory_path() / "mmdt_test_config_patches";
  fs::remove_all(root);
  fs::create_directories(root / "genuine");
  fs::create_directories(root / "recaptured");
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (const char* dir : {"genuine", "recaptured"}) {
    Image im = make_image(300, 460);
    for (Index i = 0; i < im.size(); ++i) im[i] = u(rng);
    write_png(im, root / dir / "a.png");
  }
  const auto manifest = open_dataset(root);
  REQUIRE(manifest.entries.size() == 2);
  const auto train = manifest_patches(manifest, root, PatchMode::kTrain);
  const auto eval = manifest_patches(manifest, root, PatchMode::kEval);
  CHECK(train.size() == 2 * 2);
  CHECK(eval.size() == 2 * 6);
  for (const auto& t : train) {
    const auto it = std::find_if(eval.begin(), eval.end(), [&](const LabeledPatch& e) { return e.id == t.id; });
    REQUIRE(it != eval.end());
    CHECK(it->rgb.flat() == t.rgb.flat());
    CHECK(it->label == t.label);
  }
  const auto data = to_train_data(train);
  CHECK(data.genuine.size() == 2);
  CHECK(data.recaptured.size() == 2);

  SUBCASE("exported traces match direct disentanglement") {
    Disentangler<float> net({2, 0.5}, 8);
    const Archive a = export_traces(net, manifest, root);
    CHECK(a.meta("patches") == "12");
    const auto path = root / "traces.ckpt";
    save_archive(a, path);
    const auto provider = archived_traces(load_archive(path));
    const auto direct = disentangle(net, eval[3].rgb);
    const auto stored = provider(eval[3]);
    CHECK(stored.C.flat() == direct.C.flat());
    CHECK(stored.T.flat() == direct.T.flat());
    CHECK((stored.G.flat() - direct.G.flat()).cwiseAbs().maxCoeff() < 1e-6f);
    LabeledPatch missing{"nope#0", eval[0].rgb, Label::kGenuine};
    CHECK_THROWS_AS(provider(missing), TraceError);
  }
}

TEST_CASE("disentangler checkpoints restore their widths") {
  TrainConfig cfg;
  cfg.disentangler.base = 2;
  cfg.synthesizer.base = 1;
  cfg.synthesizer.res_blocks = 1;
  cfg.discriminator.base = 1;
  cfg.seed = 3;
  TrainState st(cfg);
  const auto path = fs::temp_directory_path() / "mmdt_test_config_dis.ckpt";
  st.save(path);
  const auto net = load_disentangler(path);
  CHECK(net.params().state().size() == st.disentangler.params().state().size());
  for (const auto& [k, v] : st.disentangler.params().state()) CHECK(net.params().state().at(k).flat() == v.flat());

  Archive other;
  other.metadata["kind"] = "mmdt";
  save_archive(other, path);
  CHECK_THROWS_AS(load_disentangler(path), StateError);
}
