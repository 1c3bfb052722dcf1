#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "mmdt/trainer.hpp"

using namespace mmdt;
namespace fs = std::filesystem;

namespace {

Image random_image(Index side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image im = make_image(side, side);
  for (Index i = 0; i < im.size(); ++i) im[i] = u(rng);
  return im;
}

TrainData tiny_data(std::size_t per_class, std::uint64_t seed) {
  TrainData d;
  for (std::size_t i = 0; i < per_class; ++i) {
    d.genuine.push_back(random_image(32, seed + 2 * i));
    d.recaptured.push_back(random_image(32, seed + 2 * i + 1));
  }
  return d;
}

TrainConfig tiny_config(long iterations) {
  TrainConfig c;
  c.total_iterations = iterations;
  c.learning_rate = 1e-3;
  c.disentangler.base = 1;
  c.synthesizer.base = 1;
  c.synthesizer.res_blocks = 1;
  c.discriminator.base = 1;
  c.checkpoint_every = 0;
  c.val_every = 0;
  c.epoch_size = 2;
  c.seed = 5;
  return c;
}

template <typename S>
NamedTensors<S> snapshot(const ParamStore<S>& p) {
  return p.state();
}

template <typename S>
bool same(const NamedTensors<S>& a, const NamedTensors<S>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a)
    if (!(v.flat() == b.at(k).flat())) return false;
  return true;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mmdt_test_trainer" / name;
  fs::remove_all(dir);
  return dir;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

Tensor<float> batch_of(const std::vector<Image>& images) { return to_batch<float>(std::span<const Image>(images)); }

}  // namespace

TEST_CASE("schedule alternates the discriminator part") {
  CHECK_THROWS_AS(schedule(0), ParamError);
  CHECK(schedule(1) == std::set<TrainPart>{TrainPart::kGeneration, TrainPart::kSelfSupervision});
  CHECK(schedule(2) == std::set<TrainPart>{TrainPart::kGeneration, TrainPart::kSelfSupervision, TrainPart::kDiscriminator});
  for (long e = 1; e < 20; ++e) CHECK((schedule(e).count(TrainPart::kDiscriminator) == 1) == (e % 2 == 0));
}

TEST_CASE("config validation") {
  auto c = tiny_config(1);
  c.batch_size = 3;
  CHECK_THROWS_AS(c.validate(), ParamError);
  c = tiny_config(-1);
  CHECK_THROWS_AS(c.validate(), ParamError);
  c = tiny_config(1);
  c.learning_rate = -1;
  CHECK_THROWS_AS(TrainState{c}, ParamError);
}

TEST_CASE("steps freeze and refresh the right parts") {
  TrainState st(tiny_config(0));
  const auto data = tiny_data(2, 10);
  const auto g = batch_of(data.genuine), r = batch_of(data.recaptured);
  // epoch_size 2 is set through train(); train_step alone keeps one iteration per epoch.
  const auto d0 = snapshot(st.discriminators.params());
  const auto dis0 = snapshot(st.disentangler.params());
  const auto syn0 = snapshot(st.synthesizer.params());

  const auto rec1 = train_step(st, g, r);
  CHECK(rec1.iteration == 1);
  CHECK(rec1.epoch == 1);
  CHECK_FALSE(rec1.discriminator_updated);
  CHECK(same(snapshot(st.discriminators.params()), d0));
  CHECK_FALSE(same(snapshot(st.disentangler.params()), dis0));
  CHECK_FALSE(same(snapshot(st.synthesizer.params()), syn0));
  CHECK(same(snapshot(st.frozen.params()), dis0));

  const auto dis1 = snapshot(st.disentangler.params());
  const auto rec2 = train_step(st, g, r);
  CHECK(rec2.epoch == 2);
  CHECK(rec2.discriminator_updated);
  CHECK_FALSE(same(snapshot(st.discriminators.params()), d0));
  // Epoch 2 opened before the step, so the frozen copy holds the parameters after step 1.
  CHECK(same(snapshot(st.frozen.params()), dis1));
  CHECK(std::isfinite(rec2.total));
  CHECK(rec2.total == doctest::Approx(total_loss(rec2.terms, LossWeights{})));
}

TEST_CASE("zero iterations leave the state untouched") {
  auto cfg = tiny_config(0);
  cfg.out_dir = fresh_dir("zero");
  TrainState st(cfg);
  const auto before = st.to_archive();
  const auto result = train(st, tiny_data(2, 1));
  CHECK(result.history.empty());
  CHECK(st.iteration() == 0);
  const auto after = st.to_archive();
  for (const auto& [k, v] : before.tensors)
    CHECK(std::get<Tensor<float>>(v).flat() == std::get<Tensor<float>>(after.tensors.at(k)).flat());
  CHECK_FALSE(fs::exists(cfg.out_dir / "losses.csv"));
}

TEST_CASE("a short run writes the loss log and checkpoints") {
  auto cfg = tiny_config(10);
  cfg.out_dir = fresh_dir("short");
  cfg.checkpoint_every = 5;
  TrainState st(cfg);
  const auto result = train(st, tiny_data(3, 20));
  CHECK(result.history.size() == 10);
  CHECK(count_lines(cfg.out_dir / "losses.csv") == 11);
  std::ifstream csv(cfg.out_dir / "losses.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "iter,L_R,L_G,L_D,L_P,L");
  CHECK(fs::exists(cfg.out_dir / "checkpoint_0000005.ckpt"));
  CHECK(fs::exists(cfg.out_dir / "checkpoint_0000010.ckpt"));
  CHECK(fs::exists(cfg.out_dir / "final.ckpt"));
  CHECK(count_lines(cfg.out_dir / "train.log") == 0);

  // epoch_size 2: iterations 1-2 epoch 1, 3-4 epoch 2, ...
  for (const auto& rec : result.history) {
    CHECK(rec.epoch == (rec.iteration - 1) / 2 + 1);
    CHECK(rec.discriminator_updated == (rec.epoch % 2 == 0));
  }

  const Archive a = load_archive(cfg.out_dir / "final.ckpt");
  CHECK(a.meta("iteration") == "10");
  TrainState restored(cfg);
  restored.disentangler.params().load_state(a.get<float>("disentangler."));
  CHECK(same(snapshot(restored.disentangler.params()), snapshot(st.disentangler.params())));
}

TEST_CASE("log gets one line per hundred iterations") {
  auto cfg = tiny_config(200);
  cfg.out_dir = fresh_dir("log");
  cfg.disentangler.base = 1;
  TrainState st(cfg);
  train(st, tiny_data(2, 30));
  CHECK(count_lines(cfg.out_dir / "train.log") == 2);
  CHECK(count_lines(cfg.out_dir / "losses.csv") == 201);
}

TEST_CASE("validation selects the lowest pixel loss") {
  auto cfg = tiny_config(6);
  cfg.val_every = 2;
  cfg.out_dir = fresh_dir("val");
  TrainState st(cfg);
  const auto result = train(st, tiny_data(3, 40), tiny_data(2, 90));
  REQUIRE(result.validation.size() == 3);
  auto best = result.validation.front();
  for (const auto& v : result.validation)
    if (v.pixel_loss < best.pixel_loss) best = v;
  CHECK(result.best_iteration == best.iteration);
  CHECK(fs::exists(cfg.out_dir / "best.ckpt"));
  CHECK(load_archive(cfg.out_dir / "best.ckpt").meta("iteration") == std::to_string(best.iteration));
}

TEST_CASE("runs are reproducible for a fixed seed") {
  auto run = [] {
    TrainState st(tiny_config(4));
    return train(st, tiny_data(2, 50)).history;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].total == b[i].total);
}

TEST_CASE("a non-finite loss names the last good checkpoint") {
  auto cfg = tiny_config(4);
  cfg.out_dir = fresh_dir("nan");
  cfg.checkpoint_every = 2;
  TrainState st(cfg);
  const auto data = tiny_data(2, 60);
  train(st, data);
  const auto last = st.last_checkpoint;
  REQUIRE_FALSE(last.empty());
  auto w = st.disentangler.params().get("t_head.bias");
  w.mutable_value().flat().setConstant(NAN);
  try {
    train_step(st, batch_of(data.genuine), batch_of(data.recaptured));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find(last.string()) != std::string::npos);
  }
}

TEST_CASE("mismatched batches are rejected") {
  TrainState st(tiny_config(0));
  const auto data = tiny_data(2, 70);
  std::vector<Image> one{data.recaptured.front()};
  CHECK_THROWS_AS(train_step(st, batch_of(data.genuine), batch_of(one)), BatchError);
  CHECK_THROWS_AS(train(st, TrainData{}), BatchError);
}
