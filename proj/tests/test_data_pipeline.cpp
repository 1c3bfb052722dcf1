#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>

#include "mmdt/data_pipeline.hpp"
#include "mmdt/synthetic.hpp"

using namespace mmdt;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mmdt_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image random_image(Index h, Index w, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image im = make_image(h, w);
  for (auto& v : im.values()) v = u(rng);
  return im;
}

DatasetManifest toy_manifest(int per_class) {
  DatasetManifest m;
  for (int i = 0; i < per_class; ++i) {
    m.entries.push_back({"genuine/" + std::to_string(i) + ".png", Label::kGenuine, "a"});
    m.entries.push_back({"recaptured/" + std::to_string(i) + ".png", Label::kRecaptured, "a"});
  }
  return m;
}

}  // namespace

TEST_CASE("ingest enumerates both label folders") {
  const auto root = scratch_dir("ingest");
  fs::create_directories(root / "genuine");
  fs::create_directories(root / "recaptured");
  for (auto name : {"b.png", "a.png"}) write_png(random_image(4, 5, 1), root / "genuine" / name);
  for (auto name : {"c.png", "d.png", "e.png"})
    write_png(random_image(4, 5, 2), root / "recaptured" / name);

  const auto first = ingest_dataset(root, "desk");
  CHECK(first.manifest.entries.size() == 5);
  CHECK(first.manifest.count(Label::kGenuine) == 2);
  CHECK(first.manifest.entries[0].image_ref == "genuine/a.png");
  CHECK(first.rejects.empty());
  CHECK(ingest_dataset(root, "desk").manifest == first.manifest);

  SUBCASE("empty files are reported, not dropped silently") {
    std::ofstream(root / "recaptured" / "f.png").close();
    const auto r = ingest_dataset(root);
    CHECK(r.manifest.entries.size() == 5);
    REQUIRE(r.rejects.size() == 1);
    CHECK(r.rejects[0].first == "recaptured/f.png");
  }
  SUBCASE("missing folder") {
    fs::remove_all(root / "recaptured");
    CHECK_THROWS_AS(ingest_dataset(root), IngestError);
  }
}

TEST_CASE("manifest text round trip") {
  const auto root = scratch_dir("manifest");
  auto m = toy_manifest(3);
  save_manifest(m, root / "m.tsv");
  CHECK(load_manifest(root / "m.tsv").entries == m.entries);
  m.entries.push_back(m.entries[0]);
  CHECK_THROWS_AS(validate_manifest(m), ParamError);
  CHECK_THROWS_AS(validate_manifest(DatasetManifest{}), ParamError);
}

TEST_CASE("image files round trip through PNG at 8 bits") {
  const auto root = scratch_dir("png");
  const Image im = random_image(9, 7, 3);
  write_png(im, root / "x.png");
  const Image back = read_image(root / "x.png");
  REQUIRE(back.shape() == im.shape());
  CHECK(max_abs_diff(back, im) <= 0.5f / 255.f + 1e-6f);
}

TEST_CASE("patch grid") {
  CHECK(extract_patches(make_image(448, 448)).size() == 4);
  CHECK(extract_patches(make_image(300, 500)).size() == 2);
  CHECK_THROWS_AS(extract_patches(make_image(223, 300)), PatchError);
  CHECK_THROWS_AS(extract_patches(make_image(300, 223), kPatchSide, PatchMode::kEval), PatchError);

  // Patches are cropped in row-major grid order.
  Image im = make_image(448, 448);
  for (Index y = 0; y < 448; ++y)
    for (Index x = 0; x < 448; ++x) im.at(y, x, 0) = static_cast<float>((y / 224) * 2 + x / 224);
  const auto patches = extract_patches(im);
  for (int i = 0; i < 4; ++i) CHECK(patches[i].at(10, 10, 0) == static_cast<float>(i));
}

TEST_CASE("patch count and eval coverage hold over a range of sizes") {
  for (Index h = 224; h <= 700; h += 37)
    for (Index w = 224; w <= 700; w += 53) {
      CHECK(patch_origins(h, w, 224, PatchMode::kTrain).size() ==
            static_cast<std::size_t>((h / 224) * (w / 224)));
      std::vector<char> covered(static_cast<std::size_t>(h * w), 0);
      for (auto [y, x] : patch_origins(h, w, 224, PatchMode::kEval)) {
        REQUIRE(y >= 0);
        REQUIRE(x >= 0);
        REQUIRE(y + 224 <= h);
        REQUIRE(x + 224 <= w);
        for (Index r = y; r < y + 224; ++r)
          std::fill_n(covered.begin() + r * w + x, 224, char{1});
      }
      CHECK(std::all_of(covered.begin(), covered.end(), [](char c) { return c == 1; }));
    }
}

TEST_CASE("bayer matrices are permutations with the recursive layout") {
  CHECK(bayer_matrix(2) == std::vector<int>{0, 2, 3, 1});
  for (int n : {2, 4, 8}) {
    auto m = bayer_matrix(n);
    std::sort(m.begin(), m.end());
    for (int i = 0; i < n * n; ++i) CHECK(m[i] == i);
  }
  const auto b4 = bayer_matrix(4);
  CHECK(b4[0] == 0);
  CHECK(b4[1] == 8);
  CHECK(b4[5] == 4);
  CHECK_THROWS_AS(bayer_matrix(3), ParamError);
}

TEST_CASE("identity recapture leaves the image untouched") {
  const Image im = random_image(16, 12, 4);
  CHECK(bitwise_equal(simulate_recapture(im, RecaptureParams::identity()), im));
}

TEST_CASE("ordered dither on mid gray produces the 2x2 Bayer tile") {
  RecaptureParams p;
  p.dither_cell = 2;
  p.dither_blend = 1.0;
  const Image out = simulate_recapture(make_image(6, 6, 0.5f), p);
  // thresholds (B + 1/2) / 4 = [[1/8, 5/8], [7/8, 3/8]]
  const float tile[2][2] = {{1, 0}, {0, 1}};
  for (Index y = 0; y < 6; ++y)
    for (Index x = 0; x < 6; ++x)
      for (Index c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == tile[y % 2][x % 2]);
}

TEST_CASE("recapture is deterministic and validates its parameters") {
  const Image im = random_image(32, 32, 5);
  auto p = desk_recapture_params();
  p.seed = 99;
  CHECK(bitwise_equal(simulate_recapture(im, p), simulate_recapture(im, p)));
  auto q = p;
  q.seed = 100;
  CHECK_FALSE(bitwise_equal(simulate_recapture(im, p), simulate_recapture(im, q)));

  for (auto mutate : std::vector<std::function<void(RecaptureParams&)>>{
           [](RecaptureParams& r) { r.blur_sigma1 = -1; },
           [](RecaptureParams& r) { r.blur_sigma2 = -0.1; },
           [](RecaptureParams& r) { r.dither_blend = 1.5; },
           [](RecaptureParams& r) { r.dither_blend = -0.1; },
           [](RecaptureParams& r) { r.dither_cell = 3; },
           [](RecaptureParams& r) { r.noise_std = -1; }}) {
    auto bad = p;
    mutate(bad);
    CHECK_THROWS_AS(simulate_recapture(im, bad), ParamError);
  }
}

TEST_CASE("gaussian blur preserves constants and mass") {
  const Image flat = make_image(10, 13, 0.4f);
  CHECK(max_abs_diff(gaussian_blur(flat, 1.3), flat) < 1e-6f);
  Image dot = make_image(21, 21);
  dot.at(10, 10, 1) = 1.f;
  const Image b = gaussian_blur(dot, 1.0);
  double total = 0;
  for (Index y = 0; y < 21; ++y)
    for (Index x = 0; x < 21; ++x) total += b.at(y, x, 1);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(b.at(10, 10, 1) > b.at(10, 11, 1));
  CHECK(b.at(10, 11, 1) == doctest::Approx(b.at(11, 10, 1)));
}

TEST_CASE("stratified split arithmetic") {
  const auto m = toy_manifest(10);
  const auto parts = split_manifest(m, {0.8, 0.1, 0.1}, 7);
  CHECK(parts[0].entries.size() == 16);
  CHECK(parts[1].entries.size() == 2);
  CHECK(parts[2].entries.size() == 2);
  for (const auto& p : parts) CHECK(p.count(Label::kGenuine) * 2 == p.entries.size());
  CHECK(parts[0].count(Label::kGenuine) == 8);

  CHECK_THROWS_AS(split_manifest(m, {0.5, 0.5, 0.5}, 7), SplitError);
  CHECK_THROWS_AS(split_manifest(m, {1.0, 0.0, 0.0}, 7), SplitError);
  CHECK_THROWS_AS(split_manifest(toy_manifest(2), {0.8, 0.1, 0.1}, 7), SplitError);

  const auto again = split_manifest(m, {0.8, 0.1, 0.1}, 7);
  for (int i = 0; i < 3; ++i) CHECK(again[i] == parts[i]);
}

TEST_CASE("splits partition the manifest with per-class proportions within one entry") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    DatasetManifest m;
    const int ng = std::uniform_int_distribution<int>(3, 40)(rng);
    const int nr = std::uniform_int_distribution<int>(3, 40)(rng);
    for (int i = 0; i < ng; ++i) m.entries.push_back({"g" + std::to_string(i), Label::kGenuine, ""});
    for (int i = 0; i < nr; ++i) m.entries.push_back({"r" + std::to_string(i), Label::kRecaptured, ""});
    std::uniform_real_distribution<double> u(0.1, 1.0);
    std::array<double, 3> ratios{u(rng), u(rng), u(rng)};
    const double s = ratios[0] + ratios[1] + ratios[2];
    for (auto& r : ratios) r /= s;
    ratios[2] = 1.0 - ratios[0] - ratios[1];

    const auto parts = split_manifest(m, ratios, trial);
    std::multiset<std::string> seen;
    for (const auto& p : parts)
      for (const auto& e : p.entries) seen.insert(e.image_ref);
    CHECK(seen.size() == m.entries.size());
    CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == m.entries.size());
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(static_cast<double>(parts[i].count(Label::kGenuine)) - ratios[i] * ng) <= 1.0 + 1e-9);
      CHECK(std::abs(static_cast<double>(parts[i].count(Label::kRecaptured)) - ratios[i] * nr) <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("synthetic documents are deterministic and classes differ in texture") {
  const Image a = render_document(224, 224, 3);
  CHECK(bitwise_equal(a, render_document(224, 224, 3)));
  CHECK_FALSE(bitwise_equal(a, render_document(224, 224, 4)));
  for (float v : a.values()) REQUIRE((v >= 0.f && v <= 1.f));

  const auto samples = synthesize_samples(2, 224, 224, desk_recapture_params(), 1);
  REQUIRE(samples.size() == 4);
  CHECK(samples[0].label == Label::kGenuine);
  CHECK(samples[3].label == Label::kRecaptured);

  const auto root = scratch_dir("synth");
  const auto m = write_synthetic_dataset(root, 2, 224, 224, desk_recapture_params(), 1, "desk");
  CHECK(ingest_dataset(root, "desk").manifest.entries == m.entries);
  CHECK(load_manifest(root / "manifest.tsv").entries == m.entries);
}
