#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mmdt/disentangler.hpp"
#include "support/gradcheck.hpp"

using namespace mmdt;

namespace {

Image random_image(Index h, Index w, std::uint64_t seed, float lo = 0.f, float hi = 1.f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Image im = make_image(h, w);
  for (Index i = 0; i < im.size(); ++i) im[i] = u(rng);
  return im;
}

// Written from the definition: sample at ((o + 0.5) * in / out - 0.5), clamped to the edge.
double bilinear_at(const Image& src, Index oy, Index ox, Index c, Index out_h, Index out_w) {
  const Index h = image_height(src), w = image_width(src);
  auto coord = [](Index o, Index in, Index out) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  const double sy = coord(oy, h, out_h), sx = coord(ox, w, out_w);
  const Index y0 = static_cast<Index>(std::floor(sy)), x0 = static_cast<Index>(std::floor(sx));
  const Index y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  auto px = [&](Index y, Index x) { return static_cast<double>(src.at(y, x, c)); };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) + fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
}

double max_abs_diff(const Image& a, const Image& b) {
  return (a.flat() - b.flat()).cwiseAbs().maxCoeff();
}

template <typename S>
void zero_heads(Disentangler<S>& net) {
  for (const auto& e : net.params().entries())
    if (e.name.rfind("c_head", 0) == 0 || e.name.rfind("t_head", 0) == 0) {
      auto v = e.var;
      v.mutable_value().flat().setZero();
    }
}

}  // namespace

TEST_CASE("resize_up matches an independent bilinear resampler") {
  const Image c = random_image(kContentSide, kContentSide, 5, -1.f, 1.f);
  const Image up = resize_up(c);
  REQUIRE(up.shape() == Shape{kTraceSide, kTraceSide, 3});
  double worst = 0;
  for (Index y = 0; y < kTraceSide; ++y)
    for (Index x = 0; x < kTraceSide; ++x)
      for (Index ch = 0; ch < 3; ++ch)
        worst = std::max(worst, std::abs(bilinear_at(c, y, x, ch, kTraceSide, kTraceSide) - up.at(y, x, ch)));
  CHECK(worst < 1e-6);
}

TEST_CASE("resize_up keeps zeros and constants") {
  CHECK(resize_up(make_image(kContentSide, kContentSide)).flat().cwiseAbs().maxCoeff() == 0.f);
  const Image up = resize_up(make_image(kContentSide, kContentSide, 0.37f));
  CHECK(up.flat().minCoeff() == doctest::Approx(0.37).epsilon(1e-6));
  CHECK(up.flat().maxCoeff() == doctest::Approx(0.37).epsilon(1e-6));
}

TEST_CASE("resize_up is linear") {
  const Image a = random_image(8, 8, 1), b = random_image(8, 8, 2);
  Image sum = a;
  sum.flat() = 2.f * a.flat() + b.flat();
  Image expect = resize_up(a, 32, 32);
  expect.flat() = 2.f * expect.flat() + resize_up(b, 32, 32).flat();
  CHECK(max_abs_diff(resize_up(sum, 32, 32), expect) < 1e-5);
}

TEST_CASE("disentangle returns trace components of the documented shapes") {
  Disentangler<float> net({4}, 3);
  const Image im = random_image(kTraceSide, kTraceSide, 9);
  const auto tr = disentangle(net, im);
  CHECK(tr.C.shape() == Shape{kContentSide, kContentSide, 3});
  CHECK(tr.T.shape() == Shape{kTraceSide, kTraceSide, 3});
  CHECK(tr.G.shape() == Shape{kTraceSide, kTraceSide, 3});

  SUBCASE("G is the upsampled content trace plus the texture trace") {
    Image expect = resize_up(tr.C);
    expect.flat() += tr.T.flat();
    CHECK(max_abs_diff(tr.G, expect) < 1e-6);
  }
  SUBCASE("components stay in the tanh range") {
    CHECK(tr.C.flat().cwiseAbs().maxCoeff() <= 1.f);
    CHECK(tr.T.flat().cwiseAbs().maxCoeff() <= 1.f);
  }
  SUBCASE("inference is deterministic") {
    const auto again = disentangle(net, im);
    CHECK(max_abs_diff(again.G, tr.G) == 0.0);
    CHECK(max_abs_diff(again.C, tr.C) == 0.0);
  }
  SUBCASE("batched and single-image calls agree") {
    const std::vector<Image> two{im, random_image(kTraceSide, kTraceSide, 10)};
    const auto both = disentangle(net, std::span<const Image>(two));
    REQUIRE(both.size() == 2);
    CHECK(max_abs_diff(both[0].G, tr.G) < 1e-5);
  }
}

TEST_CASE("zeroed heads give zero traces and a lossless reconstruction") {
  Disentangler<float> net({2}, 4);
  zero_heads(net);
  const Image im = random_image(kTraceSide, kTraceSide, 11);
  const auto tr = disentangle(net, im);
  CHECK(tr.C.flat().cwiseAbs().maxCoeff() == 0.f);
  CHECK(tr.T.flat().cwiseAbs().maxCoeff() == 0.f);
  CHECK(tr.G.flat().cwiseAbs().maxCoeff() == 0.f);
  CHECK(max_abs_diff(reconstruct_genuine(im, tr), im) == 0.0);
}

TEST_CASE("reconstruct_genuine subtracts and clamps") {
  auto with_trace = [](float v) {
    ForensicTrace t;
    t.G = make_image(4, 4, v);
    return t;
  };
  CHECK(reconstruct_genuine(make_image(4, 4, 0.5f), with_trace(0.2f)).flat().maxCoeff() ==
        doctest::Approx(0.3).epsilon(1e-6));
  CHECK(reconstruct_genuine(make_image(4, 4, 0.1f), with_trace(0.5f)).flat().maxCoeff() == 0.f);
  CHECK(reconstruct_genuine(make_image(4, 4, 0.9f), with_trace(-0.5f)).flat().minCoeff() == 1.f);
  ForensicTrace wrong;
  wrong.G = make_image(8, 2);
  CHECK_THROWS_AS(reconstruct_genuine(make_image(4, 4), wrong), ShapeError);
}

TEST_CASE("reconstruct_genuine is exact where nothing clamps") {
  const Image im = random_image(16, 16, 12, 0.3f, 0.7f);
  ForensicTrace t;
  t.G = random_image(16, 16, 13, -0.2f, 0.2f);
  const Image rec = reconstruct_genuine(im, t);
  Image sum = rec;
  sum.flat() += t.G.flat();
  CHECK(max_abs_diff(sum, im) < 1e-6);
}

TEST_CASE("forward rejects sides that are not multiples of 8") {
  Disentangler<float> net({2}, 0);
  Var<float> bad(Tensor<float>({1, 3, 20, 24}));
  CHECK_THROWS_AS(net.forward(bad, NormMode::kEval), ShapeError);
  Var<float> gray(Tensor<float>({1, 1, 16, 16}));
  CHECK_THROWS_AS(net.forward(gray, NormMode::kEval), ShapeError);
}

TEST_CASE("different seeds give different parameters") {
  Disentangler<float> a({2}, 1), b({2}, 1), c({2}, 2);
  const auto sa = a.params().state(), sb = b.params().state(), sc = c.params().state();
  CHECK(sa.at("enc0.conv.weight").flat() == sb.at("enc0.conv.weight").flat());
  CHECK(sa.at("enc0.conv.weight").flat() != sc.at("enc0.conv.weight").flat());
}

TEST_CASE("mean(G^2) gradient matches central differences") {
  Disentangler<double> net({2}, 21);
  Var<double> x(to_batch<double>(random_image(16, 16, 22)));
  auto loss = [&] { return mean_square(net.forward(x, NormMode::kTrainNoUpdate).G); };
  const auto r = mmdt::testing::check_gradients(loss, net.params().trainable(), 100, 23, 1e-5, 1e-4);
  CHECK(r.checked == 100);
  CHECK(r.failures == 0);
  MESSAGE("max relative error " << r.max_rel_error);
}
