#include <doctest.h>

#include <random>

#include "mmdt/synthesizer.hpp"

using namespace mmdt;

namespace {

Image random_image(Index h, Index w, std::uint64_t seed, float lo = 0.f, float hi = 1.f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Image im = make_image(h, w);
  for (Index i = 0; i < im.size(); ++i) im[i] = u(rng);
  return im;
}

double max_abs_diff(const Image& a, const Image& b) { return (a.flat() - b.flat()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("encoders reach a 28 x 28 x 8 base feature map at 224") {
  // The default base of 32 gives the 28 x 28 x 256 features; a narrow base keeps the test quick.
  for (Index base : {Index{2}, Index{32}}) {
    Synthesizer<float> net({base, 1}, 1);
    NoGradGuard no_grad;
    Var<float> ig(to_batch<float>(random_image(224, 224, 2)));
    Var<float> gr(to_batch<float>(random_image(224, 224, 3, -1.f, 1.f)));
    const auto out = net.forward(ig, gr, NormMode::kEval);
    CHECK(out.F_G.shape() == Shape{1, 8 * base, 28, 28});
    CHECK(out.F_R.shape() == Shape{1, 8 * base, 28, 28});
    CHECK(out.G_hat.shape() == Shape{1, 3, 224, 224});
    if (base == 32) CHECK(8 * base == 256);
  }
}

TEST_CASE("synthesize_trace keeps the input side and the tanh range") {
  Synthesizer<float> net({2, 2}, 4);
  for (Index side : {Index{32}, Index{40}, Index{224}}) {
    const Image g_hat = synthesize_trace(net, random_image(side, side, 5), random_image(side, side, 6, -2.f, 2.f));
    CHECK(g_hat.shape() == Shape{side, side, 3});
    CHECK(g_hat.flat().cwiseAbs().maxCoeff() <= 1.f);
  }
  CHECK_THROWS_AS(synthesize_trace(net, random_image(32, 32, 1), random_image(40, 40, 1)), ShapeError);
}

TEST_CASE("zeroed head gives a zero trace") {
  Synthesizer<float> net({2, 1}, 7);
  for (const auto& e : net.params().entries())
    if (e.name.rfind("head.", 0) == 0) {
      auto v = e.var;
      v.mutable_value().flat().setZero();
    }
  const Image g_hat = synthesize_trace(net, random_image(32, 32, 8), random_image(32, 32, 9, -1.f, 1.f));
  CHECK(g_hat.flat().cwiseAbs().maxCoeff() == 0.f);
}

TEST_CASE("synthesis is deterministic in inference mode") {
  Synthesizer<float> net({2, 1}, 10);
  const Image ig = random_image(48, 48, 11), gr = random_image(48, 48, 12, -1.f, 1.f);
  CHECK(max_abs_diff(synthesize_trace(net, ig, gr), synthesize_trace(net, ig, gr)) == 0.0);
}

TEST_CASE("reconstruct_recaptured adds and clamps") {
  const Image ig = make_image(4, 4, 0.3f);
  CHECK(max_abs_diff(reconstruct_recaptured(ig, make_image(4, 4)), ig) == 0.0);
  CHECK(reconstruct_recaptured(ig, make_image(4, 4, 0.2f)).flat().maxCoeff() == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(reconstruct_recaptured(make_image(4, 4, 0.9f), make_image(4, 4, 0.5f)).flat().minCoeff() == 1.f);
  CHECK_THROWS_AS(reconstruct_recaptured(ig, make_image(2, 8)), ShapeError);
  const Image out = reconstruct_recaptured(random_image(16, 16, 13), random_image(16, 16, 14, -1.f, 1.f));
  CHECK(out.flat().minCoeff() >= 0.f);
  CHECK(out.flat().maxCoeff() <= 1.f);
}

TEST_CASE("compose_partial_trace selects components") {
  ForensicTrace tr;
  tr.C = random_image(kContentSide, kContentSide, 15, -1.f, 1.f);
  tr.T = random_image(kTraceSide, kTraceSide, 16, -1.f, 1.f);
  tr.G = resize_up(tr.C);
  tr.G.flat() += tr.T.flat();

  CHECK(max_abs_diff(compose_partial_trace(tr, true, true), tr.G) < 1e-6);
  CHECK(max_abs_diff(compose_partial_trace(tr, false, true), tr.T) == 0.0);
  CHECK(max_abs_diff(compose_partial_trace(tr, true, false), resize_up(tr.C)) == 0.0);
  CHECK_THROWS_AS(compose_partial_trace(tr, false, false), ParamError);

  ForensicTrace zero_c = tr;
  zero_c.C.flat().setZero();
  CHECK(compose_partial_trace(zero_c, true, false).flat().cwiseAbs().maxCoeff() == 0.f);
}

TEST_CASE("parameter names are unique and cover both encoders") {
  Synthesizer<float> net({2, 4}, 0);
  std::size_t image_enc = 0, trace_enc = 0, res = 0;
  for (const auto& e : net.params().entries()) {
    image_enc += e.name.rfind("enc_image.", 0) == 0;
    trace_enc += e.name.rfind("enc_trace.", 0) == 0;
    res += e.name.rfind("res", 0) == 0;
  }
  CHECK(image_enc > 0);
  CHECK(image_enc == trace_enc);
  CHECK(res > 0);
}
