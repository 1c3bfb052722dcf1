#include <doctest.h>

#include <random>
#include <utility>

#include "mmdt/nn.hpp"
#include "mmdt/ops.hpp"
#include "support/gradcheck.hpp"

using namespace mmdt;
using mmdt::testing::check_gradients;

namespace {

Var<double> rand_leaf(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return Var<double>(normal_tensor<double>(std::move(shape), scale, rng), true);
}

// Weighted sum with fixed random weights turns any tensor into a scalar with a
// non-degenerate gradient.
Var<double> probe(const Var<double>& x, unsigned seed) {
  std::mt19937_64 rng(seed);
  Var<double> w(normal_tensor<double>(x.shape(), 1.0, rng));
  return mean(mul(x, w));
}

}  // namespace

TEST_CASE("conv2d matches a direct convolution") {
  std::mt19937_64 rng(1);
  auto x = rand_leaf({2, 3, 7, 6}, rng);
  auto w = rand_leaf({4, 3, 3, 3}, rng);
  auto b = rand_leaf({4}, rng);
  for (int stride : {1, 2}) {
    auto y = conv2d(x, w, b, stride, 1);
    const Index oh = (7 + 2 - 3) / stride + 1, ow = (6 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == Shape{2, 4, oh, ow});
    double worst = 0;
    for (Index n = 0; n < 2; ++n)
      for (Index co = 0; co < 4; ++co)
        for (Index oy = 0; oy < oh; ++oy)
          for (Index ox = 0; ox < ow; ++ox) {
            double acc = b.value()[co];
            for (Index ci = 0; ci < 3; ++ci)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const Index iy = oy * stride - 1 + ky, ix = ox * stride - 1 + kx;
                  if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                  acc += w.value().at(co, ci, ky, kx) * x.value().at(n, ci, iy, ix);
                }
            worst = std::max(worst, std::abs(acc - y.value().at(n, co, oy, ox)));
          }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv2d paths agree with the direct sum at larger channel counts") {
  std::mt19937_64 rng(4);
  for (auto [cin, cout] : {std::pair<Index, Index>{1, 4}, {4, 8}, {8, 8}}) {
    auto x = rand_leaf({1, cin, 10, 11}, rng);
    auto w = rand_leaf({cout, cin, 3, 3}, rng);
    auto y = conv2d(x, w, Var<double>(), 1, 1);
    double worst = 0;
    for (Index co = 0; co < cout; ++co)
      for (Index oy = 0; oy < 10; ++oy)
        for (Index ox = 0; ox < 11; ++ox) {
          double acc = 0;
          for (Index ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const Index iy = oy - 1 + ky, ix = ox - 1 + kx;
                if (iy < 0 || iy >= 10 || ix < 0 || ix >= 11) continue;
                acc += w.value().at(co, ci, ky, kx) * x.value().at(0, ci, iy, ix);
              }
          worst = std::max(worst, std::abs(acc - y.value().at(0, co, oy, ox)));
        }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of the strided conv") {
  // <conv(x), y> == <x, convT(y)> for matching geometry and no bias.
  std::mt19937_64 rng(2);
  Var<double> x(normal_tensor<double>({1, 3, 8, 8}, 1.0, rng));
  Var<double> y(normal_tensor<double>({1, 5, 4, 4}, 1.0, rng));
  Tensor<double> wt = normal_tensor<double>({5, 3, 3, 3}, 1.0, rng);
  Var<double> w(wt);
  // Transposed weight layout is (Cin, Cout, k, k) == (5, 3, 3, 3) here as well.
  auto cx = conv2d(x, w, Var<double>(), 2, 1);
  auto ty = conv_transpose2d(y, w, Var<double>(), 2, 1, 1);
  REQUIRE(ty.shape() == Shape{1, 3, 8, 8});
  const double lhs = cx.value().flat().dot(y.value().flat());
  const double rhs = x.value().flat().dot(ty.value().flat());
  CHECK(std::abs(lhs - rhs) < 1e-10);
}

TEST_CASE("op gradients agree with central differences") {
  std::mt19937_64 rng(3);
  SUBCASE("conv2d and conv_transpose2d") {
    auto x = rand_leaf({2, 2, 6, 6}, rng);
    auto w = rand_leaf({3, 2, 3, 3}, rng);
    auto b = rand_leaf({3}, rng);
    auto wt = rand_leaf({3, 2, 3, 3}, rng);
    auto bt = rand_leaf({2}, rng);
    auto f = [&] {
      auto h = conv2d(x, w, b, 2, 1);
      return probe(conv_transpose2d(h, wt, bt, 2, 1, 1), 9);
    };
    auto r = check_gradients(f, {x, w, b, wt, bt}, 60, 11);
    CHECK(r.failures == 0);
  }
  SUBCASE("stride-1 conv on the small-channel and GEMM paths") {
    // 2x3 channels stays under the fused 3x3 threshold; 6x8 goes through im2col.
    for (auto [cin, cout] : {std::pair<Index, Index>{2, 3}, {6, 8}}) {
      auto x = rand_leaf({2, cin, 9, 7}, rng);
      auto w = rand_leaf({cout, cin, 3, 3}, rng, 0.5);
      auto b = rand_leaf({cout}, rng);
      auto f = [&] { return probe(leaky_relu(conv2d(x, w, b, 1, 1), 0.2), 17); };
      auto r = check_gradients(f, {x, w, b}, 60, 18);
      CHECK(r.failures == 0);
    }
  }
  SUBCASE("batch norm in train and eval modes") {
    auto x = rand_leaf({3, 2, 4, 4}, rng);
    auto g = rand_leaf({2}, rng);
    auto bt = rand_leaf({2}, rng);
    Tensor<double> rm({2}, 0.1), rv({2}, 2.0);
    for (NormMode mode : {NormMode::kTrainNoUpdate, NormMode::kEval}) {
      auto f = [&] { return probe(tanh(batch_norm2d(x, g, bt, rm, rv, mode)), 5); };
      auto r = check_gradients(f, {x, g, bt}, 50, 12);
      CHECK(r.failures == 0);
    }
  }
  SUBCASE("resize, concat, slice, activations") {
    auto x = rand_leaf({2, 2, 5, 5}, rng);
    auto y = rand_leaf({2, 1, 20, 20}, rng);
    auto f = [&] {
      auto up = resize_bilinear(x, 20, 20);
      auto cat = concat_channels<double>({up, y});
      auto down = resize_bilinear(gelu(cat), 7, 9);
      auto s = slice_batch(down, 1, 1);
      return add(probe(s, 3), mean_square(leaky_relu(up, 0.2)));
    };
    auto r = check_gradients(f, {x, y}, 60, 13);
    CHECK(r.failures == 0);
  }
  SUBCASE("token ops") {
    auto x = rand_leaf({2, 5, 12}, rng);
    auto wqkv = rand_leaf({36, 12}, rng, 0.3);
    auto bqkv = rand_leaf({36}, rng);
    auto g = rand_leaf({12}, rng);
    auto be = rand_leaf({12}, rng);
    auto ws = rand_leaf({1, 12}, rng);
    auto f = [&] {
      auto h = layer_norm(x, g, be);
      auto a = attention(linear(h, wqkv, bqkv), 3);
      auto m = token_mean(a);
      auto parts = std::vector<Var<double>>{linear(m, ws, Var<double>()), linear(token_mean(x), ws, Var<double>())};
      auto wts = softmax_last(concat_last(parts));
      auto sc = scale_per_sample(token_slice(a, 1, 3), slice_last(wts, 1, 1));
      auto cat = token_concat<double>({sc, token_slice(x, 0, 2)});
      return probe(cat, 21);
    };
    auto r = check_gradients(f, {x, wqkv, bqkv, g, be, ws}, 80, 14);
    CHECK(r.failures == 0);
  }
  SUBCASE("cross entropy and broadcast") {
    auto z = rand_leaf({4, 2, 3}, rng);
    auto table = rand_leaf({1, 2, 3}, rng);
    auto f = [&] {
      auto s = add_per_token(add_broadcast(z, table), token_slice(z, 1, 1));
      return cross_entropy(reshape(s, {8, 3}), {0, 2, 1, 1, 2, 0, 0, 1});
    };
    auto r = check_gradients(f, {z, table}, 15, 15);
    CHECK(r.failures == 0);
  }
}

TEST_CASE("no-grad mode records nothing") {
  Var<float> a(Tensor<float>({2}, 1.f), true);
  NoGradGuard guard;
  auto b = add(a, a);
  CHECK_FALSE(b.requires_grad());
  CHECK(b.node()->inputs.empty());
}

TEST_CASE("parameter store rejects duplicates and round-trips state") {
  ParamStore<float> store;
  store.add_param("a", Tensor<float>({2}, 1.f));
  CHECK_THROWS_AS(store.add_param("a", Tensor<float>({2})), StateError);
  auto st = store.state();
  st["a"].fill(3.f);
  store.load_state(st);
  CHECK(store.get("a").value()[1] == 3.f);
  st["b"] = Tensor<float>({1});
  CHECK_THROWS_AS(store.load_state(st), StateError);
}
