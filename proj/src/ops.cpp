#include "mmdt/ops.hpp"

#include <cmath>
#include <numbers>

namespace mmdt {

namespace {

// Channel-product bound below which 3x3 convolutions skip the im2col path.
constexpr Index kDirectConvMaxProduct = 32;

// Aligned so that reductions over offsets into a buffer peel the same way on every run.
template <typename S>
using Scratch = std::vector<S, Eigen::aligned_allocator<S>>;
template <typename S>
using MapRM = Eigen::Map<RowMatX<S>>;
template <typename S>
using CMapRM = Eigen::Map<const RowMatX<S>>;
template <typename S>
using StridedRM = Eigen::Map<RowMatX<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using CStridedRM = Eigen::Map<const RowMatX<S>, 0, Eigen::OuterStride<>>;

void check_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename S, typename Fwd, typename Deriv>
Var<S> unary(const Var<S>& a, Fwd fwd, Deriv deriv) {
  Tensor<S> out(a.shape());
  const S* x = a.value().data();
  S* y = out.data();
  for (Index i = 0; i < out.size(); ++i) y[i] = fwd(x[i]);
  return make_result<S>(std::move(out), {a}, [deriv](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) {
      const S* x = self.inputs[0]->value.data();
      const S* y = self.value.data();
      const S* dy = self.grad.data();
      S* dx = g->data();
      for (Index i = 0; i < self.value.size(); ++i) dx[i] += dy[i] * deriv(x[i], y[i]);
    }
  });
}

template <typename S>
Tensor<S> scalar_tensor(S v) {
  return Tensor<S>(Shape{1}, v);
}

// Unfolds output rows [oy0, oy1) of one (C, H, W) image into a (C*k*k, (oy1-oy0)*Wo) row-major
// column block.
template <typename S>
void im2col(const S* src, Index channels, Index h, Index w, int k, int stride, int pad, Index oy0,
            Index oy1, Index ow, S* cols) {
  const Index plane = (oy1 - oy0) * ow;
  for (Index c = 0; c < channels; ++c) {
    const S* img = src + c * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* row = cols + ((c * k + ky) * k + kx) * plane;
        for (Index oy = oy0; oy < oy1; ++oy) {
          const Index iy = oy * stride - pad + ky;
          S* out = row + (oy - oy0) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + ow, S(0));
            continue;
          }
          const S* line = img + iy * w;
          if (stride == 1) {
            const Index shift = kx - pad;
            const Index lo = std::max<Index>(0, -shift);
            const Index hi = std::min<Index>(ow, w - shift);
            for (Index ox = 0; ox < lo; ++ox) out[ox] = S(0);
            for (Index ox = lo; ox < hi; ++ox) out[ox] = line[ox + shift];
            for (Index ox = std::max(hi, lo); ox < ow; ++ox) out[ox] = S(0);
          } else {
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * stride - pad + kx;
              out[ox] = (ix >= 0 && ix < w) ? line[ix] : S(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates a column block back into a (C, H, W) image.
template <typename S>
void col2im(const S* cols, Index channels, Index h, Index w, int k, int stride, int pad, Index oy0,
            Index oy1, Index ow, S* dst) {
  const Index plane = (oy1 - oy0) * ow;
  for (Index c = 0; c < channels; ++c) {
    S* img = dst + c * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* row = cols + ((c * k + ky) * k + kx) * plane;
        for (Index oy = oy0; oy < oy1; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const S* in = row + (oy - oy0) * ow;
          S* line = img + iy * w;
          if (stride == 1) {
            const Index shift = kx - pad;
            const Index lo = std::max<Index>(0, -shift);
            const Index hi = std::min<Index>(ow, w - shift);
            for (Index ox = lo; ox < hi; ++ox) line[ox + shift] += in[ox];
          } else {
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) line[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

// Direct 3x3 / stride 1 / pad 1 convolution for narrow layers, where unfolding the input costs
// more than the arithmetic. `padded` is (cin, h+2, w+2); out (cout, h, w) is accumulated into.
template <typename S>
void direct_conv3x3(const S* padded, Index cin, Index h, Index w, const S* wt, Index cout, S* out) {
  const Index pw = w + 2, pplane = (h + 2) * pw;
  for (Index co = 0; co < cout; ++co)
    for (Index y = 0; y < h; ++y) {
      S* acc = out + (co * h + y) * w;
      for (Index ci = 0; ci < cin; ++ci) {
        const S* k = wt + (co * cin + ci) * 9;
        const S* r0 = padded + ci * pplane + y * pw;
        const S* r1 = r0 + pw;
        const S* r2 = r1 + pw;
        for (Index x = 0; x < w; ++x)
          acc[x] += k[0] * r0[x] + k[1] * r0[x + 1] + k[2] * r0[x + 2] + k[3] * r1[x] +
                    k[4] * r1[x + 1] + k[5] * r1[x + 2] + k[6] * r2[x] + k[7] * r2[x + 1] +
                    k[8] * r2[x + 2];
      }
    }
}

// Copies a (c, h, w) image into a zero-bordered (c, h+2, w+2) buffer.
template <typename S>
void pad_image(const S* src, Index c, Index h, Index w, Scratch<S>& dst) {
  const Index pw = w + 2;
  dst.assign(static_cast<std::size_t>(c * (h + 2) * pw), S(0));
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      std::copy_n(src + (ch * h + y) * w, w, dst.data() + (ch * (h + 2) + y + 1) * pw + 1);
}

bool use_direct_conv(Index cin, Index cout, int k, int stride, int pad) {
  return k == 3 && stride == 1 && pad == 1 && cin * cout <= kDirectConvMaxProduct;
}

// Rows per column block, sized so one block stays cache resident.
Index block_rows(Index kk, Index row_len, Index rows) {
  constexpr Index kBlockElems = 48 * 1024;
  return std::clamp<Index>(kBlockElems / std::max<Index>(kk * row_len, 1), 1, rows);
}

// Per-axis bilinear taps for half-pixel-center resampling.
struct Taps {
  std::vector<Index> i0, i1;
  std::vector<double> w1;
};

Taps make_taps(Index in, Index out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min(lo + 1, in - 1);
    t.i0[o] = lo;
    t.i1[o] = hi;
    t.w1[o] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

// ---- elementwise -------------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check_same(a.shape(), b.shape(), "add");
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat() + b.value().flat();
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) g->flat() += self.grad.flat();
    if (auto* g = input_grad(self, 1)) g->flat() += self.grad.flat();
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check_same(a.shape(), b.shape(), "sub");
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat() - b.value().flat();
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) g->flat() += self.grad.flat();
    if (auto* g = input_grad(self, 1)) g->flat() -= self.grad.flat();
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check_same(a.shape(), b.shape(), "mul");
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat().cwiseProduct(b.value().flat());
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (auto* g = input_grad(self, 0))
      g->flat() += self.grad.flat().cwiseProduct(self.inputs[1]->value.flat());
    if (auto* g = input_grad(self, 1))
      g->flat() += self.grad.flat().cwiseProduct(self.inputs[0]->value.flat());
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat() * factor;
  return make_result<S>(std::move(out), {a}, [factor](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) g->flat() += self.grad.flat() * factor;
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S offset) {
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat().array() + offset;
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) g->flat() += self.grad.flat();
  });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  return unary<S>(
      a, [slope](S x) { return std::max(x, S(0)) + slope * std::min(x, S(0)); },
      [slope](S x, S) { return S(x > S(0)) * (S(1) - slope) + slope; });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  return unary<S>(
      a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
  constexpr S inv_sqrt2 = S(1) / std::numbers::sqrt2_v<S>;
  constexpr S inv_sqrt2pi = std::numbers::inv_sqrtpi_v<S> * inv_sqrt2;
  return unary<S>(
      a, [](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); },
      [](S x, S) {
        return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-S(0.5) * x * x);
      });
}

template <typename S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
  return unary<S>(
      a, [lo, hi](S x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](S x, S) { return (x > lo && x < hi) ? S(1) : S(0); });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  return make_result<S>(a.value().reshaped(std::move(shape)), {a}, [](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) g->flat() += self.grad.flat();
  });
}

// ---- reductions --------------------------------------------------------------------------------

template <typename S>
Var<S> mean(const Var<S>& a) {
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return make_result<S>(scalar_tensor<S>(a.value().flat().mean()), {a}, [n](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) g->flat().array() += self.grad[0] / S(n);
  });
}

template <typename S>
Var<S> mean_square(const Var<S>& a) {
  return mean_square_to(a, S(0));
}

template <typename S>
Var<S> mean_square_to(const Var<S>& a, S target) {
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean_square of empty tensor");
  const S v = (a.value().flat().array() - target).square().sum() / S(n);
  return make_result<S>(scalar_tensor<S>(v), {a}, [n, target](Node<S>& self) {
    if (auto* g = input_grad(self, 0))
      g->flat().array() +=
          (self.inputs[0]->value.flat().array() - target) * (S(2) * self.grad[0] / S(n));
  });
}

template <typename S>
Var<S> mean_abs_diff(const Var<S>& a, const Var<S>& b) {
  check_same(a.shape(), b.shape(), "mean_abs_diff");
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean_abs_diff of empty tensor");
  const S v = (a.value().flat() - b.value().flat()).cwiseAbs().sum() / S(n);
  return make_result<S>(scalar_tensor<S>(v), {a, b}, [n](Node<S>& self) {
    const S k = self.grad[0] / S(n);
    const VecX<S> sgn = (self.inputs[0]->value.flat() - self.inputs[1]->value.flat()).array().sign().matrix() * k;
    if (auto* g = input_grad(self, 0)) g->flat() += sgn;
    if (auto* g = input_grad(self, 1)) g->flat() -= sgn;
  });
}

// ---- convolution -------------------------------------------------------------------------------

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3])
    throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with weight " +
                     shape_str(ws));
  const Index n = xs[0], cin = xs[1], h = xs[2], w = xs[3], cout = ws[0];
  const int k = static_cast<int>(ws[2]);
  const Index oh = (h + 2 * pad - k) / stride + 1;
  const Index ow = (w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input too small " + shape_str(xs));
  const Index kk = cin * k * k, plane = oh * ow;
  const Index rows = block_rows(kk, ow, oh);

  const bool direct = use_direct_conv(cin, cout, k, stride, pad);

  Tensor<S> out(Shape{n, cout, oh, ow});
  Scratch<S> cols(direct ? 0 : static_cast<std::size_t>(kk * rows * ow));
  CMapRM<S> wm(weight.value().data(), cout, kk);
  for (Index b = 0; b < n && direct; ++b) {
    pad_image(x.value().data() + b * cin * h * w, cin, h, w, cols);
    direct_conv3x3(cols.data(), cin, h, w, weight.value().data(), cout, out.data() + b * cout * plane);
    if (bias.defined()) MapRM<S>(out.data() + b * cout * plane, cout, plane).colwise() += bias.value().flat();
  }
  for (Index b = 0; b < n && !direct; ++b) {
    const S* xb = x.value().data() + b * cin * h * w;
    for (Index oy0 = 0; oy0 < oh; oy0 += rows) {
      const Index oy1 = std::min(oh, oy0 + rows), ncols = (oy1 - oy0) * ow;
      im2col(xb, cin, h, w, k, stride, pad, oy0, oy1, ow, cols.data());
      StridedRM<S> y(out.data() + b * cout * plane + oy0 * ow, cout, ncols, Eigen::OuterStride<>(plane));
      y.noalias() = wm * CMapRM<S>(cols.data(), kk, ncols);
    }
    if (bias.defined()) MapRM<S>(out.data() + b * cout * plane, cout, plane).colwise() += bias.value().flat();
  }

  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<S>(std::move(out), std::move(inputs),
                        [=](Node<S>& self) {
    const Tensor<S>& xv = self.inputs[0]->value;
    const Tensor<S>& wv = self.inputs[1]->value;
    Tensor<S>* gx = input_grad(self, 0);
    Tensor<S>* gw = input_grad(self, 1);
    Tensor<S>* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr;
    CMapRM<S> wm(wv.data(), cout, kk);
    RowMatX<S> gw_acc;
    if (gw) gw_acc.setZero(cout, kk);
    if (direct) {
      // Input gradient is the same stencil with flipped taps and swapped channel roles.
      Scratch<S> flipped(static_cast<std::size_t>(cin * cout * 9));
      for (Index co = 0; co < cout; ++co)
        for (Index ci = 0; ci < cin; ++ci)
          for (int t = 0; t < 9; ++t) flipped[(ci * cout + co) * 9 + t] = wv.data()[(co * cin + ci) * 9 + 8 - t];
      Scratch<S> xpad, dypad, lanes(static_cast<std::size_t>(3 * w));
      const Index pw = w + 2, pplane = (h + 2) * pw;
      for (Index b = 0; b < n; ++b) {
        const S* dyb = self.grad.data() + b * cout * plane;
        if (gb) gb->flat() += CMapRM<S>(dyb, cout, plane).rowwise().sum();
        if (gx) {
          pad_image(dyb, cout, h, w, dypad);
          direct_conv3x3(dypad.data(), cout, h, w, flipped.data(), cin, gx->data() + b * cin * plane);
        }
        if (gw) {
          pad_image(xv.data() + b * cin * plane, cin, h, w, xpad);
          for (Index co = 0; co < cout; ++co)
            for (Index ci = 0; ci < cin; ++ci)
              for (int ky = 0; ky < 3; ++ky) {
                // Lane-wise partial sums keep the inner loop vectorizable.
                std::fill(lanes.begin(), lanes.end(), S(0));
                S* t0 = lanes.data();
                S* t1 = t0 + w;
                S* t2 = t1 + w;
                for (Index y = 0; y < h; ++y) {
                  const S* d = dyb + (co * h + y) * w;
                  const S* r = xpad.data() + ci * pplane + (y + ky) * pw;
                  for (Index xx = 0; xx < w; ++xx) {
                    t0[xx] += d[xx] * r[xx];
                    t1[xx] += d[xx] * r[xx + 1];
                    t2[xx] += d[xx] * r[xx + 2];
                  }
                }
                for (int kx = 0; kx < 3; ++kx)
                  gw_acc(co, ci * 9 + ky * 3 + kx) +=
                      Eigen::Map<const VecX<S>>(lanes.data() + kx * w, w).sum();
              }
        }
      }
      if (gw) MapRM<S>(gw->data(), cout, kk) += gw_acc;
      return;
    }
    Scratch<S> cols(static_cast<std::size_t>(kk * rows * ow));
    Scratch<S> dcols(cols.size());
    for (Index b = 0; b < n; ++b) {
      const S* dyb = self.grad.data() + b * cout * plane;
      if (gb) gb->flat() += CMapRM<S>(dyb, cout, plane).rowwise().sum();
      if (!gw && !gx) continue;
      for (Index oy0 = 0; oy0 < oh; oy0 += rows) {
        const Index oy1 = std::min(oh, oy0 + rows), ncols = (oy1 - oy0) * ow;
        CStridedRM<S> dy(dyb + oy0 * ow, cout, ncols, Eigen::OuterStride<>(plane));
        if (gw) {
          im2col(xv.data() + b * cin * h * w, cin, h, w, k, stride, pad, oy0, oy1, ow, cols.data());
          gw_acc.noalias() += dy * CMapRM<S>(cols.data(), kk, ncols).transpose();
        }
        if (gx) {
          MapRM<S>(dcols.data(), kk, ncols).noalias() = wm.transpose() * dy;
          col2im(dcols.data(), cin, h, w, k, stride, pad, oy0, oy1, ow, gx->data() + b * cin * h * w);
        }
      }
    }
    if (gw) MapRM<S>(gw->data(), cout, kk) += gw_acc;
  });
}

template <typename S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride,
                        int pad, int out_pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != xs[1] || ws[2] != ws[3])
    throw ShapeError("conv_transpose2d: input " + shape_str(xs) + " incompatible with weight " +
                     shape_str(ws));
  const Index n = xs[0], cin = xs[1], h = xs[2], w = xs[3], cout = ws[1];
  const int k = static_cast<int>(ws[2]);
  const Index oh = (h - 1) * stride - 2 * pad + k + out_pad;
  const Index ow = (w - 1) * stride - 2 * pad + k + out_pad;
  const Index kk = cout * k * k, plane = h * w, oplane = oh * ow;
  // The column blocks run over input rows; the "image" side of im2col is the output.
  const Index rows = block_rows(kk, w, h);

  Tensor<S> out(Shape{n, cout, oh, ow});
  CMapRM<S> wm(weight.value().data(), cin, kk);
  Scratch<S> cols(static_cast<std::size_t>(kk * rows * w));
  for (Index b = 0; b < n; ++b) {
    const S* xb = x.value().data() + b * cin * plane;
    S* dst = out.data() + b * cout * oplane;
    for (Index y0 = 0; y0 < h; y0 += rows) {
      const Index y1 = std::min(h, y0 + rows), ncols = (y1 - y0) * w;
      CStridedRM<S> xblk(xb + y0 * w, cin, ncols, Eigen::OuterStride<>(plane));
      MapRM<S>(cols.data(), kk, ncols).noalias() = wm.transpose() * xblk;
      col2im(cols.data(), cout, oh, ow, k, stride, pad, y0, y1, w, dst);
    }
    if (bias.defined()) MapRM<S>(dst, cout, oplane).colwise() += bias.value().flat();
  }

  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<S>(std::move(out), std::move(inputs),
                        [=](Node<S>& self) {
    const Tensor<S>& xv = self.inputs[0]->value;
    const Tensor<S>& wv = self.inputs[1]->value;
    Tensor<S>* gx = input_grad(self, 0);
    Tensor<S>* gw = input_grad(self, 1);
    Tensor<S>* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr;
    CMapRM<S> wm(wv.data(), cin, kk);
    Scratch<S> dcols(static_cast<std::size_t>(kk * rows * w));
    RowMatX<S> gw_acc;
    if (gw) gw_acc.setZero(cin, kk);
    for (Index b = 0; b < n; ++b) {
      const S* dy = self.grad.data() + b * cout * oplane;
      if (gb) gb->flat() += CMapRM<S>(dy, cout, oplane).rowwise().sum();
      if (!gx && !gw) continue;
      for (Index y0 = 0; y0 < h; y0 += rows) {
        const Index y1 = std::min(h, y0 + rows), ncols = (y1 - y0) * w;
        im2col(dy, cout, oh, ow, k, stride, pad, y0, y1, w, dcols.data());
        CMapRM<S> dc(dcols.data(), kk, ncols);
        if (gx)
          StridedRM<S>(gx->data() + b * cin * plane + y0 * w, cin, ncols, Eigen::OuterStride<>(plane))
              .noalias() += wm * dc;
        if (gw) {
          CStridedRM<S> xblk(xv.data() + b * cin * plane + y0 * w, cin, ncols, Eigen::OuterStride<>(plane));
          gw_acc.noalias() += xblk * dc.transpose();
        }
      }
    }
    if (gw) MapRM<S>(gw->data(), cin, kk) += gw_acc;
  });
}

template <typename S>
Var<S> batch_norm2d(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                    Tensor<S>& running_mean, Tensor<S>& running_var, NormMode mode, S momentum,
                    S eps) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || gamma.value().size() != xs[1] || beta.value().size() != xs[1])
    throw ShapeError("batch_norm2d: bad shapes " + shape_str(xs));
  const Index n = xs[0], c = xs[1], plane = xs[2] * xs[3];
  const Index m = n * plane;

  VecX<S> mu(c), inv_std(c);
  if (mode == NormMode::kEval) {
    mu = running_mean.flat();
    inv_std = (running_var.flat().array() + eps).rsqrt().matrix();
  } else {
    VecX<S> var(c);
    for (Index ch = 0; ch < c; ++ch) {
      // Two-pass statistics, accumulated in double.
      double s = 0;
      for (Index b = 0; b < n; ++b) {
        const S* p = x.value().data() + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) s += p[i];
      }
      const double mean_c = s / static_cast<double>(m);
      double ss = 0;
      for (Index b = 0; b < n; ++b) {
        const S* p = x.value().data() + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) {
          const double d = p[i] - mean_c;
          ss += d * d;
        }
      }
      mu[ch] = static_cast<S>(mean_c);
      var[ch] = static_cast<S>(ss / static_cast<double>(m));
    }
    inv_std = (var.array() + eps).rsqrt().matrix();
    if (mode == NormMode::kTrain) {
      const S unbias = m > 1 ? S(m) / S(m - 1) : S(1);
      running_mean.flat() = (S(1) - momentum) * running_mean.flat() + momentum * mu;
      running_var.flat() = (S(1) - momentum) * running_var.flat() + (momentum * unbias) * var;
    }
  }

  Tensor<S> out(xs);
  const S* g = gamma.value().data();
  const S* bt = beta.value().data();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const S* p = x.value().data() + (b * c + ch) * plane;
      S* q = out.data() + (b * c + ch) * plane;
      const S a = g[ch] * inv_std[ch];
      const S o = bt[ch] - mu[ch] * a;
      for (Index i = 0; i < plane; ++i) q[i] = p[i] * a + o;
    }

  const bool batch_stats = mode != NormMode::kEval;
  return make_result<S>(std::move(out), {x, gamma, beta},
                        [=](Node<S>& self) {
    const S* xv = self.inputs[0]->value.data();
    const S* gv = self.inputs[1]->value.data();
    Tensor<S>* gx = input_grad(self, 0);
    Tensor<S>* gg = input_grad(self, 1);
    Tensor<S>* gbeta = input_grad(self, 2);
    for (Index ch = 0; ch < c; ++ch) {
      S sum_dy = 0, sum_dy_xhat = 0;
      for (Index b = 0; b < n; ++b) {
        const S* p = xv + (b * c + ch) * plane;
        const S* d = self.grad.data() + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) {
          sum_dy += d[i];
          sum_dy_xhat += d[i] * (p[i] - mu[ch]) * inv_std[ch];
        }
      }
      if (gg) (*gg)[ch] += sum_dy_xhat;
      if (gbeta) (*gbeta)[ch] += sum_dy;
      if (!gx) continue;
      const S a = gv[ch] * inv_std[ch];
      for (Index b = 0; b < n; ++b) {
        const S* p = xv + (b * c + ch) * plane;
        const S* d = self.grad.data() + (b * c + ch) * plane;
        S* q = gx->data() + (b * c + ch) * plane;
        if (batch_stats) {
          const S mean_dy = sum_dy / S(m), mean_dy_xhat = sum_dy_xhat / S(m);
          for (Index i = 0; i < plane; ++i) {
            const S xhat = (p[i] - mu[ch]) * inv_std[ch];
            q[i] += a * (d[i] - mean_dy - xhat * mean_dy_xhat);
          }
        } else {
          for (Index i = 0; i < plane; ++i) q[i] += a * d[i];
        }
      }
    }
  });
}

template <typename S>
Var<S> resize_bilinear(const Var<S>& x, Index out_h, Index out_w) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("resize_bilinear expects (N,C,H,W), got " + shape_str(xs));
  const Index nc = xs[0] * xs[1], h = xs[2], w = xs[3];
  const Taps ty = make_taps(h, out_h), tx = make_taps(w, out_w);
  Tensor<S> out(Shape{xs[0], xs[1], out_h, out_w});
  for (Index p = 0; p < nc; ++p) {
    const S* src = x.value().data() + p * h * w;
    S* dst = out.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const S wy = static_cast<S>(ty.w1[oy]);
      const S* r0 = src + ty.i0[oy] * w;
      const S* r1 = src + ty.i1[oy] * w;
      for (Index ox = 0; ox < out_w; ++ox) {
        const S wx = static_cast<S>(tx.w1[ox]);
        const S top = r0[tx.i0[ox]] * (S(1) - wx) + r0[tx.i1[ox]] * wx;
        const S bot = r1[tx.i0[ox]] * (S(1) - wx) + r1[tx.i1[ox]] * wx;
        dst[oy * out_w + ox] = top * (S(1) - wy) + bot * wy;
      }
    }
  }
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    Tensor<S>* gx = input_grad(self, 0);
    if (!gx) return;
    for (Index p = 0; p < nc; ++p) {
      S* dst = gx->data() + p * h * w;
      const S* d = self.grad.data() + p * out_h * out_w;
      for (Index oy = 0; oy < out_h; ++oy) {
        const S wy = static_cast<S>(ty.w1[oy]);
        S* r0 = dst + ty.i0[oy] * w;
        S* r1 = dst + ty.i1[oy] * w;
        for (Index ox = 0; ox < out_w; ++ox) {
          const S wx = static_cast<S>(tx.w1[ox]);
          const S g = d[oy * out_w + ox];
          r0[tx.i0[ox]] += g * (S(1) - wy) * (S(1) - wx);
          r0[tx.i1[ox]] += g * (S(1) - wy) * wx;
          r1[tx.i0[ox]] += g * wy * (S(1) - wx);
          r1[tx.i1[ox]] += g * wy * wx;
        }
      }
    }
  });
}

// Concatenation along axis `axis` of same-rank tensors, viewed as (outer, axis*inner).
template <typename S>
Var<S> concat_axis(const std::vector<Var<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat axis out of range");
  Index outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  std::vector<Index> chunk(parts.size());
  Index total_axis = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != shape[i])
        throw ShapeError("concat shape mismatch " + shape_str(s) + " vs " + shape_str(shape));
    total_axis += s[axis];
    chunk[p] = parts[p].value().size() / outer;
  }
  shape[axis] = total_axis;
  const Index row = shape_size(shape) / outer;
  Tensor<S> out(shape);
  Index offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const S* src = parts[p].value().data();
    for (Index o = 0; o < outer; ++o)
      std::copy(src + o * chunk[p], src + (o + 1) * chunk[p], out.data() + o * row + offset);
    offset += chunk[p];
  }
  return make_result<S>(std::move(out), parts, [=](Node<S>& self) {
    Index off = 0;
    for (std::size_t p = 0; p < chunk.size(); ++p) {
      if (auto* g = input_grad(self, p)) {
        for (Index o = 0; o < outer; ++o) {
          const S* src = self.grad.data() + o * row + off;
          S* dst = g->data() + o * chunk[p];
          for (Index i = 0; i < chunk[p]; ++i) dst[i] += src[i];
        }
      }
      off += chunk[p];
    }
  });
}

// Slice along `axis`.
template <typename S>
Var<S> slice_axis(const Var<S>& x, std::size_t axis, Index start, Index len) {
  Shape shape = x.shape();
  if (axis >= shape.size() || start < 0 || len < 0 || start + len > shape[axis])
    throw ShapeError("slice out of range for " + shape_str(shape));
  Index outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  const Index inner = shape_size(shape) / outer / shape[axis];
  const Index in_row = shape[axis] * inner;
  const Index out_row = len * inner;
  const Index off = start * inner;
  shape[axis] = len;
  Tensor<S> out(shape);
  for (Index o = 0; o < outer; ++o)
    std::copy(x.value().data() + o * in_row + off, x.value().data() + o * in_row + off + out_row,
              out.data() + o * out_row);
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    if (auto* g = input_grad(self, 0))
      for (Index o = 0; o < outer; ++o) {
        const S* src = self.grad.data() + o * out_row;
        S* dst = g->data() + o * in_row + off;
        for (Index i = 0; i < out_row; ++i) dst[i] += src[i];
      }
  });
}

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
  return concat_axis(parts, 1);
}
template <typename S>
Var<S> concat_batch(const std::vector<Var<S>>& parts) {
  return concat_axis(parts, 0);
}
template <typename S>
Var<S> slice_batch(const Var<S>& x, Index start, Index count) {
  return slice_axis(x, 0, start, count);
}
template <typename S>
Var<S> token_slice(const Var<S>& x, Index start, Index len) {
  return slice_axis(x, 1, start, len);
}
template <typename S>
Var<S> token_concat(const std::vector<Var<S>>& parts) {
  return concat_axis(parts, 1);
}
template <typename S>
Var<S> slice_last(const Var<S>& x, Index start, Index len) {
  return slice_axis(x, x.shape().size() - 1, start, len);
}
template <typename S>
Var<S> concat_last(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  return concat_axis(parts, parts[0].shape().size() - 1);
}

// ---- token ops ---------------------------------------------------------------------------------

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[1])
    throw ShapeError("linear: input " + shape_str(xs) + " incompatible with weight " +
                     shape_str(ws));
  const Index din = ws[1], dout = ws[0];
  const Index rows = x.value().size() / din;
  Shape os = xs;
  os.back() = dout;
  Tensor<S> out(os);
  MapRM<S> y(out.data(), rows, dout);
  CMapRM<S> xm(x.value().data(), rows, din);
  CMapRM<S> wm(weight.value().data(), dout, din);
  y.noalias() = xm * wm.transpose();
  if (bias.defined()) y.rowwise() += bias.value().flat().transpose();

  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<S>(std::move(out), std::move(inputs), [=](Node<S>& self) {
    CMapRM<S> dy(self.grad.data(), rows, dout);
    if (auto* g = input_grad(self, 0))
      MapRM<S>(g->data(), rows, din).noalias() +=
          dy * CMapRM<S>(self.inputs[1]->value.data(), dout, din);
    if (auto* g = input_grad(self, 1))
      MapRM<S>(g->data(), dout, din).noalias() +=
          dy.transpose() * CMapRM<S>(self.inputs[0]->value.data(), rows, din);
    if (self.inputs.size() > 2)
      if (auto* g = input_grad(self, 2)) g->flat() += dy.colwise().sum().transpose();
  });
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  const Index d = x.shape().back();
  if (gamma.value().size() != d || beta.value().size() != d)
    throw ShapeError("layer_norm: parameter size mismatch");
  const Index rows = x.value().size() / d;
  Tensor<S> out(x.shape());
  auto xhat = std::make_shared<RowMatX<S>>(rows, d);
  auto inv_std = std::make_shared<VecX<S>>(rows);
  CMapRM<S> xm(x.value().data(), rows, d);
  for (Index r = 0; r < rows; ++r) {
    const S mu = xm.row(r).mean();
    const S var = (xm.row(r).array() - mu).square().mean();
    (*inv_std)[r] = S(1) / std::sqrt(var + eps);
    xhat->row(r) = (xm.row(r).array() - mu) * (*inv_std)[r];
  }
  MapRM<S> y(out.data(), rows, d);
  y = (xhat->array().rowwise() * gamma.value().flat().transpose().array()).rowwise() +
      beta.value().flat().transpose().array();
  return make_result<S>(std::move(out), {x, gamma, beta}, [=](Node<S>& self) {
    CMapRM<S> dy(self.grad.data(), rows, d);
    if (auto* g = input_grad(self, 1))
      g->flat() += (dy.array() * xhat->array()).colwise().sum().transpose().matrix();
    if (auto* g = input_grad(self, 2)) g->flat() += dy.colwise().sum().transpose();
    if (auto* g = input_grad(self, 0)) {
      const auto gam = self.inputs[1]->value.flat().transpose().array();
      MapRM<S> dx(g->data(), rows, d);
      for (Index r = 0; r < rows; ++r) {
        const Eigen::Array<S, 1, Eigen::Dynamic> dxh = dy.row(r).array() * gam;
        const S m1 = dxh.mean();
        const S m2 = (dxh * xhat->row(r).array()).mean();
        dx.row(r).array() += (*inv_std)[r] * (dxh - m1 - xhat->row(r).array() * m2);
      }
    }
  });
}

template <typename S>
Var<S> attention(const Var<S>& qkv, int heads) {
  const Shape& s = qkv.shape();
  if (s.size() != 3 || s[2] % (3 * heads) != 0)
    throw ShapeError("attention: bad qkv shape " + shape_str(s));
  const Index bsz = s[0], len = s[1], d = s[2] / 3, dh = d / heads;
  const S sc = S(1) / std::sqrt(S(dh));
  Tensor<S> out(Shape{bsz, len, d});
  RowMatX<S> p(len, len);
  auto softmax_rows = [](RowMatX<S>& m) {
    for (Index r = 0; r < m.rows(); ++r) {
      const S mx = m.row(r).maxCoeff();
      m.row(r) = (m.row(r).array() - mx).exp();
      m.row(r) /= m.row(r).sum();
    }
  };
  for (Index b = 0; b < bsz; ++b) {
    const S* base = qkv.value().data() + b * len * 3 * d;
    for (int hh = 0; hh < heads; ++hh) {
      CStridedRM<S> q(base + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
      CStridedRM<S> k(base + d + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
      CStridedRM<S> v(base + 2 * d + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
      p.noalias() = (q * k.transpose()) * sc;
      softmax_rows(p);
      StridedRM<S> o(out.data() + b * len * d + hh * dh, len, dh, Eigen::OuterStride<>(d));
      o.noalias() = p * v;
    }
  }
  return make_result<S>(std::move(out), {qkv}, [=](Node<S>& self) {
    Tensor<S>* g = input_grad(self, 0);
    if (!g) return;
    RowMatX<S> p(len, len), dp(len, len);
    for (Index b = 0; b < bsz; ++b) {
      const S* base = self.inputs[0]->value.data() + b * len * 3 * d;
      S* gbase = g->data() + b * len * 3 * d;
      for (int hh = 0; hh < heads; ++hh) {
        CStridedRM<S> q(base + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
        CStridedRM<S> k(base + d + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
        CStridedRM<S> v(base + 2 * d + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
        CStridedRM<S> dout(self.grad.data() + b * len * d + hh * dh, len, dh,
                           Eigen::OuterStride<>(d));
        StridedRM<S> dq(gbase + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
        StridedRM<S> dk(gbase + d + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
        StridedRM<S> dv(gbase + 2 * d + hh * dh, len, dh, Eigen::OuterStride<>(3 * d));
        p.noalias() = (q * k.transpose()) * sc;
        softmax_rows(p);
        dv.noalias() += p.transpose() * dout;
        dp.noalias() = dout * v.transpose();
        const VecX<S> rowdot = (dp.array() * p.array()).rowwise().sum();
        dp = p.array() * (dp.array().colwise() - rowdot.array());
        dq.noalias() += (dp * k) * sc;
        dk.noalias() += (dp.transpose() * q) * sc;
      }
    }
  });
}

template <typename S>
Var<S> softmax_last(const Var<S>& x) {
  const Index d = x.shape().back();
  const Index rows = x.value().size() / d;
  Tensor<S> out(x.shape());
  CMapRM<S> xm(x.value().data(), rows, d);
  MapRM<S> y(out.data(), rows, d);
  for (Index r = 0; r < rows; ++r) {
    const S mx = xm.row(r).maxCoeff();
    y.row(r) = (xm.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) {
      CMapRM<S> y(self.value.data(), rows, d);
      CMapRM<S> dy(self.grad.data(), rows, d);
      MapRM<S> dx(g->data(), rows, d);
      for (Index r = 0; r < rows; ++r) {
        const S dot = y.row(r).dot(dy.row(r));
        dx.row(r).array() += y.row(r).array() * (dy.row(r).array() - dot);
      }
    }
  });
}

template <typename S>
Var<S> token_mean(const Var<S>& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("token_mean expects (B,L,D)");
  const Index bsz = s[0], len = s[1], d = s[2];
  Tensor<S> out(Shape{bsz, 1, d});
  for (Index b = 0; b < bsz; ++b)
    MapRM<S>(out.data() + b * d, 1, d) =
        CMapRM<S>(x.value().data() + b * len * d, len, d).colwise().mean();
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    if (auto* g = input_grad(self, 0))
      for (Index b = 0; b < bsz; ++b) {
        MapRM<S> dx(g->data() + b * len * d, len, d);
        CMapRM<S> dy(self.grad.data() + b * d, 1, d);
        dx.rowwise() += dy.row(0) / S(len);
      }
  });
}

template <typename S>
Var<S> scale_per_sample(const Var<S>& x, const Var<S>& w) {
  const Index bsz = x.shape()[0];
  if (w.value().size() != bsz) throw ShapeError("scale_per_sample: weight count != batch");
  const Index per = x.value().size() / bsz;
  Tensor<S> out(x.shape());
  for (Index b = 0; b < bsz; ++b)
    out.flat().segment(b * per, per) = x.value().flat().segment(b * per, per) * w.value()[b];
  return make_result<S>(std::move(out), {x, w}, [=](Node<S>& self) {
    const auto& xv = self.inputs[0]->value.flat();
    const auto& wv = self.inputs[1]->value;
    auto* gx = input_grad(self, 0);
    auto* gw = input_grad(self, 1);
    for (Index b = 0; b < bsz; ++b) {
      const auto dy = self.grad.flat().segment(b * per, per);
      if (gx) gx->flat().segment(b * per, per) += dy * wv[b];
      if (gw) (*gw)[b] += dy.dot(xv.segment(b * per, per));
    }
  });
}

template <typename S>
Var<S> add_broadcast(const Var<S>& x, const Var<S>& table) {
  const Index per = table.value().size();
  if (x.value().size() % per != 0 || x.shape()[0] * per != x.value().size())
    throw ShapeError("add_broadcast: " + shape_str(table.shape()) + " vs " + shape_str(x.shape()));
  const Index bsz = x.shape()[0];
  Tensor<S> out(x.shape());
  for (Index b = 0; b < bsz; ++b)
    out.flat().segment(b * per, per) = x.value().flat().segment(b * per, per) + table.value().flat();
  return make_result<S>(std::move(out), {x, table}, [=](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) g->flat() += self.grad.flat();
    if (auto* g = input_grad(self, 1))
      for (Index b = 0; b < bsz; ++b) g->flat() += self.grad.flat().segment(b * per, per);
  });
}

template <typename S>
Var<S> add_per_token(const Var<S>& x, const Var<S>& c) {
  const Shape& s = x.shape();
  if (s.size() != 3 || c.shape() != Shape{s[0], 1, s[2]})
    throw ShapeError("add_per_token: " + shape_str(c.shape()) + " vs " + shape_str(s));
  const Index bsz = s[0], len = s[1], d = s[2];
  Tensor<S> out(s);
  for (Index b = 0; b < bsz; ++b)
    MapRM<S>(out.data() + b * len * d, len, d) =
        CMapRM<S>(x.value().data() + b * len * d, len, d).rowwise() +
        CMapRM<S>(c.value().data() + b * d, 1, d).row(0);
  return make_result<S>(std::move(out), {x, c}, [=](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) g->flat() += self.grad.flat();
    if (auto* g = input_grad(self, 1))
      for (Index b = 0; b < bsz; ++b)
        MapRM<S>(g->data() + b * d, 1, d) +=
            CMapRM<S>(self.grad.data() + b * len * d, len, d).colwise().sum();
  });
}

template <typename S>
Var<S> repeat_batch(const Var<S>& x, Index batch) {
  if (x.shape()[0] != 1) throw ShapeError("repeat_batch expects a leading 1");
  Shape s = x.shape();
  s[0] = batch;
  const Index per = x.value().size();
  Tensor<S> out(s);
  for (Index b = 0; b < batch; ++b) out.flat().segment(b * per, per) = x.value().flat();
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    if (auto* g = input_grad(self, 0))
      for (Index b = 0; b < batch; ++b) g->flat() += self.grad.flat().segment(b * per, per);
  });
}

template <typename S>
Var<S> cross_entropy(const Var<S>& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != static_cast<Index>(labels.size()))
    throw ShapeError("cross_entropy: logits " + shape_str(s) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const Index bsz = s[0], k = s[1];
  auto probs = std::make_shared<RowMatX<S>>(bsz, k);
  CMapRM<S> z(logits.value().data(), bsz, k);
  S loss = 0;
  for (Index b = 0; b < bsz; ++b) {
    if (labels[b] < 0 || labels[b] >= k) throw ShapeError("cross_entropy: label out of range");
    const S mx = z.row(b).maxCoeff();
    const S lse = mx + std::log((z.row(b).array() - mx).exp().sum());
    probs->row(b) = (z.row(b).array() - lse).exp();
    loss += lse - z(b, labels[b]);
  }
  loss /= S(bsz);
  return make_result<S>(scalar_tensor<S>(loss), {logits}, [=](Node<S>& self) {
    if (auto* g = input_grad(self, 0)) {
      MapRM<S> dz(g->data(), bsz, k);
      const S sc = self.grad[0] / S(bsz);
      for (Index b = 0; b < bsz; ++b) {
        dz.row(b) += probs->row(b) * sc;
        dz(b, labels[b]) -= sc;
      }
    }
  });
}

#define MMDT_INSTANTIATE(S)                                                                      \
  template Var<S> add(const Var<S>&, const Var<S>&);                                             \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                             \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                             \
  template Var<S> scale(const Var<S>&, S);                                                       \
  template Var<S> add_scalar(const Var<S>&, S);                                                  \
  template Var<S> leaky_relu(const Var<S>&, S);                                                  \
  template Var<S> tanh(const Var<S>&);                                                           \
  template Var<S> gelu(const Var<S>&);                                                           \
  template Var<S> clamp(const Var<S>&, S, S);                                                    \
  template Var<S> reshape(const Var<S>&, Shape);                                                 \
  template Var<S> mean(const Var<S>&);                                                           \
  template Var<S> mean_square(const Var<S>&);                                                    \
  template Var<S> mean_square_to(const Var<S>&, S);                                              \
  template Var<S> mean_abs_diff(const Var<S>&, const Var<S>&);                                   \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, int, int);                 \
  template Var<S> conv_transpose2d(const Var<S>&, const Var<S>&, const Var<S>&, int, int, int);   \
  template Var<S> batch_norm2d(const Var<S>&, const Var<S>&, const Var<S>&, Tensor<S>&,          \
                               Tensor<S>&, NormMode, S, S);                                      \
  template Var<S> resize_bilinear(const Var<S>&, Index, Index);                                  \
  template Var<S> concat_channels(const std::vector<Var<S>>&);                                   \
  template Var<S> concat_batch(const std::vector<Var<S>>&);                                      \
  template Var<S> slice_batch(const Var<S>&, Index, Index);                                      \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                           \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                    \
  template Var<S> attention(const Var<S>&, int);                                                 \
  template Var<S> softmax_last(const Var<S>&);                                                   \
  template Var<S> token_slice(const Var<S>&, Index, Index);                                      \
  template Var<S> token_concat(const std::vector<Var<S>>&);                                       \
  template Var<S> token_mean(const Var<S>&);                                                     \
  template Var<S> slice_last(const Var<S>&, Index, Index);                                       \
  template Var<S> concat_last(const std::vector<Var<S>>&);                                       \
  template Var<S> scale_per_sample(const Var<S>&, const Var<S>&);                                \
  template Var<S> add_broadcast(const Var<S>&, const Var<S>&);                                   \
  template Var<S> repeat_batch(const Var<S>&, Index);                                            \
  template Var<S> add_per_token(const Var<S>&, const Var<S>&);                                   \
  template Var<S> cross_entropy(const Var<S>&, const std::vector<int>&);

MMDT_INSTANTIATE(float)
MMDT_INSTANTIATE(double)

#undef MMDT_INSTANTIATE

}  // namespace mmdt
