#include "mmdt/disentangler.hpp"

#include <algorithm>

namespace mmdt {

Image resize_up(const Image& c, Index side_h, Index side_w) {
  validate_image(c);
  NoGradGuard no_grad;
  Var<float> x(to_batch<float>(c));
  return from_batch(resize_bilinear(x, side_h, side_w).value(), 0);
}

std::vector<ForensicTrace> disentangle(const Disentangler<float>& net,
                                       std::span<const Image> images) {
  if (images.empty()) return {};
  for (const auto& im : images) validate_image(im);
  NoGradGuard no_grad;
  const auto out = net.forward(Var<float>(to_batch<float>(images)), NormMode::kEval);
  std::vector<ForensicTrace> traces;
  traces.reserve(images.size());
  for (Index n = 0; n < static_cast<Index>(images.size()); ++n)
    traces.push_back({from_batch(out.C.value(), n), from_batch(out.T.value(), n),
                      from_batch(out.G.value(), n)});
  return traces;
}

ForensicTrace disentangle(const Disentangler<float>& net, const Image& image) {
  return disentangle(net, std::span<const Image>(&image, 1)).front();
}

Image reconstruct_genuine(const Image& image, const ForensicTrace& trace) {
  if (image.shape() != trace.G.shape())
    throw ShapeError("reconstruct_genuine: image " + shape_str(image.shape()) + " vs trace " +
                     shape_str(trace.G.shape()));
  Image out = image;
  out.flat() = (image.flat() - trace.G.flat()).cwiseMax(0.f).cwiseMin(1.f);
  return out;
}

}  // namespace mmdt
