#include "mmdt/synthesizer.hpp"

namespace mmdt {

Image synthesize_trace(const Synthesizer<float>& net, const Image& genuine, const Image& trace) {
  validate_image(genuine);
  validate_image(trace);
  NoGradGuard no_grad;
  auto out = net.forward(Var<float>(to_batch<float>(genuine)), Var<float>(to_batch<float>(trace)),
                         NormMode::kEval);
  return from_batch(out.G_hat.value(), 0);
}

Image reconstruct_recaptured(const Image& genuine, const Image& g_hat) {
  if (genuine.shape() != g_hat.shape())
    throw ShapeError("reconstruct_recaptured: image " + shape_str(genuine.shape()) + " vs trace " +
                     shape_str(g_hat.shape()));
  Image out = genuine;
  out.flat() = (genuine.flat() + g_hat.flat()).cwiseMax(0.f).cwiseMin(1.f);
  return out;
}

Image compose_partial_trace(const ForensicTrace& trace, bool use_c, bool use_t) {
  if (!use_c && !use_t) throw ParamError("compose_partial_trace needs C, T or both");
  if (!use_c) return trace.T;
  Image out = resize_up(trace.C, image_height(trace.T), image_width(trace.T));
  if (use_t) out.flat() += trace.T.flat();
  return out;
}

}  // namespace mmdt
