#include "mmdt/objectives.hpp"

#include <cmath>

namespace mmdt {

void LossWeights::validate() const {
  for (double v : {lambda1, lambda2, lambda3, lambda4, alpha1, alpha2})
    if (!(v >= 0) || !std::isfinite(v)) throw ParamError("loss weights must be finite and >= 0");
}

double total_loss(const LossTerms& t, const LossWeights& w) {
  for (double v : {t.L_R, t.L_G, t.L_D, t.L_P})
    if (!std::isfinite(v)) throw NumericError("non-finite loss component");
  return w.lambda1 * t.L_R + w.lambda2 * t.L_G + w.lambda3 * t.L_D + w.lambda4 * t.L_P;
}

std::vector<Tensor<float>> discriminate(const DiscriminatorBank<float>& bank, const Image& image) {
  validate_image(image);
  if (image_height(image) != 224 || image_width(image) != 224)
    throw ShapeError("discriminate expects a 224x224x3 image, got " + shape_str(image.shape()));
  NoGradGuard no_grad;
  std::vector<Tensor<float>> out;
  for (const auto& map : bank.forward(Var<float>(to_batch<float>(image))))
    out.push_back(map.value().reshaped({map.dim(2), map.dim(3)}));
  return out;
}

}  // namespace mmdt
