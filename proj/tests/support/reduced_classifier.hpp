#pragma once

// Narrow classifier in double precision for finite-difference checks of the fine-tuning loss.

#include <vector>

#include "mmdt/classifier.hpp"
#include "support/gradcheck.hpp"

namespace mmdt::testing {

inline GradCheckResult classifier_gradient_check(int samples = 100) {
  BackboneConfig c;
  c.image_side = 32;
  c.patch_side = 16;
  c.token_dim = 24;
  c.heads = 2;
  c.depth = 2;
  c.ama_hidden = 8;
  MmdtModel<double> model(c, {Modality::kRgb, Modality::kC, Modality::kT}, 21);
  Rng rng(22);
  // Non-zero up-projections so every adapter weight receives gradient.
  for (const auto& e : model.params().entries())
    if (e.name.find(".up.weight") != std::string::npos) {
      auto v = e.var;
      v.mutable_value() = normal_tensor<double>(v.shape(), 0.2, rng);
    }
  std::vector<Tensor<double>> inputs;
  for (int m = 0; m < 3; ++m) inputs.push_back(normal_tensor<double>({3, 3, 32, 32}, 0.5, rng));
  const std::vector<int> labels{0, 1, 1};
  auto loss = [&] { return cross_entropy(model.forward(inputs), labels); };
  return check_gradients(loss, model.params().trainable(), samples, 23, 1e-5, 1e-4);
}

}  // namespace mmdt::testing
