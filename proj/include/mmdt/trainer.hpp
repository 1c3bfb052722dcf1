#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "mmdt/adam.hpp"
#include "mmdt/archive.hpp"
#include "mmdt/disentangler.hpp"
#include "mmdt/objectives.hpp"
#include "mmdt/synthesizer.hpp"

namespace mmdt {

enum class TrainPart { kGeneration, kSelfSupervision, kDiscriminator };

/// Parts executed in a 1-based epoch: all three on even epochs, no discriminator on odd ones.
std::set<TrainPart> schedule(long epoch);

struct TrainConfig {
  double learning_rate = 2e-5;
  int batch_size = 4;  ///< half genuine, half recaptured
  long total_iterations = 100000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  LossWeights weights;
  std::uint64_t seed = 0;
  long checkpoint_every = 10000;  ///< 0 disables periodic checkpoints
  long epoch_size = 0;            ///< iterations per epoch; 0 means ceil(train size / batch)
  long val_every = 1000;          ///< 0 disables validation
  DisentanglerConfig disentangler;
  SynthesizerConfig synthesizer;
  DiscriminatorConfig discriminator;
  std::filesystem::path out_dir;  ///< losses.csv, train.log and checkpoints; empty writes nothing

  void validate() const;
};

struct StepRecord {
  long iteration = 0;  ///< 1-based index of the step
  long epoch = 0;
  LossTerms terms;
  double total = 0;
  bool discriminator_updated = false;
};

struct TrainData {
  std::vector<Image> genuine;
  std::vector<Image> recaptured;
};

struct ValidationRecord {
  long iteration = 0;
  double pixel_loss = 0;
};

struct TrainResult {
  std::vector<StepRecord> history;
  std::vector<ValidationRecord> validation;
  long best_iteration = 0;  ///< iteration with the lowest validation pixel loss
};

/// Everything a run owns: networks, the frozen branch-(c) copy, optimizer moments and RNG.
class TrainState {
 public:
  explicit TrainState(const TrainConfig& config);

  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  const TrainConfig& config() const noexcept { return config_; }
  long iteration() const noexcept { return iteration_; }
  long epoch() const noexcept { return epoch_; }

  Disentangler<float> disentangler;
  Disentangler<float> frozen;  ///< snapshot taken at the start of the current epoch
  Synthesizer<float> synthesizer;
  DiscriminatorBank<float> discriminators;
  Adam<float> generator_opt;
  Adam<float> discriminator_opt;
  Rng rng;
  std::filesystem::path last_checkpoint;

  /// Copies the live disentangler (parameters and statistics) into the frozen copy.
  void refresh_frozen();
  /// Single archive with "disentangler.", "synthesizer.", "discriminators." prefixes.
  Archive to_archive() const;
  void save(const std::filesystem::path& path);

 private:
  friend TrainResult train(TrainState&, const TrainData&, const TrainData&);
  friend StepRecord train_step(TrainState&, const Tensor<float>&, const Tensor<float>&);
  TrainConfig config_;
  long iteration_ = 0;
  long epoch_ = 0;  ///< 0 until the first step opens epoch 1
  long epoch_size_ = 1;
};

/// One iteration on a (k, 3, H, W) genuine batch and a matching recaptured batch. Opens a new
/// epoch (refreshing the frozen copy) when the iteration counter crosses an epoch boundary.
StepRecord train_step(TrainState& state, const Tensor<float>& genuine, const Tensor<float>& recaptured);

/// Inference-mode pixel loss of the full generate-then-remove cycle on paired patches.
double validation_pixel_loss(const TrainState& state, const TrainData& data);

/// Runs `config.total_iterations` steps over `train`; validation pixel loss every `val_every`
/// steps when `val` is non-empty.
TrainResult train(TrainState& state, const TrainData& train, const TrainData& val = {});

}  // namespace mmdt
