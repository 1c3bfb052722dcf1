#include "mmdt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

namespace mmdt {

std::set<TrainPart> schedule(long epoch) {
  if (epoch < 1) throw ParamError("epochs are 1-based, got " + std::to_string(epoch));
  if (epoch % 2 == 0) return {TrainPart::kGeneration, TrainPart::kSelfSupervision, TrainPart::kDiscriminator};
  return {TrainPart::kGeneration, TrainPart::kSelfSupervision};
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ParamError("learning_rate must be >= 0");
  if (batch_size < 2 || batch_size % 2 != 0) throw ParamError("batch_size must be even and >= 2");
  if (total_iterations < 0) throw ParamError("total_iterations must be >= 0");
  if (checkpoint_every < 0 || epoch_size < 0 || val_every < 0)
    throw ParamError("checkpoint_every, epoch_size and val_every must be >= 0");
  weights.validate();
}

namespace {

std::vector<Var<float>> concat_params(std::initializer_list<const ParamStore<float>*> stores) {
  std::vector<Var<float>> out;
  for (const auto* s : stores)
    for (const auto& v : s->trainable()) out.push_back(v);
  return out;
}

void set_requires_grad(ParamStore<float>& store, bool on) {
  store.set_trainable([on](const std::string&) { return on; });
}

double scalar(const Var<float>& v) { return static_cast<double>(v.value()[0]); }

}  // namespace

TrainState::TrainState(const TrainConfig& config)
    : disentangler(config.disentangler, config.seed * 4 + 1),
      frozen(config.disentangler, config.seed * 4 + 1),
      synthesizer(config.synthesizer, config.seed * 4 + 2),
      discriminators(config.discriminator, config.seed * 4 + 3),
      generator_opt(concat_params({&disentangler.params(), &synthesizer.params()}),
                    {config.learning_rate, config.beta1, config.beta2, 1e-8, 0.0}),
      discriminator_opt(discriminators.params().trainable(),
                        {config.learning_rate, config.beta1, config.beta2, 1e-8, 0.0}),
      rng(config.seed),
      config_(config) {
  config_.validate();
  set_requires_grad(frozen.params(), false);
}

void TrainState::refresh_frozen() { frozen.params().load_state(disentangler.params().state()); }

Archive TrainState::to_archive() const {
  Archive a;
  a.put(disentangler.params().state(), "disentangler.");
  a.put(synthesizer.params().state(), "synthesizer.");
  a.put(discriminators.params().state(), "discriminators.");
  a.metadata["kind"] = "disentangle";
  a.metadata["iteration"] = std::to_string(iteration_);
  a.metadata["epoch"] = std::to_string(epoch_);
  a.metadata["disentangler.base"] = std::to_string(config_.disentangler.base);
  a.metadata["synthesizer.base"] = std::to_string(config_.synthesizer.base);
  a.metadata["synthesizer.res_blocks"] = std::to_string(config_.synthesizer.res_blocks);
  a.metadata["discriminator.base"] = std::to_string(config_.discriminator.base);
  a.metadata["seed"] = std::to_string(config_.seed);
  return a;
}

void TrainState::save(const std::filesystem::path& path) {
  save_archive(to_archive(), path);
  last_checkpoint = path;
}

StepRecord train_step(TrainState& st, const Tensor<float>& genuine, const Tensor<float>& recaptured) {
  if (genuine.shape() != recaptured.shape() || genuine.rank() != 4 || genuine.dim(0) < 1)
    throw BatchError("train_step needs equal-shaped genuine and recaptured batches, got " +
                     shape_str(genuine.shape()) + " and " + shape_str(recaptured.shape()));
  const auto& w = st.config_.weights;
  const Index k = genuine.dim(0);

  if (st.iteration_ % st.epoch_size_ == 0) {
    st.epoch_ = st.iteration_ / st.epoch_size_ + 1;
    st.refresh_frozen();
  }
  const auto parts = schedule(st.epoch_);
  const bool update_d = parts.count(TrainPart::kDiscriminator) > 0;

  Var<float> i_g(genuine), i_r(recaptured);

  // 1) generation: disentangle both domains, remove the trace from I_R, transplant it onto I_G.
  set_requires_grad(st.discriminators.params(), false);
  auto tr = st.disentangler.forward(concat_batch<float>({i_g, i_r}), NormMode::kTrain);
  auto g_genuine = slice_batch(tr.G, 0, k);
  auto g_recaptured = slice_batch(tr.G, k, k);
  auto ig_hat = reconstruct_genuine(i_r, g_recaptured);
  auto syn = st.synthesizer.forward(i_g, g_recaptured, NormMode::kTrain);
  auto ir_hat = reconstruct_recaptured(i_g, syn.G_hat);

  auto l_r = regularizer_loss(g_genuine, g_recaptured, w);
  auto fake_maps = st.discriminators.forward(concat_batch<float>({ig_hat, ir_hat}));
  BankScores<float> fake;
  for (const auto& m : fake_maps) {
    fake.genuine.push_back(slice_batch(m, 0, k));
    fake.recaptured.push_back(slice_batch(m, k, k));
  }
  auto l_g = generator_loss(fake);

  // 2) self-supervision through the frozen copy.
  auto tr_frozen = st.frozen.forward(ir_hat, NormMode::kTrainNoUpdate);
  auto pseudo_genuine = reconstruct_genuine(ir_hat, tr_frozen.G);
  auto l_p = pixel_loss(pseudo_genuine, i_g);

  auto generator_objective = total_loss<float>(l_r, l_g, Var<float>(), l_p, w);
  st.generator_opt.zero_grad();
  backward(generator_objective);
  st.generator_opt.step();
  st.generator_opt.zero_grad();

  // 3) discriminators on detached reconstructions; evaluated without a graph on odd epochs
  // so every row of the loss log carries L_D.
  set_requires_grad(st.discriminators.params(), update_d);
  double l_d_value;
  {
    std::optional<NoGradGuard> no_grad;
    if (!update_d) no_grad.emplace();
    auto maps = st.discriminators.forward(
        concat_batch<float>({i_g, i_r, ig_hat.detach(), ir_hat.detach()}));
    BankScores<float> real, recon;
    for (const auto& m : maps) {
      real.genuine.push_back(slice_batch(m, 0, k));
      real.recaptured.push_back(slice_batch(m, k, k));
      recon.genuine.push_back(slice_batch(m, 2 * k, k));
      recon.recaptured.push_back(slice_batch(m, 3 * k, k));
    }
    auto l_d = discriminator_loss(real, recon);
    l_d_value = scalar(l_d);
    if (update_d) {
      st.discriminator_opt.zero_grad();
      backward(scale(l_d, static_cast<float>(w.lambda3)));
      st.discriminator_opt.step();
      st.discriminator_opt.zero_grad();
    }
  }

  StepRecord rec;
  rec.iteration = ++st.iteration_;
  rec.epoch = st.epoch_;
  rec.terms = {scalar(l_r), scalar(l_g), l_d_value, scalar(l_p)};
  rec.discriminator_updated = update_d;
  try {
    rec.total = total_loss(rec.terms, w);
  } catch (const NumericError&) {
    throw NumericError("non-finite loss at iteration " + std::to_string(rec.iteration) +
                       "; last good checkpoint: " +
                       (st.last_checkpoint.empty() ? std::string("none") : st.last_checkpoint.string()));
  }
  return rec;
}

double validation_pixel_loss(const TrainState& st, const TrainData& data) {
  const std::size_t n = std::min(data.genuine.size(), data.recaptured.size());
  if (n == 0) throw BatchError("validation needs genuine and recaptured patches");
  NoGradGuard no_grad;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Var<float> ig(to_batch<float>(data.genuine[i])), ir(to_batch<float>(data.recaptured[i]));
    auto g_r = st.disentangler.forward(ir, NormMode::kEval).G;
    auto ir_hat = reconstruct_recaptured(ig, st.synthesizer.forward(ig, g_r, NormMode::kEval).G_hat);
    auto pseudo = reconstruct_genuine(ir_hat, st.frozen.forward(ir_hat, NormMode::kEval).G);
    total += scalar(pixel_loss(pseudo, ig));
  }
  return total / static_cast<double>(n);
}

TrainResult train(TrainState& st, const TrainData& data, const TrainData& val) {
  const auto& cfg = st.config_;
  if (data.genuine.empty() || data.recaptured.empty())
    throw BatchError("training data needs both genuine and recaptured patches");
  const Index half = cfg.batch_size / 2;
  const auto n_train = static_cast<long>(data.genuine.size() + data.recaptured.size());
  st.epoch_size_ = cfg.epoch_size > 0 ? cfg.epoch_size : (n_train + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult result;
  if (cfg.total_iterations == 0) return result;

  const bool write = !cfg.out_dir.empty();
  std::ofstream csv, log;
  if (write) {
    std::filesystem::create_directories(cfg.out_dir);
    csv.open(cfg.out_dir / "losses.csv", std::ios::trunc);
    log.open(cfg.out_dir / "train.log", std::ios::trunc);
    if (!csv || !log) throw IoError("cannot write training logs in " + cfg.out_dir.string());
    csv << "iter,L_R,L_G,L_D,L_P,L\n" << std::setprecision(9);
  }

  std::vector<std::size_t> order_g(data.genuine.size()), order_r(data.recaptured.size());
  double best_val = std::numeric_limits<double>::infinity();
  const auto t0 = std::chrono::steady_clock::now();
  for (long step = 0; step < cfg.total_iterations; ++step) {
    const long within = st.iteration_ % st.epoch_size_;
    if (within == 0) {
      std::iota(order_g.begin(), order_g.end(), std::size_t{0});
      std::iota(order_r.begin(), order_r.end(), std::size_t{0});
      std::shuffle(order_g.begin(), order_g.end(), st.rng);
      std::shuffle(order_r.begin(), order_r.end(), st.rng);
    }
    std::vector<Image> bg, br;
    for (Index j = 0; j < half; ++j) {
      const auto slot = static_cast<std::size_t>(within * half + j);
      bg.push_back(data.genuine[order_g[slot % order_g.size()]]);
      br.push_back(data.recaptured[order_r[slot % order_r.size()]]);
    }
    const auto rec = train_step(st, to_batch<float>(std::span<const Image>(bg)),
                                to_batch<float>(std::span<const Image>(br)));
    result.history.push_back(rec);

    if (write) {
      csv << rec.iteration << ',' << rec.terms.L_R << ',' << rec.terms.L_G << ',' << rec.terms.L_D
          << ',' << rec.terms.L_P << ',' << rec.total << '\n';
      if (rec.iteration % 100 == 0) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << "iter " << rec.iteration << " epoch " << rec.epoch << " L_R " << rec.terms.L_R << " L_G "
            << rec.terms.L_G << " L_D " << rec.terms.L_D << " L_P " << rec.terms.L_P << " L " << rec.total
            << " elapsed_s " << std::fixed << std::setprecision(1) << secs << std::defaultfloat
            << std::setprecision(6) << '\n'
            << std::flush;
      }
    }
    if (cfg.val_every > 0 && !val.genuine.empty() && !val.recaptured.empty() &&
        rec.iteration % cfg.val_every == 0) {
      const double v = validation_pixel_loss(st, val);
      result.validation.push_back({rec.iteration, v});
      if (v < best_val) {
        best_val = v;
        result.best_iteration = rec.iteration;
        if (write) save_archive(st.to_archive(), cfg.out_dir / "best.ckpt");
      }
      if (write) log << "iter " << rec.iteration << " val_L_P " << v << '\n' << std::flush;
    }
    if (write && cfg.checkpoint_every > 0 && rec.iteration % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "checkpoint_" << std::setw(7) << std::setfill('0') << rec.iteration << ".ckpt";
      st.save(cfg.out_dir / name.str());
    }
  }
  if (write) st.save(cfg.out_dir / "final.ckpt");
  return result;
}

}  // namespace mmdt
