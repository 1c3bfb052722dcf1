// mmdt: dataset synthesis, trace disentanglement, classifier fine-tuning and evaluation.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "mmdt/config.hpp"
#include "mmdt/evaluation.hpp"
#include "mmdt/image.hpp"
#include "mmdt/runtime.hpp"
#include "mmdt/workflows.hpp"

namespace fs = std::filesystem;
using namespace mmdt;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "run configuration (section.key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides every seed in the configuration");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  cfg.validate();
  return cfg;
}

// Exactly one of an exported trace archive or a disentangler checkpoint.
struct TraceSource {
  std::string traces, disentangler;
  std::optional<Disentangler<float>> net;

  void add(CLI::App* cmd) {
    auto* a = cmd->add_option("--traces", traces, "archive written by export-traces")->check(CLI::ExistingFile);
    auto* b = cmd->add_option("--disentangler", disentangler, "train-disentangle checkpoint")
                  ->check(CLI::ExistingFile);
    a->excludes(b);
    b->excludes(a);
    cmd->callback([a, b] {
      if (a->count() + b->count() == 0) throw CLI::RequiredError("--traces or --disentangler");
    });
  }
  TraceProvider provider() {
    if (!traces.empty()) return archived_traces(load_archive(traces));
    net.emplace(load_disentangler(disentangler));
    return disentangler_traces(*net);
  }
};

void write_finetune_log(const FinetuneResult& r, const fs::path& path) {
  std::ofstream out(path);
  out << "epoch,train_loss,train_accuracy,val_accuracy\n";
  for (const auto& e : r.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_accuracy << '\n';
}

std::string domain_of(const DatasetManifest& m) {
  return m.entries.empty() || m.entries.front().domain_tag.empty() ? "train" : m.entries.front().domain_tag;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Document recapture detection with disentangled forensic traces"};
  app.require_subcommand(1);

  Common synth_c;
  std::size_t synth_n = 32;
  Index synth_side = 448;
  std::string synth_domain = "synthetic";
  auto* synth = app.add_subcommand("synth-data", "write a simulated genuine/recaptured dataset");
  add_common(synth, synth_c);
  synth->add_option("--n", synth_n, "images per class")->check(CLI::PositiveNumber);
  synth->add_option("--side", synth_side, "image side in pixels (at least 224)")->check(CLI::Range(224, 4096));
  synth->add_option("--domain", synth_domain, "domain tag recorded in the manifest");

  Common td_c;
  std::string td_data, td_val;
  auto* td = app.add_subcommand("train-disentangle", "train the trace disentangler");
  add_common(td, td_c);
  td->add_option("--data", td_data, "dataset root")->required()->check(CLI::ExistingDirectory);
  td->add_option("--val", td_val, "validation dataset root")->check(CLI::ExistingDirectory);

  Common ex_c;
  std::string ex_model, ex_data;
  auto* ex = app.add_subcommand("export-traces", "store C and T of every eval patch of a dataset");
  add_common(ex, ex_c);
  ex->add_option("--model", ex_model, "train-disentangle checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--data", ex_data, "dataset root")->required()->check(CLI::ExistingDirectory);

  Common tm_c;
  std::string tm_data, tm_val, tm_modalities = "rgb,c,t";
  TraceSource tm_traces;
  auto* tm = app.add_subcommand("train-mmdt", "fine-tune the adapters and head of the classifier");
  add_common(tm, tm_c);
  tm->add_option("--data", tm_data, "dataset root")->required()->check(CLI::ExistingDirectory);
  tm->add_option("--val", tm_val, "validation dataset root")->check(CLI::ExistingDirectory);
  tm->add_option("--modalities", tm_modalities, "comma-separated subset of rgb,c,t (rgb required)");
  tm_traces.add(tm);

  Common ev_c;
  std::string ev_model, ev_data;
  TraceSource ev_traces;
  auto* ev = app.add_subcommand("eval", "score a test dataset and write the image-level report");
  add_common(ev, ev_c);
  ev->add_option("--model", ev_model, "train-mmdt checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "test dataset root")->required()->check(CLI::ExistingDirectory);
  ev_traces.add(ev);

  Common vz_c;
  std::string vz_model;
  std::vector<std::string> vz_images;
  auto* vz = app.add_subcommand("viz-traces", "write (G + 1) / 2 of each patch as PNG");
  add_common(vz, vz_c);
  vz->add_option("--model", vz_model, "train-disentangle checkpoint")->required()->check(CLI::ExistingFile);
  vz->add_option("images", vz_images, "input images")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto parsed = app.get_subcommands();
    std::cerr << e.what() << "\n\n" << (parsed.empty() ? app.help() : parsed.front()->help());
    return 1;
  }

  try {
    if (*synth) {
      const auto cfg = resolve(synth_c);
      const auto m = write_synthetic_dataset(synth_c.out, synth_n, synth_side, synth_side, cfg.recapture,
                                             cfg.recapture.seed, synth_domain);
      std::cout << "wrote " << m.entries.size() << " images to " << synth_c.out << "\n";
    } else if (*td) {
      auto cfg = resolve(td_c);
      cfg.train.out_dir = td_c.out;
      fs::create_directories(cfg.train.out_dir);
      const auto train_data = to_train_data(manifest_patches(open_dataset(td_data), td_data, PatchMode::kTrain));
      TrainData val;
      if (!td_val.empty()) val = to_train_data(manifest_patches(open_dataset(td_val), td_val, PatchMode::kTrain));
      TrainState st(cfg.train);
      const auto r = train(st, train_data, val);
      std::ofstream(fs::path(td_c.out) / "run.cfg") << to_text(cfg);
      std::cout << "trained " << r.history.size() << " iterations; checkpoints in " << td_c.out << "\n";
    } else if (*ex) {
      resolve(ex_c);
      const auto net = load_disentangler(ex_model);
      const auto a = export_traces(net, open_dataset(ex_data), ex_data);
      fs::create_directories(ex_c.out);
      save_archive(a, fs::path(ex_c.out) / "traces.ckpt");
      std::cout << "exported " << a.meta("patches") << " patches to " << (fs::path(ex_c.out) / "traces.ckpt") << "\n";
    } else if (*tm) {
      const auto cfg = resolve(tm_c);
      const auto manifest = open_dataset(tm_data);
      const auto train_patches = manifest_patches(manifest, tm_data, PatchMode::kTrain, cfg.backbone.image_side);
      std::vector<LabeledPatch> val;
      if (!tm_val.empty()) val = manifest_patches(open_dataset(tm_val), tm_val, PatchMode::kEval, cfg.backbone.image_side);
      auto traces = tm_traces.provider();
      MmdtModel<float> model(cfg.backbone, parse_modalities(tm_modalities), cfg.finetune.seed);
      const auto r = finetune(model, train_patches, traces, cfg.finetune, val);
      fs::create_directories(tm_c.out);
      save_model(model, fs::path(tm_c.out) / "model.ckpt", {{"train_tag", domain_of(manifest)}});
      write_finetune_log(r, fs::path(tm_c.out) / "finetune.csv");
      std::ofstream(fs::path(tm_c.out) / "run.cfg") << to_text(cfg);
      std::cout << "fine-tuned " << r.epochs.size() << " epochs (best " << r.best_epoch << ")\n";
    } else if (*ev) {
      resolve(ev_c);
      const auto model = load_model(ev_model);
      const auto tag = load_archive(ev_model).metadata;
      const auto it = tag.find("train_tag");
      auto traces = ev_traces.provider();
      const auto report = run_protocol(model, it == tag.end() ? "train" : it->second, open_dataset(ev_data), ev_data, traces);
      fs::create_directories(ev_c.out);
      write_report(report, fs::path(ev_c.out) / "report.tsv");
      std::cout << summary_line(report) << "\n";
    } else if (*vz) {
      resolve(vz_c);
      const auto net = load_disentangler(vz_model);
      std::size_t n = 0;
      for (const auto& img : vz_images)
        n += write_trace_images(net, read_image(img), vz_c.out, fs::path(img).stem().string()).size();
      std::cout << "wrote " << n << " trace images to " << vz_c.out << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
