#include "mmdt/workflows.hpp"

#include <algorithm>

#include "mmdt/image.hpp"

namespace mmdt {

namespace fs = std::filesystem;

DatasetManifest open_dataset(const fs::path& root) {
  if (fs::exists(root / "manifest.tsv")) return load_manifest(root / "manifest.tsv");
  auto ingested = ingest_dataset(root);
  return std::move(ingested.manifest);
}

std::vector<LabeledPatch> manifest_patches(const DatasetManifest& manifest, const fs::path& root, PatchMode mode,
                                           Index side) {
  validate_manifest(manifest);
  std::vector<LabeledPatch> out;
  for (const auto& e : manifest.entries) {
    const Image image = read_image(root / e.image_ref);
    const auto h = image_height(image), w = image_width(image);
    const auto eval = patch_origins(h, w, side, PatchMode::kEval);
    for (auto origin : patch_origins(h, w, side, mode)) {
      const auto i = std::find(eval.begin(), eval.end(), origin) - eval.begin();
      out.push_back({e.image_ref + "#" + std::to_string(i), crop(image, origin.first, origin.second, side, side),
                     e.label});
    }
  }
  return out;
}

TrainData to_train_data(const std::vector<LabeledPatch>& patches) {
  TrainData d;
  for (const auto& p : patches) (p.label == Label::kGenuine ? d.genuine : d.recaptured).push_back(p.rgb);
  return d;
}

Disentangler<float> load_disentangler(const fs::path& checkpoint) {
  const Archive a = load_archive(checkpoint);
  if (a.meta("kind") != "disentangle") throw StateError(checkpoint.string() + " is not a disentangler checkpoint");
  DisentanglerConfig cfg;
  cfg.base = std::stol(a.meta("disentangler.base"));
  Disentangler<float> net(cfg);
  net.params().load_state(a.get<float>("disentangler."));
  return net;
}

Archive export_traces(const Disentangler<float>& net, const DatasetManifest& manifest, const fs::path& root) {
  Archive a;
  for (const auto& p : manifest_patches(manifest, root, PatchMode::kEval)) {
    auto trace = disentangle(net, p.rgb);
    a.tensors.emplace(p.id + "/C", std::move(trace.C));
    a.tensors.emplace(p.id + "/T", std::move(trace.T));
  }
  a.metadata["kind"] = "traces";
  a.metadata["patches"] = std::to_string(a.tensors.size() / 2);
  return a;
}

TraceProvider archived_traces(Archive archive) {
  auto store = std::make_shared<const Archive>(std::move(archive));
  return [store](const LabeledPatch& patch) {
    const auto c = store->tensors.find(patch.id + "/C");
    const auto t = store->tensors.find(patch.id + "/T");
    if (c == store->tensors.end() || t == store->tensors.end())
      throw TraceError("no exported traces for patch '" + patch.id + "'");
    ForensicTrace out;
    out.C = std::get<Tensor<float>>(c->second);
    out.T = std::get<Tensor<float>>(t->second);
    out.G = resize_up(out.C, image_height(out.T), image_width(out.T));
    out.G.flat() += out.T.flat();
    return out;
  };
}

std::vector<fs::path> write_trace_images(const Disentangler<float>& net, const Image& image, const fs::path& dir,
                                         const std::string& stem) {
  fs::create_directories(dir);
  std::vector<fs::path> written;
  const auto patches = extract_patches(image, kPatchSide, PatchMode::kEval);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    Image shown = disentangle(net, patches[i]).G;
    shown.flat() = ((shown.flat().array() + 1.f) * 0.5f).matrix();
    const auto path = dir / (stem + "_" + std::to_string(i) + ".png");
    write_png(shown, path);
    written.push_back(path);
  }
  return written;
}

}  // namespace mmdt
