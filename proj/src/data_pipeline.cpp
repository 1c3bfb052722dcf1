#include "mmdt/data_pipeline.hpp"
#include "mmdt/params.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace mmdt {

namespace fs = std::filesystem;

const char* to_string(Label label) {
  return label == Label::kGenuine ? "genuine" : "recaptured";
}

Label parse_label(const std::string& text) {
  if (text == "genuine") return Label::kGenuine;
  if (text == "recaptured") return Label::kRecaptured;
  throw ParamError("unknown label '" + text + "'");
}

std::size_t DatasetManifest::count(Label label) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [label](const ManifestEntry& e) { return e.label == label; }));
}

IngestResult ingest_dataset(const fs::path& root, const std::string& domain_tag) {
  IngestResult result;
  for (Label label : {Label::kGenuine, Label::kRecaptured}) {
    const fs::path dir = root / to_string(label);
    if (!fs::is_directory(dir)) throw IngestError("missing subdirectory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(dir)) {
      if (!de.is_regular_file()) continue;
      auto ext = de.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (ext == ".png" || ext == ".bmp") files.push_back(de.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string rel = fs::relative(f, root).generic_string();
      try {
        Image im = read_image(f);
        validate_image(im);
        result.manifest.entries.push_back({rel, label, domain_tag});
      } catch (const Error& e) {
        result.rejects.emplace_back(rel, e.what());
      }
    }
  }
  return result;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& e : manifest.entries)
    out << e.image_ref << '\t' << to_string(e.label) << '\t' << e.domain_tag << '\n';
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw ParamError("manifest line " + std::to_string(lineno) + " needs 3 tab-separated fields");
    m.entries.push_back({line.substr(0, t1), parse_label(line.substr(t1 + 1, t2 - t1 - 1)),
                         line.substr(t2 + 1)});
  }
  validate_manifest(m);
  return m;
}

void validate_manifest(const DatasetManifest& manifest) {
  if (manifest.entries.empty()) throw ParamError("manifest is empty");
  std::set<std::string> seen;
  for (const auto& e : manifest.entries)
    if (!seen.insert(e.image_ref).second) throw ParamError("duplicate image ref " + e.image_ref);
}

std::vector<std::pair<Index, Index>> patch_origins(Index height, Index width, Index size,
                                                   PatchMode mode) {
  if (height < size || width < size)
    throw PatchError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " smaller than patch side " + std::to_string(size));
  auto axis = [&](Index extent) {
    std::vector<Index> starts;
    for (Index s = 0; s + size <= extent; s += size) starts.push_back(s);
    if (mode == PatchMode::kEval && extent % size != 0) starts.push_back(extent - size);
    return starts;
  };
  const auto ys = axis(height), xs = axis(width);
  std::vector<std::pair<Index, Index>> out;
  for (Index y : ys)
    for (Index x : xs) out.emplace_back(y, x);
  return out;
}

std::vector<Image> extract_patches(const Image& image, Index size, PatchMode mode) {
  validate_image(image);
  std::vector<Image> out;
  for (auto [y, x] : patch_origins(image_height(image), image_width(image), size, mode))
    out.push_back(crop(image, y, x, size, size));
  return out;
}

std::vector<Image> load_label_patches(const DatasetManifest& manifest, const fs::path& root,
                                      Label label, PatchMode mode, Index size) {
  std::vector<Image> out;
  for (const auto& e : manifest.entries) {
    if (e.label != label) continue;
    for (auto& p : extract_patches(read_image(root / e.image_ref), size, mode)) out.push_back(std::move(p));
  }
  return out;
}

void RecaptureParams::validate() const {
  auto bad = [](double v) { return !std::isfinite(v) || v < 0; };
  if (bad(blur_sigma1) || bad(blur_sigma2)) throw ParamError("blur sigma must be >= 0");
  if (!(dither_blend >= 0 && dither_blend <= 1)) throw ParamError("dither_blend must be in [0,1]");
  if (dither_cell != 2 && dither_cell != 4 && dither_cell != 8)
    throw ParamError("dither_cell must be 2, 4 or 8");
  if (bad(noise_std)) throw ParamError("noise_std must be >= 0");
  for (int c = 0; c < 3; ++c)
    if (!std::isfinite(color_gain[c]) || !std::isfinite(color_offset[c]))
      throw ParamError("colour map must be finite");
}

std::vector<int> bayer_matrix(int n) {
  if (n != 2 && n != 4 && n != 8) throw ParamError("Bayer size must be 2, 4 or 8");
  std::vector<int> m{0, 2, 3, 1};
  for (int side = 2; side < n; side *= 2) {
    const int next = side * 2;
    std::vector<int> grown(static_cast<std::size_t>(next * next));
    static constexpr int kOffset[2][2] = {{0, 2}, {3, 1}};
    for (int qy = 0; qy < 2; ++qy)
      for (int qx = 0; qx < 2; ++qx)
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x)
            grown[(qy * side + y) * next + qx * side + x] = 4 * m[y * side + x] + kOffset[qy][qx];
    m = std::move(grown);
  }
  return m;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma < 0) throw ParamError("blur sigma must be >= 0");
  if (sigma == 0) return image;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[i + radius] = static_cast<float>(v);
    total += v;
  }
  for (auto& v : k) v = static_cast<float>(v / total);

  const Index h = image_height(image), w = image_width(image);
  Image tmp = make_image(h, w), out = make_image(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const Index xx = std::clamp<Index>(x + i, 0, w - 1);
          acc += k[i + radius] * image.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const Index yy = std::clamp<Index>(y + i, 0, h - 1);
          acc += k[i + radius] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = acc;
      }
  return out;
}

Image ordered_dither(const Image& image, int cell, double blend) {
  const auto bayer = bayer_matrix(cell);
  const float b = static_cast<float>(blend);
  const double cells = static_cast<double>(cell * cell);
  std::vector<float> threshold(bayer.size());
  for (std::size_t i = 0; i < bayer.size(); ++i)
    threshold[i] = static_cast<float>((bayer[i] + 0.5) / cells);
  Image out = image;
  const Index h = image_height(image), w = image_width(image);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const float t = threshold[(y % cell) * cell + (x % cell)];
      for (Index c = 0; c < 3; ++c) {
        const float v = image.at(y, x, c);
        const float d = v > t ? 1.f : 0.f;
        out.at(y, x, c) = (1.f - b) * v + b * d;
      }
    }
  return out;
}

Image simulate_recapture(const Image& genuine, const RecaptureParams& params) {
  params.validate();
  validate_image(genuine);
  Image im = gaussian_blur(genuine, params.blur_sigma1);
  if (params.dither_blend > 0) im = ordered_dither(im, params.dither_cell, params.dither_blend);
  const bool colour_identity = params.color_gain == std::array<double, 3>{1, 1, 1} &&
                               params.color_offset == std::array<double, 3>{0, 0, 0};
  if (!colour_identity) {
    const Index n = image_height(im) * image_width(im);
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < 3; ++c) {
        float& v = im[i * 3 + c];
        v = std::clamp(static_cast<float>(params.color_gain[c] * v + params.color_offset[c]), 0.f, 1.f);
      }
  }
  im = gaussian_blur(im, params.blur_sigma2);
  if (params.noise_std > 0) {
    Rng rng(params.seed);
    std::normal_distribution<double> noise(0.0, params.noise_std);
    for (auto& v : im.values()) v += static_cast<float>(noise(rng));
  }
  for (auto& v : im.values()) v = std::clamp(v, 0.f, 1.f);
  return im;
}

std::array<DatasetManifest, 3> split_manifest(const DatasetManifest& manifest,
                                              std::array<double, 3> ratios, std::uint64_t seed) {
  double sum = 0;
  for (double r : ratios) {
    if (!(r > 0)) throw SplitError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw SplitError("split ratios must sum to 1");
  validate_manifest(manifest);

  std::array<DatasetManifest, 3> parts;
  for (auto& p : parts) p.seed = seed;
  Rng rng(seed);
  for (Label label : {Label::kGenuine, Label::kRecaptured}) {
    std::vector<ManifestEntry> pool;
    for (const auto& e : manifest.entries)
      if (e.label == label) pool.push_back(e);
    if (pool.empty()) continue;
    const std::size_t n = pool.size();
    if (n < parts.size())
      throw SplitError(std::string("label ") + to_string(label) + " has only " +
                       std::to_string(n) + " entries for 3 split parts");
    std::shuffle(pool.begin(), pool.end(), rng);

    // Largest-remainder apportionment, then guarantee one entry per part.
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double exact = ratios[i] * static_cast<double>(n);
      counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      frac[i] = exact - static_cast<double>(counts[i]);
      assigned += counts[i];
    }
    while (assigned < n) {
      const auto i = static_cast<std::size_t>(std::max_element(frac.begin(), frac.end()) - frac.begin());
      ++counts[i];
      frac[i] = -1;
      ++assigned;
    }
    for (std::size_t i = 0; i < 3; ++i)
      while (counts[i] == 0) {
        const auto big = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        --counts[big];
        ++counts[i];
      }

    std::size_t pos = 0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < counts[i]; ++k) parts[i].entries.push_back(pool[pos++]);
  }
  for (auto& p : parts)
    std::sort(p.entries.begin(), p.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.image_ref < b.image_ref; });
  return parts;
}

}  // namespace mmdt
