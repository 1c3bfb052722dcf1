#include "mmdt/synthetic.hpp"
#include "mmdt/params.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mmdt {

namespace {

using Color = std::array<float, 3>;

struct Canvas {
  Image im;
  Index h, w;

  void put(Index y, Index x, const Color& c) {
    if (y < 0 || x < 0 || y >= h || x >= w) return;
    for (int k = 0; k < 3; ++k) im.at(y, x, k) = c[k];
  }
  void rect(Index y0, Index x0, Index y1, Index x1, const Color& c) {
    for (Index y = std::max<Index>(y0, 0); y < std::min(y1, h); ++y)
      for (Index x = std::max<Index>(x0, 0); x < std::min(x1, w); ++x) put(y, x, c);
  }
};

double uni(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
Index uni_i(Rng& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

// One glyph made of 2-4 strokes inside a gw x gh cell.
void draw_glyph(Canvas& cv, Index y, Index x, Index gw, Index gh, Index thick, const Color& ink,
                Rng& rng) {
  const int strokes = static_cast<int>(uni_i(rng, 2, 4));
  for (int s = 0; s < strokes; ++s) {
    switch (uni_i(rng, 0, 6)) {
      case 0: cv.rect(y, x, y + gh, x + thick, ink); break;
      case 1: cv.rect(y, x + gw - thick, y + gh, x + gw, ink); break;
      case 2: cv.rect(y, x + gw / 2, y + gh, x + gw / 2 + thick, ink); break;
      case 3: cv.rect(y, x, y + thick, x + gw, ink); break;
      case 4: cv.rect(y + gh / 2, x, y + gh / 2 + thick, x + gw, ink); break;
      case 5: cv.rect(y + gh - thick, x, y + gh, x + gw, ink); break;
      default:
        for (Index t = 0; t < gh; ++t) {
          const Index xx = x + (t * gw) / std::max<Index>(gh, 1);
          cv.rect(y + t, xx, y + t + 1, xx + thick, ink);
        }
    }
  }
}

void draw_text_line(Canvas& cv, Index y, Index x0, Index x1, Index gh, const Color& ink, Rng& rng) {
  const Index gw = std::max<Index>(3, gh * 2 / 3);
  const Index thick = gh >= 10 ? 2 : 1;
  Index x = x0;
  while (x + gw < x1) {
    const Index letters = uni_i(rng, 2, 8);
    for (Index l = 0; l < letters && x + gw < x1; ++l) {
      draw_glyph(cv, y, x, gw, gh, thick, ink, rng);
      x += gw + std::max<Index>(1, gw / 3);
    }
    x += gw;
  }
}

}  // namespace

Image render_document(Index height, Index width, std::uint64_t seed) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);
  Canvas cv{make_image(height, width), height, width};

  const Color paper{static_cast<float>(uni(rng, 0.90, 0.98)), static_cast<float>(uni(rng, 0.90, 0.98)),
                    static_cast<float>(uni(rng, 0.88, 0.97))};
  const double shade_y = uni(rng, -0.04, 0.04), shade_x = uni(rng, -0.04, 0.04);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const float s = static_cast<float>(shade_y * y / height + shade_x * x / width);
      cv.put(y, x, {paper[0] + s, paper[1] + s, paper[2] + s});
    }

  // Header band with light lettering.
  const Color band{static_cast<float>(uni(rng, 0.05, 0.7)), static_cast<float>(uni(rng, 0.1, 0.6)),
                   static_cast<float>(uni(rng, 0.2, 0.8))};
  const Index band_top = uni_i(rng, 0, height / 4);
  const Index band_h = std::max<Index>(12, static_cast<Index>(height * uni(rng, 0.08, 0.16)));
  cv.rect(band_top, 0, band_top + band_h, width, band);
  draw_text_line(cv, band_top + band_h / 4, width / 10, width - width / 10,
                 std::max<Index>(6, band_h / 2), {0.97f, 0.97f, 0.95f}, rng);

  // Photo block: smooth gradient with an elliptical subject.
  const Index pw = static_cast<Index>(width * uni(rng, 0.2, 0.32));
  const Index ph = static_cast<Index>(pw * uni(rng, 1.1, 1.35));
  const bool photo_left = uni(rng, 0, 1) < 0.5;
  const Index px = photo_left ? width / 16 : width - width / 16 - pw;
  const Index py = std::min(height - ph - 1, band_top + band_h + uni_i(rng, 4, std::max<Index>(5, height / 8)));
  const Color bg{static_cast<float>(uni(rng, 0.4, 0.9)), static_cast<float>(uni(rng, 0.4, 0.9)),
                 static_cast<float>(uni(rng, 0.5, 0.95))};
  const Color skin{static_cast<float>(uni(rng, 0.6, 0.9)), static_cast<float>(uni(rng, 0.45, 0.75)),
                   static_cast<float>(uni(rng, 0.35, 0.65))};
  for (Index y = 0; y < ph; ++y)
    for (Index x = 0; x < pw; ++x) {
      const double u = static_cast<double>(x) / pw - 0.5, v = static_cast<double>(y) / ph - 0.45;
      const bool inside = (u * u) / 0.09 + (v * v) / 0.12 < 1.0;
      const float g = static_cast<float>(0.15 * v);
      Color c = inside ? skin : bg;
      for (auto& ch : c) ch = std::clamp(ch - g, 0.f, 1.f);
      cv.put(py + y, px + x, c);
    }

  // Body text, clear of the photo block.
  const Color ink{static_cast<float>(uni(rng, 0.02, 0.2)), static_cast<float>(uni(rng, 0.02, 0.2)),
                  static_cast<float>(uni(rng, 0.05, 0.35))};
  const Index gh = uni_i(rng, 7, 11);
  const Index line_step = gh + uni_i(rng, 5, 10);
  for (Index y = band_top + band_h + 6; y + gh < height - 4; y += line_step) {
    const bool beside_photo = y + gh >= py && y <= py + ph;
    Index x0 = width / 20, x1 = width - width / 20;
    if (beside_photo) (photo_left ? x0 : x1) = photo_left ? px + pw + 8 : px - 8;
    if (uni(rng, 0, 1) < 0.15) {
      cv.rect(y + gh / 2, x0, y + gh / 2 + 1, x1, ink);
      continue;
    }
    draw_text_line(cv, y, x0, std::min(x1, x0 + static_cast<Index>((x1 - x0) * uni(rng, 0.5, 1.0))),
                   gh, ink, rng);
  }
  for (auto& v : cv.im.values()) v = std::clamp(v, 0.f, 1.f);
  return cv.im;
}

Image capture_genuine(const Image& content, std::uint64_t seed) {
  RecaptureParams direct;
  direct.blur_sigma2 = 0.5;
  direct.noise_std = 0.01;
  direct.seed = seed;
  return simulate_recapture(content, direct);
}

RecaptureParams desk_recapture_params() {
  RecaptureParams p;
  p.blur_sigma1 = 0.7;
  p.dither_blend = 0.45;
  p.dither_cell = 4;
  p.color_gain = {0.94, 0.92, 0.97};
  p.color_offset = {0.03, 0.03, 0.05};
  p.blur_sigma2 = 0.6;
  p.noise_std = 0.01;
  return p;
}

RecaptureParams shifted_recapture_params() {
  RecaptureParams p;
  p.blur_sigma1 = 0.9;
  p.dither_blend = 0.4;
  p.dither_cell = 8;
  p.color_gain = {0.97, 0.95, 0.92};
  p.color_offset = {0.04, 0.02, 0.02};
  p.blur_sigma2 = 0.7;
  p.noise_std = 0.012;
  return p;
}

RecaptureParams jitter_recapture(const RecaptureParams& base, std::uint64_t seed) {
  Rng rng(seed ^ 0xA5A5A5A5DEADBEEFULL);
  RecaptureParams p = base;
  p.blur_sigma1 = base.blur_sigma1 * uni(rng, 0.8, 1.2);
  p.blur_sigma2 = base.blur_sigma2 * uni(rng, 0.8, 1.2);
  p.dither_blend = std::clamp(base.dither_blend * uni(rng, 0.8, 1.2), 0.0, 1.0);
  for (int c = 0; c < 3; ++c) {
    p.color_gain[c] = base.color_gain[c] + uni(rng, -0.02, 0.02);
    p.color_offset[c] = base.color_offset[c] + uni(rng, -0.01, 0.01);
  }
  p.seed = seed;
  return p;
}

std::vector<SyntheticSample> synthesize_samples(std::size_t per_class, Index height, Index width,
                                                const RecaptureParams& base, std::uint64_t seed) {
  std::vector<SyntheticSample> out;
  out.reserve(2 * per_class);
  for (std::size_t i = 0; i < per_class; ++i) {
    const std::uint64_t s = seed * 1000003ULL + 2 * i;
    out.push_back({capture_genuine(render_document(height, width, s), s + 17), Label::kGenuine});
  }
  for (std::size_t i = 0; i < per_class; ++i) {
    const std::uint64_t s = seed * 1000003ULL + 2 * i + 1;
    out.push_back({simulate_recapture(render_document(height, width, s), jitter_recapture(base, s)),
                   Label::kRecaptured});
  }
  return out;
}

DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, std::size_t per_class,
                                        Index height, Index width, const RecaptureParams& base,
                                        std::uint64_t seed, const std::string& domain_tag) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "genuine");
  fs::create_directories(root / "recaptured");
  DatasetManifest m;
  m.seed = seed;
  const auto samples = synthesize_samples(per_class, height, width, base, seed);
  std::size_t idx[2] = {0, 0};
  for (const auto& s : samples) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", idx[static_cast<int>(s.label)]++);
    const std::string rel = std::string(to_string(s.label)) + "/" + name;
    write_png(s.image, root / rel);
    m.entries.push_back({rel, s.label, domain_tag});
  }
  save_manifest(m, root / "manifest.tsv");
  return m;
}

}  // namespace mmdt
