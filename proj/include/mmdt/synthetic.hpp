#pragma once

#include <cstdint>
#include <filesystem>

#include "mmdt/data_pipeline.hpp"

namespace mmdt {

/// Renders a card-like document: paper background, coloured header band, glyph rows,
/// a smooth photo block and ruling lines. Deterministic in `seed`.
Image render_document(Index height, Index width, std::uint64_t seed);

/// Direct-capture channel for genuine samples: mild optical blur and sensor noise.
Image capture_genuine(const Image& content, std::uint64_t seed);

/// Per-sample recapture parameters jittered around `base`.
RecaptureParams jitter_recapture(const RecaptureParams& base, std::uint64_t seed);

/// Default recapture channel of the desk dataset.
RecaptureParams desk_recapture_params();
/// A shifted channel (coarser screen, different blur and colour cast) for cross-domain tests.
RecaptureParams shifted_recapture_params();

struct SyntheticSample {
  Image image;
  Label label;
};

/// Generates `per_class` genuine and `per_class` recaptured documents. Genuine and
/// recaptured documents use disjoint content seeds.
std::vector<SyntheticSample> synthesize_samples(std::size_t per_class, Index height, Index width,
                                                const RecaptureParams& base, std::uint64_t seed);

/// Writes a dataset in the `<root>/genuine`, `<root>/recaptured` layout plus `manifest.tsv`.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, std::size_t per_class,
                                        Index height, Index width, const RecaptureParams& base,
                                        std::uint64_t seed, const std::string& domain_tag);

}  // namespace mmdt
