#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mmdt/image.hpp"

namespace mmdt {

enum class Label : int { kGenuine = 0, kRecaptured = 1 };

const char* to_string(Label label);
Label parse_label(const std::string& text);

struct ManifestEntry {
  std::string image_ref;  ///< path relative to the dataset root
  Label label = Label::kGenuine;
  std::string domain_tag;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;

  bool operator==(const DatasetManifest&) const = default;
  std::size_t count(Label label) const;
};

struct IngestResult {
  DatasetManifest manifest;
  /// Files that could not be used, with the reason.
  std::vector<std::pair<std::string, std::string>> rejects;
};

/// Enumerates `<root>/genuine` and `<root>/recaptured` (PNG/BMP) in lexicographic order.
/// Unreadable or empty files go to `rejects`. Throws IngestError if either folder is missing.
IngestResult ingest_dataset(const std::filesystem::path& root, const std::string& domain_tag = "");

/// Line format: `<relative_path>\t<label>\t<domain_tag>`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Throws ParamError on duplicate refs, an empty list, or unknown labels.
void validate_manifest(const DatasetManifest& manifest);

inline constexpr Index kPatchSide = 224;

enum class PatchMode { kTrain, kEval };

/// Top-left corners of the patch grid, row-major.
std::vector<std::pair<Index, Index>> patch_origins(Index height, Index width, Index size,
                                                   PatchMode mode);
/// Train: non-overlapping floor(H/size) x floor(W/size) grid. Eval: the same grid plus
/// edge-snapped patches covering the right/bottom remainders.
std::vector<Image> extract_patches(const Image& image, Index size = kPatchSide,
                                   PatchMode mode = PatchMode::kTrain);

struct RecaptureParams {
  double blur_sigma1 = 0.0;
  double dither_blend = 0.0;
  int dither_cell = 2;
  std::array<double, 3> color_gain{1.0, 1.0, 1.0};
  std::array<double, 3> color_offset{0.0, 0.0, 0.0};
  double blur_sigma2 = 0.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  static RecaptureParams identity() { return {}; }
  /// Throws ParamError for negative sigmas, blend outside [0,1], or an unsupported cell.
  void validate() const;
};

/// Bayer index matrix of side n in {2, 4, 8}, row-major, values 0..n*n-1.
std::vector<int> bayer_matrix(int n);

/// Separable Gaussian blur, edge-clamped, kernel radius ceil(3 sigma). sigma == 0 is a copy.
Image gaussian_blur(const Image& image, double sigma);

/// Per-channel ordered dither: out = (1-blend) v + blend [v > (B + 1/2) / n^2].
Image ordered_dither(const Image& image, int cell, double blend);

/// blur(sigma1) -> ordered dither -> affine colour map (clamped) -> blur(sigma2)
/// -> seeded Gaussian noise -> clamp to [0, 1].
Image simulate_recapture(const Image& genuine, const RecaptureParams& params);

/// Reads every entry with `label` from `root` and cuts it into patches.
std::vector<Image> load_label_patches(const DatasetManifest& manifest, const std::filesystem::path& root,
                                      Label label, PatchMode mode, Index size = kPatchSide);

/// Label-stratified split into (train, val, test); deterministic in `seed`.
std::array<DatasetManifest, 3> split_manifest(const DatasetManifest& manifest,
                                              std::array<double, 3> ratios, std::uint64_t seed);

}  // namespace mmdt
