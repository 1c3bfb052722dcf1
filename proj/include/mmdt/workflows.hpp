#pragma once

// Dataset-level glue used by the command-line tool.

#include <filesystem>
#include <string>
#include <vector>

#include "mmdt/archive.hpp"
#include "mmdt/classifier.hpp"
#include "mmdt/trainer.hpp"

namespace mmdt {

/// Reads `<root>/manifest.tsv` when present, otherwise ingests the genuine/recaptured folders.
DatasetManifest open_dataset(const std::filesystem::path& root);

/// Patches of every manifest image. Ids are "<image_ref>#<i>" with i the index in the eval-mode
/// grid, so a train-mode patch and the same eval-mode patch share an id.
std::vector<LabeledPatch> manifest_patches(const DatasetManifest& manifest, const std::filesystem::path& root,
                                           PatchMode mode, Index side = kPatchSide);

TrainData to_train_data(const std::vector<LabeledPatch>& patches);

/// Restores a disentangler from a train-disentangle checkpoint, reading its widths from metadata.
Disentangler<float> load_disentangler(const std::filesystem::path& checkpoint);

/// C and T of every eval-mode patch, stored as "<id>/C" and "<id>/T".
Archive export_traces(const Disentangler<float>& net, const DatasetManifest& manifest,
                      const std::filesystem::path& root);

/// Looks traces up in an export_traces archive; a missing id raises TraceError.
TraceProvider archived_traces(Archive archive);

/// Writes (G + 1) / 2 of one image's patches as 8-bit PNGs named "<stem>_<i>.png".
std::vector<std::filesystem::path> write_trace_images(const Disentangler<float>& net, const Image& image,
                                                      const std::filesystem::path& dir, const std::string& stem);

}  // namespace mmdt
