#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mmdt/classifier.hpp"
#include "mmdt/data_pipeline.hpp"

namespace mmdt {

// Scores are probabilities of "recaptured": higher means more likely recaptured.

/// Strict majority wins; an exact tie is decided as recaptured. Throws VoteError when empty.
Label majority_vote(std::span<const Label> votes);

/// Mean patch score. Throws VoteError when empty and ParamError outside [0, 1].
double image_score(std::span<const double> patch_scores);

/// P(recaptured score > genuine score) with ties counted one half, via average ranks.
double auc(std::span<const double> scores, std::span<const Label> labels);

struct EerResult {
  double eer = 0;
  double threshold = 0;
};

/// Sweeps -inf, the midpoints of consecutive sorted scores, and +inf. FPR(t) is the share of
/// genuine scores >= t and FNR(t) the share of recaptured scores < t; returns (FPR + FNR) / 2
/// at the threshold minimizing |FPR - FNR|, taking the lowest finite one on ties.
EerResult eer(std::span<const double> scores, std::span<const Label> labels);

struct ScoredSample {
  std::string image_id;
  std::vector<double> patch_scores;
  std::vector<Label> patch_votes;
  Label label = Label::kGenuine;

  void validate() const;
};

struct ImageRecord {
  std::string image_id;
  Label label = Label::kGenuine;
  std::size_t n_patches = 0;
  double mean_score = 0;
  Label vote = Label::kGenuine;
};

struct EvalReport {
  std::string protocol;
  double auc = 0;
  double eer = 0;
  double eer_threshold = 0;
  double patch_auc = 0;  ///< the same metrics over individual patches, for comparison
  double patch_eer = 0;
  double vote_accuracy = 0;
  bool worse_than_chance = false;  ///< set when eer exceeds 0.5
  std::vector<ImageRecord> images;  ///< sorted by id
};

/// Image-level metrics over mean patch scores plus the voted decisions.
EvalReport summarize(const std::string& protocol, std::vector<ScoredSample> samples);

/// Patches each test image in eval mode, classifies every patch with traces from `traces`, and
/// summarizes. The protocol is named "<train_tag> -> <test domain>".
EvalReport run_protocol(const MmdtModel<float>& model, const std::string& train_tag, const DatasetManifest& test,
                        const std::filesystem::path& root, const TraceProvider& traces);

/// One tab-separated record per image, then a "# summary" record.
void write_report(const EvalReport& report, const std::filesystem::path& path);
std::string summary_line(const EvalReport& report);

}  // namespace mmdt
