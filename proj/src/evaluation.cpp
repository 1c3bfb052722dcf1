#include "mmdt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace mmdt {

Label majority_vote(std::span<const Label> votes) {
  if (votes.empty()) throw VoteError("majority_vote of an empty list");
  const auto recaptured = std::count(votes.begin(), votes.end(), Label::kRecaptured);
  return 2 * static_cast<std::size_t>(recaptured) >= votes.size() ? Label::kRecaptured : Label::kGenuine;
}

double image_score(std::span<const double> patch_scores) {
  if (patch_scores.empty()) throw VoteError("image_score of an empty list");
  double sum = 0;
  for (double s : patch_scores) {
    if (!(s >= 0 && s <= 1)) throw ParamError("patch score outside [0, 1]: " + std::to_string(s));
    sum += s;
  }
  return sum / static_cast<double>(patch_scores.size());
}

namespace {

void check_metric_input(std::span<const double> scores, std::span<const Label> labels, std::size_t& n_gen,
                        std::size_t& n_rec) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  n_rec = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label::kRecaptured));
  n_gen = labels.size() - n_rec;
  if (n_gen == 0 || n_rec == 0) throw MetricError("metric needs both genuine and recaptured samples");
  for (double s : scores)
    if (!std::isfinite(s)) throw MetricError("non-finite score");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const Label> labels) {
  std::size_t n_gen, n_rec;
  check_metric_input(scores, labels, n_gen, n_rec);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based average ranks of the recaptured samples; tied groups share their mean rank.
  double rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == Label::kRecaptured) rank_sum += mean_rank;
    i = j;
  }
  const double r = static_cast<double>(n_rec), g = static_cast<double>(n_gen);
  return (rank_sum - r * (r + 1) / 2) / (r * g);
}

EerResult eer(std::span<const double> scores, std::span<const Label> labels) {
  std::size_t n_gen, n_rec;
  check_metric_input(scores, labels, n_gen, n_rec);
  std::vector<double> gen, rec, all(scores.begin(), scores.end());
  for (std::size_t i = 0; i < scores.size(); ++i)
    (labels[i] == Label::kRecaptured ? rec : gen).push_back(scores[i]);
  std::sort(gen.begin(), gen.end());
  std::sort(rec.begin(), rec.end());
  std::sort(all.begin(), all.end());

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> thresholds;
  thresholds.reserve(all.size() + 1);
  for (std::size_t i = 0; i + 1 < all.size(); ++i) thresholds.push_back(0.5 * (all[i] + all[i + 1]));
  thresholds.push_back(-inf);
  thresholds.push_back(inf);

  // |FPR - FNR| compared exactly as |fp * R - fn * G| on integer counts.
  const auto ng = static_cast<long long>(n_gen), nr = static_cast<long long>(n_rec);
  long long best_gap = std::numeric_limits<long long>::max();
  long long best_fp = 0, best_fn = 0;
  double best_t = 0;
  for (double t : thresholds) {
    const auto fp = static_cast<long long>(gen.end() - std::lower_bound(gen.begin(), gen.end(), t));
    const auto fn = static_cast<long long>(std::lower_bound(rec.begin(), rec.end(), t) - rec.begin());
    const long long gap = std::llabs(fp * nr - fn * ng);
    // Midpoints come first in ascending order, so ties keep the lowest finite threshold.
    if (gap < best_gap) {
      best_gap = gap;
      best_fp = fp;
      best_fn = fn;
      best_t = t;
    }
  }
  return {0.5 * (static_cast<double>(best_fp) / static_cast<double>(ng) +
                 static_cast<double>(best_fn) / static_cast<double>(nr)),
          best_t};
}

void ScoredSample::validate() const {
  if (patch_scores.empty() || patch_scores.size() != patch_votes.size())
    throw ParamError("sample '" + image_id + "' needs equal, non-empty score and vote lists");
  for (double s : patch_scores)
    if (!(s >= 0 && s <= 1)) throw ParamError("sample '" + image_id + "' has a score outside [0, 1]");
}

EvalReport summarize(const std::string& protocol, std::vector<ScoredSample> samples) {
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  EvalReport r;
  r.protocol = protocol;
  std::vector<double> image_scores, patch_scores;
  std::vector<Label> image_labels, patch_labels;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    s.validate();
    ImageRecord rec{s.image_id, s.label, s.patch_scores.size(), image_score(s.patch_scores),
                    majority_vote(s.patch_votes)};
    correct += rec.vote == rec.label;
    image_scores.push_back(rec.mean_score);
    image_labels.push_back(rec.label);
    patch_scores.insert(patch_scores.end(), s.patch_scores.begin(), s.patch_scores.end());
    patch_labels.insert(patch_labels.end(), s.patch_scores.size(), s.label);
    r.images.push_back(std::move(rec));
  }
  r.auc = auc(image_scores, image_labels);
  const auto e = eer(image_scores, image_labels);
  r.eer = e.eer;
  r.eer_threshold = e.threshold;
  r.patch_auc = auc(patch_scores, patch_labels);
  r.patch_eer = eer(patch_scores, patch_labels).eer;
  r.vote_accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  r.worse_than_chance = r.eer > 0.5;
  return r;
}

EvalReport run_protocol(const MmdtModel<float>& model, const std::string& train_tag, const DatasetManifest& test,
                        const std::filesystem::path& root, const TraceProvider& traces) {
  if (!model.initialized()) throw StateError("model is not initialized");
  validate_manifest(test);
  std::vector<ScoredSample> samples;
  for (const auto& entry : test.entries) {
    try {
      const Image image = read_image(root / entry.image_ref);
      const auto patches = extract_patches(image, model.config().image_side, PatchMode::kEval);
      std::vector<ModalityBundle> bundles;
      for (std::size_t i = 0; i < patches.size(); ++i) {
        const LabeledPatch lp{entry.image_ref + "#" + std::to_string(i), patches[i], entry.label};
        bundles.push_back(make_bundle(lp.rgb, traces(lp), model.active()));
      }
      ScoredSample s;
      s.image_id = entry.image_ref;
      s.label = entry.label;
      s.patch_scores = recaptured_probabilities(bundles, model);
      for (double p : s.patch_scores) s.patch_votes.push_back(p >= 0.5 ? Label::kRecaptured : Label::kGenuine);
      samples.push_back(std::move(s));
    } catch (const Error& e) {
      throw Error("while scoring image '" + entry.image_ref + "': " + e.what());
    }
  }
  std::string domain = test.entries.front().domain_tag.empty() ? "test" : test.entries.front().domain_tag;
  return summarize(train_tag + " -> " + domain, std::move(samples));
}

std::string summary_line(const EvalReport& r) {
  std::ostringstream out;
  out << std::setprecision(6) << "protocol=" << r.protocol << " auc=" << r.auc << " eer=" << r.eer
      << " eer_threshold=" << r.eer_threshold << " patch_auc=" << r.patch_auc << " patch_eer=" << r.patch_eer
      << " vote_accuracy=" << r.vote_accuracy << " images=" << r.images.size();
  if (r.worse_than_chance) out << " worse_than_chance=1";
  return out.str();
}

void write_report(const EvalReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << std::setprecision(9) << "image_id\tlabel\tn_patches\tmean_score\tvote\n";
  for (const auto& im : r.images)
    out << im.image_id << '\t' << to_string(im.label) << '\t' << im.n_patches << '\t' << im.mean_score << '\t'
        << to_string(im.vote) << '\n';
  out << "# summary\tprotocol=" << r.protocol << "\tauc=" << r.auc << "\teer=" << r.eer
      << "\teer_threshold=" << r.eer_threshold << "\tpatch_auc=" << r.patch_auc << "\tpatch_eer=" << r.patch_eer
      << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace mmdt
