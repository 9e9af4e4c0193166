#pragma once

// Zero-shot image-category similarity and the positive/negative comparison
// of per-snapshot label scores.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "oneiros/backends.hpp"
#include "oneiros/dream_decode.hpp"
#include "oneiros/mann_whitney.hpp"
#include "oneiros/matrix.hpp"

namespace oneiros::evaluate {

inline constexpr double kDefaultTemperature = 100.0;
inline constexpr std::size_t kCocoLabelCount = 80;

enum class LabelSource { coco80, report };

/// Ordered label vocabulary: the 80 COCO labels first, then report labels
/// in input order. Case-insensitively unique.
struct LabelSet {
  std::vector<std::string> labels;
  std::vector<LabelSource> sources;

  std::size_t size() const noexcept { return labels.size(); }
  /// Position of `label` (case-insensitive), or size() when absent.
  std::size_t find(const std::string& label) const;
};

/// Loads the versioned COCO label file and verifies its count and checksum.
std::vector<std::string> load_coco80(const std::filesystem::path& path);

/// Path of the COCO label file shipped with the build.
std::filesystem::path default_coco80_path();

LabelSet build_label_set(const std::vector<std::string>& report_labels,
                         const std::vector<std::string>& coco80);

/// "a photo of <label>".
std::string label_caption(const std::string& label);

/// Row i is softmax(temperature · cosine(image_i, text_j)) over labels j.
struct SimilarityMatrix {
  Matrix scores;
  double temperature = kDefaultTemperature;
  LabelSet label_set;
  std::string source_id;  // subject the snapshots came from
};

SimilarityMatrix similarity_matrix(const std::vector<backends::UnitVector>& image_vecs,
                                   const std::vector<backends::UnitVector>& text_vecs,
                                   double temperature, const LabelSet& labels = {});

/// Embeds every decoded snapshot image and every label caption, then scores.
SimilarityMatrix score_sequence(const decode::SnapshotSequence& sequence,
                                const LabelSet& labels, const backends::Embedder& embedder,
                                double temperature = kDefaultTemperature);

/// Column of `m` for `label`, in snapshot order.
std::vector<double> label_score_series(const SimilarityMatrix& m, const std::string& label);

struct NegativeBreakdown {
  std::string source_id;
  std::size_t n = 0;
  double mean = 0.0;
};

struct ComparisonReport {
  std::string label;
  double mean_pos = 0.0;
  double mean_neg = 0.0;
  double diff = 0.0;
  UTestResult test;
  std::vector<NegativeBreakdown> negatives;
};

/// Positive scores from `pos`, negatives pooled (concatenated in order)
/// across `negs`, compared with a two-sided Mann-Whitney U test.
ComparisonReport compare_pos_neg(const SimilarityMatrix& pos, const std::vector<SimilarityMatrix>& negs,
                                 const std::string& label);

json to_json(const ComparisonReport& report);
ComparisonReport report_from_json(const json& j);

/// Two-row text table: dream labels, then p-values.
std::string render_table(const std::vector<ComparisonReport>& reports);

/// Filesystem-safe form of a label ("people running" -> "people_running").
std::string label_slug(const std::string& label);

}  // namespace oneiros::evaluate

namespace oneiros::evaluate {

/// One subject's decoded sleep session and the labels from its dream report.
struct SubjectInput {
  decode::SnapshotSequence sequence;
  std::vector<std::string> report_labels;
};

/// Scores every subject against the label set built from all report labels,
/// then compares each subject (positive) against all others (negatives) for
/// each of its report labels. Reports come out in subject, then label order.
std::vector<ComparisonReport> evaluate_subjects(const std::vector<SubjectInput>& subjects,
                                                const std::vector<std::string>& coco80,
                                                const backends::Embedder& embedder,
                                                double temperature = kDefaultTemperature,
                                                std::vector<SimilarityMatrix>* matrices = nullptr);

}  // namespace oneiros::evaluate
