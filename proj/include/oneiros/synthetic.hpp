#pragma once

// Planted-signal harness. Each synthetic subject's session is a rest period
// of pure noise followed by a sleep period whose frames carry the subject's
// planted label embedding through a known projection:
//
//   rest frame  = noise_sigma · η_t
//   sleep frame = Pᵀ · (signal_gain · e(label)) + noise_sigma · η_t
//
// with P an orthonormal embed_dim × vertices map and e(label) the planted
// embedding of "a photo of <label>". The rest period gives per-vertex
// session z-scoring a baseline to contrast the sleep period against. It
// defaults to four times the sleep length: z-scoring pins the whole session
// mean, and a short rest period would pull every subject's sleep mean towards
// zero, making subjects look alike and the null test conservative.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oneiros/backends.hpp"
#include "oneiros/dream_decode.hpp"
#include "oneiros/evaluate.hpp"
#include "oneiros/fmri_ingest.hpp"

namespace oneiros::synthetic {

struct SynthSubject {
  std::string subject_id;
  std::string planted_label;
};

inline constexpr std::size_t kRestFactor = 4;

struct SynthConfig {
  std::vector<SynthSubject> subjects;
  std::size_t vertices = 128;
  std::size_t frames = 200;                       // sleep-period frames
  std::optional<std::size_t> baseline_frames;     // rest frames; defaults to 4 * frames
  double sampling_hz = 1.25;
  double signal_gain = 1.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  std::size_t embed_dim = 32;

  std::size_t rest_frames() const noexcept { return baseline_frames.value_or(kRestFactor * frames); }
  void validate() const;
};

/// Preprocessing and scoring parameters for the end-to-end run.
struct HarnessOptions {
  std::size_t window_frames = ingest::kDefaultWindowFrames;
  std::size_t stride_frames = ingest::kDefaultStrideFrames;
  double epsilon = ingest::kDefaultEpsilon;
  double temperature = evaluate::kDefaultTemperature;
  int max_parallel = 1;
};

SynthConfig synth_config_from_json(const json& j);
HarnessOptions harness_options_from_json(const json& j);
json to_json(const SynthConfig& cfg);
json to_json(const HarnessOptions& options);

/// Short hex digest of the config and options.
std::string config_digest(const SynthConfig& cfg, const HarnessOptions& options);

/// Three subjects with the dream labels of the reference study.
SynthConfig reference_config(std::uint64_t seed = 0);

struct SynthDataset {
  std::vector<ingest::FmriSeries> series;  // full sessions, rest then sleep
  std::shared_ptr<const backends::PlantedState> planted;
  std::size_t rest_frames = 0;
};

/// Orthonormal rows via Gaussian draws and modified Gram-Schmidt.
Matrix orthonormal_projection(std::size_t rows, std::size_t cols, std::uint64_t seed);

SynthDataset generate_dataset(const SynthConfig& cfg);

struct SynthRun {
  std::string digest;
  std::vector<decode::SnapshotSequence> sequences;
  std::vector<evaluate::SimilarityMatrix> matrices;
  std::vector<evaluate::ComparisonReport> reports;  // one per planted label, subject order
};

/// z-score each full session, keep the sleep period, window-average, decode
/// with planted backends, then compare each subject's planted label against
/// the other subjects.
SynthRun run_end_to_end(const SynthConfig& cfg, const HarnessOptions& options,
                        const std::vector<std::string>& coco80);

/// Sleep-period windows decoded for one subject of a dataset.
decode::SnapshotSequence decode_subject(const SynthDataset& data, std::size_t subject,
                                        const SynthConfig& cfg, const HarnessOptions& options,
                                        const std::string& digest);

/// Fraction of (seed, label) tests with p < alpha over seeds [first_seed,
/// first_seed + runs).
double rejection_rate(SynthConfig cfg, const HarnessOptions& options,
                      const std::vector<std::string>& coco80, std::uint64_t first_seed,
                      std::size_t runs, double alpha);

}  // namespace oneiros::synthetic
