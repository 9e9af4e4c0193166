#pragma once

// Pipeline configuration and the file-based stages behind the CLI. Every
// stage reads the previous stage's artifact from the output directory, so
// any stage can be re-run on its own.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oneiros/backends.hpp"
#include "oneiros/fmri_ingest.hpp"
#include "oneiros/narrative.hpp"

namespace oneiros::pipeline {

/// Artifact names inside the output directory.
namespace artifacts {
inline constexpr const char* kWindowed = "windowed.bin";
inline constexpr const char* kSnapshots = "snapshots.json";
inline constexpr const char* kCaptions = "captions.json";
inline constexpr const char* kPrompt = "prompt.txt";
inline constexpr const char* kComposerReply = "composer_reply.txt";
inline constexpr const char* kScript = "script.json";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kReportsDir = "reports";
inline constexpr const char* kTable = "reports/table.txt";
inline constexpr const char* kLogsDir = "logs";
}  // namespace artifacts

struct EvaluationSubject {
  std::string subject_id;
  std::filesystem::path snapshots;
  std::vector<std::string> report_labels;
};

struct PipelineConfig {
  std::filesystem::path series;
  ingest::Format series_format = ingest::Format::binary;
  std::filesystem::path atlas;
  std::filesystem::path coco80;
  std::filesystem::path output_dir = "out";

  std::size_t window_frames = ingest::kDefaultWindowFrames;
  std::size_t stride_frames = ingest::kDefaultStrideFrames;
  double epsilon = ingest::kDefaultEpsilon;
  std::vector<std::string> roi_regions;

  backends::BackendConfigs backends;
  bool skip_failed = false;

  double temperature = 100.0;
  std::vector<EvaluationSubject> subjects;

  double shot_duration_s = narrative::kDefaultShotDuration;
  int repair_retries = narrative::kDefaultRepairRetries;
  std::string renderer;

  /// Digest of every setting that affects stage outputs (not output_dir).
  std::string digest() const;
  void validate() const;
};

/// Relative paths resolve against `base_dir`.
PipelineConfig config_from_json(const json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
json to_json(const PipelineConfig& cfg);

/// Command-line overrides applied on top of a loaded config.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<bool> skip_failed;
  std::optional<std::size_t> window;
  std::optional<std::size_t> stride;
  std::optional<double> temperature;
  std::optional<backends::Kind> backend_kind;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> backend_url;  // ONEIROS_BACKEND_URL
};

void apply_overrides(PipelineConfig& cfg, const Overrides& o);

/// Raised when a stage's input artifact is missing.
class StageOrderError : public ValidationError {
 public:
  explicit StageOrderError(const std::filesystem::path& missing)
      : ValidationError("missing stage input: " + missing.string()), missing_(missing) {}
  const std::filesystem::path& missing() const noexcept { return missing_; }

 private:
  std::filesystem::path missing_;
};

/// Everything a stage did, for the run log.
struct StageRecord {
  std::string stage;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
  double elapsed_ms = 0.0;
  int renderer_status = 0;
};

/// Shared backend handles plus call counters for one run.
struct Session {
  explicit Session(PipelineConfig config);

  PipelineConfig cfg;
  std::shared_ptr<backends::CallCounts> counts;
  const backends::BackendSet& backends();

 private:
  std::optional<backends::BackendSet> backends_;
};

StageRecord run_ingest(Session& s);
StageRecord run_decode(Session& s);
StageRecord run_narrate(Session& s);
StageRecord run_assemble(Session& s);
StageRecord run_evaluate(Session& s);
/// ingest → decode → narrate → assemble, then evaluate when subjects are configured.
std::vector<StageRecord> run_all(Session& s);

/// Synthetic harness to files: planted state, raw sessions, snapshot
/// manifests, reports, and an evaluate-ready pipeline config.
StageRecord run_synth(const std::filesystem::path& synth_config, const Overrides& overrides,
                      const std::filesystem::path& out_dir);

/// Spawns `command` with `manifest` as argv[1]; returns its exit status.
int run_renderer(const std::string& command, const std::filesystem::path& manifest);

}  // namespace oneiros::pipeline
