#pragma once

// Story composition: caption and task prompts, composer-output parsing, and
// the render-ready video manifest.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "oneiros/backends.hpp"
#include "oneiros/dream_decode.hpp"
#include "oneiros/error.hpp"

namespace oneiros::narrative {

inline constexpr double kDefaultShotDuration = 3.0;
inline constexpr int kDefaultRepairRetries = 1;

/// Caption of shot `index` (1-based). The constructor folds newlines into
/// spaces and trims; an empty result is rejected.
struct ShotCaption {
  ShotCaption(std::size_t index, std::string caption);
  std::size_t index;
  std::string caption;
};

struct ScriptShot {
  std::size_t index;
  std::string script_line;
  friend bool operator==(const ScriptShot&, const ScriptShot&) = default;
};

struct NarrativeScript {
  std::string title;
  std::string subjective_description;
  std::vector<ScriptShot> shots;
  std::string closing;
  std::string audio_track;
  friend bool operator==(const NarrativeScript&, const NarrativeScript&) = default;
};

struct ManifestEntry {
  backends::ImageRef image;
  std::size_t snapshot_index = 0;
  double start_s = 0.0;
  double duration_s = 0.0;
  std::string subtitle;
};

struct VideoManifest {
  std::string title;
  std::vector<ManifestEntry> entries;
  std::string closing;
  std::string audio_track;

  double total_duration_s() const noexcept;
};

class ParseError : public Error {
 public:
  enum class Kind { no_block, invalid_json, key, count, index };

  ParseError(Kind kind, const std::string& what, std::size_t found = 0, std::size_t expected = 0)
      : Error(what), kind_(kind), found_(found), expected_(expected) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t found() const noexcept { return found_; }
  std::size_t expected() const noexcept { return expected_; }

 private:
  Kind kind_;
  std::size_t found_;
  std::size_t expected_;
};

/// "Image 1: <caption 1>\nImage 2: <caption 2>..." with no trailing newline.
std::string build_caption_prompt(const std::vector<ShotCaption>& captions);

/// Task description, structured-output instruction, then the caption prompt.
std::string build_task_prompt(const std::string& caption_prompt);

/// The structured-output instruction appended to the task description.
const std::string& output_instruction();

/// Extracts the first fenced JSON block of `raw` and validates it.
NarrativeScript parse_script(const std::string& raw, std::size_t expected_shots);

json to_json(const NarrativeScript& script);
NarrativeScript script_from_json(const json& j, std::size_t expected_shots);

/// Result of a composer round: final script plus every prompt/reply pair.
struct Composition {
  NarrativeScript script;
  std::vector<std::string> prompts;
  std::vector<std::string> replies;
};

/// Calls the composer and parses its reply. On ParseError, retries up to
/// `repair_retries` times with a repair instruction appended, then rethrows.
Composition compose_script(const backends::NarrativeComposer& composer,
                           const std::vector<ShotCaption>& captions,
                           int repair_retries = kDefaultRepairRetries);

/// Captions every decoded (non-gap) snapshot, numbering them 1..N.
std::vector<ShotCaption> caption_snapshots(const decode::SnapshotSequence& sequence,
                                           const backends::Captioner& captioner);

VideoManifest assemble_manifest(const decode::SnapshotSequence& snapshots,
                                const NarrativeScript& script,
                                double shot_duration_s = kDefaultShotDuration);

json to_json(const VideoManifest& manifest);
VideoManifest manifest_from_json(const json& j);

}  // namespace oneiros::narrative
