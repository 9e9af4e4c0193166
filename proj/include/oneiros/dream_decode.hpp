#pragma once

// Zero-shot decoding of window-averaged sleep fMRI into a sequence of
// snapshot images: image_i = generate(encode(window_i)).

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "oneiros/backends.hpp"
#include "oneiros/error.hpp"
#include "oneiros/fmri_ingest.hpp"

namespace oneiros::decode {

/// One decoded window. `latent` and `image` are empty for a gap (a window
/// whose backend calls failed in skip-failed mode).
struct DreamSnapshot {
  std::size_t index = 1;  // 1-based
  ingest::WindowSpan span{0.0, 0.0};
  std::optional<backends::LatentVector> latent;
  std::optional<backends::ImageRef> image;
  std::string gap_reason;

  bool is_gap() const noexcept { return !image.has_value(); }
};

struct SnapshotSequence {
  std::vector<DreamSnapshot> snapshots;
  std::string subject_id;
  std::string session_id;
  std::string config_digest;

  /// Snapshots that are not gaps, in order.
  std::vector<DreamSnapshot> decoded() const;
};

struct DecodeOptions {
  int max_parallel = 1;
  bool skip_failed = false;
  std::string config_digest;
  /// Index of the first window, for decoding a sub-range.
  std::size_t first_index = 1;
};

/// Raised when a window fails and skip-failed is off.
class DecodeError : public BackendError {
 public:
  DecodeError(std::size_t window_index, const BackendError& cause);
  std::size_t window_index() const noexcept { return window_index_; }

 private:
  std::size_t window_index_;
};

SnapshotSequence decode_dream(const ingest::WindowedSeries& windowed,
                              const backends::FrameEncoder& encoder,
                              const backends::ImageGenerator& generator,
                              const DecodeOptions& options = {});

/// Snapshot manifest. Latents are written at full double precision so the
/// manifest is a lossless stage artifact.
json to_json(const SnapshotSequence& sequence);
SnapshotSequence sequence_from_json(const json& j);
void save_sequence(const SnapshotSequence& sequence, const std::filesystem::path& path);
SnapshotSequence load_sequence(const std::filesystem::path& path);

}  // namespace oneiros::decode
