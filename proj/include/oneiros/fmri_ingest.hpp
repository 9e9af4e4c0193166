#pragma once

// Loading and preprocessing of surface-space fMRI time series.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "oneiros/matrix.hpp"

namespace oneiros::ingest {

inline constexpr double kDefaultEpsilon = 1e-8;
inline constexpr std::size_t kDefaultWindowFrames = 4;
inline constexpr std::size_t kDefaultStrideFrames = 4;

/// frames × vertices activation matrix for one recording session.
///
/// Invariants (checked on construction): at least one frame and one vertex,
/// every value finite, sampling_hz > 0. Frame i is acquired at i / sampling_hz
/// seconds. `regions` records the ROI names applied so far (provenance).
class FmriSeries {
 public:
  FmriSeries(Matrix data, double sampling_hz, std::string subject_id, std::string session_id,
             std::vector<std::string> regions = {});

  const Matrix& data() const noexcept { return data_; }
  std::size_t frames() const noexcept { return data_.rows(); }
  std::size_t vertices() const noexcept { return data_.cols(); }
  double sampling_hz() const noexcept { return sampling_hz_; }
  const std::string& subject_id() const noexcept { return subject_id_; }
  const std::string& session_id() const noexcept { return session_id_; }
  const std::vector<std::string>& regions() const noexcept { return regions_; }

  /// Acquisition time of local frame i, including any slice offset.
  double frame_time(std::size_t i) const noexcept;
  std::vector<double> frame_times() const;

  /// Same metadata, new data. Frame count may differ (slicing).
  FmriSeries with_data(Matrix data) const;

  /// Same data, replaced provenance region list.
  FmriSeries with_regions(std::vector<std::string> regions) const;

  /// Frames [first, first + count) with original timing kept via `time_offset_frames`.
  FmriSeries slice_frames(std::size_t first, std::size_t count) const;

  std::size_t time_offset_frames() const noexcept { return time_offset_frames_; }

 private:
  Matrix data_;
  double sampling_hz_;
  std::string subject_id_;
  std::string session_id_;
  std::vector<std::string> regions_;
  std::size_t time_offset_frames_ = 0;
};

/// Named vertex sets. Indices per region are strictly increasing.
class RoiAtlas {
 public:
  explicit RoiAtlas(std::map<std::string, std::vector<std::size_t>> regions);

  const std::map<std::string, std::vector<std::size_t>>& regions() const noexcept {
    return regions_;
  }

 private:
  std::map<std::string, std::vector<std::size_t>> regions_;
};

struct WindowSpan {
  double start_s;
  double end_s;
  friend bool operator==(const WindowSpan&, const WindowSpan&) = default;
};

/// Window-averaged series. Row w is the mean of source frames
/// [w·stride, w·stride + window).
struct WindowedSeries {
  Matrix data;
  std::size_t window_frames = kDefaultWindowFrames;
  std::size_t stride_frames = kDefaultStrideFrames;
  std::vector<WindowSpan> spans;
  double sampling_hz = 1.0;
  std::string subject_id;
  std::string session_id;
  std::vector<std::string> regions;

  std::size_t windows() const noexcept { return data.rows(); }
};

enum class Format { binary, csv };

/// Visual-cortex regions selected for decoding (fsLR32K parcel names).
const std::vector<std::string>& visual_cortex_regions();

/// Sidecar path for a payload: `<payload>.json`.
std::filesystem::path sidecar_path(const std::filesystem::path& payload);

FmriSeries load_series(const std::filesystem::path& path, Format format);

/// Writes payload and sidecar. Binary payloads are little-endian f32 unless
/// `dtype` is "f64".
void save_series(const FmriSeries& series, const std::filesystem::path& path, Format format,
                 const std::string& dtype = "f32");

RoiAtlas load_atlas(const std::filesystem::path& path);

/// Per-vertex z-score over all frames, population std floored at epsilon.
FmriSeries zscore_session(const FmriSeries& series, double epsilon = kDefaultEpsilon);

FmriSeries apply_roi(const FmriSeries& series, const RoiAtlas& atlas,
                     const std::vector<std::string>& region_names);

WindowedSeries window_average(const FmriSeries& series, std::size_t window_frames,
                              std::size_t stride_frames);

/// Windowed series persisted as a binary f64 payload; window metadata lives in
/// the sidecar next to the standard series fields.
void save_windowed(const WindowedSeries& windowed, const std::filesystem::path& path);
WindowedSeries load_windowed(const std::filesystem::path& path);

}  // namespace oneiros::ingest
