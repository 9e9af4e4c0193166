#pragma once

// Helpers shared by the test binaries.

#include <unistd.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oneiros/digest.hpp"
#include "oneiros/fmri_ingest.hpp"
#include "oneiros/rng.hpp"

namespace testing {

inline std::filesystem::path test_dir() { return ONEIROS_TEST_DIR; }
inline std::filesystem::path fixture(const std::string& name) { return test_dir() / "fixtures" / name; }
inline std::filesystem::path golden(const std::string& name) { return test_dir() / "golden" / name; }

/// Fresh scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("oneiros_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

/// Gaussian series with a per-vertex offset and scale.
inline oneiros::ingest::FmriSeries random_series(std::size_t frames, std::size_t vertices, std::uint64_t seed,
                                                 double hz = 1.25) {
  oneiros::NormalStream ns(seed);
  oneiros::Matrix m(frames, vertices);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t v = 0; v < vertices; ++v) m(t, v) = 3.0 * static_cast<double>(v) + (1.0 + 0.5 * v) * ns.next();
  }
  return {std::move(m), hz, "sub-01", "night-1"};
}

}  // namespace testing
