#pragma once

// Model-backend contracts (frame encoder, image generator, captioner,
// narrative composer, embedder) plus deterministic mock and planted
// implementations.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oneiros/digest.hpp"
#include "oneiros/matrix.hpp"

namespace oneiros::backends {

inline constexpr double kLatentQuantum = 1e-4;
inline constexpr std::size_t kDefaultLatentDim = 16;
inline constexpr std::size_t kDefaultEmbedDim = 64;
inline constexpr std::size_t kMockVocabularySize = 16;

enum class Kind { mock, planted, remote };

Kind parse_kind(const std::string& name);
std::string to_string(Kind kind);

struct BackendConfig {
  Kind kind = Kind::mock;
  std::string endpoint_url;  // remote only
  double timeout_s = 30.0;
  int max_parallel = 4;
  std::uint64_t seed = 0;
  int max_attempts = 3;
  double backoff_base_s = 0.5;
  std::size_t latent_dim = kDefaultLatentDim;
  std::size_t embed_dim = kDefaultEmbedDim;
  std::filesystem::path planted_state;  // planted only

  void validate() const;
};

BackendConfig backend_config_from_json(const json& j, const std::filesystem::path& base_dir);
json to_json(const BackendConfig& cfg);

/// Encoder output. Non-empty, all values finite.
class LatentVector {
 public:
  explicit LatentVector(std::vector<double> values);

  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t dim() const noexcept { return values_.size(); }

  friend bool operator==(const LatentVector&, const LatentVector&) = default;

 private:
  std::vector<double> values_;
};

/// Reference to a generated image. Mocks emit no pixels; the planted
/// generator carries the latent in `payload` and a concept `label`.
struct ImageRef {
  std::string id;
  std::string uri;
  std::optional<int> width;
  std::optional<int> height;
  std::vector<double> payload;
  std::string label;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

json to_json(const ImageRef& image);
ImageRef image_from_json(const json& j);

/// L2-normalized embedding.
class UnitVector {
 public:
  /// Scales any non-zero finite vector to unit length.
  static UnitVector normalize(std::vector<double> values);
  /// Accepts a vector whose norm is within 1e-3 of 1 and re-normalizes it;
  /// rejects anything further off.
  static UnitVector from_wire(std::vector<double> values);

  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t dim() const noexcept { return values_.size(); }

 private:
  explicit UnitVector(std::vector<double> values) : values_(std::move(values)) {}
  std::vector<double> values_;
};

double dot(const UnitVector& a, const UnitVector& b);

class FrameEncoder {
 public:
  virtual ~FrameEncoder() = default;
  virtual LatentVector encode_frame(std::span<const double> frame) const = 0;
  /// Latent dimension, or 0 when only known after the first call.
  virtual std::size_t output_dim() const = 0;
};

class ImageGenerator {
 public:
  virtual ~ImageGenerator() = default;
  virtual ImageRef generate_image(const LatentVector& latent) const = 0;
  /// Accepted latent dimension, or 0 for any.
  virtual std::size_t input_dim() const = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption_image(const ImageRef& image) const = 0;
};

class NarrativeComposer {
 public:
  virtual ~NarrativeComposer() = default;
  virtual std::string compose_narrative(const std::string& prompt) const = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual UnitVector embed_text(const std::string& text) const = 0;
  virtual UnitVector embed_image(const ImageRef& image) const = 0;
};

// ---------------------------------------------------------------------------
// Mocks. Pure functions of (input, seed).

/// Seeded Gaussian random projection, scaled by 1/sqrt(frame size).
class MockEncoder final : public FrameEncoder {
 public:
  MockEncoder(std::uint64_t seed, std::size_t latent_dim);
  LatentVector encode_frame(std::span<const double> frame) const override;
  std::size_t output_dim() const override { return latent_dim_; }

 private:
  std::uint64_t seed_;
  std::size_t latent_dim_;
};

/// id = hash of the latent quantized to kLatentQuantum.
class MockGenerator final : public ImageGenerator {
 public:
  explicit MockGenerator(std::size_t input_dim);
  ImageRef generate_image(const LatentVector& latent) const override;
  std::size_t input_dim() const override { return input_dim_; }

 private:
  std::size_t input_dim_;
};

/// Returns "object-<k>", k = hash(image id) mod kMockVocabularySize.
class MockCaptioner final : public Captioner {
 public:
  std::string caption_image(const ImageRef& image) const override;
  static const std::vector<std::string>& vocabulary();
};

/// Echoes one shot per "Image k:" prompt line inside a fenced JSON script.
class MockComposer final : public NarrativeComposer {
 public:
  std::string compose_narrative(const std::string& prompt) const override;
};

/// Hash of the input seeds SplitMix64, Box-Muller fills `dim` normals, then
/// L2 normalization.
class MockEmbedder final : public Embedder {
 public:
  MockEmbedder(std::uint64_t seed, std::size_t dim);
  UnitVector embed_text(const std::string& text) const override;
  UnitVector embed_image(const ImageRef& image) const override;

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

/// Deterministic unit vector for an arbitrary byte string.
std::vector<double> hashed_gaussian(std::string_view input, std::uint64_t seed, std::size_t dim);

/// Content id of a latent: 16 hex digits.
std::string latent_image_id(const LatentVector& latent);

// ---------------------------------------------------------------------------
// Planted backends: known ground truth for the synthetic harness.

/// Projection P (embed_dim × vertices, orthonormal rows) and the label
/// embedding table shared by the planted encoder/generator/embedder.
struct PlantedState {
  Matrix projection;
  std::map<std::string, std::vector<double>> label_embeddings;
  std::uint64_t seed = 0;

  std::size_t embed_dim() const noexcept { return projection.rows(); }
};

json to_json(const PlantedState& state);
PlantedState planted_state_from_json(const json& j);
PlantedState load_planted_state(const std::filesystem::path& path);

/// latent = P · frame.
class PlantedEncoder final : public FrameEncoder {
 public:
  explicit PlantedEncoder(std::shared_ptr<const PlantedState> state);
  LatentVector encode_frame(std::span<const double> frame) const override;
  std::size_t output_dim() const override { return state_->embed_dim(); }

 private:
  std::shared_ptr<const PlantedState> state_;
};

/// Carries the latent unchanged as the image payload and labels the image
/// with the planted label of highest cosine.
class PlantedGenerator final : public ImageGenerator {
 public:
  explicit PlantedGenerator(std::shared_ptr<const PlantedState> state);
  ImageRef generate_image(const LatentVector& latent) const override;
  std::size_t input_dim() const override { return state_->embed_dim(); }

 private:
  std::shared_ptr<const PlantedState> state_;
};

/// "a <label>" for labelled images, mock caption otherwise.
class PlantedCaptioner final : public Captioner {
 public:
  std::string caption_image(const ImageRef& image) const override;
};

/// Texts "a photo of <label>" for planted labels map to the table entry;
/// images map to normalize(payload) or, without payload, to their label's
/// entry. Everything else falls back to the mock embedder.
class PlantedEmbedder final : public Embedder {
 public:
  explicit PlantedEmbedder(std::shared_ptr<const PlantedState> state);
  UnitVector embed_text(const std::string& text) const override;
  UnitVector embed_image(const ImageRef& image) const override;

 private:
  std::shared_ptr<const PlantedState> state_;
  MockEmbedder fallback_;
};

// ---------------------------------------------------------------------------

/// Call counters per contract, shared by every wrapper of one BackendSet.
struct CallCounts {
  std::atomic<std::uint64_t> encode{0};
  std::atomic<std::uint64_t> generate{0};
  std::atomic<std::uint64_t> caption{0};
  std::atomic<std::uint64_t> compose{0};
  std::atomic<std::uint64_t> embed{0};

  json to_json() const;
};

struct BackendSet {
  std::shared_ptr<const FrameEncoder> encoder;
  std::shared_ptr<const ImageGenerator> generator;
  std::shared_ptr<const Captioner> captioner;
  std::shared_ptr<const NarrativeComposer> composer;
  std::shared_ptr<const Embedder> embedder;
  int max_parallel = 1;
};

struct BackendConfigs {
  BackendConfig encoder;
  BackendConfig generator;
  BackendConfig captioner;
  BackendConfig composer;
  BackendConfig embedder;
};

/// Builds all five backends. When `counts` is set every backend is wrapped
/// in a counting decorator.
BackendSet make_backends(const BackendConfigs& configs,
                         std::shared_ptr<CallCounts> counts = nullptr);

}  // namespace oneiros::backends
