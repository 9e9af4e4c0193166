#pragma once

// HTTP-JSON client for the /v1/* model-service protocol, an in-process stub
// server implementing the same protocol, and a conformance checker that
// validates any live service against the schemas.

#include <cstdint>
#include <functional>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "oneiros/backends.hpp"

namespace oneiros::backends {

inline constexpr int kProtocolVersion = 1;

/// Client for all five contracts. Bounds in-flight requests at
/// max_parallel; retries retryable failures up to max_attempts with backoff
/// backoff_base_s · 2^k before attempt k+1.
class RemoteBackend final : public FrameEncoder,
                            public ImageGenerator,
                            public Captioner,
                            public NarrativeComposer,
                            public Embedder {
 public:
  explicit RemoteBackend(BackendConfig config);
  ~RemoteBackend() override;

  LatentVector encode_frame(std::span<const double> frame) const override;
  std::size_t output_dim() const override { return 0; }
  ImageRef generate_image(const LatentVector& latent) const override;
  std::size_t input_dim() const override { return 0; }
  std::string caption_image(const ImageRef& image) const override;
  std::string compose_narrative(const std::string& prompt) const override;
  UnitVector embed_text(const std::string& text) const override;
  UnitVector embed_image(const ImageRef& image) const override;

  /// POSTs `body` to `endpoint`, validates the version field, returns the
  /// response object.
  json post(const std::string& endpoint, const json& body) const;

  /// Largest number of requests observed in flight at once.
  int peak_in_flight() const noexcept;

 private:
  struct State;
  BackendConfig config_;
  std::unique_ptr<State> state_;
};

/// Pieces of a parsed endpoint URL.
struct Endpoint {
  std::string scheme_host_port;  // e.g. "http://127.0.0.1:8080"
  std::string base_path;         // e.g. "" or "/api"
};
Endpoint parse_endpoint(const std::string& url);

/// Canned-response protocol server used for client and conformance tests.
/// Responses are deterministic: encode returns `declared_latent`, embed
/// returns a hashed unit vector, generate hashes the latent.
class StubServer {
 public:
  struct Options {
    std::vector<double> declared_latent = {0.25, -0.5, 1.0};
    std::size_t embed_dim = 8;
    /// Fail the first N requests to /v1/encode with 503 (retry tests).
    int fail_first_encodes = 0;
    /// Answer /v1/generate with 501.
    bool generate_unimplemented = false;
    /// Omit the version field on every 200 response.
    bool omit_version = false;
    /// Sleep before answering, in milliseconds.
    int delay_ms = 0;
  };

  explicit StubServer(Options options);
  StubServer() : StubServer(Options{}) {}
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  std::string url() const;
  int port() const noexcept { return port_; }
  int requests_served() const noexcept;
  int peak_concurrency() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::thread thread_;
};

struct ConformanceCheck {
  std::string name;
  bool passed;
  std::string detail;
};

/// Exercises every endpoint of a live service: response schemas, the "v":1
/// field, error shape, embed norms within 1e-3 of 1, and repeat stability
/// within 1e-5.
std::vector<ConformanceCheck> run_conformance(const std::string& url, double timeout_s = 10.0);

}  // namespace oneiros::backends
