#include "oneiros/remote_backend.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>

#include "oneiros/error.hpp"

namespace oneiros::backends {

namespace {

using Clock = std::chrono::steady_clock;

std::pair<time_t, time_t> split_seconds(double s) {
  const auto whole = static_cast<time_t>(s);
  return {whole, static_cast<time_t>((s - static_cast<double>(whole)) * 1e6)};
}

BackendError schema_error(const std::string& endpoint, const std::string& what) {
  return BackendError("schema violation from " + endpoint + ": " + what, false);
}

std::vector<double> number_array(const json& j, const char* key, const std::string& endpoint) {
  if (!j.contains(key) || !j.at(key).is_array() || j.at(key).empty()) {
    throw schema_error(endpoint, std::string("'") + key + "' must be a non-empty number array");
  }
  std::vector<double> out;
  out.reserve(j.at(key).size());
  for (const auto& v : j.at(key)) {
    if (!v.is_number()) throw schema_error(endpoint, std::string("'") + key + "' holds a non-number");
    out.push_back(v.get<double>());
    if (!std::isfinite(out.back())) {
      throw schema_error(endpoint, std::string("'") + key + "' holds a non-finite value");
    }
  }
  return out;
}

std::string string_field(const json& j, const char* key, const std::string& endpoint,
                         bool allow_empty = false) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw schema_error(endpoint, std::string("'") + key + "' must be a string");
  }
  auto s = j.at(key).get<std::string>();
  if (!allow_empty && s.empty()) throw schema_error(endpoint, std::string("'") + key + "' is empty");
  return s;
}

bool has_version(const json& j) {
  return j.is_object() && j.contains("v") && j.at("v").is_number_integer() &&
         j.at("v").get<int>() == kProtocolVersion;
}

}  // namespace

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint URL needs a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http") {
    throw ValidationError("unsupported endpoint scheme '" + scheme + "' (only http)");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.scheme_host_port = url.substr(0, path_start);
  if (path_start != std::string::npos) {
    ep.base_path = url.substr(path_start);
    while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
  }
  if (ep.scheme_host_port.size() <= scheme_end + 3) throw ValidationError("endpoint URL has no host: " + url);
  return ep;
}

struct RemoteBackend::State {
  explicit State(int max_parallel) : slots(max_parallel) {}
  Endpoint endpoint;
  std::counting_semaphore<1024> slots;
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
};

RemoteBackend::RemoteBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.max_parallel > 1024) throw ValidationError("max_parallel above 1024");
  state_ = std::make_unique<State>(config_.max_parallel);
  state_->endpoint = parse_endpoint(config_.endpoint_url);
}

RemoteBackend::~RemoteBackend() = default;

int RemoteBackend::peak_in_flight() const noexcept { return state_->peak.load(); }

json RemoteBackend::post(const std::string& endpoint, const json& body) const {
  const std::string payload = body.dump();
  for (int attempt = 1;; ++attempt) {
    try {
      state_->slots.acquire();
      struct Release {
        State& s;
        ~Release() {
          --s.in_flight;
          s.slots.release();
        }
      } release{*state_};
      const int now = ++state_->in_flight;
      int prev = state_->peak.load();
      while (now > prev && !state_->peak.compare_exchange_weak(prev, now)) {
      }

      httplib::Client client(state_->endpoint.scheme_host_port);
      const auto [sec, usec] = split_seconds(config_.timeout_s);
      client.set_connection_timeout(sec, usec);
      client.set_read_timeout(sec, usec);
      client.set_write_timeout(sec, usec);
      auto res = client.Post(state_->endpoint.base_path + endpoint, payload, "application/json");
      if (!res) {
        throw BackendError(endpoint + ": transport error: " + httplib::to_string(res.error()), true,
                           attempt);
      }
      json parsed = json::parse(res->body, nullptr, false);
      if (res->status != 200) {
        std::string detail = "(no error message)";
        if (parsed.is_object() && parsed.contains("error") && parsed.at("error").is_string()) {
          detail = parsed.at("error").get<std::string>();
        }
        if (res->status == 501) {
          throw BackendError(endpoint + ": endpoint not implemented by the service (501): " + detail,
                             false, attempt);
        }
        const bool retryable = res->status >= 500 || res->status == 429 || res->status == 408;
        throw BackendError(endpoint + ": HTTP " + std::to_string(res->status) + ": " + detail,
                           retryable, attempt);
      }
      if (parsed.is_discarded() || !parsed.is_object()) {
        throw schema_error(endpoint, "response is not a JSON object");
      }
      if (!has_version(parsed)) throw schema_error(endpoint, "missing or unsupported \"v\" field");
      return parsed;
    } catch (const BackendError& e) {
      if (!e.retryable() || attempt >= config_.max_attempts) {
        throw BackendError(std::string(e.what()) + " (after " + std::to_string(attempt) +
                               " attempt" + (attempt == 1 ? "" : "s") + ")",
                           e.retryable(), attempt);
      }
    }
    const double backoff = config_.backoff_base_s * std::pow(2.0, attempt - 1);
    std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
  }
}

LatentVector RemoteBackend::encode_frame(std::span<const double> frame) const {
  if (frame.empty()) throw ValidationError("frame must be non-empty");
  const json res = post("/v1/encode", json{{"frame", std::vector<double>(frame.begin(), frame.end())}});
  return LatentVector(number_array(res, "latent", "/v1/encode"));
}

ImageRef RemoteBackend::generate_image(const LatentVector& latent) const {
  const json res = post("/v1/generate", json{{"latent", latent.values()}});
  ImageRef image;
  image.id = string_field(res, "image_id", "/v1/generate");
  image.uri = string_field(res, "uri", "/v1/generate", true);
  return image;
}

std::string RemoteBackend::caption_image(const ImageRef& image) const {
  const json res = post("/v1/caption", json{{"image_id", image.id}, {"uri", image.uri}});
  return string_field(res, "caption", "/v1/caption");
}

std::string RemoteBackend::compose_narrative(const std::string& prompt) const {
  if (prompt.empty()) throw ValidationError("prompt must be non-empty");
  const json res = post("/v1/compose", json{{"prompt", prompt}});
  return string_field(res, "text", "/v1/compose");
}

namespace {

UnitVector wire_unit(std::vector<double> v) {
  try {
    return UnitVector::from_wire(std::move(v));
  } catch (const ValidationError& e) {
    throw schema_error("/v1/embed", e.what());
  }
}

}  // namespace

UnitVector RemoteBackend::embed_text(const std::string& text) const {
  if (text.empty()) throw ValidationError("text must be non-empty");
  const json res = post("/v1/embed", json{{"kind", "text"}, {"payload", text}});
  return wire_unit(number_array(res, "vector", "/v1/embed"));
}

UnitVector RemoteBackend::embed_image(const ImageRef& image) const {
  const std::string payload = image.uri.empty() ? image.id : image.uri;
  if (payload.empty()) throw ValidationError("image has neither uri nor id");
  const json res = post("/v1/embed", json{{"kind", "image"}, {"payload", payload}});
  return wire_unit(number_array(res, "vector", "/v1/embed"));
}

// ---------------------------------------------------------------------------

struct StubServer::Impl {
  Options options;
  httplib::Server server;
  std::atomic<int> served{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  std::atomic<int> encode_failures_left{0};
};

namespace {

void reply(httplib::Response& res, int status, json body) {
  body["v"] = kProtocolVersion;
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

StubServer::StubServer(Options options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  impl_->encode_failures_left = impl_->options.fail_first_encodes;
  Impl* impl = impl_.get();

  auto handler = [impl](auto body_fn) {
    return [impl, body_fn](const httplib::Request& req, httplib::Response& res) {
      ++impl->served;
      const int now = ++impl->in_flight;
      int prev = impl->peak.load();
      while (now > prev && !impl->peak.compare_exchange_weak(prev, now)) {
      }
      if (impl->options.delay_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(impl->options.delay_ms));
      }
      const json in = json::parse(req.body, nullptr, false);
      if (in.is_discarded() || !in.is_object()) {
        reply(res, 400, {{"error", "request body must be a JSON object"}});
      } else {
        try {
          json out = body_fn(in, res);
          if (!out.is_null()) {
            if (!impl->options.omit_version) out["v"] = kProtocolVersion;
            res.status = 200;
            res.set_content(out.dump(), "application/json");
          }
        } catch (const std::exception& e) {
          reply(res, 400, {{"error", e.what()}});
        }
      }
      --impl->in_flight;
    };
  };

  impl->server.Post("/v1/encode", handler([impl](const json& in, httplib::Response& res) -> json {
    if (!in.contains("frame") || !in.at("frame").is_array() || in.at("frame").empty()) {
      throw std::runtime_error("'frame' must be a non-empty array");
    }
    if (impl->encode_failures_left.fetch_sub(1) > 0) {
      reply(res, 503, {{"error", "temporarily unavailable"}});
      return nullptr;
    }
    return {{"latent", impl->options.declared_latent}};
  }));
  impl->server.Post("/v1/generate", handler([impl](const json& in, httplib::Response& res) -> json {
    if (impl->options.generate_unimplemented) {
      reply(res, 501, {{"error", "no generator model configured"}});
      return nullptr;
    }
    const LatentVector latent(in.at("latent").get<std::vector<double>>());
    const auto id = latent_image_id(latent);
    return {{"image_id", id}, {"uri", "stub://image/" + id}};
  }));
  impl->server.Post("/v1/caption", handler([](const json& in, httplib::Response&) -> json {
    const auto id = in.at("image_id").get<std::string>();
    if (id.empty()) throw std::runtime_error("'image_id' is empty");
    return {{"caption", "a stub image " + id.substr(0, 4)}};
  }));
  impl->server.Post("/v1/compose", handler([](const json& in, httplib::Response&) -> json {
    return {{"text", MockComposer{}.compose_narrative(in.at("prompt").get<std::string>())}};
  }));
  impl->server.Post("/v1/embed", handler([impl](const json& in, httplib::Response&) -> json {
    const auto kind = in.at("kind").get<std::string>();
    const auto payload = in.at("payload").get<std::string>();
    if (kind != "text" && kind != "image") throw std::runtime_error("'kind' must be text or image");
    if (payload.empty()) throw std::runtime_error("'payload' is empty");
    return {{"vector", hashed_gaussian(kind + ":" + payload, 0, impl->options.embed_dim)}};
  }));
  impl->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"ok", true}});
  });

  port_ = impl->server.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw Error("stub server could not bind a port");
  thread_ = std::thread([impl] { impl->server.listen_after_bind(); });
  impl->server.wait_until_ready();
}

StubServer::~StubServer() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }
int StubServer::requests_served() const noexcept { return impl_->served.load(); }
int StubServer::peak_concurrency() const noexcept { return impl_->peak.load(); }

// ---------------------------------------------------------------------------

std::vector<ConformanceCheck> run_conformance(const std::string& url, double timeout_s) {
  const Endpoint ep = parse_endpoint(url);
  httplib::Client client(ep.scheme_host_port);
  const auto [sec, usec] = split_seconds(timeout_s);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);

  std::vector<ConformanceCheck> checks;
  auto record = [&](std::string name, bool ok, std::string detail = {}) {
    checks.push_back({std::move(name), ok, std::move(detail)});
  };
  struct Reply {
    int status = 0;
    json body;
  };
  auto post = [&](const std::string& endpoint, const json& body) -> Reply {
    auto res = client.Post(ep.base_path + endpoint, body.dump(), "application/json");
    if (!res) return {0, json()};
    return {res->status, json::parse(res->body, nullptr, false)};
  };

  {
    auto res = client.Get(ep.base_path + "/healthz");
    const json body = res ? json::parse(res->body, nullptr, false) : json();
    record("healthz", res && res->status == 200 && has_version(body) &&
                          body.value("ok", false) == true,
           res ? "status " + std::to_string(res->status) : "no response");
  }

  auto finite_array = [](const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_array() || j.at(key).empty()) return false;
    return std::all_of(j.at(key).begin(), j.at(key).end(),
                       [](const json& v) { return v.is_number() && std::isfinite(v.get<double>()); });
  };
  auto nonempty_string = [](const json& j, const char* key) {
    return j.is_object() && j.contains(key) && j.at(key).is_string() &&
           !j.at(key).get<std::string>().empty();
  };

  std::vector<double> latent = {0.1, -0.2, 0.3};
  {
    const auto r = post("/v1/encode", {{"frame", {0.5, -1.0, 0.25, 2.0}}});
    const bool ok = r.status == 200 && has_version(r.body) && finite_array(r.body, "latent");
    if (ok) latent = r.body.at("latent").get<std::vector<double>>();
    record("encode schema", ok, "status " + std::to_string(r.status));
  }
  json image = {{"image_id", "conformance"}, {"uri", ""}};
  {
    const auto r = post("/v1/generate", {{"latent", latent}});
    if (r.status == 501) {
      record("generate schema", r.body.is_object() && r.body.contains("error") &&
                                    r.body.at("error").is_string(),
             "service reports generator unimplemented (501)");
    } else {
      const bool ok = r.status == 200 && has_version(r.body) && nonempty_string(r.body, "image_id") &&
                      r.body.contains("uri") && r.body.at("uri").is_string();
      if (ok) image = {{"image_id", r.body.at("image_id")}, {"uri", r.body.at("uri")}};
      record("generate schema", ok, "status " + std::to_string(r.status));
    }
  }
  {
    const auto r = post("/v1/caption", image);
    record("caption schema", r.status == 200 && has_version(r.body) && nonempty_string(r.body, "caption"),
           "status " + std::to_string(r.status));
  }
  {
    const auto r = post("/v1/compose", {{"prompt", "Image 1: a cat\nImage 2: a dog"}});
    record("compose schema",
           r.status == 200 && has_version(r.body) && r.body.contains("text") && r.body.at("text").is_string(),
           "status " + std::to_string(r.status));
  }
  for (const char* kind : {"text", "image"}) {
    const json req = {{"kind", kind},
                      {"payload", std::string(kind) == "text" ? "a photo of cat"
                                                              : image.at("image_id").get<std::string>()}};
    const auto r1 = post("/v1/embed", req);
    const auto r2 = post("/v1/embed", req);
    const bool ok1 = r1.status == 200 && has_version(r1.body) && finite_array(r1.body, "vector");
    const bool ok2 = r2.status == 200 && has_version(r2.body) && finite_array(r2.body, "vector");
    record(std::string("embed ") + kind + " schema", ok1 && ok2, "status " + std::to_string(r1.status));
    if (!(ok1 && ok2)) continue;
    const auto v1 = r1.body.at("vector").get<std::vector<double>>();
    const auto v2 = r2.body.at("vector").get<std::vector<double>>();
    double ss = 0.0;
    for (double x : v1) ss += x * x;
    const double norm = std::sqrt(ss);
    record(std::string("embed ") + kind + " norm", std::abs(norm - 1.0) <= 1e-3,
           "norm " + std::to_string(norm));
    double max_diff = v1.size() == v2.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(v1.size(), v2.size()); ++i) {
      max_diff = std::max(max_diff, std::abs(v1[i] - v2[i]));
    }
    record(std::string("embed ") + kind + " repeatable", max_diff <= 1e-5,
           "max diff " + std::to_string(max_diff));
  }
  {
    const auto r = post("/v1/encode", json::object());
    record("error shape",
           r.status != 200 && r.status != 0 && r.body.is_object() && r.body.contains("error") &&
               r.body.at("error").is_string() && has_version(r.body),
           "status " + std::to_string(r.status));
  }
  return checks;
}

}  // namespace oneiros::backends
