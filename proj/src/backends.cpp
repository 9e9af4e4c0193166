#include "oneiros/backends.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>

#include "oneiros/error.hpp"
#include "oneiros/remote_backend.hpp"
#include "oneiros/rng.hpp"

namespace oneiros::backends {

Kind parse_kind(const std::string& name) {
  if (name == "mock") return Kind::mock;
  if (name == "planted") return Kind::planted;
  if (name == "remote") return Kind::remote;
  throw ValidationError("unknown backend kind '" + name + "' (expected mock, planted or remote)");
}

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::mock:
      return "mock";
    case Kind::planted:
      return "planted";
    case Kind::remote:
      return "remote";
  }
  return "mock";
}

void BackendConfig::validate() const {
  if (!(timeout_s > 0.0)) throw ValidationError("backend timeout_s must be positive");
  if (max_parallel < 1) throw ValidationError("backend max_parallel must be at least 1");
  if (max_attempts < 1) throw ValidationError("backend max_attempts must be at least 1");
  if (backoff_base_s < 0.0) throw ValidationError("backend backoff_base_s must be non-negative");
  if (latent_dim < 1 || embed_dim < 1) throw ValidationError("backend dims must be at least 1");
  if (kind == Kind::remote && endpoint_url.empty()) {
    throw ValidationError("remote backend requires endpoint_url");
  }
  if (kind == Kind::planted && planted_state.empty()) {
    throw ValidationError("planted backend requires planted_state");
  }
}

BackendConfig backend_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  BackendConfig cfg;
  try {
    cfg.kind = parse_kind(j.value("kind", std::string("mock")));
    cfg.endpoint_url = j.value("endpoint_url", std::string());
    cfg.timeout_s = j.value("timeout_s", cfg.timeout_s);
    cfg.max_parallel = j.value("max_parallel", cfg.max_parallel);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.max_attempts = j.value("max_attempts", cfg.max_attempts);
    cfg.backoff_base_s = j.value("backoff_base_s", cfg.backoff_base_s);
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
    if (j.contains("planted_state")) {
      std::filesystem::path p = j.at("planted_state").get<std::string>();
      cfg.planted_state = p.is_absolute() ? p : base_dir / p;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid backend config: ") + e.what());
  }
  return cfg;
}

json to_json(const BackendConfig& cfg) {
  json j{{"kind", to_string(cfg.kind)},       {"timeout_s", cfg.timeout_s},
         {"max_parallel", cfg.max_parallel},  {"seed", cfg.seed},
         {"max_attempts", cfg.max_attempts},  {"backoff_base_s", cfg.backoff_base_s},
         {"latent_dim", cfg.latent_dim},      {"embed_dim", cfg.embed_dim}};
  if (!cfg.endpoint_url.empty()) j["endpoint_url"] = cfg.endpoint_url;
  if (!cfg.planted_state.empty()) j["planted_state"] = cfg.planted_state.string();
  return j;
}

LatentVector::LatentVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw ValidationError("latent vector must have dim >= 1");
  for (double v : values_) {
    if (!std::isfinite(v)) throw ValidationError("latent vector has a non-finite value");
  }
}

json to_json(const ImageRef& image) {
  json j{{"image_id", image.id}, {"uri", image.uri}};
  if (image.width) j["width"] = *image.width;
  if (image.height) j["height"] = *image.height;
  if (!image.payload.empty()) j["payload"] = image.payload;
  if (!image.label.empty()) j["label"] = image.label;
  return j;
}

ImageRef image_from_json(const json& j) {
  ImageRef image;
  image.id = j.at("image_id").get<std::string>();
  image.uri = j.value("uri", std::string());
  if (j.contains("width")) image.width = j.at("width").get<int>();
  if (j.contains("height")) image.height = j.at("height").get<int>();
  if (j.contains("payload")) image.payload = j.at("payload").get<std::vector<double>>();
  image.label = j.value("label", std::string());
  if (image.id.empty()) throw ValidationError("image id must be non-empty");
  return image;
}

namespace {

double l2_norm(const std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

}  // namespace

UnitVector UnitVector::normalize(std::vector<double> values) {
  if (values.empty()) throw ValidationError("cannot normalize an empty vector");
  const double n = l2_norm(values);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw ValidationError("cannot normalize a zero or non-finite vector");
  }
  for (double& x : values) x /= n;
  return UnitVector(std::move(values));
}

UnitVector UnitVector::from_wire(std::vector<double> values) {
  if (values.empty()) throw ValidationError("embedding vector is empty");
  const double n = l2_norm(values);
  if (!std::isfinite(n) || std::abs(n - 1.0) >= 1e-3) {
    throw ValidationError("embedding norm " + std::to_string(n) + " is not within 1e-3 of 1");
  }
  for (double& x : values) x /= n;
  return UnitVector(std::move(values));
}

double dot(const UnitVector& a, const UnitVector& b) {
  if (a.dim() != b.dim()) {
    throw ValidationError("dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                          std::to_string(b.dim()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a.values()[i] * b.values()[i];
  return acc;
}

// ---------------------------------------------------------------------------

std::vector<double> hashed_gaussian(std::string_view input, std::uint64_t seed, std::size_t dim) {
  NormalStream normals(fnv1a64(input) ^ mix64(seed));
  return UnitVector::normalize(normals.take(dim)).values();
}

std::string latent_image_id(const LatentVector& latent) {
  std::string bytes;
  bytes.reserve(latent.dim() * 8);
  for (double v : latent.values()) {
    const auto q = static_cast<std::int64_t>(std::llround(v / kLatentQuantum));
    auto u = static_cast<std::uint64_t>(q);
    for (int b = 0; b < 8; ++b, u >>= 8) bytes.push_back(static_cast<char>(u & 0xff));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, mix64(fnv1a64(bytes)));
  return buf;
}

MockEncoder::MockEncoder(std::uint64_t seed, std::size_t latent_dim)
    : seed_(seed), latent_dim_(latent_dim) {
  if (latent_dim_ < 1) throw ValidationError("mock encoder latent_dim must be at least 1");
}

LatentVector MockEncoder::encode_frame(std::span<const double> frame) const {
  if (frame.empty()) throw ValidationError("frame must be non-empty");
  const double scale = 1.0 / std::sqrt(static_cast<double>(frame.size()));
  std::vector<double> out(latent_dim_);
  for (std::size_t k = 0; k < latent_dim_; ++k) {
    NormalStream row(split_seed(seed_, k));
    double acc = 0.0;
    for (double x : frame) {
      if (!std::isfinite(x)) throw ValidationError("frame has a non-finite value");
      acc += row.next() * x;
    }
    out[k] = acc * scale;
  }
  return LatentVector(std::move(out));
}

MockGenerator::MockGenerator(std::size_t input_dim) : input_dim_(input_dim) {}

ImageRef MockGenerator::generate_image(const LatentVector& latent) const {
  if (input_dim_ != 0 && latent.dim() != input_dim_) {
    throw ValidationError("dimension mismatch: generator expects latent dim " +
                          std::to_string(input_dim_) + ", got " + std::to_string(latent.dim()));
  }
  ImageRef image;
  image.id = latent_image_id(latent);
  image.uri = "mock://image/" + image.id;
  return image;
}

const std::vector<std::string>& MockCaptioner::vocabulary() {
  static const std::vector<std::string> kVocabulary = [] {
    std::vector<std::string> v;
    for (std::size_t k = 0; k < kMockVocabularySize; ++k) v.push_back("object-" + std::to_string(k));
    return v;
  }();
  return kVocabulary;
}

std::string MockCaptioner::caption_image(const ImageRef& image) const {
  if (image.id.empty()) throw ValidationError("image id must be non-empty");
  return vocabulary()[mix64(fnv1a64(image.id)) % kMockVocabularySize];
}

std::string MockComposer::compose_narrative(const std::string& prompt) const {
  if (prompt.empty()) throw ValidationError("prompt must be non-empty");
  static const std::regex kShotLine(R"(^Image (\d+): (.*)$)");
  std::vector<std::pair<int, std::string>> shots;
  std::istringstream in(prompt);
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_match(line, m, kShotLine)) shots.emplace_back(std::stoi(m[1]), m[2]);
  }
  if (shots.empty()) throw BackendError("no shots found", false);

  json script;
  script["title"] = "A Dream of " + shots.front().second;
  std::string description = "I dreamt of";
  json lines = json::array();
  for (std::size_t i = 0; i < shots.size(); ++i) {
    description += (i ? ", then " : " ") + shots[i].second;
    lines.push_back({{"index", shots[i].first}, {"script_line", "Scene " + std::to_string(shots[i].first) +
                                                                    ": " + shots[i].second + "."}});
  }
  script["subjective_description"] = description + ".";
  script["shots"] = std::move(lines);
  script["closing"] = "And then the dream faded.";
  script["audio_track"] = "Ambient drone in D minor";
  return "Here is the script you asked for. {not json}\n\n```json\n" + script.dump(2) +
         "\n```\n\nSweet dreams!\n";
}

MockEmbedder::MockEmbedder(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim_ < 1) throw ValidationError("embedder dim must be at least 1");
}

UnitVector MockEmbedder::embed_text(const std::string& text) const {
  if (text.empty()) throw ValidationError("text must be non-empty");
  return UnitVector::normalize(hashed_gaussian(text, seed_, dim_));
}

UnitVector MockEmbedder::embed_image(const ImageRef& image) const {
  if (image.id.empty()) throw ValidationError("image id must be non-empty");
  return UnitVector::normalize(hashed_gaussian("image:" + image.id, seed_, dim_));
}

// ---------------------------------------------------------------------------

json to_json(const PlantedState& state) {
  return json{{"seed", state.seed},
              {"projection",
               {{"rows", state.projection.rows()},
                {"cols", state.projection.cols()},
                {"data", state.projection.data()}}},
              {"label_embeddings", state.label_embeddings}};
}

PlantedState planted_state_from_json(const json& j) {
  PlantedState state;
  try {
    state.seed = j.at("seed").get<std::uint64_t>();
    const auto& p = j.at("projection");
    state.projection = Matrix(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>(),
                              p.at("data").get<std::vector<double>>());
    state.label_embeddings =
        j.at("label_embeddings").get<std::map<std::string, std::vector<double>>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid planted state: ") + e.what());
  }
  for (const auto& [label, vec] : state.label_embeddings) {
    if (vec.size() != state.embed_dim()) {
      throw ValidationError("planted embedding for '" + label + "' has wrong dim");
    }
  }
  return state;
}

PlantedState load_planted_state(const std::filesystem::path& path) {
  try {
    return planted_state_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed planted state " + path.string() + ": " + e.what());
  }
}

namespace {

constexpr std::string_view kPhotoPrefix = "a photo of ";

}  // namespace

PlantedEncoder::PlantedEncoder(std::shared_ptr<const PlantedState> state)
    : state_(std::move(state)) {}

LatentVector PlantedEncoder::encode_frame(std::span<const double> frame) const {
  if (frame.empty()) throw ValidationError("frame must be non-empty");
  return LatentVector(multiply(state_->projection, frame));
}

PlantedGenerator::PlantedGenerator(std::shared_ptr<const PlantedState> state)
    : state_(std::move(state)) {}

ImageRef PlantedGenerator::generate_image(const LatentVector& latent) const {
  if (latent.dim() != state_->embed_dim()) {
    throw ValidationError("dimension mismatch: generator expects latent dim " +
                          std::to_string(state_->embed_dim()) + ", got " +
                          std::to_string(latent.dim()));
  }
  ImageRef image;
  image.id = latent_image_id(latent);
  image.uri = "planted://image/" + image.id;
  image.payload = latent.values();
  double best = -2.0;
  double norm = 0.0;
  for (double v : latent.values()) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (const auto& [label, vec] : state_->label_embeddings) {
      double c = 0.0;
      for (std::size_t i = 0; i < vec.size(); ++i) c += vec[i] * latent.values()[i];
      c /= norm;
      if (c > best) {
        best = c;
        image.label = label;
      }
    }
  }
  return image;
}

std::string PlantedCaptioner::caption_image(const ImageRef& image) const {
  if (!image.label.empty()) return "a " + image.label;
  return MockCaptioner{}.caption_image(image);
}

PlantedEmbedder::PlantedEmbedder(std::shared_ptr<const PlantedState> state)
    : state_(std::move(state)), fallback_(state_->seed, state_->embed_dim()) {}

UnitVector PlantedEmbedder::embed_text(const std::string& text) const {
  if (text.empty()) throw ValidationError("text must be non-empty");
  if (text.starts_with(kPhotoPrefix)) {
    const std::string label = text.substr(kPhotoPrefix.size());
    const auto it = state_->label_embeddings.find(label);
    if (it != state_->label_embeddings.end()) return UnitVector::normalize(it->second);
    // Label sets may respell a planted label (e.g. COCO casing).
    for (const auto& [key, vec] : state_->label_embeddings) {
      if (key.size() == label.size() &&
          std::equal(key.begin(), key.end(), label.begin(), [](char x, char y) {
            return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
          })) {
        return UnitVector::normalize(vec);
      }
    }
  }
  return fallback_.embed_text(text);
}

UnitVector PlantedEmbedder::embed_image(const ImageRef& image) const {
  if (!image.payload.empty()) return UnitVector::normalize(image.payload);
  if (!image.label.empty()) {
    const auto it = state_->label_embeddings.find(image.label);
    if (it != state_->label_embeddings.end()) return UnitVector::normalize(it->second);
  }
  return fallback_.embed_image(image);
}

// ---------------------------------------------------------------------------

json CallCounts::to_json() const {
  return json{{"encode", encode.load()},   {"generate", generate.load()},
              {"caption", caption.load()}, {"compose", compose.load()},
              {"embed", embed.load()}};
}

namespace {

class CountingEncoder final : public FrameEncoder {
 public:
  CountingEncoder(std::shared_ptr<const FrameEncoder> inner, std::shared_ptr<CallCounts> counts)
      : inner_(std::move(inner)), counts_(std::move(counts)) {}
  LatentVector encode_frame(std::span<const double> frame) const override {
    ++counts_->encode;
    return inner_->encode_frame(frame);
  }
  std::size_t output_dim() const override { return inner_->output_dim(); }

 private:
  std::shared_ptr<const FrameEncoder> inner_;
  std::shared_ptr<CallCounts> counts_;
};

class CountingGenerator final : public ImageGenerator {
 public:
  CountingGenerator(std::shared_ptr<const ImageGenerator> inner, std::shared_ptr<CallCounts> counts)
      : inner_(std::move(inner)), counts_(std::move(counts)) {}
  ImageRef generate_image(const LatentVector& latent) const override {
    ++counts_->generate;
    return inner_->generate_image(latent);
  }
  std::size_t input_dim() const override { return inner_->input_dim(); }

 private:
  std::shared_ptr<const ImageGenerator> inner_;
  std::shared_ptr<CallCounts> counts_;
};

class CountingCaptioner final : public Captioner {
 public:
  CountingCaptioner(std::shared_ptr<const Captioner> inner, std::shared_ptr<CallCounts> counts)
      : inner_(std::move(inner)), counts_(std::move(counts)) {}
  std::string caption_image(const ImageRef& image) const override {
    ++counts_->caption;
    return inner_->caption_image(image);
  }

 private:
  std::shared_ptr<const Captioner> inner_;
  std::shared_ptr<CallCounts> counts_;
};

class CountingComposer final : public NarrativeComposer {
 public:
  CountingComposer(std::shared_ptr<const NarrativeComposer> inner,
                   std::shared_ptr<CallCounts> counts)
      : inner_(std::move(inner)), counts_(std::move(counts)) {}
  std::string compose_narrative(const std::string& prompt) const override {
    ++counts_->compose;
    return inner_->compose_narrative(prompt);
  }

 private:
  std::shared_ptr<const NarrativeComposer> inner_;
  std::shared_ptr<CallCounts> counts_;
};

class CountingEmbedder final : public Embedder {
 public:
  CountingEmbedder(std::shared_ptr<const Embedder> inner, std::shared_ptr<CallCounts> counts)
      : inner_(std::move(inner)), counts_(std::move(counts)) {}
  UnitVector embed_text(const std::string& text) const override {
    ++counts_->embed;
    return inner_->embed_text(text);
  }
  UnitVector embed_image(const ImageRef& image) const override {
    ++counts_->embed;
    return inner_->embed_image(image);
  }

 private:
  std::shared_ptr<const Embedder> inner_;
  std::shared_ptr<CallCounts> counts_;
};

// Planted state files are shared by every role pointing at the same path.
std::shared_ptr<const PlantedState> planted_for(
    const BackendConfig& cfg, std::map<std::filesystem::path, std::shared_ptr<const PlantedState>>& cache) {
  auto& slot = cache[cfg.planted_state];
  if (!slot) slot = std::make_shared<const PlantedState>(load_planted_state(cfg.planted_state));
  return slot;
}

}  // namespace

BackendSet make_backends(const BackendConfigs& configs, std::shared_ptr<CallCounts> counts) {
  for (const auto* cfg : {&configs.encoder, &configs.generator, &configs.captioner,
                          &configs.composer, &configs.embedder}) {
    cfg->validate();
  }
  std::map<std::filesystem::path, std::shared_ptr<const PlantedState>> planted;
  std::map<std::string, std::shared_ptr<RemoteBackend>> remotes;
  auto remote_for = [&](const BackendConfig& cfg) {
    auto& slot = remotes[cfg.endpoint_url];
    if (!slot) slot = std::make_shared<RemoteBackend>(cfg);
    return slot;
  };

  BackendSet set;
  switch (configs.encoder.kind) {
    case Kind::mock:
      set.encoder = std::make_shared<MockEncoder>(configs.encoder.seed, configs.encoder.latent_dim);
      break;
    case Kind::planted:
      set.encoder = std::make_shared<PlantedEncoder>(planted_for(configs.encoder, planted));
      break;
    case Kind::remote:
      set.encoder = remote_for(configs.encoder);
      break;
  }
  switch (configs.generator.kind) {
    case Kind::mock:
      set.generator = std::make_shared<MockGenerator>(configs.generator.latent_dim);
      break;
    case Kind::planted:
      set.generator = std::make_shared<PlantedGenerator>(planted_for(configs.generator, planted));
      break;
    case Kind::remote:
      set.generator = remote_for(configs.generator);
      break;
  }
  switch (configs.captioner.kind) {
    case Kind::mock:
      set.captioner = std::make_shared<MockCaptioner>();
      break;
    case Kind::planted:
      set.captioner = std::make_shared<PlantedCaptioner>();
      break;
    case Kind::remote:
      set.captioner = remote_for(configs.captioner);
      break;
  }
  switch (configs.composer.kind) {
    case Kind::mock:
    case Kind::planted:
      set.composer = std::make_shared<MockComposer>();
      break;
    case Kind::remote:
      set.composer = remote_for(configs.composer);
      break;
  }
  switch (configs.embedder.kind) {
    case Kind::mock:
      set.embedder = std::make_shared<MockEmbedder>(configs.embedder.seed, configs.embedder.embed_dim);
      break;
    case Kind::planted:
      set.embedder = std::make_shared<PlantedEmbedder>(planted_for(configs.embedder, planted));
      break;
    case Kind::remote:
      set.embedder = remote_for(configs.embedder);
      break;
  }
  set.max_parallel = std::min(configs.encoder.max_parallel, configs.generator.max_parallel);

  if (counts) {
    set.encoder = std::make_shared<CountingEncoder>(set.encoder, counts);
    set.generator = std::make_shared<CountingGenerator>(set.generator, counts);
    set.captioner = std::make_shared<CountingCaptioner>(set.captioner, counts);
    set.composer = std::make_shared<CountingComposer>(set.composer, counts);
    set.embedder = std::make_shared<CountingEmbedder>(set.embedder, counts);
  }
  return set;
}

}  // namespace oneiros::backends
