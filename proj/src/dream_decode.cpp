#include "oneiros/dream_decode.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace oneiros::decode {

std::vector<DreamSnapshot> SnapshotSequence::decoded() const {
  std::vector<DreamSnapshot> out;
  for (const auto& s : snapshots) {
    if (!s.is_gap()) out.push_back(s);
  }
  return out;
}

DecodeError::DecodeError(std::size_t window_index, const BackendError& cause)
    : BackendError("decoding failed at window " + std::to_string(window_index) + ": " + cause.what(),
                   cause.retryable(), cause.attempts()),
      window_index_(window_index) {}

SnapshotSequence decode_dream(const ingest::WindowedSeries& windowed,
                              const backends::FrameEncoder& encoder,
                              const backends::ImageGenerator& generator,
                              const DecodeOptions& options) {
  if (options.max_parallel < 1) throw ValidationError("max_parallel must be at least 1");
  if (encoder.output_dim() != 0 && generator.input_dim() != 0 &&
      encoder.output_dim() != generator.input_dim()) {
    throw ValidationError("encoder output dim " + std::to_string(encoder.output_dim()) +
                          " does not match generator input dim " +
                          std::to_string(generator.input_dim()));
  }
  SnapshotSequence sequence;
  sequence.subject_id = windowed.subject_id;
  sequence.session_id = windowed.session_id;
  sequence.config_digest = options.config_digest;

  const std::size_t n = windowed.windows();
  std::vector<DreamSnapshot> slots(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t w = next++; w < n; w = next++) {
      DreamSnapshot& snap = slots[w];
      snap.index = options.first_index + w;
      snap.span = windowed.spans[w];
      try {
        auto latent = encoder.encode_frame(windowed.data.row(w));
        snap.image = generator.generate_image(latent);
        snap.latent = std::move(latent);
      } catch (const BackendError& e) {
        if (!options.skip_failed) {
          failures[w] = std::make_exception_ptr(DecodeError(snap.index, e));
        } else {
          snap.latent.reset();
          snap.image.reset();
          snap.gap_reason = e.what();
        }
      } catch (...) {
        failures[w] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(options.max_parallel), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  // Report the lowest failing index regardless of completion order.
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  sequence.snapshots = std::move(slots);
  return sequence;
}

json to_json(const SnapshotSequence& sequence) {
  json snaps = json::array();
  for (const auto& s : sequence.snapshots) {
    json j{{"index", s.index}, {"start_s", s.span.start_s}, {"end_s", s.span.end_s}};
    if (s.is_gap()) {
      j["gap"] = true;
      j["gap_reason"] = s.gap_reason;
    } else {
      const json image = backends::to_json(*s.image);
      for (const auto& [k, v] : image.items()) j[k] = v;
      j["latent"] = s.latent->values();
    }
    snaps.push_back(std::move(j));
  }
  return json{{"subject_id", sequence.subject_id},
              {"session_id", sequence.session_id},
              {"config_digest", sequence.config_digest},
              {"snapshots", std::move(snaps)}};
}

SnapshotSequence sequence_from_json(const json& j) {
  SnapshotSequence seq;
  try {
    seq.subject_id = j.at("subject_id").get<std::string>();
    seq.session_id = j.at("session_id").get<std::string>();
    seq.config_digest = j.value("config_digest", std::string());
    std::size_t expected = 0;
    for (const auto& s : j.at("snapshots")) {
      DreamSnapshot snap;
      snap.index = s.at("index").get<std::size_t>();
      if (expected != 0 && snap.index != expected) {
        throw ValidationError("snapshot indices are not contiguous at " + std::to_string(snap.index));
      }
      expected = snap.index + 1;
      snap.span = {s.at("start_s").get<double>(), s.at("end_s").get<double>()};
      if (s.value("gap", false)) {
        snap.gap_reason = s.value("gap_reason", std::string());
      } else {
        snap.image = backends::image_from_json(s);
        if (s.contains("latent")) {
          snap.latent = backends::LatentVector(s.at("latent").get<std::vector<double>>());
        }
      }
      seq.snapshots.push_back(std::move(snap));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid snapshot manifest: ") + e.what());
  }
  return seq;
}

void save_sequence(const SnapshotSequence& sequence, const std::filesystem::path& path) {
  write_file(path, to_json(sequence).dump(2) + "\n");
}

SnapshotSequence load_sequence(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("missing snapshot manifest: " + path.string());
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ValidationError("malformed snapshot manifest: " + path.string());
  return sequence_from_json(j);
}

}  // namespace oneiros::decode
