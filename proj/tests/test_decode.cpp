#include <doctest.h>

#include <set>

#include "oneiros/dream_decode.hpp"
#include "oneiros/error.hpp"
#include "support.hpp"

using namespace oneiros;
using namespace oneiros::decode;
using namespace oneiros::backends;

namespace {

ingest::WindowedSeries windows_of(const ingest::FmriSeries& s, std::size_t win = 4, std::size_t stride = 4) {
  return ingest::window_average(s, win, stride);
}

/// Mock encoder that fails on frames whose first value is negative.
class FlakyEncoder final : public FrameEncoder {
 public:
  LatentVector encode_frame(std::span<const double> frame) const override {
    if (frame[0] < 0.0) throw BackendError("encoder unavailable", true, 3);
    return inner_.encode_frame(frame);
  }
  std::size_t output_dim() const override { return inner_.output_dim(); }

 private:
  MockEncoder inner_{1, 16};
};

ingest::WindowedSeries flagged_windows(const std::vector<double>& first_values) {
  ingest::WindowedSeries w;
  w.data = Matrix(first_values.size(), 3);
  for (std::size_t k = 0; k < first_values.size(); ++k) {
    w.data(k, 0) = first_values[k];
    w.data(k, 1) = static_cast<double>(k);
    w.data(k, 2) = 1.0;
    w.spans.push_back({3.2 * k, 3.2 * (k + 1)});
  }
  w.subject_id = "sub-01";
  w.session_id = "night-1";
  return w;
}

}  // namespace

TEST_CASE("empty input gives an empty sequence") {
  const auto w = windows_of(testing::random_series(3, 4, 1));
  REQUIRE(w.windows() == 0);
  const auto seq = decode_dream(w, MockEncoder(1, 16), MockGenerator(16));
  CHECK(seq.snapshots.empty());
  CHECK(seq.subject_id == "sub-01");
}

TEST_CASE("planted decode carries P times the window mean") {
  auto state = std::make_shared<PlantedState>();
  NormalStream ns(3);
  state->projection = Matrix(4, 6, ns.take(24));
  state->label_embeddings = {{"cat", {1, 0, 0, 0}}};
  const auto series = testing::random_series(12, 6, 2);
  const auto w = windows_of(series);
  const auto seq = decode_dream(w, PlantedEncoder(state), PlantedGenerator(state));
  REQUIRE(seq.snapshots.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    // Oracle: hand window mean, then hand matrix product.
    std::vector<double> mean(6, 0.0);
    for (std::size_t t = 4 * k; t < 4 * k + 4; ++t) {
      for (std::size_t v = 0; v < 6; ++v) mean[v] += series.data()(t, v) / 4.0;
    }
    const auto& payload = seq.snapshots[k].image->payload;
    REQUIRE(payload.size() == 4);
    for (std::size_t r = 0; r < 4; ++r) {
      double acc = 0.0;
      for (std::size_t v = 0; v < 6; ++v) acc += state->projection(r, v) * mean[v];
      CHECK(payload[r] == doctest::Approx(acc).epsilon(1e-12));
    }
    CHECK(seq.snapshots[k].index == k + 1);
    CHECK(seq.snapshots[k].span == w.spans[k]);
  }
}

TEST_CASE("identical windows decode to identical ids") {
  Matrix m(12, 5);
  NormalStream ns(4);
  for (std::size_t t = 0; t < 12; ++t) {
    for (std::size_t v = 0; v < 5; ++v) m(t, v) = ns.next();
  }
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t v = 0; v < 5; ++v) m(8 + t, v) = m(t, v);
  }
  const auto seq = decode_dream(windows_of({m, 1.25, "s", "n"}), MockEncoder(7, 16), MockGenerator(16));
  CHECK(seq.snapshots[0].image->id == seq.snapshots[2].image->id);
  CHECK(seq.snapshots[0].image->id != seq.snapshots[1].image->id);
}

TEST_CASE("parallel decode equals serial decode") {
  const auto w = windows_of(testing::random_series(80, 10, 5), 4, 2);
  DecodeOptions serial;
  DecodeOptions parallel;
  parallel.max_parallel = 4;
  const MockEncoder enc(2, 16);
  const MockGenerator gen(16);
  const auto a = decode_dream(w, enc, gen, serial);
  const auto b = decode_dream(w, enc, gen, parallel);
  CHECK(to_json(a) == to_json(b));
  CHECK(a.snapshots.size() == w.windows());
}

TEST_CASE("decoding a window range equals slicing the full decode") {
  const auto series = testing::random_series(40, 6, 6);
  const MockEncoder enc(3, 16);
  const MockGenerator gen(16);
  const auto full = decode_dream(windows_of(series), enc, gen);
  DecodeOptions opts;
  opts.first_index = 4;
  const auto part = decode_dream(windows_of(series.slice_frames(12, 16)), enc, gen, opts);
  REQUIRE(part.snapshots.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& p = part.snapshots[k];
    const auto& f = full.snapshots[k + 3];
    CHECK(p.index == f.index);
    CHECK(p.span == f.span);
    CHECK(*p.image == *f.image);
  }
}

TEST_CASE("a failing window aborts with its index") {
  const auto w = flagged_windows({1.0, 1.0, -1.0, 1.0, -1.0});
  for (int par : {1, 3}) {
    DecodeOptions opts;
    opts.max_parallel = par;
    try {
      decode_dream(w, FlakyEncoder(), MockGenerator(16), opts);
      FAIL("expected a decode error");
    } catch (const DecodeError& e) {
      CHECK(e.window_index() == 3);
      CHECK(e.attempts() == 3);
      CHECK(std::string(e.what()).find("window 3") != std::string::npos);
    }
  }
}

TEST_CASE("skip-failed records gaps") {
  const auto w = flagged_windows({1.0, -1.0, 1.0});
  DecodeOptions opts;
  opts.skip_failed = true;
  const auto seq = decode_dream(w, FlakyEncoder(), MockGenerator(16), opts);
  REQUIRE(seq.snapshots.size() == 3);
  CHECK(seq.snapshots[1].is_gap());
  CHECK(seq.snapshots[1].gap_reason.find("encoder unavailable") != std::string::npos);
  CHECK(seq.decoded().size() == 2);
  CHECK(seq.decoded()[1].index == 3);

  testing::TempDir dir("decode");
  save_sequence(seq, dir / "s.json");
  const auto back = load_sequence(dir / "s.json");
  CHECK(back.snapshots[1].is_gap());
  CHECK(to_json(back) == to_json(seq));
}

TEST_CASE("dimension mismatch between encoder and generator") {
  CHECK_THROWS_AS(decode_dream(flagged_windows({1.0}), MockEncoder(1, 8), MockGenerator(16)), ValidationError);
}

TEST_CASE("snapshot manifest round trip and layout") {
  const auto seq = decode_dream(windows_of(testing::random_series(12, 4, 9)), MockEncoder(7, 16),
                                MockGenerator(16), {1, false, "abc123", 1});
  testing::TempDir dir("decode");
  save_sequence(seq, dir / "snapshots.json");
  const auto j = json::parse(read_file(dir / "snapshots.json"));
  CHECK(j.at("subject_id") == "sub-01");
  CHECK(j.at("config_digest") == "abc123");
  const auto& s0 = j.at("snapshots")[0];
  CHECK(s0.at("index") == 1);
  CHECK(s0.at("start_s") == 0.0);
  CHECK(s0.at("end_s") == doctest::Approx(3.2));
  CHECK(s0.contains("image_id"));
  CHECK(s0.contains("uri"));
  const auto back = load_sequence(dir / "snapshots.json");
  for (std::size_t k = 0; k < seq.snapshots.size(); ++k) {
    CHECK(*back.snapshots[k].latent == *seq.snapshots[k].latent);
    CHECK(*back.snapshots[k].image == *seq.snapshots[k].image);
  }

  json bad = j;
  bad["snapshots"][1]["index"] = 5;
  CHECK_THROWS_AS(sequence_from_json(bad), ValidationError);
  CHECK_THROWS_AS(load_sequence(dir / "absent.json"), ValidationError);
}
