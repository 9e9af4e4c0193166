#include <doctest.h>

#include <chrono>
#include <cmath>

#include "oneiros/error.hpp"
#include "oneiros/synthetic.hpp"

using namespace oneiros;
using namespace oneiros::synthetic;

namespace {

const std::vector<std::string>& coco() {
  static const auto labels = evaluate::load_coco80(evaluate::default_coco80_path());
  return labels;
}

HarnessOptions reference_options() {
  HarnessOptions o;
  o.window_frames = 4;
  o.stride_frames = 4;
  o.temperature = 100.0;
  return o;
}

bool same_series(const ingest::FmriSeries& a, const ingest::FmriSeries& b) {
  if (a.frames() != b.frames() || a.vertices() != b.vertices()) return false;
  for (std::size_t t = 0; t < a.frames(); ++t) {
    for (std::size_t v = 0; v < a.vertices(); ++v) {
      if (a.data()(t, v) != b.data()(t, v)) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("projection rows are orthonormal") {
  const Matrix p = orthonormal_projection(32, 128, 11);
  for (std::size_t i = 0; i < 32; ++i) {
    for (std::size_t j = 0; j < 32; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < 128; ++c) d += p(i, c) * p(j, c);
      CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(orthonormal_projection(5, 4, 0), ValidationError);
}

TEST_CASE("noiseless frames map back to the planted embedding") {
  auto cfg = reference_config(5);
  cfg.noise_sigma = 0.0;
  cfg.signal_gain = 2.5;
  cfg.frames = 6;
  cfg.baseline_frames = 3;
  const auto data = generate_dataset(cfg);
  const auto& p = data.planted->projection;
  for (std::size_t s = 0; s < cfg.subjects.size(); ++s) {
    const auto& series = data.series[s];
    CHECK(series.subject_id() == cfg.subjects[s].subject_id);
    REQUIRE(series.frames() == 9);
    const auto& e = data.planted->label_embeddings.at(cfg.subjects[s].planted_label);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t v = 0; v < cfg.vertices; ++v) REQUIRE(series.data()(t, v) == 0.0);
    }
    for (std::size_t t = 3; t < 9; ++t) {
      for (std::size_t k = 0; k < cfg.embed_dim; ++k) {
        double acc = 0.0;
        for (std::size_t v = 0; v < cfg.vertices; ++v) acc += p(k, v) * series.data()(t, v);
        REQUIRE(std::abs(acc - 2.5 * e[k]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("planted embeddings match the planted embedder") {
  const auto cfg = reference_config(3);
  const auto data = generate_dataset(cfg);
  const backends::PlantedEmbedder emb(data.planted);
  for (const auto& s : cfg.subjects) {
    const auto v = emb.embed_text("a photo of " + s.planted_label);
    const auto& e = data.planted->label_embeddings.at(s.planted_label);
    REQUIRE(v.dim() == e.size());
    double n = 0.0;
    for (double x : e) n += x * x;
    n = std::sqrt(n);
    for (std::size_t k = 0; k < e.size(); ++k) CHECK(std::abs(v.values()[k] - e[k] / n) <= 1e-15);
  }
}

TEST_CASE("same seed gives bit-identical datasets") {
  const auto a = generate_dataset(reference_config(42));
  const auto b = generate_dataset(reference_config(42));
  const auto c = generate_dataset(reference_config(43));
  for (std::size_t s = 0; s < a.series.size(); ++s) {
    CHECK(same_series(a.series[s], b.series[s]));
    CHECK_FALSE(same_series(a.series[s], c.series[s]));
  }
  CHECK_FALSE(same_series(a.series[0], a.series[1]));
}

TEST_CASE("zero gain frames are centred noise") {
  auto cfg = reference_config(9);
  cfg.signal_gain = 0.0;
  cfg.noise_sigma = 2.0;
  cfg.frames = 400;
  const auto data = generate_dataset(cfg);
  const double n = static_cast<double>(data.series[0].frames());
  const double bound = 3.0 * cfg.noise_sigma / std::sqrt(n);
  std::size_t outside = 0;
  std::size_t total = 0;
  for (const auto& series : data.series) {
    for (std::size_t v = 0; v < cfg.vertices; ++v) {
      double mean = 0.0;
      for (std::size_t t = 0; t < series.frames(); ++t) mean += series.data()(t, v);
      mean /= n;
      ++total;
      if (std::abs(mean) > bound) ++outside;
    }
  }
  // 3 sigma covers 99.73%; allow a handful of the 384 vertex means to stray.
  CHECK(outside <= 6);
  CHECK(total == 384);
}

TEST_CASE("planted labels are recovered end to end") {
  const auto started = std::chrono::steady_clock::now();
  const auto run = run_end_to_end(reference_config(0), reference_options(), coco());
  REQUIRE(run.reports.size() == 3);
  for (const auto& seq : run.sequences) CHECK(seq.snapshots.size() == 50);
  for (const auto& r : run.reports) {
    CAPTURE(r.label);
    CHECK(r.mean_pos > r.mean_neg);
    CHECK(r.test.p_two_sided < 0.01);
    CHECK(r.test.n1 == 50);
    CHECK(r.test.n2 == 100);
  }
  CHECK(std::chrono::steady_clock::now() - started < std::chrono::seconds(60));
}

TEST_CASE("end to end is deterministic and uses the config digest") {
  const auto a = run_end_to_end(reference_config(4), reference_options(), coco());
  const auto b = run_end_to_end(reference_config(4), reference_options(), coco());
  CHECK(a.digest == b.digest);
  CHECK(a.digest.size() == 16);
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    CHECK(canonical_dump(evaluate::to_json(a.reports[i])) == canonical_dump(evaluate::to_json(b.reports[i])));
  }
  CHECK(config_digest(reference_config(5), reference_options()) != a.digest);
}

TEST_CASE("signal gap shrinks as noise grows") {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    std::vector<double> gaps;
    for (double sigma : {0.1, 1.0, 10.0}) {
      auto cfg = reference_config(seed);
      cfg.noise_sigma = sigma;
      const auto run = run_end_to_end(cfg, reference_options(), coco());
      double gap = 0.0;
      for (const auto& r : run.reports) gap += r.diff;
      gaps.push_back(gap / static_cast<double>(run.reports.size()));
    }
    CAPTURE(seed);
    CHECK(gaps[0] >= gaps[1]);
    CHECK(gaps[1] >= gaps[2]);
  }
}

TEST_CASE("null calibration over 200 seeds") {
  auto cfg = reference_config(0);
  cfg.signal_gain = 0.0;
  const double rate = rejection_rate(cfg, reference_options(), coco(), 1000, 200, 0.05);
  MESSAGE("null rejection rate " << rate);
  CHECK(rate >= 0.01);
  CHECK(rate <= 0.12);
}

TEST_CASE("synthetic config validation") {
  auto cfg = reference_config(0);
  cfg.vertices = 16;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg = reference_config(0);
  cfg.subjects[1].planted_label = "SKIS";
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg = reference_config(0);
  cfg.subjects[1].subject_id = "sub-01";
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg = reference_config(0);
  cfg.signal_gain = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg = reference_config(0);
  cfg.noise_sigma = std::nan("");
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg = reference_config(0);
  cfg.subjects.pop_back();
  cfg.subjects.pop_back();
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  CHECK_THROWS_AS(synth_config_from_json(json{{"subjects", "nope"}}), ValidationError);
}

TEST_CASE("synthetic config json round trip") {
  auto cfg = reference_config(77);
  cfg.baseline_frames = 12;
  const auto back = synth_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  const auto opts = harness_options_from_json(to_json(reference_options()));
  CHECK(config_digest(back, opts) == config_digest(cfg, reference_options()));
}
