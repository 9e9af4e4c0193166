#include "oneiros/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <thread>

#include "oneiros/error.hpp"
#include "oneiros/rng.hpp"

namespace oneiros::synthetic {

void SynthConfig::validate() const {
  if (subjects.size() < 2) throw ValidationError("synthetic dataset needs at least two subjects");
  std::set<std::string> ids;
  std::set<std::string> labels;
  for (const auto& s : subjects) {
    if (s.subject_id.empty() || s.planted_label.empty()) {
      throw ValidationError("synthetic subjects need an id and a planted label");
    }
    if (!ids.insert(s.subject_id).second) throw ValidationError("duplicate subject id '" + s.subject_id + "'");
    std::string key = s.planted_label;
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (!labels.insert(key).second) {
      throw ValidationError("planted labels must be distinct ('" + s.planted_label + "' repeats)");
    }
  }
  if (!(signal_gain >= 0.0)) throw ValidationError("signal_gain must be non-negative");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be non-negative");
  if (!(sampling_hz > 0.0)) throw ValidationError("sampling_hz must be positive");
  if (frames < 1) throw ValidationError("frames must be at least 1");
  if (embed_dim < 1) throw ValidationError("embed_dim must be at least 1");
  if (vertices < embed_dim) {
    throw ValidationError("vertices (" + std::to_string(vertices) + ") < embed_dim (" +
                          std::to_string(embed_dim) + "): orthonormal projection impossible");
  }
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig cfg;
  try {
    for (const auto& s : j.at("subjects")) {
      cfg.subjects.push_back({s.at("subject_id").get<std::string>(), s.at("planted_label").get<std::string>()});
    }
    cfg.vertices = j.value("vertices", cfg.vertices);
    cfg.frames = j.value("frames", cfg.frames);
    if (j.contains("baseline_frames")) cfg.baseline_frames = j.at("baseline_frames").get<std::size_t>();
    cfg.sampling_hz = j.value("sampling_hz", cfg.sampling_hz);
    cfg.signal_gain = j.value("signal_gain", cfg.signal_gain);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid synthetic config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

HarnessOptions harness_options_from_json(const json& j) {
  HarnessOptions o;
  try {
    o.window_frames = j.value("window_frames", o.window_frames);
    o.stride_frames = j.value("stride_frames", o.stride_frames);
    o.epsilon = j.value("epsilon", o.epsilon);
    o.temperature = j.value("temperature", o.temperature);
    o.max_parallel = j.value("max_parallel", o.max_parallel);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid harness options: ") + e.what());
  }
  return o;
}

json to_json(const SynthConfig& cfg) {
  json subjects = json::array();
  for (const auto& s : cfg.subjects) subjects.push_back({{"subject_id", s.subject_id}, {"planted_label", s.planted_label}});
  return json{{"subjects", subjects},          {"vertices", cfg.vertices},
              {"frames", cfg.frames},          {"baseline_frames", cfg.rest_frames()},
              {"sampling_hz", cfg.sampling_hz}, {"signal_gain", cfg.signal_gain},
              {"noise_sigma", cfg.noise_sigma}, {"seed", cfg.seed},
              {"embed_dim", cfg.embed_dim}};
}

json to_json(const HarnessOptions& o) {
  return json{{"window_frames", o.window_frames},
              {"stride_frames", o.stride_frames},
              {"epsilon", o.epsilon},
              {"temperature", o.temperature}};
}

std::string config_digest(const SynthConfig& cfg, const HarnessOptions& options) {
  return sha256_hex(json{{"synth", to_json(cfg)}, {"harness", to_json(options)}}.dump()).substr(0, 16);
}

SynthConfig reference_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.subjects = {{"sub-01", "skis"}, {"sub-02", "cat"}, {"sub-03", "people running"}};
  cfg.seed = seed;
  return cfg;
}

Matrix orthonormal_projection(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows > cols) throw ValidationError("cannot build more orthonormal rows than columns");
  NormalStream normals(seed);
  Matrix p(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = p.row(r);
    for (auto& v : row) v = normals.next();
    // Two Gram-Schmidt passes keep rows orthogonal to machine precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t q = 0; q < r; ++q) {
        const auto prev = p.row(q);
        double d = 0.0;
        for (std::size_t c = 0; c < cols; ++c) d += row[c] * prev[c];
        for (std::size_t c = 0; c < cols; ++c) row[c] -= d * prev[c];
      }
    }
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    if (!(n > 1e-12)) throw Error("degenerate Gaussian draw in orthonormal projection");
    for (auto& v : row) v /= n;
  }
  return p;
}

SynthDataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  auto state = std::make_shared<backends::PlantedState>();
  state->seed = cfg.seed;
  state->projection = orthonormal_projection(cfg.embed_dim, cfg.vertices, split_seed(cfg.seed, 0));
  for (const auto& s : cfg.subjects) {
    state->label_embeddings[s.planted_label] =
        backends::hashed_gaussian(evaluate::label_caption(s.planted_label), cfg.seed, cfg.embed_dim);
  }

  SynthDataset data;
  data.rest_frames = cfg.rest_frames();
  const std::size_t total = data.rest_frames + cfg.frames;
  std::vector<std::optional<ingest::FmriSeries>> slots(cfg.subjects.size());
  {
    std::vector<std::jthread> workers;
    for (std::size_t si = 0; si < cfg.subjects.size(); ++si) {
      workers.emplace_back([&, si] {
        const auto& subject = cfg.subjects[si];
        const auto& e = state->label_embeddings.at(subject.planted_label);
        // signal = Pᵀ · (gain · e)
        std::vector<double> signal(cfg.vertices, 0.0);
        for (std::size_t k = 0; k < cfg.embed_dim; ++k) {
          const double w = cfg.signal_gain * e[k];
          const auto row = state->projection.row(k);
          for (std::size_t v = 0; v < cfg.vertices; ++v) signal[v] += w * row[v];
        }
        NormalStream noise(split_seed(cfg.seed, 1 + si));
        Matrix m(total, cfg.vertices);
        for (std::size_t t = 0; t < total; ++t) {
          const bool sleeping = t >= data.rest_frames;
          for (std::size_t v = 0; v < cfg.vertices; ++v) {
            m(t, v) = (sleeping ? signal[v] : 0.0) + cfg.noise_sigma * noise.next();
          }
        }
        slots[si].emplace(std::move(m), cfg.sampling_hz, subject.subject_id, "synthetic-sleep");
      });
    }
  }
  for (auto& s : slots) data.series.push_back(std::move(*s));
  data.planted = std::move(state);
  return data;
}

decode::SnapshotSequence decode_subject(const SynthDataset& data, std::size_t subject,
                                        const SynthConfig& cfg, const HarnessOptions& options,
                                        const std::string& digest) {
  const auto z = ingest::zscore_session(data.series.at(subject), options.epsilon);
  const auto sleep = z.slice_frames(data.rest_frames, cfg.frames);
  const auto windowed = ingest::window_average(sleep, options.window_frames, options.stride_frames);
  const backends::PlantedEncoder encoder(data.planted);
  const backends::PlantedGenerator generator(data.planted);
  decode::DecodeOptions dopts;
  dopts.max_parallel = options.max_parallel;
  dopts.config_digest = digest;
  return decode::decode_dream(windowed, encoder, generator, dopts);
}

SynthRun run_end_to_end(const SynthConfig& cfg, const HarnessOptions& options,
                        const std::vector<std::string>& coco80) {
  const SynthDataset data = generate_dataset(cfg);
  SynthRun run;
  run.digest = config_digest(cfg, options);
  std::vector<evaluate::SubjectInput> inputs;
  for (std::size_t s = 0; s < cfg.subjects.size(); ++s) {
    run.sequences.push_back(decode_subject(data, s, cfg, options, run.digest));
    inputs.push_back({run.sequences.back(), {cfg.subjects[s].planted_label}});
  }
  const backends::PlantedEmbedder embedder(data.planted);
  run.reports = evaluate::evaluate_subjects(inputs, coco80, embedder, options.temperature, &run.matrices);
  return run;
}

double rejection_rate(SynthConfig cfg, const HarnessOptions& options,
                      const std::vector<std::string>& coco80, std::uint64_t first_seed,
                      std::size_t runs, double alpha) {
  std::size_t tests = 0;
  std::size_t rejected = 0;
  for (std::size_t r = 0; r < runs; ++r) {
    cfg.seed = first_seed + r;
    for (const auto& report : run_end_to_end(cfg, options, coco80).reports) {
      ++tests;
      if (report.test.p_two_sided < alpha) ++rejected;
    }
  }
  return tests ? static_cast<double>(rejected) / static_cast<double>(tests) : 0.0;
}

}  // namespace oneiros::synthetic
