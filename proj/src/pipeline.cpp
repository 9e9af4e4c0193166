#include "oneiros/pipeline.hpp"

#include <spawn.h>
#include <sys/wait.h>

#include <chrono>

#include "oneiros/dream_decode.hpp"
#include "oneiros/error.hpp"
#include "oneiros/evaluate.hpp"
#include "oneiros/synthetic.hpp"

extern char** environ;

namespace oneiros::pipeline {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

fs::path resolve(const fs::path& base, const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  fs::path p = j.at(key).get<std::string>();
  return p.is_absolute() ? p : base / p;
}

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

fs::path require_input(const fs::path& p) {
  if (!fs::exists(p)) throw StageOrderError(p);
  return p;
}

std::vector<std::string> load_coco(const PipelineConfig& cfg) {
  return evaluate::load_coco80(cfg.coco80.empty() ? evaluate::default_coco80_path() : cfg.coco80);
}

}  // namespace

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig cfg;
  try {
    const json paths = j.value("paths", json::object());
    cfg.series = resolve(base_dir, paths, "series");
    const std::string fmt = paths.value("series_format", std::string("binary"));
    if (fmt == "binary") {
      cfg.series_format = ingest::Format::binary;
    } else if (fmt == "csv") {
      cfg.series_format = ingest::Format::csv;
    } else {
      throw ValidationError("series_format must be binary or csv");
    }
    cfg.atlas = resolve(base_dir, paths, "atlas");
    cfg.coco80 = resolve(base_dir, paths, "coco80");
    if (paths.contains("output_dir")) cfg.output_dir = resolve(base_dir, paths, "output_dir");

    const json pre = j.value("preprocessing", json::object());
    cfg.window_frames = pre.value("window_frames", cfg.window_frames);
    cfg.stride_frames = pre.value("stride_frames", cfg.stride_frames);
    cfg.epsilon = pre.value("epsilon", cfg.epsilon);
    cfg.roi_regions = pre.value("roi_regions", cfg.roi_regions);

    const json be = j.value("backends", json::object());
    auto block = [&](const char* role) {
      return backends::backend_config_from_json(be.value(role, json::object()), base_dir);
    };
    cfg.backends = {block("encoder"), block("generator"), block("captioner"), block("composer"),
                    block("embedder")};
    cfg.skip_failed = j.value("decode", json::object()).value("skip_failed", false);

    const json ev = j.value("evaluation", json::object());
    cfg.temperature = ev.value("temperature", cfg.temperature);
    for (const auto& s : ev.value("subjects", json::array())) {
      EvaluationSubject subject;
      subject.subject_id = s.at("subject_id").get<std::string>();
      subject.snapshots = resolve(base_dir, s, "snapshots");
      subject.report_labels = s.value("report_labels", std::vector<std::string>{});
      cfg.subjects.push_back(std::move(subject));
    }

    const json nar = j.value("narrative", json::object());
    cfg.shot_duration_s = nar.value("shot_duration_s", cfg.shot_duration_s);
    cfg.repair_retries = nar.value("retries", cfg.repair_retries);
    cfg.renderer = nar.value("renderer", std::string());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid pipeline config: ") + e.what());
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("missing config: " + path.string());
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError("malformed config: " + path.string());
  return config_from_json(j, fs::absolute(path).parent_path());
}

json to_json(const PipelineConfig& cfg) {
  json subjects = json::array();
  for (const auto& s : cfg.subjects) {
    subjects.push_back({{"subject_id", s.subject_id},
                        {"snapshots", s.snapshots.string()},
                        {"report_labels", s.report_labels}});
  }
  return json{
      {"paths",
       {{"series", cfg.series.string()},
        {"series_format", cfg.series_format == ingest::Format::binary ? "binary" : "csv"},
        {"atlas", cfg.atlas.string()},
        {"coco80", cfg.coco80.string()},
        {"output_dir", cfg.output_dir.string()}}},
      {"preprocessing",
       {{"window_frames", cfg.window_frames},
        {"stride_frames", cfg.stride_frames},
        {"epsilon", cfg.epsilon},
        {"roi_regions", cfg.roi_regions}}},
      {"backends",
       {{"encoder", backends::to_json(cfg.backends.encoder)},
        {"generator", backends::to_json(cfg.backends.generator)},
        {"captioner", backends::to_json(cfg.backends.captioner)},
        {"composer", backends::to_json(cfg.backends.composer)},
        {"embedder", backends::to_json(cfg.backends.embedder)}}},
      {"decode", {{"skip_failed", cfg.skip_failed}}},
      {"evaluation", {{"temperature", cfg.temperature}, {"subjects", subjects}}},
      {"narrative",
       {{"shot_duration_s", cfg.shot_duration_s}, {"retries", cfg.repair_retries}, {"renderer", cfg.renderer}}}};
}

std::string PipelineConfig::digest() const {
  json j = to_json(*this);
  j["paths"].erase("output_dir");
  return sha256_hex(j.dump()).substr(0, 16);
}

void PipelineConfig::validate() const {
  if (window_frames < 1 || stride_frames < 1) throw ValidationError("window and stride must be >= 1");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (!(shot_duration_s > 0.0)) throw ValidationError("shot_duration_s must be positive");
  if (repair_retries < 0) throw ValidationError("narrative retries must be >= 0");
  for (const auto* b : {&backends.encoder, &backends.generator, &backends.captioner, &backends.composer,
                        &backends.embedder}) {
    b->validate();
  }
}

void apply_overrides(PipelineConfig& cfg, const Overrides& o) {
  auto each = [&](auto fn) {
    for (auto* b : {&cfg.backends.encoder, &cfg.backends.generator, &cfg.backends.captioner,
                    &cfg.backends.composer, &cfg.backends.embedder}) {
      fn(*b);
    }
  };
  if (o.seed) each([&](backends::BackendConfig& b) { b.seed = *o.seed; });
  if (o.backend_kind) each([&](backends::BackendConfig& b) { b.kind = *o.backend_kind; });
  if (o.backend_url) {
    each([&](backends::BackendConfig& b) {
      if (b.kind == backends::Kind::remote) b.endpoint_url = *o.backend_url;
    });
  }
  if (o.skip_failed) cfg.skip_failed = *o.skip_failed;
  if (o.window) cfg.window_frames = *o.window;
  if (o.stride) cfg.stride_frames = *o.stride;
  if (o.temperature) cfg.temperature = *o.temperature;
  if (o.out) cfg.output_dir = *o.out;
}

Session::Session(PipelineConfig config)
    : cfg(std::move(config)), counts(std::make_shared<backends::CallCounts>()) {
  cfg.validate();
}

const backends::BackendSet& Session::backends() {
  if (!backends_) backends_ = backends::make_backends(cfg.backends, counts);
  return *backends_;
}

StageRecord run_ingest(Session& s) {
  const auto t0 = Clock::now();
  StageRecord rec;
  rec.stage = "ingest";
  if (s.cfg.series.empty()) throw ValidationError("config paths.series is not set");
  rec.inputs.push_back(require_input(s.cfg.series));
  auto series = ingest::load_series(s.cfg.series, s.cfg.series_format);
  series = ingest::zscore_session(series, s.cfg.epsilon);
  if (!s.cfg.roi_regions.empty()) {
    if (s.cfg.atlas.empty()) throw ValidationError("roi_regions set but paths.atlas is not");
    rec.inputs.push_back(require_input(s.cfg.atlas));
    series = ingest::apply_roi(series, ingest::load_atlas(s.cfg.atlas), s.cfg.roi_regions);
  }
  const auto windowed = ingest::window_average(series, s.cfg.window_frames, s.cfg.stride_frames);
  const fs::path out = s.cfg.output_dir / artifacts::kWindowed;
  ingest::save_windowed(windowed, out);
  rec.outputs = {out, ingest::sidecar_path(out)};
  rec.elapsed_ms = ms_since(t0);
  return rec;
}

StageRecord run_decode(Session& s) {
  const auto t0 = Clock::now();
  StageRecord rec;
  rec.stage = "decode";
  const fs::path in = require_input(s.cfg.output_dir / artifacts::kWindowed);
  rec.inputs.push_back(in);
  const auto windowed = ingest::load_windowed(in);
  const auto& be = s.backends();
  decode::DecodeOptions opts;
  opts.max_parallel = be.max_parallel;
  opts.skip_failed = s.cfg.skip_failed;
  opts.config_digest = s.cfg.digest();
  const auto sequence = decode::decode_dream(windowed, *be.encoder, *be.generator, opts);
  const fs::path out = s.cfg.output_dir / artifacts::kSnapshots;
  decode::save_sequence(sequence, out);
  rec.outputs.push_back(out);
  rec.elapsed_ms = ms_since(t0);
  return rec;
}

StageRecord run_narrate(Session& s) {
  const auto t0 = Clock::now();
  StageRecord rec;
  rec.stage = "narrate";
  const fs::path in = require_input(s.cfg.output_dir / artifacts::kSnapshots);
  rec.inputs.push_back(in);
  const auto sequence = decode::load_sequence(in);
  const auto& be = s.backends();
  const auto captions = narrative::caption_snapshots(sequence, *be.captioner);
  if (captions.empty()) throw ValidationError("no decoded snapshots to narrate in " + in.string());

  json caption_json = json::array();
  for (const auto& c : captions) caption_json.push_back({{"index", c.index}, {"caption", c.caption}});
  const fs::path dir = s.cfg.output_dir;
  write_file(dir / artifacts::kCaptions, caption_json.dump(2) + "\n");

  narrative::Composition comp;
  try {
    comp = narrative::compose_script(*be.composer, captions, s.cfg.repair_retries);
  } catch (const narrative::ParseError& e) {
    throw BackendError(std::string("composer reply unusable after repair: ") + e.what(), false);
  }
  write_file(dir / artifacts::kPrompt, comp.prompts.back());
  write_file(dir / artifacts::kComposerReply, comp.replies.back());
  write_file(dir / artifacts::kScript, canonical_dump(narrative::to_json(comp.script)));
  rec.outputs = {dir / artifacts::kCaptions, dir / artifacts::kPrompt, dir / artifacts::kComposerReply,
                 dir / artifacts::kScript};
  rec.elapsed_ms = ms_since(t0);
  return rec;
}

StageRecord run_assemble(Session& s) {
  const auto t0 = Clock::now();
  StageRecord rec;
  rec.stage = "assemble";
  const fs::path snaps = require_input(s.cfg.output_dir / artifacts::kSnapshots);
  const fs::path script_path = require_input(s.cfg.output_dir / artifacts::kScript);
  rec.inputs = {snaps, script_path};
  const auto sequence = decode::load_sequence(snaps);
  const json script_json = json::parse(read_file(script_path), nullptr, false);
  if (script_json.is_discarded()) throw ValidationError("malformed script: " + script_path.string());
  const auto script = narrative::script_from_json(script_json, sequence.decoded().size());
  const auto manifest = narrative::assemble_manifest(sequence, script, s.cfg.shot_duration_s);
  const fs::path out = s.cfg.output_dir / artifacts::kManifest;
  write_file(out, canonical_dump(narrative::to_json(manifest)));
  rec.outputs.push_back(out);
  if (!s.cfg.renderer.empty()) rec.renderer_status = run_renderer(s.cfg.renderer, out);
  rec.elapsed_ms = ms_since(t0);
  return rec;
}

namespace {

std::vector<fs::path> write_reports(const std::vector<evaluate::ComparisonReport>& reports, const fs::path& dir,
                                    const std::string& prefix) {
  std::vector<fs::path> outputs;
  for (const auto& r : reports) {
    const fs::path p = dir / artifacts::kReportsDir / (prefix + evaluate::label_slug(r.label) + ".json");
    write_file(p, canonical_dump(evaluate::to_json(r)));
    outputs.push_back(p);
  }
  const fs::path table = dir / artifacts::kTable;
  write_file(table, evaluate::render_table(reports));
  outputs.push_back(table);
  return outputs;
}

}  // namespace

StageRecord run_evaluate(Session& s) {
  const auto t0 = Clock::now();
  StageRecord rec;
  rec.stage = "evaluate";
  if (s.cfg.subjects.size() < 2) {
    throw ValidationError("evaluation needs at least two subjects in evaluation.subjects");
  }
  std::vector<evaluate::SubjectInput> inputs;
  for (const auto& subj : s.cfg.subjects) {
    rec.inputs.push_back(require_input(subj.snapshots));
    auto seq = decode::load_sequence(subj.snapshots);
    if (seq.subject_id != subj.subject_id) {
      throw ValidationError("snapshot manifest " + subj.snapshots.string() + " belongs to subject '" +
                            seq.subject_id + "', config says '" + subj.subject_id + "'");
    }
    inputs.push_back({std::move(seq), subj.report_labels});
  }
  const auto reports = evaluate::evaluate_subjects(inputs, load_coco(s.cfg), *s.backends().embedder,
                                                   s.cfg.temperature);
  rec.outputs = write_reports(reports, s.cfg.output_dir, "");
  rec.elapsed_ms = ms_since(t0);
  return rec;
}

std::vector<StageRecord> run_all(Session& s) {
  std::vector<StageRecord> records;
  records.push_back(run_ingest(s));
  records.push_back(run_decode(s));
  records.push_back(run_narrate(s));
  records.push_back(run_assemble(s));
  if (!s.cfg.subjects.empty()) records.push_back(run_evaluate(s));
  return records;
}

StageRecord run_synth(const fs::path& synth_config, const Overrides& overrides, const fs::path& out_dir) {
  const auto t0 = Clock::now();
  StageRecord rec;
  rec.stage = "synth";
  rec.inputs.push_back(require_input(synth_config));
  const json j = json::parse(read_file(synth_config), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError("malformed synth config: " + synth_config.string());
  auto cfg = synthetic::synth_config_from_json(j);
  auto opts = synthetic::harness_options_from_json(j);
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.window) opts.window_frames = *overrides.window;
  if (overrides.stride) opts.stride_frames = *overrides.stride;
  if (overrides.temperature) opts.temperature = *overrides.temperature;
  cfg.validate();

  fs::path coco = evaluate::default_coco80_path();
  if (j.contains("coco80")) {
    coco = j.at("coco80").get<std::string>();
    if (coco.is_relative()) coco = fs::absolute(synth_config).parent_path() / coco;
  }
  const auto coco80 = evaluate::load_coco80(coco);

  const auto data = synthetic::generate_dataset(cfg);
  const std::string digest = synthetic::config_digest(cfg, opts);
  const fs::path state_path = out_dir / "planted_state.json";
  write_file(state_path, backends::to_json(*data.planted).dump() + "\n");
  rec.outputs.push_back(state_path);

  std::vector<evaluate::SubjectInput> inputs;
  json subjects = json::array();
  for (std::size_t i = 0; i < cfg.subjects.size(); ++i) {
    const auto& subject = cfg.subjects[i];
    const fs::path dir = out_dir / subject.subject_id;
    ingest::save_series(data.series[i], dir / "series.bin", ingest::Format::binary);
    auto seq = synthetic::decode_subject(data, i, cfg, opts, digest);
    decode::save_sequence(seq, dir / artifacts::kSnapshots);
    rec.outputs.push_back(dir / "series.bin");
    rec.outputs.push_back(dir / artifacts::kSnapshots);
    subjects.push_back({{"subject_id", subject.subject_id},
                        {"snapshots", (fs::path(subject.subject_id) / artifacts::kSnapshots).string()},
                        {"report_labels", {subject.planted_label}}});
    inputs.push_back({std::move(seq), {subject.planted_label}});
  }
  const backends::PlantedEmbedder embedder(data.planted);
  const auto reports = evaluate::evaluate_subjects(inputs, coco80, embedder, opts.temperature);
  for (const auto& p : write_reports(reports, out_dir, "synth_" + digest + "_")) rec.outputs.push_back(p);

  // Pipeline config that re-runs the evaluate stage on these artifacts.
  json planted = {{"kind", "planted"}, {"planted_state", "planted_state.json"}, {"seed", cfg.seed}};
  const json eval_cfg = {{"paths", {{"coco80", fs::absolute(coco).string()}}},
                         {"backends",
                          {{"encoder", planted},
                           {"generator", planted},
                           {"captioner", planted},
                           {"composer", planted},
                           {"embedder", planted}}},
                         {"evaluation", {{"temperature", opts.temperature}, {"subjects", subjects}}}};
  const fs::path eval_path = out_dir / "evaluate_config.json";
  write_file(eval_path, eval_cfg.dump(2) + "\n");
  rec.outputs.push_back(eval_path);
  rec.elapsed_ms = ms_since(t0);
  return rec;
}

int run_renderer(const std::string& command, const fs::path& manifest) {
  const std::string arg = manifest.string();
  std::vector<char*> argv{const_cast<char*>(command.c_str()), const_cast<char*>(arg.c_str()), nullptr};
  pid_t pid = 0;
  if (posix_spawnp(&pid, command.c_str(), nullptr, nullptr, argv.data(), environ) != 0) {
    throw ValidationError("cannot start renderer '" + command + "'");
  }
  int status = 0;
  if (waitpid(pid, &status, 0) < 0) throw Error("waitpid failed for renderer");
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

}  // namespace oneiros::pipeline
