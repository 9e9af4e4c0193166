// oneiros: command-line front end for the dream decoding pipeline.
//
// Exit codes: 0 success, 1 validation or stage-order error, 2 backend
// failure. `assemble` with a configured renderer exits with the renderer's
// status when that is non-zero.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "oneiros/digest.hpp"
#include "oneiros/error.hpp"
#include "oneiros/pipeline.hpp"
#include "oneiros/remote_backend.hpp"

namespace fs = std::filesystem;
using namespace oneiros;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool skip_failed = false;
  std::optional<std::size_t> window;
  std::optional<std::size_t> stride;
  std::optional<double> temperature;
  std::optional<std::string> backend_kind;
  std::optional<std::string> out;
  std::optional<std::string> url;  // conformance only
};

void add_common(CLI::App* cmd, Flags& f, bool pipeline_flags) {
  cmd->add_option("--config", f.config, "Config file (JSON)")->required();
  cmd->add_option("--seed", f.seed, "Seed for every backend");
  cmd->add_option("--window", f.window, "Frames per window")->check(CLI::PositiveNumber);
  cmd->add_option("--stride", f.stride, "Frames between window starts")->check(CLI::PositiveNumber);
  cmd->add_option("--temperature", f.temperature, "Softmax temperature")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "Output directory");
  if (pipeline_flags) {
    cmd->add_flag("--skip-failed", f.skip_failed, "Record failed windows as gaps");
    cmd->add_option("--backend-kind", f.backend_kind, "Backend for all five roles")
        ->check(CLI::IsMember({"mock", "planted", "remote"}));
  }
}

pipeline::Overrides overrides_from(const Flags& f) {
  pipeline::Overrides o;
  o.seed = f.seed;
  if (f.skip_failed) o.skip_failed = true;
  o.window = f.window;
  o.stride = f.stride;
  o.temperature = f.temperature;
  if (f.backend_kind) o.backend_kind = backends::parse_kind(*f.backend_kind);
  if (f.out) o.out = *f.out;
  if (const char* url = std::getenv("ONEIROS_BACKEND_URL"); url != nullptr && *url != '\0') o.backend_url = url;
  return o;
}

json file_list(const std::vector<fs::path>& paths) {
  json list = json::array();
  for (const auto& p : paths) {
    json entry = {{"path", p.string()}};
    entry["sha256"] = fs::is_regular_file(p) ? json(file_sha256(p)) : json(nullptr);
    list.push_back(std::move(entry));
  }
  return list;
}

/// Collects what a subcommand did and writes logs/<name>.json on exit.
struct RunLog {
  std::string subcommand;
  fs::path out_dir = "out";
  json log = json::object();
  std::vector<pipeline::StageRecord> stages;
  std::shared_ptr<backends::CallCounts> counts;

  void write(int exit_code, const std::string& error, double elapsed_ms) {
    log["subcommand"] = subcommand;
    log["exit_code"] = exit_code;
    log["status"] = exit_code == 0 ? "ok" : "failed";
    if (!error.empty()) log["error"] = error;
    log["elapsed_ms"] = elapsed_ms;
    json st = json::array();
    for (const auto& r : stages) {
      json entry = {{"stage", r.stage},
                    {"elapsed_ms", r.elapsed_ms},
                    {"inputs", file_list(r.inputs)},
                    {"outputs", file_list(r.outputs)}};
      if (r.renderer_status != 0) entry["renderer_status"] = r.renderer_status;
      st.push_back(std::move(entry));
    }
    log["stages"] = st;
    log["backend_calls"] = counts ? counts->to_json() : json::object();
    const fs::path path = out_dir / pipeline::artifacts::kLogsDir / (subcommand + ".json");
    try {
      write_file(path, log.dump(2) + "\n");
    } catch (const std::exception& e) {
      std::cerr << "oneiros: cannot write run log " << path << ": " << e.what() << "\n";
    }
  }
};

int run_guarded(RunLog& rl, const std::function<int()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  int code = 0;
  std::string error;
  try {
    code = body();
  } catch (const BackendError& e) {
    code = 2;
    error = e.what();
  } catch (const ValidationError& e) {
    code = 1;
    error = e.what();
  } catch (const std::exception& e) {
    // Malformed inputs surfacing from parsers and the filesystem.
    code = 1;
    error = e.what();
  }
  if (!error.empty()) std::cerr << "oneiros " << rl.subcommand << ": error: " << error << "\n";
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  rl.write(code, error, ms);
  return code;
}

void print_outputs(const std::vector<pipeline::StageRecord>& stages) {
  for (const auto& r : stages) {
    for (const auto& p : r.outputs) std::cout << r.stage << ": " << p.string() << "\n";
  }
}

int pipeline_command(const std::string& name, const Flags& flags) {
  RunLog rl;
  rl.subcommand = name;
  if (flags.out) rl.out_dir = *flags.out;
  rl.log["config_path"] = flags.config;
  return run_guarded(rl, [&]() -> int {
    auto cfg = pipeline::load_config(flags.config);
    pipeline::apply_overrides(cfg, overrides_from(flags));
    rl.out_dir = cfg.output_dir;
    pipeline::Session session(std::move(cfg));
    rl.counts = session.counts;
    rl.log["config_digest"] = session.cfg.digest();
    rl.log["config"] = pipeline::to_json(session.cfg);

    if (name == "run-all") {
      // Records are appended stage by stage so a failure still logs earlier stages.
      rl.stages.push_back(pipeline::run_ingest(session));
      rl.stages.push_back(pipeline::run_decode(session));
      rl.stages.push_back(pipeline::run_narrate(session));
      rl.stages.push_back(pipeline::run_assemble(session));
      if (!session.cfg.subjects.empty()) rl.stages.push_back(pipeline::run_evaluate(session));
    } else if (name == "ingest") {
      rl.stages.push_back(pipeline::run_ingest(session));
    } else if (name == "decode") {
      rl.stages.push_back(pipeline::run_decode(session));
    } else if (name == "narrate") {
      rl.stages.push_back(pipeline::run_narrate(session));
    } else if (name == "assemble") {
      rl.stages.push_back(pipeline::run_assemble(session));
    } else if (name == "evaluate") {
      rl.stages.push_back(pipeline::run_evaluate(session));
    }
    print_outputs(rl.stages);
    for (const auto& r : rl.stages) {
      if (r.renderer_status != 0) {
        std::cerr << "oneiros " << name << ": renderer exited with status " << r.renderer_status << "\n";
        return r.renderer_status;
      }
    }
    return 0;
  });
}

int synth_command(const Flags& flags) {
  RunLog rl;
  rl.subcommand = "synth";
  rl.out_dir = flags.out.value_or("out");
  rl.log["config_path"] = flags.config;
  return run_guarded(rl, [&]() -> int {
    const auto rec = pipeline::run_synth(flags.config, overrides_from(flags), rl.out_dir);
    rl.log["config_digest"] = sha256_hex(read_file(flags.config)).substr(0, 16);
    rl.stages.push_back(rec);
    print_outputs(rl.stages);
    return 0;
  });
}

int conformance_command(const Flags& flags) {
  RunLog rl;
  rl.subcommand = "conformance";
  rl.out_dir = flags.out.value_or("out");
  return run_guarded(rl, [&]() -> int {
    std::string url = flags.url.value_or("");
    if (url.empty()) {
      if (const char* env = std::getenv("ONEIROS_BACKEND_URL"); env != nullptr) url = env;
    }
    if (url.empty()) throw ValidationError("no service URL: pass --url or set ONEIROS_BACKEND_URL");
    rl.log["url"] = url;
    bool ok = true;
    json checks = json::array();
    for (const auto& c : backends::run_conformance(url)) {
      std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail) << "\n";
      checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
      ok = ok && c.passed;
    }
    rl.log["checks"] = checks;
    return ok ? 0 : 2;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dream fMRI decoding, narrative and evaluation pipeline"};
  app.require_subcommand(1);

  Flags flags;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"ingest", "z-score, ROI-restrict and window a raw session"},
      {"decode", "decode windows into snapshots"},
      {"narrate", "caption snapshots and compose the script"},
      {"assemble", "build the video manifest"},
      {"evaluate", "score subjects against their dream reports"},
      {"run-all", "ingest, decode, narrate, assemble (and evaluate)"},
  };
  std::string chosen;
  for (const auto& [name, help] : stages) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, flags, true);
    cmd->callback([&chosen, n = name] { chosen = n; });
  }
  auto* synth = app.add_subcommand("synth", "generate the planted-signal dataset and its reports");
  add_common(synth, flags, false);
  synth->callback([&chosen] { chosen = "synth"; });

  auto* conf = app.add_subcommand("conformance", "check a /v1 service against the wire protocol");
  conf->add_option("--url", flags.url, "Service base URL (default: ONEIROS_BACKEND_URL)");
  conf->add_option("--out", flags.out, "Output directory for the run log");
  conf->callback([&chosen] { chosen = "conformance"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (chosen == "synth") return synth_command(flags);
  if (chosen == "conformance") return conformance_command(flags);
  return pipeline_command(chosen, flags);
}
