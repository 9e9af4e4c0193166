#include "oneiros/narrative.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace oneiros::narrative {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

const std::string kTaskDescription =
    "I have a collection of photos and videos, with a fixed order. I need your help to organize "
    "these materials according to their input sequence. This collection represents scenes from a "
    "dream I had, and I want to structure them into my subjective description of the dream based "
    "on their captions. Additionally, I require a smoothly written script that connects these "
    "images into a cohesive narrative.\n"
    "\n"
    "I need you to do two things:\n"
    "\n"
    "(1) Provide a subjective description of my dream from my perspective based on the captions "
    "of these images and videos, keeping the order fixed according to the input sequence.\n"
    "\n"
    "(2) Write a script according to the input material sequence. The script should be concise, "
    "fluent, vivid, and the transitions between different materials should be natural.";

const std::string kOutputInstruction =
    "Also give the dream a title, one script line per image, some closing remarks and a "
    "suggested soundtrack. Reply with exactly one fenced code block "
    "tagged json and nothing else inside code fences. The block must hold a single JSON object "
    "with these keys:\n"
    "- \"title\": the dream title\n"
    "- \"subjective_description\": the description from task (1)\n"
    "- \"shots\": one object per image, in input order, of the form "
    "{\"index\": <image number, starting at 1>, \"script_line\": <script for that image>}\n"
    "- \"closing\": concluding remarks\n"
    "- \"audio_track\": the recommended audio track\n"
    "\n"
    "The image captions, in their fixed order:";

std::string require_string(const json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(ParseError::Kind::key, std::string("missing key '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_string() || trim(v.get<std::string>()).empty()) {
    throw ParseError(ParseError::Kind::key, std::string("key '") + key + "' must be a non-empty string");
  }
  return v.get<std::string>();
}

}  // namespace

ShotCaption::ShotCaption(std::size_t index_, std::string caption_) : index(index_) {
  // Each line break (LF, CR or CRLF) becomes one space.
  std::string folded;
  for (std::size_t i = 0; i < caption_.size(); ++i) {
    const char c = caption_[i];
    if (c == '\r' && i + 1 < caption_.size() && caption_[i + 1] == '\n') continue;
    folded.push_back(c == '\n' || c == '\r' ? ' ' : c);
  }
  caption = trim(folded);
  if (caption.empty()) throw ValidationError("caption of shot " + std::to_string(index) + " is empty");
}

std::string build_caption_prompt(const std::vector<ShotCaption>& captions) {
  if (captions.empty()) throw ValidationError("caption list is empty");
  std::string out;
  for (std::size_t k = 0; k < captions.size(); ++k) {
    if (captions[k].index != k + 1) {
      throw ValidationError("non-contiguous caption indices: expected " + std::to_string(k + 1) +
                            ", got " + std::to_string(captions[k].index));
    }
    if (k) out += '\n';
    out += "Image " + std::to_string(k + 1) + ": " + captions[k].caption;
  }
  return out;
}

const std::string& output_instruction() { return kOutputInstruction; }

std::string build_task_prompt(const std::string& caption_prompt) {
  if (caption_prompt.empty()) throw ValidationError("caption prompt is empty");
  return kTaskDescription + "\n\n" + kOutputInstruction + "\n" + caption_prompt;
}

NarrativeScript script_from_json(const json& j, std::size_t expected_shots) {
  if (!j.is_object()) throw ParseError(ParseError::Kind::invalid_json, "script block is not a JSON object");
  NarrativeScript script;
  script.title = require_string(j, "title");
  script.subjective_description = require_string(j, "subjective_description");
  if (!j.contains("shots")) throw ParseError(ParseError::Kind::key, "missing key 'shots'");
  const auto& shots = j.at("shots");
  if (!shots.is_array()) throw ParseError(ParseError::Kind::key, "key 'shots' must be an array");
  if (shots.size() != expected_shots) {
    throw ParseError(ParseError::Kind::count,
                     "script has " + std::to_string(shots.size()) + " shots, expected " +
                         std::to_string(expected_shots),
                     shots.size(), expected_shots);
  }
  for (std::size_t k = 0; k < shots.size(); ++k) {
    const auto& s = shots[k];
    if (!s.is_object() || !s.contains("index") || !s.at("index").is_number_integer()) {
      throw ParseError(ParseError::Kind::key, "shot " + std::to_string(k + 1) + " lacks an integer 'index'");
    }
    const auto index = s.at("index").get<long long>();
    if (index != static_cast<long long>(k + 1)) {
      throw ParseError(ParseError::Kind::index,
                       "shot indices are not contiguous: expected " + std::to_string(k + 1) +
                           ", got " + std::to_string(index),
                       static_cast<std::size_t>(std::max(index, 0LL)), k + 1);
    }
    script.shots.push_back({k + 1, require_string(s, "script_line")});
  }
  script.closing = require_string(j, "closing");
  script.audio_track = require_string(j, "audio_track");
  return script;
}

NarrativeScript parse_script(const std::string& raw, std::size_t expected_shots) {
  if (raw.empty()) throw ParseError(ParseError::Kind::no_block, "composer reply is empty");
  struct Block {
    std::string tag;
    std::string body;
  };
  std::vector<Block> blocks;
  {
    std::istringstream in(raw);
    std::string line;
    bool open = false;
    Block current;
    while (std::getline(in, line)) {
      const std::string t = trim(line);
      if (t.starts_with("```")) {
        if (!open) {
          current = Block{lower(trim(t.substr(3))), {}};
          open = true;
        } else {
          blocks.push_back(std::move(current));
          open = false;
        }
      } else if (open) {
        current.body += line + "\n";
      }
    }
  }
  const Block* chosen = nullptr;
  for (const auto& b : blocks) {
    if (b.tag == "json") {
      chosen = &b;
      break;
    }
    if (b.tag.empty() && !chosen) {
      const json probe = json::parse(b.body, nullptr, false);
      if (!probe.is_discarded() && probe.is_object()) chosen = &b;
    }
  }
  if (!chosen) throw ParseError(ParseError::Kind::no_block, "no fenced JSON block in composer reply");
  const json j = json::parse(chosen->body, nullptr, false);
  if (j.is_discarded()) throw ParseError(ParseError::Kind::invalid_json, "fenced JSON block does not parse");
  return script_from_json(j, expected_shots);
}

json to_json(const NarrativeScript& script) {
  json shots = json::array();
  for (const auto& s : script.shots) shots.push_back({{"index", s.index}, {"script_line", s.script_line}});
  return json{{"title", script.title},
              {"subjective_description", script.subjective_description},
              {"shots", std::move(shots)},
              {"closing", script.closing},
              {"audio_track", script.audio_track}};
}

Composition compose_script(const backends::NarrativeComposer& composer,
                           const std::vector<ShotCaption>& captions, int repair_retries) {
  Composition out;
  const std::string prompt = build_task_prompt(build_caption_prompt(captions));
  std::string current = prompt;
  for (int attempt = 0;; ++attempt) {
    out.prompts.push_back(current);
    out.replies.push_back(composer.compose_narrative(current));
    try {
      out.script = parse_script(out.replies.back(), captions.size());
      return out;
    } catch (const ParseError& e) {
      if (attempt >= repair_retries) throw;
      current = prompt + "\n\nYour previous reply was not valid (" + e.what() +
                "). Reply again with exactly one fenced json block holding the keys title, "
                "subjective_description, shots, closing and audio_track, with one shot per image.";
    }
  }
}

std::vector<ShotCaption> caption_snapshots(const decode::SnapshotSequence& sequence,
                                           const backends::Captioner& captioner) {
  std::vector<ShotCaption> out;
  for (const auto& snap : sequence.snapshots) {
    if (snap.is_gap()) continue;
    out.emplace_back(out.size() + 1, captioner.caption_image(*snap.image));
  }
  return out;
}

double VideoManifest::total_duration_s() const noexcept {
  return entries.empty() ? 0.0 : entries.back().start_s + entries.back().duration_s;
}

VideoManifest assemble_manifest(const decode::SnapshotSequence& snapshots,
                                const NarrativeScript& script, double shot_duration_s) {
  if (!(shot_duration_s > 0.0)) throw ValidationError("shot_duration_s must be positive");
  const auto decoded = snapshots.decoded();
  if (decoded.size() != script.shots.size()) {
    throw ValidationError("count mismatch: " + std::to_string(decoded.size()) +
                          " decoded snapshots but " + std::to_string(script.shots.size()) +
                          " script shots");
  }
  VideoManifest m;
  m.title = script.title;
  m.closing = script.closing;
  m.audio_track = script.audio_track;
  for (std::size_t k = 0; k < decoded.size(); ++k) {
    ManifestEntry e;
    e.image = *decoded[k].image;
    e.image.payload.clear();
    e.snapshot_index = decoded[k].index;
    e.start_s = static_cast<double>(k) * shot_duration_s;
    e.duration_s = shot_duration_s;
    e.subtitle = script.shots[k].script_line;
    m.entries.push_back(std::move(e));
  }
  return m;
}

namespace {

// Total as a reader of the 6-digit serialized entries would compute it, so
// that parse and re-serialize reproduces the same bytes.
double serialized_total(const VideoManifest& m) {
  if (m.entries.empty()) return 0.0;
  return round_sig6(round_sig6(m.entries.back().start_s) + round_sig6(m.entries.back().duration_s));
}

}  // namespace

json to_json(const VideoManifest& manifest) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    entries.push_back({{"image", backends::to_json(e.image)},
                       {"snapshot_index", e.snapshot_index},
                       {"start_s", e.start_s},
                       {"duration_s", e.duration_s},
                       {"subtitle", e.subtitle}});
  }
  return json{{"title", manifest.title},
              {"entries", std::move(entries)},
              {"closing", manifest.closing},
              {"audio_track", manifest.audio_track},
              {"total_duration_s", serialized_total(manifest)}};
}

VideoManifest manifest_from_json(const json& j) {
  VideoManifest m;
  try {
    m.title = j.at("title").get<std::string>();
    m.closing = j.at("closing").get<std::string>();
    m.audio_track = j.at("audio_track").get<std::string>();
    double expected_start = 0.0;
    // Entries are serialized at 6 significant digits.
    auto tolerance = [](double t) { return 2e-5 * std::max(1.0, std::abs(t)); };
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.image = backends::image_from_json(e.at("image"));
      entry.snapshot_index = e.at("snapshot_index").get<std::size_t>();
      entry.start_s = e.at("start_s").get<double>();
      entry.duration_s = e.at("duration_s").get<double>();
      entry.subtitle = e.at("subtitle").get<std::string>();
      if (!(entry.duration_s > 0.0)) throw ValidationError("manifest entry with non-positive duration");
      if (std::abs(entry.start_s - expected_start) > tolerance(entry.start_s)) {
        throw ValidationError("manifest entries overlap or leave a gap at " + std::to_string(entry.start_s));
      }
      expected_start = entry.start_s + entry.duration_s;
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid video manifest: ") + e.what());
  }
  return m;
}

}  // namespace oneiros::narrative
