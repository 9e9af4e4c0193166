#include <doctest.h>

#include <set>

#include "oneiros/narrative.hpp"
#include "support.hpp"

using namespace oneiros;
using namespace oneiros::narrative;

namespace {

std::vector<ShotCaption> captions_of(const std::vector<std::string>& texts) {
  std::vector<ShotCaption> out;
  for (std::size_t k = 0; k < texts.size(); ++k) out.emplace_back(k + 1, texts[k]);
  return out;
}

std::string fenced(const json& j) { return "```json\n" + j.dump(2) + "\n```\n"; }

json script_json(std::size_t shots) {
  json lines = json::array();
  for (std::size_t k = 1; k <= shots; ++k) lines.push_back({{"index", k}, {"script_line", "line " + std::to_string(k)}});
  return {{"title", "T"}, {"subjective_description", "D"}, {"shots", lines}, {"closing", "C"}, {"audio_track", "A"}};
}

ParseError::Kind kind_of(const std::string& raw, std::size_t expected) {
  try {
    parse_script(raw, expected);
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("expected a ParseError");
  return ParseError::Kind::no_block;
}

decode::SnapshotSequence sequence_of(std::size_t n, std::vector<std::size_t> gaps = {}) {
  decode::SnapshotSequence seq;
  seq.subject_id = "sub-01";
  seq.session_id = "night-1";
  for (std::size_t k = 1; k <= n; ++k) {
    decode::DreamSnapshot s;
    s.index = k;
    s.span = {3.2 * (k - 1), 3.2 * k};
    if (std::find(gaps.begin(), gaps.end(), k) == gaps.end()) {
      backends::ImageRef img;
      img.id = "img" + std::to_string(k);
      img.uri = "mock://image/img" + std::to_string(k);
      img.payload = {1.0, 2.0};
      s.image = img;
      s.latent = backends::LatentVector({1.0, 2.0});
    } else {
      s.gap_reason = "down";
    }
    seq.snapshots.push_back(s);
  }
  return seq;
}

}  // namespace

TEST_CASE("shot captions are single line and non-empty") {
  CHECK(ShotCaption(1, "  a cat\non a\r\nmat ").caption == "a cat on a mat");
  CHECK_THROWS_AS(ShotCaption(1, " \n "), ValidationError);
}

TEST_CASE("caption prompt lines") {
  CHECK(build_caption_prompt(captions_of({"a cat"})) == "Image 1: a cat");
  CHECK(build_caption_prompt(captions_of({"a", "b"})) == "Image 1: a\nImage 2: b");
  try {
    build_caption_prompt({ShotCaption(1, "a"), ShotCaption(3, "c")});
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("non-contiguous") != std::string::npos);
  }
  CHECK_THROWS_AS(build_caption_prompt({}), ValidationError);
}

TEST_CASE("caption prompt is injective on single-line lists") {
  const std::vector<std::vector<std::string>> lists = {
      {"a"}, {"a", "b"}, {"a b"}, {"ab"}, {"b", "a"}, {"a", "b", "c"}, {"a", "b c"}, {"a b", "c"}};
  std::set<std::string> prompts;
  for (const auto& l : lists) prompts.insert(build_caption_prompt(captions_of(l)));
  CHECK(prompts.size() == lists.size());
}

TEST_CASE("prompts match the frozen golden files") {
  const auto caps = captions_of({"a cat sitting on a sofa", "people running on a beach"});
  const auto caption_prompt = build_caption_prompt(caps);
  CHECK(caption_prompt == read_file(testing::golden("caption_prompt_2shot.txt")));
  const auto task = build_task_prompt(caption_prompt);
  CHECK(task == read_file(testing::golden("task_prompt_2shot.txt")));
}

TEST_CASE("task prompt content") {
  const auto task = build_task_prompt("Image 1: x");
  CHECK(task.find("I have a collection of photos and videos, with a fixed order.") == 0);
  CHECK(task.find("Provide a subjective description of my dream from my perspective") != std::string::npos);
  CHECK(task.find("(2) Write a script according to the input material sequence.") != std::string::npos);
  CHECK(task.ends_with("Image 1: x"));
  // The mock composer must see only the real caption lines.
  std::size_t image_lines = 0;
  std::istringstream in(task);
  for (std::string line; std::getline(in, line);) image_lines += line.starts_with("Image ") ? 1 : 0;
  CHECK(image_lines == 1);
}

TEST_CASE("parse_script happy path with decoy prose") {
  const std::string raw = "Sure! Here is {a decoy} and {\"title\": \"wrong\"}.\n" + fenced(script_json(3)) +
                          "Trailing {braces} too.";
  const auto s = parse_script(raw, 3);
  CHECK(s.title == "T");
  CHECK(s.shots.size() == 3);
  CHECK(s.shots[2].script_line == "line 3");
  CHECK(s.audio_track == "A");
}

TEST_CASE("parse_script prefers the json-tagged block") {
  const std::string raw = "```text\n{\"not\": 1}\n```\n" + fenced(script_json(1));
  CHECK(parse_script(raw, 1).title == "T");
  const std::string untagged = "```\n" + script_json(2).dump() + "\n```\n";
  CHECK(parse_script(untagged, 2).shots.size() == 2);
}

TEST_CASE("parse_script errors") {
  CHECK(kind_of("no block at all {\"title\": 1}", 1) == ParseError::Kind::no_block);
  CHECK(kind_of("```json\n{oops\n```\n", 1) == ParseError::Kind::invalid_json);
  try {
    parse_script(fenced(script_json(2)), 3);
    FAIL("expected a count error");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::count);
    CHECK(e.found() == 2);
    CHECK(e.expected() == 3);
  }
  auto missing = script_json(1);
  missing.erase("closing");
  CHECK(kind_of(fenced(missing), 1) == ParseError::Kind::key);
  auto empty = script_json(1);
  empty["title"] = "";
  CHECK(kind_of(fenced(empty), 1) == ParseError::Kind::key);
  auto skipped = script_json(2);
  skipped["shots"][1]["index"] = 3;
  CHECK(kind_of(fenced(skipped), 2) == ParseError::Kind::index);
}

TEST_CASE("mock composer output parses for 1..50 shots") {
  const backends::MockComposer composer;
  for (std::size_t n = 1; n <= 50; ++n) {
    std::vector<std::string> texts;
    for (std::size_t k = 1; k <= n; ++k) texts.push_back("thing " + std::to_string(k * 7 % 13));
    const auto caps = captions_of(texts);
    const auto raw = composer.compose_narrative(build_task_prompt(build_caption_prompt(caps)));
    const auto s = parse_script(raw, n);
    REQUIRE(s.shots.size() == n);
    CHECK(s.shots.back().script_line.find(texts.back()) != std::string::npos);
    CHECK(!s.title.empty());
    CHECK(script_from_json(to_json(s), n) == s);
  }
}

namespace {

/// Answers badly first, then delegates to the mock.
class RepairingComposer final : public backends::NarrativeComposer {
 public:
  explicit RepairingComposer(int bad_replies) : bad_(bad_replies) {}
  std::string compose_narrative(const std::string& prompt) const override {
    if (calls_++ < bad_) return "I refuse to use code fences.";
    return backends::MockComposer{}.compose_narrative(prompt);
  }
  mutable int calls_ = 0;

 private:
  int bad_;
};

}  // namespace

TEST_CASE("compose_script repairs once") {
  const auto caps = captions_of({"a", "b"});
  RepairingComposer once(1);
  const auto comp = compose_script(once, caps, 1);
  CHECK(comp.script.shots.size() == 2);
  REQUIRE(comp.prompts.size() == 2);
  CHECK(comp.prompts[1].find("Your previous reply was not valid") != std::string::npos);
  CHECK(comp.prompts[1].starts_with(comp.prompts[0]));

  RepairingComposer twice(2);
  CHECK_THROWS_AS(compose_script(twice, caps, 1), ParseError);
  CHECK(twice.calls_ == 2);
  RepairingComposer no_retry(1);
  CHECK_THROWS_AS(compose_script(no_retry, caps, 0), ParseError);
}

TEST_CASE("caption_snapshots numbers decoded snapshots from 1") {
  const auto caps = caption_snapshots(sequence_of(4, {2}), backends::MockCaptioner{});
  REQUIRE(caps.size() == 3);
  CHECK(caps[2].index == 3);
}

TEST_CASE("manifest layout") {
  const auto seq = sequence_of(2);
  const auto script = parse_script(fenced(script_json(2)), 2);
  const auto m = assemble_manifest(seq, script, 3.0);
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].start_s == 0.0);
  CHECK(m.entries[1].start_s == 3.0);
  CHECK(m.entries[1].duration_s == 3.0);
  CHECK(m.entries[1].subtitle == "line 2");
  CHECK(m.entries[1].image.id == "img2");
  CHECK(m.entries[1].image.payload.empty());
  CHECK(m.title == "T");

  const auto one = assemble_manifest(sequence_of(1), parse_script(fenced(script_json(1)), 1));
  CHECK(one.total_duration_s() == 3.0);

  CHECK_THROWS_AS(assemble_manifest(seq, script, 0.0), ValidationError);
  CHECK_THROWS_AS(assemble_manifest(sequence_of(3), script), ValidationError);
}

TEST_CASE("manifest skips gaps and keeps snapshot indices") {
  const auto m = assemble_manifest(sequence_of(3, {2}), parse_script(fenced(script_json(2)), 2), 2.5);
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[1].snapshot_index == 3);
  CHECK(m.entries[1].start_s == 2.5);
}

TEST_CASE("manifest canonical serialization round trips byte for byte") {
  const auto m = assemble_manifest(sequence_of(7), parse_script(fenced(script_json(7)), 7), 1.0 / 3.0);
  const std::string first = canonical_dump(to_json(m));
  const auto back = manifest_from_json(json::parse(first));
  const std::string second = canonical_dump(to_json(back));
  CHECK(first == second);
  CHECK(first.find("0.333333") != std::string::npos);
  CHECK(first.find("\"audio_track\"") < first.find("\"closing\""));

  auto overlapping = json::parse(first);
  overlapping["entries"][1]["start_s"] = 0.1;
  CHECK_THROWS_AS(manifest_from_json(overlapping), ValidationError);
}

TEST_CASE("manifest round trip over awkward durations") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.next() % 40;
    const double d = 0.01 + rng.uniform() * 97.0;
    const auto m = assemble_manifest(sequence_of(n), parse_script(fenced(script_json(n)), n), d);
    const std::string first = canonical_dump(to_json(m));
    REQUIRE(canonical_dump(to_json(manifest_from_json(json::parse(first)))) == first);
  }
}
