#include "oneiros/evaluate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "oneiros/error.hpp"

#ifndef ONEIROS_DATA_DIR
#define ONEIROS_DATA_DIR "data"
#endif

namespace oneiros::evaluate {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r\n") - first + 1);
}

double mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

}  // namespace

std::size_t LabelSet::find(const std::string& label) const {
  const std::string key = lower(label);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (lower(labels[i]) == key) return i;
  }
  return labels.size();
}

std::filesystem::path default_coco80_path() {
  if (const char* dir = std::getenv("ONEIROS_DATA_DIR")) return std::filesystem::path(dir) / "coco80.txt";
  return std::filesystem::path(ONEIROS_DATA_DIR) / "coco80.txt";
}

std::vector<std::string> load_coco80(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::string declared;
  std::vector<std::string> labels;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.starts_with("#")) {
      const auto pos = line.find("sha256 ");
      if (pos != std::string::npos) declared = trim(line.substr(pos + 7));
      continue;
    }
    if (trim(line).empty()) continue;
    labels.push_back(trim(line));
  }
  if (labels.size() != kCocoLabelCount) {
    throw ValidationError("label file " + path.string() + " holds " + std::to_string(labels.size()) +
                          " labels, expected 80");
  }
  std::string joined;
  for (std::size_t i = 0; i < labels.size(); ++i) joined += (i ? "\n" : "") + labels[i];
  if (declared.empty() || sha256_hex(joined) != declared) {
    throw ValidationError("label file " + path.string() + " fails its checksum");
  }
  return labels;
}

LabelSet build_label_set(const std::vector<std::string>& report_labels,
                         const std::vector<std::string>& coco80) {
  if (coco80.size() != kCocoLabelCount) {
    throw ValidationError("COCO label list must hold exactly 80 labels");
  }
  LabelSet set;
  for (const auto& label : coco80) {
    if (set.find(label) != set.size()) throw ValidationError("duplicate COCO label '" + label + "'");
    set.labels.push_back(label);
    set.sources.push_back(LabelSource::coco80);
  }
  for (const auto& raw : report_labels) {
    const std::string label = trim(raw);
    if (label.empty()) throw ValidationError("report label must be non-empty");
    if (set.find(label) != set.size()) continue;
    set.labels.push_back(label);
    set.sources.push_back(LabelSource::report);
  }
  return set;
}

std::string label_caption(const std::string& label) {
  if (label.empty()) throw ValidationError("label must be non-empty");
  return "a photo of " + label;
}

SimilarityMatrix similarity_matrix(const std::vector<backends::UnitVector>& image_vecs,
                                   const std::vector<backends::UnitVector>& text_vecs,
                                   double temperature, const LabelSet& labels) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (text_vecs.empty()) throw ValidationError("similarity needs at least one label vector");
  if (!labels.labels.empty() && labels.size() != text_vecs.size()) {
    throw ValidationError("label set size does not match text vector count");
  }
  const std::size_t dim = text_vecs.front().dim();
  for (const auto& v : text_vecs) {
    if (v.dim() != dim) throw ValidationError("dimension mismatch among text vectors");
  }
  for (const auto& v : image_vecs) {
    if (v.dim() != dim) {
      throw ValidationError("dimension mismatch: image vector dim " + std::to_string(v.dim()) +
                            ", text vector dim " + std::to_string(dim));
    }
  }
  SimilarityMatrix m;
  m.temperature = temperature;
  m.label_set = labels;
  m.scores = Matrix(image_vecs.size(), text_vecs.size());
  std::vector<double> logits(text_vecs.size());
  for (std::size_t i = 0; i < image_vecs.size(); ++i) {
    for (std::size_t j = 0; j < text_vecs.size(); ++j) {
      logits[j] = temperature * backends::dot(image_vecs[i], text_vecs[j]);
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& l : logits) {
      l = std::exp(l - peak);
      total += l;
    }
    for (std::size_t j = 0; j < logits.size(); ++j) m.scores(i, j) = logits[j] / total;
  }
  return m;
}

SimilarityMatrix score_sequence(const decode::SnapshotSequence& sequence, const LabelSet& labels,
                                const backends::Embedder& embedder, double temperature) {
  std::vector<backends::UnitVector> texts;
  texts.reserve(labels.size());
  for (const auto& label : labels.labels) texts.push_back(embedder.embed_text(label_caption(label)));
  std::vector<backends::UnitVector> images;
  for (const auto& snap : sequence.snapshots) {
    if (!snap.is_gap()) images.push_back(embedder.embed_image(*snap.image));
  }
  SimilarityMatrix m = similarity_matrix(images, texts, temperature, labels);
  m.source_id = sequence.subject_id;
  return m;
}

std::vector<double> label_score_series(const SimilarityMatrix& m, const std::string& label) {
  const std::size_t j = m.label_set.find(label);
  if (j == m.label_set.size()) throw ValidationError("label '" + label + "' is not in the label set");
  return m.scores.column(j);
}

ComparisonReport compare_pos_neg(const SimilarityMatrix& pos, const std::vector<SimilarityMatrix>& negs,
                                 const std::string& label) {
  if (negs.empty()) throw ValidationError("comparison needs at least one negative matrix");
  ComparisonReport report;
  const std::vector<double> pos_scores = label_score_series(pos, label);
  report.label = pos.label_set.labels[pos.label_set.find(label)];
  std::vector<double> neg_scores;
  for (const auto& m : negs) {
    const auto scores = label_score_series(m, label);
    report.negatives.push_back({m.source_id, scores.size(), mean(scores)});
    neg_scores.insert(neg_scores.end(), scores.begin(), scores.end());
  }
  if (pos_scores.empty() || neg_scores.empty()) {
    throw ValidationError("comparison needs at least one positive and one negative score");
  }
  report.mean_pos = mean(pos_scores);
  report.mean_neg = mean(neg_scores);
  report.diff = report.mean_pos - report.mean_neg;
  report.test = mann_whitney_u(pos_scores, neg_scores);
  return report;
}

json to_json(const ComparisonReport& r) {
  json negatives = json::array();
  for (const auto& n : r.negatives) negatives.push_back({{"source_id", n.source_id}, {"n", n.n}, {"mean", n.mean}});
  json j{{"label", r.label},
         {"mean_pos", r.mean_pos},
         {"mean_neg", r.mean_neg},
         {"diff", r.diff},
         {"u", r.test.u1},
         {"u2", r.test.u2},
         {"p_two_sided", r.test.p_two_sided},
         {"method", to_string(r.test.method)},
         {"degenerate", r.test.degenerate},
         {"n_pos", r.test.n1},
         {"n_neg", r.test.n2},
         {"negatives", std::move(negatives)}};
  if (r.test.method == UMethod::normal_tie_corrected) j["z"] = r.test.z;
  return j;
}

ComparisonReport report_from_json(const json& j) {
  ComparisonReport r;
  try {
    r.label = j.at("label").get<std::string>();
    r.mean_pos = j.at("mean_pos").get<double>();
    r.mean_neg = j.at("mean_neg").get<double>();
    r.diff = j.at("diff").get<double>();
    r.test.u1 = j.at("u").get<double>();
    r.test.u2 = j.value("u2", 0.0);
    r.test.p_two_sided = j.at("p_two_sided").get<double>();
    r.test.method = parse_umethod(j.at("method").get<std::string>());
    r.test.degenerate = j.value("degenerate", false);
    r.test.n1 = j.at("n_pos").get<std::size_t>();
    r.test.n2 = j.at("n_neg").get<std::size_t>();
    r.test.z = j.value("z", 0.0);
    for (const auto& n : j.value("negatives", json::array())) {
      r.negatives.push_back({n.at("source_id").get<std::string>(), n.at("n").get<std::size_t>(),
                             n.at("mean").get<double>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid comparison report: ") + e.what());
  }
  return r;
}

std::string render_table(const std::vector<ComparisonReport>& reports) {
  std::vector<std::string> top{"Dream Label"};
  std::vector<std::string> bottom{"p-value"};
  for (const auto& r : reports) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", r.test.p_two_sided);
    top.push_back(r.label);
    bottom.emplace_back(buf);
  }
  std::string a;
  std::string b;
  for (std::size_t i = 0; i < top.size(); ++i) {
    const std::size_t w = std::max(top[i].size(), bottom[i].size());
    if (i) {
      a += " | ";
      b += " | ";
    }
    a += top[i] + std::string(w - top[i].size(), ' ');
    b += bottom[i] + std::string(w - bottom[i].size(), ' ');
  }
  auto rstrip = [](std::string s) {
    s.erase(s.find_last_not_of(' ') + 1);
    return s;
  };
  return rstrip(a) + "\n" + rstrip(b) + "\n";
}

std::string label_slug(const std::string& label) {
  std::string out;
  for (unsigned char c : label) {
    out.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_');
  }
  return out.empty() ? "label" : out;
}

std::vector<ComparisonReport> evaluate_subjects(const std::vector<SubjectInput>& subjects,
                                                const std::vector<std::string>& coco80,
                                                const backends::Embedder& embedder, double temperature,
                                                std::vector<SimilarityMatrix>* matrices) {
  if (subjects.size() < 2) throw ValidationError("comparison needs at least two subjects");
  std::vector<std::string> report_labels;
  for (const auto& s : subjects) {
    report_labels.insert(report_labels.end(), s.report_labels.begin(), s.report_labels.end());
  }
  const LabelSet labels = build_label_set(report_labels, coco80);
  std::vector<SimilarityMatrix> scored;
  scored.reserve(subjects.size());
  for (const auto& s : subjects) scored.push_back(score_sequence(s.sequence, labels, embedder, temperature));

  std::vector<ComparisonReport> reports;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    std::vector<SimilarityMatrix> negs;
    for (std::size_t k = 0; k < subjects.size(); ++k) {
      if (k != i) negs.push_back(scored[k]);
    }
    for (const auto& label : subjects[i].report_labels) {
      reports.push_back(compare_pos_neg(scored[i], negs, label));
    }
  }
  if (matrices) *matrices = std::move(scored);
  return reports;
}

}  // namespace oneiros::evaluate
