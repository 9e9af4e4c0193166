#include "oneiros/fmri_ingest.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>

#include "oneiros/digest.hpp"
#include "oneiros/error.hpp"

namespace oneiros::ingest {

namespace {

void check_finite(const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw ValidationError("non-finite value at frame " + std::to_string(r) + ", vertex " +
                              std::to_string(c));
      }
    }
  }
}

struct Sidecar {
  std::size_t frames = 0;
  std::size_t vertices = 0;
  double sampling_hz = 0.0;
  std::string subject_id;
  std::string session_id;
  std::string dtype = "f32";
  json raw;
};

Sidecar read_sidecar(const std::filesystem::path& payload) {
  const auto path = sidecar_path(payload);
  if (!std::filesystem::exists(path)) {
    throw ValidationError("missing sidecar: " + path.string());
  }
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("malformed sidecar " + path.string() + ": " + e.what());
  }
  Sidecar s;
  try {
    s.frames = j.at("frames").get<std::size_t>();
    s.vertices = j.at("vertices").get<std::size_t>();
    s.sampling_hz = j.at("sampling_hz").get<double>();
    s.subject_id = j.at("subject_id").get<std::string>();
    s.session_id = j.at("session_id").get<std::string>();
    s.dtype = j.value("dtype", std::string("f32"));
    if (j.value("order", std::string("row-major")) != "row-major") {
      throw ValidationError("unsupported order in " + path.string());
    }
    if (j.value("endianness", std::string("little")) != "little") {
      throw ValidationError("unsupported endianness in " + path.string());
    }
  } catch (const json::exception& e) {
    throw ValidationError("invalid sidecar " + path.string() + ": " + e.what());
  }
  if (s.dtype != "f32" && s.dtype != "f64") {
    throw ValidationError("unsupported dtype '" + s.dtype + "' in " + path.string());
  }
  s.raw = std::move(j);
  return s;
}

json sidecar_json(const FmriSeries& series, const std::string& dtype) {
  return json{{"frames", series.frames()},
              {"vertices", series.vertices()},
              {"sampling_hz", series.sampling_hz()},
              {"subject_id", series.subject_id()},
              {"session_id", series.session_id()},
              {"dtype", dtype},
              {"order", "row-major"},
              {"endianness", "little"}};
}

Matrix read_binary(const std::filesystem::path& path, const Sidecar& meta) {
  const std::string bytes = read_file(path);
  const std::size_t width = meta.dtype == "f64" ? 8 : 4;
  const std::size_t expected = meta.frames * meta.vertices * width;
  if (bytes.size() != expected) {
    const std::size_t row_bytes = meta.vertices * width;
    std::ostringstream msg;
    msg << "dimension mismatch: sidecar declares " << meta.frames << " frames x " << meta.vertices
        << " vertices (" << expected << " bytes) but payload holds " << bytes.size() << " bytes";
    if (row_bytes > 0 && bytes.size() % row_bytes == 0) {
      msg << " (" << bytes.size() / row_bytes << " rows)";
    }
    throw ValidationError(msg.str());
  }
  std::vector<double> values(meta.frames * meta.vertices);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (width == 4) {
      std::uint32_t u = 0;
      for (int b = 3; b >= 0; --b) u = (u << 8) | p[i * 4 + b];
      values[i] = static_cast<double>(std::bit_cast<float>(u));
    } else {
      std::uint64_t u = 0;
      for (int b = 7; b >= 0; --b) u = (u << 8) | p[i * 8 + b];
      values[i] = std::bit_cast<double>(u);
    }
  }
  return Matrix(meta.frames, meta.vertices, std::move(values));
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

Matrix read_csv(const std::filesystem::path& path, const Sidecar& meta) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty CSV: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  if (header.size() != meta.vertices) {
    throw ValidationError("dimension mismatch: sidecar declares " + std::to_string(meta.vertices) +
                          " vertices but CSV header has " + std::to_string(header.size()));
  }
  std::vector<double> values;
  values.reserve(meta.frames * meta.vertices);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != meta.vertices) {
      throw ValidationError("dimension mismatch: CSV row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " columns, expected " +
                            std::to_string(meta.vertices));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      const auto& cell = cells[c];
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        // from_chars rejects "nan"/"inf" spellings with signs; strtod is the fallback.
        char* end = nullptr;
        v = std::strtod(cell.c_str(), &end);
        if (cell.empty() || end != cell.c_str() + cell.size()) {
          throw ValidationError("unparseable value at frame " + std::to_string(row) +
                                ", vertex " + std::to_string(c) + ": '" + cell + "'");
        }
      }
      values.push_back(v);
    }
    ++row;
  }
  if (row != meta.frames) {
    throw ValidationError("dimension mismatch: sidecar declares " + std::to_string(meta.frames) +
                          " frames but CSV holds " + std::to_string(row));
  }
  return Matrix(meta.frames, meta.vertices, std::move(values));
}

}  // namespace

FmriSeries::FmriSeries(Matrix data, double sampling_hz, std::string subject_id,
                       std::string session_id, std::vector<std::string> regions)
    : data_(std::move(data)),
      sampling_hz_(sampling_hz),
      subject_id_(std::move(subject_id)),
      session_id_(std::move(session_id)),
      regions_(std::move(regions)) {
  if (data_.rows() < 1 || data_.cols() < 1) {
    throw ValidationError("series needs at least one frame and one vertex");
  }
  if (!(sampling_hz_ > 0.0) || !std::isfinite(sampling_hz_)) {
    throw ValidationError("sampling_hz must be positive");
  }
  check_finite(data_);
}

double FmriSeries::frame_time(std::size_t i) const noexcept {
  return static_cast<double>(i + time_offset_frames_) / sampling_hz_;
}

std::vector<double> FmriSeries::frame_times() const {
  std::vector<double> out(frames());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = frame_time(i);
  return out;
}

FmriSeries FmriSeries::with_data(Matrix data) const {
  FmriSeries out(std::move(data), sampling_hz_, subject_id_, session_id_, regions_);
  out.time_offset_frames_ = time_offset_frames_;
  return out;
}

FmriSeries FmriSeries::with_regions(std::vector<std::string> regions) const {
  FmriSeries out = *this;
  out.regions_ = std::move(regions);
  return out;
}

FmriSeries FmriSeries::slice_frames(std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > frames()) {
    throw ValidationError("frame slice [" + std::to_string(first) + ", " +
                          std::to_string(first + count) + ") outside series of " +
                          std::to_string(frames()) + " frames");
  }
  std::vector<double> values(data_.data().begin() + static_cast<std::ptrdiff_t>(first * vertices()),
                             data_.data().begin() +
                                 static_cast<std::ptrdiff_t>((first + count) * vertices()));
  FmriSeries out = with_data(Matrix(count, vertices(), std::move(values)));
  out.time_offset_frames_ = time_offset_frames_ + first;
  return out;
}

RoiAtlas::RoiAtlas(std::map<std::string, std::vector<std::size_t>> regions)
    : regions_(std::move(regions)) {
  for (const auto& [name, indices] : regions_) {
    for (std::size_t i = 1; i < indices.size(); ++i) {
      if (indices[i] <= indices[i - 1]) {
        throw ValidationError("region '" + name +
                              "' indices must be strictly increasing and duplicate-free");
      }
    }
  }
}

const std::vector<std::string>& visual_cortex_regions() {
  static const std::vector<std::string> kRegions = {
      "V1",  "V2",  "V3",  "V3A", "V3B", "V3CD", "V4",   "LO1",  "LO2",  "LO3",
      "PIT", "V4t", "V6",  "V6A", "V7",  "V8",   "PH",   "FFC",  "IP0",  "MT",
      "MST", "FST", "VVC", "VMV1", "VMV2", "VMV3", "PHA1", "PHA2", "PHA3"};
  return kRegions;
}

std::filesystem::path sidecar_path(const std::filesystem::path& payload) {
  return std::filesystem::path(payload.string() + ".json");
}

FmriSeries load_series(const std::filesystem::path& path, Format format) {
  if (!std::filesystem::exists(path)) throw ValidationError("missing series: " + path.string());
  const Sidecar meta = read_sidecar(path);
  Matrix data = format == Format::binary ? read_binary(path, meta) : read_csv(path, meta);
  return FmriSeries(std::move(data), meta.sampling_hz, meta.subject_id, meta.session_id);
}

void save_series(const FmriSeries& series, const std::filesystem::path& path, Format format,
                 const std::string& dtype) {
  if (dtype != "f32" && dtype != "f64") throw ValidationError("unsupported dtype " + dtype);
  const auto& m = series.data();
  std::string payload;
  if (format == Format::binary) {
    const std::size_t width = dtype == "f64" ? 8 : 4;
    payload.resize(m.data().size() * width);
    auto* out = reinterpret_cast<unsigned char*>(payload.data());
    for (std::size_t i = 0; i < m.data().size(); ++i) {
      if (width == 4) {
        auto u = std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i]));
        for (int b = 0; b < 4; ++b, u >>= 8) out[i * 4 + b] = static_cast<unsigned char>(u & 0xff);
      } else {
        auto u = std::bit_cast<std::uint64_t>(m.data()[i]);
        for (int b = 0; b < 8; ++b, u >>= 8) out[i * 8 + b] = static_cast<unsigned char>(u & 0xff);
      }
    }
  } else {
    std::string text;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) text += ',';
      text += "v" + std::to_string(c);
    }
    text += '\n';
    char buf[32];
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) {
        if (c) text += ',';
        const auto res = std::to_chars(buf, buf + sizeof buf, m(r, c));
        text.append(buf, res.ptr);
      }
      text += '\n';
    }
    payload = std::move(text);
  }
  write_file(path, payload);
  write_file(sidecar_path(path), sidecar_json(series, format == Format::csv ? "f64" : dtype).dump(2) + "\n");
}

RoiAtlas load_atlas(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("malformed atlas " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("atlas must be a JSON object: " + path.string());
  std::map<std::string, std::vector<std::size_t>> regions;
  for (const auto& [name, indices] : j.items()) {
    if (!indices.is_array()) throw ValidationError("atlas region '" + name + "' is not a list");
    std::vector<std::size_t> out;
    for (const auto& v : indices) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ValidationError("atlas region '" + name + "' has a negative or non-integer index");
      }
      out.push_back(v.get<std::size_t>());
    }
    regions.emplace(name, std::move(out));
  }
  return RoiAtlas(std::move(regions));
}

FmriSeries zscore_session(const FmriSeries& series, double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  const Matrix& x = series.data();
  const std::size_t frames = x.rows();
  Matrix out(frames, x.cols());
  for (std::size_t v = 0; v < x.cols(); ++v) {
    double mean = 0.0;
    for (std::size_t t = 0; t < frames; ++t) mean += x(t, v);
    mean /= static_cast<double>(frames);
    double ss = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      const double d = x(t, v) - mean;
      ss += d * d;
    }
    const double sd = std::max(std::sqrt(ss / static_cast<double>(frames)), epsilon);
    for (std::size_t t = 0; t < frames; ++t) out(t, v) = (x(t, v) - mean) / sd;
  }
  return series.with_data(std::move(out));
}

FmriSeries apply_roi(const FmriSeries& series, const RoiAtlas& atlas,
                     const std::vector<std::string>& region_names) {
  if (!series.regions().empty()) {
    // Column indices of a restricted series no longer match the atlas.
    const std::set<std::string> have(series.regions().begin(), series.regions().end());
    const std::set<std::string> want(region_names.begin(), region_names.end());
    if (have == want) return series;
    throw ValidationError("series is already restricted to a different region set");
  }
  std::vector<std::string> unknown;
  std::set<std::size_t> columns;
  for (const auto& name : region_names) {
    const auto it = atlas.regions().find(name);
    if (it == atlas.regions().end()) {
      unknown.push_back(name);
      continue;
    }
    columns.insert(it->second.begin(), it->second.end());
  }
  if (!unknown.empty()) {
    std::string msg = "unknown region(s):";
    for (const auto& n : unknown) msg += " " + n;
    throw ValidationError(msg);
  }
  if (!columns.empty() && *columns.rbegin() >= series.vertices()) {
    throw ValidationError("vertex index " + std::to_string(*columns.rbegin()) +
                          " out of range for series with " + std::to_string(series.vertices()) +
                          " vertices");
  }
  if (columns.empty()) throw ValidationError("requested regions select no vertices");

  const Matrix& x = series.data();
  Matrix out(x.rows(), columns.size());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    std::size_t k = 0;
    for (const auto c : columns) out(t, k++) = x(t, c);
  }
  // Re-applying regions already selected keeps provenance unchanged.
  std::vector<std::string> provenance = series.regions();
  for (const auto& name : region_names) {
    if (std::find(provenance.begin(), provenance.end(), name) == provenance.end()) {
      provenance.push_back(name);
    }
  }
  return series.with_data(std::move(out)).with_regions(std::move(provenance));
}

WindowedSeries window_average(const FmriSeries& series, std::size_t window_frames,
                              std::size_t stride_frames) {
  if (window_frames < 1 || stride_frames < 1) {
    throw ValidationError("window and stride must be at least 1 frame");
  }
  WindowedSeries out;
  out.window_frames = window_frames;
  out.stride_frames = stride_frames;
  out.sampling_hz = series.sampling_hz();
  out.subject_id = series.subject_id();
  out.session_id = series.session_id();
  out.regions = series.regions();

  const std::size_t frames = series.frames();
  const std::size_t windows =
      frames >= window_frames ? (frames - window_frames) / stride_frames + 1 : 0;
  const Matrix& x = series.data();
  out.data = Matrix(windows, x.cols());
  out.spans.reserve(windows);
  const double period = 1.0 / series.sampling_hz();
  for (std::size_t w = 0; w < windows; ++w) {
    const std::size_t first = w * stride_frames;
    for (std::size_t v = 0; v < x.cols(); ++v) {
      double acc = 0.0;
      for (std::size_t t = first; t < first + window_frames; ++t) acc += x(t, v);
      out.data(w, v) = acc / static_cast<double>(window_frames);
    }
    const double start = series.frame_time(first);
    const double last = series.frame_time(first + window_frames - 1);
    out.spans.push_back({start, last + period});
  }
  return out;
}

void save_windowed(const WindowedSeries& windowed, const std::filesystem::path& path) {
  std::string payload(windowed.data.data().size() * 8, '\0');
  auto* out = reinterpret_cast<unsigned char*>(payload.data());
  for (std::size_t i = 0; i < windowed.data.data().size(); ++i) {
    auto u = std::bit_cast<std::uint64_t>(windowed.data.data()[i]);
    for (int b = 0; b < 8; ++b, u >>= 8) out[i * 8 + b] = static_cast<unsigned char>(u & 0xff);
  }
  json spans = json::array();
  for (const auto& s : windowed.spans) spans.push_back({s.start_s, s.end_s});
  const json meta{{"frames", windowed.data.rows()},
                  {"vertices", windowed.data.cols()},
                  {"sampling_hz", windowed.sampling_hz},
                  {"subject_id", windowed.subject_id},
                  {"session_id", windowed.session_id},
                  {"dtype", "f64"},
                  {"order", "row-major"},
                  {"endianness", "little"},
                  {"window_frames", windowed.window_frames},
                  {"stride_frames", windowed.stride_frames},
                  {"window_spans", spans},
                  {"regions", windowed.regions}};
  write_file(path, payload);
  write_file(sidecar_path(path), meta.dump(2) + "\n");
}

WindowedSeries load_windowed(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("missing windowed series: " + path.string());
  const Sidecar meta = read_sidecar(path);
  WindowedSeries out;
  try {
    out.window_frames = meta.raw.at("window_frames").get<std::size_t>();
    out.stride_frames = meta.raw.at("stride_frames").get<std::size_t>();
    for (const auto& s : meta.raw.at("window_spans")) {
      out.spans.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    }
    out.regions = meta.raw.value("regions", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ValidationError("invalid windowed sidecar for " + path.string() + ": " + e.what());
  }
  if (out.spans.size() != meta.frames) {
    throw ValidationError("dimension mismatch: " + std::to_string(out.spans.size()) +
                          " window spans for " + std::to_string(meta.frames) + " windows");
  }
  out.sampling_hz = meta.sampling_hz;
  out.subject_id = meta.subject_id;
  out.session_id = meta.session_id;
  out.data = meta.frames == 0 ? Matrix(0, meta.vertices) : read_binary(path, meta);
  check_finite(out.data);
  return out;
}

}  // namespace oneiros::ingest
