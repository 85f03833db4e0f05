#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "tmag/config.hpp"
#include "tmag/engine.hpp"
#include "tmag/error.hpp"
#include "tmag/model.hpp"
#include "tmag/pipeline.hpp"
#include "tmag/recording.hpp"

namespace tmag {

using json = nlohmann::json;

// ---------------------------------------------------------------- config

NLOHMANN_JSON_SERIALIZE_ENUM(Carrier, {{Carrier::Gaussian, "gaussian"}, {Carrier::Rademacher, "rademacher"}})

namespace detail {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

}  // namespace detail

inline json config_to_json(const SessionConfig& c) {
  json gestures = json::array();
  for (const auto& g : c.gestures) gestures.push_back({{"id", g.id}, {"name", g.name}});
  return {{"fs", c.fs},
          {"channels", c.channels},
          {"cutoff_hz", c.cutoff_hz},
          {"window", c.window},
          {"hop", c.hop},
          {"refractory", c.refractory},
          {"extraction_width", c.extraction_width},
          {"threshold_multiplier", c.threshold_multiplier},
          {"gestures", gestures},
          {"seed", c.seed},
          {"suppression", c.suppression},
          {"cnn",
           {{"conv1_filters", c.cnn.conv1_filters},
            {"conv2_filters", c.cnn.conv2_filters},
            {"kernel", c.cnn.kernel},
            {"pool", c.cnn.pool},
            {"fc1_units", c.cnn.fc1_units},
            {"fc2_units", c.cnn.fc2_units},
            {"batch_size", c.cnn.batch_size},
            {"learning_rate", c.cnn.learning_rate},
            {"epochs", c.cnn.epochs}}},
          {"synth",
           {{"snr_db", c.synth.snr_db},
            {"noise_floor", c.synth.noise_floor},
            {"rise_s", c.synth.rise_s},
            {"hold_s", c.synth.hold_s},
            {"fall_s", c.synth.fall_s},
            {"rest_s", c.synth.rest_s},
            {"lead_s", c.synth.lead_s},
            {"repetitions", c.synth.repetitions},
            {"calibration_repetitions", c.synth.calibration_repetitions},
            {"evaluation_gestures", c.synth.evaluation_gestures},
            {"separation", c.synth.separation},
            {"band_limit", c.synth.band_limit},
            {"carrier", c.synth.carrier}}}};
}

/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
inline SessionConfig config_from_json(const json& j, SessionConfig base = {}) {
  using detail::read_key;
  detail::reject_unknown(j,
                         {"fs", "channels", "cutoff_hz", "window", "hop", "refractory", "extraction_width",
                          "threshold_multiplier", "gestures", "seed", "suppression", "cnn", "synth"},
                         "");
  read_key(j, "fs", base.fs);
  read_key(j, "channels", base.channels);
  read_key(j, "cutoff_hz", base.cutoff_hz);
  read_key(j, "window", base.window);
  read_key(j, "hop", base.hop);
  read_key(j, "refractory", base.refractory);
  read_key(j, "extraction_width", base.extraction_width);
  read_key(j, "threshold_multiplier", base.threshold_multiplier);
  read_key(j, "seed", base.seed);
  read_key(j, "suppression", base.suppression);
  if (auto it = j.find("gestures"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("config key 'gestures' must be an array");
    base.gestures.clear();
    for (const auto& g : *it) {
      detail::reject_unknown(g, {"id", "name"}, "gestures.");
      GestureLabel label;
      read_key(g, "id", label.id);
      read_key(g, "name", label.name);
      if (label.name.empty()) label.name = "gesture_" + std::to_string(label.id);
      base.gestures.push_back(std::move(label));
    }
  }
  if (auto it = j.find("cnn"); it != j.end()) {
    const json& c = *it;
    detail::reject_unknown(c,
                           {"conv1_filters", "conv2_filters", "kernel", "pool", "fc1_units", "fc2_units", "batch_size",
                            "learning_rate", "epochs"},
                           "cnn.");
    read_key(c, "conv1_filters", base.cnn.conv1_filters);
    read_key(c, "conv2_filters", base.cnn.conv2_filters);
    read_key(c, "kernel", base.cnn.kernel);
    read_key(c, "pool", base.cnn.pool);
    read_key(c, "fc1_units", base.cnn.fc1_units);
    read_key(c, "fc2_units", base.cnn.fc2_units);
    read_key(c, "batch_size", base.cnn.batch_size);
    read_key(c, "learning_rate", base.cnn.learning_rate);
    read_key(c, "epochs", base.cnn.epochs);
  }
  if (auto it = j.find("synth"); it != j.end()) {
    const json& s = *it;
    detail::reject_unknown(s,
                           {"snr_db", "noise_floor", "rise_s", "hold_s", "fall_s", "rest_s", "lead_s", "repetitions",
                            "calibration_repetitions", "evaluation_gestures", "separation", "band_limit", "carrier"},
                           "synth.");
    read_key(s, "snr_db", base.synth.snr_db);
    read_key(s, "noise_floor", base.synth.noise_floor);
    read_key(s, "rise_s", base.synth.rise_s);
    read_key(s, "hold_s", base.synth.hold_s);
    read_key(s, "fall_s", base.synth.fall_s);
    read_key(s, "rest_s", base.synth.rest_s);
    read_key(s, "lead_s", base.synth.lead_s);
    read_key(s, "repetitions", base.synth.repetitions);
    read_key(s, "calibration_repetitions", base.synth.calibration_repetitions);
    read_key(s, "evaluation_gestures", base.synth.evaluation_gestures);
    read_key(s, "separation", base.synth.separation);
    read_key(s, "band_limit", base.synth.band_limit);
    read_key(s, "carrier", base.synth.carrier);
    if (s.contains("carrier") && !s["carrier"].is_string())
      throw ConfigError("config key 'synth.carrier' must be \"gaussian\" or \"rademacher\"");
    if (s.contains("carrier") && s["carrier"] != "gaussian" && s["carrier"] != "rademacher")
      throw ConfigError("config key 'synth.carrier' must be \"gaussian\" or \"rademacher\"");
  }
  base.validate();
  return base;
}

inline SessionConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------- recordings

namespace detail {

/// Shortest decimal that parses back to the same double.
inline void append_double(std::string& out, double v) {
  std::array<char, 32> buf;
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), end);
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

template <typename T>
T parse_field(std::string_view f, std::size_t line_no, const char* what) {
  T v{};
  const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc{} || p != f.data() + f.size() || f.empty())
    throw ParseError(std::string("bad ") + what + " '" + std::string(f) + "'", line_no);
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(v)) throw ParseError(std::string("non-finite ") + what + " '" + std::string(f) + "'", line_no);
  return v;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

}  // namespace detail

inline void write_samples_csv(std::ostream& out, const Recording& rec) {
  std::string line = "t";
  for (std::size_t c = 0; c < rec.channels; ++c) line += ",ch" + std::to_string(c);
  out << line << '\n';
  for (const auto& s : rec.samples) {
    line = std::to_string(s.t);
    for (double v : s.channels) {
      line += ',';
      detail::append_double(line, v);
    }
    out << line << '\n';
  }
}

/// Reads "t,ch0,...". The channel count comes from the header; when
/// `expected_channels` is given, any row with a different count is an error.
inline Recording read_samples_csv(std::istream& in, double fs, std::optional<std::size_t> expected_channels = {}) {
  Recording rec;
  rec.fs = fs;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  ++line_no;
  const auto header = detail::split_csv(line);
  if (header.empty() || header[0] != "t") throw ParseError("header must start with 't'", line_no);
  for (std::size_t c = 1; c < header.size(); ++c)
    if (header[c] != "ch" + std::to_string(c - 1)) throw ParseError("unexpected column '" + std::string(header[c]) + "'", line_no);
  rec.channels = header.size() - 1;
  if (expected_channels && *expected_channels != rec.channels)
    throw ParseError("header has " + std::to_string(rec.channels) + " channels, expected " +
                         std::to_string(*expected_channels),
                     line_no);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != rec.channels + 1)
      throw ParseError("expected " + std::to_string(rec.channels + 1) + " columns, got " + std::to_string(fields.size()),
                       line_no);
    RawSample s;
    s.t = detail::parse_field<std::int64_t>(fields[0], line_no, "sample index");
    if (!rec.samples.empty() && s.t != rec.samples.back().t + 1)
      throw ParseError("sample index " + std::to_string(s.t) + " does not follow " + std::to_string(rec.samples.back().t),
                       line_no);
    s.channels.reserve(rec.channels);
    for (std::size_t c = 1; c < fields.size(); ++c) s.channels.push_back(detail::parse_field<double>(fields[c], line_no, "value"));
    rec.samples.push_back(std::move(s));
  }
  return rec;
}

inline void write_annotations_csv(std::ostream& out, std::span<const Annotation> annotations) {
  out << "n,gesture,phase\n";
  for (const auto& a : annotations) out << a.n << ',' << a.gesture << ',' << phase_name(a.phase) << '\n';
}

inline std::vector<Annotation> read_annotations_csv(std::istream& in) {
  std::vector<Annotation> out;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "n,gesture,phase") throw ParseError("header must be 'n,gesture,phase'", line_no);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 3) throw ParseError("expected 3 columns, got " + std::to_string(f.size()), line_no);
    const auto phase = parse_phase(f[2]);
    if (!phase) throw ParseError("unknown phase '" + std::string(f[2]) + "'", line_no);
    out.push_back({detail::parse_field<std::int64_t>(f[0], line_no, "sample index"),
                   detail::parse_field<int>(f[1], line_no, "gesture id"), *phase});
  }
  return out;
}

inline constexpr std::string_view kAnnotationSuffix = ".annotations.csv";

/// "session.csv" -> "session.annotations.csv"
inline std::filesystem::path annotation_path(const std::filesystem::path& recording) {
  auto p = recording;
  p.replace_extension();
  p += kAnnotationSuffix;
  return p;
}

inline bool is_annotation_path(const std::filesystem::path& p) {
  return p.filename().string().ends_with(kAnnotationSuffix);
}

inline void write_recording(const std::filesystem::path& path, const Recording& rec) {
  rec.validate();
  {
    auto out = detail::open_out(path);
    write_samples_csv(out, rec);
    if (!out) throw Error("write failed: " + path.string());
  }
  auto out = detail::open_out(annotation_path(path));
  write_annotations_csv(out, rec.annotations);
  if (!out) throw Error("write failed: " + annotation_path(path).string());
}

/// Reads a recording and, when present, its annotation sidecar.
inline Recording read_recording(const std::filesystem::path& path, double fs,
                                std::optional<std::size_t> expected_channels = {}) {
  auto in = detail::open_in(path);
  Recording rec;
  try {
    rec = read_samples_csv(in, fs, expected_channels);
  } catch (const ParseError& e) {
    throw e.in(path.string());
  }
  const auto side = annotation_path(path);
  if (std::filesystem::exists(side)) {
    auto ain = detail::open_in(side);
    try {
      rec.annotations = read_annotations_csv(ain);
    } catch (const ParseError& e) {
      throw e.in(side.string());
    }
  }
  rec.validate();
  return rec;
}

inline void write_difference_csv(std::ostream& out, std::span<const DifferencePoint> points) {
  out << "n,d\n";
  std::string line;
  for (const auto& p : points) {
    line = std::to_string(p.n) + ',';
    detail::append_double(line, p.value);
    out << line << '\n';
  }
}

// ---------------------------------------------------------------- model container

inline constexpr std::array<char, 4> kModelMagic = {'T', 'M', 'A', '1'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    bytes_.append(s);
  }
  void tensor(const std::vector<double>& t) {
    u64(t.size());
    for (double v : t) f64(v);
  }
  void raw(std::string_view s) { bytes_.append(s); }

  const std::string& bytes() const noexcept { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw ModelFormatError(ModelFormatError::Kind::Truncated,
                             std::string("model file truncated while reading ") + what);
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t uint(std::size_t width, const char* what) {
    const auto b = take(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= std::uint64_t{static_cast<unsigned char>(b[i])} << (8 * i);
    return v;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(uint(1, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::uint64_t u64(const char* what) { return uint(8, what); }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(uint(8, what)); }
  double f64(const char* what) { return std::bit_cast<double>(uint(8, what)); }
  int id(const char* what) {
    const std::int64_t v = i64(what);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      throw ModelFormatError(ModelFormatError::Kind::ShapeMismatch, std::string(what) + ": gesture id out of range");
    return static_cast<int>(v);
  }
  std::size_t count(const char* what, std::size_t element_size) {
    const std::uint64_t n = u64(what);
    if (n > (bytes_.size() - pos_) / element_size)
      throw ModelFormatError(ModelFormatError::Kind::Truncated,
                             std::string("model file truncated: ") + what + " claims " + std::to_string(n) + " entries");
    return static_cast<std::size_t>(n);
  }
  std::string str(const char* what) {
    const std::size_t n = count(what, 1);
    return std::string(take(n, what));
  }
  void tensor(std::vector<double>& t, std::string_view name) {
    const std::string what = "tensor " + std::string(name);
    const std::size_t n = count(what.c_str(), 8);
    if (n != t.size())
      throw ModelFormatError(ModelFormatError::Kind::ShapeMismatch,
                             what + " has " + std::to_string(n) + " values, architecture needs " +
                                 std::to_string(t.size()));
    for (double& v : t) v = f64(what.c_str());
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Binary container, every number little-endian:
///   "TMA1" u32:version
///   signal       f64 fs, u64 channels, f64 cutoff, u64 window, hop, refractory, extraction width, warm-up
///   filter       f64 b0 b1 b2 a1 a2
///   calibration  f64 multiplier, f64 threshold, u8 degenerate, u64 count, count x (i64 gesture, f64 sigma)
///   architecture u64 rows, cols, conv1, conv2, kernel, pool, fc1, fc2, classes
///   bounds       f64 first min, first max, second min, second max
///   labels       u64 count, count x (i64 id, u64 length, bytes)
///   weights      per tensor in declared order: u64 count, count x f64
///   metadata     u64 seed, u64 epochs, f64 learning rate, u64 batch, f64 final loss, u64 count, count x f64
inline std::string encode_model(const SessionModel& m) {
  if (!m.network.ready()) throw UsageError("cannot save an untrained model");
  detail::ByteWriter w;
  w.raw(std::string_view(kModelMagic.data(), kModelMagic.size()));
  w.u32(kModelVersion);
  const auto& s = m.signal;
  w.f64(s.fs);
  w.u64(s.channels);
  w.f64(s.cutoff_hz);
  w.u64(s.window);
  w.u64(s.hop);
  w.u64(s.refractory);
  w.u64(s.extraction_width);
  w.u64(s.warmup);
  for (double c : {m.filter.b0, m.filter.b1, m.filter.b2, m.filter.a1, m.filter.a2}) w.f64(c);
  const auto& cal = m.calibration;
  w.f64(cal.multiplier);
  w.f64(cal.threshold);
  w.u8(cal.degenerate ? 1 : 0);
  w.u64(cal.per_gesture_sigma.size());
  for (const auto& [g, sigma] : cal.per_gesture_sigma) {
    w.i64(g);
    w.f64(sigma);
  }
  const auto& a = m.network.arch;
  for (std::size_t v : {a.input_rows, a.input_cols, a.conv1_filters, a.conv2_filters, a.kernel, a.pool, a.fc1_units,
                        a.fc2_units, a.classes})
    w.u64(v);
  const auto& b = *m.network.bounds;
  for (double v : {b.first_order_min, b.first_order_max, b.second_order_min, b.second_order_max}) w.f64(v);
  w.u64(m.network.labels.size());
  for (const auto& l : m.network.labels) {
    w.i64(l.id);
    w.str(l.name);
  }
  for (const auto* t : m.network.params.tensors()) w.tensor(*t);
  const auto& meta = m.network.meta;
  w.u64(meta.seed);
  w.u64(meta.epochs);
  w.f64(meta.learning_rate);
  w.u64(meta.batch_size);
  w.f64(meta.final_loss);
  w.tensor(meta.epoch_losses);
  return w.bytes();
}

inline SessionModel decode_model(std::string_view bytes) {
  using Kind = ModelFormatError::Kind;
  detail::ByteReader r(bytes);
  if (bytes.size() < kModelMagic.size() ||
      std::memcmp(bytes.data(), kModelMagic.data(), kModelMagic.size()) != 0)
    throw ModelFormatError(Kind::BadMagic, "not a model file (bad magic)");
  r.take(kModelMagic.size(), "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion)
    throw ModelFormatError(Kind::UnsupportedVersion, "unsupported model version " + std::to_string(version));

  SessionModel m;
  auto& s = m.signal;
  s.fs = r.f64("signal");
  s.channels = r.u64("signal");
  s.cutoff_hz = r.f64("signal");
  s.window = r.u64("signal");
  s.hop = r.u64("signal");
  s.refractory = r.u64("signal");
  s.extraction_width = r.u64("signal");
  s.warmup = r.u64("signal");
  m.filter.b0 = r.f64("filter");
  m.filter.b1 = r.f64("filter");
  m.filter.b2 = r.f64("filter");
  m.filter.a1 = r.f64("filter");
  m.filter.a2 = r.f64("filter");
  auto& cal = m.calibration;
  cal.multiplier = r.f64("calibration");
  cal.threshold = r.f64("calibration");
  const std::uint8_t degenerate = r.u8("calibration");
  if (degenerate > 1) throw ModelFormatError(Kind::ShapeMismatch, "calibration flag must be 0 or 1");
  cal.degenerate = degenerate == 1;
  const std::size_t n_sigma = r.count("calibration", 16);
  for (std::size_t i = 0; i < n_sigma; ++i) {
    const int g = r.id("calibration");
    if (!cal.per_gesture_sigma.empty() && g <= cal.per_gesture_sigma.rbegin()->first)
      throw ModelFormatError(Kind::ShapeMismatch, "calibration gestures must be strictly increasing");
    cal.per_gesture_sigma[g] = r.f64("calibration");
  }

  auto& a = m.network.arch;
  for (std::size_t* v : {&a.input_rows, &a.input_cols, &a.conv1_filters, &a.conv2_filters, &a.kernel, &a.pool,
                         &a.fc1_units, &a.fc2_units, &a.classes})
    *v = r.u64("architecture");
  try {
    a.validate();
  } catch (const Error& e) {
    throw ModelFormatError(Kind::ShapeMismatch, std::string("invalid architecture: ") + e.what());
  }
  if (a.input_rows != s.rows() || a.input_cols != s.window)
    throw ModelFormatError(Kind::ShapeMismatch, "architecture input does not match the signal settings");
  if (a.parameter_count() > bytes.size() / 8)
    throw ModelFormatError(Kind::Truncated, "model file too short for its architecture");

  NormalizationBounds b;
  b.first_order_min = r.f64("bounds");
  b.first_order_max = r.f64("bounds");
  b.second_order_min = r.f64("bounds");
  b.second_order_max = r.f64("bounds");
  if (!b.valid()) throw ModelFormatError(Kind::ShapeMismatch, "normalization bounds must satisfy min < max");
  m.network.bounds = b;

  const std::size_t n_labels = r.count("labels", 16);
  if (n_labels != a.classes)
    throw ModelFormatError(Kind::ShapeMismatch, "label table has " + std::to_string(n_labels) + " entries for " +
                                                    std::to_string(a.classes) + " classes");
  for (std::size_t i = 0; i < n_labels; ++i) {
    GestureLabel l;
    l.id = r.id("labels");
    l.name = r.str("labels");
    m.network.labels.push_back(std::move(l));
  }

  m.network.params.resize(a);
  auto tensors = m.network.params.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) r.tensor(*tensors[t], CnnParameters::kNames[t]);

  auto& meta = m.network.meta;
  meta.seed = r.u64("metadata");
  meta.epochs = r.u64("metadata");
  meta.learning_rate = r.f64("metadata");
  meta.batch_size = r.u64("metadata");
  meta.final_loss = r.f64("metadata");
  meta.epoch_losses.resize(r.count("metadata", 8));
  for (double& v : meta.epoch_losses) v = r.f64("metadata");
  if (!r.done()) throw ModelFormatError(Kind::ShapeMismatch, "trailing bytes after metadata");
  return m;
}

inline void write_model(const std::filesystem::path& path, const SessionModel& m) {
  const std::string bytes = encode_model(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelFormatError(ModelFormatError::Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelFormatError(ModelFormatError::Kind::Io, "write failed: " + path.string());
}

inline SessionModel read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFormatError(ModelFormatError::Kind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_model(buf.str());
}

// ---------------------------------------------------------------- events and reports

/// One JSON object per event. Suppressed events carry null gesture, confidence
/// and compute time; `timing = false` nulls compute time everywhere.
inline json event_to_json(const EngineEvent& e, bool timing = true) {
  if (const auto* p = std::get_if<Prediction>(&e))
    return {{"n", p->n},
            {"type", "prediction"},
            {"gesture", p->gesture},
            {"confidence", p->confidence},
            {"compute_us", timing ? json(p->compute_us) : json(nullptr)}};
  const auto& o = std::get<OnsetEvent>(e);
  return {{"n", o.n}, {"type", "suppressed"}, {"gesture", nullptr}, {"confidence", nullptr}, {"compute_us", nullptr}};
}

inline void write_event_line(std::ostream& out, const EngineEvent& e, bool timing = true) {
  out << event_to_json(e, timing).dump() << '\n';
}

inline json report_to_json(const EvaluationReport& r) {
  json classes = json::array();
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    std::size_t total = 0;
    for (auto v : r.confusion[c]) total += v;
    classes.push_back({{"id", r.labels[c].id},
                       {"name", r.labels[c].name},
                       {"events", total},
                       {"correct", r.confusion[c][c]},
                       {"missed", r.confusion[c].back()},
                       {"accuracy", r.per_class_accuracy[c]}});
  }
  return {{"accuracy", r.accuracy},
          {"classes", classes},
          {"confusion", r.confusion},
          {"onsets",
           {{"true", r.true_onsets},
            {"detected", r.detected},
            {"matched", r.matched},
            {"false_positives", r.false_positives},
            {"recall", r.onset_recall},
            {"precision", r.onset_precision},
            {"false_positive_rate", r.false_positive_rate}}},
          {"predictions", r.predictions},
          {"suppressed", r.suppressed},
          {"latency_us",
           {{"count", r.latency.count},
            {"mean", r.latency.mean_us},
            {"p50", r.latency.p50_us},
            {"p95", r.latency.p95_us},
            {"max", r.latency.max_us}}}};
}

}  // namespace tmag
