#include "affect/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string_view>

namespace affect::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Plumbing

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

bool valid_video_id(const std::string& id) {
  if (id.empty() || id.size() > 256) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.' ||
           c == '-';
  });
}

std::string format_real(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw FormatError("format_real: conversion failed");
  return {buf.data(), end};
}

namespace {

std::string format_int(long long v) { return std::to_string(v); }

std::string column_token(const std::string& name) {
  std::string t;
  for (char c : name) t.push_back(c == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return t;
}

std::vector<std::string> class_tokens(Track track) {
  std::vector<std::string> out;
  for (const auto& n : class_names(track)) out.push_back(column_token(n));
  return out;
}

// ---------------------------------------------------------------------------
// Binary container

enum DType : std::uint8_t { kF64 = 1, kU8 = 2, kI64 = 3, kUtf8 = 4 };

class BinWriter {
 public:
  explicit BinWriter(std::string_view magic) { buf_.append(magic); put_u32(kFormatVersion); put_u32(0); }

  void put_u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void put_u16(std::uint16_t v) { for (int i = 0; i < 2; ++i) put_u8(static_cast<std::uint8_t>(v >> (8 * i))); }
  void put_u32(std::uint32_t v) { for (int i = 0; i < 4; ++i) put_u8(static_cast<std::uint8_t>(v >> (8 * i))); }
  void put_u64(std::uint64_t v) { for (int i = 0; i < 8; ++i) put_u8(static_cast<std::uint8_t>(v >> (8 * i))); }
  void put_f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(bits);
  }

  void header(const std::string& name, DType type, std::initializer_list<std::uint64_t> dims) {
    ++entries_;
    put_u16(static_cast<std::uint16_t>(name.size()));
    buf_.append(name);
    put_u8(type);
    put_u8(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) put_u64(d);
  }

  void text(const std::string& name, const std::string& s) {
    header(name, kUtf8, {s.size()});
    buf_.append(s);
  }
  void i64(const std::string& name, std::int64_t v) {
    header(name, kI64, {});
    put_u64(static_cast<std::uint64_t>(v));
  }
  void f64(const std::string& name, double v) {
    header(name, kF64, {});
    put_f64(v);
  }
  void u8(const std::string& name, std::uint8_t v) {
    header(name, kU8, {});
    put_u8(v);
  }
  void matrix(const std::string& name, const Matrix& m) {
    header(name, kF64, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())});
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(m(r, c));
  }
  void vector(const std::string& name, std::span<const double> v) {
    header(name, kF64, {v.size()});
    for (double x : v) put_f64(x);
  }
  void bytes(const std::string& name, std::span<const std::uint8_t> v) {
    header(name, kU8, {v.size()});
    for (auto x : v) put_u8(x);
  }

  std::string finish() {
    for (int i = 0; i < 4; ++i) buf_[8 + static_cast<std::size_t>(i)] = static_cast<char>(entries_ >> (8 * i));
    return std::move(buf_);
  }

 private:
  std::string buf_;
  std::uint32_t entries_ = 0;
};

struct Entry {
  std::string name;
  DType type{};
  std::vector<std::uint64_t> dims;
  std::string_view payload;
};

class BinReader {
 public:
  BinReader(const std::string& bytes, std::string_view magic, std::string source)
      : data_(bytes), source_(std::move(source)) {
    if (data_.size() < 12 || data_.substr(0, 4) != magic) {
      fail("not a '" + std::string(magic) + "' file (bad magic)");
    }
    pos_ = 4;
    const std::uint32_t version = get_u32();
    if (version != kFormatVersion) {
      fail("unsupported format version " + std::to_string(version) + " (expected " +
           std::to_string(kFormatVersion) + ")");
    }
    const std::uint32_t count = get_u32();
    for (std::uint32_t i = 0; i < count; ++i) entries_.push_back(read_entry());
    if (pos_ != data_.size()) fail(std::to_string(data_.size() - pos_) + " trailing bytes after the last entry");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(source_ + ": " + msg); }
  [[noreturn]] void fail(const Entry& e, const std::string& msg) const {
    throw FormatError(source_ + ": entry '" + e.name + "': " + msg);
  }

  /// Next entry, which must be called `name`.
  const Entry& next(const std::string& name, DType type, std::size_t ndim) {
    if (cursor_ >= entries_.size()) fail("missing entry '" + name + "'");
    const Entry& e = entries_[cursor_++];
    if (e.name != name) fail("expected entry '" + name + "', found '" + e.name + "'");
    if (e.type != type) fail(e, "unexpected element type");
    if (e.dims.size() != ndim) {
      fail(e, "expected " + std::to_string(ndim) + " dimensions, found " + std::to_string(e.dims.size()));
    }
    return e;
  }
  bool has_next() const { return cursor_ < entries_.size(); }
  const std::string& peek_name() const { return entries_.at(cursor_).name; }

  std::string text(const std::string& name) { return std::string(next(name, kUtf8, 1).payload); }
  std::int64_t i64(const std::string& name) {
    const Entry& e = next(name, kI64, 0);
    return static_cast<std::int64_t>(le64(e.payload.data()));
  }
  double f64(const std::string& name) {
    const Entry& e = next(name, kF64, 0);
    const double v = bits_to_double(le64(e.payload.data()));
    if (!std::isfinite(v)) fail(e, "non-finite value");
    return v;
  }
  std::uint8_t u8(const std::string& name) { return static_cast<std::uint8_t>(next(name, kU8, 0).payload[0]); }
  Matrix matrix(const std::string& name) {
    const Entry& e = next(name, kF64, 2);
    Matrix m(static_cast<Eigen::Index>(e.dims[0]), static_cast<Eigen::Index>(e.dims[1]));
    const char* p = e.payload.data();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c, p += 8) {
        m(r, c) = bits_to_double(le64(p));
        if (!std::isfinite(m(r, c))) {
          fail(e, "non-finite value at row " + std::to_string(r) + ", column " + std::to_string(c));
        }
      }
    return m;
  }
  std::vector<double> vector(const std::string& name) {
    const Entry& e = next(name, kF64, 1);
    std::vector<double> v(static_cast<std::size_t>(e.dims[0]));
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = bits_to_double(le64(e.payload.data() + 8 * i));
      if (!std::isfinite(v[i])) fail(e, "non-finite value at index " + std::to_string(i));
    }
    return v;
  }
  std::vector<std::uint8_t> bytes(const std::string& name) {
    const Entry& e = next(name, kU8, 1);
    return {e.payload.begin(), e.payload.end()};
  }
  void done() {
    if (cursor_ != entries_.size()) fail("unexpected extra entry '" + entries_[cursor_].name + "'");
  }
  const Entry& last() const { return entries_.at(cursor_ - 1); }

 private:
  static std::uint64_t le64(const char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
    return v;
  }
  static double bits_to_double(std::uint64_t bits) {
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) fail("truncated file at byte offset " + std::to_string(pos_));
  }
  std::uint8_t get_u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t get_u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(static_cast<unsigned char>(data_[pos_]) |
                                                 (static_cast<unsigned char>(data_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t get_u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 4;
    return v;
  }
  std::uint64_t get_u64() {
    need(8);
    const std::uint64_t v = le64(data_.data() + pos_);
    pos_ += 8;
    return v;
  }

  Entry read_entry() {
    Entry e;
    const std::uint16_t len = get_u16();
    need(len);
    e.name = std::string(data_.substr(pos_, len));
    pos_ += len;
    const std::uint8_t type = get_u8();
    if (type < kF64 || type > kUtf8) fail("entry '" + e.name + "': unknown element type " + std::to_string(type));
    e.type = static_cast<DType>(type);
    const std::uint8_t ndim = get_u8();
    if (ndim > 2) fail("entry '" + e.name + "': too many dimensions");
    std::uint64_t count = 1;
    for (std::uint8_t i = 0; i < ndim; ++i) {
      const std::uint64_t d = get_u64();
      if (d > (1ull << 32) || (d != 0 && count > (1ull << 40) / d)) fail("entry '" + e.name + "': implausible shape");
      e.dims.push_back(d);
      count *= d;
    }
    const std::uint64_t elem = (e.type == kF64 || e.type == kI64) ? 8 : 1;
    if (e.type == kUtf8 && ndim != 1) fail("entry '" + e.name + "': text must be one-dimensional");
    const std::uint64_t size = count * elem;
    if (size > data_.size() - pos_) fail("entry '" + e.name + "': payload runs past the end of the file");
    e.payload = data_.substr(pos_, static_cast<std::size_t>(size));
    pos_ += static_cast<std::size_t>(size);
    return e;
  }

  std::string_view data_;
  std::string source_;
  std::size_t pos_ = 0;
  std::vector<Entry> entries_;
  std::size_t cursor_ = 0;
};

void require_canonical_bytes(const std::string& got, const std::string& canonical, const std::string& source) {
  if (got == canonical) return;
  std::size_t i = 0;
  while (i < got.size() && i < canonical.size() && got[i] == canonical[i]) ++i;
  throw FormatError(source + ": non-canonical encoding at byte offset " + std::to_string(i));
}

// ---------------------------------------------------------------------------
// Text tables

struct TextLine {
  std::size_t number;
  std::string_view text;
};

class TextReader {
 public:
  TextReader(const std::string& text, std::string source) : source_(std::move(source)) {
    if (text.empty()) throw FormatError(source_ + ":1: empty file");
    if (text.back() != '\n') {
      throw FormatError(source_ + ":" + std::to_string(std::count(text.begin(), text.end(), '\n') + 1) +
                        ": missing final newline");
    }
    std::string_view rest(text);
    std::size_t n = 1;
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      std::string_view line = rest.substr(0, nl);
      if (line.find('\r') != std::string_view::npos) fail(n, "carriage return (files must use LF line endings)");
      lines_.push_back({n++, line});
      rest.remove_prefix(nl + 1);
    }
  }

  [[noreturn]] void fail(std::size_t line, const std::string& msg) const {
    throw FormatError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

  /// Parses "#kind,version=1,key=value,..." and returns the key/values after version.
  std::map<std::string, std::string> meta(std::string_view kind) {
    const TextLine& l = line();
    const auto fields = split(l.text);
    if (fields.empty() || fields[0] != "#" + std::string(kind)) {
      fail(l.number, "expected metadata line starting with '#" + std::string(kind) + "'");
    }
    std::map<std::string, std::string> kv;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto eq = fields[i].find('=');
      if (eq == std::string::npos) fail(l.number, "malformed metadata field '" + fields[i] + "'");
      kv[fields[i].substr(0, eq)] = fields[i].substr(eq + 1);
    }
    if (!kv.count("version")) fail(l.number, "missing version field");
    if (kv["version"] != std::to_string(kFormatVersion)) {
      fail(l.number, "unsupported format version " + kv["version"]);
    }
    kv.erase("version");
    meta_line_ = l.number;
    return kv;
  }

  std::string meta_value(std::map<std::string, std::string>& kv, const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) fail(meta_line_, "missing metadata field '" + key + "'");
    return it->second;
  }

  long long meta_int(std::map<std::string, std::string>& kv, const std::string& key) const {
    return parse_int(meta_value(kv, key), meta_line_, key);
  }

  void expect_header(const std::vector<std::string>& columns) {
    const TextLine& l = line();
    const auto fields = split(l.text);
    if (fields != columns) {
      std::string want;
      for (std::size_t i = 0; i < columns.size(); ++i) want += (i ? "," : "") + columns[i];
      fail(l.number, "header row does not match; expected '" + want + "'");
    }
  }

  bool at_end() const { return cursor_ >= lines_.size(); }

  const TextLine& line() {
    if (at_end()) fail(lines_.empty() ? 1 : lines_.back().number + 1, "unexpected end of file");
    return lines_[cursor_++];
  }

  std::vector<std::string> row(std::size_t fields, std::size_t& number) {
    const TextLine& l = line();
    number = l.number;
    auto out = split(l.text);
    if (out.size() != fields) {
      fail(l.number, "expected " + std::to_string(fields) + " fields, found " + std::to_string(out.size()));
    }
    return out;
  }

  double parse_real(const std::string& tok, std::size_t line, const std::string& col) const {
    double v = 0.0;
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (tok.empty() || ec != std::errc() || p != e) fail(line, "column '" + col + "': '" + tok + "' is not a number");
    if (!std::isfinite(v)) fail(line, "column '" + col + "': non-finite value");
    if (format_real(v) != tok) {
      fail(line, "column '" + col + "': '" + tok + "' is not in canonical form ('" + format_real(v) + "')");
    }
    return v;
  }

  long long parse_int(const std::string& tok, std::size_t line, const std::string& col) const {
    long long v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || p != tok.data() + tok.size() || format_int(v) != tok) {
      fail(line, "column '" + col + "': '" + tok + "' is not an integer");
    }
    return v;
  }

  void done() {
    if (!at_end()) fail(lines_[cursor_].number, "unexpected extra line");
  }

  static std::vector<std::string> split(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
      const auto c = s.find(',', start);
      out.emplace_back(s.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
      if (c == std::string_view::npos) break;
      start = c + 1;
    }
    return out;
  }

  std::size_t meta_line() const { return meta_line_; }

 private:
  std::string source_;
  std::vector<TextLine> lines_;
  std::size_t cursor_ = 0;
  std::size_t meta_line_ = 1;
};

void require_canonical_text(const std::string& got, const std::string& canonical, const std::string& source) {
  if (got == canonical) return;
  std::size_t line = 1;
  for (std::size_t i = 0; i < got.size() && i < canonical.size() && got[i] == canonical[i]; ++i)
    if (got[i] == '\n') ++line;
  throw FormatError(source + ":" + std::to_string(line) + ": line is not in canonical form");
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s.push_back(',');
    s += parts[i];
  }
  return s;
}

void check_id(const std::string& id, const std::function<void(const std::string&)>& fail) {
  if (!valid_video_id(id)) fail("invalid video id '" + id + "' (allowed: A-Z a-z 0-9 _ . -)");
}

}  // namespace

// ---------------------------------------------------------------------------
// Bundles

std::string encode_bundle(const FeatureBundle& b) {
  b.validate();
  if (!valid_video_id(b.video_id)) throw FormatError("write_bundle: invalid video id '" + b.video_id + "'");
  BinWriter w("AFFB");
  w.text("video_id", b.video_id);
  w.i64("clip_length", b.clip_length);
  w.i64("frame_count", b.frame_count());
  w.i64("dim", b.dim());
  w.u8("has_text", b.text ? 1 : 0);
  w.matrix("visual", b.visual);
  w.matrix("audio", b.audio);
  if (b.text) w.matrix("text", *b.text);
  w.bytes("face_present", b.face_present);
  w.vector("background", std::span<const double>(b.background.data(), static_cast<std::size_t>(b.background.size())));
  return w.finish();
}

FeatureBundle decode_bundle(const std::string& bytes, const std::string& source) {
  BinReader r(bytes, "AFFB", source);
  FeatureBundle b;
  b.video_id = r.text("video_id");
  if (!valid_video_id(b.video_id)) r.fail(r.last(), "invalid video id '" + b.video_id + "'");
  const auto k = r.i64("clip_length");
  if (k < 1 || k > (1 << 24)) r.fail(r.last(), "clip length must be >= 1");
  b.clip_length = static_cast<int>(k);
  const auto frames = r.i64("frame_count");
  if (frames < 1) r.fail(r.last(), "frame count must be >= 1");
  const auto dim = r.i64("dim");
  if (dim < 1) r.fail(r.last(), "dimension must be >= 1");
  const auto has_text = r.u8("has_text");
  if (has_text > 1) r.fail(r.last(), "flag must be 0 or 1");
  const long long clips = (frames + k - 1) / k;

  auto check_shape = [&](const Matrix& m, long long rows, const char* what) {
    if (m.rows() != rows) {
      r.fail(r.last(), "has " + std::to_string(m.rows()) + " rows but the manifest implies " + std::to_string(rows) +
                           " " + what);
    }
    if (m.cols() != dim) {
      r.fail(r.last(), "has " + std::to_string(m.cols()) + " columns but the manifest says dim=" + std::to_string(dim));
    }
  };
  b.visual = r.matrix("visual");
  check_shape(b.visual, frames, "frames");
  b.audio = r.matrix("audio");
  check_shape(b.audio, clips, "clips");
  if (has_text) {
    b.text = r.matrix("text");
    check_shape(*b.text, clips, "clips");
  }
  b.face_present = r.bytes("face_present");
  if (static_cast<long long>(b.face_present.size()) != frames) {
    r.fail(r.last(), "has " + std::to_string(b.face_present.size()) + " flags but the manifest says " +
                         std::to_string(frames) + " frames");
  }
  for (std::size_t i = 0; i < b.face_present.size(); ++i)
    if (b.face_present[i] > 1) r.fail(r.last(), "flag " + std::to_string(i) + " is not 0 or 1");
  const auto bg = r.vector("background");
  b.background = Eigen::Map<const Vector>(bg.data(), static_cast<Eigen::Index>(bg.size()));
  r.done();
  require_canonical_bytes(bytes, encode_bundle(b), source);
  return b;
}

void write_bundle(const FeatureBundle& bundle, const fs::path& path) { write_file(path, encode_bundle(bundle)); }

FeatureBundle read_bundle(const fs::path& path) { return decode_bundle(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Tracks

namespace {

std::string index_column(Track track) { return is_framewise(track) ? "frame" : "clip"; }

std::vector<std::string> label_columns(Track track) {
  std::vector<std::string> cols{index_column(track)};
  if (track == Track::EXPR || track == Track::CE) {
    cols.emplace_back("label");
  } else {
    for (auto& t : class_tokens(track)) cols.push_back(t);
  }
  return cols;
}

std::vector<std::string> prediction_columns(Track track) {
  std::vector<std::string> cols{index_column(track)};
  const auto toks = class_tokens(track);
  if (is_regression(track)) {
    cols.insert(cols.end(), toks.begin(), toks.end());
    return cols;
  }
  for (const auto& t : toks) cols.push_back("p_" + t);
  if (track == Track::AU) {
    for (const auto& t : toks) cols.push_back("d_" + t);
  } else {
    cols.emplace_back("label");
  }
  return cols;
}

bool integer_labels(Track track) { return track == Track::AU || track == Track::EXPR || track == Track::CE; }

}  // namespace

std::string encode_labels(const LabelTrack& t) {
  t.validate();
  if (!valid_video_id(t.video_id)) throw FormatError("write_labels: invalid video id '" + t.video_id + "'");
  std::string s = "#affect-labels,version=" + std::to_string(kFormatVersion) + ",track=" +
                  std::string(track_name(t.track)) + ",video=" + t.video_id + ",rows=" + std::to_string(t.rows()) + "\n";
  s += join(label_columns(t.track)) + "\n";
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    s += std::to_string(r);
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) {
      s.push_back(',');
      s += integer_labels(t.track) ? format_int(static_cast<long long>(t.values(r, c))) : format_real(t.values(r, c));
    }
    s.push_back('\n');
  }
  return s;
}

LabelTrack decode_labels(const std::string& text, const std::string& source) {
  TextReader in(text, source);
  auto kv = in.meta("affect-labels");
  LabelTrack t;
  try {
    t.track = parse_track(in.meta_value(kv, "track"));
  } catch (const InvalidInput& e) {
    in.fail(in.meta_line(), e.what());
  }
  t.video_id = in.meta_value(kv, "video");
  check_id(t.video_id, [&](const std::string& m) { in.fail(in.meta_line(), m); });
  const long long rows = in.meta_int(kv, "rows");
  if (rows < 0 || rows > (1 << 28)) in.fail(in.meta_line(), "implausible row count");
  const auto cols = label_columns(t.track);
  in.expect_header(cols);
  t.values.resize(rows, label_width(t.track));
  for (long long r = 0; r < rows; ++r) {
    std::size_t ln = 0;
    const auto f = in.row(cols.size(), ln);
    if (in.parse_int(f[0], ln, cols[0]) != r) in.fail(ln, "row index must be " + std::to_string(r));
    for (std::size_t c = 1; c < f.size(); ++c) {
      double v = 0.0;
      if (integer_labels(t.track)) v = static_cast<double>(in.parse_int(f[c], ln, cols[c]));
      else v = in.parse_real(f[c], ln, cols[c]);
      bool ok = true;
      switch (t.track) {
        case Track::AU: ok = v == 0 || v == 1 || v == -1; break;
        case Track::EXPR: ok = v >= -1 && v <= 7; break;
        case Track::CE: ok = v >= 0 && v <= 6; break;
        case Track::VA: ok = (v >= -1 && v <= 1) || v == kVaInvalid; break;
        case Track::EMI: ok = v >= 0 && v <= 1; break;
      }
      if (!ok) in.fail(ln, "column '" + cols[c] + "': value " + f[c] + " out of range for track " +
                               std::string(track_name(t.track)));
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) = v;
    }
  }
  in.done();
  require_canonical_text(text, encode_labels(t), source);
  return t;
}

void write_labels(const LabelTrack& track, const fs::path& path) { write_file(path, encode_labels(track)); }

LabelTrack read_labels(const fs::path& path, std::optional<Track> expected) {
  LabelTrack t = decode_labels(read_file(path), path.string());
  if (expected && t.track != *expected) {
    throw FormatError(path.string() + ":1: track is '" + std::string(track_name(t.track)) + "', expected '" +
                      std::string(track_name(*expected)) + "'");
  }
  return t;
}

std::string encode_predictions(const PredictionTrack& t) {
  t.validate();
  if (!valid_video_id(t.video_id)) throw FormatError("write_predictions: invalid video id '" + t.video_id + "'");
  std::string s = "#affect-predictions,version=" + std::to_string(kFormatVersion) + ",track=" +
                  std::string(track_name(t.track)) + ",video=" + t.video_id + ",rows=" + std::to_string(t.rows()) +
                  "\n";
  s += join(prediction_columns(t.track)) + "\n";
  for (Eigen::Index r = 0; r < t.scores.rows(); ++r) {
    s += std::to_string(r);
    for (Eigen::Index c = 0; c < t.scores.cols(); ++c) s += "," + format_real(t.scores(r, c));
    for (Eigen::Index c = 0; c < t.decisions.cols(); ++c) s += "," + format_int(t.decisions(r, c));
    s.push_back('\n');
  }
  return s;
}

PredictionTrack decode_predictions(const std::string& text, const std::string& source) {
  TextReader in(text, source);
  auto kv = in.meta("affect-predictions");
  PredictionTrack t;
  try {
    t.track = parse_track(in.meta_value(kv, "track"));
  } catch (const InvalidInput& e) {
    in.fail(in.meta_line(), e.what());
  }
  t.video_id = in.meta_value(kv, "video");
  check_id(t.video_id, [&](const std::string& m) { in.fail(in.meta_line(), m); });
  const long long rows = in.meta_int(kv, "rows");
  if (rows < 0 || rows > (1 << 28)) in.fail(in.meta_line(), "implausible row count");
  const auto cols = prediction_columns(t.track);
  in.expect_header(cols);
  const int nc = class_count(t.track);
  const int nd = decision_width(t.track);
  t.scores.resize(rows, nc);
  t.decisions.resize(rows, nd);
  for (long long r = 0; r < rows; ++r) {
    std::size_t ln = 0;
    const auto f = in.row(cols.size(), ln);
    if (in.parse_int(f[0], ln, cols[0]) != r) in.fail(ln, "row index must be " + std::to_string(r));
    for (int c = 0; c < nc; ++c) {
      const auto col = static_cast<std::size_t>(c + 1);
      const double v = in.parse_real(f[col], ln, cols[col]);
      if (!is_regression(t.track) && !(v >= 0.0 && v <= 1.0)) {
        in.fail(ln, "column '" + cols[col] + "': probability " + f[col] + " outside [0,1]");
      }
      t.scores(static_cast<Eigen::Index>(r), c) = v;
    }
    for (int c = 0; c < nd; ++c) {
      const auto col = static_cast<std::size_t>(nc + 1 + c);
      const long long v = in.parse_int(f[col], ln, cols[col]);
      const long long hi = t.track == Track::AU ? 1 : nc - 1;
      if (v < 0 || v > hi) in.fail(ln, "column '" + cols[col] + "': decision " + f[col] + " out of range");
      t.decisions(static_cast<Eigen::Index>(r), c) = static_cast<int>(v);
    }
  }
  in.done();
  require_canonical_text(text, encode_predictions(t), source);
  return t;
}

void write_predictions(const PredictionTrack& track, const fs::path& path) {
  write_file(path, encode_predictions(track));
}

PredictionTrack read_predictions(const fs::path& path, std::optional<Track> expected) {
  PredictionTrack t = decode_predictions(read_file(path), path.string());
  if (expected && t.track != *expected) {
    throw FormatError(path.string() + ":1: track is '" + std::string(track_name(t.track)) + "', expected '" +
                      std::string(track_name(*expected)) + "'");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string encode_checkpoint(const Checkpoint& c) {
  c.config.validate();
  fusion::check_shapes(c.params, c.config);
  BinWriter w("AFFC");
  w.text("track", std::string(track_name(c.config.track)));
  w.i64("num_layers", c.config.num_layers);
  w.i64("num_heads", c.config.num_heads);
  w.i64("d_model", c.config.d_model);
  w.i64("ff_dim", c.config.ff_dim);
  w.i64("clip_length", c.config.clip_length);
  w.i64("output_dim", c.config.output_dim);
  w.f64("dropout", c.config.dropout);
  w.i64("seed", static_cast<std::int64_t>(c.config.seed));
  c.params.visit([&](const std::string& name, const Matrix& m) { w.matrix("param:" + name, m); });
  w.vector("loss_curve", c.loss_curve);
  return w.finish();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  BinReader r(bytes, "AFFC", source);
  Checkpoint c;
  try {
    c.config.track = parse_track(r.text("track"));
  } catch (const InvalidInput& e) {
    r.fail(r.last(), e.what());
  }
  auto small = [&](const char* name, long long lo, long long hi) {
    const auto v = r.i64(name);
    if (v < lo || v > hi) r.fail(r.last(), "value " + std::to_string(v) + " out of range");
    return static_cast<int>(v);
  };
  c.config.num_layers = small("num_layers", 0, 64);
  c.config.num_heads = small("num_heads", 1, 1024);
  c.config.d_model = small("d_model", 1, 1 << 16);
  c.config.ff_dim = small("ff_dim", 1, 1 << 18);
  c.config.clip_length = small("clip_length", 1, 1 << 24);
  c.config.output_dim = small("output_dim", 1, 64);
  c.config.dropout = r.f64("dropout");
  c.config.seed = static_cast<std::uint64_t>(r.i64("seed"));
  try {
    c.config.validate();
  } catch (const InvalidInput& e) {
    r.fail(e.what());
  }
  // Shapes come from the config; allocate then fill.
  c.params = fusion::init_params(c.config, 0);
  c.params.visit([&](const std::string& name, Matrix& m) {
    Matrix got = r.matrix("param:" + name);
    if (got.rows() != m.rows() || got.cols() != m.cols()) {
      r.fail(r.last(), "shape " + std::to_string(got.rows()) + "x" + std::to_string(got.cols()) + ", expected " +
                           std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    m = std::move(got);
  });
  c.loss_curve = r.vector("loss_curve");
  r.done();
  require_canonical_bytes(bytes, encode_checkpoint(c), source);
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint read_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Assignments

std::string encode_assignment(const ensemble::SubsetAssignment& a) {
  a.validate();
  const auto b = a.centroids.cols();
  std::string s = "#affect-assignment,version=" + std::to_string(kFormatVersion) + ",m=" + std::to_string(a.m) +
                  ",b=" + std::to_string(b) + ",videos=" + std::to_string(a.video_ids.size()) + "\n";
  s += "video_id,subset\n";
  for (std::size_t i = 0; i < a.video_ids.size(); ++i) {
    if (!valid_video_id(a.video_ids[i])) throw FormatError("write_assignment: invalid video id");
    s += a.video_ids[i] + "," + std::to_string(a.subset[i]) + "\n";
  }
  std::vector<std::string> head{"centroid"};
  for (Eigen::Index j = 0; j < b; ++j) head.push_back("x" + std::to_string(j));
  s += join(head) + "\n";
  for (int c = 0; c < a.m; ++c) {
    s += std::to_string(c);
    for (Eigen::Index j = 0; j < b; ++j) s += "," + format_real(a.centroids(c, j));
    s.push_back('\n');
  }
  return s;
}

ensemble::SubsetAssignment decode_assignment(const std::string& text, const std::string& source) {
  TextReader in(text, source);
  auto kv = in.meta("affect-assignment");
  ensemble::SubsetAssignment a;
  a.m = static_cast<int>(in.meta_int(kv, "m"));
  const long long b = in.meta_int(kv, "b");
  const long long n = in.meta_int(kv, "videos");
  if (a.m < 1 || a.m > (1 << 20) || b < 0 || b > (1 << 20) || n < 1 || n > (1 << 24)) {
    in.fail(in.meta_line(), "implausible table dimensions");
  }
  in.expect_header({"video_id", "subset"});
  for (long long i = 0; i < n; ++i) {
    std::size_t ln = 0;
    const auto f = in.row(2, ln);
    check_id(f[0], [&](const std::string& m) { in.fail(ln, m); });
    const long long s = in.parse_int(f[1], ln, "subset");
    if (s < 0 || s >= a.m) in.fail(ln, "subset " + f[1] + " outside [0, " + std::to_string(a.m) + ")");
    a.video_ids.push_back(f[0]);
    a.subset.push_back(static_cast<int>(s));
  }
  std::vector<std::string> head{"centroid"};
  for (long long j = 0; j < b; ++j) head.push_back("x" + std::to_string(j));
  in.expect_header(head);
  a.centroids.resize(a.m, b);
  for (int c = 0; c < a.m; ++c) {
    std::size_t ln = 0;
    const auto f = in.row(static_cast<std::size_t>(b + 1), ln);
    if (in.parse_int(f[0], ln, "centroid") != c) in.fail(ln, "centroid index must be " + std::to_string(c));
    for (long long j = 0; j < b; ++j)
      a.centroids(c, j) = in.parse_real(f[static_cast<std::size_t>(j + 1)], ln, head[static_cast<std::size_t>(j + 1)]);
  }
  in.done();
  try {
    a.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(source + ": " + e.what());
  }
  require_canonical_text(text, encode_assignment(a), source);
  return a;
}

void write_assignment(const ensemble::SubsetAssignment& a, const fs::path& path) {
  write_file(path, encode_assignment(a));
}

ensemble::SubsetAssignment read_assignment(const fs::path& path) {
  return decode_assignment(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Manifests and tables

namespace {

std::string encode_corpus(const CorpusManifest& m) {
  std::string s = "#affect-corpus,version=" + std::to_string(kFormatVersion) + ",track=" +
                  std::string(track_name(m.track)) + ",videos=" + std::to_string(m.entries.size()) + "\n";
  s += "video_id,bundle,labels\n";
  for (const auto& e : m.entries) {
    if (!valid_video_id(e.video_id) || !valid_video_id(e.bundle_file) || !valid_video_id(e.label_file)) {
      throw FormatError("write_corpus_manifest: names must use A-Z a-z 0-9 _ . -");
    }
    s += e.video_id + "," + e.bundle_file + "," + e.label_file + "\n";
  }
  return s;
}

}  // namespace

void write_corpus_manifest(const CorpusManifest& m, const fs::path& path) { write_file(path, encode_corpus(m)); }

CorpusManifest read_corpus_manifest(const fs::path& path) {
  const std::string text = read_file(path);
  TextReader in(text, path.string());
  auto kv = in.meta("affect-corpus");
  CorpusManifest m;
  try {
    m.track = parse_track(in.meta_value(kv, "track"));
  } catch (const InvalidInput& e) {
    in.fail(in.meta_line(), e.what());
  }
  const long long n = in.meta_int(kv, "videos");
  if (n < 0 || n > (1 << 24)) in.fail(in.meta_line(), "implausible video count");
  in.expect_header({"video_id", "bundle", "labels"});
  for (long long i = 0; i < n; ++i) {
    std::size_t ln = 0;
    const auto f = in.row(3, ln);
    for (const auto& x : f) check_id(x, [&](const std::string& msg) { in.fail(ln, msg); });
    m.entries.push_back({f[0], f[1], f[2]});
  }
  in.done();
  require_canonical_text(text, encode_corpus(m), path.string());
  return m;
}

fs::path write_corpus(const harness::Corpus& corpus, const fs::path& dir) {
  corpus.validate();
  fs::create_directories(dir);
  CorpusManifest m;
  m.track = corpus.track;
  for (std::size_t i = 0; i < corpus.bundles.size(); ++i) {
    const std::string& id = corpus.bundles[i].video_id;
    CorpusEntry e{id, id + ".affb", id + ".csv"};
    write_bundle(corpus.bundles[i], dir / e.bundle_file);
    write_labels(corpus.labels[i], dir / e.label_file);
    m.entries.push_back(std::move(e));
  }
  const fs::path manifest = dir / "corpus.csv";
  write_corpus_manifest(m, manifest);
  return manifest;
}

harness::Corpus read_corpus(const fs::path& manifest) {
  const CorpusManifest m = read_corpus_manifest(manifest);
  const fs::path base = manifest.parent_path();
  harness::Corpus c;
  c.track = m.track;
  for (const auto& e : m.entries) {
    FeatureBundle b = read_bundle(base / e.bundle_file);
    LabelTrack l = read_labels(base / e.label_file, m.track);
    if (b.video_id != e.video_id || l.video_id != e.video_id) {
      throw FormatError(manifest.string() + ": entry '" + e.video_id + "' points at files for '" +
                        (b.video_id != e.video_id ? b.video_id : l.video_id) + "'");
    }
    const int want = is_framewise(m.track) ? b.frame_count() : b.clip_count();
    if (l.rows() != want) {
      const std::string unit = is_framewise(m.track) ? " frames" : " clips";
      throw FormatError((base / e.label_file).string() + ": " + std::to_string(l.rows()) + " rows but bundle '" +
                        e.bundle_file + "' has " + std::to_string(want) + unit);
    }
    c.bundles.push_back(std::move(b));
    c.labels.push_back(std::move(l));
  }
  try {
    c.validate();
  } catch (const InvalidInput& err) {
    throw FormatError(manifest.string() + ": " + err.what());
  }
  return c;
}

namespace {

std::string encode_folds(const FoldTable& t) {
  std::string s = "#affect-folds,version=" + std::to_string(kFormatVersion) + ",k=" + std::to_string(t.k) +
                  ",seed=" + std::to_string(t.seed) + ",videos=" + std::to_string(t.rows.size()) + "\n";
  s += "video_id,fold\n";
  for (const auto& [id, fold] : t.rows) {
    if (!valid_video_id(id)) throw FormatError("write_fold_table: invalid video id '" + id + "'");
    s += id + "," + std::to_string(fold) + "\n";
  }
  return s;
}

}  // namespace

void write_fold_table(const FoldTable& t, const fs::path& path) { write_file(path, encode_folds(t)); }

FoldTable read_fold_table(const fs::path& path) {
  const std::string text = read_file(path);
  TextReader in(text, path.string());
  auto kv = in.meta("affect-folds");
  FoldTable t;
  t.k = static_cast<int>(in.meta_int(kv, "k"));
  const std::string seed = in.meta_value(kv, "seed");
  {
    auto [p, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), t.seed);
    if (ec != std::errc() || p != seed.data() + seed.size()) in.fail(in.meta_line(), "bad seed");
  }
  const long long n = in.meta_int(kv, "videos");
  if (t.k < 2 || n < 0 || n > (1 << 24)) in.fail(in.meta_line(), "implausible fold table dimensions");
  in.expect_header({"video_id", "fold"});
  for (long long i = 0; i < n; ++i) {
    std::size_t ln = 0;
    const auto f = in.row(2, ln);
    check_id(f[0], [&](const std::string& msg) { in.fail(ln, msg); });
    const long long fold = in.parse_int(f[1], ln, "fold");
    if (fold < 1 || fold > t.k) in.fail(ln, "fold " + f[1] + " outside [1, " + std::to_string(t.k) + "]");
    t.rows.emplace_back(f[0], static_cast<int>(fold));
  }
  in.done();
  require_canonical_text(text, encode_folds(t), path.string());
  return t;
}

namespace {

std::string encode_split(const SplitManifest& s) {
  std::string out = "#affect-split,version=" + std::to_string(kFormatVersion) +
                    ",videos=" + std::to_string(s.train.size() + s.val.size()) + "\n";
  out += "video_id,role\n";
  for (const auto& id : s.train) out += id + ",train\n";
  for (const auto& id : s.val) out += id + ",val\n";
  return out;
}

}  // namespace

void write_split_manifest(const SplitManifest& s, const fs::path& path) { write_file(path, encode_split(s)); }

SplitManifest read_split_manifest(const fs::path& path) {
  const std::string text = read_file(path);
  TextReader in(text, path.string());
  auto kv = in.meta("affect-split");
  const long long n = in.meta_int(kv, "videos");
  if (n < 0 || n > (1 << 24)) in.fail(in.meta_line(), "implausible video count");
  in.expect_header({"video_id", "role"});
  SplitManifest s;
  for (long long i = 0; i < n; ++i) {
    std::size_t ln = 0;
    const auto f = in.row(2, ln);
    check_id(f[0], [&](const std::string& msg) { in.fail(ln, msg); });
    if (f[1] == "train") s.train.push_back(f[0]);
    else if (f[1] == "val") s.val.push_back(f[0]);
    else in.fail(ln, "role must be 'train' or 'val', got '" + f[1] + "'");
  }
  in.done();
  require_canonical_text(text, encode_split(s), path.string());
  return s;
}

namespace {

std::string encode_scores(const ScoreTable& t) {
  std::string s = "#affect-scores,version=" + std::to_string(kFormatVersion) + ",track=" +
                  std::string(track_name(t.track)) + ",rows=" + std::to_string(t.rows.size()) + "\n";
  std::vector<std::string> head{"name"};
  for (const auto& tok : class_tokens(t.track)) head.push_back(tok);
  s += join(head) + "\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (!valid_video_id(t.row_names[i])) throw FormatError("write_score_table: invalid row name");
    s += t.row_names[i];
    for (double v : t.rows[i]) s += "," + format_real(v);
    s.push_back('\n');
  }
  return s;
}

}  // namespace

void write_score_table(const ScoreTable& t, const fs::path& path) { write_file(path, encode_scores(t)); }

ScoreTable read_score_table(const fs::path& path) {
  const std::string text = read_file(path);
  TextReader in(text, path.string());
  auto kv = in.meta("affect-scores");
  ScoreTable t;
  try {
    t.track = parse_track(in.meta_value(kv, "track"));
  } catch (const InvalidInput& e) {
    in.fail(in.meta_line(), e.what());
  }
  const long long n = in.meta_int(kv, "rows");
  if (n < 0 || n > (1 << 20)) in.fail(in.meta_line(), "implausible row count");
  std::vector<std::string> head{"name"};
  for (const auto& tok : class_tokens(t.track)) head.push_back(tok);
  in.expect_header(head);
  for (long long i = 0; i < n; ++i) {
    std::size_t ln = 0;
    const auto f = in.row(head.size(), ln);
    check_id(f[0], [&](const std::string& msg) { in.fail(ln, msg); });
    std::vector<double> row;
    for (std::size_t c = 1; c < f.size(); ++c) row.push_back(in.parse_real(f[c], ln, head[c]));
    t.row_names.push_back(f[0]);
    t.rows.push_back(std::move(row));
  }
  in.done();
  require_canonical_text(text, encode_scores(t), path.string());
  return t;
}

}  // namespace affect::io
