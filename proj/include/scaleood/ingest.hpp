#pragma once

// File formats
// ------------
// Feature file (".oodf"), all integers u32 little-endian, payload float32 LE:
//   "OODF" | version=1 | N | D | flags | N*D floats row-major | [N u32 labels]
//   flags bit 0: post-ReLU set; bit 1: a label block follows the payload.
// Head file (".oodh"):
//   "OODH" | version=1 | K | D | K*D weight floats row-major | K bias floats
// CSV: one sample per line, comma-separated decimals; with labels enabled the
// last column is an integer class index.
// Manifest (JSON):
//   {"entries": [{"path", "tag", "split", "format", "labels"?}],
//    "head": path, "preacts"?: [{"path", "tag", "format"}]}
// Relative paths in a manifest resolve against the manifest's directory.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scaleood/types.hpp"

namespace scaleood {

enum class FileFormat { binary, csv };

inline FileFormat parse_format(std::string_view s) {
  if (s == "binary" || s == "bin") return FileFormat::binary;
  if (s == "csv") return FileFormat::csv;
  throw InvalidArgument("unknown file format '" + std::string(s) + "'");
}

inline std::string_view to_string(FileFormat f) {
  return f == FileFormat::binary ? "binary" : "csv";
}

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kFlagPostRelu = 1u << 0;
inline constexpr std::uint32_t kFlagLabels = 1u << 1;

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0)
      throw ParseError("malformed header: bad magic (expected \"" + std::string(magic) + "\")");
    pos_ += magic.size();
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(k)];
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw ParseError("unexpected end of file");
  }

  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
  }
  void f32(double v) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f))
      throw InvalidArgument("value " + format_double(v) + " is not representable as float32");
    u32(std::bit_cast<std::uint32_t>(f));
  }
  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

inline std::uint32_t checked_u32(std::size_t n, const char* what) {
  if (n > 0xffffffffu) throw InvalidArgument(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(n);
}

// Reads a float payload, distinguishing a wrong row width from a short file.
inline std::vector<double> read_payload(ByteReader& r, std::size_t rows, std::size_t cols,
                                        std::size_t trailing_bytes) {
  const std::size_t expected = rows * cols * 4 + trailing_bytes;
  if (r.remaining() != expected) {
    const std::size_t avail = r.remaining() - std::min(r.remaining(), trailing_bytes);
    if (rows > 0 && avail % (4 * rows) == 0 && avail / (4 * rows) != cols)
      throw ParseError("dimension mismatch: header declares " + std::to_string(cols) +
                       " values per row but payload holds " + std::to_string(avail / (4 * rows)));
    if (r.remaining() < expected) throw ParseError("unexpected end of file");
    throw ParseError("dimension mismatch: " + std::to_string(r.remaining() - expected) +
                     " trailing bytes after payload");
  }
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = r.f32();
      if (!std::isfinite(v)) throw ParseError("non-finite value", i, j);
      out[i * cols + j] = v;
    }
  return out;
}

inline double parse_double(std::string_view tok, std::size_t row, std::size_t col) {
  while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r'))
    tok.remove_suffix(1);
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
    throw ParseError("malformed number '" + std::string(tok) + "'", row, col);
  if (!std::isfinite(v)) throw ParseError("non-finite value", row, col);
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Write-then-rename so readers never observe a partial file.
inline void write_atomically(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

inline FeatureSet parse_features_binary(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("OODF");
  const auto version = r.u32();
  if (version != kFormatVersion)
    throw ParseError("malformed header: unsupported version " + std::to_string(version));
  const std::size_t n = r.u32();
  const std::size_t d = r.u32();
  const auto flags = r.u32();
  if (flags & ~(kFlagPostRelu | kFlagLabels))
    throw ParseError("malformed header: unknown flag bits");
  const bool has_labels = flags & kFlagLabels;

  FeatureSet fs;
  fs.post_relu = flags & kFlagPostRelu;
  fs.data = Matrix(n, d, detail::read_payload(r, n, d, has_labels ? 4 * n : 0));
  if (has_labels) {
    Labels labels(n);
    for (auto& l : labels) l = r.u32();
    fs.labels = std::move(labels);
  }
  if (fs.post_relu)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (fs.data(i, j) < 0.0) throw ParseError("negative value in post-ReLU set", i, j);
  return fs;
}

inline FeatureSet parse_features_csv(std::string_view text, bool with_labels, bool post_relu) {
  std::vector<double> values;
  Labels labels;
  std::size_t cols = 0;
  std::size_t row = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    auto toks = detail::split_commas(line);
    std::size_t width = toks.size();
    if (with_labels) {
      if (width < 2) throw ParseError("row has no label column", row);
      --width;
    }
    if (row == 0) cols = width;
    if (width != cols)
      throw ParseError("dimension mismatch: expected " + std::to_string(cols) + " values, got " +
                           std::to_string(width),
                       row);
    for (std::size_t j = 0; j < width; ++j) {
      const double v = detail::parse_double(toks[j], row, j);
      if (post_relu && v < 0.0) throw ParseError("negative value in post-ReLU set", row, j);
      values.push_back(v);
    }
    if (with_labels) {
      const double l = detail::parse_double(toks.back(), row, width);
      if (l < 0 || l != std::floor(l) || l > 4294967295.0)
        throw ParseError("label is not a non-negative integer", row, width);
      labels.push_back(static_cast<std::uint32_t>(l));
    }
    ++row;
  }
  FeatureSet fs;
  fs.post_relu = post_relu;
  fs.data = Matrix(row, cols, std::move(values));
  if (with_labels) fs.labels = std::move(labels);
  return fs;
}

struct LoadOptions {
  bool labels = false;     // CSV only; binary files declare labels in their flags
  bool post_relu = true;   // CSV only; binary files declare this in their flags
};

inline FeatureSet load_features(const std::filesystem::path& path, FileFormat format,
                                LoadOptions opts = {}) {
  auto bytes = detail::read_bytes(path);
  FeatureSet fs;
  try {
    if (format == FileFormat::binary) {
      fs = parse_features_binary(bytes);
    } else {
      fs = parse_features_csv(
          std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
          opts.labels, opts.post_relu);
    }
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  fs.tag = path.stem().string();
  return fs;
}

inline std::string serialize_features_binary(const FeatureSet& fs) {
  detail::ByteWriter w;
  w.magic("OODF");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(fs.n_samples(), "sample count"));
  w.u32(detail::checked_u32(fs.dim(), "dimension"));
  std::uint32_t flags = 0;
  if (fs.post_relu) flags |= kFlagPostRelu;
  if (fs.labels) flags |= kFlagLabels;
  w.u32(flags);
  for (double v : fs.data.values()) w.f32(v);
  if (fs.labels)
    for (auto l : *fs.labels) w.u32(l);
  return w.bytes();
}

inline std::string serialize_features_csv(const FeatureSet& fs) {
  std::string out;
  for (std::size_t i = 0; i < fs.n_samples(); ++i) {
    auto row = fs.data.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += format_double(row[j]);
    }
    if (fs.labels) out += ',' + std::to_string((*fs.labels)[i]);
    out += '\n';
  }
  return out;
}

inline void write_features(const std::filesystem::path& path, const FeatureSet& fs,
                           FileFormat format) {
  if (fs.labels && fs.labels->size() != fs.n_samples())
    throw InvalidArgument("label count does not match sample count");
  detail::write_atomically(path, format == FileFormat::binary ? serialize_features_binary(fs)
                                                              : serialize_features_csv(fs));
}

// Pre-activations share the feature layouts, with the post-ReLU flag clear.
inline PreActSet load_preacts(const std::filesystem::path& path, FileFormat format) {
  auto fs = load_features(path, format, {.labels = false, .post_relu = false});
  return PreActSet{std::move(fs.data), std::move(fs.tag)};
}

inline void write_preacts(const std::filesystem::path& path, const PreActSet& ps,
                          FileFormat format) {
  FeatureSet fs{ps.data, ps.tag, Split::id, false, std::nullopt};
  write_features(path, fs, format);
}

// ---------------------------------------------------------------------------
// Linear head
// ---------------------------------------------------------------------------

inline LinearHead parse_head_binary(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("OODH");
  const auto version = r.u32();
  if (version != kFormatVersion)
    throw ParseError("malformed header: unsupported version " + std::to_string(version));
  const std::size_t k = r.u32();
  const std::size_t d = r.u32();
  if (k == 0 || d == 0) throw ParseError("malformed header: empty head");
  LinearHead head;
  head.weights = Matrix(k, d, detail::read_payload(r, k, d, 4 * k));
  head.bias.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    head.bias[i] = r.f32();
    if (!std::isfinite(head.bias[i])) throw ParseError("non-finite bias", i);
  }
  return head;
}

inline LinearHead load_head(const std::filesystem::path& path) {
  auto bytes = detail::read_bytes(path);
  try {
    return parse_head_binary(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline std::string serialize_head(const LinearHead& head) {
  head.validate();
  detail::ByteWriter w;
  w.magic("OODH");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(head.n_classes(), "class count"));
  w.u32(detail::checked_u32(head.dim(), "dimension"));
  for (double v : head.weights.values()) w.f32(v);
  for (double v : head.bias) w.f32(v);
  return w.bytes();
}

inline void write_head(const std::filesystem::path& path, const LinearHead& head) {
  detail::write_atomically(path, serialize_head(head));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::filesystem::path path;
  std::string tag;
  Split split = Split::id;
  FileFormat format = FileFormat::binary;
  bool labels = false;
};

struct PreActEntry {
  std::filesystem::path path;
  std::string tag;
  FileFormat format = FileFormat::binary;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path head_path;
  std::vector<PreActEntry> preacts;
};

inline DatasetManifest parse_manifest(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir = {}) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    DatasetManifest m;
    for (const auto& e : j.value("entries", nlohmann::json::array())) {
      ManifestEntry entry;
      entry.path = resolve(e.at("path").get<std::string>());
      entry.tag = e.at("tag").get<std::string>();
      entry.split = parse_split(e.at("split").get<std::string>());
      entry.format = parse_format(e.value("format", std::string("binary")));
      entry.labels = e.value("labels", false);
      m.entries.push_back(std::move(entry));
    }
    // stats needs only preacts, so the head and entries may be absent
    if (const auto head = j.value("head", std::string()); !head.empty())
      m.head_path = resolve(head);
    if (j.contains("preacts")) {
      for (const auto& e : j.at("preacts")) {
        PreActEntry entry;
        entry.path = resolve(e.at("path").get<std::string>());
        entry.tag = e.at("tag").get<std::string>();
        entry.format = parse_format(e.value("format", std::string("binary")));
        m.preacts.push_back(std::move(entry));
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what());
  }
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed manifest '" + path.string() + "': " + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back({{"path", e.path.string()},
                            {"tag", e.tag},
                            {"split", std::string(to_string(e.split))},
                            {"format", std::string(to_string(e.format))},
                            {"labels", e.labels}});
  if (!m.head_path.empty()) j["head"] = m.head_path.string();
  if (!m.preacts.empty()) {
    j["preacts"] = nlohmann::json::array();
    for (const auto& p : m.preacts)
      j["preacts"].push_back({{"path", p.path.string()},
                              {"tag", p.tag},
                              {"format", std::string(to_string(p.format))}});
  }
  return j;
}

inline FeatureSet load_entry(const ManifestEntry& e) {
  if (!std::filesystem::exists(e.path))
    throw ParseError("entry '" + e.tag + "': missing file '" + e.path.string() + "'");
  auto fs = load_features(e.path, e.format, {.labels = e.labels, .post_relu = true});
  fs.tag = e.tag;
  fs.split = e.split;
  return fs;
}

struct EntrySummary {
  std::string tag;
  std::size_t n_samples = 0;
  std::size_t dim = 0;
};

/// Everything a manifest references, loaded and cross-checked.
struct LoadedManifest {
  LinearHead head;
  std::vector<FeatureSet> sets;
  std::vector<PreActSet> preacts;

  const FeatureSet& id_set() const {
    for (const auto& s : sets)
      if (s.split == Split::id) return s;
    throw InvalidArgument("manifest has no id split");
  }
};

inline LoadedManifest load_manifest_data(const DatasetManifest& m) {
  std::size_t n_id = 0;
  for (const auto& e : m.entries) n_id += e.split == Split::id;
  if (n_id != 1)
    throw InvalidArgument("manifest must contain exactly one id split, found " +
                          std::to_string(n_id));
  if (m.head_path.empty()) throw InvalidArgument("manifest names no head file");
  if (!std::filesystem::exists(m.head_path))
    throw ParseError("missing head file '" + m.head_path.string() + "'");

  LoadedManifest out;
  out.head = load_head(m.head_path);
  out.head.validate();
  for (const auto& e : m.entries) {
    auto fs = load_entry(e);
    try {
      fs.validate();
    } catch (const InvalidArgument& err) {
      throw InvalidArgument("entry '" + e.tag + "': " + err.what());
    }
    if (fs.dim() != out.head.dim())
      throw DimensionMismatch("entry '" + e.tag + "' has dim " + std::to_string(fs.dim()) +
                              " but the head expects " + std::to_string(out.head.dim()));
    try {
      fs.validate_labels(out.head.n_classes());
    } catch (const InvalidArgument& err) {
      throw InvalidArgument("entry '" + e.tag + "': " + err.what());
    }
    out.sets.push_back(std::move(fs));
  }
  for (const auto& p : m.preacts) {
    if (!std::filesystem::exists(p.path))
      throw ParseError("preact '" + p.tag + "': missing file '" + p.path.string() + "'");
    auto ps = load_preacts(p.path, p.format);
    ps.tag = p.tag;
    ps.validate();
    out.preacts.push_back(std::move(ps));
  }
  return out;
}

inline std::vector<EntrySummary> validate_manifest(const DatasetManifest& m) {
  const auto loaded = load_manifest_data(m);
  std::vector<EntrySummary> out;
  for (const auto& s : loaded.sets) out.push_back({s.tag, s.n_samples(), s.dim()});
  return out;
}

}  // namespace scaleood
