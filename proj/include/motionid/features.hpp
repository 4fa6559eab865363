#pragma once
// Per-frame face model coefficients and their container formats.
//
// A frame is a 62-vector: 40 shape coefficients, then 10 expression
// coefficients, then 12 pose values (a flattened 3x4 transform). Sequences
// are stored on disk in a little-endian binary format ("IDRF"), datasets are
// described by tab-separated manifests.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <motionid/errors.hpp>

namespace motionid {

inline constexpr int kShapeDims = 40;
inline constexpr int kExpressionDims = 10;
inline constexpr int kPoseDims = 12;
inline constexpr int kFeatureDims = kShapeDims + kExpressionDims + kPoseDims;

struct FeatureFrame {
  std::array<double, kFeatureDims> v{};

  double* shape() { return v.data(); }
  const double* shape() const { return v.data(); }
  double* expression() { return v.data() + kShapeDims; }
  const double* expression() const { return v.data() + kShapeDims; }
  double* pose() { return v.data() + kShapeDims + kExpressionDims; }
  const double* pose() const { return v.data() + kShapeDims + kExpressionDims; }
};

struct FeatureSequence {
  std::vector<FeatureFrame> frames;
  double fps = 25.0;
  std::string identity_id;  // empty when unknown
  std::string video_id;
  std::string context;  // recording-context tag, empty when unknown

  int frame_count() const { return static_cast<int>(frames.size()); }
};

// ---------------------------------------------------------------------------
// binary format: "IDRF" | u32 version=1 | u32 frame_count | u32 dim=62 |
//                f32 fps | frame_count * 62 f32 values, frame-major
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t x) {
  out.push_back(static_cast<std::uint8_t>(x & 0xFF));
  out.push_back(static_cast<std::uint8_t>((x >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((x >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((x >> 24) & 0xFF));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::vector<std::uint8_t>& out, float x) {
  put_u32(out, std::bit_cast<std::uint32_t>(x));
}

inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace detail

inline constexpr std::uint32_t kSequenceFormatVersion = 1;
inline constexpr std::size_t kSequenceHeaderBytes = 4 + 4 + 4 + 4 + 4;

inline std::vector<std::uint8_t> serialize_sequence(const FeatureSequence& seq) {
  if (seq.frames.empty()) throw EmptyInputError("serialize_sequence: no frames");
  if (seq.fps <= 0.0) throw FormatError("serialize_sequence: fps must be positive");
  std::vector<std::uint8_t> out;
  out.reserve(kSequenceHeaderBytes + seq.frames.size() * kFeatureDims * 4);
  out.push_back('I');
  out.push_back('D');
  out.push_back('R');
  out.push_back('F');
  detail::put_u32(out, kSequenceFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(seq.frames.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(kFeatureDims));
  detail::put_f32(out, static_cast<float>(seq.fps));
  for (const FeatureFrame& f : seq.frames)
    for (double x : f.v) detail::put_f32(out, static_cast<float>(x));
  return out;
}

inline FeatureSequence parse_sequence(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kSequenceHeaderBytes)
    throw TruncationError("parse_sequence: stream shorter than header");
  const std::uint8_t* p = bytes.data();
  if (p[0] != 'I' || p[1] != 'D' || p[2] != 'R' || p[3] != 'F')
    throw FormatError("parse_sequence: bad magic");
  std::uint32_t version = detail::get_u32(p + 4);
  if (version != kSequenceFormatVersion)
    throw FormatError("parse_sequence: unsupported version " + std::to_string(version));
  std::uint32_t frame_count = detail::get_u32(p + 8);
  std::uint32_t dim = detail::get_u32(p + 12);
  if (dim != static_cast<std::uint32_t>(kFeatureDims))
    throw DimensionError("parse_sequence: dim " + std::to_string(dim) + ", expected 62");
  if (frame_count == 0) throw FormatError("parse_sequence: zero frames");
  float fps = detail::get_f32(p + 16);
  if (!(fps > 0.0f)) throw FormatError("parse_sequence: fps must be positive");
  std::size_t payload = static_cast<std::size_t>(frame_count) * kFeatureDims * 4;
  if (bytes.size() < kSequenceHeaderBytes + payload)
    throw TruncationError("parse_sequence: truncated payload");
  if (bytes.size() > kSequenceHeaderBytes + payload)
    throw FormatError("parse_sequence: trailing bytes after payload");
  FeatureSequence seq;
  seq.fps = static_cast<double>(fps);
  seq.frames.resize(frame_count);
  const std::uint8_t* q = p + kSequenceHeaderBytes;
  for (std::uint32_t t = 0; t < frame_count; ++t)
    for (int d = 0; d < kFeatureDims; ++d, q += 4)
      seq.frames[t].v[static_cast<std::size_t>(d)] = static_cast<double>(detail::get_f32(q));
  return seq;
}

inline void write_sequence_file(const std::filesystem::path& path, const FeatureSequence& seq) {
  std::vector<std::uint8_t> bytes = serialize_sequence(seq);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("write_sequence_file: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write_sequence_file: write failed for " + path.string());
}

inline FeatureSequence read_sequence_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("read_sequence_file: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return parse_sequence(bytes);
}

// ---------------------------------------------------------------------------
// manifests: one record per line, tab separated, paths relative to the
// manifest's directory
// ---------------------------------------------------------------------------

struct ManifestRecord {
  std::string path;
  std::string identity_id;
  std::string video_id;
  std::string context;
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const ManifestRecord& r) const { return base_dir / r.path; }
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

}  // namespace detail

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("load_manifest: cannot open " + path.string());
  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::map<std::pair<std::string, std::string>, bool> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields = detail::split_tabs(line);
    if (fields.size() != 4)
      throw FormatError("load_manifest: line " + std::to_string(lineno) + ": expected 4 fields, got " +
                        std::to_string(fields.size()));
    ManifestRecord r{fields[0], fields[1], fields[2], fields[3]};
    if (r.path.empty() || r.identity_id.empty() || r.video_id.empty())
      throw FormatError("load_manifest: line " + std::to_string(lineno) + ": empty required field");
    auto key = std::make_pair(r.identity_id, r.video_id);
    if (seen.count(key))
      throw FormatError("load_manifest: duplicate identity/video pair " + r.identity_id + "/" +
                        r.video_id);
    seen[key] = true;
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("save_manifest: cannot open " + path.string());
  for (const ManifestRecord& r : m.records)
    f << r.path << '\t' << r.identity_id << '\t' << r.video_id << '\t' << r.context << '\n';
}

// Labeled manifest for evaluation sets. Extra columns: role (reference|test),
// label (real|fake), kind (-|faceswap|reenactment).
struct TestRecord {
  std::string path;
  std::string identity_id;
  std::string video_id;
  std::string context;
  std::string role;
  std::string label;
  std::string kind;
};

struct TestManifest {
  std::filesystem::path base_dir;
  std::vector<TestRecord> records;

  std::filesystem::path resolve(const TestRecord& r) const { return base_dir / r.path; }
};

inline TestManifest load_test_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("load_test_manifest: cannot open " + path.string());
  TestManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields = detail::split_tabs(line);
    if (fields.size() != 7)
      throw FormatError("load_test_manifest: line " + std::to_string(lineno) +
                        ": expected 7 fields, got " + std::to_string(fields.size()));
    TestRecord r{fields[0], fields[1], fields[2], fields[3], fields[4], fields[5], fields[6]};
    if (r.role != "reference" && r.role != "test")
      throw FormatError("load_test_manifest: line " + std::to_string(lineno) + ": bad role " + r.role);
    if (r.label != "real" && r.label != "fake")
      throw FormatError("load_test_manifest: line " + std::to_string(lineno) + ": bad label " +
                        r.label);
    if (r.role == "reference" && r.label != "real")
      throw FormatError("load_test_manifest: line " + std::to_string(lineno) +
                        ": references must be real");
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void save_test_manifest(const std::filesystem::path& path, const TestManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("save_test_manifest: cannot open " + path.string());
  for (const TestRecord& r : m.records)
    f << r.path << '\t' << r.identity_id << '\t' << r.video_id << '\t' << r.context << '\t' << r.role
      << '\t' << r.label << '\t' << r.kind << '\n';
}

// ---------------------------------------------------------------------------
// per-identity mean feature, weighted by frame (every frame counts once)
// ---------------------------------------------------------------------------

inline FeatureFrame mean_feature(const std::vector<FeatureSequence>& seqs) {
  if (seqs.empty()) throw EmptyInputError("mean_feature: no sequences");
  const std::string& id = seqs.front().identity_id;
  for (const FeatureSequence& s : seqs)
    if (s.identity_id != id)
      throw IdentityMismatchError("mean_feature: mixed identities '" + id + "' and '" +
                                  s.identity_id + "'");
  FeatureFrame mean;
  std::size_t total = 0;
  for (const FeatureSequence& s : seqs) {
    for (const FeatureFrame& f : s.frames)
      for (int d = 0; d < kFeatureDims; ++d) mean.v[static_cast<std::size_t>(d)] += f.v[static_cast<std::size_t>(d)];
    total += s.frames.size();
  }
  if (total == 0) throw EmptyInputError("mean_feature: sequences contain no frames");
  for (double& x : mean.v) x /= static_cast<double>(total);
  return mean;
}

}  // namespace motionid
