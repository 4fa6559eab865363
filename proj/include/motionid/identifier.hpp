#pragma once
// Identity verification and benchmark scoring.
//
// A test sequence is compared against reference sequences of the identity it
// claims to be. The distance between two embedded sequences is the minimum
// squared distance over all frame pairs; against a reference set it is the
// minimum over references. A claim is rejected (FAKE) when that distance
// exceeds a squared-distance threshold strictly; the boundary value counts
// as REAL. Rows are unit-normalized, so squared distances live in [0, 4].

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <motionid/errors.hpp>
#include <motionid/features.hpp>
#include <motionid/tid_net.hpp>

namespace motionid {

inline constexpr double kDefaultThresholdSq = 1.1;

struct DistanceReport {
  double distance = 0.0;               // min over references
  std::vector<double> per_reference;   // same order as the input set
};

inline double sequence_pair_distance(const EmbeddingSequence& a, const EmbeddingSequence& b) {
  if (a.frames() == 0 || b.frames() == 0)
    throw EmptyInputError("sequence_pair_distance: empty embedding sequence");
  if (a.dims != b.dims) throw ShapeError("sequence_pair_distance: dimension mismatch");
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < a.frames(); ++t) {
    const double* x = a.row(t);
    for (int u = 0; u < b.frames(); ++u) {
      const double* y = b.row(u);
      double d = 0.0;
      for (int j = 0; j < a.dims; ++j) {
        const double diff = x[j] - y[j];
        d += diff * diff;
      }
      best = std::min(best, d);
    }
  }
  return best;
}

inline DistanceReport min_distance(const EmbeddingSequence& test,
                                   const std::vector<EmbeddingSequence>& references) {
  if (references.empty()) throw EmptyInputError("min_distance: no references");
  DistanceReport rep;
  rep.per_reference.reserve(references.size());
  rep.distance = std::numeric_limits<double>::infinity();
  for (const EmbeddingSequence& ref : references) {
    const double d = sequence_pair_distance(test, ref);
    rep.per_reference.push_back(d);
    rep.distance = std::min(rep.distance, d);
  }
  return rep;
}

// The embedded reference material for one enrolled identity. All sequences
// must agree on the identity; the represented contexts are collected so
// protocol code can reason about context coverage.
struct ReferenceSet {
  std::string identity_id;
  std::vector<EmbeddingSequence> sequences;
  std::vector<std::string> contexts;  // sorted unique
};

inline ReferenceSet make_reference_set(std::vector<EmbeddingSequence> sequences) {
  if (sequences.empty()) throw EmptyInputError("make_reference_set: no sequences");
  ReferenceSet rs;
  rs.identity_id = sequences.front().identity_id;
  std::set<std::string> ctxs;
  for (const EmbeddingSequence& s : sequences) {
    if (s.identity_id != rs.identity_id)
      throw IdentityMismatchError("make_reference_set: mixed identities '" + rs.identity_id +
                                  "' and '" + s.identity_id + "'");
    ctxs.insert(s.context);
  }
  rs.contexts.assign(ctxs.begin(), ctxs.end());
  rs.sequences = std::move(sequences);
  return rs;
}

inline DistanceReport min_distance(const EmbeddingSequence& test, const ReferenceSet& refs) {
  return min_distance(test, refs.sequences);
}

enum class Verdict { kReal, kFake };

inline Verdict verify(double distance_sq, double threshold_sq = kDefaultThresholdSq) {
  if (distance_sq < 0.0) throw DomainError("verify: negative squared distance");
  if (threshold_sq < 0.0) throw DomainError("verify: negative squared threshold");
  return distance_sq > threshold_sq ? Verdict::kFake : Verdict::kReal;
}

// ---------------------------------------------------------------------------
// benchmark metrics
// ---------------------------------------------------------------------------

struct ScoredSample {
  double distance = 0.0;
  bool is_fake = false;
};

struct EvalReport {
  double accuracy = 0.0;  // fraction classified correctly at the threshold
  double auc = 0.0;       // P(fake distance > real distance), ties counted 1/2
  int n_real = 0;
  int n_fake = 0;
};

// Rank-based Mann-Whitney statistic: average ranks over the pooled sample,
// AUC = (rank sum of fakes - n_fake(n_fake+1)/2) / (n_real * n_fake).
inline EvalReport evaluate_samples(const std::vector<ScoredSample>& samples,
                                   double threshold_sq = kDefaultThresholdSq) {
  EvalReport rep;
  int correct = 0;
  for (const ScoredSample& s : samples) {
    (s.is_fake ? rep.n_fake : rep.n_real) += 1;
    const bool called_fake = verify(s.distance, threshold_sq) == Verdict::kFake;
    if (called_fake == s.is_fake) ++correct;
  }
  if (rep.n_real == 0 || rep.n_fake == 0)
    throw EvalError("evaluate_samples: need at least one real and one fake sample");
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].distance < samples[b].distance;
  });
  double fake_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && samples[order[j]].distance == samples[order[i]].distance) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (samples[order[k]].is_fake) fake_rank_sum += avg_rank;
    i = j;
  }
  const double nf = static_cast<double>(rep.n_fake);
  rep.auc = (fake_rank_sum - nf * (nf + 1.0) / 2.0) /
            (static_cast<double>(rep.n_real) * nf);
  return rep;
}

// ---------------------------------------------------------------------------
// scored-record export (TSV)
// ---------------------------------------------------------------------------

struct DistanceRecord {
  std::string group;     // claimed identity
  std::string video_id;
  double distance = 0.0;
  std::string label;     // "real" or "fake"
};

inline void export_distances(const std::filesystem::path& path,
                             const std::vector<DistanceRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("export_distances: cannot open " + path.string());
  f << "group\tvideo_id\tdistance\tlabel\n";
  char buf[64];
  for (const DistanceRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.distance);
    f << r.group << '\t' << r.video_id << '\t' << buf << '\t' << r.label << '\n';
  }
  if (!f) throw FormatError("export_distances: write failed for " + path.string());
}

inline std::vector<DistanceRecord> load_distances(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("load_distances: cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || detail::split_tabs(line) !=
      std::vector<std::string>{"group", "video_id", "distance", "label"})
    throw FormatError("load_distances: bad header in " + path.string());
  std::vector<DistanceRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols = detail::split_tabs(line);
    if (cols.size() != 4)
      throw FormatError("load_distances: expected 4 columns, got " +
                        std::to_string(cols.size()));
    DistanceRecord r;
    r.group = cols[0];
    r.video_id = cols[1];
    try {
      std::size_t used = 0;
      r.distance = std::stod(cols[2], &used);
      if (used != cols[2].size()) throw FormatError("");
    } catch (const std::exception&) {
      throw FormatError("load_distances: bad distance value '" + cols[2] + "'");
    }
    if (cols[3] != "real" && cols[3] != "fake")
      throw FormatError("load_distances: label must be real or fake, got '" + cols[3] + "'");
    r.label = cols[3];
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ScoredSample> to_samples(const std::vector<DistanceRecord>& records) {
  std::vector<ScoredSample> out;
  out.reserve(records.size());
  for (const DistanceRecord& r : records) out.push_back({r.distance, r.label == "fake"});
  return out;
}

// ---------------------------------------------------------------------------
// protocol: scoring a test manifest
// ---------------------------------------------------------------------------

// References for one claimed identity, optionally excluding those recorded in
// the test sequence's own context. Throws ProtocolError when the exclusion
// leaves nothing (context leave-out needs references from at least two
// contexts) and EmptyInputError when the identity has no references at all.
inline std::vector<EmbeddingSequence> select_references(
    const std::vector<EmbeddingSequence>& references, const std::string& identity_id,
    const std::string& test_context, bool exclude_test_context) {
  std::vector<EmbeddingSequence> out;
  bool saw_identity = false;
  for (const EmbeddingSequence& ref : references) {
    if (ref.identity_id != identity_id) continue;
    saw_identity = true;
    if (exclude_test_context && ref.context == test_context) continue;
    out.push_back(ref);
  }
  if (!saw_identity)
    throw EmptyInputError("select_references: no references for identity " + identity_id);
  if (out.empty())
    throw ProtocolError("select_references: every reference for " + identity_id +
                        " shares the test context " + test_context);
  return out;
}

// Scores every role=="test" record of a manifest against the claimed
// identity's references. `embeddings` must align index-for-index with
// man.records (reference embeddings are taken from the same vector).
inline std::vector<DistanceRecord> score_test_records(
    const TestManifest& man, const std::vector<EmbeddingSequence>& embeddings,
    bool exclude_test_context, double* out_mean_reference_count = nullptr) {
  if (embeddings.size() != man.records.size())
    throw ShapeError("score_test_records: embedding count does not match manifest");
  std::vector<EmbeddingSequence> references;
  for (std::size_t i = 0; i < man.records.size(); ++i)
    if (man.records[i].role == "reference") references.push_back(embeddings[i]);
  if (references.empty()) throw EmptyInputError("score_test_records: manifest has no references");

  std::vector<DistanceRecord> out;
  double ref_count_sum = 0.0;
  for (std::size_t i = 0; i < man.records.size(); ++i) {
    const TestRecord& rec = man.records[i];
    if (rec.role != "test") continue;
    std::vector<EmbeddingSequence> refs =
        select_references(references, rec.identity_id, rec.context, exclude_test_context);
    ref_count_sum += static_cast<double>(refs.size());
    const DistanceReport rep = min_distance(embeddings[i], refs);
    out.push_back({rec.identity_id, rec.video_id, rep.distance, rec.label});
  }
  if (out.empty()) throw EmptyInputError("score_test_records: manifest has no test records");
  if (out_mean_reference_count)
    *out_mean_reference_count = ref_count_sum / static_cast<double>(out.size());
  return out;
}

}  // namespace motionid
