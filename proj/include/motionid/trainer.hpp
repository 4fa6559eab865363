#pragma once
// Dataset loading, batch sampling, and the two-phase training loop:
// phase 1 fits the embedding network on the contrastive objective with
// best-validation model selection; phase 2 alternates embedding-network and
// generator updates on the adversarial objectives for a fixed epoch count.
// All randomness comes from per-purpose streams derived from (seed, tag,
// index), so training is bitwise reproducible and resumable.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <motionid/features.hpp>
#include <motionid/losses.hpp>
#include <motionid/rng.hpp>

namespace motionid {

// ---------------------------------------------------------------------------
// feature statistics and standardization
// ---------------------------------------------------------------------------

struct FeatureStats {
  std::array<double, kFeatureDims> mean{};
  std::array<double, kFeatureDims> sd{};
};

// Two-pass per-coefficient mean and standard deviation over every frame of
// every sequence; the deviation is floored to keep z-scoring finite on
// constant channels.
inline FeatureStats compute_stats(const std::vector<FeatureSequence>& seqs) {
  long long frames = 0;
  for (const auto& s : seqs) frames += static_cast<long long>(s.frames.size());
  if (frames == 0) throw EmptyInputError("compute_stats: no frames");
  FeatureStats st;
  for (const auto& s : seqs)
    for (const auto& f : s.frames)
      for (int j = 0; j < kFeatureDims; ++j) st.mean[static_cast<std::size_t>(j)] += f.v[static_cast<std::size_t>(j)];
  for (auto& m : st.mean) m /= static_cast<double>(frames);
  for (const auto& s : seqs)
    for (const auto& f : s.frames)
      for (int j = 0; j < kFeatureDims; ++j) {
        const double d = f.v[static_cast<std::size_t>(j)] - st.mean[static_cast<std::size_t>(j)];
        st.sd[static_cast<std::size_t>(j)] += d * d;
      }
  for (auto& v : st.sd) v = std::max(std::sqrt(v / static_cast<double>(frames)), 1e-6);
  return st;
}

inline FeatureSequence standardize(const FeatureSequence& s, const FeatureStats& st) {
  FeatureSequence out = s;
  for (auto& f : out.frames)
    for (int j = 0; j < kFeatureDims; ++j)
      f.v[static_cast<std::size_t>(j)] =
          (f.v[static_cast<std::size_t>(j)] - st.mean[static_cast<std::size_t>(j)]) / st.sd[static_cast<std::size_t>(j)];
  return out;
}

inline FeatureSequence destandardize(const FeatureSequence& s, const FeatureStats& st) {
  FeatureSequence out = s;
  for (auto& f : out.frames)
    for (int j = 0; j < kFeatureDims; ++j)
      f.v[static_cast<std::size_t>(j)] =
          f.v[static_cast<std::size_t>(j)] * st.sd[static_cast<std::size_t>(j)] + st.mean[static_cast<std::size_t>(j)];
  return out;
}

// ---------------------------------------------------------------------------
// in-memory dataset
// ---------------------------------------------------------------------------

struct VideoData {
  std::string identity_id;
  std::string video_id;
  std::string context;
  int frames = 0;
  std::vector<double> values;  // standardized, frame-major, frames x 62
};

struct Dataset {
  std::vector<VideoData> videos;
  std::vector<std::string> identities;                 // sorted unique ids
  std::map<std::string, std::vector<int>> by_identity;  // id -> video indices
  FeatureStats stats;  // the statistics used for standardization

  // Loads every sequence named by the manifest. When `use_stats` is null the
  // statistics are computed from this data (training split); otherwise the
  // given statistics are applied (validation/test splits use training stats).
  static Dataset load(const DatasetManifest& man, const FeatureStats* use_stats = nullptr) {
    std::vector<FeatureSequence> raw;
    raw.reserve(man.records.size());
    for (const auto& rec : man.records) {
      // Sequence files carry no labels; the manifest is the authority.
      FeatureSequence seq = read_sequence_file(man.resolve(rec));
      seq.identity_id = rec.identity_id;
      seq.video_id = rec.video_id;
      seq.context = rec.context;
      raw.push_back(std::move(seq));
    }
    Dataset ds;
    ds.stats = use_stats ? *use_stats : compute_stats(raw);
    for (auto& seq : raw) {
      FeatureSequence z = standardize(seq, ds.stats);
      VideoData v;
      v.identity_id = z.identity_id;
      v.video_id = z.video_id;
      v.context = z.context;
      v.frames = static_cast<int>(z.frames.size());
      v.values.reserve(z.frames.size() * kFeatureDims);
      for (const auto& f : z.frames)
        for (double x : f.v) v.values.push_back(x);
      int index = static_cast<int>(ds.videos.size());
      ds.videos.push_back(std::move(v));
      ds.by_identity[ds.videos.back().identity_id].push_back(index);
    }
    for (const auto& [id, vids] : ds.by_identity) ds.identities.push_back(id);
    return ds;
  }
};

// ---------------------------------------------------------------------------
// batch sampling
// ---------------------------------------------------------------------------

struct TrainingBatch {
  int n = 0, m = 0, t = 0;
  std::vector<std::string> identities;  // n entries
  std::vector<TensorPtr> seq;           // n*m tensors, index c*m + i, each t x 62
  std::vector<int> video_index;         // source video per sequence
  std::vector<int> offset;              // window start per sequence
};

// N distinct identities, M distinct videos each, one uniformly random T-frame
// window per video. Deterministic in the rng state. Video picks are
// context-stratified: each identity's M picks cover as many distinct
// recording contexts as possible (bucket order and the pick within a bucket
// are both rng-driven), so positive pairs in a batch match across contexts —
// the same condition the reference-based verification protocol imposes —
// while every eligible video keeps positive sampling probability.
inline TrainingBatch sample_batch(const Dataset& ds, int n, int m, int t, Rng& rng) {
  if (n < 1 || m < 1 || t < 1) throw ConfigError("sample_batch: n, m, t must be positive");
  std::vector<int> eligible_ids;  // indices into ds.identities
  std::vector<std::vector<int>> eligible_vids;
  for (std::size_t e = 0; e < ds.identities.size(); ++e) {
    std::vector<int> ok;
    for (int v : ds.by_identity.at(ds.identities[e]))
      if (ds.videos[static_cast<std::size_t>(v)].frames >= t) ok.push_back(v);
    if (static_cast<int>(ok.size()) >= m) {
      eligible_ids.push_back(static_cast<int>(e));
      eligible_vids.push_back(std::move(ok));
    }
  }
  if (static_cast<int>(eligible_ids.size()) < n)
    throw DataError("sample_batch: need " + std::to_string(n) + " identities with >= " +
                    std::to_string(m) + " videos of >= " + std::to_string(t) +
                    " frames, dataset has " + std::to_string(eligible_ids.size()));
  TrainingBatch batch;
  batch.n = n;
  batch.m = m;
  batch.t = t;
  std::vector<int> picked_ids = rng.sample_distinct(static_cast<int>(eligible_ids.size()), n);
  for (int pi : picked_ids) {
    const auto& vids = eligible_vids[static_cast<std::size_t>(pi)];
    batch.identities.push_back(ds.identities[static_cast<std::size_t>(eligible_ids[static_cast<std::size_t>(pi)])]);
    std::map<std::string, std::vector<int>> by_ctx;
    for (int v : vids) by_ctx[ds.videos[static_cast<std::size_t>(v)].context].push_back(v);
    std::vector<std::vector<int>> buckets;
    buckets.reserve(by_ctx.size());
    for (auto& [ctx, vs] : by_ctx) buckets.push_back(std::move(vs));
    std::vector<int> picked_vids;
    while (static_cast<int>(picked_vids.size()) < m) {
      std::vector<int> avail;
      for (std::size_t b = 0; b < buckets.size(); ++b)
        if (!buckets[b].empty()) avail.push_back(static_cast<int>(b));
      const int take = std::min(m - static_cast<int>(picked_vids.size()),
                                static_cast<int>(avail.size()));
      for (int oi : rng.sample_distinct(static_cast<int>(avail.size()), take)) {
        auto& bucket = buckets[static_cast<std::size_t>(avail[static_cast<std::size_t>(oi)])];
        const std::size_t pick = static_cast<std::size_t>(rng.below(bucket.size()));
        picked_vids.push_back(bucket[pick]);
        bucket.erase(bucket.begin() + static_cast<std::ptrdiff_t>(pick));
      }
    }
    for (int v : picked_vids) {
      const VideoData& video = ds.videos[static_cast<std::size_t>(v)];
      const int max_off = video.frames - t;
      const int off = max_off == 0 ? 0 : static_cast<int>(rng.below(static_cast<std::uint64_t>(max_off) + 1));
      auto tensor = Tensor::create({t, kFeatureDims});
      std::copy_n(video.values.begin() + static_cast<std::ptrdiff_t>(off) * kFeatureDims,
                  static_cast<std::size_t>(t) * kFeatureDims, tensor->values.begin());
      batch.seq.push_back(std::move(tensor));
      batch.video_index.push_back(v);
      batch.offset.push_back(off);
    }
  }
  return batch;
}

// Mean feature vector of one batch identity, over its M sequences and all
// window frames. Constant (no gradient flows into it).
inline TensorPtr batch_identity_mean(const TrainingBatch& batch, int c) {
  auto mean = Tensor::create({kFeatureDims});
  for (int i = 0; i < batch.m; ++i) {
    const auto& s = batch.seq[static_cast<std::size_t>(c * batch.m + i)];
    for (int t = 0; t < batch.t; ++t)
      for (int j = 0; j < kFeatureDims; ++j)
        mean->values[static_cast<std::size_t>(j)] += s->values[static_cast<std::size_t>(t * kFeatureDims + j)];
  }
  const double count = static_cast<double>(batch.m) * static_cast<double>(batch.t);
  for (auto& x : mean->values) x /= count;
  return mean;
}

// ---------------------------------------------------------------------------
// configuration and log
// ---------------------------------------------------------------------------

struct TrainConfig {
  int n = 8;
  int m = 8;
  int t = 96;
  double lr_tid = 1e-4;
  double lr_gen = 1e-5;
  double lambda_cycle = 1.0;
  double lambda_inv = 0.001;
  double tau = 0.08;
  int phase1_epochs = 300;
  int phase2_epochs = 100;
  int iterations_per_epoch = 2500;
  int val_batches = 4;
  std::uint64_t seed = 1;
  bool adv_full_grid = true;  // all M expression sources per (target, other) pair
  TidConfig tid = default_tid_config();
  GenConfig gen = default_gen_config();

  void validate() const {
    if (n < 2 || m < 2) throw ConfigError("train config: need n >= 2 and m >= 2");
    if (t < 1) throw ConfigError("train config: window length must be positive");
    if (!(lr_tid > 0.0) || !(lr_gen > 0.0)) throw ConfigError("train config: learning rates must be positive");
    if (!(lambda_cycle >= 0.0) || !(lambda_inv >= 0.0))
      throw ConfigError("train config: loss weights must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("train config: temperature must be positive");
    if (phase1_epochs < 0 || phase2_epochs < 0 || iterations_per_epoch < 1 || val_batches < 1)
      throw ConfigError("train config: invalid schedule");
    motionid::validate(tid);
    motionid::validate(gen);
  }
};

// CPU-scale preset: smaller batches, shorter windows, narrow trunks; the
// dilation schedule (and receptive field) is unchanged.
inline TrainConfig compact_train_config() {
  TrainConfig cfg;
  cfg.n = 4;
  cfg.m = 4;
  cfg.t = 64;
  cfg.phase1_epochs = 30;
  cfg.phase2_epochs = 6;
  cfg.iterations_per_epoch = 50;
  cfg.lr_gen = 1e-4;
  cfg.lambda_inv = 0.01;
  cfg.adv_full_grid = false;
  cfg.tid = compact_tid_config();
  cfg.gen = compact_gen_config();
  return cfg;
}

struct IterRecord {
  int phase = 0;
  int iteration = 0;  // global within its phase
  double rec = std::numeric_limits<double>::quiet_NaN();
  double inv = std::numeric_limits<double>::quiet_NaN();
  double adv = std::numeric_limits<double>::quiet_NaN();
  double cycle = std::numeric_limits<double>::quiet_NaN();
};

struct ValRecord {
  int phase = 0;
  int epoch = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
  std::vector<IterRecord> iters;
  std::vector<ValRecord> vals;

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("train log: cannot open " + path.string());
    f << "kind\tphase\tindex\trec\tinv\tadv\tcycle\taccuracy\n";
    auto num = [](double x) {
      if (std::isnan(x)) return std::string("-");
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", x);
      return std::string(buf);
    };
    for (const auto& r : iters)
      f << "iter\t" << r.phase << '\t' << r.iteration << '\t' << num(r.rec) << '\t' << num(r.inv)
        << '\t' << num(r.adv) << '\t' << num(r.cycle) << "\t-\n";
    for (const auto& v : vals)
      f << "val\t" << v.phase << '\t' << v.epoch << "\t-\t-\t-\t-\t" << num(v.accuracy) << '\n';
    if (!f) throw FormatError("train log: write failed for " + path.string());
  }

  static TrainLog load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("train log: cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw FormatError("train log: empty file");
    auto num = [](const std::string& s) {
      return s == "-" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };
    TrainLog log;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::vector<std::string> parts;
      std::size_t start = 0;
      for (std::size_t i = 0; i <= line.size(); ++i)
        if (i == line.size() || line[i] == '\t') {
          parts.push_back(line.substr(start, i - start));
          start = i + 1;
        }
      if (parts.size() != 8) throw FormatError("train log: malformed row");
      if (parts[0] == "iter") {
        IterRecord r;
        r.phase = std::stoi(parts[1]);
        r.iteration = std::stoi(parts[2]);
        r.rec = num(parts[3]);
        r.inv = num(parts[4]);
        r.adv = num(parts[5]);
        r.cycle = num(parts[6]);
        log.iters.push_back(r);
      } else if (parts[0] == "val") {
        ValRecord v;
        v.phase = std::stoi(parts[1]);
        v.epoch = std::stoi(parts[2]);
        v.accuracy = num(parts[7]);
        log.vals.push_back(v);
      } else {
        throw FormatError("train log: unknown row kind '" + parts[0] + "'");
      }
    }
    return log;
  }
};

// Raised when a loss stops being finite; carries the most recent trustworthy
// parameters and the log up to the failure.
class DivergenceError : public std::runtime_error {
 public:
  ParamSet last_good;
  TrainLog log;
  DivergenceError(const std::string& what, ParamSet lg, TrainLog l)
      : std::runtime_error(what), last_good(std::move(lg)), log(std::move(l)) {}
};

// ---------------------------------------------------------------------------
// training state
// ---------------------------------------------------------------------------

struct TrainState {
  TrainConfig cfg;
  FeatureStats stats;
  ParamSet tid;
  AdamState adam_tid;
  ParamSet gen;  // empty until phase 2 is enabled
  AdamState adam_gen;
  ParamSet best_tid;  // phase-1 validation selection
  double best_accuracy = -1.0;
  int best_epoch = -1;
  int phase = 1;
  int completed_epochs_p1 = 0;
  int completed_epochs_p2 = 0;
  TrainLog log;
};

namespace detail {

// stream tags for derive_seed
inline constexpr std::uint64_t kStreamPhase1 = 1;
inline constexpr std::uint64_t kStreamPhase2 = 2;
inline constexpr std::uint64_t kStreamValidation = 3;

}  // namespace detail

inline TrainState init_train_state(const TrainConfig& cfg, const FeatureStats& stats) {
  cfg.validate();
  TrainState st;
  st.cfg = cfg;
  st.stats = stats;
  st.tid = tid_init(cfg.tid, derive_seed(cfg.seed, fnv1a64("tid-init")));
  st.adam_tid = AdamState::init(st.tid);
  return st;
}

// Mean identification accuracy over fixed validation batches; the batch
// streams depend only on (seed, batch index), so every epoch scores against
// identical validation windows.
inline double validation_accuracy(const TidConfig& tid_cfg, const ParamSet& tid,
                                  const Dataset& val, const TrainConfig& cfg) {
  NoGrad guard;
  double total = 0.0;
  for (int b = 0; b < cfg.val_batches; ++b) {
    Rng rng(derive_seed(cfg.seed, detail::kStreamValidation, static_cast<std::uint64_t>(b)));
    TrainingBatch batch = sample_batch(val, cfg.n, cfg.m, cfg.t, rng);
    BatchEmbeddings emb = embed_batch(tid_cfg, tid, batch.seq, cfg.n, cfg.m);
    total += identification_accuracy(emb, cfg.tau);
  }
  return total / static_cast<double>(cfg.val_batches);
}

namespace detail {

inline void ensure_finite(double x, const char* what, const TrainState& st) {
  if (std::isfinite(x)) return;
  ParamSet last = st.best_epoch >= 0 ? deep_copy(st.best_tid) : deep_copy(st.tid);
  throw DivergenceError(std::string(what) + " became non-finite", std::move(last), st.log);
}

// Expression-source grid for one adversarial iteration: (target identity c,
// source sequence index k*m+j) for every other identity k. With the full
// grid every source video contributes; otherwise one random video per pair.
inline std::vector<std::pair<int, int>> make_adv_grid(int n, int m, bool full, Rng& rng) {
  std::vector<std::pair<int, int>> grid;
  for (int c = 0; c < n; ++c)
    for (int k = 0; k < n; ++k) {
      if (k == c) continue;
      if (full)
        for (int j = 0; j < m; ++j) grid.emplace_back(c, k * m + j);
      else
        grid.emplace_back(c, k * m + static_cast<int>(rng.below(static_cast<std::uint64_t>(m))));
    }
  return grid;
}

struct TidStepOutcome {
  double rec = std::numeric_limits<double>::quiet_NaN();
  double inv = std::numeric_limits<double>::quiet_NaN();
};

struct GenStepOutcome {
  double adv = std::numeric_limits<double>::quiet_NaN();
  double cycle = std::numeric_limits<double>::quiet_NaN();
};

// Embedding-network update of one phase-2 iteration: metric loss on the real
// batch plus the weighted push-down of generated-sequence probabilities. The
// generator is treated as a constant.
inline TidStepOutcome phase2_update_tid(TrainState& st, const TrainingBatch& batch,
                                        const std::vector<TensorPtr>& means,
                                        const std::vector<std::pair<int, int>>& grid) {
  const TrainConfig& cfg = st.cfg;
  TidStepOutcome out;
  set_requires_grad(st.gen, false);
  BatchEmbeddings emb = embed_batch(cfg.tid, st.tid, batch.seq, cfg.n, cfg.m);
  TensorPtr rec = rec_loss(batch_probabilities(emb, cfg.tau));
  out.rec = rec->item();
  ensure_finite(out.rec, "phase-2 metric loss", st);
  TensorPtr loss = rec;
  if (cfg.lambda_inv > 0.0) {
    AdversarialBatch ab;
    for (const auto& [c, src] : grid) {
      TensorPtr fake = gen_forward(cfg.gen, st.gen, batch.seq[static_cast<std::size_t>(src)],
                                   means[static_cast<std::size_t>(c)]);
      ab.emb.push_back(tid_embed_sequence(cfg.tid, st.tid, fake));
      ab.target.push_back(c);
    }
    TensorPtr inv = inv_loss(adv_probabilities(ab, emb, cfg.tau));
    out.inv = inv->item();
    ensure_finite(out.inv, "phase-2 invisibility loss", st);
    loss = total_tid_loss(rec, inv, cfg.lambda_inv);
  }
  backward(loss);
  adam_step(st.tid, st.adam_tid, cfg.lr_tid);
  zero_grad(st.tid);
  set_requires_grad(st.gen, true);
  return out;
}

// Generator update of one phase-2 iteration, with the embedding network
// frozen; generated features are recomputed against the just-updated
// embedding network.
inline GenStepOutcome phase2_update_gen(TrainState& st, const TrainingBatch& batch,
                                        const std::vector<TensorPtr>& means,
                                        const std::vector<std::pair<int, int>>& grid) {
  const TrainConfig& cfg = st.cfg;
  GenStepOutcome out;
  set_requires_grad(st.tid, false);
  BatchEmbeddings real;
  {
    NoGrad guard;  // real embeddings are constants for the generator update
    real = embed_batch(cfg.tid, st.tid, batch.seq, cfg.n, cfg.m);
  }
  AdversarialBatch ab;
  std::vector<TensorPtr> cycle_terms;
  for (const auto& [c, src] : grid) {
    const TensorPtr& x = batch.seq[static_cast<std::size_t>(src)];
    TensorPtr fake = gen_forward(cfg.gen, st.gen, x, means[static_cast<std::size_t>(c)]);
    ab.emb.push_back(tid_embed_sequence(cfg.tid, st.tid, fake));
    ab.target.push_back(c);
    if (cfg.lambda_cycle > 0.0) {
      const int source_identity = src / batch.m;
      TensorPtr back = gen_forward(cfg.gen, st.gen, fake, means[static_cast<std::size_t>(source_identity)]);
      cycle_terms.push_back(sqnorm(sub(x, back)));
    }
  }
  TensorPtr adv = adv_loss(adv_probabilities(ab, real, cfg.tau));
  out.adv = adv->item();
  ensure_finite(out.adv, "phase-2 adversarial loss", st);
  TensorPtr loss = adv;
  if (cfg.lambda_cycle > 0.0) {
    TensorPtr cycle = sum(concat_flat(cycle_terms));
    out.cycle = cycle->item();
    ensure_finite(out.cycle, "phase-2 cycle loss", st);
    loss = total_generator_loss(adv, cycle, cfg.lambda_cycle);
  }
  backward(loss);
  adam_step(st.gen, st.adam_gen, cfg.lr_gen);
  zero_grad(st.gen);
  set_requires_grad(st.tid, true);
  return out;
}

}  // namespace detail

// One phase-1 iteration: sample, embed, metric loss, ADAM step.
inline IterRecord phase1_iteration(TrainState& st, const Dataset& train, Rng& rng,
                                   int global_iter) {
  const TrainConfig& cfg = st.cfg;
  TrainingBatch batch = sample_batch(train, cfg.n, cfg.m, cfg.t, rng);
  BatchEmbeddings emb = embed_batch(cfg.tid, st.tid, batch.seq, cfg.n, cfg.m);
  TensorPtr loss = rec_loss(batch_probabilities(emb, cfg.tau));
  IterRecord rec;
  rec.phase = 1;
  rec.iteration = global_iter;
  rec.rec = loss->item();
  detail::ensure_finite(rec.rec, "phase-1 metric loss", st);
  backward(loss);
  adam_step(st.tid, st.adam_tid, cfg.lr_tid);
  zero_grad(st.tid);
  return rec;
}

// One phase-2 iteration: embedding-network step, then generator step on
// freshly generated features.
inline IterRecord phase2_iteration(TrainState& st, const Dataset& train, Rng& rng,
                                   int global_iter) {
  const TrainConfig& cfg = st.cfg;
  TrainingBatch batch = sample_batch(train, cfg.n, cfg.m, cfg.t, rng);
  std::vector<TensorPtr> means;
  means.reserve(static_cast<std::size_t>(cfg.n));
  for (int c = 0; c < cfg.n; ++c) means.push_back(batch_identity_mean(batch, c));
  auto grid = detail::make_adv_grid(cfg.n, cfg.m, cfg.adv_full_grid, rng);
  auto tid_out = detail::phase2_update_tid(st, batch, means, grid);
  auto gen_out = detail::phase2_update_gen(st, batch, means, grid);
  IterRecord rec;
  rec.phase = 2;
  rec.iteration = global_iter;
  rec.rec = tid_out.rec;
  rec.inv = tid_out.inv;
  rec.adv = gen_out.adv;
  rec.cycle = gen_out.cycle;
  return rec;
}

// One phase-1 epoch: iterations, then validation scoring and best-model
// tracking (strictly-greater accuracy wins, so ties keep the earlier epoch).
inline void run_phase1_epoch(TrainState& st, const Dataset& train, const Dataset& val) {
  const TrainConfig& cfg = st.cfg;
  const int epoch = st.completed_epochs_p1;
  for (int i = 0; i < cfg.iterations_per_epoch; ++i) {
    const int global_iter = epoch * cfg.iterations_per_epoch + i;
    Rng rng(derive_seed(cfg.seed, detail::kStreamPhase1, static_cast<std::uint64_t>(global_iter)));
    st.log.iters.push_back(phase1_iteration(st, train, rng, global_iter));
  }
  const double acc = validation_accuracy(cfg.tid, st.tid, val, cfg);
  st.log.vals.push_back({1, epoch, acc});
  if (acc > st.best_accuracy) {
    st.best_accuracy = acc;
    st.best_epoch = epoch;
    st.best_tid = deep_copy(st.tid);
  }
  ++st.completed_epochs_p1;
}

inline void train_phase1(TrainState& st, const Dataset& train, const Dataset& val) {
  while (st.completed_epochs_p1 < st.cfg.phase1_epochs) run_phase1_epoch(st, train, val);
  if (st.best_epoch < 0) {  // phase1_epochs == 0: keep the initial model
    st.best_tid = deep_copy(st.tid);
    st.best_accuracy = validation_accuracy(st.cfg.tid, st.tid, val, st.cfg);
    st.best_epoch = 0;
  }
}

// Switches to the adversarial phase: training continues from the best
// phase-1 model, and the generator starts as the identity map.
inline void enable_phase2(TrainState& st) {
  if (st.phase == 2) return;
  if (st.best_epoch >= 0) {
    st.tid = deep_copy(st.best_tid);
    st.adam_tid = AdamState::init(st.tid);
  }
  st.gen = gen_init(st.cfg.gen, derive_seed(st.cfg.seed, fnv1a64("gen-init")));
  st.adam_gen = AdamState::init(st.gen);
  st.phase = 2;
}

inline void run_phase2_epoch(TrainState& st, const Dataset& train, const Dataset& val) {
  if (st.phase != 2) throw ConfigError("run_phase2_epoch: phase 2 not enabled");
  const TrainConfig& cfg = st.cfg;
  const int epoch = st.completed_epochs_p2;
  for (int i = 0; i < cfg.iterations_per_epoch; ++i) {
    const int global_iter = epoch * cfg.iterations_per_epoch + i;
    Rng rng(derive_seed(cfg.seed, detail::kStreamPhase2, static_cast<std::uint64_t>(global_iter)));
    st.log.iters.push_back(phase2_iteration(st, train, rng, global_iter));
  }
  st.log.vals.push_back({2, epoch, validation_accuracy(cfg.tid, st.tid, val, cfg)});
  ++st.completed_epochs_p2;
}

// Fixed-length adversarial phase; no model selection, the final parameters
// stand.
inline void train_phase2(TrainState& st, const Dataset& train, const Dataset& val) {
  enable_phase2(st);
  while (st.completed_epochs_p2 < st.cfg.phase2_epochs) run_phase2_epoch(st, train, val);
}

// ---------------------------------------------------------------------------
// state and model serialization
// ---------------------------------------------------------------------------

namespace detail {

inline TensorPtr pack_vector(const std::vector<double>& v) {
  return Tensor::from_values({static_cast<int>(v.size())}, std::vector<double>(v));
}

inline std::vector<double> tid_config_vector(const TidConfig& c) {
  std::vector<double> v{static_cast<double>(c.in_channels), static_cast<double>(c.hidden_channels),
                        static_cast<double>(c.out_channels), static_cast<double>(c.groupnorm_groups),
                        c.leaky_slope, static_cast<double>(c.blocks.size())};
  for (const auto& b : c.blocks) {
    v.push_back(static_cast<double>(b.kernel));
    v.push_back(static_cast<double>(b.dilation));
  }
  return v;
}

inline TidConfig tid_config_from_vector(const std::vector<double>& v) {
  if (v.size() < 6) throw FormatError("checkpoint: malformed embedding-network config");
  TidConfig c;
  c.in_channels = static_cast<int>(v[0]);
  c.hidden_channels = static_cast<int>(v[1]);
  c.out_channels = static_cast<int>(v[2]);
  c.groupnorm_groups = static_cast<int>(v[3]);
  c.leaky_slope = v[4];
  const int nb = static_cast<int>(v[5]);
  if (v.size() != 6 + 2 * static_cast<std::size_t>(nb))
    throw FormatError("checkpoint: malformed embedding-network config");
  c.blocks.clear();
  for (int i = 0; i < nb; ++i)
    c.blocks.push_back({static_cast<int>(v[6 + 2 * static_cast<std::size_t>(i)]),
                        static_cast<int>(v[7 + 2 * static_cast<std::size_t>(i)])});
  return c;
}

inline std::vector<double> gen_config_vector(const GenConfig& c) {
  return {static_cast<double>(c.feature_channels), static_cast<double>(c.hidden_channels),
          static_cast<double>(c.residual_blocks), static_cast<double>(c.groupnorm_groups),
          c.leaky_slope};
}

inline GenConfig gen_config_from_vector(const std::vector<double>& v) {
  if (v.size() != 5) throw FormatError("checkpoint: malformed generator config");
  GenConfig c;
  c.feature_channels = static_cast<int>(v[0]);
  c.hidden_channels = static_cast<int>(v[1]);
  c.residual_blocks = static_cast<int>(v[2]);
  c.groupnorm_groups = static_cast<int>(v[3]);
  c.leaky_slope = v[4];
  return c;
}

inline void put_params(std::map<std::string, TensorPtr>& out, const std::string& prefix,
                       const ParamSet& params) {
  for (const auto& [name, t] : params)
    out[prefix + name] = Tensor::from_values(t->dims, t->values);
}

inline ParamSet take_params(const std::map<std::string, TensorPtr>& in, const std::string& prefix,
                            bool requires_grad) {
  ParamSet params;
  for (const auto& [name, t] : in)
    if (name.size() > prefix.size() && name.compare(0, prefix.size(), prefix) == 0)
      params[name.substr(prefix.size())] = Tensor::from_values(t->dims, t->values, requires_grad);
  return params;
}

inline void put_adam(std::map<std::string, TensorPtr>& out, const std::string& prefix,
                     const AdamState& st) {
  for (const auto& [name, v] : st.m)
    out[prefix + "m." + name] = Tensor::from_values({static_cast<int>(v.size())}, std::vector<double>(v));
  for (const auto& [name, v] : st.v)
    out[prefix + "v." + name] = Tensor::from_values({static_cast<int>(v.size())}, std::vector<double>(v));
}

inline AdamState take_adam(const std::map<std::string, TensorPtr>& in, const std::string& prefix,
                           const ParamSet& params, std::int64_t step_count) {
  AdamState st = AdamState::init(params);
  st.step_count = step_count;
  for (auto& [name, slot] : st.m) {
    auto it = in.find(prefix + "m." + name);
    if (it == in.end()) throw FormatError("checkpoint: missing optimizer tensor for " + name);
    slot = it->second->values;
  }
  for (auto& [name, slot] : st.v) {
    auto it = in.find(prefix + "v." + name);
    if (it == in.end()) throw FormatError("checkpoint: missing optimizer tensor for " + name);
    slot = it->second->values;
  }
  return st;
}

inline std::vector<double> stats_vector(const std::array<double, kFeatureDims>& a) {
  return std::vector<double>(a.begin(), a.end());
}

inline std::array<double, kFeatureDims> stats_array(const std::vector<double>& v) {
  if (v.size() != kFeatureDims) throw FormatError("checkpoint: malformed statistics");
  std::array<double, kFeatureDims> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

}  // namespace detail

inline void save_train_state(const std::filesystem::path& path, const TrainState& st) {
  std::map<std::string, TensorPtr> t;
  const TrainConfig& c = st.cfg;
  t["config.trainer"] = detail::pack_vector(
      {static_cast<double>(c.n), static_cast<double>(c.m), static_cast<double>(c.t), c.lr_tid,
       c.lr_gen, c.lambda_cycle, c.lambda_inv, c.tau, static_cast<double>(c.phase1_epochs),
       static_cast<double>(c.phase2_epochs), static_cast<double>(c.iterations_per_epoch),
       static_cast<double>(c.val_batches), static_cast<double>(c.seed >> 32),
       static_cast<double>(c.seed & 0xFFFFFFFFULL), c.adv_full_grid ? 1.0 : 0.0});
  t["config.tid"] = detail::pack_vector(detail::tid_config_vector(c.tid));
  t["config.gen"] = detail::pack_vector(detail::gen_config_vector(c.gen));
  t["meta.state"] = detail::pack_vector(
      {static_cast<double>(st.phase), static_cast<double>(st.completed_epochs_p1),
       static_cast<double>(st.completed_epochs_p2), static_cast<double>(st.best_epoch),
       st.best_accuracy, static_cast<double>(st.adam_tid.step_count),
       static_cast<double>(st.adam_gen.step_count), st.best_tid.empty() ? 0.0 : 1.0});
  t["stats.mean"] = detail::pack_vector(detail::stats_vector(st.stats.mean));
  t["stats.sd"] = detail::pack_vector(detail::stats_vector(st.stats.sd));
  detail::put_params(t, "tid.", st.tid);
  detail::put_adam(t, "adam_tid.", st.adam_tid);
  if (!st.best_tid.empty()) detail::put_params(t, "best.", st.best_tid);
  if (st.phase == 2) {
    detail::put_params(t, "gen.", st.gen);
    detail::put_adam(t, "adam_gen.", st.adam_gen);
  }
  save_tensors(path, t);
}

inline TrainState load_train_state(const std::filesystem::path& path) {
  auto t = load_tensors(path);
  auto need = [&](const std::string& name) -> const std::vector<double>& {
    auto it = t.find(name);
    if (it == t.end()) throw FormatError("checkpoint: missing " + name);
    return it->second->values;
  };
  TrainState st;
  const auto& tc = need("config.trainer");
  if (tc.size() != 15) throw FormatError("checkpoint: malformed trainer config");
  st.cfg.n = static_cast<int>(tc[0]);
  st.cfg.m = static_cast<int>(tc[1]);
  st.cfg.t = static_cast<int>(tc[2]);
  st.cfg.lr_tid = tc[3];
  st.cfg.lr_gen = tc[4];
  st.cfg.lambda_cycle = tc[5];
  st.cfg.lambda_inv = tc[6];
  st.cfg.tau = tc[7];
  st.cfg.phase1_epochs = static_cast<int>(tc[8]);
  st.cfg.phase2_epochs = static_cast<int>(tc[9]);
  st.cfg.iterations_per_epoch = static_cast<int>(tc[10]);
  st.cfg.val_batches = static_cast<int>(tc[11]);
  st.cfg.seed = (static_cast<std::uint64_t>(tc[12]) << 32) | static_cast<std::uint64_t>(tc[13]);
  st.cfg.adv_full_grid = tc[14] != 0.0;
  st.cfg.tid = detail::tid_config_from_vector(need("config.tid"));
  st.cfg.gen = detail::gen_config_from_vector(need("config.gen"));
  st.cfg.validate();
  const auto& ms = need("meta.state");
  if (ms.size() != 8) throw FormatError("checkpoint: malformed state record");
  st.phase = static_cast<int>(ms[0]);
  st.completed_epochs_p1 = static_cast<int>(ms[1]);
  st.completed_epochs_p2 = static_cast<int>(ms[2]);
  st.best_epoch = static_cast<int>(ms[3]);
  st.best_accuracy = ms[4];
  st.stats.mean = detail::stats_array(need("stats.mean"));
  st.stats.sd = detail::stats_array(need("stats.sd"));
  st.tid = detail::take_params(t, "tid.", true);
  if (st.tid.empty()) throw FormatError("checkpoint: no embedding-network parameters");
  st.adam_tid = detail::take_adam(t, "adam_tid.", st.tid, static_cast<std::int64_t>(ms[5]));
  if (ms[7] != 0.0) st.best_tid = detail::take_params(t, "best.", true);
  if (st.phase == 2) {
    st.gen = detail::take_params(t, "gen.", true);
    if (st.gen.empty()) throw FormatError("checkpoint: no generator parameters");
    st.adam_gen = detail::take_adam(t, "adam_gen.", st.gen, static_cast<std::int64_t>(ms[6]));
  }
  return st;
}

// Deployment model: embedding-network parameters plus the feature statistics
// and architecture needed to reproduce embeddings exactly.
struct Model {
  TidConfig cfg;
  ParamSet params;
  FeatureStats stats;
};

inline void save_model(const std::filesystem::path& path, const Model& model) {
  std::map<std::string, TensorPtr> t;
  t["config.tid"] = detail::pack_vector(detail::tid_config_vector(model.cfg));
  t["stats.mean"] = detail::pack_vector(detail::stats_vector(model.stats.mean));
  t["stats.sd"] = detail::pack_vector(detail::stats_vector(model.stats.sd));
  detail::put_params(t, "tid.", model.params);
  save_tensors(path, t);
}

inline Model load_model(const std::filesystem::path& path) {
  auto t = load_tensors(path);
  auto need = [&](const std::string& name) -> const std::vector<double>& {
    auto it = t.find(name);
    if (it == t.end()) throw FormatError("model: missing " + name);
    return it->second->values;
  };
  Model m;
  m.cfg = detail::tid_config_from_vector(need("config.tid"));
  m.stats.mean = detail::stats_array(need("stats.mean"));
  m.stats.sd = detail::stats_array(need("stats.sd"));
  m.params = detail::take_params(t, "tid.", false);
  if (m.params.empty()) throw FormatError("model: no parameters");
  return m;
}

// Embeds a raw (unstandardized) sequence with a deployment model.
inline EmbeddingSequence model_embed(const Model& model, const FeatureSequence& seq) {
  return tid_embed(model.cfg, model.params, standardize(seq, model.stats));
}

}  // namespace motionid
