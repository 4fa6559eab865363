#pragma once
// Synthetic population generator. Each identity owns static geometry (a
// 40-dim shape vector) and a motion signature: an oscillator bank over the
// 22 expression/pose channels with per-identity frequencies, amplitudes,
// phase couplings to a slow master oscillator, and noise levels. Recording
// contexts add a shape offset and a pose bias. Fakes either claim a target's
// shape over a driver's motion (face swap) or keep a subject's shape while
// regenerating motion from another identity's signature (reenactment).
//
// Every artifact is a pure function of (seed, tags), drawn from independent
// derived streams, so generation is reproducible file-by-file.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <motionid/features.hpp>
#include <motionid/rng.hpp>

namespace motionid {

inline constexpr int kMotionDims = kExpressionDims + kPoseDims;  // 22

struct MotionChannelSig {
  double freq = 0.0;      // cycles per frame
  double amp = 0.0;
  double coupling = 0.0;  // phase-modulation depth against the master oscillator
  double noise_sd = 0.0;
};

struct IdentitySpec {
  std::string identity_id;
  int index = -1;
  std::array<double, kShapeDims> shape_vec{};
  std::array<MotionChannelSig, kMotionDims> motion{};
  double master_freq = 0.0;
};

struct ContextSpec {
  std::string name;
  int index = -1;
  std::array<double, kShapeDims> shape_offset{};
  std::array<double, kPoseDims> pose_bias{};
};

namespace detail {

inline constexpr std::uint64_t kStreamIdentity = 11;
inline constexpr std::uint64_t kStreamContext = 12;
inline constexpr std::uint64_t kStreamVideo = 13;
inline constexpr std::uint64_t kStreamFake = 14;

inline std::string zero_padded(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03d", prefix, index);
  return buf;
}

}  // namespace detail

// Base frequencies are stratified across the band so every identity spreads
// its motion energy differently, then jittered per channel; amplitudes,
// couplings and noise levels are drawn per channel. Pose channels move with
// half the amplitude of expression channels.
inline IdentitySpec make_identity(std::uint64_t seed, int index) {
  Rng rng(derive_seed(seed, detail::kStreamIdentity, static_cast<std::uint64_t>(index)));
  IdentitySpec id;
  id.index = index;
  id.identity_id = detail::zero_padded("id", index);
  for (auto& s : id.shape_vec) s = rng.normal();
  id.master_freq = rng.uniform(0.01, 0.05);
  constexpr double lo = 0.06, hi = 0.40;
  for (int ch = 0; ch < kMotionDims; ++ch) {
    MotionChannelSig sig;
    const double base = lo + (hi - lo) * (ch + 0.5) / kMotionDims;
    sig.freq = std::clamp(base + 0.10 * rng.normal(), 0.02, 0.45);
    sig.amp = rng.uniform(0.5, 1.5) * (ch >= kExpressionDims ? 0.5 : 1.0);
    sig.coupling = rng.uniform(0.0, 0.4);
    sig.noise_sd = rng.uniform(0.01, 0.03);
    id.motion[static_cast<std::size_t>(ch)] = sig;
  }
  return id;
}

inline ContextSpec make_context(std::uint64_t seed, int index) {
  Rng rng(derive_seed(seed, detail::kStreamContext, static_cast<std::uint64_t>(index)));
  ContextSpec ctx;
  ctx.index = index;
  ctx.name = detail::zero_padded("ctx", index);
  for (auto& s : ctx.shape_offset) s = 0.1 * rng.normal();
  for (auto& p : ctx.pose_bias) p = 0.1 * rng.normal();
  return ctx;
}

// Trajectory synthesis with explicit phases; `rng` supplies only the
// per-frame noise. Channel ch at frame t:
//   amp * sin(2 pi f t + phase + coupling * sin(2 pi f_m t + master_phase))
// plus noise and, for pose channels, the context bias.
inline FeatureSequence render_video_with_phases(const IdentitySpec& id, const ContextSpec& ctx,
                                                int frames, float fps, const std::string& video_id,
                                                const std::array<double, kMotionDims>& phases,
                                                double master_phase, Rng& rng) {
  if (frames < 1) throw ConfigError("render_video: need at least one frame");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  FeatureSequence seq;
  seq.fps = fps;
  seq.identity_id = id.identity_id;
  seq.video_id = video_id;
  seq.context = ctx.name;
  seq.frames.resize(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    FeatureFrame& f = seq.frames[static_cast<std::size_t>(t)];
    for (int j = 0; j < kShapeDims; ++j)
      f.v[static_cast<std::size_t>(j)] =
          id.shape_vec[static_cast<std::size_t>(j)] + ctx.shape_offset[static_cast<std::size_t>(j)];
    const double master = std::sin(two_pi * id.master_freq * t + master_phase);
    for (int ch = 0; ch < kMotionDims; ++ch) {
      const MotionChannelSig& sig = id.motion[static_cast<std::size_t>(ch)];
      double x = sig.amp * std::sin(two_pi * sig.freq * t + phases[static_cast<std::size_t>(ch)] +
                                    sig.coupling * master);
      if (sig.noise_sd > 0.0) x += sig.noise_sd * rng.normal();
      if (ch >= kExpressionDims) x += ctx.pose_bias[static_cast<std::size_t>(ch - kExpressionDims)];
      f.v[static_cast<std::size_t>(kShapeDims + ch)] = x;
    }
  }
  return seq;
}

// Standard entry point: phases drawn first from `rng`, then noise.
inline FeatureSequence render_video(const IdentitySpec& id, const ContextSpec& ctx, int frames,
                                    float fps, const std::string& video_id, Rng& rng) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::array<double, kMotionDims> phases{};
  for (auto& p : phases) p = rng.uniform(0.0, two_pi);
  const double master_phase = rng.uniform(0.0, two_pi);
  return render_video_with_phases(id, ctx, frames, fps, video_id, phases, master_phase, rng);
}

// Claims the target's geometry over the driver's motion: shape channels are
// the target's shape vector exactly, motion channels are copied verbatim.
inline FeatureSequence face_swap(const IdentitySpec& target, const FeatureSequence& driver) {
  if (driver.identity_id == target.identity_id)
    throw SelfSwapError("face_swap: driver and target are both " + target.identity_id);
  FeatureSequence out = driver;
  out.identity_id = target.identity_id;
  for (FeatureFrame& f : out.frames)
    for (int j = 0; j < kShapeDims; ++j)
      f.v[static_cast<std::size_t>(j)] = target.shape_vec[static_cast<std::size_t>(j)];
  return out;
}

// Keeps the subject's geometry (shape channels untouched, frame by frame)
// and regenerates the motion channels from the driver's signature with fresh
// phases. No context bias is applied to the regenerated motion: the driving
// signal comes from outside the subject's recording context.
inline FeatureSequence reenact(const FeatureSequence& subject, const IdentitySpec& driver,
                               Rng& rng) {
  if (subject.identity_id == driver.identity_id)
    throw SelfReenactError("reenact: subject and driver are both " + driver.identity_id);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::array<double, kMotionDims> phases{};
  for (auto& p : phases) p = rng.uniform(0.0, two_pi);
  const double master_phase = rng.uniform(0.0, two_pi);
  FeatureSequence out = subject;
  for (std::size_t t = 0; t < out.frames.size(); ++t) {
    const double master =
        std::sin(two_pi * driver.master_freq * static_cast<double>(t) + master_phase);
    for (int ch = 0; ch < kMotionDims; ++ch) {
      const MotionChannelSig& sig = driver.motion[static_cast<std::size_t>(ch)];
      double x = sig.amp * std::sin(two_pi * sig.freq * static_cast<double>(t) +
                                    phases[static_cast<std::size_t>(ch)] + sig.coupling * master);
      if (sig.noise_sd > 0.0) x += sig.noise_sd * rng.normal();
      out.frames[t].v[static_cast<std::size_t>(kShapeDims + ch)] = x;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// benchmark construction
// ---------------------------------------------------------------------------

struct WorldConfig {
  int n_ids = 16;
  int vids_per_id = 8;
  int frames = 200;
  // One context per video by default: every repeat visit of an identity is a
  // fresh recording session, so static geometry never matches across a
  // positive pair and an embedder can only solve the task from motion.
  int contexts = 8;
  float fps = 25.0f;
  std::uint64_t seed = 7;
};

struct BenchmarkPaths {
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  std::filesystem::path test_manifest;
};

// Writes the full corpus under `out_dir`: real/<id>_<video>.idrf for every
// identity/video, fake/<id>_<kind><slot>.idrf for two face swaps and two
// reenactments per identity, plus train/val/test manifests. Train and val
// identity sets are disjoint (validation takes the last max(2, n/4)
// identities). Test references are each identity's first half of videos,
// held-out real tests the second half; video v records in context v mod
// contexts, so reference sets always span several contexts.
inline BenchmarkPaths build_benchmark(const std::filesystem::path& out_dir, const WorldConfig& wc) {
  if (wc.n_ids < 4) throw ConfigError("build_benchmark: need at least 4 identities");
  if (wc.vids_per_id < 4) throw ConfigError("build_benchmark: need at least 4 videos per identity");
  if (wc.contexts < 2) throw ConfigError("build_benchmark: need at least 2 contexts");
  if (wc.frames < 1) throw ConfigError("build_benchmark: need at least one frame");
  const int n_val = std::max(2, wc.n_ids / 4);
  const int n_train = wc.n_ids - n_val;
  if (n_train < 2) throw ConfigError("build_benchmark: identity count leaves no training split");

  std::filesystem::create_directories(out_dir / "real");
  std::filesystem::create_directories(out_dir / "fake");

  std::vector<IdentitySpec> ids;
  for (int c = 0; c < wc.n_ids; ++c) ids.push_back(make_identity(wc.seed, c));
  std::vector<ContextSpec> ctxs;
  for (int x = 0; x < wc.contexts; ++x) ctxs.push_back(make_context(wc.seed, x));

  std::vector<std::vector<FeatureSequence>> real(static_cast<std::size_t>(wc.n_ids));
  DatasetManifest train, val;
  train.base_dir = out_dir;
  val.base_dir = out_dir;
  TestManifest test;
  test.base_dir = out_dir;
  const int half = wc.vids_per_id / 2;

  for (int c = 0; c < wc.n_ids; ++c) {
    for (int v = 0; v < wc.vids_per_id; ++v) {
      const ContextSpec& ctx = ctxs[static_cast<std::size_t>(v % wc.contexts)];
      Rng rng(derive_seed(wc.seed, detail::kStreamVideo, static_cast<std::uint64_t>(c),
                          static_cast<std::uint64_t>(v)));
      std::string video_id = detail::zero_padded("v", v);
      FeatureSequence seq = render_video(ids[static_cast<std::size_t>(c)], ctx, wc.frames, wc.fps,
                                         video_id, rng);
      std::string rel = "real/" + seq.identity_id + "_" + video_id + ".idrf";
      write_sequence_file(out_dir / rel, seq);
      ManifestRecord rec{rel, seq.identity_id, video_id, ctx.name};
      (c < n_train ? train : val).records.push_back(rec);
      test.records.push_back({rel, seq.identity_id, video_id, ctx.name,
                              v < half ? "reference" : "test", "real", "-"});
      real[static_cast<std::size_t>(c)].push_back(std::move(seq));
    }
  }

  for (int c = 0; c < wc.n_ids; ++c) {
    const IdentitySpec& target = ids[static_cast<std::size_t>(c)];
    for (int s = 0; s < 2; ++s) {
      Rng rng(derive_seed(wc.seed, detail::kStreamFake, static_cast<std::uint64_t>(c),
                          static_cast<std::uint64_t>(s)));
      const int k = (c + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(wc.n_ids - 1)))) % wc.n_ids;
      const int dv = static_cast<int>(rng.below(static_cast<std::uint64_t>(wc.vids_per_id)));
      FeatureSequence fake = face_swap(target, real[static_cast<std::size_t>(k)][static_cast<std::size_t>(dv)]);
      fake.video_id = detail::zero_padded("swap", s);
      std::string rel = "fake/" + target.identity_id + "_" + fake.video_id + ".idrf";
      write_sequence_file(out_dir / rel, fake);
      test.records.push_back({rel, target.identity_id, fake.video_id, fake.context, "test", "fake",
                              "faceswap"});
    }
    for (int s = 0; s < 2; ++s) {
      Rng rng(derive_seed(wc.seed, detail::kStreamFake, static_cast<std::uint64_t>(c),
                          static_cast<std::uint64_t>(16 + s)));
      const int k = (c + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(wc.n_ids - 1)))) % wc.n_ids;
      const int sv = half + static_cast<int>(rng.below(static_cast<std::uint64_t>(wc.vids_per_id - half)));
      FeatureSequence fake = reenact(real[static_cast<std::size_t>(c)][static_cast<std::size_t>(sv)],
                                     ids[static_cast<std::size_t>(k)], rng);
      fake.video_id = detail::zero_padded("reen", s);
      std::string rel = "fake/" + target.identity_id + "_" + fake.video_id + ".idrf";
      write_sequence_file(out_dir / rel, fake);
      test.records.push_back({rel, target.identity_id, fake.video_id, fake.context, "test", "fake",
                              "reenactment"});
    }
  }

  BenchmarkPaths paths;
  paths.train_manifest = out_dir / "train.tsv";
  paths.val_manifest = out_dir / "val.tsv";
  paths.test_manifest = out_dir / "test.tsv";
  save_manifest(paths.train_manifest, train);
  save_manifest(paths.val_manifest, val);
  save_test_manifest(paths.test_manifest, test);
  return paths;
}

}  // namespace motionid
