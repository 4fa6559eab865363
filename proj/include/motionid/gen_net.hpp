#pragma once
// Frame-local generator: rewrites the appearance component of a motion
// feature stream toward a target identity while preserving the per-frame
// temporal pattern. Every convolution has temporal kernel size 1 and all
// normalization is frame-local, so output frame t depends only on input
// frame t and the target identity mean.

#include <cstdint>
#include <string>
#include <vector>

#include <motionid/features.hpp>
#include <motionid/nn_ops.hpp>
#include <motionid/tid_net.hpp>

namespace motionid {

struct GenConfig {
  int feature_channels = kFeatureDims;  // per-frame feature width (also output width)
  int hidden_channels = 512;
  int residual_blocks = 3;
  int groupnorm_groups = 32;
  double leaky_slope = 0.2;

  int in_channels() const { return 2 * feature_channels; }  // frame ++ identity mean
};

inline GenConfig default_gen_config() { return {}; }

inline GenConfig compact_gen_config(int hidden = 64, int groups = 8) {
  GenConfig cfg;
  cfg.hidden_channels = hidden;
  cfg.groupnorm_groups = groups;
  return cfg;
}

inline void validate(const GenConfig& cfg) {
  if (cfg.feature_channels <= 0 || cfg.hidden_channels <= 0)
    throw ConfigError("gen config: channel counts must be positive");
  if (cfg.residual_blocks < 1) throw ConfigError("gen config: at least one residual block");
  if (cfg.groupnorm_groups < 1 || cfg.hidden_channels % cfg.groupnorm_groups != 0)
    throw ConfigError("gen config: groups must divide hidden channels");
  if (!(cfg.leaky_slope >= 0.0)) throw ConfigError("gen config: leaky slope must be >= 0");
}

inline int layer_count(const GenConfig& cfg) { return cfg.residual_blocks + 2; }

// He-initialized trunk with a zero-initialized exit layer: a fresh generator
// is exactly the identity map.
inline ParamSet gen_init(const GenConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const int h = cfg.hidden_channels;
  ParamSet p;
  p["entry.w"] = detail::he_tensor({1, cfg.in_channels(), h}, cfg.in_channels(), seed, "entry.w");
  p["entry.b"] = detail::const_param({h}, 0.0);
  for (int i = 0; i < cfg.residual_blocks; ++i) {
    const std::string base = "block" + std::to_string(i) + ".";
    p[base + "gn1.gamma"] = detail::const_param({h}, 1.0);
    p[base + "gn1.beta"] = detail::const_param({h}, 0.0);
    p[base + "conv1.w"] = detail::he_tensor({1, h, h}, h, seed, base + "conv1.w");
    p[base + "conv1.b"] = detail::const_param({h}, 0.0);
    p[base + "gn2.gamma"] = detail::const_param({h}, 1.0);
    p[base + "gn2.beta"] = detail::const_param({h}, 0.0);
    p[base + "conv2.w"] = detail::he_tensor({1, h, h}, h, seed, base + "conv2.w");
    p[base + "conv2.b"] = detail::const_param({h}, 0.0);
  }
  p["head.gn.gamma"] = detail::const_param({h}, 1.0);
  p["head.gn.beta"] = detail::const_param({h}, 0.0);
  p["exit.w"] = detail::const_param({1, h, cfg.feature_channels}, 0.0);
  p["exit.b"] = detail::const_param({cfg.feature_channels}, 0.0);
  return p;
}

// Differentiable forward: frames is T x feature_channels, identity_mean is a
// feature_channels vector. Returns T x feature_channels.
inline TensorPtr gen_forward(const GenConfig& cfg, const ParamSet& params, const TensorPtr& frames,
                             const TensorPtr& identity_mean) {
  validate(cfg);
  if (frames->rank() != 2 || frames->cols() != cfg.feature_channels)
    throw ShapeError("gen_forward: frames must be T x feature_channels");
  if (identity_mean->rank() != 1 ||
      identity_mean->dims[0] != cfg.feature_channels)
    throw ShapeError("gen_forward: identity mean must be a feature vector");
  using detail::fetch;
  const int groups = cfg.groupnorm_groups;
  TensorPtr x = concat_cols(frames, broadcast_row(identity_mean, frames->rows()));
  TensorPtr h = conv1d(x, fetch(params, "entry.w"), fetch(params, "entry.b"), 1);
  for (int i = 0; i < cfg.residual_blocks; ++i) {
    const std::string base = "block" + std::to_string(i) + ".";
    TensorPtr u = group_norm_local(h, groups, fetch(params, base + "gn1.gamma"),
                                   fetch(params, base + "gn1.beta"));
    u = leaky_relu(u, cfg.leaky_slope);
    u = conv1d(u, fetch(params, base + "conv1.w"), fetch(params, base + "conv1.b"), 1);
    u = group_norm_local(u, groups, fetch(params, base + "gn2.gamma"),
                         fetch(params, base + "gn2.beta"));
    u = leaky_relu(u, cfg.leaky_slope);
    u = conv1d(u, fetch(params, base + "conv2.w"), fetch(params, base + "conv2.b"), 1);
    h = add(h, u);
  }
  TensorPtr u = group_norm_local(h, groups, fetch(params, "head.gn.gamma"),
                                 fetch(params, "head.gn.beta"));
  u = leaky_relu(u, cfg.leaky_slope);
  TensorPtr out = conv1d(u, fetch(params, "exit.w"), fetch(params, "exit.b"), 1);
  return add(out, frames);  // outer skip keeps the motion-carrying input
}

// Data-level entry point: motion (and everything temporal) from expr_source,
// appearance pulled toward identity_mean. No graph is built.
inline FeatureSequence generate(const GenConfig& cfg, const ParamSet& params,
                                const FeatureSequence& expr_source,
                                const FeatureFrame& identity_mean,
                                const std::string& identity_label = "") {
  NoGrad guard;
  TensorPtr frames = sequence_tensor(expr_source);
  auto mean = Tensor::create({kFeatureDims});
  for (int j = 0; j < kFeatureDims; ++j) mean->values[static_cast<std::size_t>(j)] = identity_mean.v[static_cast<std::size_t>(j)];
  TensorPtr out = gen_forward(cfg, params, frames, mean);
  FeatureSequence result;
  result.fps = expr_source.fps;
  result.identity_id = identity_label.empty() ? expr_source.identity_id : identity_label;
  result.video_id = expr_source.video_id;
  result.context = expr_source.context;
  result.frames.resize(expr_source.frames.size());
  std::size_t e = 0;
  for (FeatureFrame& f : result.frames)
    for (double& x : f.v) x = out->values[e++];
  return result;
}

}  // namespace motionid
