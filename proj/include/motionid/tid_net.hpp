#pragma once
// Temporal identity network: a dilated 1-d residual conv net mapping a T x 62
// motion-feature sequence to T unit-norm embedding vectors. All normalization
// inside the network is frame-local, so the influence of one input frame on
// the output is bounded exactly by the analytic receptive field.

#include <cstdint>
#include <string>
#include <vector>

#include <motionid/features.hpp>
#include <motionid/nn_ops.hpp>
#include <motionid/optim.hpp>
#include <motionid/rng.hpp>

namespace motionid {

struct TidBlock {
  int kernel = 3;
  int dilation = 1;
};

struct TidConfig {
  int in_channels = kFeatureDims;
  int hidden_channels = 512;
  int out_channels = 128;
  std::vector<TidBlock> blocks;
  int groupnorm_groups = 32;
  double leaky_slope = 0.2;
};

// Canonical configuration: entry 1x1 conv 62->512, nine residual blocks with
// dilations 1,1,2,2,4,4,8,2,1 (kernel 3), exit 1x1 conv 512->128.
inline TidConfig default_tid_config() {
  TidConfig cfg;
  for (int d : {1, 1, 2, 2, 4, 4, 8, 2, 1}) cfg.blocks.push_back({3, d});
  return cfg;
}

// Same depth and dilation schedule (hence the same receptive field) with a
// narrower trunk; suitable for CPU-scale experiments.
inline TidConfig compact_tid_config(int hidden = 64, int groups = 8) {
  TidConfig cfg = default_tid_config();
  cfg.hidden_channels = hidden;
  cfg.groupnorm_groups = groups;
  return cfg;
}

inline void validate(const TidConfig& cfg) {
  if (cfg.in_channels <= 0 || cfg.hidden_channels <= 0 || cfg.out_channels <= 0)
    throw ConfigError("tid config: channel counts must be positive");
  if (cfg.blocks.empty()) throw ConfigError("tid config: at least one residual block required");
  for (const TidBlock& b : cfg.blocks) {
    if (b.kernel < 1 || b.kernel % 2 == 0)
      throw ConfigError("tid config: kernel sizes must be odd and positive");
    if (b.dilation < 1) throw ConfigError("tid config: dilations must be >= 1");
  }
  if (cfg.groupnorm_groups < 1 || cfg.hidden_channels % cfg.groupnorm_groups != 0)
    throw ConfigError("tid config: groups must divide hidden channels");
  if (!(cfg.leaky_slope >= 0.0)) throw ConfigError("tid config: leaky slope must be >= 0");
}

// One input frame reaches 1 + sum (K-1)*D output frames: each dilated conv
// widens the window by (K-1)*D, the 1x1 convs add nothing.
inline int receptive_field(const TidConfig& cfg) {
  int rf = 1;
  for (const TidBlock& b : cfg.blocks) rf += (b.kernel - 1) * b.dilation;
  return rf;
}

inline int layer_count(const TidConfig& cfg) {
  return static_cast<int>(cfg.blocks.size()) + 2;  // entry + blocks + exit
}

namespace detail {

// He-style fan-in init. Every tensor draws from its own stream keyed by name,
// so parameter values do not depend on initialization order.
inline TensorPtr he_tensor(std::vector<int> dims, int fan_in, std::uint64_t seed,
                           const std::string& name) {
  Rng rng(derive_seed(seed, fnv1a64(name)));
  auto t = Tensor::create(std::move(dims), 0.0, true);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : t->values) x = sd * rng.normal();
  return t;
}

inline TensorPtr const_param(std::vector<int> dims, double value) {
  return Tensor::create(std::move(dims), value, true);
}

inline const TensorPtr& fetch(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ShapeError("missing parameter " + name);
  return it->second;
}

}  // namespace detail

inline ParamSet tid_init(const TidConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const int h = cfg.hidden_channels;
  ParamSet p;
  p["entry.w"] = detail::he_tensor({1, cfg.in_channels, h}, cfg.in_channels, seed, "entry.w");
  p["entry.b"] = detail::const_param({h}, 0.0);
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const std::string base = "block" + std::to_string(i) + ".";
    const int k = cfg.blocks[i].kernel;
    p[base + "gn1.gamma"] = detail::const_param({h}, 1.0);
    p[base + "gn1.beta"] = detail::const_param({h}, 0.0);
    p[base + "conv1.w"] = detail::he_tensor({k, h, h}, k * h, seed, base + "conv1.w");
    p[base + "conv1.b"] = detail::const_param({h}, 0.0);
    p[base + "gn2.gamma"] = detail::const_param({h}, 1.0);
    p[base + "gn2.beta"] = detail::const_param({h}, 0.0);
    p[base + "conv2.w"] = detail::he_tensor({1, h, h}, h, seed, base + "conv2.w");
    p[base + "conv2.b"] = detail::const_param({h}, 0.0);
  }
  p["head.gn.gamma"] = detail::const_param({h}, 1.0);
  p["head.gn.beta"] = detail::const_param({h}, 0.0);
  p["exit.w"] = detail::he_tensor({1, h, cfg.out_channels}, h, seed, "exit.w");
  p["exit.b"] = detail::const_param({cfg.out_channels}, 0.0);
  return p;
}

// Forward pass over a T x in_channels tensor; returns T x out_channels with
// unit-norm rows. Differentiable through both input and parameters.
inline TensorPtr tid_forward(const TidConfig& cfg, const ParamSet& params, const TensorPtr& input) {
  validate(cfg);
  if (input->rank() != 2 || input->cols() != cfg.in_channels)
    throw ShapeError("tid_forward: input must be T x in_channels");
  using detail::fetch;
  const int groups = cfg.groupnorm_groups;
  TensorPtr h = conv1d(input, fetch(params, "entry.w"), fetch(params, "entry.b"), 1);
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const std::string base = "block" + std::to_string(i) + ".";
    TensorPtr u = group_norm_local(h, groups, fetch(params, base + "gn1.gamma"),
                                   fetch(params, base + "gn1.beta"));
    u = leaky_relu(u, cfg.leaky_slope);
    u = conv1d(u, fetch(params, base + "conv1.w"), fetch(params, base + "conv1.b"),
               cfg.blocks[i].dilation);
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
  return l2_normalize_rows(out);
}

// Embedding entry point for sequence data, training and inference alike:
// the network reads temporally centered sequences (center_time), so content
// that is constant over the window — static geometry, recording biases —
// cannot key identity, and the embedding must be earned from dynamics.
// tid_forward stays the raw convolutional stack so its receptive-field
// analysis applies to it exactly.
inline TensorPtr tid_embed_sequence(const TidConfig& cfg, const ParamSet& params,
                                    const TensorPtr& seq) {
  return tid_forward(cfg, params, center_time(seq));
}

// Per-frame embedding vectors, flat row-major, with sequence metadata.
struct EmbeddingSequence {
  int dims = 0;
  std::vector<double> data;
  std::string identity_id;
  std::string video_id;
  std::string context;

  int frames() const { return dims == 0 ? 0 : static_cast<int>(data.size()) / dims; }
  const double* row(int t) const { return data.data() + static_cast<std::size_t>(t) * dims; }
};

inline TensorPtr sequence_tensor(const FeatureSequence& seq) {
  if (seq.frames.empty()) throw EmptyInputError("sequence_tensor: no frames");
  auto t = Tensor::create({static_cast<int>(seq.frames.size()), kFeatureDims});
  std::size_t e = 0;
  for (const FeatureFrame& f : seq.frames)
    for (double x : f.v) t->values[e++] = x;
  return t;
}

/// Inference entry point: no graph is built.
inline EmbeddingSequence tid_embed(const TidConfig& cfg, const ParamSet& params,
                                   const FeatureSequence& seq) {
  NoGrad guard;
  TensorPtr out = tid_embed_sequence(cfg, params, sequence_tensor(seq));
  EmbeddingSequence emb;
  emb.dims = cfg.out_channels;
  emb.data = out->values;
  emb.identity_id = seq.identity_id;
  emb.video_id = seq.video_id;
  emb.context = seq.context;
  return emb;
}

}  // namespace motionid
