#pragma once
// Training objectives. A batch holds N identities x M videos of embeddings;
// the contrastive probability for a pivot frame compares its best match
// among same-identity sequences against all other-identity sequences, and
// every objective below is a sum of negative log probabilities or squared
// errors over such grids. Everything is computed in log space with max
// shifting; reduction orders are fixed for determinism.

#include <cmath>
#include <string>
#include <vector>

#include <motionid/gen_net.hpp>
#include <motionid/nn_ops.hpp>
#include <motionid/tid_net.hpp>

namespace motionid {

// ---------------------------------------------------------------------------
// batch containers
// ---------------------------------------------------------------------------

// Embeddings of a complete N x M grid, index (c, i) -> c*m + i, each T x d.
struct BatchEmbeddings {
  int n = 0;
  int m = 0;
  std::vector<TensorPtr> emb;

  const TensorPtr& at(int c, int i) const {
    return emb[static_cast<std::size_t>(c) * static_cast<std::size_t>(m) +
               static_cast<std::size_t>(i)];
  }
  int frames() const { return emb.empty() ? 0 : emb.front()->rows(); }
  int dims() const { return emb.empty() ? 0 : emb.front()->cols(); }

  void check() const {
    if (n < 1 || m < 1 || emb.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(m))
      throw ShapeError("batch embeddings: grid size mismatch");
    for (const auto& e : emb)
      if (e->rank() != 2 || e->rows() != frames() || e->cols() != dims())
        throw ShapeError("batch embeddings: inconsistent sequence shapes");
  }
};

inline BatchEmbeddings embed_batch(const TidConfig& cfg, const ParamSet& params,
                                   const std::vector<TensorPtr>& sequences, int n, int m) {
  if (sequences.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(m))
    throw ShapeError("embed_batch: expected n*m sequences");
  BatchEmbeddings out;
  out.n = n;
  out.m = m;
  out.emb.reserve(sequences.size());
  for (const auto& s : sequences) out.emb.push_back(tid_embed_sequence(cfg, params, s));
  out.check();
  return out;
}

// Embeddings of generated sequences, each tagged with the identity index
// whose appearance it claims.
struct AdversarialBatch {
  std::vector<TensorPtr> emb;
  std::vector<int> target;
};

// ---------------------------------------------------------------------------
// similarity and contrastive probabilities
// ---------------------------------------------------------------------------

// Similarity of one embedding vector against a whole sequence: the negated,
// temperature-scaled minimum squared distance over the sequence's frames.
inline TensorPtr similarity(const TensorPtr& pivot, const TensorPtr& other, double tau) {
  if (!(tau > 0.0)) throw ConfigError("similarity: temperature must be positive");
  if (pivot->rank() != 1) throw ShapeError("similarity: pivot must be a vector");
  if (other->rank() != 2 || other->cols() != pivot->dims[0])
    throw ShapeError("similarity: dimension mismatch");
  if (other->rows() < 1) throw EmptyInputError("similarity: empty sequence");
  auto d = pairwise_min_sqdist(reshape(pivot, {1, pivot->dims[0]}), other);
  return scale(d, -1.0 / tau);
}

// Log probabilities for a grid of pivots. `count` rows of `t` frames each,
// flattened row-major.
struct BatchProbabilities {
  int count = 0;
  int t = 0;
  TensorPtr log_p;

  std::vector<double> probabilities() const {
    std::vector<double> p(log_p->values.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_p->values[i]);
    return p;
  }

  // Wraps explicit probability values (no graph); the entry point for
  // injecting externally computed probabilities into the loss functions.
  static BatchProbabilities from_probabilities(const std::vector<double>& p, int count, int t) {
    if (p.size() != static_cast<std::size_t>(count) * static_cast<std::size_t>(t))
      throw ShapeError("from_probabilities: size mismatch");
    BatchProbabilities bp;
    bp.count = count;
    bp.t = t;
    std::vector<double> lp(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!(p[i] > 0.0) || !(p[i] < 1.0))
        throw DomainError("from_probabilities: probabilities must lie strictly in (0,1)");
      lp[i] = std::log(p[i]);
    }
    bp.log_p = Tensor::from_values({count * t}, std::move(lp));
    return bp;
  }
};

namespace detail {

// Per-frame similarity rows of one pivot sequence against a list of other
// sequences, stacked into an R x T matrix.
inline TensorPtr similarity_rows(const TensorPtr& pivot_seq,
                                 const std::vector<TensorPtr>& others, double tau) {
  std::vector<TensorPtr> rows;
  rows.reserve(others.size());
  for (const auto& o : others)
    rows.push_back(scale(pairwise_min_sqdist(pivot_seq, o), -1.0 / tau));
  return stack_rows(rows);
}

inline BatchProbabilities log_probabilities_from_rows(const std::vector<TensorPtr>& per_pivot,
                                                      int t) {
  BatchProbabilities bp;
  bp.count = static_cast<int>(per_pivot.size());
  bp.t = t;
  bp.log_p = concat_flat(per_pivot);
  return bp;
}

}  // namespace detail

// Contrastive probability of each pivot frame (c,i,t): numerator sums
// exp-similarities to the other videos of identity c, the denominator adds
// every video of every other identity.
inline BatchProbabilities batch_probabilities(const BatchEmbeddings& emb, double tau) {
  emb.check();
  if (emb.n < 2 || emb.m < 2)
    throw ConfigError("batch_probabilities: need at least 2 identities and 2 videos each");
  if (!(tau > 0.0)) throw ConfigError("batch_probabilities: temperature must be positive");
  std::vector<TensorPtr> per_pivot;
  per_pivot.reserve(static_cast<std::size_t>(emb.n) * static_cast<std::size_t>(emb.m));
  for (int c = 0; c < emb.n; ++c)
    for (int i = 0; i < emb.m; ++i) {
      std::vector<TensorPtr> same, all;
      for (int j = 0; j < emb.m; ++j)
        if (j != i) same.push_back(emb.at(c, j));
      all = same;
      for (int k = 0; k < emb.n; ++k) {
        if (k == c) continue;
        for (int j = 0; j < emb.m; ++j) all.push_back(emb.at(k, j));
      }
      auto num = logsumexp_cols(detail::similarity_rows(emb.at(c, i), same, tau));
      auto den = logsumexp_cols(detail::similarity_rows(emb.at(c, i), all, tau));
      per_pivot.push_back(sub(num, den));
    }
  return detail::log_probabilities_from_rows(per_pivot, emb.frames());
}

// Probability that each generated frame passes as its target identity:
// numerator over the target's real sequences, denominator over the whole
// real grid.
inline BatchProbabilities adv_probabilities(const AdversarialBatch& gen,
                                            const BatchEmbeddings& real, double tau) {
  real.check();
  if (real.n < 2 || real.m < 2)
    throw ConfigError("adv_probabilities: need at least 2 identities and 2 videos each");
  if (!(tau > 0.0)) throw ConfigError("adv_probabilities: temperature must be positive");
  if (gen.emb.empty()) throw EmptyInputError("adv_probabilities: no generated sequences");
  if (gen.emb.size() != gen.target.size())
    throw ShapeError("adv_probabilities: target labels do not match sequences");
  std::vector<TensorPtr> per_pivot;
  per_pivot.reserve(gen.emb.size());
  for (std::size_t g = 0; g < gen.emb.size(); ++g) {
    int c = gen.target[g];
    if (c < 0 || c >= real.n) throw ShapeError("adv_probabilities: target index out of range");
    if (gen.emb[g]->rank() != 2 || gen.emb[g]->cols() != real.dims() ||
        gen.emb[g]->rows() != real.frames())
      throw ShapeError("adv_probabilities: generated sequence shape mismatch");
    std::vector<TensorPtr> same, all;
    for (int j = 0; j < real.m; ++j) same.push_back(real.at(c, j));
    all.reserve(static_cast<std::size_t>(real.n) * static_cast<std::size_t>(real.m));
    all = same;
    for (int k = 0; k < real.n; ++k) {
      if (k == c) continue;
      for (int j = 0; j < real.m; ++j) all.push_back(real.at(k, j));
    }
    auto num = logsumexp_cols(detail::similarity_rows(gen.emb[g], same, tau));
    auto den = logsumexp_cols(detail::similarity_rows(gen.emb[g], all, tau));
    per_pivot.push_back(sub(num, den));
  }
  return detail::log_probabilities_from_rows(per_pivot, real.frames());
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace detail {

inline void check_log_probabilities(const BatchProbabilities& bp, const char* who) {
  if (!bp.log_p || bp.log_p->values.empty())
    throw EmptyInputError(std::string(who) + ": empty probabilities");
  // Strictly positive log probabilities are a caller error; non-finite values
  // flow through so the training loop's divergence guard can catch them.
  for (double lp : bp.log_p->values)
    if (lp > 0.0) throw DomainError(std::string(who) + ": probability above 1");
}

}  // namespace detail

// Sum of negative log probabilities (the metric-learning objective).
inline TensorPtr rec_loss(const BatchProbabilities& bp) {
  detail::check_log_probabilities(bp, "rec_loss");
  return neg(sum(bp.log_p));
}

// Same functional form, applied to generated-sequence probabilities: the
// generator drives these probabilities up.
inline TensorPtr adv_loss(const BatchProbabilities& bp) {
  detail::check_log_probabilities(bp, "adv_loss");
  return neg(sum(bp.log_p));
}

// Sum of -log(1 - p): the embedding network drives generated probabilities
// down. Requires p strictly below 1.
inline TensorPtr inv_loss(const BatchProbabilities& bp) {
  detail::check_log_probabilities(bp, "inv_loss");
  for (double lp : bp.log_p->values)
    if (lp == 0.0) throw DomainError("inv_loss: probability reached 1");
  return neg(sum(log1m_exp(bp.log_p)));
}

// Round-trip reconstruction error: map x through the generator toward
// identity c, map the result back toward its own identity i, compare.
inline TensorPtr cycle_loss(const GenConfig& cfg, const ParamSet& params, const TensorPtr& x,
                            const TensorPtr& mean_c, const TensorPtr& mean_i) {
  auto there = gen_forward(cfg, params, x, mean_c);
  auto back = gen_forward(cfg, params, there, mean_i);
  return sqnorm(sub(x, back));
}

inline TensorPtr total_tid_loss(const TensorPtr& rec, const TensorPtr& inv, double lambda_inv) {
  if (!(lambda_inv >= 0.0)) throw ConfigError("total_tid_loss: weight must be >= 0");
  return add(rec, scale(inv, lambda_inv));
}

inline TensorPtr total_generator_loss(const TensorPtr& adv, const TensorPtr& cycle,
                                      double lambda_cycle) {
  if (!(lambda_cycle >= 0.0)) throw ConfigError("total_generator_loss: weight must be >= 0");
  return add(adv, scale(cycle, lambda_cycle));
}

// ---------------------------------------------------------------------------
// identification accuracy (value-level, no graph)
// ---------------------------------------------------------------------------

namespace detail {

// min over frames of b of the squared distance to one frame of a
inline double min_sqdist_to_sequence(const double* a_row, const Tensor& b, int d) {
  double best = std::numeric_limits<double>::infinity();
  const int tb = b.dims[0];
  for (int u = 0; u < tb; ++u) {
    const double* b_row = b.values.data() + static_cast<std::size_t>(u) * static_cast<std::size_t>(d);
    double s = 0.0;
    for (int k = 0; k < d; ++k) {
      const double diff = a_row[k] - b_row[k];
      s += diff * diff;
    }
    if (s < best) best = s;
  }
  return best;
}

}  // namespace detail

// Fraction of pivot frames whose best same-identity similarity strictly
// exceeds every other-identity similarity. Ties count as failures.
inline double identification_accuracy(const BatchEmbeddings& emb, double tau) {
  emb.check();
  if (emb.n < 2 || emb.m < 2)
    throw ConfigError("identification_accuracy: need at least 2 identities and 2 videos each");
  if (!(tau > 0.0)) throw ConfigError("identification_accuracy: temperature must be positive");
  NoGrad guard;
  const int t_len = emb.frames(), d = emb.dims();
  long hits = 0, total = 0;
  for (int c = 0; c < emb.n; ++c)
    for (int i = 0; i < emb.m; ++i) {
      const Tensor& pivot = *emb.at(c, i);
      for (int t = 0; t < t_len; ++t) {
        const double* row = pivot.values.data() + static_cast<std::size_t>(t) * static_cast<std::size_t>(d);
        double best_same = std::numeric_limits<double>::infinity();
        for (int j = 0; j < emb.m; ++j)
          if (j != i) best_same = std::min(best_same, detail::min_sqdist_to_sequence(row, *emb.at(c, j), d));
        double best_other = std::numeric_limits<double>::infinity();
        for (int k = 0; k < emb.n; ++k) {
          if (k == c) continue;
          for (int j = 0; j < emb.m; ++j)
            best_other = std::min(best_other, detail::min_sqdist_to_sequence(row, *emb.at(k, j), d));
        }
        // larger similarity == smaller squared distance; strict comparison
        if (best_same < best_other) ++hits;
        ++total;
      }
    }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace motionid
