#pragma once
// Differentiable building blocks for the sequence networks. Layout
// conventions: activations are (frames x channels) row-major, conv kernels
// are (tap x in_channel x out_channel) so the innermost loops run over
// contiguous output channels.

#include <algorithm>
#include <cmath>
#include <vector>

#include <motionid/tensor.hpp>

namespace motionid {

// 1-d convolution over the frame axis, zero padded to keep the length, with
// dilation. input (T x Cin), kernel (K x Cin x Cout) with K odd, bias (Cout).
inline TensorPtr conv1d(const TensorPtr& input, const TensorPtr& kernel, const TensorPtr& bias,
                        int dilation = 1) {
  if (input->rank() != 2) throw ShapeError("conv1d: input must be 2-d");
  if (kernel->rank() != 3) throw ShapeError("conv1d: kernel must be 3-d");
  if (bias->rank() != 1) throw ShapeError("conv1d: bias must be 1-d");
  const int t_len = input->dims[0], c_in = input->dims[1];
  const int k_len = kernel->dims[0], k_cin = kernel->dims[1], c_out = kernel->dims[2];
  if (k_cin != c_in) throw ShapeError("conv1d: kernel in-channels do not match input");
  if (bias->dims[0] != c_out) throw ShapeError("conv1d: bias does not match out-channels");
  if (k_len % 2 == 0) throw ConfigError("conv1d: kernel width must be odd");
  if (dilation < 1) throw ConfigError("conv1d: dilation must be >= 1");

  const int half = k_len / 2;
  std::vector<double> out(static_cast<std::size_t>(t_len) * c_out);
  {
    const double* in = input->values.data();
    const double* ker = kernel->values.data();
    const double* b = bias->values.data();
    for (int t = 0; t < t_len; ++t) {
      double* orow = out.data() + static_cast<std::size_t>(t) * c_out;
      for (int o = 0; o < c_out; ++o) orow[o] = b[o];
      for (int k = 0; k < k_len; ++k) {
        const int ts = t + (k - half) * dilation;
        if (ts < 0 || ts >= t_len) continue;
        const double* irow = in + static_cast<std::size_t>(ts) * c_in;
        const double* kplane = ker + static_cast<std::size_t>(k) * c_in * c_out;
        for (int c = 0; c < c_in; ++c) {
          const double x = irow[c];
          const double* krow = kplane + static_cast<std::size_t>(c) * c_out;
          for (int o = 0; o < c_out; ++o) orow[o] += x * krow[o];
        }
      }
    }
  }

  return detail::make_op(
      {t_len, c_out}, std::move(out), {input, kernel, bias},
      [in = input.get(), ker = kernel.get(), b = bias.get(), t_len, c_in, k_len, c_out, half,
       dilation](Tensor& self) {
        const double* g = self.grad.data();
        if (b->wants_grad()) {
          b->ensure_grad();
          double* gb = b->grad.data();
          for (int t = 0; t < t_len; ++t) {
            const double* grow = g + static_cast<std::size_t>(t) * c_out;
            for (int o = 0; o < c_out; ++o) gb[o] += grow[o];
          }
        }
        if (in->wants_grad()) {
          in->ensure_grad();
          double* gi = in->grad.data();
          const double* kv = ker->values.data();
          for (int t = 0; t < t_len; ++t) {
            const double* grow = g + static_cast<std::size_t>(t) * c_out;
            for (int k = 0; k < k_len; ++k) {
              const int ts = t + (k - half) * dilation;
              if (ts < 0 || ts >= t_len) continue;
              double* girow = gi + static_cast<std::size_t>(ts) * c_in;
              const double* kplane = kv + static_cast<std::size_t>(k) * c_in * c_out;
              for (int c = 0; c < c_in; ++c) {
                const double* krow = kplane + static_cast<std::size_t>(c) * c_out;
                double acc = 0.0;
                for (int o = 0; o < c_out; ++o) acc += grow[o] * krow[o];
                girow[c] += acc;
              }
            }
          }
        }
        if (ker->wants_grad()) {
          ker->ensure_grad();
          double* gk = ker->grad.data();
          const double* iv = in->values.data();
          for (int t = 0; t < t_len; ++t) {
            const double* grow = g + static_cast<std::size_t>(t) * c_out;
            for (int k = 0; k < k_len; ++k) {
              const int ts = t + (k - half) * dilation;
              if (ts < 0 || ts >= t_len) continue;
              const double* irow = iv + static_cast<std::size_t>(ts) * c_in;
              double* gkplane = gk + static_cast<std::size_t>(k) * c_in * c_out;
              for (int c = 0; c < c_in; ++c) {
                const double x = irow[c];
                double* gkrow = gkplane + static_cast<std::size_t>(c) * c_out;
                for (int o = 0; o < c_out; ++o) gkrow[o] += x * grow[o];
              }
            }
          }
        }
      });
}

namespace detail {

inline void check_group_norm_args(const TensorPtr& input, int groups, const TensorPtr& gamma,
                                  const TensorPtr& beta, double eps) {
  if (input->rank() != 2) throw ShapeError("group_norm: input must be 2-d");
  const int c = input->dims[1];
  if (groups < 1 || c % groups != 0)
    throw ConfigError("group_norm: groups must divide channel count");
  if (gamma->rank() != 1 || gamma->dims[0] != c) throw ShapeError("group_norm: gamma size");
  if (beta->rank() != 1 || beta->dims[0] != c) throw ShapeError("group_norm: beta size");
  if (!(eps > 0.0)) throw ConfigError("group_norm: eps must be positive");
}

}  // namespace detail

// Group normalization with statistics over the group's channels and all
// frames. input (T x C), per-channel affine gamma/beta.
inline TensorPtr group_norm(const TensorPtr& input, int groups, const TensorPtr& gamma,
                            const TensorPtr& beta, double eps = 1e-5) {
  detail::check_group_norm_args(input, groups, gamma, beta, eps);
  const int t_len = input->dims[0], c = input->dims[1];
  const int cg = c / groups;

  std::vector<double> xhat(static_cast<std::size_t>(t_len) * c);
  std::vector<double> inv_sd(static_cast<std::size_t>(groups));
  std::vector<double> out(static_cast<std::size_t>(t_len) * c);
  {
    const double* in = input->values.data();
    const double* gm = gamma->values.data();
    const double* bt = beta->values.data();
    const double n = static_cast<double>(t_len) * cg;
    for (int g = 0; g < groups; ++g) {
      const int c0 = g * cg;
      double mean = 0.0;
      for (int t = 0; t < t_len; ++t) {
        const double* row = in + static_cast<std::size_t>(t) * c + c0;
        for (int j = 0; j < cg; ++j) mean += row[j];
      }
      mean /= n;
      double var = 0.0;
      for (int t = 0; t < t_len; ++t) {
        const double* row = in + static_cast<std::size_t>(t) * c + c0;
        for (int j = 0; j < cg; ++j) {
          const double d = row[j] - mean;
          var += d * d;
        }
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_sd[static_cast<std::size_t>(g)] = inv;
      for (int t = 0; t < t_len; ++t) {
        const std::size_t base = static_cast<std::size_t>(t) * c + c0;
        for (int j = 0; j < cg; ++j) {
          const double xh = (in[base + j] - mean) * inv;
          xhat[base + j] = xh;
          out[base + j] = gm[c0 + j] * xh + bt[c0 + j];
        }
      }
    }
  }

  return detail::make_op(
      {t_len, c}, std::move(out), {input, gamma, beta},
      [in = input.get(), gm = gamma.get(), bt = beta.get(), t_len, c, cg, groups,
       xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Tensor& self) {
        const double* g = self.grad.data();
        if (bt->wants_grad()) {
          bt->ensure_grad();
          double* gb = bt->grad.data();
          for (int t = 0; t < t_len; ++t)
            for (int j = 0; j < c; ++j) gb[j] += g[static_cast<std::size_t>(t) * c + j];
        }
        if (gm->wants_grad()) {
          gm->ensure_grad();
          double* gg = gm->grad.data();
          for (int t = 0; t < t_len; ++t)
            for (int j = 0; j < c; ++j) {
              const std::size_t e = static_cast<std::size_t>(t) * c + j;
              gg[j] += g[e] * xhat[e];
            }
        }
        if (in->wants_grad()) {
          in->ensure_grad();
          double* gi = in->grad.data();
          const double* gmv = gm->values.data();
          const double n = static_cast<double>(t_len) * cg;
          for (int grp = 0; grp < groups; ++grp) {
            const int c0 = grp * cg;
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int t = 0; t < t_len; ++t) {
              const std::size_t base = static_cast<std::size_t>(t) * c + c0;
              for (int j = 0; j < cg; ++j) {
                const double dxh = g[base + j] * gmv[c0 + j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xhat[base + j];
              }
            }
            mean_dxh /= n;
            mean_dxh_xh /= n;
            const double inv = inv_sd[static_cast<std::size_t>(grp)];
            for (int t = 0; t < t_len; ++t) {
              const std::size_t base = static_cast<std::size_t>(t) * c + c0;
              for (int j = 0; j < cg; ++j) {
                const double dxh = g[base + j] * gmv[c0 + j];
                gi[base + j] += inv * (dxh - mean_dxh - xhat[base + j] * mean_dxh_xh);
              }
            }
          }
        }
      });
}

// Frame-local variant: statistics over the group's channels within each frame
// separately. Keeps every frame's output a function of that frame alone,
// which the sequence networks rely on for their exact temporal footprint.
inline TensorPtr group_norm_local(const TensorPtr& input, int groups, const TensorPtr& gamma,
                                  const TensorPtr& beta, double eps = 1e-5) {
  detail::check_group_norm_args(input, groups, gamma, beta, eps);
  const int t_len = input->dims[0], c = input->dims[1];
  const int cg = c / groups;

  std::vector<double> xhat(static_cast<std::size_t>(t_len) * c);
  std::vector<double> inv_sd(static_cast<std::size_t>(t_len) * groups);
  std::vector<double> out(static_cast<std::size_t>(t_len) * c);
  {
    const double* in = input->values.data();
    const double* gm = gamma->values.data();
    const double* bt = beta->values.data();
    for (int t = 0; t < t_len; ++t) {
      const std::size_t rbase = static_cast<std::size_t>(t) * c;
      for (int g = 0; g < groups; ++g) {
        const int c0 = g * cg;
        double mean = 0.0;
        for (int j = 0; j < cg; ++j) mean += in[rbase + c0 + j];
        mean /= cg;
        double var = 0.0;
        for (int j = 0; j < cg; ++j) {
          const double d = in[rbase + c0 + j] - mean;
          var += d * d;
        }
        var /= cg;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sd[static_cast<std::size_t>(t) * groups + g] = inv;
        for (int j = 0; j < cg; ++j) {
          const double xh = (in[rbase + c0 + j] - mean) * inv;
          xhat[rbase + c0 + j] = xh;
          out[rbase + c0 + j] = gm[c0 + j] * xh + bt[c0 + j];
        }
      }
    }
  }

  return detail::make_op(
      {t_len, c}, std::move(out), {input, gamma, beta},
      [in = input.get(), gm = gamma.get(), bt = beta.get(), t_len, c, cg, groups,
       xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Tensor& self) {
        const double* g = self.grad.data();
        if (bt->wants_grad()) {
          bt->ensure_grad();
          double* gb = bt->grad.data();
          for (int t = 0; t < t_len; ++t)
            for (int j = 0; j < c; ++j) gb[j] += g[static_cast<std::size_t>(t) * c + j];
        }
        if (gm->wants_grad()) {
          gm->ensure_grad();
          double* gg = gm->grad.data();
          for (int t = 0; t < t_len; ++t)
            for (int j = 0; j < c; ++j) {
              const std::size_t e = static_cast<std::size_t>(t) * c + j;
              gg[j] += g[e] * xhat[e];
            }
        }
        if (in->wants_grad()) {
          in->ensure_grad();
          double* gi = in->grad.data();
          const double* gmv = gm->values.data();
          for (int t = 0; t < t_len; ++t) {
            const std::size_t rbase = static_cast<std::size_t>(t) * c;
            for (int grp = 0; grp < groups; ++grp) {
              const int c0 = grp * cg;
              double mean_dxh = 0.0, mean_dxh_xh = 0.0;
              for (int j = 0; j < cg; ++j) {
                const double dxh = g[rbase + c0 + j] * gmv[c0 + j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xhat[rbase + c0 + j];
              }
              mean_dxh /= cg;
              mean_dxh_xh /= cg;
              const double inv = inv_sd[static_cast<std::size_t>(t) * groups + grp];
              for (int j = 0; j < cg; ++j) {
                const double dxh = g[rbase + c0 + j] * gmv[c0 + j];
                gi[rbase + c0 + j] += inv * (dxh - mean_dxh - xhat[rbase + c0 + j] * mean_dxh_xh);
              }
            }
          }
        }
      });
}

inline TensorPtr leaky_relu(const TensorPtr& input, double slope = 0.2) {
  std::vector<double> v(input->values);
  for (double& x : v)
    if (x < 0.0) x *= slope;
  return detail::make_op(input->dims, std::move(v), {input},
                         [in = input.get(), slope](Tensor& self) {
                           if (!in->wants_grad()) return;
                           in->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             in->grad[i] += self.grad[i] * (in->values[i] >= 0.0 ? 1.0 : slope);
                         });
}

// Removes each column's temporal mean: out[t][c] = x[t][c] - mean_s x[s][c].
// Content that is constant over a sequence (static geometry, recording
// biases) maps to exactly zero, so a consumer of centered sequences can only
// read dynamics. The Jacobian is the centering projection I - (1/T)·11^T,
// which is symmetric, so the backward pass centers the incoming gradient.
inline TensorPtr center_time(const TensorPtr& input) {
  if (input->rank() != 2) throw ShapeError("center_time: input must be 2-d");
  const int t_len = input->dims[0], d = input->dims[1];
  std::vector<double> out(input->values.size());
  for (int j = 0; j < d; ++j) {
    double m = 0.0;
    for (int t = 0; t < t_len; ++t) m += input->values[static_cast<std::size_t>(t) * d + j];
    m /= static_cast<double>(t_len);
    for (int t = 0; t < t_len; ++t)
      out[static_cast<std::size_t>(t) * d + j] =
          input->values[static_cast<std::size_t>(t) * d + j] - m;
  }
  return detail::make_op(input->dims, std::move(out), {input},
                         [in = input.get(), t_len, d](Tensor& self) {
                           if (!in->wants_grad()) return;
                           in->ensure_grad();
                           for (int j = 0; j < d; ++j) {
                             double m = 0.0;
                             for (int t = 0; t < t_len; ++t)
                               m += self.grad[static_cast<std::size_t>(t) * d + j];
                             m /= static_cast<double>(t_len);
                             for (int t = 0; t < t_len; ++t)
                               in->grad[static_cast<std::size_t>(t) * d + j] +=
                                   self.grad[static_cast<std::size_t>(t) * d + j] - m;
                           }
                         });
}

// Row-wise projection onto the unit sphere: out[t] = x[t] / |x[t]|.
inline TensorPtr l2_normalize_rows(const TensorPtr& input) {
  if (input->rank() != 2) throw ShapeError("l2_normalize_rows: input must be 2-d");
  const int t_len = input->dims[0], d = input->dims[1];
  std::vector<double> norms(static_cast<std::size_t>(t_len));
  std::vector<double> out(input->values.size());
  for (int t = 0; t < t_len; ++t) {
    const double* row = input->values.data() + static_cast<std::size_t>(t) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += row[j] * row[j];
    // the tiny floor only guards all-zero rows against 0/0
    const double norm = std::sqrt(s + 1e-300);
    norms[static_cast<std::size_t>(t)] = norm;
    double* orow = out.data() + static_cast<std::size_t>(t) * d;
    for (int j = 0; j < d; ++j) orow[j] = row[j] / norm;
  }
  return detail::make_op(
      input->dims, std::move(out), {input},
      [in = input.get(), t_len, d, norms = std::move(norms)](Tensor& self) {
        if (!in->wants_grad()) return;
        in->ensure_grad();
        for (int t = 0; t < t_len; ++t) {
          const std::size_t base = static_cast<std::size_t>(t) * d;
          const double norm = norms[static_cast<std::size_t>(t)];
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += self.grad[base + j] * self.values[base + j];
          for (int j = 0; j < d; ++j)
            in->grad[base + j] += (self.grad[base + j] - self.values[base + j] * dot) / norm;
        }
      });
}

// For each row a of A (T x D): min over rows b of B (S x D) of |a - b|^2.
// Result is a length-T vector; gradients flow to the argmin pair only (ties
// resolved to the smallest index).
inline TensorPtr pairwise_min_sqdist(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2) throw ShapeError("pairwise_min_sqdist: inputs must be 2-d");
  if (a->dims[1] != b->dims[1]) throw ShapeError("pairwise_min_sqdist: feature dims differ");
  const int ta = a->dims[0], tb = b->dims[0], d = a->dims[1];
  std::vector<int> argmin(static_cast<std::size_t>(ta));
  std::vector<double> out(static_cast<std::size_t>(ta));
  {
    const double* av = a->values.data();
    const double* bv = b->values.data();
    for (int i = 0; i < ta; ++i) {
      const double* arow = av + static_cast<std::size_t>(i) * d;
      double best = 0.0;
      int best_j = 0;
      for (int j = 0; j < tb; ++j) {
        const double* brow = bv + static_cast<std::size_t>(j) * d;
        double s = 0.0;
        for (int k = 0; k < d; ++k) {
          const double diff = arow[k] - brow[k];
          s += diff * diff;
        }
        if (j == 0 || s < best) {
          best = s;
          best_j = j;
        }
      }
      out[static_cast<std::size_t>(i)] = best;
      argmin[static_cast<std::size_t>(i)] = best_j;
    }
  }
  return detail::make_op(
      {ta}, std::move(out), {a, b},
      [a = a.get(), b = b.get(), ta, d, argmin = std::move(argmin)](Tensor& self) {
        const bool ga = a->wants_grad(), gb = b->wants_grad();
        if (!ga && !gb) return;
        if (ga) a->ensure_grad();
        if (gb) b->ensure_grad();
        for (int i = 0; i < ta; ++i) {
          const double g2 = 2.0 * self.grad[static_cast<std::size_t>(i)];
          if (g2 == 0.0) continue;
          const int j = argmin[static_cast<std::size_t>(i)];
          const double* arow = a->values.data() + static_cast<std::size_t>(i) * d;
          const double* brow = b->values.data() + static_cast<std::size_t>(j) * d;
          for (int k = 0; k < d; ++k) {
            const double diff = g2 * (arow[k] - brow[k]);
            if (ga) a->grad[static_cast<std::size_t>(i) * d + k] += diff;
            if (gb) b->grad[static_cast<std::size_t>(j) * d + k] -= diff;
          }
        }
      });
}

// Stack R equal-length vectors into an (R x T) matrix.
inline TensorPtr stack_rows(const std::vector<TensorPtr>& rows) {
  if (rows.empty()) throw EmptyInputError("stack_rows: no rows");
  const int t_len = static_cast<int>(rows.front()->size());
  std::vector<double> v;
  v.reserve(rows.size() * static_cast<std::size_t>(t_len));
  for (const TensorPtr& r : rows) {
    if (r->rank() != 1 || r->size() != t_len) throw ShapeError("stack_rows: inconsistent rows");
    v.insert(v.end(), r->values.begin(), r->values.end());
  }
  std::vector<TensorPtr> parents(rows.begin(), rows.end());
  std::vector<Tensor*> raw;
  raw.reserve(rows.size());
  for (const TensorPtr& r : rows) raw.push_back(r.get());
  return detail::make_op({static_cast<int>(rows.size()), t_len}, std::move(v), std::move(parents),
                         [raw = std::move(raw), t_len](Tensor& self) {
                           for (std::size_t r = 0; r < raw.size(); ++r) {
                             if (!raw[r]->wants_grad()) continue;
                             raw[r]->ensure_grad();
                             const double* g = self.grad.data() + r * static_cast<std::size_t>(t_len);
                             for (int i = 0; i < t_len; ++i) raw[r]->grad[static_cast<std::size_t>(i)] += g[i];
                           }
                         });
}

// Column-wise log(sum(exp(.))) with max shift: (R x T) -> T.
inline TensorPtr logsumexp_cols(const TensorPtr& m) {
  if (m->rank() != 2) throw ShapeError("logsumexp_cols: input must be 2-d");
  const int r = m->dims[0], t_len = m->dims[1];
  std::vector<double> out(static_cast<std::size_t>(t_len));
  for (int j = 0; j < t_len; ++j) {
    double mx = m->values[static_cast<std::size_t>(j)];
    for (int i = 1; i < r; ++i)
      mx = std::max(mx, m->values[static_cast<std::size_t>(i) * t_len + j]);
    double s = 0.0;
    for (int i = 0; i < r; ++i)
      s += std::exp(m->values[static_cast<std::size_t>(i) * t_len + j] - mx);
    out[static_cast<std::size_t>(j)] = mx + std::log(s);
  }
  return detail::make_op({t_len}, std::move(out), {m}, [m = m.get(), r, t_len](Tensor& self) {
    if (!m->wants_grad()) return;
    m->ensure_grad();
    for (int j = 0; j < t_len; ++j) {
      const double g = self.grad[static_cast<std::size_t>(j)];
      if (g == 0.0) continue;
      const double lse = self.values[static_cast<std::size_t>(j)];
      for (int i = 0; i < r; ++i) {
        const std::size_t e = static_cast<std::size_t>(i) * t_len + j;
        m->grad[e] += g * std::exp(m->values[e] - lse);
      }
    }
  });
}

// Concatenate along columns: (T x C1), (T x C2) -> (T x C1+C2).
inline TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2) throw ShapeError("concat_cols: inputs must be 2-d");
  if (a->dims[0] != b->dims[0]) throw ShapeError("concat_cols: row counts differ");
  const int t_len = a->dims[0], ca = a->dims[1], cb = b->dims[1];
  std::vector<double> v(static_cast<std::size_t>(t_len) * (ca + cb));
  for (int t = 0; t < t_len; ++t) {
    std::copy_n(a->values.data() + static_cast<std::size_t>(t) * ca, ca,
                v.data() + static_cast<std::size_t>(t) * (ca + cb));
    std::copy_n(b->values.data() + static_cast<std::size_t>(t) * cb, cb,
                v.data() + static_cast<std::size_t>(t) * (ca + cb) + ca);
  }
  return detail::make_op({t_len, ca + cb}, std::move(v), {a, b},
                         [a = a.get(), b = b.get(), t_len, ca, cb](Tensor& self) {
                           if (a->wants_grad()) {
                             a->ensure_grad();
                             for (int t = 0; t < t_len; ++t)
                               for (int j = 0; j < ca; ++j)
                                 a->grad[static_cast<std::size_t>(t) * ca + j] +=
                                     self.grad[static_cast<std::size_t>(t) * (ca + cb) + j];
                           }
                           if (b->wants_grad()) {
                             b->ensure_grad();
                             for (int t = 0; t < t_len; ++t)
                               for (int j = 0; j < cb; ++j)
                                 b->grad[static_cast<std::size_t>(t) * cb + j] +=
                                     self.grad[static_cast<std::size_t>(t) * (ca + cb) + ca + j];
                           }
                         });
}

// Repeat a length-C vector T times into a (T x C) matrix.
inline TensorPtr broadcast_row(const TensorPtr& v, int t_len) {
  if (v->rank() != 1) throw ShapeError("broadcast_row: input must be 1-d");
  if (t_len < 1) throw ShapeError("broadcast_row: length must be positive");
  const int c = v->dims[0];
  std::vector<double> out(static_cast<std::size_t>(t_len) * c);
  for (int t = 0; t < t_len; ++t)
    std::copy_n(v->values.data(), c, out.data() + static_cast<std::size_t>(t) * c);
  return detail::make_op({t_len, c}, std::move(out), {v}, [v = v.get(), t_len, c](Tensor& self) {
    if (!v->wants_grad()) return;
    v->ensure_grad();
    for (int t = 0; t < t_len; ++t)
      for (int j = 0; j < c; ++j) v->grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(t) * c + j];
  });
}

// Concatenate any number of tensors into one flat vector.
inline TensorPtr concat_flat(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_flat: no parts");
  std::vector<double> v;
  std::size_t total = 0;
  for (const TensorPtr& p : parts) total += p->values.size();
  v.reserve(total);
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  for (const TensorPtr& p : parts) {
    offsets.push_back(v.size());
    v.insert(v.end(), p->values.begin(), p->values.end());
  }
  std::vector<TensorPtr> parents(parts.begin(), parts.end());
  std::vector<Tensor*> raw;
  raw.reserve(parts.size());
  for (const TensorPtr& p : parts) raw.push_back(p.get());
  return detail::make_op(
      {static_cast<int>(total)}, std::move(v), std::move(parents),
      [raw = std::move(raw), offsets = std::move(offsets)](Tensor& self) {
        for (std::size_t i = 0; i < raw.size(); ++i) {
          if (!raw[i]->wants_grad()) continue;
          raw[i]->ensure_grad();
          const double* g = self.grad.data() + offsets[i];
          for (std::size_t j = 0; j < raw[i]->grad.size(); ++j) raw[i]->grad[j] += g[j];
        }
      });
}

}  // namespace motionid
