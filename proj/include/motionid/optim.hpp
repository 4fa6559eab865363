#pragma once
// Named parameter sets, ADAM updates, and the binary tensor container used
// for checkpoints ("IDRC"). Entries are written in lexicographic name order
// so identical parameter sets always serialize to identical bytes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <motionid/tensor.hpp>

namespace motionid {

using ParamSet = std::map<std::string, TensorPtr>;

inline void zero_grad(ParamSet& params) {
  for (auto& [name, t] : params) zero_grad(*t);
}

inline void set_requires_grad(ParamSet& params, bool value) {
  for (auto& [name, t] : params) t->requires_grad = value;
}

inline ParamSet deep_copy(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) {
    TensorPtr c = Tensor::from_values(t->dims, t->values, t->requires_grad);
    out[name] = c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// ADAM with bias correction:
//   m <- b1 m + (1-b1) g        v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;

  static AdamState init(const ParamSet& params, double beta1 = 0.9, double beta2 = 0.999,
                        double eps = 1e-8) {
    AdamState st;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.eps = eps;
    for (const auto& [name, t] : params) {
      st.m[name].assign(t->values.size(), 0.0);
      st.v[name].assign(t->values.size(), 0.0);
    }
    return st;
  }
};

inline void adam_step(ParamSet& params, AdamState& st, double lr) {
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  for (auto& [name, t] : params) {
    if (!t->grad_live || t->grad.size() != t->values.size())
      throw MissingGradError("adam_step: no gradient for parameter " + name);
    if (!st.m.count(name)) throw ConfigError("adam_step: state missing parameter " + name);
  }
  const std::int64_t step = ++st.step_count;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(step));
  for (auto& [name, t] : params) {
    std::vector<double>& m = st.m[name];
    std::vector<double>& v = st.v[name];
    for (std::size_t i = 0; i < t->values.size(); ++i) {
      const double g = t->grad[i];
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      // The normalized direction is bounded near 1, so scale it by the rate
      // last; the other association can overflow first for extreme rates.
      t->values[i] -= lr * (mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// tensor container: "IDRC" | u32 version=1 | u32 tensor_count | entries in
// lexicographic name order, each: u32 name_len | name bytes | u32 rank |
// u32 dims... | f64 values
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32_f(std::ofstream& f, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x & 0xFF),
                        static_cast<unsigned char>((x >> 8) & 0xFF),
                        static_cast<unsigned char>((x >> 16) & 0xFF),
                        static_cast<unsigned char>((x >> 24) & 0xFF)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64_f(std::ofstream& f, double x) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(x);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
  f.write(reinterpret_cast<const char*>(b), 8);
}

struct ByteReader {
  std::vector<unsigned char> bytes;
  std::size_t pos = 0;

  explicit ByteReader(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path.string());
    bytes.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw TruncationError("tensor container truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 4;
    return x;
  }
  double f64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(x);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_tensors(const std::filesystem::path& path,
                         const std::map<std::string, TensorPtr>& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("save_tensors: cannot open " + path.string());
  f.write("IDRC", 4);
  detail::put_u32_f(f, kCheckpointVersion);
  detail::put_u32_f(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {  // std::map iterates in name order
    detail::put_u32_f(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32_f(f, static_cast<std::uint32_t>(t->dims.size()));
    for (int d : t->dims) detail::put_u32_f(f, static_cast<std::uint32_t>(d));
    for (double x : t->values) detail::put_f64_f(f, x);
  }
  if (!f) throw FormatError("save_tensors: write failed for " + path.string());
}

inline std::map<std::string, TensorPtr> load_tensors(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  std::string magic = r.str(4);
  if (magic != "IDRC") throw FormatError("load_tensors: bad magic in " + path.string());
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("load_tensors: unsupported version " + std::to_string(version));
  std::uint32_t count = r.u32();
  std::map<std::string, TensorPtr> out;
  std::string prev;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    if (i > 0 && !(prev < name))
      throw FormatError("load_tensors: names out of order at " + name);
    prev = name;
    std::uint32_t rank = r.u32();
    std::vector<int> dims;
    std::int64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      std::uint32_t d = r.u32();
      if (d == 0) throw FormatError("load_tensors: zero dim in " + name);
      dims.push_back(static_cast<int>(d));
      n *= d;
    }
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (auto& x : vals) x = r.f64();
    out[name] = Tensor::from_values(std::move(dims), std::move(vals));
  }
  if (r.pos != r.bytes.size()) throw FormatError("load_tensors: trailing bytes");
  return out;
}

}  // namespace motionid
