#pragma once
// Reverse-mode automatic differentiation over dense row-major tensors.
//
// Each op allocates a fresh node holding its value; the node keeps shared
// ownership of its parents plus a closure that scatters the node's gradient
// into them. backward() runs the closures in reverse topological order.
// Gradients are write-once per graph: a second backward without zero_grad()
// raises AccumulationError instead of silently accumulating.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include <motionid/errors.hpp>

namespace motionid {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

namespace detail {
inline thread_local int no_grad_depth = 0;
}

// RAII guard: ops built inside record no graph edges (plain forward pass).
struct NoGrad {
  NoGrad() { ++detail::no_grad_depth; }
  ~NoGrad() { --detail::no_grad_depth; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

class Tensor {
 public:
  std::vector<int> dims;
  std::vector<double> values;
  std::vector<double> grad;  // sized on demand during backward
  bool requires_grad = false;
  bool grad_live = false;  // grad currently holds a backward result
  std::vector<TensorPtr> parents;
  std::function<void()> backprop;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  int rank() const { return static_cast<int>(dims.size()); }

  int rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor is not 2-d");
    return dims[0];
  }
  int cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor is not 2-d");
    return dims[1];
  }

  double item() const {
    if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
    return values[0];
  }

  // true when backward must deliver a gradient here
  bool wants_grad() const { return requires_grad || !parents.empty() || backprop; }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }

  static std::int64_t numel(const std::vector<int>& dims) {
    std::int64_t n = 1;
    for (int d : dims) {
      if (d <= 0) throw ShapeError("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  static TensorPtr create(std::vector<int> dims, double fill = 0.0, bool requires_grad = false) {
    auto t = std::make_shared<Tensor>();
    std::int64_t n = numel(dims);
    t->dims = std::move(dims);
    t->values.assign(static_cast<std::size_t>(n), fill);
    t->requires_grad = requires_grad;
    return t;
  }

  static TensorPtr from_values(std::vector<int> dims, std::vector<double> vals,
                               bool requires_grad = false) {
    auto t = std::make_shared<Tensor>();
    if (numel(dims) != static_cast<std::int64_t>(vals.size()))
      throw ShapeError("from_values: dims do not match value count");
    t->dims = std::move(dims);
    t->values = std::move(vals);
    t->requires_grad = requires_grad;
    return t;
  }

  static TensorPtr scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }
};

namespace detail {

inline bool contributes(const TensorPtr& t) { return t->requires_grad || !t->parents.empty(); }

// Wires up a new graph node. `backward` receives the finished node and must
// add into parent->grad for every parent with wants-gradient status; it runs
// only if some parent (transitively) requires a gradient.
inline TensorPtr make_op(std::vector<int> dims, std::vector<double> vals,
                         std::vector<TensorPtr> parents,
                         std::function<void(Tensor&)> backward) {
  TensorPtr t = Tensor::from_values(std::move(dims), std::move(vals));
  if (!grad_enabled()) return t;
  bool needs = false;
  for (const TensorPtr& p : parents)
    if (contributes(p)) {
      needs = true;
      break;
    }
  if (!needs) return t;
  t->parents = std::move(parents);
  Tensor* raw = t.get();
  t->backprop = [raw, fn = std::move(backward)]() { fn(*raw); };
  return t;
}

}  // namespace detail

inline void zero_grad(Tensor& t) {
  t.grad.clear();
  t.grad.shrink_to_fit();
  t.grad_live = false;
}

inline void zero_grad(const TensorPtr& t) { zero_grad(*t); }

// Reverse pass from a scalar loss. Populates grad on every tensor reachable
// through the graph that requires (or feeds something that requires) one.
inline void backward(const TensorPtr& loss) {
  if (loss->size() != 1) throw ShapeError("backward: loss must be a scalar");

  // iterative DFS post-order
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  std::vector<std::pair<Tensor*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor* p = node->parents[next++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Tensor* t : order)
    if (t->grad_live)
      throw AccumulationError("backward: gradients already populated; call zero_grad first");

  loss->ensure_grad();
  loss->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor* t = *it;
    if (t->backprop && !t->grad.empty()) t->backprop();
  }
  // a tensor took part in this pass iff something allocated its gradient
  for (Tensor* t : order) t->grad_live = !t->grad.empty();
}

// Clears gradients on every tensor reachable from `root` through the graph.
inline void zero_grad_graph(const TensorPtr& root) {
  std::unordered_set<Tensor*> visited;
  std::vector<Tensor*> stack{root.get()};
  visited.insert(root.get());
  while (!stack.empty()) {
    Tensor* t = stack.back();
    stack.pop_back();
    zero_grad(*t);
    for (const TensorPtr& p : t->parents)
      if (!visited.count(p.get())) {
        visited.insert(p.get());
        stack.push_back(p.get());
      }
  }
}

// ---------------------------------------------------------------------------
// elementwise / reduction ops
// ---------------------------------------------------------------------------

namespace detail {
inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->dims != b->dims) throw ShapeError(std::string(op) + ": shape mismatch");
}

inline void add_into(std::vector<double>& dst, const std::vector<double>& src, double scale = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}
}  // namespace detail

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a->values);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b->values[i];
  return detail::make_op(a->dims, std::move(v), {a, b}, [a = a.get(), b = b.get()](Tensor& self) {
    if (a->wants_grad()) {
      a->ensure_grad();
      detail::add_into(a->grad, self.grad);
    }
    if (b->wants_grad()) {
      b->ensure_grad();
      detail::add_into(b->grad, self.grad);
    }
  });
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a->values);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b->values[i];
  return detail::make_op(a->dims, std::move(v), {a, b}, [a = a.get(), b = b.get()](Tensor& self) {
    if (a->wants_grad()) {
      a->ensure_grad();
      detail::add_into(a->grad, self.grad);
    }
    if (b->wants_grad()) {
      b->ensure_grad();
      detail::add_into(b->grad, self.grad, -1.0);
    }
  });
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a->values);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b->values[i];
  return detail::make_op(a->dims, std::move(v), {a, b}, [a = a.get(), b = b.get()](Tensor& self) {
    if (a->wants_grad()) {
      a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * b->values[i];
    }
    if (b->wants_grad()) {
      b->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i] * a->values[i];
    }
  });
}

inline TensorPtr scale(const TensorPtr& a, double c) {
  std::vector<double> v(a->values);
  for (double& x : v) x *= c;
  return detail::make_op(a->dims, std::move(v), {a}, [a = a.get(), c](Tensor& self) {
    if (!a->wants_grad()) return;
    a->ensure_grad();
    detail::add_into(a->grad, self.grad, c);
  });
}

inline TensorPtr neg(const TensorPtr& a) { return scale(a, -1.0); }

inline TensorPtr sum(const TensorPtr& a) {
  double s = 0.0;
  for (double x : a->values) s += x;
  return detail::make_op({1}, {s}, {a}, [a = a.get()](Tensor& self) {
    if (!a->wants_grad()) return;
    a->ensure_grad();
    double g = self.grad[0];
    for (double& x : a->grad) x += g;
  });
}

// sum of squares of all elements
inline TensorPtr sqnorm(const TensorPtr& a) {
  double s = 0.0;
  for (double x : a->values) s += x * x;
  return detail::make_op({1}, {s}, {a}, [a = a.get()](Tensor& self) {
    if (!a->wants_grad()) return;
    a->ensure_grad();
    double g = 2.0 * self.grad[0];
    for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g * a->values[i];
  });
}

inline TensorPtr log(const TensorPtr& a) {
  std::vector<double> v(a->values.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(a->values[i] > 0.0)) throw DomainError("log: non-positive input");
    v[i] = std::log(a->values[i]);
  }
  return detail::make_op(a->dims, std::move(v), {a}, [a = a.get()](Tensor& self) {
    if (!a->wants_grad()) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] / a->values[i];
  });
}

inline TensorPtr exp(const TensorPtr& a) {
  std::vector<double> v(a->values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a->values[i]);
  return detail::make_op(a->dims, std::move(v), {a}, [a = a.get()](Tensor& self) {
    if (!a->wants_grad()) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * self.values[i];
  });
}

// log(1 - exp(x)) for x < 0, computed via expm1 so values near zero stay
// accurate; this is how -log(1 - p) terms are evaluated from log p.
inline TensorPtr log1m_exp(const TensorPtr& a) {
  constexpr double kLn2 = 0.6931471805599453;
  std::vector<double> v(a->values.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = a->values[i];
    if (!(x < 0.0)) throw DomainError("log1m_exp: input must be negative");
    // Branch keeps full relative precision at both ends of the domain.
    v[i] = x > -kLn2 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x));
  }
  return detail::make_op(a->dims, std::move(v), {a}, [a = a.get()](Tensor& self) {
    if (!a->wants_grad()) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double ex = std::exp(a->values[i]);
      a->grad[i] += self.grad[i] * (ex / std::expm1(a->values[i]));
    }
  });
}

inline TensorPtr reshape(const TensorPtr& a, std::vector<int> dims) {
  if (Tensor::numel(dims) != a->size()) throw ShapeError("reshape: element count mismatch");
  std::vector<double> v(a->values);
  return detail::make_op(std::move(dims), std::move(v), {a}, [a = a.get()](Tensor& self) {
    if (!a->wants_grad()) return;
    a->ensure_grad();
    detail::add_into(a->grad, self.grad);
  });
}

}  // namespace motionid
