#include "refnms/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "refnms/errors.hpp"
#include "refnms/rng.hpp"
#include "refnms/simd/kernels.hpp"

namespace refnms::ad {

std::string shape_str(const Shape& s) {
  std::ostringstream ss;
  ss << '(';
  for (std::size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
  ss << ')';
  return ss.str();
}

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Array::Array(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Array::Array(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw ShapeError("array data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
}

const Array& Var::value() const { return graph->value(*this); }

// ---- Graph ----------------------------------------------------------------

Var Graph::add_leaf(Array owned, const Array* external, bool requires_grad) {
  Node n;
  n.owned = std::move(owned);
  n.external = external;
  n.requires_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Array value) { return add_leaf(std::move(value), nullptr, false); }
Var Graph::leaf(Array value) { return add_leaf(std::move(value), nullptr, true); }
Var Graph::leaf_ref(const Array& value) { return add_leaf({}, &value, true); }
Var Graph::constant_ref(const Array& value) { return add_leaf({}, &value, false); }

const Array& Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

const Array& Graph::value(Var v) const { return value(v.id); }

const Array* Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

Var Graph::push(Array value, std::vector<std::size_t> parents, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (record_) {
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [&](std::size_t p) { return nodes_[p].requires_grad; });
    if (n.requires_grad) {
      n.parents = std::move(parents);
      n.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Array& Graph::grad_acc(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Array(value(id).shape, 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw InvalidArgument("backward: loss belongs to another graph");
  if (!record_) throw InvalidArgument("backward: graph was built without recording");
  if (backward_done_) throw InvalidArgument("backward: already called on this graph");
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(value(loss).shape));
  }
  backward_done_ = true;
  visits_ = 0;
  if (!nodes_[loss.id].requires_grad) return;
  grad_acc(loss.id).data[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    ++visits_;
    if (n.backward) n.backward(*this, i);
  }
}

// ---- helpers --------------------------------------------------------------

namespace {

Graph& graph_of(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw InvalidArgument(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a) {
  throw ShapeError(std::string(op) + ": unsupported shape " + shape_str(a));
}

// Accumulate `src * k` into the gradient of node `id` if it needs one.
void accumulate(Graph& g, std::size_t id, const std::vector<double>& src, double k = 1.0) {
  if (!g.requires_grad(id)) return;
  Array& dst = g.grad_acc(id);
  simd::axpy(k, src.data(), dst.data.data(), src.size());
}

template <typename Fn>
Var unary_map(Var a, Fn fn, Graph::BackwardFn back) {
  const Array& x = a.value();
  Array y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fn(x[i]);
  return a.graph->push(std::move(y), {a.id}, std::move(back));
}

struct AxisLayout {
  std::size_t outer, n, inner;
};

AxisLayout layout(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) shape_fail(op, s);
  AxisLayout l{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b, "add");
  const Array& x = a.value();
  const Array& y = b.value();
  if (x.shape != y.shape) shape_fail("add", x.shape, y.shape);
  Array out = x;
  simd::axpy(1.0, y.data.data(), out.data.data(), out.size());
  return g.push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const Array& d = g.grad_of(self);
    accumulate(g, ia, d.data);
    accumulate(g, ib, d.data);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b, "sub");
  const Array& x = a.value();
  const Array& y = b.value();
  if (x.shape != y.shape) shape_fail("sub", x.shape, y.shape);
  Array out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return g.push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const Array& d = g.grad_of(self);
    accumulate(g, ia, d.data);
    accumulate(g, ib, d.data, -1.0);
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b, "mul");
  const Array& x = a.value();
  const Array& y = b.value();
  if (x.shape != y.shape) shape_fail("mul", x.shape, y.shape);
  Array out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return g.push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const Array& d = g.grad_of(self);
    const Array& x = g.value(ia);
    const Array& y = g.value(ib);
    if (g.requires_grad(ia)) {
      Array& dx = g.grad_acc(ia);
      for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * y[i];
    }
    if (g.requires_grad(ib)) {
      Array& dy = g.grad_acc(ib);
      for (std::size_t i = 0; i < d.size(); ++i) dy[i] += d[i] * x[i];
    }
  });
}

Var scale(Var a, double k) {
  return unary_map(a, [k](double x) { return k * x; }, [ia = a.id, k](Graph& g, std::size_t self) {
    accumulate(g, ia, g.grad_of(self).data, k);
  });
}

Var add_scalar(Var a, double k) {
  return unary_map(a, [k](double x) { return x + k; }, [ia = a.id](Graph& g, std::size_t self) {
    accumulate(g, ia, g.grad_of(self).data);
  });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul");
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.rank() != 2) shape_fail("matmul", A.shape, B.shape);
  const std::size_t m = A.rows(), k = A.cols();
  if (B.rank() == 1) {
    if (B.shape[0] != k) shape_fail("matmul", A.shape, B.shape);
    Array out(Shape{m});
    for (std::size_t i = 0; i < m; ++i) out[i] = simd::dot(A.row(i), B.data.data(), k);
    return g.push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, m, k](Graph& g, std::size_t self) {
      const Array& d = g.grad_of(self);
      const Array& A = g.value(ia);
      const Array& x = g.value(ib);
      if (g.requires_grad(ia)) {
        Array& dA = g.grad_acc(ia);
        for (std::size_t i = 0; i < m; ++i) simd::axpy(d[i], x.data.data(), dA.row(i), k);
      }
      if (g.requires_grad(ib)) {
        Array& dx = g.grad_acc(ib);
        for (std::size_t i = 0; i < m; ++i) simd::axpy(d[i], A.row(i), dx.data.data(), k);
      }
    });
  }
  if (B.rank() != 2 || B.rows() != k) shape_fail("matmul", A.shape, B.shape);
  const std::size_t n = B.cols();
  Array out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) simd::axpy(A.at(i, p), B.row(p), out.row(i), n);
  }
  return g.push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, m, k, n](Graph& g, std::size_t self) {
    const Array& d = g.grad_of(self);
    const Array& A = g.value(ia);
    const Array& B = g.value(ib);
    if (g.requires_grad(ia)) {
      Array& dA = g.grad_acc(ia);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) dA.at(i, p) += simd::dot(d.row(i), B.row(p), n);
      }
    }
    if (g.requires_grad(ib)) {
      Array& dB = g.grad_acc(ib);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) simd::axpy(A.at(i, p), d.row(i), dB.row(p), n);
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul_nt");
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) shape_fail("matmul_nt", A.shape, B.shape);
  const std::size_t m = A.rows(), n = B.rows(), k = A.cols();
  Array out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = simd::dot(A.row(i), B.row(j), k);
  }
  return g.push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, m, n, k](Graph& g, std::size_t self) {
    const Array& d = g.grad_of(self);
    const Array& A = g.value(ia);
    const Array& B = g.value(ib);
    if (g.requires_grad(ia)) {
      Array& dA = g.grad_acc(ia);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) simd::axpy(d.at(i, j), B.row(j), dA.row(i), k);
      }
    }
    if (g.requires_grad(ib)) {
      Array& dB = g.grad_acc(ib);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) simd::axpy(d.at(i, j), A.row(i), dB.row(j), k);
      }
    }
  });
}

Var transpose(Var a) {
  const Array& x = a.value();
  if (x.rank() != 2) shape_fail("transpose", x.shape);
  const std::size_t r = x.rows(), c = x.cols();
  Array out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  return a.graph->push(std::move(out), {a.id}, [ia = a.id, r, c](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    Array& dx = g.grad_acc(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx.at(i, j) += d.at(j, i);
  });
}

Var add_bias(Var x, Var b) {
  Graph& g = graph_of(x, b, "add_bias");
  const Array& X = x.value();
  const Array& B = b.value();
  if (X.rank() == 0 || B.rank() != 1 || X.shape.back() != B.shape[0]) shape_fail("add_bias", X.shape, B.shape);
  const std::size_t n = B.size();
  const std::size_t rows = X.size() / n;
  Array out = X;
  for (std::size_t r = 0; r < rows; ++r) simd::axpy(1.0, B.data.data(), out.data.data() + r * n, n);
  return g.push(std::move(out), {x.id, b.id}, [ix = x.id, ib = b.id, rows, n](Graph& g, std::size_t self) {
    const Array& d = g.grad_of(self);
    accumulate(g, ix, d.data);
    if (g.requires_grad(ib)) {
      Array& db = g.grad_acc(ib);
      for (std::size_t r = 0; r < rows; ++r) simd::axpy(1.0, d.data.data() + r * n, db.data.data(), n);
    }
  });
}

Var add_outer(Var a, Var b) {
  Graph& g = graph_of(a, b, "add_outer");
  const Array& x = a.value();
  const Array& y = b.value();
  if (x.rank() != 1 || y.rank() != 1) shape_fail("add_outer", x.shape, y.shape);
  const std::size_t m = x.size(), n = y.size();
  Array out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x[i] + y[j];
  return g.push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, m, n](Graph& g, std::size_t self) {
    const Array& d = g.grad_of(self);
    if (g.requires_grad(ia)) {
      Array& dx = g.grad_acc(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dx[i] += d.at(i, j);
    }
    if (g.requires_grad(ib)) {
      Array& dy = g.grad_acc(ib);
      for (std::size_t i = 0; i < m; ++i) simd::axpy(1.0, d.row(i), dy.data.data(), n);
    }
  });
}

// ---- structural -----------------------------------------------------------

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph& g = *parts[0].graph;
  const Shape& s0 = parts[0].value().shape;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    graph_of(parts[0], p, "concat");
    ids.push_back(p.id);
  }
  if (s0.size() == 1) {
    if (axis != 0) shape_fail("concat", s0);
    std::vector<double> out;
    std::vector<std::size_t> sizes;
    for (const Var& p : parts) {
      const Array& v = p.value();
      if (v.rank() != 1) shape_fail("concat", s0, v.shape);
      out.insert(out.end(), v.data.begin(), v.data.end());
      sizes.push_back(v.size());
    }
    return g.push(Array::vector(std::move(out)), ids, [ids, sizes](Graph& g, std::size_t self) {
      const Array& d = g.grad_of(self);
      std::size_t off = 0;
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (g.requires_grad(ids[p])) {
          Array& dp = g.grad_acc(ids[p]);
          simd::axpy(1.0, d.data.data() + off, dp.data.data(), sizes[p]);
        }
        off += sizes[p];
      }
    });
  }
  if (s0.size() != 2 || axis > 1) shape_fail("concat", s0);
  if (axis == 0) {
    const std::size_t cols = s0[1];
    std::vector<double> out;
    std::size_t rows = 0;
    std::vector<std::size_t> sizes;
    for (const Var& p : parts) {
      const Array& v = p.value();
      if (v.rank() != 2 || v.cols() != cols) shape_fail("concat", s0, v.shape);
      out.insert(out.end(), v.data.begin(), v.data.end());
      rows += v.rows();
      sizes.push_back(v.size());
    }
    return g.push(Array(Shape{rows, cols}, std::move(out)), ids, [ids, sizes](Graph& g, std::size_t self) {
      const Array& d = g.grad_of(self);
      std::size_t off = 0;
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (g.requires_grad(ids[p])) {
          Array& dp = g.grad_acc(ids[p]);
          simd::axpy(1.0, d.data.data() + off, dp.data.data(), sizes[p]);
        }
        off += sizes[p];
      }
    });
  }
  const std::size_t rows = s0[0];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Array& v = p.value();
    if (v.rank() != 2 || v.rows() != rows) shape_fail("concat", s0, v.shape);
    widths.push_back(v.cols());
    total += v.cols();
  }
  Array out(Shape{rows, total});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Array& v = parts[p].value();
      std::copy_n(v.row(r), widths[p], out.row(r) + off);
      off += widths[p];
    }
  }
  return g.push(std::move(out), ids, [ids, widths, rows, total](Graph& g, std::size_t self) {
    const Array& d = g.grad_of(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (g.requires_grad(ids[p])) {
        Array& dp = g.grad_acc(ids[p]);
        for (std::size_t r = 0; r < rows; ++r) simd::axpy(1.0, d.data.data() + r * total + off, dp.row(r), widths[p]);
      }
      off += widths[p];
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const std::size_t n = rows[0].value().size();
  std::vector<Var> reshaped;
  reshaped.reserve(rows.size());
  for (const Var& r : rows) {
    if (r.value().rank() != 1 || r.value().size() != n) shape_fail("stack_rows", rows[0].shape(), r.shape());
    reshaped.push_back(reshape(r, Shape{1, n}));
  }
  return concat(reshaped, 0);
}

Var reshape(Var a, Shape shape) {
  const Array& x = a.value();
  if (shape_size(shape) != x.size()) shape_fail("reshape", x.shape, shape);
  Array out(std::move(shape), x.data);
  return a.graph->push(std::move(out), {a.id}, [ia = a.id](Graph& g, std::size_t self) {
    accumulate(g, ia, g.grad_of(self).data);
  });
}

Var gather(Var a, std::span<const std::size_t> indices) {
  const Array& x = a.value();
  if (x.rank() != 1 && x.rank() != 2) shape_fail("gather", x.shape);
  const std::size_t width = x.rank() == 2 ? x.cols() : 1;
  const std::size_t count = x.shape[0];
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Array out(x.rank() == 2 ? Shape{idx.size(), width} : Shape{idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= count) {
      throw ShapeError("gather: index " + std::to_string(idx[i]) + " out of range for shape " + shape_str(x.shape));
    }
    std::copy_n(x.data.data() + idx[i] * width, width, out.data.data() + i * width);
  }
  return a.graph->push(std::move(out), {a.id}, [ia = a.id, idx, width](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    Array& dx = g.grad_acc(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      simd::axpy(1.0, d.data.data() + i * width, dx.data.data() + idx[i] * width, width);
    }
  });
}

Var row(Var a, std::size_t r) {
  const Array& x = a.value();
  if (x.rank() != 2 || r >= x.rows()) shape_fail("row", x.shape);
  const std::size_t one[] = {r};
  return reshape(gather(a, one), Shape{x.cols()});
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Array& x = a.value();
  if (x.rank() != 1 || begin > end || end > x.size()) shape_fail("slice", x.shape);
  Array out(Shape{end - begin}, std::vector<double>(x.data.begin() + begin, x.data.begin() + end));
  return a.graph->push(std::move(out), {a.id}, [ia = a.id, begin](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    Array& dx = g.grad_acc(ia);
    simd::axpy(1.0, d.data.data(), dx.data.data() + begin, d.size());
  });
}

// ---- nonlinearities -------------------------------------------------------

Var sigmoid(Var a) {
  return unary_map(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [ia = a.id](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    const Array& y = g.value(self);
    Array& dx = g.grad_acc(ia);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  return unary_map(a, [](double x) { return std::tanh(x); }, [ia = a.id](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    const Array& y = g.value(self);
    Array& dx = g.grad_acc(ia);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  return unary_map(a, [](double x) { return x > 0.0 ? x : 0.0; }, [ia = a.id](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    const Array& x = g.value(ia);
    Array& dx = g.grad_acc(ia);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x[i] > 0.0) dx[i] += d[i];
  });
}

Var log(Var a) {
  return unary_map(a, [](double x) { return std::log(x); }, [ia = a.id](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    const Array& x = g.value(ia);
    Array& dx = g.grad_acc(ia);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] / x[i];
  });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw InvalidArgument("clamp: lo > hi");
  return unary_map(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                   [ia = a.id, lo, hi](Graph& g, std::size_t self) {
                     if (!g.requires_grad(ia)) return;
                     const Array& d = g.grad_of(self);
                     const Array& x = g.value(ia);
                     Array& dx = g.grad_acc(ia);
                     for (std::size_t i = 0; i < d.size(); ++i)
                       if (x[i] >= lo && x[i] <= hi) dx[i] += d[i];
                   });
}

Var softmax(Var a, std::size_t axis) {
  const Array& x = a.value();
  const AxisLayout l = layout(x.shape, axis, "softmax");
  Array y(x.shape);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < l.n; ++j) mx = std::max(mx, x[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const double e = std::exp(x[base + j * l.inner] - mx);
        y[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.n; ++j) y[base + j * l.inner] /= total;
    }
  }
  return a.graph->push(std::move(y), {a.id}, [ia = a.id, l](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    const Array& y = g.value(self);
    Array& dx = g.grad_acc(ia);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.n * l.inner + in;
        double s = 0.0;
        for (std::size_t j = 0; j < l.n; ++j) s += d[base + j * l.inner] * y[base + j * l.inner];
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t k = base + j * l.inner;
          dx[k] += y[k] * (d[k] - s);
        }
      }
    }
  });
}

Var l2_normalize(Var a, std::size_t axis, double eps) {
  const Array& x = a.value();
  const AxisLayout l = layout(x.shape, axis, "l2_normalize");
  Array y(x.shape);
  std::vector<double> norms(l.outer * l.inner);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      double ss = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) ss += x[base + j * l.inner] * x[base + j * l.inner];
      const double nrm = std::sqrt(ss + eps);
      norms[o * l.inner + in] = nrm;
      for (std::size_t j = 0; j < l.n; ++j) y[base + j * l.inner] = x[base + j * l.inner] / nrm;
    }
  }
  return a.graph->push(std::move(y), {a.id}, [ia = a.id, l, norms](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Array& d = g.grad_of(self);
    const Array& y = g.value(self);
    Array& dx = g.grad_acc(ia);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.n * l.inner + in;
        const double nrm = norms[o * l.inner + in];
        double s = 0.0;
        for (std::size_t j = 0; j < l.n; ++j) s += d[base + j * l.inner] * y[base + j * l.inner];
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t k = base + j * l.inner;
          dx[k] += (d[k] - y[k] * s) / nrm;
        }
      }
    }
  });
}

// ---- reductions -----------------------------------------------------------

Var sum(Var a) {
  const Array& x = a.value();
  double s = 0.0;
  for (double v : x.data) s += v;
  return a.graph->push(Array::scalar(s), {a.id}, [ia = a.id](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const double d = g.grad_of(self)[0];
    Array& dx = g.grad_acc(ia);
    for (double& v : dx.data) v += d;
  });
}

Var mean(Var a) {
  const Array& x = a.value();
  if (x.size() == 0) throw ShapeError("mean: empty array");
  double s = 0.0;
  for (double v : x.data) s += v;
  const double n = static_cast<double>(x.size());
  return a.graph->push(Array::scalar(s / n), {a.id}, [ia = a.id, n](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const double d = g.grad_of(self)[0] / n;
    Array& dx = g.grad_acc(ia);
    for (double& v : dx.data) v += d;
  });
}

// ---- GRU ------------------------------------------------------------------

Var gru_cell(Var x, Var h_prev, const GruParams& p) {
  const std::size_t dh = h_prev.value().size();
  const auto check = [&](Var w, std::size_t rows, std::size_t cols, const char* name) {
    const Array& v = w.value();
    if (v.rank() != 2 || v.rows() != rows || v.cols() != cols) {
      throw ShapeError(std::string("gru_cell: ") + name + " has shape " + shape_str(v.shape) +
                       ", expected " + shape_str({rows, cols}));
    }
  };
  if (x.value().rank() != 1 || h_prev.value().rank() != 1) shape_fail("gru_cell", x.shape(), h_prev.shape());
  const std::size_t din = x.value().size();
  check(p.w_z, dh, din, "w_z");
  check(p.w_r, dh, din, "w_r");
  check(p.w_h, dh, din, "w_h");
  check(p.u_z, dh, dh, "u_z");
  check(p.u_r, dh, dh, "u_r");
  check(p.u_h, dh, dh, "u_h");
  for (Var b : {p.b_z, p.b_r, p.b_h}) {
    if (b.value().shape != Shape{dh}) shape_fail("gru_cell", b.shape(), h_prev.shape());
  }
  const Var z = sigmoid(add_bias(add(matmul(p.w_z, x), matmul(p.u_z, h_prev)), p.b_z));
  const Var r = sigmoid(add_bias(add(matmul(p.w_r, x), matmul(p.u_r, h_prev)), p.b_r));
  const Var cand = tanh(add_bias(add(matmul(p.w_h, x), matmul(p.u_h, mul(r, h_prev))), p.b_h));
  return add(h_prev, mul(z, sub(cand, h_prev)));
}

// ---- gradient check -------------------------------------------------------

GradCheckResult grad_check(const ScalarFn& f, std::vector<Array>& inputs, const GradCheckOptions& opts) {
  std::vector<Array> analytic;
  {
    Graph g(true);
    std::vector<Var> vars;
    for (const Array& a : inputs) vars.push_back(g.leaf_ref(a));
    const Var loss = f(g, vars);
    g.backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Array* gr = g.grad(vars[i]);
      analytic.push_back(gr ? *gr : Array(inputs[i].shape, 0.0));
    }
  }
  const auto evaluate = [&]() {
    Graph g(false);
    std::vector<Var> vars;
    for (const Array& a : inputs) vars.push_back(g.constant_ref(a));
    return f(g, vars).value()[0];
  };

  GradCheckResult res;
  if (opts.resolve_tolerance > 0.0) {
    const double f0 = std::max(1.0, std::abs(evaluate()));
    const double noise = 4.0 * std::numeric_limits<double>::epsilon() * f0 / (2.0 * opts.step);
    res.denominator_floor = std::max(res.denominator_floor, noise / opts.resolve_tolerance);
  }
  Rng rng(opts.seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = inputs[i].size();
    std::vector<std::size_t> coords;
    if (opts.max_coords_per_input == 0 || opts.max_coords_per_input >= n) {
      for (std::size_t c = 0; c < n; ++c) coords.push_back(c);
    } else {
      for (std::size_t c = 0; c < opts.max_coords_per_input; ++c) coords.push_back(rng.below(n));
    }
    for (std::size_t c : coords) {
      const double saved = inputs[i][c];
      inputs[i][c] = saved + opts.step;
      const double up = evaluate();
      inputs[i][c] = saved - opts.step;
      const double down = evaluate();
      inputs[i][c] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[i][c];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), res.denominator_floor});
      ++res.coords_checked;
      if (std::max(std::abs(a), std::abs(numeric)) < res.denominator_floor) ++res.unresolved;
      if (res.coords_checked == 1 || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_input = i;
        res.worst_coord = c;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace refnms::ad
