#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// arrays of doubles. A Graph records every operation as it is evaluated;
// backward() sweeps the tape once in reverse, which is a topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace refnms::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(Shape s, double fill = 0.0);
  Array(Shape s, std::vector<double> values);

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
  static Array vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Array(Shape{n}, std::move(v));
  }
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Array(Shape{rows, cols}, std::move(v));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  const double* row(std::size_t r) const { return data.data() + r * shape[1]; }
  double* row(std::size_t r) { return data.data() + r * shape[1]; }

  friend bool operator==(const Array&, const Array&) = default;
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the Graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Shape& shape() const { return value().shape; }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  // record=false builds values only (no backward rules), for inference and
  // finite differences.
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Array value);
  // Leaf that receives a gradient.
  Var leaf(Array value);
  // Leaf over caller-owned storage, which must outlive the Graph. Avoids
  // copying large parameter tensors.
  Var leaf_ref(const Array& value);
  Var constant_ref(const Array& value);

  const Array& value(Var v) const;
  const Array& value(std::size_t id) const;
  // nullptr when no gradient reached the node.
  const Array* grad(Var v) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_; }

  // Seeds d(loss)/d(loss) = 1 and propagates. The loss must hold exactly one
  // element. A second call on the same graph throws.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  // Nodes processed by the last backward() sweep.
  std::size_t backward_visits() const { return visits_; }

  // Used by operation implementations.
  Var push(Array value, std::vector<std::size_t> parents, BackwardFn fn);
  // Gradient buffer of a node, materialized as zeros on first use.
  Array& grad_acc(std::size_t id);
  const Array& grad_of(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Array owned;
    const Array* external = nullptr;
    Array grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };
  Var add_leaf(Array owned, const Array* external, bool requires_grad);

  std::vector<Node> nodes_;
  bool record_ = true;
  bool backward_done_ = false;
  std::size_t visits_ = 0;
};

// ---- primitives -----------------------------------------------------------
// Shape errors throw ShapeError naming the operation and the shapes.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
// A (m,k) x B (k,n) -> (m,n); A (m,k) x b (k) -> (m).
Var matmul(Var a, Var b);
// A (m,k) x B(n,k)^T -> (m,n). Row-major friendly form of a linear layer.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
// X (..., n) + b (n), broadcast over leading rows.
Var add_bias(Var x, Var b);
// Rank-1 inputs concatenate end to end (axis 0); rank-2 inputs join along
// axis 0 (rows) or axis 1 (columns).
Var concat(std::span<const Var> parts, std::size_t axis);
// k vectors of length n -> (k, n).
Var stack_rows(std::span<const Var> rows);
Var softmax(Var a, std::size_t axis);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
// x / sqrt(sum(x^2) + eps) along axis.
Var l2_normalize(Var a, std::size_t axis, double eps = 1e-12);
Var sum(Var a);
Var mean(Var a);
Var log(Var a);
// Gradient passes where lo <= x <= hi.
Var clamp(Var a, double lo, double hi);
// Entries (rank 1) or rows (rank 2) at the given indices, repeats allowed.
Var gather(Var a, std::span<const std::size_t> indices);
// One row of a matrix as a vector.
Var row(Var a, std::size_t r);
// Elements [begin, end) of a vector.
Var slice(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
// out(i,j) = a(i) + b(j)
Var add_outer(Var a, Var b);

// ---- recurrent cell -------------------------------------------------------

struct GruParams {
  Var w_z, w_r, w_h;  // (d_h, d_in)
  Var u_z, u_r, u_h;  // (d_h, d_h)
  Var b_z, b_r, b_h;  // (d_h)
};

// z = s(W_z x + U_z h + b_z), r = s(W_r x + U_r h + b_r),
// c = tanh(W_h x + U_h (r*h) + b_h), h' = (1 - z)*h + z*c.
Var gru_cell(Var x, Var h_prev, const GruParams& p);

// ---- gradient check -------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates checked per input; 0 checks all of them.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  // When > 0, the denominator is floored at the smallest gradient a central
  // difference can resolve to this relative tolerance in double precision,
  // about 4 ulp(f) / (2 step) / resolve_tolerance. Entries below that floor
  // are then judged on absolute error. 0 keeps the fixed 1e-8 floor.
  double resolve_tolerance = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
  double denominator_floor = 1e-8;
  // Coordinates whose analytic and numeric values both sit below the floor.
  std::size_t unresolved = 0;
};

using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

// Compares analytic gradients against central differences with relative
// error |a - n| / max(|a|, |n|, floor). Inputs are restored on return.
GradCheckResult grad_check(const ScalarFn& f, std::vector<Array>& inputs,
                           const GradCheckOptions& opts = {});

}  // namespace refnms::ad
