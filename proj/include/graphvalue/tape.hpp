#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "graphvalue/errors.hpp"
#include "graphvalue/tensor.hpp"

namespace graphvalue::ad {

enum class Op {
  Input,
  Add,
  Mul,
  Scale,
  Relu,
  Log,
  Matmul,
  AddRowvec,
  SoftmaxRows,
  Concat,
  GatherRows,
  SumRows,
  Reshape,
  PairwiseScores,
  MaskedPairwiseScores,
  EdgeMix,
  CrossEntropy,
};

struct Node {
  Op op = Op::Input;
  std::array<int, 5> in = {-1, -1, -1, -1, -1};
  int n_in = 0;
  std::vector<int> in_list;  // used by Concat instead of `in`
  Tensor value;
  Tensor grad;  // empty until touched by backward
  bool requires_grad = false;
  double scalar = 0.0;                     // Scale factor
  int iarg = 0;                            // Concat axis / CrossEntropy label
  std::vector<int> indices;                // GatherRows
  const SparseEdgeTable* edges = nullptr;  // EdgeMix; must outlive the pass
  int param_slot = -1;                     // Input leaves bound to a ParamStore slot
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
struct Value {
  Tape* tape = nullptr;
  int id = -1;
};

namespace detail {

// acc-based scan: any NaN/Inf poisons the running sum.
inline void require_finite(const double* p, std::size_t n, const char* op) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += p[i];
  if (!std::isfinite(acc)) {
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(p[i]))
        throw NumericFault(std::string(op) + " produced a non-finite value at flat index " + std::to_string(i));
    throw NumericFault(std::string(op) + " produced a non-finite value");
  }
}

// C += A * B, with A m-by-k, B k-by-n, all row-major. Rows of A with exact
// zeros (masked attention, one-hot inputs) skip their inner loop; the result
// is unchanged because a zero coefficient contributes nothing to the sum.
inline void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA += dC * B^T  (dC m-by-n, B k-by-n, dA m-by-k).
inline void matmul_bt_acc(const double* dc, const double* b, double* da, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* dcrow = dc + static_cast<std::size_t>(i) * n;
    double* darow = da + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB += A^T * dC  (A m-by-k, dC m-by-n, dB k-by-n). Zero entries of A skip
// their inner loop, same reasoning as matmul_acc.
inline void matmul_at_acc(const double* a, const double* dc, double* db, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* dcrow = dc + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

}  // namespace detail

// Define-by-run tape: every primitive appends a node, backward() walks the
// record once in reverse. A tape is single-threaded; independent tapes on
// independent threads do not share state.
class Tape {
 public:
  Value constant(Tensor t) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(t);
    return push(std::move(n));
  }

  // Binds a parameter tensor (copied) to a gradient slot. Slots must be
  // distinct within one forward pass.
  Value param(const Tensor& t, int slot) {
    if (slot < 0) throw ContractError("parameter slot must be non-negative");
    for (const Node& node : nodes_)
      if (node.param_slot == slot) throw ContractError("parameter slot " + std::to_string(slot) + " bound twice");
    Node n;
    n.op = Op::Input;
    n.value = t;
    n.requires_grad = true;
    n.param_slot = slot;
    return push(std::move(n));
  }

  const Tensor& val(Value v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

  int size() const { return static_cast<int>(nodes_.size()); }

  // Gradients of a scalar loss with respect to every bound parameter slot,
  // indexed by slot. The tape is cleared before returning.
  std::vector<Tensor> backward(Value loss) {
    if (loss.tape != this || loss.id < 0 || loss.id >= size())
      throw ContractError("backward: loss does not live on this tape");
    if (nodes_[static_cast<std::size_t>(loss.id)].value.numel() != 1)
      throw ContractError("backward requires a scalar loss, got shape " +
                          nodes_[static_cast<std::size_t>(loss.id)].value.shape.str());

    int n_slots = 0;
    for (const Node& n : nodes_)
      if (n.param_slot >= 0) n_slots = std::max(n_slots, n.param_slot + 1);

    grad_of(loss.id) = Tensor::full(nodes_[static_cast<std::size_t>(loss.id)].value.shape, 1.0);
    for (int id = loss.id; id >= 0; --id) {
      Node& node = nodes_[static_cast<std::size_t>(id)];
      if (!node.requires_grad || node.grad.data.empty()) continue;
      backprop_node(id);
    }

    std::vector<Tensor> grads(static_cast<std::size_t>(n_slots));
    for (Node& n : nodes_) {
      if (n.param_slot < 0) continue;
      grads[static_cast<std::size_t>(n.param_slot)] =
          n.grad.data.empty() ? Tensor::zeros(n.value.shape) : std::move(n.grad);
    }
    reset();
    return grads;
  }

  void reset() { nodes_.clear(); }

  // Largest |row sum - 1| observed across every softmax_rows output since
  // construction (or clear_stats). Survives reset() on purpose: a training
  // run can assert over all of its forward passes with one tape.
  double max_softmax_row_dev() const { return softmax_dev_; }
  void clear_stats() { softmax_dev_ = 0.0; }

  // Low-level access for the op builders below.
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Value push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
  }
  void note_softmax_dev(double d) { softmax_dev_ = std::max(softmax_dev_, d); }

 private:
  Tensor& grad_of(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
  }

  void backprop_node(int id);

  std::vector<Node> nodes_;
  double softmax_dev_ = 0.0;
};

namespace detail {

inline void check_same_tape(Value a, Value b, const char* op) {
  if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape)
    throw ContractError(std::string(op) + ": operands live on different tapes");
}

inline Node binary(Op op, Value a, Value b) {
  Node n;
  n.op = op;
  n.in[0] = a.id;
  n.in[1] = b.id;
  n.n_in = 2;
  n.requires_grad = a.tape->node(a.id).requires_grad || b.tape->node(b.id).requires_grad;
  return n;
}

inline Node unary(Op op, Value a) {
  Node n;
  n.op = op;
  n.in[0] = a.id;
  n.n_in = 1;
  n.requires_grad = a.tape->node(a.id).requires_grad;
  return n;
}

}  // namespace detail

// ---- primitive ops ---------------------------------------------------------

inline Value add(Value a, Value b) {
  detail::check_same_tape(a, b, "add");
  const Tensor& ta = a.tape->val(a);
  const Tensor& tb = b.tape->val(b);
  if (ta.shape != tb.shape)
    throw DimensionError("add: shape mismatch " + ta.shape.str() + " vs " + tb.shape.str());
  Node n = detail::binary(Op::Add, a, b);
  n.value = Tensor::zeros(ta.shape);
  for (int i = 0; i < ta.numel(); ++i) n.value.at(i) = ta.at(i) + tb.at(i);
  detail::require_finite(n.value.data.data(), n.value.data.size(), "add");
  return a.tape->push(std::move(n));
}

inline Value mul(Value a, Value b) {
  detail::check_same_tape(a, b, "mul");
  const Tensor& ta = a.tape->val(a);
  const Tensor& tb = b.tape->val(b);
  if (ta.shape != tb.shape)
    throw DimensionError("mul: shape mismatch " + ta.shape.str() + " vs " + tb.shape.str());
  Node n = detail::binary(Op::Mul, a, b);
  n.value = Tensor::zeros(ta.shape);
  for (int i = 0; i < ta.numel(); ++i) n.value.at(i) = ta.at(i) * tb.at(i);
  detail::require_finite(n.value.data.data(), n.value.data.size(), "mul");
  return a.tape->push(std::move(n));
}

inline Value scale(Value a, double c) {
  const Tensor& ta = a.tape->val(a);
  Node n = detail::unary(Op::Scale, a);
  n.scalar = c;
  n.value = Tensor::zeros(ta.shape);
  for (int i = 0; i < ta.numel(); ++i) n.value.at(i) = c * ta.at(i);
  detail::require_finite(n.value.data.data(), n.value.data.size(), "scale");
  return a.tape->push(std::move(n));
}

inline Value relu(Value a) {
  const Tensor& ta = a.tape->val(a);
  Node n = detail::unary(Op::Relu, a);
  n.value = Tensor::zeros(ta.shape);
  for (int i = 0; i < ta.numel(); ++i) n.value.at(i) = ta.at(i) > 0.0 ? ta.at(i) : 0.0;
  return a.tape->push(std::move(n));
}

// Elementwise natural log. Non-positive inputs produce a numeric fault.
inline Value log(Value a) {
  const Tensor& ta = a.tape->val(a);
  Node n = detail::unary(Op::Log, a);
  n.value = Tensor::zeros(ta.shape);
  for (int i = 0; i < ta.numel(); ++i) n.value.at(i) = std::log(ta.at(i));
  detail::require_finite(n.value.data.data(), n.value.data.size(), "log");
  return a.tape->push(std::move(n));
}

inline Value matmul(Value a, Value b) {
  detail::check_same_tape(a, b, "matmul");
  const Tensor& ta = a.tape->val(a);
  const Tensor& tb = b.tape->val(b);
  if (ta.shape.rank != 2 || tb.shape.rank != 2 || ta.shape.dims[1] != tb.shape.dims[0])
    throw DimensionError("matmul: incompatible shapes " + ta.shape.str() + " and " + tb.shape.str());
  int m = ta.shape.dims[0], k = ta.shape.dims[1], ncols = tb.shape.dims[1];
  Node n = detail::binary(Op::Matmul, a, b);
  n.value = Tensor::zeros(Shape::mat(m, ncols));
  detail::matmul_acc(ta.data.data(), tb.data.data(), n.value.data.data(), m, k, ncols);
  detail::require_finite(n.value.data.data(), n.value.data.size(), "matmul");
  return a.tape->push(std::move(n));
}

// Adds a length-n row vector to every row of an m-by-n matrix.
inline Value add_rowvec(Value a, Value b) {
  detail::check_same_tape(a, b, "add_rowvec");
  const Tensor& ta = a.tape->val(a);
  const Tensor& tb = b.tape->val(b);
  if (ta.shape.rank != 2 || tb.numel() != ta.shape.dims[1])
    throw DimensionError("add_rowvec: shape mismatch " + ta.shape.str() + " vs " + tb.shape.str());
  int m = ta.shape.dims[0], ncols = ta.shape.dims[1];
  Node n = detail::binary(Op::AddRowvec, a, b);
  n.value = Tensor::zeros(ta.shape);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < ncols; ++j) n.value.at(i, j) = ta.at(i, j) + tb.at(j);
  detail::require_finite(n.value.data.data(), n.value.data.size(), "add_rowvec");
  return a.tape->push(std::move(n));
}

// Row-wise softmax with max subtraction. Every output row sums to 1; the
// worst observed deviation is tracked on the tape (see max_softmax_row_dev).
inline Value softmax_rows(Value a) {
  const Tensor& ta = a.tape->val(a);
  if (ta.shape.rank != 2) throw DimensionError("softmax_rows: expected a rank-2 tensor, got " + ta.shape.str());
  int m = ta.shape.dims[0], ncols = ta.shape.dims[1];
  Node n = detail::unary(Op::SoftmaxRows, a);
  n.value = Tensor::zeros(ta.shape);
  double worst = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* x = &ta.data[static_cast<std::size_t>(i) * ncols];
    double* y = &n.value.data[static_cast<std::size_t>(i) * ncols];
    double mx = x[0];
    for (int j = 1; j < ncols; ++j) mx = std::max(mx, x[j]);
    double denom = 0.0;
    for (int j = 0; j < ncols; ++j) {
      y[j] = std::exp(x[j] - mx);
      denom += y[j];
    }
    double sum = 0.0;
    for (int j = 0; j < ncols; ++j) {
      y[j] /= denom;
      sum += y[j];
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  detail::require_finite(n.value.data.data(), n.value.data.size(), "softmax_rows");
  assert(worst <= 1e-9 && "softmax_rows row sum drifted");
  a.tape->note_softmax_dev(worst);
  return a.tape->push(std::move(n));
}

// Concatenates rank-2 tensors along axis 0 (rows) or 1 (columns).
inline Value concat(const std::vector<Value>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  Tape* tape = parts[0].tape;
  const Tensor& first = tape->val(parts[0]);
  if (first.shape.rank != 2) throw DimensionError("concat: expected rank-2 tensors, got " + first.shape.str());
  int other_axis = 1 - axis;
  int joined = 0;
  bool rg = false;
  for (Value p : parts) {
    detail::check_same_tape(parts[0], p, "concat");
    const Tensor& t = tape->val(p);
    if (t.shape.rank != 2 || t.shape.dims[other_axis] != first.shape.dims[other_axis])
      throw DimensionError("concat: shape mismatch " + first.shape.str() + " vs " + t.shape.str());
    joined += t.shape.dims[axis];
    rg = rg || tape->node(p.id).requires_grad;
  }
  Node n;
  n.op = Op::Concat;
  n.iarg = axis;
  n.requires_grad = rg;
  for (Value p : parts) n.in_list.push_back(p.id);
  int rows = axis == 0 ? joined : first.shape.dims[0];
  int cols = axis == 0 ? first.shape.dims[1] : joined;
  n.value = Tensor::zeros(Shape::mat(rows, cols));
  if (axis == 0) {
    int r0 = 0;
    for (Value p : parts) {
      const Tensor& t = tape->val(p);
      std::copy(t.data.begin(), t.data.end(), n.value.data.begin() + static_cast<std::size_t>(r0) * cols);
      r0 += t.shape.dims[0];
    }
  } else {
    int c0 = 0;
    for (Value p : parts) {
      const Tensor& t = tape->val(p);
      int pc = t.shape.dims[1];
      for (int i = 0; i < rows; ++i)
        std::copy(t.data.begin() + static_cast<std::size_t>(i) * pc,
                  t.data.begin() + static_cast<std::size_t>(i + 1) * pc,
                  n.value.data.begin() + static_cast<std::size_t>(i) * cols + c0);
      c0 += pc;
    }
  }
  return tape->push(std::move(n));
}

inline Value gather_rows(Value a, std::vector<int> indices) {
  const Tensor& ta = a.tape->val(a);
  if (ta.shape.rank != 2) throw DimensionError("gather_rows: expected a rank-2 tensor, got " + ta.shape.str());
  int m = ta.shape.dims[0], ncols = ta.shape.dims[1];
  for (int idx : indices)
    if (idx < 0 || idx >= m)
      throw ContractError("gather_rows: index " + std::to_string(idx) + " out of range [0, " + std::to_string(m) + ")");
  Node n = detail::unary(Op::GatherRows, a);
  n.value = Tensor::zeros(Shape::mat(static_cast<int>(indices.size()), ncols));
  for (std::size_t k = 0; k < indices.size(); ++k)
    std::copy(ta.data.begin() + static_cast<std::size_t>(indices[k]) * ncols,
              ta.data.begin() + static_cast<std::size_t>(indices[k] + 1) * ncols,
              n.value.data.begin() + k * static_cast<std::size_t>(ncols));
  n.indices = std::move(indices);
  return a.tape->push(std::move(n));
}

// Sums each row of an m-by-n matrix into a length-m vector.
inline Value sum_rows(Value a) {
  const Tensor& ta = a.tape->val(a);
  if (ta.shape.rank != 2) throw DimensionError("sum_rows: expected a rank-2 tensor, got " + ta.shape.str());
  int m = ta.shape.dims[0], ncols = ta.shape.dims[1];
  Node n = detail::unary(Op::SumRows, a);
  n.value = Tensor::zeros(Shape::vec(m));
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < ncols; ++j) acc += ta.at(i, j);
    n.value.at(i) = acc;
  }
  detail::require_finite(n.value.data.data(), n.value.data.size(), "sum_rows");
  return a.tape->push(std::move(n));
}

inline Value reshape(Value a, Shape s) {
  const Tensor& ta = a.tape->val(a);
  if (s.numel() != ta.numel())
    throw DimensionError("reshape: cannot view " + ta.shape.str() + " as " + s.str());
  Node n = detail::unary(Op::Reshape, a);
  n.value = Tensor(s, ta.data);
  return a.tape->push(std::move(n));
}

// Pairwise two-layer perceptron scores: out[i][j] = w2 . relu(p_i + q_j + b1)
// + b2. Equivalent to running an MLP with first-layer weights split into a
// p-block and a q-block over every concatenated pair (p_i, q_j), without
// materializing the pair matrix.
inline Value pairwise_scores(Value p, Value q, Value b1, Value w2, Value b2) {
  detail::check_same_tape(p, q, "pairwise_scores");
  detail::check_same_tape(p, b1, "pairwise_scores");
  detail::check_same_tape(p, w2, "pairwise_scores");
  detail::check_same_tape(p, b2, "pairwise_scores");
  const Tensor& tp = p.tape->val(p);
  const Tensor& tq = q.tape->val(q);
  const Tensor& tb1 = p.tape->val(b1);
  const Tensor& tw2 = p.tape->val(w2);
  const Tensor& tb2 = p.tape->val(b2);
  if (tp.shape.rank != 2 || tq.shape.rank != 2 || tp.shape.dims[1] != tq.shape.dims[1])
    throw DimensionError("pairwise_scores: incompatible inputs " + tp.shape.str() + " and " + tq.shape.str());
  int d = tp.shape.dims[1];
  if (tb1.numel() != d || tw2.numel() != d || tb2.numel() != 1)
    throw DimensionError("pairwise_scores: hidden width " + std::to_string(d) + " does not match b1 " +
                         tb1.shape.str() + " / w2 " + tw2.shape.str() + " / b2 " + tb2.shape.str());
  int m = tp.shape.dims[0], ncols = tq.shape.dims[0];
  Node n;
  n.op = Op::PairwiseScores;
  n.in = {p.id, q.id, b1.id, w2.id, b2.id};
  n.n_in = 5;
  n.requires_grad = false;
  for (int k = 0; k < 5; ++k) n.requires_grad = n.requires_grad || p.tape->node(n.in[static_cast<std::size_t>(k)]).requires_grad;
  n.value = Tensor::zeros(Shape::mat(m, ncols));
  const double* bp = tb1.data.data();
  const double* wp = tw2.data.data();
  double bias2 = tb2.at(0);
  for (int i = 0; i < m; ++i) {
    const double* pi = &tp.data[static_cast<std::size_t>(i) * d];
    double* out = &n.value.data[static_cast<std::size_t>(i) * ncols];
    for (int j = 0; j < ncols; ++j) {
      const double* qj = &tq.data[static_cast<std::size_t>(j) * d];
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        double s = pi[t] + qj[t] + bp[t];
        acc += wp[t] * (s > 0.0 ? s : 0.0);
      }
      out[j] = acc + bias2;
    }
  }
  detail::require_finite(n.value.data.data(), n.value.data.size(), "pairwise_scores");
  return p.tape->push(std::move(n));
}

// pairwise_scores restricted to an additive mask's support: where
// mask[i][j] == 0 the output is the usual perceptron score, elsewhere the
// output is exactly mask[i][j] and the pair is never evaluated. Produces the
// same values as add(pairwise_scores(...), mask) whenever the masked entries
// feed a row softmax that underflows them to zero (a large negative mask),
// because such entries receive an exactly-zero upstream gradient either way.
// The mask is treated as a constant; gradients never flow into it. Callers
// must leave at least one unmasked entry per row for a downstream softmax to
// be meaningful.
inline Value masked_pairwise_scores(Value p, Value q, Value b1, Value w2, Value b2, Value mask) {
  detail::check_same_tape(p, q, "masked_pairwise_scores");
  detail::check_same_tape(p, b1, "masked_pairwise_scores");
  detail::check_same_tape(p, w2, "masked_pairwise_scores");
  detail::check_same_tape(p, b2, "masked_pairwise_scores");
  detail::check_same_tape(p, mask, "masked_pairwise_scores");
  const Tensor& tp = p.tape->val(p);
  const Tensor& tq = q.tape->val(q);
  const Tensor& tb1 = p.tape->val(b1);
  const Tensor& tw2 = p.tape->val(w2);
  const Tensor& tb2 = p.tape->val(b2);
  const Tensor& tm = p.tape->val(mask);
  if (tp.shape.rank != 2 || tq.shape.rank != 2 || tp.shape.dims[1] != tq.shape.dims[1])
    throw DimensionError("masked_pairwise_scores: incompatible inputs " + tp.shape.str() + " and " + tq.shape.str());
  int d = tp.shape.dims[1];
  if (tb1.numel() != d || tw2.numel() != d || tb2.numel() != 1)
    throw DimensionError("masked_pairwise_scores: hidden width " + std::to_string(d) + " does not match b1 " +
                         tb1.shape.str() + " / w2 " + tw2.shape.str() + " / b2 " + tb2.shape.str());
  int m = tp.shape.dims[0], ncols = tq.shape.dims[0];
  if (tm.shape.rank != 2 || tm.shape.dims[0] != m || tm.shape.dims[1] != ncols)
    throw DimensionError("masked_pairwise_scores: mask shape " + tm.shape.str() + " does not match scores " +
                         Shape::mat(m, ncols).str());
  Node n;
  n.op = Op::MaskedPairwiseScores;
  for (int id : {p.id, q.id, b1.id, w2.id, b2.id, mask.id}) n.in_list.push_back(id);
  for (int k = 0; k < 5; ++k)
    n.requires_grad = n.requires_grad || p.tape->node(n.in_list[static_cast<std::size_t>(k)]).requires_grad;
  n.value = Tensor::zeros(Shape::mat(m, ncols));
  const double* bp = tb1.data.data();
  const double* wp = tw2.data.data();
  double bias2 = tb2.at(0);
  for (int i = 0; i < m; ++i) {
    const double* pi = &tp.data[static_cast<std::size_t>(i) * d];
    const double* mrow = &tm.data[static_cast<std::size_t>(i) * ncols];
    double* out = &n.value.data[static_cast<std::size_t>(i) * ncols];
    for (int j = 0; j < ncols; ++j) {
      if (mrow[j] != 0.0) {
        out[j] = mrow[j];
        continue;
      }
      const double* qj = &tq.data[static_cast<std::size_t>(j) * d];
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        double s = pi[t] + qj[t] + bp[t];
        acc += wp[t] * (s > 0.0 ? s : 0.0);
      }
      out[j] = acc + bias2;
    }
  }
  detail::require_finite(n.value.data.data(), n.value.data.size(), "masked_pairwise_scores");
  return p.tape->push(std::move(n));
}

// Attention-weighted aggregation of sparse edge attributes:
// out[i][slot] = sum_j A[i][j] * edge_value(i, j, slot). The edge table is a
// constant input and must outlive the tape pass.
inline Value edge_mix(Value a, const SparseEdgeTable& edges) {
  const Tensor& ta = a.tape->val(a);
  if (ta.shape.rank != 2 || ta.shape.dims[0] != edges.n_nodes || ta.shape.dims[1] != edges.n_nodes)
    throw DimensionError("edge_mix: attention shape " + ta.shape.str() + " does not match " +
                         std::to_string(edges.n_nodes) + " nodes");
  if (edges.row_begin.size() != static_cast<std::size_t>(edges.n_nodes) + 1)
    throw ContractError("edge_mix: edge table not finalized");
  Node n = detail::unary(Op::EdgeMix, a);
  n.edges = &edges;
  int nn = edges.n_nodes, slots = edges.n_slots;
  n.value = Tensor::zeros(Shape::mat(nn, slots));
  for (int i = 0; i < nn; ++i) {
    const double* arow = &ta.data[static_cast<std::size_t>(i) * nn];
    double* out = &n.value.data[static_cast<std::size_t>(i) * slots];
    for (int e = edges.row_begin[static_cast<std::size_t>(i)]; e < edges.row_begin[static_cast<std::size_t>(i) + 1]; ++e) {
      const SparseEdgeTable::Entry& entry = edges.entries[static_cast<std::size_t>(e)];
      out[entry.slot] += arow[entry.dst] * entry.value;
    }
  }
  detail::require_finite(n.value.data.data(), n.value.data.size(), "edge_mix");
  return a.tape->push(std::move(n));
}

// Fused softmax cross-entropy on a single logit row. Stable: uses
// log-sum-exp with max subtraction.
inline Value cross_entropy_with_logits(Value logits, int label) {
  const Tensor& tl = logits.tape->val(logits);
  int n_classes = tl.numel();
  if (tl.shape.rank == 2 && tl.shape.dims[0] != 1)
    throw DimensionError("cross_entropy_with_logits: expected one logit row, got " + tl.shape.str());
  if (label < 0 || label >= n_classes)
    throw ContractError("cross_entropy_with_logits: label " + std::to_string(label) + " out of range [0, " +
                        std::to_string(n_classes) + ")");
  Node n = detail::unary(Op::CrossEntropy, logits);
  n.iarg = label;
  double mx = tl.at(0);
  for (int j = 1; j < n_classes; ++j) mx = std::max(mx, tl.at(j));
  double denom = 0.0;
  for (int j = 0; j < n_classes; ++j) denom += std::exp(tl.at(j) - mx);
  double loss = std::log(denom) + mx - tl.at(label);
  n.value = Tensor::scalar(loss);
  detail::require_finite(n.value.data.data(), 1, "cross_entropy_with_logits");
  return logits.tape->push(std::move(n));
}

// ---- backward dispatch ------------------------------------------------------

inline void Tape::backprop_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = n.grad;
  auto in_rg = [&](int k) { return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].requires_grad; };
  auto in_val = [&](int k) -> const Tensor& { return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].value; };
  auto in_grad = [&](int k) -> Tensor& { return grad_of(n.in[static_cast<std::size_t>(k)]); };

  switch (n.op) {
    case Op::Input:
      break;
    case Op::Add: {
      for (int k = 0; k < 2; ++k)
        if (in_rg(k)) {
          Tensor& d = in_grad(k);
          for (int i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
        }
      break;
    }
    case Op::Mul: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        const Tensor& other = in_val(1);
        for (int i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) * other.at(i);
      }
      if (in_rg(1)) {
        Tensor& d = in_grad(1);
        const Tensor& other = in_val(0);
        for (int i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) * other.at(i);
      }
      break;
    }
    case Op::Scale: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        for (int i = 0; i < g.numel(); ++i) d.at(i) += n.scalar * g.at(i);
      }
      break;
    }
    case Op::Relu: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        const Tensor& x = in_val(0);
        for (int i = 0; i < g.numel(); ++i) d.at(i) += x.at(i) > 0.0 ? g.at(i) : 0.0;
      }
      break;
    }
    case Op::Log: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        const Tensor& x = in_val(0);
        for (int i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) / x.at(i);
      }
      break;
    }
    case Op::Matmul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      int m = a.shape.dims[0], k = a.shape.dims[1], ncols = b.shape.dims[1];
      if (in_rg(0)) detail::matmul_bt_acc(g.data.data(), b.data.data(), in_grad(0).data.data(), m, k, ncols);
      if (in_rg(1)) detail::matmul_at_acc(a.data.data(), g.data.data(), in_grad(1).data.data(), m, k, ncols);
      break;
    }
    case Op::AddRowvec: {
      int m = g.shape.dims[0], ncols = g.shape.dims[1];
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        for (int i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
      }
      if (in_rg(1)) {
        Tensor& d = in_grad(1);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < ncols; ++j) d.at(j) += g.at(i, j);
      }
      break;
    }
    case Op::SoftmaxRows: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        const Tensor& y = n.value;
        int m = y.shape.dims[0], ncols = y.shape.dims[1];
        for (int i = 0; i < m; ++i) {
          double dot = 0.0;
          for (int j = 0; j < ncols; ++j) dot += g.at(i, j) * y.at(i, j);
          for (int j = 0; j < ncols; ++j) d.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
        }
      }
      break;
    }
    case Op::Concat: {
      int axis = n.iarg;
      int cols = n.value.shape.dims[1];
      int offset = 0;
      for (int pid : n.in_list) {
        Node& part = nodes_[static_cast<std::size_t>(pid)];
        int pr = part.value.shape.dims[0], pc = part.value.shape.dims[1];
        if (part.requires_grad) {
          Tensor& d = grad_of(pid);
          if (axis == 0) {
            for (int i = 0; i < pr; ++i)
              for (int j = 0; j < pc; ++j) d.at(i, j) += g.data[static_cast<std::size_t>(offset + i) * cols + j];
          } else {
            for (int i = 0; i < pr; ++i)
              for (int j = 0; j < pc; ++j) d.at(i, j) += g.data[static_cast<std::size_t>(i) * cols + offset + j];
          }
        }
        offset += axis == 0 ? pr : pc;
      }
      break;
    }
    case Op::GatherRows: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        int ncols = d.shape.dims[1];
        for (std::size_t k = 0; k < n.indices.size(); ++k)
          for (int j = 0; j < ncols; ++j)
            d.at(n.indices[k], j) += g.data[k * static_cast<std::size_t>(ncols) + j];
      }
      break;
    }
    case Op::SumRows: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        int m = d.shape.dims[0], ncols = d.shape.dims[1];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < ncols; ++j) d.at(i, j) += g.at(i);
      }
      break;
    }
    case Op::Reshape: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        for (int i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
      }
      break;
    }
    case Op::PairwiseScores: {
      const Tensor& p = in_val(0);
      const Tensor& q = in_val(1);
      const Tensor& b1 = in_val(2);
      const Tensor& w2 = in_val(3);
      int m = p.shape.dims[0], ncols = q.shape.dims[0], d = p.shape.dims[1];
      bool rg_p = in_rg(0), rg_q = in_rg(1), rg_b1 = in_rg(2), rg_w2 = in_rg(3), rg_b2 = in_rg(4);
      double* dp = rg_p ? in_grad(0).data.data() : nullptr;
      double* dq = rg_q ? in_grad(1).data.data() : nullptr;
      double* db1 = rg_b1 ? in_grad(2).data.data() : nullptr;
      double* dw2 = rg_w2 ? in_grad(3).data.data() : nullptr;
      double db2_acc = 0.0;
      const double* bp = b1.data.data();
      const double* wp = w2.data.data();
      for (int i = 0; i < m; ++i) {
        const double* pi = &p.data[static_cast<std::size_t>(i) * d];
        const double* grow = &g.data[static_cast<std::size_t>(i) * ncols];
        double* dpi = rg_p ? dp + static_cast<std::size_t>(i) * d : nullptr;
        for (int j = 0; j < ncols; ++j) {
          double gv = grow[j];
          if (gv == 0.0) continue;
          const double* qj = &q.data[static_cast<std::size_t>(j) * d];
          double* dqj = rg_q ? dq + static_cast<std::size_t>(j) * d : nullptr;
          db2_acc += gv;
          for (int t = 0; t < d; ++t) {
            double s = pi[t] + qj[t] + bp[t];
            if (s > 0.0) {
              double through = gv * wp[t];
              if (dpi) dpi[t] += through;
              if (dqj) dqj[t] += through;
              if (db1) db1[t] += through;
              if (dw2) dw2[t] += gv * s;
            }
          }
        }
      }
      if (rg_b2) in_grad(4).at(0) += db2_acc;
      break;
    }
    case Op::MaskedPairwiseScores: {
      auto list_rg = [&](int k) { return nodes_[static_cast<std::size_t>(n.in_list[static_cast<std::size_t>(k)])].requires_grad; };
      auto list_val = [&](int k) -> const Tensor& { return nodes_[static_cast<std::size_t>(n.in_list[static_cast<std::size_t>(k)])].value; };
      auto list_grad = [&](int k) -> Tensor& { return grad_of(n.in_list[static_cast<std::size_t>(k)]); };
      const Tensor& p = list_val(0);
      const Tensor& q = list_val(1);
      const Tensor& b1 = list_val(2);
      const Tensor& w2 = list_val(3);
      const Tensor& mask = list_val(5);
      int m = p.shape.dims[0], ncols = q.shape.dims[0], d = p.shape.dims[1];
      bool rg_p = list_rg(0), rg_q = list_rg(1), rg_b1 = list_rg(2), rg_w2 = list_rg(3), rg_b2 = list_rg(4);
      double* dp = rg_p ? list_grad(0).data.data() : nullptr;
      double* dq = rg_q ? list_grad(1).data.data() : nullptr;
      double* db1 = rg_b1 ? list_grad(2).data.data() : nullptr;
      double* dw2 = rg_w2 ? list_grad(3).data.data() : nullptr;
      double db2_acc = 0.0;
      const double* bp = b1.data.data();
      const double* wp = w2.data.data();
      for (int i = 0; i < m; ++i) {
        const double* pi = &p.data[static_cast<std::size_t>(i) * d];
        const double* grow = &g.data[static_cast<std::size_t>(i) * ncols];
        const double* mrow = &mask.data[static_cast<std::size_t>(i) * ncols];
        double* dpi = rg_p ? dp + static_cast<std::size_t>(i) * d : nullptr;
        for (int j = 0; j < ncols; ++j) {
          double gv = grow[j];
          if (gv == 0.0 || mrow[j] != 0.0) continue;  // masked outputs are constants
          const double* qj = &q.data[static_cast<std::size_t>(j) * d];
          double* dqj = rg_q ? dq + static_cast<std::size_t>(j) * d : nullptr;
          db2_acc += gv;
          for (int t = 0; t < d; ++t) {
            double s = pi[t] + qj[t] + bp[t];
            if (s > 0.0) {
              double through = gv * wp[t];
              if (dpi) dpi[t] += through;
              if (dqj) dqj[t] += through;
              if (db1) db1[t] += through;
              if (dw2) dw2[t] += gv * s;
            }
          }
        }
      }
      if (rg_b2) list_grad(4).at(0) += db2_acc;
      break;
    }
    case Op::EdgeMix: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        int nn = n.edges->n_nodes, slots = n.edges->n_slots;
        for (int i = 0; i < nn; ++i) {
          const double* grow = &g.data[static_cast<std::size_t>(i) * slots];
          double* drow = &d.data[static_cast<std::size_t>(i) * nn];
          for (int e = n.edges->row_begin[static_cast<std::size_t>(i)]; e < n.edges->row_begin[static_cast<std::size_t>(i) + 1]; ++e) {
            const SparseEdgeTable::Entry& entry = n.edges->entries[static_cast<std::size_t>(e)];
            drow[entry.dst] += entry.value * grow[entry.slot];
          }
        }
      }
      break;
    }
    case Op::CrossEntropy: {
      if (in_rg(0)) {
        Tensor& d = in_grad(0);
        const Tensor& x = in_val(0);
        int n_classes = x.numel();
        double gv = g.at(0);
        double mx = x.at(0);
        for (int j = 1; j < n_classes; ++j) mx = std::max(mx, x.at(j));
        double denom = 0.0;
        for (int j = 0; j < n_classes; ++j) denom += std::exp(x.at(j) - mx);
        for (int j = 0; j < n_classes; ++j) {
          double p = std::exp(x.at(j) - mx) / denom;
          d.at(j) += gv * (p - (j == n.iarg ? 1.0 : 0.0));
        }
      }
      break;
    }
  }
}

}  // namespace graphvalue::ad
