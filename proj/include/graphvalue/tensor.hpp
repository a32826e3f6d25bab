#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "graphvalue/errors.hpp"
#include "graphvalue/rng.hpp"

namespace graphvalue {

// Dense shape, rank 1..3.
struct Shape {
  int dims[3] = {0, 0, 0};
  int rank = 0;

  static Shape vec(int n) { return Shape{{n, 0, 0}, 1}; }
  static Shape mat(int r, int c) { return Shape{{r, c, 0}, 2}; }
  static Shape cube(int a, int b, int c) { return Shape{{a, b, c}, 3}; }

  int numel() const {
    int n = 1;
    for (int i = 0; i < rank; ++i) n *= dims[i];
    return rank == 0 ? 0 : n;
  }
  int rows() const { return dims[0]; }
  int cols() const { return rank >= 2 ? dims[1] : 1; }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i)
      if (dims[i] != o.dims[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank; ++i) {
      if (i) s += "x";
      s += std::to_string(dims[i]);
    }
    return s + "]";
  }
};

// Dense row-major tensor of doubles. Gradient bookkeeping lives on the tape,
// not here; this is a plain value type.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(s), data(std::move(d)) {
    if (static_cast<int>(data.size()) != shape.numel())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s, std::vector<double>(static_cast<std::size_t>(s.numel()), 0.0)); }
  static Tensor full(Shape s, double v) {
    return Tensor(s, std::vector<double>(static_cast<std::size_t>(s.numel()), v));
  }
  static Tensor scalar(double v) { return Tensor(Shape::vec(1), {v}); }
  static Tensor row(std::initializer_list<double> vals) {
    return Tensor(Shape::mat(1, static_cast<int>(vals.size())), std::vector<double>(vals));
  }

  int numel() const { return shape.numel(); }
  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape.dims[1] + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape.dims[1] + j]; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericFault(std::string("non-finite values in ") + what);
}

// Glorot-uniform initialization in +/- sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape s, int fan_in, int fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(s);
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

// Named parameter tensors. The index of a tensor is its "slot": gradients
// returned by Tape::backward are aligned with these slots.
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  int add(std::string name, Tensor t) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
    return static_cast<int>(tensors.size()) - 1;
  }
  int size() const { return static_cast<int>(tensors.size()); }
  Tensor& operator[](int i) { return tensors[static_cast<std::size_t>(i)]; }
  const Tensor& operator[](int i) const { return tensors[static_cast<std::size_t>(i)]; }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (names[static_cast<std::size_t>(i)] == name) return i;
    return -1;
  }
  int total_coords() const {
    int n = 0;
    for (const Tensor& t : tensors) n += t.numel();
    return n;
  }
};

// Sparse per-pair, per-slot edge attributes of a complete graph over n nodes.
// Entries are kept sorted by (src, dst, slot) and indexed by source node so
// aggregation can walk one node's outgoing entries contiguously.
struct SparseEdgeTable {
  struct Entry {
    int src = 0, dst = 0, slot = 0;
    double value = 0.0;
    bool operator==(const Entry& o) const {
      return src == o.src && dst == o.dst && slot == o.slot && value == o.value;
    }
  };

  int n_nodes = 0;
  int n_slots = 0;
  std::vector<Entry> entries;
  std::vector<int> row_begin;  // size n_nodes + 1 after finalize()

  void add(int src, int dst, int slot, double value) {
    entries.push_back(Entry{src, dst, slot, value});
  }

  void finalize() {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.src != b.src) return a.src < b.src;
      if (a.dst != b.dst) return a.dst < b.dst;
      return a.slot < b.slot;
    });
    row_begin.assign(static_cast<std::size_t>(n_nodes) + 1, 0);
    for (const Entry& e : entries) row_begin[static_cast<std::size_t>(e.src) + 1]++;
    for (int i = 0; i < n_nodes; ++i) row_begin[static_cast<std::size_t>(i) + 1] += row_begin[static_cast<std::size_t>(i)];
  }

  // Dense [n_nodes x n_nodes x n_slots] view, for tests and reference paths.
  Tensor dense() const {
    Tensor t = Tensor::zeros(Shape::cube(n_nodes, n_nodes, n_slots));
    for (const Entry& e : entries)
      t.data[(static_cast<std::size_t>(e.src) * n_nodes + e.dst) * n_slots + e.slot] = e.value;
    return t;
  }

  bool operator==(const SparseEdgeTable& o) const {
    return n_nodes == o.n_nodes && n_slots == o.n_slots && entries == o.entries;
  }
};

}  // namespace graphvalue
