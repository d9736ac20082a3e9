#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values live on the
// tape; Var is a cheap handle. Parameters are owned by a ParameterStore and
// enter a tape through Tape::param, and Tape::backward accumulates into
// Parameter::grad. The scalar type is a template argument so the same model
// code trains in float and is gradient-checked in double.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ladiff::ag {

using Index = Eigen::Index;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  /// Creates a zero-initialized parameter. Names must be unique.
  Parameter<T>& create(std::string name, Index rows, Index cols);

  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;

  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;

  void zero_grad();
  std::size_t scalar_count() const;
  /// Order-sensitive hash over names, shapes and raw values.
  std::uint64_t checksum() const;

 private:
  // unique_ptr keeps addresses stable; modules hold raw Parameter pointers.
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  /// With record_grad false no backward closures are built (inference).
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix<T> value, bool requires_grad = false);
  Var param(Parameter<T>& p);

  const Matrix<T>& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target w.r.t. v; empty if unreached.
  const Matrix<T>& grad(Var v) const { return nodes_[v.id].grad; }
  T scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates; loss must be 1x1.
  void backward(Var loss);

  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  /// Adds a 1xC row to every row of a.
  Var add_row(Var a, Var row);
  /// Multiplies every row of a elementwise by a 1xC row.
  Var mul_row(Var a, Var row);
  Var scale(Var a, T s);
  Var add_scalar(Var a, T s);
  Var exp(Var a);
  Var square(Var a);
  Var gelu(Var a);
  Var silu(Var a);
  Var clamp(Var a, T lo, T hi);
  Var softmax_rows(Var a);
  Var layer_norm(Var a, Var gamma, Var beta, T eps = T(1e-5));
  /// Row-wise L2 normalization.
  Var normalize_rows(Var a, T eps = T(1e-8));
  Var slice_rows(Var a, Index begin, Index count);
  Var slice_cols(Var a, Index begin, Index count);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  /// Repeats a 1xC row n times.
  Var broadcast_rows(Var row, Index n);
  /// Column means, 1xC.
  Var mean_rows(Var a);
  Var transpose(Var a);
  Var sum(Var a);
  Var mean(Var a);
  /// Mean squared difference over all entries.
  Var mse(Var a, Var b);
  /// Row-wise log-softmax cross entropy against integer targets, averaged.
  Var cross_entropy_rows(Var logits, std::span<const int> targets);

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Matrix<T> value, bool needs_grad);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  bool tracking(std::initializer_list<Var> inputs) const;
  template <typename Expr>
  void accumulate(Var v, const Expr& g);

  bool record_grad_;
  std::vector<Node> nodes_;
};

}  // namespace ladiff::ag
