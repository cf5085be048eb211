#pragma once

#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "untangle/tensor.hpp"

namespace untangle {

enum class Unary { Tanh, Sigmoid, Relu };

/// A trainable tensor with an accumulated gradient of identical shape.
class Parameter {
 public:
  Parameter(std::string name, Tensor value)
      : name_(std::move(name)), value_(std::move(value)), grad_(Tensor::zeros(value_.shape())) {}

  const std::string& name() const { return name_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  Tensor& grad() { return grad_; }
  const Tensor& grad() const { return grad_; }

  void zero_grad() {
    for (double& g : grad_.data()) g = 0.0;
  }

 private:
  std::string name_;
  Tensor value_;
  Tensor grad_;
};

/// Owns parameters in a fixed creation order; the order drives checkpoint
/// layout and optimizer state, so it must be deterministic.
class ParameterStore {
 public:
  Parameter& create(std::string name, Tensor init);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::vector<Parameter*> pointers();
  std::size_t count() const { return items_.size(); }
  std::size_t total_size() const;
  void zero_grad();

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& value() const;
};

/// Reverse-mode tape over the fixed op set the model needs. One tape per
/// forward pass; backward() may run once and the tape is then consumed.
/// Every op validates shapes and rejects non-finite outputs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Parameter& p);

  /// (m x k)·(k x n) -> (m x n); with a rank-1 right operand, (m x k)·(k) -> (m).
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// Adds a rank-1 vector to every row of a matrix.
  Var add_rows(Var m, Var v);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var unary(Unary kind, Var a);
  Var tanh(Var a) { return unary(Unary::Tanh, a); }
  Var sigmoid(Var a) { return unary(Unary::Sigmoid, a); }
  Var relu(Var a) { return unary(Unary::Relu, a); }
  Var transpose(Var a);

  /// Row-wise exp-normalize of (logits + mask) over the last axis. Mask
  /// entries are 0 (keep) or the -inf sentinel; masked outputs are exactly 0.
  /// A fully masked row raises NumericError.
  Var masked_softmax(Var logits, Tensor mask);

  /// -log softmax(logits)[gold] for a rank-1 logits vector, via log-sum-exp.
  Var cross_entropy(Var logits, std::size_t gold);

  Var row(Var m, std::size_t i);
  Var vstack(std::span<const Var> rows);   // rank-1 rows -> matrix
  Var hstack(std::span<const Var> mats);   // rank-2 blocks side by side
  Var concat(std::span<const Var> vecs);   // rank-1 concatenation
  /// Mean of the selected matrix rows (repeats allowed); an empty selection
  /// yields a zero vector that contributes no gradient.
  Var mean_rows(Var m, std::vector<std::size_t> rows);
  Var sum(Var a);

  /// Inverted dropout with a mask drawn from rng at build time; rate 0 is
  /// the identity and adds no node.
  Var dropout(Var a, double rate, std::mt19937_64& rng);

  /// Accumulates d loss / d parameter into every reachable Parameter's grad.
  /// loss must be scalar. A second call without a fresh forward throws
  /// StaleGraphError.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  /// -inf sentinel used in additive masks.
  static constexpr double kMaskedOut = -1e9;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_live = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, const Node&)> back;
  };

  Var push(Tensor value, std::function<void(Tape&, const Node&)> back, const char* op);
  void accumulate(int id, const Tensor& g);
  Tensor& grad_of(int id);

  std::vector<Node> nodes_;
  bool consumed_ = false;

  friend struct Var;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace untangle
