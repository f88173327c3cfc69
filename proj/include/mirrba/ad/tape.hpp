#pragma once

// Reverse-mode differentiation over a linear recording tape.
//
// Every operation appends a node holding its forward value, the ids of its
// inputs and a closure that pushes the node's gradient back into those
// inputs. Node ids are creation order, so the tape is topologically sorted by
// construction and backward() is a single reverse sweep.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mirrba/error.hpp"

namespace mirrba::ad {

// Extents, outermost first. Images and fields are (C, Z, Y, X); convolution
// weights are (C_out, C_in, k, k, k); scalars are {1}.
using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tape;

// Lightweight handle to a tape node.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  int id() const { return id_; }

  const Shape& shape() const { return tape_->shape(id_); }
  std::size_t size() const { return tape_->value(id_).size(); }
  std::span<const T> value() const { return tape_->value(id_); }
  std::span<const T> grad() const { return tape_->grad(id_); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  T item() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Shape shape, std::vector<T> values, bool requires_grad = true);
  Var<T> constant(Shape shape, std::vector<T> values) {
    return leaf(std::move(shape), std::move(values), false);
  }

  // Appends an operation node. The backward closure is dropped when no input
  // requires a gradient.
  Var<T> record(Shape shape, std::vector<T> values,
                std::initializer_list<Var<T>> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Allowed once.
  void backward(const Var<T>& loss);

  const Shape& shape(int id) const { return nodes_.at(id).shape; }
  std::span<const T> value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

  // Gradient of a node after backward(); zeros for requires_grad nodes the
  // sweep never reached, empty for constants.
  std::span<const T> grad(int id) const;

  // Accumulation target used by backward closures; allocated on first use.
  std::span<T> grad_buffer(int id);

  std::size_t size() const { return nodes_.size(); }
  bool swept() const { return swept_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    mutable std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Node& node(int id) { return nodes_.at(id); }

  std::vector<Node> nodes_;
  bool swept_ = false;
};

template <typename T>
T Var<T>::item() const {
  const auto v = value();
  if (v.size() != 1) {
    throw ShapeError("item() on non-scalar of shape " + to_string(shape()));
  }
  return v[0];
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mirrba::ad
