#include "mirrba/ad/tape.hpp"

#include <algorithm>
#include <sstream>

namespace mirrba::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? ", " : "") << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
Var<T> Tape<T>::leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("leaf of shape " + to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::record(Shape shape, std::vector<T> values,
                       std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  if (swept_) {
    throw Error("cannot record on a tape that has already been swept");
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("op output shape " + to_string(shape) + " holds " +
                     std::to_string(values.size()) + " values");
  }
  bool needs = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) {
      throw Error("op input belongs to a different tape");
    }
    needs = needs || requires_grad(in.id());
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.requires_grad = needs;
  if (needs) {
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
std::span<const T> Tape<T>::grad(int id) const {
  const Node& n = nodes_.at(id);
  if (n.requires_grad && n.grad.empty()) {
    n.grad.assign(n.value.size(), T(0));
  }
  return n.grad;
}

template <typename T>
std::span<T> Tape<T>::grad_buffer(int id) {
  Node& n = node(id);
  if (n.grad.empty()) {
    n.grad.assign(n.value.size(), T(0));
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (swept_) {
    throw Error("backward() called twice on the same tape");
  }
  if (&loss.tape() != this) {
    throw Error("loss belongs to a different tape");
  }
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     to_string(loss.shape()));
  }
  if (!requires_grad(loss.id())) {
    throw Error("loss does not depend on any differentiable leaf");
  }
  swept_ = true;
  grad_buffer(loss.id())[0] = T(1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = node(id);
    if (!n.backward || n.grad.empty()) {
      continue;
    }
    n.backward(*this, id);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mirrba::ad
