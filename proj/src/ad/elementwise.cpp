#include <cmath>

#include "mirrba/ad/ops.hpp"

namespace mirrba::ad {

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) +
                     " vs " + to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] + bv[i];
  }
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(
      a.shape(), std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
        const auto g = t.grad(self);
        for (int id : {ia, ib}) {
          if (!t.requires_grad(id)) continue;
          auto gi = t.grad_buffer(id);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
      });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] - bv[i];
  }
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(
      a.shape(), std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
        const auto g = t.grad(self);
        if (t.requires_grad(ia)) {
          auto ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
          auto gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * bv[i];
  }
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(
      a.shape(), std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
        const auto g = t.grad(self);
        const auto av = t.value(ia);
        const auto bv = t.value(ib);
        if (t.requires_grad(ia)) {
          auto ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
          auto gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  const auto av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * factor;
  }
  const int ia = a.id();
  return a.tape().record(a.shape(), std::move(out), {a},
                         [ia, factor](Tape<T>& t, int self) {
                           const auto g = t.grad(self);
                           auto ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i] * factor;
                           }
                         });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value()) acc += static_cast<double>(v);
  const int ia = a.id();
  return a.tape().record({1}, {static_cast<T>(acc)}, {a},
                         [ia](Tape<T>& t, int self) {
                           const T g = t.grad(self)[0];
                           for (T& gi : t.grad_buffer(ia)) gi += g;
                         });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value()) acc += static_cast<double>(v);
  const double n = static_cast<double>(a.size());
  const int ia = a.id();
  return a.tape().record({1}, {static_cast<T>(acc / n)}, {a},
                         [ia, n](Tape<T>& t, int self) {
                           const T g = static_cast<T>(t.grad(self)[0] / n);
                           for (T& gi : t.grad_buffer(ia)) gi += g;
                         });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  if (!(slope > T(0) && slope < T(1))) {
    throw ArgumentError("leaky_relu slope must lie in (0, 1)");
  }
  const auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] >= T(0) ? xv[i] : slope * xv[i];
  }
  const int ix = x.id();
  return x.tape().record(x.shape(), std::move(out), {x},
                         [ix, slope](Tape<T>& t, int self) {
                           const auto g = t.grad(self);
                           const auto xv = t.value(ix);
                           auto gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             gx[i] += xv[i] >= T(0) ? g[i] : slope * g[i];
                           }
                         });
}

#define MIRRBA_INSTANTIATE(T)                                  \
  template Var<T> add(const Var<T>&, const Var<T>&);           \
  template Var<T> sub(const Var<T>&, const Var<T>&);           \
  template Var<T> mul(const Var<T>&, const Var<T>&);           \
  template Var<T> scale(const Var<T>&, T);                     \
  template Var<T> sum(const Var<T>&);                          \
  template Var<T> mean(const Var<T>&);                         \
  template Var<T> leaky_relu(const Var<T>&, T);

MIRRBA_INSTANTIATE(float)
MIRRBA_INSTANTIATE(double)
#undef MIRRBA_INSTANTIATE

}  // namespace mirrba::ad
