#include "mer/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace mer {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                        shape_string(b));
  }
}

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ArgumentError(std::string(op) + ": expected NCHW, got " + shape_string(s));
}

template <typename T, typename F>
Tensor<T> map_values(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Unary op whose local derivative depends on input and output values.
template <typename T, typename Fwd, typename Deriv>
Var unary(Graph<T>& g, Var a, Fwd fwd, Deriv deriv) {
  Tensor<T> out = map_values(g.value(a), fwd);
  return g.record(std::move(out), {a}, [a, deriv](Graph<T>& gr, const Tensor<T>& og) {
    const Tensor<T>& x = gr.value(a);
    Tensor<T>& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i] * deriv(x[i]);
  });
}

// col[(c*k + ky)*k + kx, oy*wo + ox] = x[c, oy*s + ky - pad, ox*s + kx - pad]
// Output columns [lo, hi) whose input column ox*stride + off lies inside [0, w).
inline void valid_span(int off, int stride, int w, int wo, int& lo, int& hi) {
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = w - 1 - off < 0 ? 0 : (w - 1 - off) / stride + 1;
  lo = std::min(lo, wo);
  hi = std::clamp(hi, lo, wo);
}

template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * plane;
        int lo, hi;
        valid_span(kx - pad, stride, w, wo, lo, hi);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          T* row = dst + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * h + iy) * w + (kx - pad);
          std::fill(row, row + lo, T(0));
          if (stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox * stride];
          }
          std::fill(row + hi, row + wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * plane;
        int lo, hi;
        valid_span(kx - pad, stride, w, wo, lo, hi);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<std::size_t>(c) * h + iy) * w + (kx - pad);
          const T* row = src + static_cast<std::size_t>(oy) * wo;
          if (stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += row[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * stride] += row[ox];
          }
        }
      }
    }
  }
}

// Per-thread reusable buffers for im2col columns.
template <typename T>
T* scratch(std::size_t size, int slot) {
  thread_local std::vector<T> buffers[2];
  auto& b = buffers[slot];
  if (b.size() < size) b.resize(size);
  return b.data();
}

}  // namespace

// ---------------------------------------------------------------- Graph ----

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("variable " + std::to_string(v.id) + " does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(v));
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::parameter(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool needs = false;
  for (Var in : inputs) needs = needs || node(in).requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var root) {
  if (node(root).value.size() != 1) {
    throw ArgumentError("backward(root) needs a scalar, got " + shape_string(node(root).value.shape()));
  }
  backward(root, Tensor<T>(node(root).value.shape(), T(1)));
}

template <typename T>
void Graph<T>::backward(Var root, const Tensor<T>& seed) {
  require_same(node(root).value.shape(), seed.shape(), "backward seed");
  if (backward_done_) throw StateError("backward already ran on this graph");
  for (auto& n : nodes_) n.grad = Tensor<T>();
  grad_buffer(root) = seed;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
    // Interior gradients are consumed; keep leaves only.
    if (!n.is_leaf) n.grad = Tensor<T>();
  }
  backward_done_ = true;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var v) {
  if (!backward_done_) throw StateError("gradient requested before backward()");
  return grad_buffer(v);
}

// ------------------------------------------------------------ elementwise ---

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  require_same(g.shape(a), g.shape(b), "add");
  const Tensor<T>& x = g.value(a);
  const Tensor<T>& y = g.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& og) {
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v)) continue;
      Tensor<T>& gv = gr.grad_buffer(v);
      for (std::size_t i = 0; i < og.size(); ++i) gv[i] += og[i];
    }
  });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  require_same(g.shape(a), g.shape(b), "sub");
  const Tensor<T>& x = g.value(a);
  const Tensor<T>& y = g.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& og) {
    if (gr.requires_grad(a)) {
      Tensor<T>& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < og.size(); ++i) gb[i] -= og[i];
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  require_same(g.shape(a), g.shape(b), "mul");
  const Tensor<T>& x = g.value(a);
  const Tensor<T>& y = g.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& og) {
    if (gr.requires_grad(a)) {
      const Tensor<T>& y = gr.value(b);
      Tensor<T>& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i] * y[i];
    }
    if (gr.requires_grad(b)) {
      const Tensor<T>& x = gr.value(a);
      Tensor<T>& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < og.size(); ++i) gb[i] += og[i] * x[i];
    }
  });
}

template <typename T>
Var div(Graph<T>& g, Var a, Var b) {
  require_same(g.shape(a), g.shape(b), "div");
  const Tensor<T>& x = g.value(a);
  const Tensor<T>& y = g.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& og) {
    const Tensor<T>& x = gr.value(a);
    const Tensor<T>& y = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor<T>& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i] / y[i];
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < og.size(); ++i) gb[i] -= og[i] * x[i] / (y[i] * y[i]);
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, double c) {
  const T k = static_cast<T>(c);
  return unary(g, a, [k](T x) { return x * k; }, [k](T) { return k; });
}

template <typename T>
Var add_scalar(Graph<T>& g, Var a, double c) {
  const T k = static_cast<T>(c);
  return unary(g, a, [k](T x) { return x + k; }, [](T) { return T(1); });
}

template <typename T>
Var relu(Graph<T>& g, Var a) {
  return unary(g, a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var leaky_relu(Graph<T>& g, Var a, double slope) {
  const T s = static_cast<T>(slope);
  return unary(g, a, [s](T x) { return x > T(0) ? x : s * x; }, [s](T x) { return x > T(0) ? T(1) : s; });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var a) {
  auto f = [](T x) { return T(1) / (T(1) + std::exp(-x)); };
  return unary(g, a, f, [f](T x) {
    const T s = f(x);
    return s * (T(1) - s);
  });
}

template <typename T>
Var exp(Graph<T>& g, Var a) {
  return unary(g, a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}

template <typename T>
Var abs(Graph<T>& g, Var a) {
  return unary(g, a, [](T x) { return std::abs(x); },
               [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var square(Graph<T>& g, Var a) {
  return unary(g, a, [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

template <typename T>
Var floor_at(Graph<T>& g, Var a, double floor) {
  const T f = static_cast<T>(floor);
  return unary(g, a, [f](T x) { return x > f ? x : f; }, [f](T x) { return x > f ? T(1) : T(0); });
}

// ------------------------------------------------------------- reductions ---

template <typename T>
Var sum(Graph<T>& g, Var a) {
  const Tensor<T>& x = g.value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]);
  return g.record(Tensor<T>({1}, static_cast<T>(acc)), {a}, [a](Graph<T>& gr, const Tensor<T>& og) {
    Tensor<T>& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += og[0];
  });
}

template <typename T>
Var mean(Graph<T>& g, Var a) {
  const std::size_t n = g.value(a).size();
  if (n == 0) throw ArgumentError("mean of empty tensor");
  return scale(g, sum(g, a), 1.0 / static_cast<double>(n));
}

template <typename T>
Var sum_channels(Graph<T>& g, Var a) {
  require_rank4(g.shape(a), "sum_channels");
  const Tensor<T>& x = g.value(a);
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({n, 1, h, w});
  for (int b = 0; b < n; ++b)
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at(b, 0, y, xx) += x.at(b, k, y, xx);
  return g.record(std::move(out), {a}, [a](Graph<T>& gr, const Tensor<T>& og) {
    Tensor<T>& ga = gr.grad_buffer(a);
    const int n = ga.dim(0), c = ga.dim(1), h = ga.dim(2), w = ga.dim(3);
    for (int b = 0; b < n; ++b)
      for (int k = 0; k < c; ++k)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) ga.at(b, k, y, xx) += og.at(b, 0, y, xx);
  });
}

template <typename T>
Var shift_diff(Graph<T>& g, Var a, int axis) {
  require_rank4(g.shape(a), "shift_diff");
  if (axis != 2 && axis != 3) throw ArgumentError("shift_diff axis must be 2 or 3");
  const Tensor<T>& x = g.value(a);
  const int dy = axis == 2 ? 1 : 0, dx = axis == 3 ? 1 : 0;
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2) - dy, w = x.dim(3) - dx;
  if (h < 1 || w < 1) throw ArgumentError("shift_diff on a dimension of size < 2");
  Tensor<T> out({n, c, h, w});
  for (int b = 0; b < n; ++b)
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at(b, k, y, xx) = x.at(b, k, y + dy, xx + dx) - x.at(b, k, y, xx);
  return g.record(std::move(out), {a}, [a, dy, dx](Graph<T>& gr, const Tensor<T>& og) {
    Tensor<T>& ga = gr.grad_buffer(a);
    for (int b = 0; b < og.dim(0); ++b)
      for (int k = 0; k < og.dim(1); ++k)
        for (int y = 0; y < og.dim(2); ++y)
          for (int xx = 0; xx < og.dim(3); ++xx) {
            const T v = og.at(b, k, y, xx);
            ga.at(b, k, y + dy, xx + dx) += v;
            ga.at(b, k, y, xx) -= v;
          }
  });
}

// ------------------------------------------------------------- structural ---

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, int stride, int pad) {
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(weight);
  require_rank4(xs, "conv2d input");
  require_rank4(ws, "conv2d weight");
  const int n = xs[0], ci = xs[1], h = xs[2], w = xs[3];
  const int co = ws[0], k = ws[2];
  if (ws[1] != ci || ws[3] != k) {
    throw ArgumentError("conv2d: weight " + shape_string(ws) + " does not fit input " + shape_string(xs));
  }
  if (bias.valid() && (g.shape(bias).size() != 1 || g.shape(bias)[0] != co)) {
    throw ArgumentError("conv2d: bias shape " + shape_string(g.shape(bias)));
  }
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ArgumentError("conv2d: input " + shape_string(xs) + " too small");
  const int rows = ci * k * k;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  Tensor<T> out({n, co, ho, wo});
  T* col = direct ? nullptr : scratch<T>(static_cast<std::size_t>(rows) * plane, 0);
  CMatMap<T> wm(g.value(weight).data(), co, rows);
  for (int b = 0; b < n; ++b) {
    const T* xb = g.value(x).data() + static_cast<std::size_t>(b) * ci * h * w;
    if (!direct) im2col(xb, ci, h, w, k, stride, pad, ho, wo, col);
    CMatMap<T> cm(direct ? xb : col, rows, static_cast<Eigen::Index>(plane));
    MatMap<T> om(out.data() + static_cast<std::size_t>(b) * co * plane, co, static_cast<Eigen::Index>(plane));
    om.noalias() = wm * cm;
    if (bias.valid()) {
      const Tensor<T>& bv = g.value(bias);
      for (int o = 0; o < co; ++o) om.row(o).array() += bv[static_cast<std::size_t>(o)];
    }
  }
  std::vector<Var> inputs = {x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return g.record(std::move(out), inputs,
                  [=](Graph<T>& gr, const Tensor<T>& og) {
                    const std::size_t len = direct ? 0 : static_cast<std::size_t>(rows) * plane;
                    T* col = direct ? nullptr : scratch<T>(len, 0);
                    T* dcol = direct ? nullptr : scratch<T>(len, 1);
                    CMatMap<T> wm(gr.value(weight).data(), co, rows);
                    const bool want_x = gr.requires_grad(x);
                    const bool want_w = gr.requires_grad(weight);
                    const bool want_b = bias.valid() && gr.requires_grad(bias);
                    for (int b = 0; b < n; ++b) {
                      CMatMap<T> dy(og.data() + static_cast<std::size_t>(b) * co * plane, co,
                                    static_cast<Eigen::Index>(plane));
                      const T* xb = gr.value(x).data() + static_cast<std::size_t>(b) * ci * h * w;
                      if (want_w) {
                        if (!direct) im2col(xb, ci, h, w, k, stride, pad, ho, wo, col);
                        CMatMap<T> cm(direct ? xb : col, rows, static_cast<Eigen::Index>(plane));
                        MatMap<T> dw(gr.grad_buffer(weight).data(), co, rows);
                        dw.noalias() += dy * cm.transpose();
                      }
                      if (want_b) {
                        Tensor<T>& db = gr.grad_buffer(bias);
                        for (int o = 0; o < co; ++o) db[static_cast<std::size_t>(o)] += dy.row(o).sum();
                      }
                      if (want_x) {
                        T* dx = gr.grad_buffer(x).data() + static_cast<std::size_t>(b) * ci * h * w;
                        if (direct) {
                          MatMap<T> dxm(dx, rows, static_cast<Eigen::Index>(plane));
                          dxm.noalias() += wm.transpose() * dy;
                        } else {
                          MatMap<T> dcm(dcol, rows, static_cast<Eigen::Index>(plane));
                          dcm.noalias() = wm.transpose() * dy;
                          col2im(dcol, ci, h, w, k, stride, pad, ho, wo, dx);
                        }
                      }
                    }
                  });
}

template <typename T>
Var upsample2(Graph<T>& g, Var x) {
  require_rank4(g.shape(x), "upsample2");
  const Tensor<T>& in = g.value(x);
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor<T> out({n, c, 2 * h, 2 * w});
  for (int b = 0; b < n; ++b)
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) out.at(b, k, y, xx) = in.at(b, k, y / 2, xx / 2);
  return g.record(std::move(out), {x}, [x](Graph<T>& gr, const Tensor<T>& og) {
    Tensor<T>& gx = gr.grad_buffer(x);
    for (int b = 0; b < og.dim(0); ++b)
      for (int k = 0; k < og.dim(1); ++k)
        for (int y = 0; y < og.dim(2); ++y)
          for (int xx = 0; xx < og.dim(3); ++xx) gx.at(b, k, y / 2, xx / 2) += og.at(b, k, y, xx);
  });
}

template <typename T>
Var max_pool2(Graph<T>& g, Var x) {
  require_rank4(g.shape(x), "max_pool2");
  const Tensor<T>& in = g.value(x);
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2) / 2, w = in.dim(3) / 2;
  if (h < 1 || w < 1) throw ArgumentError("max_pool2: input " + shape_string(in.shape()) + " too small");
  Tensor<T> out({n, c, h, w});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (int b = 0; b < n; ++b)
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx, ++o) {
          std::size_t best = 0;
          T best_v = -std::numeric_limits<T>::infinity();
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx =
                  ((static_cast<std::size_t>(b) * c + k) * in.dim(2) + 2 * y + dy) * in.dim(3) + 2 * xx + dx;
              if (in[idx] > best_v) {
                best_v = in[idx];
                best = idx;
              }
            }
          out[o] = best_v;
          argmax[o] = best;
        }
  return g.record(std::move(out), {x}, [x, argmax = std::move(argmax)](Graph<T>& gr, const Tensor<T>& og) {
    Tensor<T>& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < og.size(); ++i) gx[argmax[i]] += og[i];
  });
}

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat of nothing");
  const Shape& s0 = g.shape(parts[0]);
  require_rank4(s0, "concat");
  int total = 0;
  for (Var p : parts) {
    const Shape& s = g.shape(p);
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ArgumentError("concat: shape " + shape_string(s) + " incompatible with " + shape_string(s0));
    }
    total += s[1];
  }
  const int n = s0[0];
  const std::size_t plane = static_cast<std::size_t>(s0[2]) * s0[3];
  Tensor<T> out({n, total, s0[2], s0[3]});
  for (int b = 0; b < n; ++b) {
    std::size_t off = static_cast<std::size_t>(b) * total * plane;
    for (Var p : parts) {
      const Tensor<T>& v = g.value(p);
      const std::size_t len = static_cast<std::size_t>(v.dim(1)) * plane;
      std::copy_n(v.data() + b * len, len, out.data() + off);
      off += len;
    }
  }
  return g.record(std::move(out), parts, [parts, n, total, plane](Graph<T>& gr, const Tensor<T>& og) {
    for (int b = 0; b < n; ++b) {
      std::size_t off = static_cast<std::size_t>(b) * total * plane;
      for (Var p : parts) {
        const std::size_t len = static_cast<std::size_t>(gr.shape(p)[1]) * plane;
        if (gr.requires_grad(p)) {
          T* dst = gr.grad_buffer(p).data() + b * len;
          const T* src = og.data() + off;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
        off += len;
      }
    }
  });
}

template <typename T>
Var gram(Graph<T>& g, Var f) {
  require_rank4(g.shape(f), "gram");
  const Tensor<T>& x = g.value(f);
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t p = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const T norm = T(1) / static_cast<T>(static_cast<double>(c) * static_cast<double>(p));
  Tensor<T> out({n, c, c});
  for (int b = 0; b < n; ++b) {
    CMatMap<T> fm(x.data() + static_cast<std::size_t>(b) * c * p, c, static_cast<Eigen::Index>(p));
    MatMap<T> gm(out.data() + static_cast<std::size_t>(b) * c * c, c, c);
    gm.noalias() = (fm * fm.transpose()) * norm;
  }
  return g.record(std::move(out), {f}, [f, n, c, p, norm](Graph<T>& gr, const Tensor<T>& og) {
    for (int b = 0; b < n; ++b) {
      CMatMap<T> fm(gr.value(f).data() + static_cast<std::size_t>(b) * c * p, c, static_cast<Eigen::Index>(p));
      CMatMap<T> dg(og.data() + static_cast<std::size_t>(b) * c * c, c, c);
      MatMap<T> df(gr.grad_buffer(f).data() + static_cast<std::size_t>(b) * c * p, c, static_cast<Eigen::Index>(p));
      Mat<T> sym = (dg + dg.transpose()) * norm;
      df.noalias() += sym * fm;
    }
  });
}

template <typename T>
Var attend(Graph<T>& g, Var q, Var k, Var v, Tensor<T>* weights) {
  const Shape& qs = g.shape(q);
  const Shape& vs = g.shape(v);
  require_rank4(qs, "attend q");
  require_same(qs, g.shape(k), "attend q/k");
  require_rank4(vs, "attend v");
  if (vs[0] != qs[0] || vs[2] != qs[2] || vs[3] != qs[3]) throw ArgumentError("attend: v/q spatial mismatch");
  const int n = qs[0], d = qs[1], c = vs[1];
  const Eigen::Index p = static_cast<Eigen::Index>(qs[2]) * qs[3];
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  const bool needs_grad = g.requires_grad(q) || g.requires_grad(k) || g.requires_grad(v);
  if (!needs_grad && !weights) {
    // Inference: row blocks, never materializing the full P x P matrix.
    Tensor<T> out(vs);
    const Eigen::Index block = 512;
    for (int b = 0; b < n; ++b) {
      CMatMap<T> qm(g.value(q).data() + b * d * p, d, p);
      CMatMap<T> km(g.value(k).data() + b * d * p, d, p);
      CMatMap<T> vm(g.value(v).data() + b * c * p, c, p);
      MatMap<T> om(out.data() + b * c * p, c, p);
      for (Eigen::Index r0 = 0; r0 < p; r0 += block) {
        const Eigen::Index rows = std::min(block, p - r0);
        Mat<T> a = (qm.middleCols(r0, rows).transpose() * km) * inv_sqrt_d;
        for (Eigen::Index i = 0; i < rows; ++i) {
          auto row = a.row(i);
          const T mx = row.maxCoeff();
          row = (row.array() - mx).exp();
          row /= row.sum();
        }
        om.middleCols(r0, rows).noalias() = vm * a.transpose();
      }
    }
    return g.record(std::move(out), {q, k, v}, nullptr);
  }
  // Attention weights are kept for backward.
  auto attn = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(n));
  Tensor<T> out(vs);
  if (weights) *weights = Tensor<T>({n, static_cast<int>(p), static_cast<int>(p)});
  for (int b = 0; b < n; ++b) {
    CMatMap<T> qm(g.value(q).data() + b * d * p, d, p);
    CMatMap<T> km(g.value(k).data() + b * d * p, d, p);
    CMatMap<T> vm(g.value(v).data() + b * c * p, c, p);
    Mat<T>& a = (*attn)[static_cast<std::size_t>(b)];
    a.noalias() = (qm.transpose() * km) * inv_sqrt_d;
    for (Eigen::Index i = 0; i < p; ++i) {
      auto row = a.row(i);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
    MatMap<T> om(out.data() + b * c * p, c, p);
    om.noalias() = vm * a.transpose();
    if (weights) std::copy_n(a.data(), p * p, weights->data() + b * p * p);
  }
  return g.record(std::move(out), {q, k, v}, [=](Graph<T>& gr, const Tensor<T>& og) {
    for (int b = 0; b < n; ++b) {
      const Mat<T>& a = (*attn)[static_cast<std::size_t>(b)];
      CMatMap<T> dout(og.data() + b * c * p, c, p);
      CMatMap<T> vm(gr.value(v).data() + b * c * p, c, p);
      if (gr.requires_grad(v)) {
        MatMap<T> dv(gr.grad_buffer(v).data() + b * c * p, c, p);
        dv.noalias() += dout * a;
      }
      if (!gr.requires_grad(q) && !gr.requires_grad(k)) continue;
      Mat<T> ds = dout.transpose() * vm;  // dA, P x P
      for (Eigen::Index i = 0; i < p; ++i) {
        const T dot = ds.row(i).dot(a.row(i));
        ds.row(i) = a.row(i).array() * (ds.row(i).array() - dot);
      }
      ds *= inv_sqrt_d;
      CMatMap<T> qm(gr.value(q).data() + b * d * p, d, p);
      CMatMap<T> km(gr.value(k).data() + b * d * p, d, p);
      if (gr.requires_grad(q)) {
        MatMap<T> dq(gr.grad_buffer(q).data() + b * d * p, d, p);
        dq.noalias() += km * ds.transpose();
      }
      if (gr.requires_grad(k)) {
        MatMap<T> dk(gr.grad_buffer(k).data() + b * d * p, d, p);
        dk.noalias() += qm * ds;
      }
    }
  });
}

template <typename T>
Var spectral_weight(Graph<T>& g, Var weight, const std::vector<T>& u) {
  const Tensor<T>& w = g.value(weight);
  const int rows = w.dim(0);
  const Eigen::Index cols = static_cast<Eigen::Index>(w.size() / static_cast<std::size_t>(rows));
  if (u.size() != static_cast<std::size_t>(rows)) throw ArgumentError("spectral_weight: u length mismatch");
  CMatMap<T> wm(w.data(), rows, cols);
  const Eigen::Matrix<T, Eigen::Dynamic, 1> um = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(u.data(), rows);
  Eigen::Matrix<T, Eigen::Dynamic, 1> a = wm.transpose() * um;
  const T sigma = std::max<T>(a.norm(), static_cast<T>(1e-12));
  Eigen::Matrix<T, Eigen::Dynamic, 1> vvec = a / sigma;
  Tensor<T> out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] / sigma;
  return g.record(std::move(out), {weight}, [=](Graph<T>& gr, const Tensor<T>& og) {
    const Tensor<T>& w = gr.value(weight);
    T inner = 0;
    for (std::size_t i = 0; i < w.size(); ++i) inner += og[i] * w[i];
    const T coef = inner / (sigma * sigma);
    Tensor<T>& gw = gr.grad_buffer(weight);
    for (int r = 0; r < rows; ++r)
      for (Eigen::Index j = 0; j < cols; ++j) {
        const std::size_t idx = static_cast<std::size_t>(r) * cols + j;
        gw[idx] += og[idx] / sigma - coef * u[static_cast<std::size_t>(r)] * vvec(j);
      }
  });
}

#define MER_INSTANTIATE_GRAPH(T)                                                   \
  template class Graph<T>;                                                         \
  template Var add(Graph<T>&, Var, Var);                                           \
  template Var sub(Graph<T>&, Var, Var);                                           \
  template Var mul(Graph<T>&, Var, Var);                                           \
  template Var div(Graph<T>&, Var, Var);                                           \
  template Var scale(Graph<T>&, Var, double);                                      \
  template Var add_scalar(Graph<T>&, Var, double);                                 \
  template Var relu(Graph<T>&, Var);                                               \
  template Var leaky_relu(Graph<T>&, Var, double);                                 \
  template Var sigmoid(Graph<T>&, Var);                                            \
  template Var exp(Graph<T>&, Var);                                                \
  template Var abs(Graph<T>&, Var);                                                \
  template Var square(Graph<T>&, Var);                                             \
  template Var floor_at(Graph<T>&, Var, double);                                   \
  template Var sum(Graph<T>&, Var);                                                \
  template Var mean(Graph<T>&, Var);                                               \
  template Var sum_channels(Graph<T>&, Var);                                       \
  template Var shift_diff(Graph<T>&, Var, int);                                    \
  template Var conv2d(Graph<T>&, Var, Var, Var, int, int);                         \
  template Var upsample2(Graph<T>&, Var);                                          \
  template Var max_pool2(Graph<T>&, Var);                                          \
  template Var concat_channels(Graph<T>&, const std::vector<Var>&);                \
  template Var gram(Graph<T>&, Var);                                               \
  template Var attend(Graph<T>&, Var, Var, Var, Tensor<T>*);                       \
  template Var spectral_weight(Graph<T>&, Var, const std::vector<T>&);

MER_INSTANTIATE_GRAPH(float)
MER_INSTANTIATE_GRAPH(double)

}  // namespace mer
