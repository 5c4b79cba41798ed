// Define-by-run reverse-mode autodiff over Tensor. Values are computed
// eagerly at graph construction; backward() runs the taped adjoints in
// reverse topological order. Single-threaded and fully deterministic:
// the same graph always accumulates gradients in the same order.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "leapd/tensor.hpp"

namespace leapd {

class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated by backward()
  bool requires_grad = false;
  std::vector<Var> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  explicit Node(Tensor v) : value(std::move(v)) {}
};

inline Var constant(Tensor t) { return std::make_shared<Node>(std::move(t)); }

inline Var parameter(Tensor t) {
  auto n = std::make_shared<Node>(std::move(t));
  n->requires_grad = true;
  return n;
}

inline Var scalar_const(double v) { return constant(Tensor::scalar(v)); }

namespace detail {

inline void topo_collect(const Var& v, std::unordered_set<Node*>& seen,
                         std::vector<Var>& order) {
  if (seen.count(v.get())) return;
  seen.insert(v.get());
  for (const auto& p : v->parents) topo_collect(p, seen, order);
  order.push_back(v);
}

inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>(std::move(value));
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return n;
}

}  // namespace detail

// Backpropagate from a scalar root. Gradients of every node reachable from
// the root are reset first, so parameters keep only this graph's gradient.
inline void backward(const Var& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  std::unordered_set<Node*> seen;
  std::vector<Var> order;
  detail::topo_collect(root, seen, order);
  for (auto& n : order) n->grad = Tensor::zeros(n->value.shape);
  root->grad.data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn && n.requires_grad) n.backward_fn(n);
  }
}

inline void zero_grad(const Var& v) { v->grad = Tensor::zeros(v->value.shape); }

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("add: shape mismatch " + shape_str(a->value.shape) +
                                " vs " + shape_str(b->value.shape));
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      pa.grad.data[i] += n.grad.data[i];
      pb.grad.data[i] += n.grad.data[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b->value.data[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      pa.grad.data[i] += n.grad.data[i];
      pb.grad.data[i] -= n.grad.data[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("mul: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b->value.data[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      pa.grad.data[i] += n.grad.data[i] * pb.value.data[i];
      pb.grad.data[i] += n.grad.data[i] * pa.value.data[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a->value;
  for (auto& v : out.data) v *= c;
  return detail::make_op(std::move(out), {a}, [c](Node& n) {
    auto& pa = *n.parents[0];
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      pa.grad.data[i] += c * n.grad.data[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a->value;
  for (auto& v : out.data) v += c;
  return detail::make_op(std::move(out), {a}, [](Node& n) {
    auto& pa = *n.parents[0];
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      pa.grad.data[i] += n.grad.data[i];
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data) s += v;
  return detail::make_op(Tensor::scalar(s), {a}, [](Node& n) {
    auto& pa = *n.parents[0];
    double g = n.grad.data[0];
    for (auto& gv : pa.grad.data) gv += g;
  });
}

inline Var mean(const Var& a) {
  if (a->value.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

inline Var dot(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i)
    s += a->value.data[i] * b->value.data[i];
  return detail::make_op(Tensor::scalar(s), {a, b}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    double g = n.grad.data[0];
    for (std::size_t i = 0; i < pa.value.size(); ++i) {
      pa.grad.data[i] += g * pb.value.data[i];
      pb.grad.data[i] += g * pa.value.data[i];
    }
  });
}

inline Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return detail::make_op(std::move(out), {a}, [](Node& n) {
    auto& pa = *n.parents[0];
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (pa.value.data[i] > 0.0) pa.grad.data[i] += n.grad.data[i];
  });
}

inline Var tanh_act(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = std::tanh(v);
  return detail::make_op(std::move(out), {a}, [](Node& n) {
    auto& pa = *n.parents[0];
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double y = n.value.data[i];
      pa.grad.data[i] += n.grad.data[i] * (1.0 - y * y);
    }
  });
}

inline Var ln(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = std::log(v);
  return detail::make_op(std::move(out), {a}, [](Node& n) {
    auto& pa = *n.parents[0];
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      pa.grad.data[i] += n.grad.data[i] / pa.value.data[i];
  });
}

// Gradient passes only strictly inside (lo, hi); clamped coordinates are flat.
inline Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a->value;
  for (auto& v : out.data) v = std::min(hi, std::max(lo, v));
  return detail::make_op(std::move(out), {a}, [lo, hi](Node& n) {
    auto& pa = *n.parents[0];
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double v = pa.value.data[i];
      if (v > lo && v < hi) pa.grad.data[i] += n.grad.data[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape ops
// ---------------------------------------------------------------------------

inline Var matvec(const Var& w, const Var& x) {
  if (w->value.ndim() != 2 || x->value.ndim() != 1 ||
      w->value.shape[1] != x->value.shape[0])
    throw std::invalid_argument("matvec: shape mismatch " + shape_str(w->value.shape) +
                                " * " + shape_str(x->value.shape));
  std::size_t m = w->value.shape[0], k = w->value.shape[1];
  Tensor out = Tensor::zeros({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = &w->value.data[i * k];
    for (std::size_t j = 0; j < k; ++j) s += row[j] * x->value.data[j];
    out.data[i] = s;
  }
  return detail::make_op(std::move(out), {w, x}, [m, k](Node& n) {
    auto& pw = *n.parents[0];
    auto& px = *n.parents[1];
    for (std::size_t i = 0; i < m; ++i) {
      double g = n.grad.data[i];
      if (g == 0.0) continue;
      const double* row = &pw.value.data[i * k];
      double* wg = &pw.grad.data[i * k];
      for (std::size_t j = 0; j < k; ++j) {
        wg[j] += g * px.value.data[j];
        px.grad.data[j] += g * row[j];
      }
    }
  });
}

// y = x / max(||x||, eps); the usual projection backward.
inline Var l2_normalize(const Var& x, double eps = 1e-12) {
  if (x->value.ndim() != 1) throw std::invalid_argument("l2_normalize: expects vector");
  double norm = 0.0;
  for (double v : x->value.data) norm += v * v;
  norm = std::sqrt(norm);
  double denom = std::max(norm, eps);
  Tensor out = x->value;
  for (auto& v : out.data) v /= denom;
  return detail::make_op(std::move(out), {x}, [denom](Node& n) {
    auto& px = *n.parents[0];
    double ydotg = 0.0;
    for (std::size_t i = 0; i < n.value.size(); ++i)
      ydotg += n.value.data[i] * n.grad.data[i];
    for (std::size_t i = 0; i < n.value.size(); ++i)
      px.grad.data[i] += (n.grad.data[i] - n.value.data[i] * ydotg) / denom;
  });
}

// Mean over the first axis of a (T, d) matrix -> (d).
inline Var mean_rows(const Var& x) {
  if (x->value.ndim() != 2) throw std::invalid_argument("mean_rows: expects matrix");
  std::size_t t = x->value.shape[0], d = x->value.shape[1];
  if (t == 0) throw std::invalid_argument("mean_rows: empty");
  Tensor out = Tensor::zeros({d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data[j] += x->value(i, j);
  for (auto& v : out.data) v /= static_cast<double>(t);
  return detail::make_op(std::move(out), {x}, [t, d](Node& n) {
    auto& px = *n.parents[0];
    double inv = 1.0 / static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d; ++j)
        px.grad.data[i * d + j] += n.grad.data[j] * inv;
  });
}

// Select sub-tensor at index i of the first axis: (N, rest...) -> (rest...).
inline Var slice_first(const Var& x, std::size_t idx) {
  if (x->value.ndim() < 2) throw std::invalid_argument("slice_first: needs ndim >= 2");
  std::size_t n0 = x->value.shape[0];
  if (idx >= n0) throw std::out_of_range("slice_first: index out of range");
  std::vector<std::size_t> rest(x->value.shape.begin() + 1, x->value.shape.end());
  std::size_t stride = Tensor::count(rest);
  Tensor out(rest, std::vector<double>(x->value.data.begin() + idx * stride,
                                       x->value.data.begin() + (idx + 1) * stride));
  return detail::make_op(std::move(out), {x}, [idx, stride](Node& n) {
    auto& px = *n.parents[0];
    for (std::size_t i = 0; i < stride; ++i)
      px.grad.data[idx * stride + i] += n.grad.data[i];
  });
}

// Gather rows of a (V, d) table -> (ids.size(), d). Repeated ids accumulate.
inline Var gather_rows(const Var& table, std::vector<std::size_t> ids) {
  if (table->value.ndim() != 2) throw std::invalid_argument("gather_rows: expects matrix");
  std::size_t v = table->value.shape[0], d = table->value.shape[1];
  Tensor out = Tensor::zeros({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) throw std::out_of_range("gather_rows: id out of range");
    for (std::size_t j = 0; j < d; ++j) out(i, j) = table->value(ids[i], j);
  }
  return detail::make_op(std::move(out), {table}, [ids, d](Node& n) {
    auto& pt = *n.parents[0];
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        pt.grad.data[ids[i] * d + j] += n.grad.data[i * d + j];
  });
}

// Stack scalar nodes into a vector of length n.
inline Var stack_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_scalars: empty");
  Tensor out = Tensor::zeros({xs.size()});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i]->value.size() != 1)
      throw std::invalid_argument("stack_scalars: inputs must be scalar");
    out.data[i] = xs[i]->value.data[0];
  }
  return detail::make_op(std::move(out), xs, [](Node& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i)
      n.parents[i]->grad.data[0] += n.grad.data[i];
  });
}

// Numerically stable log-softmax of a vector.
inline Var log_softmax(const Var& x) {
  if (x->value.ndim() != 1 || x->value.size() == 0)
    throw std::invalid_argument("log_softmax: expects non-empty vector");
  double mx = *std::max_element(x->value.data.begin(), x->value.data.end());
  double lse = 0.0;
  for (double v : x->value.data) lse += std::exp(v - mx);
  lse = mx + std::log(lse);
  Tensor out = x->value;
  for (auto& v : out.data) v -= lse;
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    auto& px = *n.parents[0];
    double gsum = 0.0;
    for (double g : n.grad.data) gsum += g;
    for (std::size_t i = 0; i < n.value.size(); ++i)
      px.grad.data[i] += n.grad.data[i] - std::exp(n.value.data[i]) * gsum;
  });
}

inline Var pick(const Var& x, std::size_t idx) {
  if (idx >= x->value.size()) throw std::out_of_range("pick: index out of range");
  return detail::make_op(Tensor::scalar(x->value.data[idx]), {x}, [idx](Node& n) {
    n.parents[0]->grad.data[idx] += n.grad.data[0];
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

// x: (C, H, W), w: (O, C, k, k), b: (O); zero padding.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 3 || wv.ndim() != 4 || wv.shape[1] != xv.shape[0])
    throw std::invalid_argument("conv2d: shape mismatch " + shape_str(xv.shape) +
                                " with kernel " + shape_str(wv.shape));
  std::size_t c = xv.shape[0], h = xv.shape[1], wd = xv.shape[2];
  std::size_t o = wv.shape[0], k = wv.shape[2];
  std::size_t ho = (h + 2 * pad - k) / stride + 1;
  std::size_t wo = (wd + 2 * pad - k) / stride + 1;
  Tensor out = Tensor::zeros({o, ho, wo});
  for (std::size_t oc = 0; oc < o; ++oc) {
    double bias = b->value.data[oc];
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = bias;
        int iy0 = static_cast<int>(oy) * stride - pad;
        int ix0 = static_cast<int>(ox) * stride - pad;
        for (std::size_t ic = 0; ic < c; ++ic) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            int iy = iy0 + static_cast<int>(ky);
            if (iy < 0 || iy >= static_cast<int>(h)) continue;
            const double* xrow = &xv.data[(ic * h + iy) * wd];
            const double* wrow = &wv.data[((oc * c + ic) * k + ky) * k];
            for (std::size_t kx = 0; kx < k; ++kx) {
              int ix = ix0 + static_cast<int>(kx);
              if (ix < 0 || ix >= static_cast<int>(wd)) continue;
              s += xrow[ix] * wrow[kx];
            }
          }
        }
        out(oc, oy, ox) = s;
      }
    }
  }
  return detail::make_op(
      std::move(out), {x, w, b}, [c, h, wd, o, k, stride, pad](Node& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        auto& pb = *n.parents[2];
        std::size_t ho = n.value.shape[1], wo = n.value.shape[2];
        for (std::size_t oc = 0; oc < o; ++oc) {
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              double g = n.grad(oc, oy, ox);
              if (g == 0.0) continue;
              pb.grad.data[oc] += g;
              int iy0 = static_cast<int>(oy) * stride - pad;
              int ix0 = static_cast<int>(ox) * stride - pad;
              for (std::size_t ic = 0; ic < c; ++ic) {
                for (std::size_t ky = 0; ky < k; ++ky) {
                  int iy = iy0 + static_cast<int>(ky);
                  if (iy < 0 || iy >= static_cast<int>(h)) continue;
                  const double* xrow = &px.value.data[(ic * h + iy) * wd];
                  double* xgrow = &px.grad.data[(ic * h + iy) * wd];
                  const double* wrow = &pw.value.data[((oc * c + ic) * k + ky) * k];
                  double* wgrow = &pw.grad.data[((oc * c + ic) * k + ky) * k];
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    int ix = ix0 + static_cast<int>(kx);
                    if (ix < 0 || ix >= static_cast<int>(wd)) continue;
                    wgrow[kx] += g * xrow[ix];
                    xgrow[ix] += g * wrow[kx];
                  }
                }
              }
            }
          }
        }
      });
}

// (C, H, W) -> (C), mean over the spatial grid.
inline Var global_avg_pool(const Var& x) {
  if (x->value.ndim() != 3) throw std::invalid_argument("global_avg_pool: expects (C,H,W)");
  std::size_t c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  std::size_t hw = h * w;
  Tensor out = Tensor::zeros({c});
  for (std::size_t ic = 0; ic < c; ++ic) {
    double s = 0.0;
    const double* base = &x->value.data[ic * hw];
    for (std::size_t i = 0; i < hw; ++i) s += base[i];
    out.data[ic] = s / static_cast<double>(hw);
  }
  return detail::make_op(std::move(out), {x}, [c, hw](Node& n) {
    auto& px = *n.parents[0];
    double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t ic = 0; ic < c; ++ic) {
      double g = n.grad.data[ic] * inv;
      double* base = &px.grad.data[ic * hw];
      for (std::size_t i = 0; i < hw; ++i) base[i] += g;
    }
  });
}

// Average-pool by an integer factor: (C, H, W) -> (C, H/f, W/f).
inline Var avg_pool(const Var& x, std::size_t f) {
  if (x->value.ndim() != 3) throw std::invalid_argument("avg_pool: expects (C,H,W)");
  std::size_t c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  if (f == 0 || h % f != 0 || w % f != 0)
    throw std::invalid_argument("avg_pool: factor must divide spatial dims");
  std::size_t ho = h / f, wo = w / f;
  Tensor out = Tensor::zeros({c, ho, wo});
  for (std::size_t ic = 0; ic < c; ++ic)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx)
            s += x->value(ic, oy * f + dy, ox * f + dx);
        out(ic, oy, ox) = s / static_cast<double>(f * f);
      }
  return detail::make_op(std::move(out), {x}, [c, f](Node& n) {
    auto& px = *n.parents[0];
    std::size_t ho = n.value.shape[1], wo = n.value.shape[2];
    std::size_t h = ho * f, w = wo * f;
    double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double g = n.grad(ic, oy, ox) * inv;
          for (std::size_t dy = 0; dy < f; ++dy)
            for (std::size_t dx = 0; dx < f; ++dx)
              px.grad.data[(ic * h + oy * f + dy) * w + ox * f + dx] += g;
        }
  });
}

}  // namespace leapd
