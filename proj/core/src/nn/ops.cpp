#include "tempofuse/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "tempofuse/error.hpp"

namespace tempofuse::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// Allocates the output node and wires it to the inputs that carry gradients.
template <typename T>
NodePtr<T> make_result(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(numel(shape), T(0));
  node->shape = std::move(shape);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto* t : inputs) {
      if (t != nullptr && t->defined() && t->requires_grad()) {
        needs = true;
        node->parents.push_back(t->node_ptr());
      }
    }
  }
  node->requires_grad = needs;
  node->is_leaf = !needs;
  return node;
}

/// Gradient buffer of `p` if it wants one, else nullptr.
template <typename T>
std::vector<T>* grad_of(const NodePtr<T>& p) {
  return (p && p->requires_grad) ? &p->ensure_grad() : nullptr;
}

template <typename T>
NodePtr<T> node_or_null(const Tensor<T>& t) {
  return t.defined() ? t.node_ptr() : nullptr;
}

void check(bool ok, const std::string& msg) { require(ok, ErrorCode::shape, msg); }

template <typename T>
void check_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  check(t.defined() && t.rank() == rank,
        std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
            (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
}

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, ho, wo;
  ConvDims(const Shape& x, const Shape& k, const Conv2dGeometry& g)
      : n(x[0]), c(x[1]), h(x[2]), w(x[3]), o(k[0]), kh(k[2]), kw(k[3]),
        ho(conv_out_extent(x[2], k[2], g.stride_h, g.pad_h)),
        wo(conv_out_extent(x[3], k[3], g.stride_w, g.pad_w)) {}
  std::size_t ckk() const { return c * kh * kw; }
  std::size_t hw_out() const { return ho * wo; }
  bool direct(const Conv2dGeometry& g) const {
    return g.stride_h == 1 && g.stride_w == 1 && o * c <= 256 && kh * kw > 1 &&
           g.pad_w < kw && g.pad_h < kh;
  }
  bool same3x3(const Conv2dGeometry& g) const {
    return kh == 3 && kw == 3 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 1 &&
           g.pad_w == 1;
  }
  bool pointwise(const Conv2dGeometry& g) const {
    return kh == 1 && kw == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 0 &&
           g.pad_w == 0;
  }
};

/// sum(a[i] * b[i]) over eight fixed lanes, so the reduction vectorizes
/// while the summation order stays independent of the compiler.
template <typename T>
T lane_dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

/// Eight-lane double-precision sum of a[i].
template <typename T>
double lane_sum(const T* a, std::size_t n) {
  double lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l];
  }
  double tail = 0;
  for (; i < n; ++i) tail += a[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

/// Eight-lane double-precision sum of (a[i] - mean)^2.
template <typename T>
double lane_sqdev(const T* a, std::size_t n, double mean) {
  double lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      const double d = a[i + l] - mean;
      lanes[l] += d * d;
    }
  }
  double tail = 0;
  for (; i < n; ++i) tail += (a[i] - mean) * (a[i] - mean);
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

template <typename T>
void im2col(const T* x, const ConvDims& d, const Conv2dGeometry& g, T* cols) {
  const std::size_t hw = d.hw_out();
  for (std::size_t c = 0; c < d.c; ++c) {
    const T* xc = x + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        T* row = cols + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          T* out = row + oh * d.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(out, out + d.wo, T(0));
            continue;
          }
          const T* xr = xc + static_cast<std::size_t>(ih) * d.w;
          if (g.stride_w == 1) {
            // contiguous run of valid columns, zero padding on either side
            const std::size_t lo = std::min(d.wo, g.pad_w > kj ? g.pad_w - kj : std::size_t{0});
            const std::size_t hi = std::max(lo, std::min(d.wo, d.w + g.pad_w - kj));
            std::fill(out, out + lo, T(0));
            std::copy(xr + lo + kj - g.pad_w, xr + hi + kj - g.pad_w, out + lo);
            std::fill(out + hi, out + d.wo, T(0));
            continue;
          }
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w))
                          ? T(0)
                          : xr[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, const Conv2dGeometry& g, T* dx) {
  const std::size_t hw = d.hw_out();
  for (std::size_t c = 0; c < d.c; ++c) {
    T* dxc = dx + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const T* row = cols + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          T* dxr = dxc + static_cast<std::size_t>(ih) * d.w;
          const T* in = row + oh * d.wo;
          if (g.stride_w == 1) {
            const std::size_t lo = std::min(d.wo, g.pad_w > kj ? g.pad_w - kj : std::size_t{0});
            const std::size_t hi = std::max(lo, std::min(d.wo, d.w + g.pad_w - kj));
            const std::size_t shift = kj - g.pad_w;  // wraps; ow + shift >= 0 on [lo, hi)
            for (std::size_t ow = lo; ow < hi; ++ow) dxr[ow + shift] += in[ow];
            continue;
          }
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(d.w)) {
              dxr[static_cast<std::size_t>(iw)] += in[ow];
            }
          }
        }
      }
    }
  }
}


/// Valid output columns [lo, hi) for kernel column kj at stride 1.
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t kj, const ConvDims& d,
                                                      std::size_t pad) {
  const std::size_t lo = pad > kj ? pad - kj : 0;
  const std::size_t hi = std::min(d.wo, d.w + pad - kj);
  return {lo, std::max(lo, hi)};
}

/// Stride-1 convolution without a column buffer; used when the channel
/// product is small and im2col traffic would dominate the GEMM.
/// out[h][w] += sum over a 3x3 window (zero padding 1) of k * in, for one
/// input plane and one output plane of equal size.
template <typename T>
void correlate3x3_add(const T* in, const T* k, std::size_t h, std::size_t w, T* out) {
  auto tap = [&](std::ptrdiff_t r, std::ptrdiff_t c) -> T {
    if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(h) || c >= static_cast<std::ptrdiff_t>(w)) {
      return T(0);
    }
    return in[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
  };
  auto edge = [&](std::size_t r, std::size_t c) {
    T acc = 0;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        acc += k[a * 3 + b] * tap(static_cast<std::ptrdiff_t>(r) + a - 1,
                                  static_cast<std::ptrdiff_t>(c) + b - 1);
      }
    }
    out[r * w + c] += acc;
  };
  const T k00 = k[0], k01 = k[1], k02 = k[2], k10 = k[3], k11 = k[4], k12 = k[5], k20 = k[6],
          k21 = k[7], k22 = k[8];
  for (std::size_t r = 0; r < h; ++r) {
    const T* up = r > 0 ? in + (r - 1) * w : nullptr;
    const T* mid = in + r * w;
    const T* down = r + 1 < h ? in + (r + 1) * w : nullptr;
    T* o = out + r * w;
    edge(r, 0);
    if (w < 2) continue;
    if (up && down) {
      for (std::size_t c = 1; c + 1 < w; ++c) {
        o[c] += k00 * up[c - 1] + k01 * up[c] + k02 * up[c + 1] + k10 * mid[c - 1] +
                k11 * mid[c] + k12 * mid[c + 1] + k20 * down[c - 1] + k21 * down[c] +
                k22 * down[c + 1];
      }
    } else {
      for (std::size_t c = 1; c + 1 < w; ++c) edge(r, c);
    }
    edge(r, w - 1);
  }
}

template <typename T>
void direct_forward(const T* x, const T* w, const ConvDims& d, const Conv2dGeometry& g, T* y) {
  if (d.same3x3(g)) {
    for (std::size_t o = 0; o < d.o; ++o) {
      for (std::size_t c = 0; c < d.c; ++c) {
        correlate3x3_add(x + c * d.h * d.w, w + (o * d.c + c) * 9, d.h, d.w, y + o * d.hw_out());
      }
    }
    return;
  }
  for (std::size_t o = 0; o < d.o; ++o) {
    T* yo = y + o * d.hw_out();
    for (std::size_t c = 0; c < d.c; ++c) {
      const T* xc = x + c * d.h * d.w;
      for (std::size_t ki = 0; ki < d.kh; ++ki) {
        for (std::size_t kj = 0; kj < d.kw; ++kj) {
          const T wv = w[((o * d.c + c) * d.kh + ki) * d.kw + kj];
          const auto [lo, hi] = valid_cols(kj, d, g.pad_w);
          for (std::size_t oh = 0; oh < d.ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(g.pad_h);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
            const T* xr = xc + static_cast<std::size_t>(ih) * d.w;
            T* yr = yo + oh * d.wo;
            for (std::size_t ow = lo; ow < hi; ++ow) yr[ow] += wv * xr[ow + kj - g.pad_w];
          }
        }
      }
    }
  }
}

template <typename T>
void direct_backward(const T* x, const T* w, const T* dy, const ConvDims& d,
                     const Conv2dGeometry& g, T* dx, T* dw) {
  if (d.same3x3(g)) {
    for (std::size_t o = 0; o < d.o; ++o) {
      const T* dyo = dy + o * d.hw_out();
      for (std::size_t c = 0; c < d.c; ++c) {
        const T* wk = w + (o * d.c + c) * 9;
        if (dx) {
          const T flipped[9] = {wk[8], wk[7], wk[6], wk[5], wk[4], wk[3], wk[2], wk[1], wk[0]};
          correlate3x3_add(dyo, flipped, d.h, d.w, dx + c * d.h * d.w);
        }
        if (!dw) continue;
        const T* xc = x + c * d.h * d.w;
        for (std::size_t ki = 0; ki < 3; ++ki) {
          for (std::size_t kj = 0; kj < 3; ++kj) {
            const auto [lo, hi] = valid_cols(kj, d, 1);
            T acc = 0;
            for (std::size_t oh = 0; oh < d.ho; ++oh) {
              if (oh + ki < 1 || oh + ki > d.h) continue;
              const std::size_t row = (oh + ki - 1) * d.w;
              acc += lane_dot(dyo + oh * d.wo + lo, xc + row + lo + kj - 1, hi - lo);
            }
            dw[(o * d.c + c) * 9 + ki * 3 + kj] += acc;
          }
        }
      }
    }
    return;
  }
  for (std::size_t o = 0; o < d.o; ++o) {
    const T* dyo = dy + o * d.hw_out();
    for (std::size_t c = 0; c < d.c; ++c) {
      const T* xc = x + c * d.h * d.w;
      T* dxc = dx ? dx + c * d.h * d.w : nullptr;
      for (std::size_t ki = 0; ki < d.kh; ++ki) {
        for (std::size_t kj = 0; kj < d.kw; ++kj) {
          const std::size_t widx = ((o * d.c + c) * d.kh + ki) * d.kw + kj;
          const T wv = w[widx];
          const auto [lo, hi] = valid_cols(kj, d, g.pad_w);
          T acc = 0;
          for (std::size_t oh = 0; oh < d.ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(g.pad_h);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
            const std::size_t row = static_cast<std::size_t>(ih) * d.w;
            const std::size_t shift = kj - g.pad_w;  // wraps; ow + shift >= 0 on [lo, hi)
            const T* dyr = dyo + oh * d.wo;
            if (dw) acc += lane_dot(dyr + lo, xc + row + lo + shift, hi - lo);
            if (dxc) {
              T* dxr = dxc + row;
              for (std::size_t ow = lo; ow < hi; ++ow) dxr[ow + shift] += wv * dyr[ow];
            }
          }
          if (dw) dw[widx] += acc;
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t pad) {
  require(kernel >= 1 && stride >= 1, ErrorCode::invalid_argument,
          "kernel and stride must be >= 1");
  require(in + 2 * pad >= kernel, ErrorCode::shape,
          "kernel " + std::to_string(kernel) + " does not fit input extent " +
              std::to_string(in) + " with padding " + std::to_string(pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
  auto out = make_result<T>(a.shape(), {&a, &b});
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = av[i] + bv[i];
  if (out->requires_grad) {
    out->backward_fn = [pa = a.node_ptr(), pb = b.node_ptr()](Node<T>& self) {
      for (auto* g : {grad_of(pa), grad_of(pb)}) {
        if (!g) continue;
        T* gp = g->data();
        const T* dy = self.grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += dy[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  auto out = make_result<T>(a.shape(), {&a, &b});
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = av[i] * bv[i];
  if (out->requires_grad) {
    out->backward_fn = [pa = a.node_ptr(), pb = b.node_ptr()](Node<T>& self) {
      if (auto* g = grad_of(pa)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * pb->value[i];
      }
      if (auto* g = grad_of(pb)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * pa->value[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  auto out = make_result<T>({1}, {&a});
  T acc = 0;
  for (T v : a.data()) acc += v;
  out->value[0] = acc;
  if (out->requires_grad) {
    out->backward_fn = [pa = a.node_ptr()](Node<T>& self) {
      auto* g = grad_of(pa);
      for (auto& v : *g) v += self.grad[0];
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, std::span<const T> weights) {
  check(weights.size() == a.numel(), "weighted_sum: weight count mismatch");
  auto out = make_result<T>({1}, {&a});
  T acc = 0;
  const auto av = a.data();
  for (std::size_t i = 0; i < weights.size(); ++i) acc += av[i] * weights[i];
  out->value[0] = acc;
  if (out->requires_grad) {
    out->backward_fn = [pa = a.node_ptr(), w = std::vector<T>(weights.begin(), weights.end())](
                           Node<T>& self) {
      auto* g = grad_of(pa);
      for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += self.grad[0] * w[i];
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check(numel(shape) == a.numel(), "reshape: cannot view " + shape_string(a.shape()) + " as " +
                                       shape_string(shape));
  auto out = make_result<T>(std::move(shape), {&a});
  std::copy(a.data().begin(), a.data().end(), out->value.begin());
  if (out->requires_grad) {
    out->backward_fn = [pa = a.node_ptr()](Node<T>& self) {
      auto* g = grad_of(pa);
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  check(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  check(axis < first.size(), "concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    check(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      check(d == axis || p.dim(d) == first[d],
            "concat: extent mismatch on axis " + std::to_string(d) + " (" +
                shape_string(p.shape()) + " vs " + shape_string(first) + ")");
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  auto out = std::make_shared<Node<T>>();
  out->value.assign(numel(shape), T(0));
  out->shape = shape;
  bool needs = false;
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) {
    nodes.push_back(p.node_ptr());
    if (grad_enabled() && p.requires_grad()) {
      needs = true;
      out->parents.push_back(p.node_ptr());
    }
  }
  out->requires_grad = needs;
  out->is_leaf = !needs;

  const std::size_t out_block = shape[axis] * inner;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.dim(axis) * inner;
    const auto src = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src.begin() + o * block, src.begin() + (o + 1) * block,
                out->value.begin() + o * out_block + offset);
    }
    offset += block;
  }
  if (needs) {
    out->backward_fn = [nodes, offsets, outer, out_block, inner, axis](Node<T>& self) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto* g = grad_of(nodes[i]);
        if (!g) continue;
        const std::size_t block = nodes[i]->shape[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * out_block + offsets[i];
          T* dst = g->data() + o * block;
          for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto out = make_result<T>(x.shape(), {&x});
  const auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (branch_recording()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > T(0)) h = h * 1000003ULL + i + 1;
    }
    record_branch(h);
  }
  if (out->requires_grad) {
    out->backward_fn = [px = x.node_ptr()](Node<T>& self) {
      // branch-free so the loop vectorizes; signs are close to random
      T* g = grad_of(px)->data();
      const T* xv = px->value.data();
      const T* dy = self.grad.data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += xv[i] > T(0) ? dy[i] : T(0);
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv2dGeometry geo) {
  check_rank(x, 4, "conv2d");
  check_rank(w, 4, "conv2d weights");
  check(x.dim(1) == w.dim(1), "conv2d: input has " + std::to_string(x.dim(1)) +
                                  " channels, weights expect " + std::to_string(w.dim(1)));
  if (bias.defined()) check(bias.numel() == w.dim(0), "conv2d: bias length mismatch");
  const ConvDims d(x.shape(), w.shape(), geo);
  auto out = make_result<T>({d.n, d.o, d.ho, d.wo}, {&x, &w, &bias});

  const bool pointwise = d.pointwise(geo);
  const bool direct = d.direct(geo);
  std::vector<T> cols(pointwise || direct ? 0 : d.ckk() * d.hw_out());
  const CMapR<T> wm(w.data().data(), d.o, d.ckk());
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* xn = x.data().data() + n * d.c * d.h * d.w;
    if (direct) {
      T* yn = out->value.data() + n * d.o * d.hw_out();
      direct_forward(xn, w.data().data(), d, geo, yn);
      if (bias.defined()) {
        for (std::size_t o = 0; o < d.o; ++o) {
          for (std::size_t i = 0; i < d.hw_out(); ++i) yn[o * d.hw_out() + i] += bias.data()[o];
        }
      }
      continue;
    }
    const T* colp = xn;
    if (!pointwise) {
      im2col(xn, d, geo, cols.data());
      colp = cols.data();
    }
    MapR<T> y(out->value.data() + n * d.o * d.hw_out(), d.o, d.hw_out());
    y.noalias() = wm * CMapR<T>(colp, d.ckk(), d.hw_out());
    if (bias.defined()) {
      const auto b = bias.data();
      for (std::size_t o = 0; o < d.o; ++o) y.row(o).array() += b[o];
    }
  }

  if (out->requires_grad) {
    out->backward_fn = [px = x.node_ptr(), pw = w.node_ptr(), pb = node_or_null(bias), d, geo,
                        pointwise, direct](Node<T>& self) {
      auto* gx = grad_of(px);
      auto* gw = grad_of(pw);
      auto* gb = grad_of(pb);
      if (direct) {
        // dw as one GEMM over im2col columns; the direct loop only does dx
        std::vector<T> cols(gw ? d.ckk() * d.hw_out() : 0);
        for (std::size_t n = 0; n < d.n; ++n) {
          const T* dyn = self.grad.data() + n * d.o * d.hw_out();
          const T* xn = px->value.data() + n * d.c * d.h * d.w;
          if (gx) {
            direct_backward(xn, pw->value.data(), dyn, d, geo, gx->data() + n * d.c * d.h * d.w,
                            static_cast<T*>(nullptr));
          }
          if (gw) {
            im2col(xn, d, geo, cols.data());
            MapR<T>(gw->data(), d.o, d.ckk()).noalias() +=
                CMapR<T>(dyn, d.o, d.hw_out()) * CMapR<T>(cols.data(), d.ckk(), d.hw_out()).transpose();
          }
          if (gb) {
            for (std::size_t o = 0; o < d.o; ++o) {
              T acc = 0;
              for (std::size_t i = 0; i < d.hw_out(); ++i) acc += dyn[o * d.hw_out() + i];
              (*gb)[o] += acc;
            }
          }
        }
        return;
      }
      std::vector<T> cols(pointwise ? 0 : d.ckk() * d.hw_out());
      std::vector<T> dcols(d.ckk() * d.hw_out());
      const CMapR<T> wm(pw->value.data(), d.o, d.ckk());
      for (std::size_t n = 0; n < d.n; ++n) {
        const CMapR<T> dy(self.grad.data() + n * d.o * d.hw_out(), d.o, d.hw_out());
        const T* xn = px->value.data() + n * d.c * d.h * d.w;
        if (gw) {
          const T* colp = xn;
          if (!pointwise) {
            im2col(xn, d, geo, cols.data());
            colp = cols.data();
          }
          MapR<T>(gw->data(), d.o, d.ckk()).noalias() +=
              dy * CMapR<T>(colp, d.ckk(), d.hw_out()).transpose();
        }
        if (gb) {
          for (std::size_t o = 0; o < d.o; ++o) {
            (*gb)[o] += static_cast<T>(lane_sum(dy.data() + o * d.hw_out(), d.hw_out()));
          }
        }
        if (gx) {
          T* dxn = gx->data() + n * d.c * d.h * d.w;
          if (pointwise) {
            MapR<T>(dxn, d.c, d.hw_out()).noalias() += wm.transpose() * dy;
          } else {
            MapR<T>(dcols.data(), d.ckk(), d.hw_out()).noalias() = wm.transpose() * dy;
            col2im_add(dcols.data(), d, geo, dxn);
          }
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  check_rank(x, 3, "conv1d");
  check_rank(w, 3, "conv1d weights");
  const auto x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  const auto w4 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
  const auto y = conv2d(x4, w4, bias, Conv2dGeometry{1, stride, 0, pad});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training) {
  check(x.defined() && x.rank() >= 2, "batch_norm: expected [N,C,...] input");
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t s = x.numel() / (n * c);
  check(gamma.numel() == c && beta.numel() == c, "batch_norm: parameter length mismatch");
  check(state.running_mean.size() == c && state.running_var.size() == c,
        "batch_norm: running statistics length mismatch");
  if (training) {
    require(n >= 2, ErrorCode::invalid_argument, "batch_norm: training needs a batch of >= 2");
  }
  const std::size_t count = n * s;
  auto out = make_result<T>(x.shape(), {&x, &gamma, &beta});
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();

  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean, var;
    if (training) {
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += lane_sum(xv.data() + (i * c + ch) * s, s);
      mean = static_cast<T>(acc / static_cast<double>(count));
      double sq = 0;
      for (std::size_t i = 0; i < n; ++i) sq += lane_sqdev(xv.data() + (i * c + ch) * s, s, mean);
      var = static_cast<T>(sq / static_cast<double>(count));
      const T unbiased = static_cast<T>(sq / static_cast<double>(count - 1));
      state.running_mean[ch] = (T(1) - state.momentum) * state.running_mean[ch] + state.momentum * mean;
      state.running_var[ch] = (T(1) - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    inv_std[ch] = T(1) / std::sqrt(var + state.eps);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * s;
      for (std::size_t k = 0; k < s; ++k) {
        const T h = (xv[base + k] - mean) * inv_std[ch];
        xhat[base + k] = h;
        out->value[base + k] = gv[ch] * h + bv[ch];
      }
    }
  }

  if (out->requires_grad) {
    out->backward_fn = [px = x.node_ptr(), pg = gamma.node_ptr(), pb = beta.node_ptr(),
                        xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, s, count,
                        training](Node<T>& self) {
      auto* gx = grad_of(px);
      auto* gg = grad_of(pg);
      auto* gb = grad_of(pb);
      const auto& dy = self.grad;
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t base = (i * c + ch) * s;
          sum_dy += static_cast<T>(lane_sum(dy.data() + base, s));
          sum_dy_xhat += lane_dot(dy.data() + base, xhat.data() + base, s);
        }
        if (gg) (*gg)[ch] += sum_dy_xhat;
        if (gb) (*gb)[ch] += sum_dy;
        if (!gx) continue;
        const T gam = pg->value[ch];
        if (training) {
          const T scale = gam * inv_std[ch] / static_cast<T>(count);
          const T m = static_cast<T>(count);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * c + ch) * s;
            for (std::size_t k = 0; k < s; ++k) {
              (*gx)[base + k] +=
                  scale * (m * dy[base + k] - sum_dy - xhat[base + k] * sum_dy_xhat);
            }
          }
        } else {
          const T scale = gam * inv_std[ch];
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * c + ch) * s;
            for (std::size_t k = 0; k < s; ++k) (*gx)[base + k] += scale * dy[base + k];
          }
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t k) {
  check_rank(x, 4, "max_pool2d");
  require(k >= 1, ErrorCode::invalid_argument, "max_pool2d: kernel must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check(h >= k && w >= k, "max_pool2d: input " + shape_string(x.shape()) +
                              " smaller than the pooling window " + std::to_string(k));
  const std::size_t ho = h / k, wo = w / k;
  auto out = make_result<T>({n, c, ho, wo}, {&x});
  std::vector<std::uint32_t> arg(out->value.size());
  const auto xv = x.data();
  const bool rec = branch_recording();
  std::uint64_t hash = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* xp = xv.data() + plane * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (i * k) * w + j * k;
        for (std::size_t a = 0; a < k; ++a) {
          for (std::size_t b = 0; b < k; ++b) {
            const std::size_t idx = (i * k + a) * w + j * k + b;
            if (xp[idx] > xp[best]) best = idx;
          }
        }
        const std::size_t o = plane * ho * wo + i * wo + j;
        out->value[o] = xp[best];
        arg[o] = static_cast<std::uint32_t>(best);
        if (rec) hash = hash * 1000003ULL + best;
      }
    }
  }
  if (rec) record_branch(hash);
  if (out->requires_grad) {
    out->backward_fn = [px = x.node_ptr(), arg = std::move(arg), hw_in = h * w,
                        hw_out = ho * wo](Node<T>& self) {
      auto* g = grad_of(px);
      for (std::size_t o = 0; o < self.grad.size(); ++o) {
        const std::size_t plane = o / hw_out;
        (*g)[plane * hw_in + arg[o]] += self.grad[o];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
  check(x.defined() && x.rank() >= 3, "global_max_pool: expected [N,C,...] input");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t s = x.numel() / (n * c);
  check(s >= 1, "global_max_pool: empty spatial extent");
  auto out = make_result<T>({n, c}, {&x});
  std::vector<std::uint32_t> arg(n * c);
  const auto xv = x.data();
  std::uint64_t hash = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* p = xv.data() + plane * s;
    const auto best = static_cast<std::size_t>(std::max_element(p, p + s) - p);
    out->value[plane] = p[best];
    arg[plane] = static_cast<std::uint32_t>(best);
    hash = hash * 1000003ULL + best;
  }
  record_branch(hash);
  if (out->requires_grad) {
    out->backward_fn = [px = x.node_ptr(), arg = std::move(arg), s](Node<T>& self) {
      auto* g = grad_of(px);
      for (std::size_t plane = 0; plane < self.grad.size(); ++plane) {
        (*g)[plane * s + arg[plane]] += self.grad[plane];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> adaptive_mean_pool1d(const Tensor<T>& x, std::size_t out_len) {
  check_rank(x, 3, "adaptive_mean_pool1d");
  const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2);
  require(out_len >= 1, ErrorCode::invalid_argument, "adaptive_mean_pool1d: length must be >= 1");
  check(t >= 1, "adaptive_mean_pool1d: empty time axis");
  auto out = make_result<T>({n, c, out_len}, {&x});
  std::vector<std::pair<std::size_t, std::size_t>> bins(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    bins[i] = {i * t / out_len, ((i + 1) * t + out_len - 1) / out_len};
  }
  const auto xv = x.data();
  for (std::size_t row = 0; row < n * c; ++row) {
    const T* p = xv.data() + row * t;
    for (std::size_t i = 0; i < out_len; ++i) {
      T acc = 0;
      for (std::size_t k = bins[i].first; k < bins[i].second; ++k) acc += p[k];
      out->value[row * out_len + i] = acc / static_cast<T>(bins[i].second - bins[i].first);
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [px = x.node_ptr(), bins, t, out_len](Node<T>& self) {
      auto* g = grad_of(px);
      const std::size_t rows = self.grad.size() / out_len;
      for (std::size_t row = 0; row < rows; ++row) {
        for (std::size_t i = 0; i < out_len; ++i) {
          const T share = self.grad[row * out_len + i] /
                          static_cast<T>(bins[i].second - bins[i].first);
          for (std::size_t k = bins[i].first; k < bins[i].second; ++k) (*g)[row * t + k] += share;
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  check_rank(x, 2, "linear");
  check_rank(w, 2, "linear weights");
  check(x.dim(1) == w.dim(1), "linear: input has " + std::to_string(x.dim(1)) +
                                  " features, weights expect " + std::to_string(w.dim(1)));
  const std::size_t n = x.dim(0), f = x.dim(1), o = w.dim(0);
  if (bias.defined()) check(bias.numel() == o, "linear: bias length mismatch");
  auto out = make_result<T>({n, o}, {&x, &w, &bias});
  MapR<T> y(out->value.data(), n, o);
  y.noalias() = CMapR<T>(x.data().data(), n, f) * CMapR<T>(w.data().data(), o, f).transpose();
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < o; ++j) y(i, j) += b[j];
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [px = x.node_ptr(), pw = w.node_ptr(), pb = node_or_null(bias), n, f,
                        o](Node<T>& self) {
      const CMapR<T> dy(self.grad.data(), n, o);
      if (auto* g = grad_of(px)) {
        MapR<T>(g->data(), n, f).noalias() += dy * CMapR<T>(pw->value.data(), o, f);
      }
      if (auto* g = grad_of(pw)) {
        MapR<T>(g->data(), o, f).noalias() += dy.transpose() * CMapR<T>(px->value.data(), n, f);
      }
      if (auto* g = grad_of(pb)) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < o; ++j) (*g)[j] += dy(i, j);
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool active) {
  require(p >= 0.0 && p < 1.0, ErrorCode::invalid_argument, "dropout rate must be in [0, 1)");
  if (!active || p == 0.0) return x;
  require(rng != nullptr, ErrorCode::invalid_argument, "dropout: active mode needs an Rng");
  auto out = make_result<T>(x.shape(), {&x});
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng->uniform() >= p ? scale : T(0);
    out->value[i] = xv[i] * mask[i];
  }
  if (out->requires_grad) {
    out->backward_fn = [px = x.node_ptr(), mask = std::move(mask)](Node<T>& self) {
      auto* g = grad_of(px);
      for (std::size_t i = 0; i < mask.size(); ++i) (*g)[i] += self.grad[i] * mask[i];
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  check_rank(logits, 2, "softmax");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto out = make_result<T>({n, k}, {&logits});
  const auto lv = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = lv.data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) out->value[i * k + j] = std::exp(row[j] - mx) / z;
  }
  if (out->requires_grad) {
    out->backward_fn = [pl = logits.node_ptr(), n, k](Node<T>& self) {
      auto* g = grad_of(pl);
      for (std::size_t i = 0; i < n; ++i) {
        const T* y = self.value.data() + i * k;
        const T* dy = self.grad.data() + i * k;
        T dot = 0;
        for (std::size_t j = 0; j < k; ++j) dot += y[j] * dy[j];
        for (std::size_t j = 0; j < k; ++j) (*g)[i * k + j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  check_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  check(labels.size() == n, "cross_entropy: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(n));
  for (auto l : labels) {
    require(l < k, ErrorCode::invalid_argument,
            "cross_entropy: label " + std::to_string(l) + " out of range for " +
                std::to_string(k) + " classes");
  }
  auto out = make_result<T>({1}, {&logits});
  std::vector<T> probs(n * k);
  const auto lv = logits.data();
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = lv.data() + i * k;
    const T mx = *std::max_element(row, row + k);
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double log_z = std::log(z) + mx;
    loss += log_z - row[labels[i]];
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - log_z));
    }
  }
  out->value[0] = static_cast<T>(loss / static_cast<double>(n));
  if (out->requires_grad) {
    out->backward_fn = [pl = logits.node_ptr(), probs = std::move(probs),
                        labels = std::vector<std::size_t>(labels.begin(), labels.end()), n,
                        k](Node<T>& self) {
      auto* g = grad_of(pl);
      const T scale = self.grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const T target = j == labels[i] ? T(1) : T(0);
          (*g)[i * k + j] += scale * (probs[i * k + j] - target);
        }
      }
    };
  }
  return Tensor<T>(out);
}

#define TEMPOFUSE_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> weighted_sum(const Tensor<T>&, std::span<const T>);                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                      \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                            Conv2dGeometry);                                                  \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                            std::size_t, std::size_t);                                        \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                BatchNormState<T>&, bool);                                    \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> global_max_pool(const Tensor<T>&);                                       \
  template Tensor<T> adaptive_mean_pool1d(const Tensor<T>&, std::size_t);                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng*, bool);                           \
  template Tensor<T> softmax(const Tensor<T>&);                                               \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::size_t>);

TEMPOFUSE_INSTANTIATE_OPS(float)
TEMPOFUSE_INSTANTIATE_OPS(double)

}  // namespace tempofuse::nn
