#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "wmvac/tensor.hpp"

namespace wmvac {

namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMat = Eigen::Map<RowMat>;
using ConstMapRowMat = Eigen::Map<const RowMat>;

inline int conv_out_dim(int dim, int stride) {
  // kernel 3, padding 1
  return (dim + 2 - 3) / stride + 1;
}

inline Shape conv_out_shape(const Shape& in, int out_c, int stride) {
  return Shape{in.n, out_c, conv_out_dim(in.h, stride), conv_out_dim(in.w, stride)};
}

inline void check_conv_args(const Shape& in, const Shape& w, const Shape& b, int stride) {
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  if (w.h != 3 || w.w != 3)
    throw std::invalid_argument("conv2d: kernel must be 3x3, got " + w.str());
  if (in.c != w.c)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(in.c) +
                                " do not match weight in-channels " + std::to_string(w.c));
  if (in.h < 1 || in.w < 1)
    throw std::invalid_argument("conv2d: empty spatial dims " + in.str());
  if (b.n != 1 || b.c != w.n || b.h != 1 || b.w != 1)
    throw std::invalid_argument("conv2d: bias shape " + b.str() + " does not match out-channels " +
                                std::to_string(w.n));
}

// Columns of one image's receptive fields: row r = (c*3+ky)*3+kx holds the
// input value at (oy*stride+ky-1, ox*stride+kx-1) for output pixel j = oy*Wo+ox.
inline void im2col(const Tensor& in, int n, int stride, int ho, int wo, RowMat& col) {
  const Shape s = in.shape();
  col.resize(s.c * 9, static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < s.c; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* row = col.data() + static_cast<std::int64_t>((c * 3 + ky) * 3 + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          float* dst = row + static_cast<std::int64_t>(oy) * wo;
          if (iy < 0 || iy >= s.h) {
            for (int ox = 0; ox < wo; ++ox) dst[ox] = 0.0f;
            continue;
          }
          const float* src = in.data() + in.index(n, c, iy, 0);
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            dst[ox] = (ix >= 0 && ix < s.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im_add(const RowMat& gcol, int n, int stride, int ho, int wo, Tensor& gin) {
  const Shape s = gin.shape();
  for (int c = 0; c < s.c; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* row = gcol.data() + static_cast<std::int64_t>((c * 3 + ky) * 3 + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= s.h) continue;
          const float* src = row + static_cast<std::int64_t>(oy) * wo;
          float* dst = gin.data() + gin.index(n, c, iy, 0);
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < s.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& bias, int stride, Tensor& out) {
  check_conv_args(in.shape(), w.shape(), bias.shape(), stride);
  const Shape os = conv_out_shape(in.shape(), w.shape().n, stride);
  out = Tensor(os);
  const int ho = os.h, wo = os.w, co = os.c;
  const std::int64_t hw = static_cast<std::int64_t>(ho) * wo;
  ConstMapRowMat wmat(w.data(), co, static_cast<Eigen::Index>(in.shape().c) * 9);
  RowMat col;
  for (int n = 0; n < os.n; ++n) {
    im2col(in, n, stride, ho, wo, col);
    MapRowMat omat(out.data() + out.index(n, 0, 0, 0), co, hw);
    omat.noalias() = wmat * col;
    for (int c = 0; c < co; ++c) omat.row(c).array() += bias[c];
  }
}

// Each of the three gradient outputs is optional; pass nullptr to skip.
inline void conv2d_backward(const Tensor& in, const Tensor& w, int stride, const Tensor& gout,
                            Tensor* gin, Tensor* gw, Tensor* gbias) {
  const Shape os = gout.shape();
  const int ho = os.h, wo = os.w, co = os.c;
  const std::int64_t hw = static_cast<std::int64_t>(ho) * wo;
  const Eigen::Index k = static_cast<Eigen::Index>(in.shape().c) * 9;
  ConstMapRowMat wmat(w.data(), co, k);
  RowMat col, gcol;
  for (int n = 0; n < os.n; ++n) {
    ConstMapRowMat gmat(gout.data() + gout.index(n, 0, 0, 0), co, hw);
    if (gbias) {
      for (int c = 0; c < co; ++c) (*gbias)[c] += gmat.row(c).sum();
    }
    if (gw) {
      im2col(in, n, stride, ho, wo, col);
      MapRowMat gwmat(gw->data(), co, k);
      gwmat.noalias() += gmat * col.transpose();
    }
    if (gin) {
      gcol.resize(k, hw);
      gcol.noalias() = wmat.transpose() * gmat;
      col2im_add(gcol, n, stride, ho, wo, *gin);
    }
  }
}

// Saturates one ulp inside the open interval so outputs stay strictly in
// (0,1) even where float math would round to the endpoints.
inline float sigmoid_scalar(float x) {
  float y;
  if (x >= 0.0f) {
    y = 1.0f / (1.0f + std::exp(-x));
  } else {
    const float e = std::exp(x);
    y = e / (1.0f + e);
  }
  constexpr float lo = std::numeric_limits<float>::min();
  constexpr float hi = 1.0f - std::numeric_limits<float>::epsilon() / 2.0f;
  return y < lo ? lo : (y > hi ? hi : y);
}

}  // namespace detail

enum class OpKind : std::uint8_t {
  kLeaf,
  kConv2d,
  kRelu,
  kSigmoid,
  kUpsample2x,
  kAdd,
  kScaleAdd,
  kAffine,
  kMse,
};

// Handle to a node on a Tape. Only meaningful together with the tape that
// created it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Gradients of the loss with respect to the registered differentiable leaves.
class GradMap {
 public:
  bool contains(Var v) const { return find(v.id) >= 0; }

  const Tensor& at(Var v) const {
    const int i = find(v.id);
    if (i < 0) throw std::out_of_range("GradMap: no gradient recorded for node " + std::to_string(v.id));
    return grads_[static_cast<std::size_t>(i)];
  }

 private:
  friend class Tape;
  int find(int id) const {
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (ids_[i] == id) return static_cast<int>(i);
    return -1;
  }
  std::vector<int> ids_;
  std::vector<Tensor> grads_;
};

// Records operations in issue order; issue order is a topological order, so
// walking the node list backwards visits every node after all of its users.
// One tape per loss evaluation; backward() consumes the tape.
class Tape {
 public:
  Var leaf(Tensor value, bool want_grad = false) {
    Node n;
    n.op = OpKind::kLeaf;
    n.want_grad = want_grad;
    n.needs = want_grad;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var conv2d(Var input, Var weight, Var bias, int stride) {
    const Node& in = node(input);
    const Node& w = node(weight);
    const Node& b = node(bias);
    Node n;
    n.op = OpKind::kConv2d;
    n.a = input.id;
    n.b = weight.id;
    n.c = bias.id;
    n.stride = stride;
    n.needs = in.needs || w.needs || b.needs;
    detail::conv2d_forward(in.value, w.value, b.value, stride, n.value);
    return push(std::move(n));
  }

  Var relu(Var x) {
    const Node& in = node(x);
    Node n;
    n.op = OpKind::kRelu;
    n.a = x.id;
    n.needs = in.needs;
    n.value = in.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i)
      if (n.value[i] < 0.0f) n.value[i] = 0.0f;
    return push(std::move(n));
  }

  Var sigmoid(Var x) {
    const Node& in = node(x);
    Node n;
    n.op = OpKind::kSigmoid;
    n.a = x.id;
    n.needs = in.needs;
    n.value = Tensor(in.value.shape());
    for (std::int64_t i = 0; i < n.value.size(); ++i)
      n.value[i] = detail::sigmoid_scalar(in.value[i]);
    return push(std::move(n));
  }

  Var upsample_nearest2x(Var x) {
    const Node& in = node(x);
    const Shape s = in.value.shape();
    Node n;
    n.op = OpKind::kUpsample2x;
    n.a = x.id;
    n.needs = in.needs;
    n.value = Tensor(Shape{s.n, s.c, s.h * 2, s.w * 2});
    for (int b = 0; b < s.n; ++b)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y) {
          const float* src = in.value.data() + in.value.index(b, c, y, 0);
          float* d0 = n.value.data() + n.value.index(b, c, 2 * y, 0);
          float* d1 = n.value.data() + n.value.index(b, c, 2 * y + 1, 0);
          for (int xx = 0; xx < s.w; ++xx) {
            const float v = src[xx];
            d0[2 * xx] = v;
            d0[2 * xx + 1] = v;
            d1[2 * xx] = v;
            d1[2 * xx + 1] = v;
          }
        }
    return push(std::move(n));
  }

  Var add(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value))
      throw std::invalid_argument("add: shape mismatch " + na.value.shape().str() + " vs " +
                                  nb.value.shape().str());
    Node n;
    n.op = OpKind::kAdd;
    n.a = a.id;
    n.b = b.id;
    n.needs = na.needs || nb.needs;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] += nb.value[i];
    return push(std::move(n));
  }

  // ca*a + cb*b, elementwise. Shapes must match; used mostly on scalar nodes
  // to combine loss terms.
  Var scale_add(Var a, float ca, Var b, float cb) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value))
      throw std::invalid_argument("scale_add: shape mismatch " + na.value.shape().str() + " vs " +
                                  nb.value.shape().str());
    Node n;
    n.op = OpKind::kScaleAdd;
    n.a = a.id;
    n.b = b.id;
    n.ca = ca;
    n.cb = cb;
    n.needs = na.needs || nb.needs;
    n.value = Tensor(na.value.shape());
    for (std::int64_t i = 0; i < n.value.size(); ++i)
      n.value[i] = ca * na.value[i] + cb * nb.value[i];
    if (!std::isnan(na.dvalue) && !std::isnan(nb.dvalue))
      n.dvalue = static_cast<double>(ca) * na.dvalue + static_cast<double>(cb) * nb.dvalue;
    return push(std::move(n));
  }

  // scale*x + offset with constant per-element coefficients.
  Var affine(Var x, Tensor scale, Tensor offset) {
    const Node& in = node(x);
    if (!in.value.same_shape(scale) || !in.value.same_shape(offset))
      throw std::invalid_argument("affine: coefficient shape mismatch");
    Node n;
    n.op = OpKind::kAffine;
    n.a = x.id;
    n.needs = in.needs;
    n.value = Tensor(in.value.shape());
    for (std::int64_t i = 0; i < n.value.size(); ++i)
      n.value[i] = scale[i] * in.value[i] + offset[i];
    n.aux = std::move(scale);
    return push(std::move(n));
  }

  // Mean over all entries of (a-b)^2, accumulated in 64-bit. Scalar node.
  Var mse(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    Node n;
    n.op = OpKind::kMse;
    n.a = a.id;
    n.b = b.id;
    n.needs = na.needs || nb.needs;
    n.dvalue = mean_squared_error(na.value, nb.value);
    n.value = Tensor::scalar(static_cast<float>(n.dvalue));
    return push(std::move(n));
  }

  const Tensor& value(Var v) const { return node(v).value; }

  // Scalar node value at the precision it was accumulated in. Loss nodes and
  // their scale_add combinations keep 64 bits; anything else falls back to
  // the stored 32-bit value.
  double scalar_value(Var v) const {
    const Node& n = node(v);
    if (n.value.size() != 1)
      throw std::invalid_argument("Tape::scalar_value: node is not scalar, shape " + n.value.shape().str());
    return std::isnan(n.dvalue) ? static_cast<double>(n.value.item()) : n.dvalue;
  }

  int node_count() const { return static_cast<int>(nodes_.size()); }

  // Reverse pass from a scalar loss node. Returns gradients for every leaf
  // registered with want_grad (zero tensors for leaves the loss does not
  // reach). The tape is consumed: a second call is rejected.
  GradMap backward(Var loss) {
    if (consumed_) throw std::logic_error("Tape::backward: tape already consumed");
    const Node& ln = node(loss);
    if (ln.value.size() != 1)
      throw std::invalid_argument("Tape::backward: loss must be scalar, got " + ln.value.shape().str());
    consumed_ = true;

    std::vector<Tensor> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss.id)] = Tensor::scalar(1.0f);

    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      Tensor& g = grads[static_cast<std::size_t>(i)];
      if (g.empty() || !n.needs) continue;
      switch (n.op) {
        case OpKind::kLeaf:
          break;
        case OpKind::kConv2d: {
          const Node& in = nodes_[static_cast<std::size_t>(n.a)];
          const Node& w = nodes_[static_cast<std::size_t>(n.b)];
          const Node& b = nodes_[static_cast<std::size_t>(n.c)];
          Tensor* gin = in.needs ? &grad_buf(grads, n.a) : nullptr;
          Tensor* gw = w.needs ? &grad_buf(grads, n.b) : nullptr;
          Tensor* gb = b.needs ? &grad_buf(grads, n.c) : nullptr;
          detail::conv2d_backward(in.value, w.value, n.stride, g, gin, gw, gb);
          break;
        }
        case OpKind::kRelu: {
          const Node& in = nodes_[static_cast<std::size_t>(n.a)];
          Tensor& gin = grad_buf(grads, n.a);
          for (std::int64_t j = 0; j < g.size(); ++j)
            if (in.value[j] > 0.0f) gin[j] += g[j];
          break;
        }
        case OpKind::kSigmoid: {
          Tensor& gin = grad_buf(grads, n.a);
          for (std::int64_t j = 0; j < g.size(); ++j) {
            const float y = n.value[j];
            gin[j] += g[j] * y * (1.0f - y);
          }
          break;
        }
        case OpKind::kUpsample2x: {
          Tensor& gin = grad_buf(grads, n.a);
          const Shape s = gin.shape();
          for (int bb = 0; bb < s.n; ++bb)
            for (int c = 0; c < s.c; ++c)
              for (int y = 0; y < s.h; ++y) {
                const float* g0 = g.data() + g.index(bb, c, 2 * y, 0);
                const float* g1 = g.data() + g.index(bb, c, 2 * y + 1, 0);
                float* dst = gin.data() + gin.index(bb, c, y, 0);
                for (int xx = 0; xx < s.w; ++xx)
                  dst[xx] += g0[2 * xx] + g0[2 * xx + 1] + g1[2 * xx] + g1[2 * xx + 1];
              }
          break;
        }
        case OpKind::kAdd: {
          if (nodes_[static_cast<std::size_t>(n.a)].needs) {
            Tensor& ga = grad_buf(grads, n.a);
            for (std::int64_t j = 0; j < g.size(); ++j) ga[j] += g[j];
          }
          if (nodes_[static_cast<std::size_t>(n.b)].needs) {
            Tensor& gb = grad_buf(grads, n.b);
            for (std::int64_t j = 0; j < g.size(); ++j) gb[j] += g[j];
          }
          break;
        }
        case OpKind::kScaleAdd: {
          if (nodes_[static_cast<std::size_t>(n.a)].needs) {
            Tensor& ga = grad_buf(grads, n.a);
            for (std::int64_t j = 0; j < g.size(); ++j) ga[j] += n.ca * g[j];
          }
          if (nodes_[static_cast<std::size_t>(n.b)].needs) {
            Tensor& gb = grad_buf(grads, n.b);
            for (std::int64_t j = 0; j < g.size(); ++j) gb[j] += n.cb * g[j];
          }
          break;
        }
        case OpKind::kAffine: {
          Tensor& ga = grad_buf(grads, n.a);
          for (std::int64_t j = 0; j < g.size(); ++j) ga[j] += n.aux[j] * g[j];
          break;
        }
        case OpKind::kMse: {
          const Node& na = nodes_[static_cast<std::size_t>(n.a)];
          const Node& nb = nodes_[static_cast<std::size_t>(n.b)];
          const double k = 2.0 * static_cast<double>(g.item()) / static_cast<double>(na.value.size());
          if (na.needs) {
            Tensor& ga = grad_buf(grads, n.a);
            for (std::int64_t j = 0; j < ga.size(); ++j)
              ga[j] += static_cast<float>(k * (static_cast<double>(na.value[j]) - nb.value[j]));
          }
          if (nb.needs) {
            Tensor& gb = grad_buf(grads, n.b);
            for (std::int64_t j = 0; j < gb.size(); ++j)
              gb[j] -= static_cast<float>(k * (static_cast<double>(na.value[j]) - nb.value[j]));
          }
          break;
        }
      }
    }

    GradMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op != OpKind::kLeaf || !n.want_grad) continue;
      out.ids_.push_back(static_cast<int>(i));
      Tensor& g = grads[i];
      out.grads_.push_back(g.empty() ? Tensor(n.value.shape()) : std::move(g));
    }
    return out;
  }

 private:
  struct Node {
    OpKind op = OpKind::kLeaf;
    int a = -1, b = -1, c = -1;
    int stride = 1;
    float ca = 0.0f, cb = 0.0f;
    bool want_grad = false;
    bool needs = false;  // true if some want_grad leaf is reachable below
    double dvalue = std::numeric_limits<double>::quiet_NaN();  // 64-bit scalar, when meaningful
    Tensor value;
    Tensor aux;  // affine scale coefficients
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::out_of_range("Tape: invalid node handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Tensor& grad_buf(std::vector<Tensor>& grads, int id) {
    Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape());
    return g;
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Tape-free forward flavors for evaluation-only paths.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
  Tensor out;
  detail::conv2d_forward(input, weight, bias, stride, out);
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (std::int64_t i = 0; i < out.size(); ++i)
    if (out[i] < 0.0f) out[i] = 0.0f;
  return out;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(x[i]);
  return out;
}

inline Tensor upsample_nearest2x(const Tensor& x) {
  Tape t;
  return t.value(t.upsample_nearest2x(t.constant(x)));
}

}  // namespace wmvac
