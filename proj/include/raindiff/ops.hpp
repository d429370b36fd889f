// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable primitives. All shape matches are exact; the only implicit
// broadcast is the scalar in `affine`. Image tensors are N x C x H x W.

#pragma once

#include "raindiff/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <span>

namespace raindiff {

namespace detail {

template <typename Scalar>
void accumulate(Node<Scalar>& node, std::size_t input, const Tensor<Scalar>& g) {
  auto& in = *node.inputs[input];
  if (!in.requires_grad) return;
  in.grad_buffer().data() += g.data();
}

template <typename Scalar>
bool wants_grad(Node<Scalar>& node, std::size_t input) {
  return node.inputs[input]->requires_grad;
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(s));
  }
}

// Output columns [lo, hi) whose input column ox * stride - pad + kx lies in [0, w).
inline std::pair<Index, Index> valid_span(Index wo, Index w, Index stride, Index pad, Index kx) {
  const Index first = pad - kx;  // smallest ox * stride that lands on column 0
  const Index lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const Index last = w - 1 + pad - kx;
  const Index hi = last < 0 ? 0 : std::min(wo, last / stride + 1);
  return {std::min(lo, hi), hi};
}

// Lays out the receptive fields of x as a (Ci*k*k) x (N*Ho*Wo) row-major matrix.
template <typename Scalar>
void im2col(const Tensor<Scalar>& x, Index k, Index stride, Index pad, Index ho, Index wo,
            typename Tensor<Scalar>::RowMatrix& col) {
  const Index n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index plane = ho * wo;
  col.resize(ci * k * k, n * plane);
  for (Index c = 0; c < ci; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const auto [lo, hi] = valid_span(wo, w, stride, pad, kx);
        Scalar* row = col.row((c * k + ky) * k + kx).data();
        for (Index b = 0; b < n; ++b) {
          const Scalar* src = x.ptr() + (b * ci + c) * h * w;
          Scalar* dst = row + b * plane;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * stride - pad + ky;
            Scalar* out = dst + oy * wo;
            if (iy < 0 || iy >= h) {
              std::fill(out, out + wo, Scalar(0));
              continue;
            }
            const Index base = iy * w - pad + kx;
            std::fill(out, out + lo, Scalar(0));
            if (stride == 1) {
              if (hi > lo) std::copy(src + base + lo, src + base + hi, out + lo);
            } else {
              for (Index ox = lo; ox < hi; ++ox) out[ox] = src[base + ox * stride];
            }
            std::fill(out + hi, out + wo, Scalar(0));
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const typename Tensor<Scalar>::RowMatrix& col, Index k, Index stride, Index pad,
            Index ho, Index wo, Tensor<Scalar>& dx) {
  const Index n = dx.dim(0), ci = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const Index plane = ho * wo;
  for (Index c = 0; c < ci; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const auto [lo, hi] = valid_span(wo, w, stride, pad, kx);
        const Scalar* row = col.row((c * k + ky) * k + kx).data();
        for (Index b = 0; b < n; ++b) {
          Scalar* dst = dx.ptr() + (b * ci + c) * h * w;
          const Scalar* src = row + b * plane;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const Index base = iy * w - pad + kx;
            const Scalar* in = src + oy * wo;
            if (stride == 1) {
              for (Index ox = lo; ox < hi; ++ox) dst[base + ox] += in[ox];
            } else {
              for (Index ox = lo; ox < hi; ++ox) dst[base + ox * stride] += in[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().data() + b.value().data());
  return Var<Scalar>::from_op(std::move(out), {a, b}, [](Node<Scalar>& node) {
    detail::accumulate(node, 0, node.grad);
    detail::accumulate(node, 1, node.grad);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Scalar> out(a.shape(), a.value().data() - b.value().data());
  return Var<Scalar>::from_op(std::move(out), {a, b}, [](Node<Scalar>& node) {
    detail::accumulate(node, 0, node.grad);
    if (detail::wants_grad(node, 1)) node.inputs[1]->grad_buffer().data() -= node.grad.data();
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), (a.value().array() * b.value().array()).matrix());
  return Var<Scalar>::from_op(std::move(out), {a, b}, [](Node<Scalar>& node) {
    const auto& g = node.grad.array();
    if (detail::wants_grad(node, 0))
      node.inputs[0]->grad_buffer().array() += g * node.inputs[1]->value.array();
    if (detail::wants_grad(node, 1))
      node.inputs[1]->grad_buffer().array() += g * node.inputs[0]->value.array();
  });
}

/// scale * x + shift with scalar constants.
template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& x, Scalar scale, Scalar shift = Scalar(0)) {
  Tensor<Scalar> out(x.shape(), ((x.value().array() * scale) + shift).matrix());
  return Var<Scalar>::from_op(std::move(out), {x}, [scale](Node<Scalar>& node) {
    node.inputs[0]->grad_buffer().array() += node.grad.array() * scale;
  });
}

/// Multiplies sample n of x (leading axis) by the constant coeffs[n].
template <typename Scalar>
Var<Scalar> scale_per_sample(const Var<Scalar>& x, std::span<const Scalar> coeffs) {
  if (x.shape().empty() || x.shape()[0] != static_cast<Index>(coeffs.size())) {
    throw ShapeError("scale_per_sample: " + std::to_string(coeffs.size()) +
                     " coefficients for shape " + to_string(x.shape()));
  }
  const Index n = x.shape()[0];
  const Index stride = x.value().size() / n;
  std::vector<Scalar> c(coeffs.begin(), coeffs.end());
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < n; ++i)
    out.data().segment(i * stride, stride) = x.value().data().segment(i * stride, stride) * c[i];
  return Var<Scalar>::from_op(std::move(out), {x}, [c, n, stride](Node<Scalar>& node) {
    auto& g = node.inputs[0]->grad_buffer();
    for (Index i = 0; i < n; ++i)
      g.data().segment(i * stride, stride) += node.grad.data().segment(i * stride, stride) * c[i];
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_rank(a.shape(), 4, "concat_channels");
  detail::require_rank(b.shape(), 4, "concat_channels");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("concat_channels: shape mismatch " + to_string(sa) + " vs " + to_string(sb));
  }
  const Index n = sa[0], ca = sa[1], cb = sb[1], plane = sa[2] * sa[3];
  Tensor<Scalar> out({n, ca + cb, sa[2], sa[3]});
  for (Index i = 0; i < n; ++i) {
    out.data().segment(i * (ca + cb) * plane, ca * plane) =
        a.value().data().segment(i * ca * plane, ca * plane);
    out.data().segment((i * (ca + cb) + ca) * plane, cb * plane) =
        b.value().data().segment(i * cb * plane, cb * plane);
  }
  return Var<Scalar>::from_op(std::move(out), {a, b}, [n, ca, cb, plane](Node<Scalar>& node) {
    const auto& g = node.grad.data();
    if (detail::wants_grad(node, 0)) {
      auto& ga = node.inputs[0]->grad_buffer().data();
      for (Index i = 0; i < n; ++i)
        ga.segment(i * ca * plane, ca * plane) += g.segment(i * (ca + cb) * plane, ca * plane);
    }
    if (detail::wants_grad(node, 1)) {
      auto& gb = node.inputs[1]->grad_buffer().data();
      for (Index i = 0; i < n; ++i)
        gb.segment(i * cb * plane, cb * plane) +=
            g.segment((i * (ca + cb) + ca) * plane, cb * plane);
    }
  });
}

/// 2-D cross-correlation with square kernel, zero padding and bias.
/// x: N x Ci x H x W, weight: Co x Ci x k x k, bias: Co.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   Index stride = 1, Index pad = 1) {
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(weight.shape(), 4, "conv2d weight");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  const Index k = ws[2];
  if (ws[1] != xs[1] || ws[3] != k || bias.shape() != Shape{ws[0]}) {
    throw ShapeError("conv2d: input " + to_string(xs) + " incompatible with weight " +
                     to_string(ws) + " / bias " + to_string(bias.shape()));
  }
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: invalid stride or padding");
  const Index n = xs[0], co = ws[0];
  const Index ho = (xs[2] + 2 * pad - k) / stride + 1;
  const Index wo = (xs[3] + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: kernel larger than padded input " + to_string(xs));
  const Index plane = ho * wo;

  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  RowMatrix col;
  detail::im2col(x.value(), k, stride, pad, ho, wo, col);
  const auto wmat = weight.value().matrix(co, col.rows());
  RowMatrix prod(co, n * plane);
  prod.noalias() = wmat * col;

  Tensor<Scalar> out({n, co, ho, wo});
  const auto& b = bias.value().data();
  for (Index i = 0; i < n; ++i) {
    out.matrix(n * co, plane).middleRows(i * co, co) =
        (prod.middleCols(i * plane, plane).colwise() + b);
  }

  return Var<Scalar>::from_op(
      std::move(out), {x, weight, bias}, [n, co, k, stride, pad, ho, wo, plane](Node<Scalar>& node) {
        const Tensor<Scalar>& xv = node.inputs[0]->value;
        const Tensor<Scalar>& wv = node.inputs[1]->value;
        const Index kk = xv.dim(1) * k * k;
        RowMatrix g(co, n * plane);
        const auto gout = node.grad.matrix(n * co, plane);
        for (Index i = 0; i < n; ++i) g.middleCols(i * plane, plane) = gout.middleRows(i * co, co);

        if (detail::wants_grad(node, 2)) {
          node.inputs[2]->grad_buffer().data() += g.rowwise().sum();
        }
        const bool need_w = detail::wants_grad(node, 1);
        const bool need_x = detail::wants_grad(node, 0);
        if (!need_w && !need_x) return;
        RowMatrix col;
        if (need_w) {
          detail::im2col(xv, k, stride, pad, ho, wo, col);
          node.inputs[1]->grad_buffer().matrix(co, kk).noalias() += g * col.transpose();
        }
        if (need_x) {
          col.resize(kk, n * plane);
          col.noalias() = wv.matrix(co, kk).transpose() * g;
          detail::col2im(col, k, stride, pad, ho, wo, node.inputs[0]->grad_buffer());
        }
      });
}

/// Nearest-neighbour 2x spatial upsampling.
template <typename Scalar>
Var<Scalar> upsample2x(const Var<Scalar>& x) {
  detail::require_rank(x.shape(), 4, "upsample2x");
  const Index nc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor<Scalar> out({x.shape()[0], x.shape()[1], 2 * h, 2 * w});
  const Scalar* src = x.value().ptr();
  Scalar* dst = out.ptr();
  for (Index p = 0; p < nc; ++p)
    for (Index i = 0; i < 2 * h; ++i)
      for (Index j = 0; j < 2 * w; ++j)
        dst[(p * 2 * h + i) * 2 * w + j] = src[(p * h + i / 2) * w + j / 2];
  return Var<Scalar>::from_op(std::move(out), {x}, [nc, h, w](Node<Scalar>& node) {
    Scalar* g = node.inputs[0]->grad_buffer().ptr();
    const Scalar* go = node.grad.ptr();
    for (Index p = 0; p < nc; ++p)
      for (Index i = 0; i < 2 * h; ++i)
        for (Index j = 0; j < 2 * w; ++j)
          g[(p * h + i / 2) * w + j / 2] += go[(p * 2 * h + i) * 2 * w + j];
  });
}

/// a (M x K) times b (K x N).
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor<Scalar> out({m, n});
  out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  return Var<Scalar>::from_op(std::move(out), {a, b}, [m, k, n](Node<Scalar>& node) {
    const auto g = node.grad.matrix(m, n);
    if (detail::wants_grad(node, 0))
      node.inputs[0]->grad_buffer().matrix(m, k).noalias() +=
          g * node.inputs[1]->value.matrix(k, n).transpose();
    if (detail::wants_grad(node, 1))
      node.inputs[1]->grad_buffer().matrix(k, n).noalias() +=
          node.inputs[0]->value.matrix(m, k).transpose() * g;
  });
}

/// x (N x K) times weight^T (weight: M x K) plus bias (M).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  detail::require_rank(x.shape(), 2, "linear");
  detail::require_rank(weight.shape(), 2, "linear");
  const Index n = x.shape()[0], k = x.shape()[1], m = weight.shape()[0];
  if (weight.shape()[1] != k || bias.shape() != Shape{m}) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()) + " / bias " + to_string(bias.shape()));
  }
  Tensor<Scalar> out({n, m});
  out.matrix(n, m).noalias() = x.value().matrix(n, k) * weight.value().matrix(m, k).transpose();
  out.matrix(n, m).rowwise() += bias.value().data().transpose();
  return Var<Scalar>::from_op(std::move(out), {x, weight, bias}, [n, k, m](Node<Scalar>& node) {
    const auto g = node.grad.matrix(n, m);
    if (detail::wants_grad(node, 0))
      node.inputs[0]->grad_buffer().matrix(n, k).noalias() += g * node.inputs[1]->value.matrix(m, k);
    if (detail::wants_grad(node, 1))
      node.inputs[1]->grad_buffer().matrix(m, k).noalias() +=
          g.transpose() * node.inputs[0]->value.matrix(n, k);
    if (detail::wants_grad(node, 2))
      node.inputs[2]->grad_buffer().data() += g.colwise().sum().transpose();
  });
}

/// Adds v[n, c] to every pixel of channel c in sample n of x (N x C x H x W).
template <typename Scalar>
Var<Scalar> add_channel_bias(const Var<Scalar>& x, const Var<Scalar>& v) {
  detail::require_rank(x.shape(), 4, "add_channel_bias");
  const Index n = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  if (v.shape() != Shape{n, c}) {
    throw ShapeError("add_channel_bias: bias " + to_string(v.shape()) + " for input " +
                     to_string(x.shape()));
  }
  Tensor<Scalar> out = x.value();
  auto om = out.matrix(n * c, plane);
  om.colwise() += v.value().data();
  return Var<Scalar>::from_op(std::move(out), {x, v}, [n, c, plane](Node<Scalar>& node) {
    detail::accumulate(node, 0, node.grad);
    if (detail::wants_grad(node, 1))
      node.inputs[1]->grad_buffer().data() += node.grad.matrix(n * c, plane).rowwise().sum();
  });
}

/// Group normalization over (C/groups x H x W) slabs of each sample, with
/// per-channel affine gamma, beta.
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Index groups, double eps = 1e-5) {
  detail::require_rank(x.shape(), 4, "group_norm");
  const Index n = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  if (groups < 1 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("group_norm: affine parameters " + to_string(gamma.shape()) + " / " +
                     to_string(beta.shape()) + " for " + std::to_string(c) + " channels");
  }
  const Index cpg = c / groups;
  const Index m = cpg * plane;
  Tensor<Scalar> xhat(x.shape());
  std::vector<Scalar> rstd(static_cast<std::size_t>(n * groups));
  for (Index s = 0; s < n * groups; ++s) {
    const auto seg = x.value().data().segment(s * m, m);
    const double mean = seg.template cast<double>().sum() / static_cast<double>(m);
    const double var =
        (seg.template cast<double>().array() - mean).square().sum() / static_cast<double>(m);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(s)] = static_cast<Scalar>(r);
    xhat.data().segment(s * m, m) =
        ((seg.template cast<double>().array() - mean) * r).template cast<Scalar>().matrix();
  }
  Tensor<Scalar> out(x.shape());
  {
    auto om = out.matrix(n * c, plane);
    const auto hm = xhat.matrix(n * c, plane);
    for (Index i = 0; i < n; ++i)
      for (Index ch = 0; ch < c; ++ch)
        om.row(i * c + ch) = hm.row(i * c + ch).array() * gamma.value()[ch] + beta.value()[ch];
  }
  return Var<Scalar>::from_op(
      std::move(out), {x, gamma, beta},
      [n, c, plane, groups, cpg, m, xhat = std::move(xhat), rstd = std::move(rstd)](
          Node<Scalar>& node) {
        const auto g = node.grad.matrix(n * c, plane);
        const auto hm = xhat.matrix(n * c, plane);
        if (detail::wants_grad(node, 1)) {
          auto& gg = node.inputs[1]->grad_buffer().data();
          for (Index i = 0; i < n; ++i)
            for (Index ch = 0; ch < c; ++ch)
              gg[ch] += (g.row(i * c + ch).array() * hm.row(i * c + ch).array()).sum();
        }
        if (detail::wants_grad(node, 2)) {
          auto& gb = node.inputs[2]->grad_buffer().data();
          for (Index i = 0; i < n; ++i)
            for (Index ch = 0; ch < c; ++ch) gb[ch] += g.row(i * c + ch).sum();
        }
        if (!detail::wants_grad(node, 0)) return;
        const auto& gamma_v = node.inputs[1]->value.data();
        auto& gx = node.inputs[0]->grad_buffer();
        Eigen::Array<Scalar, Eigen::Dynamic, 1> dxhat(m);
        for (Index i = 0; i < n; ++i) {
          for (Index grp = 0; grp < groups; ++grp) {
            const Index s = i * groups + grp;
            for (Index j = 0; j < cpg; ++j) {
              const Index ch = grp * cpg + j;
              dxhat.segment(j * plane, plane) = g.row(i * c + ch).transpose().array() * gamma_v[ch];
            }
            const auto h = xhat.data().segment(s * m, m).array();
            const double mean_d = dxhat.template cast<double>().sum() / static_cast<double>(m);
            const double mean_dh =
                (dxhat.template cast<double>() * h.template cast<double>()).sum() /
                static_cast<double>(m);
            gx.data().segment(s * m, m).array() +=
                rstd[static_cast<std::size_t>(s)] *
                (dxhat - static_cast<Scalar>(mean_d) - h * static_cast<Scalar>(mean_dh));
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& x) {
  const auto xa = x.value().array();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> sig = (Scalar(1) + (-xa).exp()).inverse();
  Tensor<Scalar> out(x.shape(), (xa * sig).matrix());
  return Var<Scalar>::from_op(std::move(out), {x}, [sig = std::move(sig)](Node<Scalar>& node) {
    const auto xa = node.inputs[0]->value.array();
    node.inputs[0]->grad_buffer().array() +=
        node.grad.array() * sig * (Scalar(1) + xa * (Scalar(1) - sig));
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().array().tanh().matrix());
  return Var<Scalar>::from_op(std::move(out), {x}, [](Node<Scalar>& node) {
    const auto y = node.value.array();
    node.inputs[0]->grad_buffer().array() += node.grad.array() * (Scalar(1) - y * y);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.value().data().sum());
  return Var<Scalar>::from_op(std::move(out), {x}, [](Node<Scalar>& node) {
    node.inputs[0]->grad_buffer().array() += node.grad[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const Index count = x.value().size();
  if (count == 0) throw ShapeError("mean: empty tensor");
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.value().data().sum() / static_cast<Scalar>(count));
  return Var<Scalar>::from_op(std::move(out), {x}, [count](Node<Scalar>& node) {
    node.inputs[0]->grad_buffer().array() += node.grad[0] / static_cast<Scalar>(count);
  });
}

/// mean((a - b)^2) over all elements.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const Index count = a.value().size();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> diff = a.value().array() - b.value().array();
  Tensor<Scalar> out = Tensor<Scalar>::scalar(diff.square().sum() / static_cast<Scalar>(count));
  return Var<Scalar>::from_op(std::move(out), {a, b},
                              [count, diff = std::move(diff)](Node<Scalar>& node) {
                                const Scalar s = node.grad[0] * Scalar(2) / static_cast<Scalar>(count);
                                if (detail::wants_grad(node, 0))
                                  node.inputs[0]->grad_buffer().array() += diff * s;
                                if (detail::wants_grad(node, 1))
                                  node.inputs[1]->grad_buffer().array() -= diff * s;
                              });
}

/// mean(|a - b|) over all elements.
template <typename Scalar>
Var<Scalar> mae(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mae");
  const Index count = a.value().size();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> diff = a.value().array() - b.value().array();
  Tensor<Scalar> out = Tensor<Scalar>::scalar(diff.abs().sum() / static_cast<Scalar>(count));
  return Var<Scalar>::from_op(std::move(out), {a, b},
                              [count, sign = diff.sign().eval()](Node<Scalar>& node) {
                                const Scalar s = node.grad[0] / static_cast<Scalar>(count);
                                if (detail::wants_grad(node, 0))
                                  node.inputs[0]->grad_buffer().array() += sign * s;
                                if (detail::wants_grad(node, 1))
                                  node.inputs[1]->grad_buffer().array() -= sign * s;
                              });
}

/// sum_i weights[i] * terms[i] over scalar terms, accumulated in 64-bit and
/// rounded once.
template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms but " +
                     std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) {
      throw ShapeError("weighted_sum: term " + std::to_string(i) + " has shape " +
                       to_string(terms[i].shape()));
    }
    total += weights[i] * static_cast<double>(terms[i].value().item());
  }
  std::vector<double> w(weights.begin(), weights.end());
  return Var<Scalar>::from_op(Tensor<Scalar>::scalar(static_cast<Scalar>(total)), terms,
                              [w = std::move(w)](Node<Scalar>& node) {
                                const double g = static_cast<double>(node.grad[0]);
                                for (std::size_t i = 0; i < w.size(); ++i) {
                                  if (detail::wants_grad(node, i))
                                    node.inputs[i]->grad_buffer()[0] += static_cast<Scalar>(w[i] * g);
                                }
                              });
}

/// Extracts an h x w window from each sample; sample n starts at (tops[n], lefts[n]).
template <typename Scalar>
Var<Scalar> crop(const Var<Scalar>& x, std::span<const Index> tops, std::span<const Index> lefts,
                 Index h, Index w) {
  detail::require_rank(x.shape(), 4, "crop");
  const Index n = x.shape()[0], c = x.shape()[1], ih = x.shape()[2], iw = x.shape()[3];
  if (static_cast<Index>(tops.size()) != n || static_cast<Index>(lefts.size()) != n) {
    throw ShapeError("crop: need one offset per sample for shape " + to_string(x.shape()));
  }
  std::vector<Index> t(tops.begin(), tops.end()), l(lefts.begin(), lefts.end());
  for (Index i = 0; i < n; ++i) {
    if (t[i] < 0 || l[i] < 0 || t[i] + h > ih || l[i] + w > iw) {
      throw ShapeError("crop: window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                       std::to_string(t[i]) + ", " + std::to_string(l[i]) +
                       ") exceeds input " + to_string(x.shape()));
    }
  }
  Tensor<Scalar> out({n, c, h, w});
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch)
      for (Index r = 0; r < h; ++r)
        for (Index q = 0; q < w; ++q) out.at(i, ch, r, q) = x.value().at(i, ch, t[i] + r, l[i] + q);
  return Var<Scalar>::from_op(std::move(out), {x}, [n, c, h, w, t, l](Node<Scalar>& node) {
    auto& g = node.inputs[0]->grad_buffer();
    for (Index i = 0; i < n; ++i)
      for (Index ch = 0; ch < c; ++ch)
        for (Index r = 0; r < h; ++r)
          for (Index q = 0; q < w; ++q) g.at(i, ch, t[i] + r, l[i] + q) += node.grad.at(i, ch, r, q);
  });
}

/// Identity in the forward pass, blocks all gradient flow.
template <typename Scalar>
Var<Scalar> stop_gradient(const Var<Scalar>& x) {
  return x.detach();
}

}  // namespace raindiff
