#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "graspdet/tensor.hpp"

namespace graspdet {

namespace testing {
// Fault-injection hook for the gradcheck harness: flips the sign of the
// weight gradient in conv2d's backward pass.
inline bool conv_backward_sign_flip = false;
}  // namespace testing

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
void require_4d(const Tensor<S>& t, const char* op, const char* name) {
  if (t.shape().ndim() != 4)
    throw ShapeError(std::string(op) + ": " + name + " must be 4-D NCHW, got shape " +
                     t.shape().str());
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
}

// Unpacks kernel patches of one sample into a (C*k*k) x (Ho*Wo) row-major
// matrix; row index is c*k*k + ky*k + kx, matching the OIkk weight layout.
template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            S* col) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* row = col + ((c * k + ky) * k + kx) * (Ho * Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * Wo, row + (oy + 1) * Wo, S(0));
            continue;
          }
          const S* src = x + (c * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds column gradients back onto the image.
template <typename S>
void col2im(const S* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            S* x) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* row = col + ((c * k + ky) * k + kx) * (Ho * Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          S* dst = x + (c * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution over NCHW input with an OIkk kernel (square, odd k).
// Output spatial dims: floor((H + 2*pad - k)/stride) + 1.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride = 1,
                 int padding = 0) {
  detail::require_4d(x, "conv2d", "input");
  detail::require_4d(w, "conv2d", "weight");
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int O = w.shape()[0], I = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  if (kh != kw) throw ShapeError("conv2d: kernel must be square, got " + w.shape().str());
  const int k = kh;
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got k=" + std::to_string(k));
  if (I != C)
    throw ShapeError("conv2d: weight in-channels (I=" + std::to_string(I) +
                     ") do not match input channels (C=" + std::to_string(C) + ")");
  if (b.shape().ndim() != 1 || b.shape()[0] != O)
    throw ShapeError("conv2d: bias must have shape " + std::to_string(O) + ", got " +
                     b.shape().str());
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  const int Ho = (H + 2 * padding - k) / stride + 1;
  const int Wo = (W + 2 * padding - k) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d: kernel k=" + std::to_string(k) + " does not fit input " +
                     x.shape().str() + " with padding " + std::to_string(padding));

  const int K = C * k * k;
  const int P = Ho * Wo;
  auto out = Tensor<S>::zeros(Shape{N, O, Ho, Wo});

  using Mat = detail::MatRM<S>;
  Eigen::Map<const Mat> wmat(w.value().data(), O, K);
  std::vector<S> col(static_cast<std::size_t>(K) * P);
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.value().data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k,
                   stride, padding, Ho, Wo, col.data());
    Eigen::Map<const Mat> cmat(col.data(), K, P);
    Eigen::Map<Mat> omat(out.value().data() + static_cast<std::size_t>(n) * O * P, O, P);
    omat.noalias() = wmat * cmat;
    omat.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(b.value().data(), O);
  }

  detail::record<S>(out, {x, w, b}, [x, w, b, stride, padding, N, C, H, W, O, k, Ho, Wo,
                                     K, P](detail::TensorImpl<S>& o) mutable {
    using Mat = detail::MatRM<S>;
    Eigen::Map<const Mat> wmat(w.value().data(), O, K);
    const bool need_dx = x.requires_grad();
    const bool need_dw = w.requires_grad();
    const bool need_db = b.requires_grad();
    Mat dw = Mat::Zero(O, K);
    Eigen::Matrix<S, Eigen::Dynamic, 1> db = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(O);
    ArrayX<S> dx;
    if (need_dx) dx = ArrayX<S>::Zero(x.size());
    std::vector<S> col(static_cast<std::size_t>(K) * P);
    std::vector<S> colg(need_dx ? static_cast<std::size_t>(K) * P : 0);
    for (int n = 0; n < N; ++n) {
      Eigen::Map<const Mat> go(o.grad.data() + static_cast<std::size_t>(n) * O * P, O, P);
      if (need_dw) {
        detail::im2col(x.value().data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k,
                       stride, padding, Ho, Wo, col.data());
        Eigen::Map<const Mat> cmat(col.data(), K, P);
        dw.noalias() += go * cmat.transpose();
      }
      if (need_db) db += go.rowwise().sum();
      if (need_dx) {
        Eigen::Map<Mat> cg(colg.data(), K, P);
        cg.noalias() = wmat.transpose() * go;
        detail::col2im(colg.data(), C, H, W, k, stride, padding, Ho, Wo,
                       dx.data() + static_cast<std::size_t>(n) * C * H * W);
      }
    }
    if (need_dw) {
      if (testing::conv_backward_sign_flip) dw = -dw;
      detail::accumulate(*w.impl(), ArrayX<S>(Eigen::Map<ArrayX<S>>(dw.data(), dw.size())));
    }
    if (need_db) detail::accumulate(*b.impl(), ArrayX<S>(db.array()));
    if (need_dx) detail::accumulate(*x.impl(), dx);
  });
  return out;
}

// Group normalization over (channels/groups, H, W) slices with per-channel
// affine parameters; biased variance, matching the usual formulation.
template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, int groups, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  detail::require_4d(x, "group_norm", "input");
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (groups < 1 || C % groups != 0)
    throw ShapeError("group_norm: channels C=" + std::to_string(C) +
                     " not divisible by groups=" + std::to_string(groups));
  if (gamma.shape().ndim() != 1 || gamma.shape()[0] != C || beta.shape().ndim() != 1 ||
      beta.shape()[0] != C)
    throw ShapeError("group_norm: gamma/beta must have shape " + std::to_string(C));
  if (!(eps > S(0))) throw ShapeError("group_norm: eps must be > 0");

  const int cpg = C / groups;
  const long long M = static_cast<long long>(cpg) * H * W;
  auto out = Tensor<S>::zeros(x.shape());
  // mean and 1/sqrt(var+eps) per (n, group), reused by the backward pass
  auto stats = std::make_shared<std::vector<std::pair<S, S>>>(static_cast<std::size_t>(N) * groups);

  const S* xv = x.value().data();
  S* yv = out.value().data();
  const S* gv = gamma.value().data();
  const S* bv = beta.value().data();
  for (int n = 0; n < N; ++n) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + g * cpg) * H * W;
      Eigen::Map<const ArrayX<S>> seg(xv + off, M);
      const S mean = seg.mean();
      const S var = (seg - mean).square().mean();
      const S inv = S(1) / std::sqrt(var + eps);
      (*stats)[static_cast<std::size_t>(n) * groups + g] = {mean, inv};
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = g * cpg + cc;
        const std::size_t coff = (static_cast<std::size_t>(n) * C + c) * H * W;
        Eigen::Map<const ArrayX<S>> xs(xv + coff, H * W);
        Eigen::Map<ArrayX<S>> ys(yv + coff, H * W);
        ys = (xs - mean) * inv * gv[c] + bv[c];
      }
    }
  }

  detail::record<S>(out, {x, gamma, beta},
                    [x, gamma, beta, stats, N, C, H, W, groups, cpg, M](detail::TensorImpl<S>& o) {
    const S* xv = x.value().data();
    const S* gv = gamma.value().data();
    const S* dy = o.grad.data();
    const bool need_dx = x.requires_grad();
    ArrayX<S> dx;
    if (need_dx) dx = ArrayX<S>::Zero(x.size());
    ArrayX<S> dgamma = ArrayX<S>::Zero(C);
    ArrayX<S> dbeta = ArrayX<S>::Zero(C);
    const S invM = S(1) / static_cast<S>(M);
    ArrayX<S> xhat(M), dxh(M);
    for (int n = 0; n < N; ++n) {
      for (int g = 0; g < groups; ++g) {
        const auto [mean, inv] = (*stats)[static_cast<std::size_t>(n) * groups + g];
        const std::size_t off = (static_cast<std::size_t>(n) * C + g * cpg) * H * W;
        Eigen::Map<const ArrayX<S>> xs(xv + off, M);
        Eigen::Map<const ArrayX<S>> gys(dy + off, M);
        xhat = (xs - mean) * inv;
        // dxhat = dy * gamma[c], channel blocks of length H*W
        for (int cc = 0; cc < cpg; ++cc)
          dxh.segment(cc * H * W, H * W) = gys.segment(cc * H * W, H * W) * gv[g * cpg + cc];
        for (int cc = 0; cc < cpg; ++cc) {
          const int c = g * cpg + cc;
          dgamma[c] += (gys.segment(cc * H * W, H * W) * xhat.segment(cc * H * W, H * W)).sum();
          dbeta[c] += gys.segment(cc * H * W, H * W).sum();
        }
        if (need_dx) {
          const S sum_dxh = dxh.sum();
          const S sum_dxh_xhat = (dxh * xhat).sum();
          Eigen::Map<ArrayX<S>> dxs(dx.data() + off, M);
          dxs = inv * (dxh - sum_dxh * invM - xhat * (sum_dxh_xhat * invM));
        }
      }
    }
    if (need_dx) detail::accumulate(*x.impl(), dx);
    detail::accumulate(*gamma.impl(), dgamma);
    detail::accumulate(*beta.impl(), dbeta);
  });
  return out;
}

// Elementwise max(x, 0); the subgradient at exactly 0 is 0.
template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  auto out = Tensor<S>::from_array(x.shape(), x.value().max(S(0)));
  detail::record<S>(out, {x}, [x](detail::TensorImpl<S>& o) {
    detail::accumulate(*x.impl(),
                       ArrayX<S>(o.grad * (x.value() > S(0)).template cast<S>()));
  });
  return out;
}

// Logistic sigmoid.
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  auto out = Tensor<S>::from_array(x.shape(), ArrayX<S>(S(1) / (S(1) + (-x.value()).exp())));
  detail::record<S>(out, {x}, [x](detail::TensorImpl<S>& o) {
    detail::accumulate(*x.impl(), ArrayX<S>(o.grad * o.value * (S(1) - o.value)));
  });
  return out;
}

namespace detail {

// Source index/weight table for one axis of align-corners-false bilinear
// interpolation: output sample i reads from cell-center position
// (i + 0.5)/factor - 0.5, clamped at the borders.
template <typename S>
struct UpsampleAxis {
  std::vector<int> i0, i1;
  std::vector<S> w1;  // weight of i1; i0 gets 1-w1
};

template <typename S>
UpsampleAxis<S> upsample_axis(int in, int factor) {
  UpsampleAxis<S> a;
  const int out = in * factor;
  a.i0.resize(out);
  a.i1.resize(out);
  a.w1.resize(out);
  for (int i = 0; i < out; ++i) {
    const double src = (i + 0.5) / factor - 0.5;
    const int lo = static_cast<int>(std::floor(src));
    const double w = src - lo;
    a.i0[i] = std::clamp(lo, 0, in - 1);
    a.i1[i] = std::clamp(lo + 1, 0, in - 1);
    a.w1[i] = static_cast<S>(w);
  }
  return a;
}

}  // namespace detail

// Bilinear upsampling by an integer factor >= 2, cell-center convention.
template <typename S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, int factor) {
  detail::require_4d(x, "bilinear_upsample", "input");
  if (factor < 2)
    throw ShapeError("bilinear_upsample: factor must be >= 2, got " + std::to_string(factor));
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int Ho = H * factor, Wo = W * factor;
  auto ay = std::make_shared<detail::UpsampleAxis<S>>(detail::upsample_axis<S>(H, factor));
  auto ax = std::make_shared<detail::UpsampleAxis<S>>(detail::upsample_axis<S>(W, factor));

  auto out = Tensor<S>::zeros(Shape{N, C, Ho, Wo});
  const S* xv = x.value().data();
  S* yv = out.value().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const S* in = xv + static_cast<std::size_t>(nc) * H * W;
    S* dst = yv + static_cast<std::size_t>(nc) * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy) {
      const int y0 = ay->i0[oy], y1 = ay->i1[oy];
      const S wy = ay->w1[oy];
      for (int ox = 0; ox < Wo; ++ox) {
        const int x0 = ax->i0[ox], x1 = ax->i1[ox];
        const S wx = ax->w1[ox];
        dst[oy * Wo + ox] = (S(1) - wy) * ((S(1) - wx) * in[y0 * W + x0] + wx * in[y0 * W + x1]) +
                            wy * ((S(1) - wx) * in[y1 * W + x0] + wx * in[y1 * W + x1]);
      }
    }
  }

  detail::record<S>(out, {x}, [x, ay, ax, N, C, H, W, Ho, Wo](detail::TensorImpl<S>& o) {
    ArrayX<S> dx = ArrayX<S>::Zero(x.size());
    const S* gy = o.grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      S* dst = dx.data() + static_cast<std::size_t>(nc) * H * W;
      const S* g = gy + static_cast<std::size_t>(nc) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        const int y0 = ay->i0[oy], y1 = ay->i1[oy];
        const S wy = ay->w1[oy];
        for (int ox = 0; ox < Wo; ++ox) {
          const int x0 = ax->i0[ox], x1 = ax->i1[ox];
          const S wx = ax->w1[ox];
          const S u = g[oy * Wo + ox];
          dst[y0 * W + x0] += (S(1) - wy) * (S(1) - wx) * u;
          dst[y0 * W + x1] += (S(1) - wy) * wx * u;
          dst[y1 * W + x0] += wy * (S(1) - wx) * u;
          dst[y1 * W + x1] += wy * wx * u;
        }
      }
    }
    detail::accumulate(*x.impl(), dx);
  });
  return out;
}

// Max pooling without padding; gradient routes to the first maximum in scan
// order within each window.
template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, int window, int stride) {
  detail::require_4d(x, "max_pool2d", "input");
  if (window < 1 || stride < 1) throw ShapeError("max_pool2d: window and stride must be >= 1");
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (window > H || window > W)
    throw ShapeError("max_pool2d: window " + std::to_string(window) +
                     " larger than spatial dims of " + x.shape().str());
  const int Ho = (H - window) / stride + 1;
  const int Wo = (W - window) / stride + 1;

  auto out = Tensor<S>::zeros(Shape{N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(N) * C * Ho * Wo);
  const S* xv = x.value().data();
  S* yv = out.value().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const S* in = xv + static_cast<std::size_t>(nc) * H * W;
    S* dst = yv + static_cast<std::size_t>(nc) * Ho * Wo;
    int* am = argmax->data() + static_cast<std::size_t>(nc) * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        int best = -1;
        S bv = S(0);
        for (int ky = 0; ky < window; ++ky) {
          const int iy = oy * stride + ky;
          for (int kx = 0; kx < window; ++kx) {
            const int ix = ox * stride + kx;
            const S v = in[iy * W + ix];
            if (best < 0 || v > bv) {
              best = iy * W + ix;
              bv = v;
            }
          }
        }
        dst[oy * Wo + ox] = bv;
        am[oy * Wo + ox] = best;
      }
    }
  }

  detail::record<S>(out, {x}, [x, argmax, N, C, H, W, Ho, Wo](detail::TensorImpl<S>& o) {
    ArrayX<S> dx = ArrayX<S>::Zero(x.size());
    const S* g = o.grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      const int* am = argmax->data() + static_cast<std::size_t>(nc) * Ho * Wo;
      S* dst = dx.data() + static_cast<std::size_t>(nc) * H * W;
      for (int p = 0; p < Ho * Wo; ++p) dst[am[p]] += g[static_cast<std::size_t>(nc) * Ho * Wo + p];
    }
    detail::accumulate(*x.impl(), dx);
  });
  return out;
}

// Channel concatenation of two NCHW tensors.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_4d(a, "concat_channels", "lhs");
  detail::require_4d(b, "concat_channels", "rhs");
  const int N = a.shape()[0], Ca = a.shape()[1], H = a.shape()[2], W = a.shape()[3];
  const int Cb = b.shape()[1];
  if (b.shape()[0] != N || b.shape()[2] != H || b.shape()[3] != W)
    throw ShapeError("concat_channels: incompatible shapes " + a.shape().str() + " vs " +
                     b.shape().str());
  auto out = Tensor<S>::zeros(Shape{N, Ca + Cb, H, W});
  const long long plane = static_cast<long long>(H) * W;
  for (int n = 0; n < N; ++n) {
    out.value().segment(n * (Ca + Cb) * plane, Ca * plane) = a.value().segment(n * Ca * plane, Ca * plane);
    out.value().segment(n * (Ca + Cb) * plane + Ca * plane, Cb * plane) =
        b.value().segment(n * Cb * plane, Cb * plane);
  }
  detail::record<S>(out, {a, b}, [a, b, N, Ca, Cb, plane](detail::TensorImpl<S>& o) {
    if (a.requires_grad()) {
      ArrayX<S> da = ArrayX<S>::Zero(a.size());
      for (int n = 0; n < N; ++n)
        da.segment(n * Ca * plane, Ca * plane) = o.grad.segment(n * (Ca + Cb) * plane, Ca * plane);
      detail::accumulate(*a.impl(), da);
    }
    if (b.requires_grad()) {
      ArrayX<S> db = ArrayX<S>::Zero(b.size());
      for (int n = 0; n < N; ++n)
        db.segment(n * Cb * plane, Cb * plane) =
            o.grad.segment(n * (Ca + Cb) * plane + Ca * plane, Cb * plane);
      detail::accumulate(*b.impl(), db);
    }
  });
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = Tensor<S>::from_array(a.shape(), ArrayX<S>(a.value() + b.value()));
  detail::record<S>(out, {a, b}, [a, b](detail::TensorImpl<S>& o) {
    detail::accumulate(*a.impl(), o.grad);
    detail::accumulate(*b.impl(), o.grad);
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = Tensor<S>::from_array(a.shape(), ArrayX<S>(a.value() - b.value()));
  detail::record<S>(out, {a, b}, [a, b](detail::TensorImpl<S>& o) {
    detail::accumulate(*a.impl(), o.grad);
    detail::accumulate(*b.impl(), ArrayX<S>(-o.grad));
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = Tensor<S>::from_array(a.shape(), ArrayX<S>(a.value() * b.value()));
  detail::record<S>(out, {a, b}, [a, b](detail::TensorImpl<S>& o) {
    detail::accumulate(*a.impl(), ArrayX<S>(o.grad * b.value()));
    detail::accumulate(*b.impl(), ArrayX<S>(o.grad * a.value()));
  });
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  auto out = Tensor<S>::from_array(x.shape(), ArrayX<S>(x.value() * c));
  detail::record<S>(out, {x}, [x, c](detail::TensorImpl<S>& o) {
    detail::accumulate(*x.impl(), ArrayX<S>(o.grad * c));
  });
  return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return scale(x, S(-1));
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  auto out = Tensor<S>::from_array(x.shape(), ArrayX<S>(x.value().exp()));
  detail::record<S>(out, {x}, [x](detail::TensorImpl<S>& o) {
    detail::accumulate(*x.impl(), ArrayX<S>(o.grad * o.value));
  });
  return out;
}

// Full reduction to a scalar tensor.
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  auto out = Tensor<S>::scalar(x.value().sum());
  detail::record<S>(out, {x}, [x](detail::TensorImpl<S>& o) {
    detail::accumulate(*x.impl(), ArrayX<S>(ArrayX<S>::Constant(x.size(), o.grad[0])));
  });
  return out;
}

// sum(w * |pred - target|); the L1 subgradient at 0 is 0.
template <typename S>
Tensor<S> weighted_l1(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& w) {
  detail::require_same_shape(pred, target, "weighted_l1");
  detail::require_same_shape(pred, w, "weighted_l1");
  ArrayX<S> diff = pred.value() - target.value();
  auto out = Tensor<S>::scalar((w.value() * diff.abs()).sum());
  detail::record<S>(out, {pred, target, w}, [pred, target, w](detail::TensorImpl<S>& o) {
    ArrayX<S> signed_w = (pred.value() - target.value()).sign() * w.value() * o.grad[0];
    detail::accumulate(*pred.impl(), signed_w);
    detail::accumulate(*target.impl(), ArrayX<S>(-signed_w));
  });
  return out;
}

// sum(w * (pred - target)^2).
template <typename S>
Tensor<S> weighted_sq_sum(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& w) {
  detail::require_same_shape(pred, target, "weighted_sq_sum");
  detail::require_same_shape(pred, w, "weighted_sq_sum");
  ArrayX<S> diff = pred.value() - target.value();
  auto out = Tensor<S>::scalar((w.value() * diff.square()).sum());
  detail::record<S>(out, {pred, target, w}, [pred, target, w](detail::TensorImpl<S>& o) {
    ArrayX<S> g = S(2) * (pred.value() - target.value()) * w.value() * o.grad[0];
    detail::accumulate(*pred.impl(), g);
    detail::accumulate(*target.impl(), ArrayX<S>(-g));
  });
  return out;
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}
template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& x) {
  return scale(x, c);
}

// Stacks C equally sized planes into a 1xCxHxW tensor.
template <typename S>
Tensor<S> tensor_from_planes(const std::vector<const Plane<S>*>& chans) {
  if (chans.empty()) throw ShapeError("tensor_from_planes: no channels");
  const int H = static_cast<int>(chans[0]->rows());
  const int W = static_cast<int>(chans[0]->cols());
  const int C = static_cast<int>(chans.size());
  ArrayX<S> data(static_cast<long long>(C) * H * W);
  for (int c = 0; c < C; ++c) {
    if (chans[c]->rows() != H || chans[c]->cols() != W)
      throw ShapeError("tensor_from_planes: plane " + std::to_string(c) + " has mismatched size");
    data.segment(static_cast<long long>(c) * H * W, static_cast<long long>(H) * W) =
        Eigen::Map<const ArrayX<S>>(chans[c]->data(), static_cast<long long>(H) * W);
  }
  return Tensor<S>::from_array(Shape{1, C, H, W}, std::move(data));
}

// Extracts channel c of sample n as an H x W plane.
template <typename S>
Plane<S> plane_from_tensor(const Tensor<S>& t, int n, int c) {
  detail::require_4d(t, "plane_from_tensor", "input");
  const int C = t.shape()[1], H = t.shape()[2], W = t.shape()[3];
  Plane<S> p(H, W);
  Eigen::Map<ArrayX<S>>(p.data(), static_cast<long long>(H) * W) =
      t.value().segment((static_cast<long long>(n) * C + c) * H * W, static_cast<long long>(H) * W);
  return p;
}

}  // namespace graspdet
