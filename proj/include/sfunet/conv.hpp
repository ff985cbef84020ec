#pragma once

// Cross-correlation (deep-learning convention, no kernel flip) over 5D
// [B,C,F,H,W] tensors with zero padding, via im2col + GEMM. Patch matrices
// live in thread_local scratch that is fully overwritten on each use and
// rebuilt in backward instead of being kept alive on the graph. Pointwise
// (1x1x1) convs bypass im2col entirely.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "sfunet/tensor.hpp"

namespace sfunet {

struct Conv3 {
  int64_t f = 1, h = 1, w = 1;
};

namespace detail {

struct ConvDims {
  int64_t B, Ci, F, H, W;
  int64_t Co, kf, kh, kw;
  int64_t sf, sh, sw, pf, ph, pw;
  int64_t Fo, Ho, Wo;
  int64_t K() const { return Ci * kf * kh * kw; }
  int64_t N() const { return Fo * Ho * Wo; }
  bool pointwise() const {
    return kf == 1 && kh == 1 && kw == 1 && sf == 1 && sh == 1 && sw == 1 && pf == 0 &&
           ph == 0 && pw == 0;
  }
};

// one sample's patches as a row-major [K, N] matrix
template <typename T>
void im2col(const ConvDims& d, const T* x, T* col) {
  for (int64_t ci = 0; ci < d.Ci; ++ci) {
    for (int64_t df = 0; df < d.kf; ++df) {
      for (int64_t dh = 0; dh < d.kh; ++dh) {
        for (int64_t dw = 0; dw < d.kw; ++dw) {
          T* row = col + (((ci * d.kf + df) * d.kh + dh) * d.kw + dw) * d.N();
          for (int64_t fo = 0; fo < d.Fo; ++fo) {
            const int64_t f = fo * d.sf + df - d.pf;
            const bool f_ok = f >= 0 && f < d.F;
            for (int64_t ho = 0; ho < d.Ho; ++ho) {
              const int64_t h = ho * d.sh + dh - d.ph;
              const bool h_ok = h >= 0 && h < d.H;
              T* dst = row + (fo * d.Ho + ho) * d.Wo;
              if (!f_ok || !h_ok) {
                for (int64_t wo = 0; wo < d.Wo; ++wo) dst[wo] = T(0);
                continue;
              }
              const T* src = x + ((ci * d.F + f) * d.H + h) * d.W;
              // valid wo range: 0 <= wo*sw + dw - pw < W
              const int64_t off = dw - d.pw;
              int64_t wo_lo = off < 0 ? (-off + d.sw - 1) / d.sw : 0;
              int64_t wo_hi = (d.W - off + d.sw - 1) / d.sw;  // exclusive
              wo_lo = std::min(wo_lo, d.Wo);
              wo_hi = std::max(wo_lo, std::min(wo_hi, d.Wo));
              for (int64_t wo = 0; wo < wo_lo; ++wo) dst[wo] = T(0);
              if (d.sw == 1) {
                const T* s = src + wo_lo + off;
                for (int64_t wo = wo_lo; wo < wo_hi; ++wo) dst[wo] = s[wo - wo_lo];
              } else {
                for (int64_t wo = wo_lo; wo < wo_hi; ++wo) dst[wo] = src[wo * d.sw + off];
              }
              for (int64_t wo = wo_hi; wo < d.Wo; ++wo) dst[wo] = T(0);
            }
          }
        }
      }
    }
  }
}

// blocked transpose, src[R,C] -> dst[C,R]
template <typename T>
void transpose_block(const T* __restrict src, T* __restrict dst, int64_t R, int64_t C) {
  constexpr int64_t BLK = 32;
  for (int64_t r0 = 0; r0 < R; r0 += BLK) {
    const int64_t rn = std::min(r0 + BLK, R);
    for (int64_t c0 = 0; c0 < C; c0 += BLK) {
      const int64_t cn = std::min(c0 + BLK, C);
      for (int64_t r = r0; r < rn; ++r)
        for (int64_t c = c0; c < cn; ++c) dst[c * R + r] = src[r * C + c];
    }
  }
}

template <typename T>
void col2im_add(const ConvDims& d, const T* col, T* dx) {
  for (int64_t ci = 0; ci < d.Ci; ++ci) {
    for (int64_t df = 0; df < d.kf; ++df) {
      for (int64_t dh = 0; dh < d.kh; ++dh) {
        for (int64_t dw = 0; dw < d.kw; ++dw) {
          const T* row = col + (((ci * d.kf + df) * d.kh + dh) * d.kw + dw) * d.N();
          for (int64_t fo = 0; fo < d.Fo; ++fo) {
            const int64_t f = fo * d.sf + df - d.pf;
            if (f < 0 || f >= d.F) continue;
            for (int64_t ho = 0; ho < d.Ho; ++ho) {
              const int64_t h = ho * d.sh + dh - d.ph;
              if (h < 0 || h >= d.H) continue;
              const T* src = row + (fo * d.Ho + ho) * d.Wo;
              T* dst = dx + ((ci * d.F + f) * d.H + h) * d.W;
              for (int64_t wo = 0; wo < d.Wo; ++wo) {
                const int64_t w = wo * d.sw + dw - d.pw;
                if (w >= 0 && w < d.W) dst[w] += src[wo];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& conv_scratch(int which, size_t size) {
  thread_local std::vector<T> bufs[2];
  if (bufs[which].size() < size) bufs[which].resize(size);
  return bufs[which];
}

}  // namespace detail

template <typename T>
Tensor<T> conv5d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 Conv3 stride = {1, 1, 1}, Conv3 pad = {0, 0, 0}) {
  if (x.rank() != 5 || w.rank() != 5)
    fail("conv5d: expected x[B,C,F,H,W] and w[Co,Ci,kf,kh,kw], got " +
         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  detail::ConvDims d;
  d.B = x.dim(0); d.Ci = x.dim(1); d.F = x.dim(2); d.H = x.dim(3); d.W = x.dim(4);
  d.Co = w.dim(0); d.kf = w.dim(2); d.kh = w.dim(3); d.kw = w.dim(4);
  d.sf = stride.f; d.sh = stride.h; d.sw = stride.w;
  d.pf = pad.f; d.ph = pad.h; d.pw = pad.w;
  if (w.dim(1) != d.Ci)
    fail("conv5d: input channels " + std::to_string(d.Ci) + " != weight channels " +
         std::to_string(w.dim(1)));
  if (b.numel() != d.Co) fail("conv5d: bias size mismatch");
  d.Fo = (d.F + 2 * d.pf - d.kf) / d.sf + 1;
  d.Ho = (d.H + 2 * d.ph - d.kh) / d.sh + 1;
  d.Wo = (d.W + 2 * d.pw - d.kw) / d.sw + 1;
  if (d.Fo < 1 || d.Ho < 1 || d.Wo < 1)
    fail("conv5d: kernel " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));

  Tensor<T> out = Tensor<T>::uninit({d.B, d.Co, d.Fo, d.Ho, d.Wo});
  const int64_t in_stride = d.Ci * d.F * d.H * d.W;
  {
    const bool pw = d.pointwise();
    auto& col = detail::conv_scratch<T>(0, pw ? 1 : static_cast<size_t>(d.K() * d.N()));
    for (int64_t n = 0; n < d.B; ++n) {
      const T* xn = x.data().data() + n * in_stride;
      const T* mat = xn;
      if (!pw) {
        detail::im2col(d, xn, col.data());
        mat = col.data();
      }
      T* y = out.data().data() + n * d.Co * d.N();
      gemm_nn(d.Co, d.N(), d.K(), w.data().data(), mat, y, false);
      for (int64_t co = 0; co < d.Co; ++co) {
        const T bias = b.data()[static_cast<size_t>(co)];
        T* yo = y + co * d.N();
        for (int64_t i = 0; i < d.N(); ++i) yo[i] += bias;
      }
    }
  }
  if (detail::want_grad<T>({&x, &w, &b})) {
    auto px = x.impl(), pw_ = w.impl(), pb = b.impl();
    detail::record(out, {px, pw_, pb}, [px, pw_, pb, d, in_stride](TensorImpl<T>& self) {
      const bool pw = d.pointwise();
      if (pw_->requires_grad) pw_->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      if (px->requires_grad) px->ensure_grad();
      auto& col = detail::conv_scratch<T>(0, pw ? 1 : static_cast<size_t>(d.K() * d.N()));
      auto& dcol = detail::conv_scratch<T>(1, pw ? 1 : static_cast<size_t>(d.K() * d.N()));
      for (int64_t n = 0; n < d.B; ++n) {
        const T* dy = self.grad.data() + n * d.Co * d.N();
        const T* xn = px->data.data() + n * in_stride;
        if (pb->requires_grad) {
          for (int64_t co = 0; co < d.Co; ++co) {
            const T* g = dy + co * d.N();
            T s = 0;
            for (int64_t i = 0; i < d.N(); ++i) s += g[i];
            pb->grad[static_cast<size_t>(co)] += s;
          }
        }
        if (pw_->requires_grad) {
          if (pw) {
            gemm_abt(d.Co, d.K(), d.N(), dy, xn, pw_->grad.data(), true);
          } else {
            // dW = dY * col^T through the fast row-major kernel
            detail::im2col(d, xn, col.data());
            detail::transpose_block(col.data(), dcol.data(), d.K(), d.N());
            gemm_nn(d.Co, d.K(), d.N(), dy, dcol.data(), pw_->grad.data(), true);
          }
        }
        if (px->requires_grad) {
          if (pw) {
            gemm_atb(d.K(), d.N(), d.Co, pw_->data.data(), dy,
                     px->grad.data() + n * in_stride, true);
          } else {
            gemm_atb(d.K(), d.N(), d.Co, pw_->data.data(), dy, dcol.data(), false);
            detail::col2im_add(d, dcol.data(), px->grad.data() + n * in_stride);
          }
        }
      }
    });
  }
  return out;
}

// x[B,C,H,W], w[Co,Ci,kh,kw]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int64_t stride = 1, int64_t pad = 0) {
  if (x.rank() != 4 || w.rank() != 4)
    fail("conv2d: expected x[B,C,H,W] and w[Co,Ci,kh,kw]");
  Tensor<T> x5 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)});
  Tensor<T> w5 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)});
  Tensor<T> y = conv5d(x5, w5, b, {1, stride, stride}, {0, pad, pad});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3), y.dim(4)});
}

// x[B,C,L], w[Co,Ci,k]
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int64_t stride = 1, int64_t pad = 0) {
  if (x.rank() != 3 || w.rank() != 3)
    fail("conv1d: expected x[B,C,L] and w[Co,Ci,k]");
  Tensor<T> x5 = reshape(x, {x.dim(0), x.dim(1), x.dim(2), 1, 1});
  Tensor<T> w5 = reshape(w, {w.dim(0), w.dim(1), w.dim(2), 1, 1});
  Tensor<T> y = conv5d(x5, w5, b, {stride, 1, 1}, {pad, 0, 0});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(2)});
}

// x[B,C,D,H,W], w[Co,Ci,kd,kh,kw]
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 Conv3 stride = {1, 1, 1}, Conv3 pad = {0, 0, 0}) {
  return conv5d(x, w, b, stride, pad);
}

}  // namespace sfunet
