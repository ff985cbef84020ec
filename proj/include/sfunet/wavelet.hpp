#pragma once

// Single-level 2D Haar analysis/synthesis. Filters are orthonormal
// (L = [1,1]/sqrt2, H = [-1,1]/sqrt2), so the transform preserves energy and
// unit Gaussian noise stays unit Gaussian in the subband domain; the inverse
// is the exact adjoint. Subband axis order is (ll, lh, hl, hh): lh carries
// horizontal-difference detail, hl vertical-difference, hh diagonal.
//
// dwt:  [B,C,H,W]       -> [B,C,4,H/2,W/2]   (stride-2 valid correlation)
// iwt:  [B,C,4,H/2,W/2] -> [B,C,H,W]         (transposed, exact inverse)
//
// Both are recorded ops: by orthonormality the gradient of dwt is iwt of the
// incoming gradient and vice versa.

#include <array>
#include <cstdint>

#include "sfunet/tensor.hpp"

namespace sfunet {

struct HaarKernels {
  // kernels[s][di][dj], s in (ll, lh, hl, hh)
  static constexpr double half = 0.5;  // (1/sqrt2)^2
  static std::array<std::array<std::array<double, 2>, 2>, 4> make() {
    // L = [1,1]/sqrt2 (rows), H = [-1,1]/sqrt2; kernel_s = col_filter * row_filter^T
    std::array<std::array<std::array<double, 2>, 2>, 4> k{};
    const double l[2] = {1.0, 1.0};
    const double h[2] = {-1.0, 1.0};
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        k[0][i][j] = half * l[i] * l[j];  // ll
        k[1][i][j] = half * l[i] * h[j];  // lh: sign varies along columns
        k[2][i][j] = half * h[i] * l[j];  // hl: sign varies along rows
        k[3][i][j] = half * h[i] * h[j];  // hh
      }
    return k;
  }
};

namespace detail {

template <typename T>
void dwt_raw(const T* x, T* u, int64_t planes, int64_t H, int64_t W) {
  const auto k = HaarKernels::make();
  const int64_t H2 = H / 2, W2 = W / 2;
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = x + p * H * W;
    T* out = u + p * 4 * H2 * W2;
    for (int64_t i = 0; i < H2; ++i) {
      for (int64_t j = 0; j < W2; ++j) {
        const T a = in[(2 * i) * W + 2 * j];
        const T b = in[(2 * i) * W + 2 * j + 1];
        const T c = in[(2 * i + 1) * W + 2 * j];
        const T d = in[(2 * i + 1) * W + 2 * j + 1];
        for (int s = 0; s < 4; ++s)
          out[s * H2 * W2 + i * W2 + j] =
              static_cast<T>(k[s][0][0]) * a + static_cast<T>(k[s][0][1]) * b +
              static_cast<T>(k[s][1][0]) * c + static_cast<T>(k[s][1][1]) * d;
      }
    }
  }
}

template <typename T>
void iwt_raw(const T* u, T* x, int64_t planes, int64_t H, int64_t W) {
  const auto k = HaarKernels::make();
  const int64_t H2 = H / 2, W2 = W / 2;
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = u + p * 4 * H2 * W2;
    T* out = x + p * H * W;
    for (int64_t i = 0; i < H2; ++i) {
      for (int64_t j = 0; j < W2; ++j) {
        T block[2][2] = {{0, 0}, {0, 0}};
        for (int s = 0; s < 4; ++s) {
          const T coef = in[s * H2 * W2 + i * W2 + j];
          block[0][0] += coef * static_cast<T>(k[s][0][0]);
          block[0][1] += coef * static_cast<T>(k[s][0][1]);
          block[1][0] += coef * static_cast<T>(k[s][1][0]);
          block[1][1] += coef * static_cast<T>(k[s][1][1]);
        }
        out[(2 * i) * W + 2 * j] = block[0][0];
        out[(2 * i) * W + 2 * j + 1] = block[0][1];
        out[(2 * i + 1) * W + 2 * j] = block[1][0];
        out[(2 * i + 1) * W + 2 * j + 1] = block[1][1];
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> dwt(const Tensor<T>& image) {
  if (image.rank() != 4) fail("dwt: expected [B,C,H,W], got " + shape_str(image.shape()));
  const int64_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (H % 2 || W % 2)
    fail("dwt: H and W must be even, got " + shape_str(image.shape()));
  Tensor<T> out = Tensor<T>::uninit({B, C, 4, H / 2, W / 2});
  detail::dwt_raw(image.data().data(), out.data().data(), B * C, H, W);
  if (detail::want_grad<T>({&image})) {
    auto px = image.impl();
    detail::record(out, {px}, [px, B, C, H, W](TensorImpl<T>& self) {
      px->ensure_grad();
      std::vector<T> g(px->data.size());
      detail::iwt_raw(self.grad.data(), g.data(), B * C, H, W);
      for (size_t i = 0; i < g.size(); ++i) px->grad[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> iwt(const Tensor<T>& stack) {
  if (stack.rank() != 5) fail("iwt: expected [B,C,4,H/2,W/2], got " + shape_str(stack.shape()));
  if (stack.dim(2) != 4)
    fail("iwt: frequency axis must have extent 4, got " + std::to_string(stack.dim(2)));
  const int64_t B = stack.dim(0), C = stack.dim(1), H = stack.dim(3) * 2, W = stack.dim(4) * 2;
  Tensor<T> out = Tensor<T>::uninit({B, C, H, W});
  detail::iwt_raw(stack.data().data(), out.data().data(), B * C, H, W);
  if (detail::want_grad<T>({&stack})) {
    auto pu = stack.impl();
    detail::record(out, {pu}, [pu, B, C, H, W](TensorImpl<T>& self) {
      pu->ensure_grad();
      std::vector<T> g(pu->data.size());
      detail::dwt_raw(self.grad.data(), g.data(), B * C, H, W);
      for (size_t i = 0; i < g.size(); ++i) pu->grad[i] += g[i];
    });
  }
  return out;
}

// concat-baseline layout: [B,C,H,W] -> [B,4C,H/2,W/2], channel-major
// frequency-minor (source channel c lands in channels 4c..4c+3)
template <typename T>
Tensor<T> dwt_concat(const Tensor<T>& image) {
  Tensor<T> u = dwt(image);
  const int64_t B = u.dim(0), C = u.dim(1);
  return reshape(u, {B, C * 4, u.dim(3), u.dim(4)});
}

template <typename T>
Tensor<T> iwt_concat(const Tensor<T>& stacked) {
  if (stacked.rank() != 4 || stacked.dim(1) % 4 != 0)
    fail("iwt_concat: expected [B,4C,H/2,W/2], got " + shape_str(stacked.shape()));
  const int64_t B = stacked.dim(0), C = stacked.dim(1) / 4;
  return iwt(reshape(stacked, {B, C, 4, stacked.dim(2), stacked.dim(3)}));
}

}  // namespace sfunet
