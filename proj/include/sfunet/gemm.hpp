#pragma once

// Small dense GEMM kernels, row-major, register-tiled with k-blocking so hot
// tiles stay in cache. Every output cell has a fixed summation order for a
// given problem shape, so results are bitwise reproducible run to run.

#include <algorithm>
#include <cstdint>
#include <cstring>

namespace sfunet {

namespace gemm_detail {

constexpr int64_t MR = 4;    // register tile rows
constexpr int64_t NR = 64;   // register tile columns (floats)
constexpr int64_t KB = 256;  // k chunk

// c[MR rows] += A-chunk * B-chunk for one full-width register tile
template <typename T, typename AIdx>
inline void tile_mrnr(int64_t k0, int64_t kn, int64_t N, const T* __restrict b,
                      T* __restrict c, int64_t ldc, AIdx a_at) {
  T acc[MR][NR];
  for (int64_t mi = 0; mi < MR; ++mi)
    for (int64_t j = 0; j < NR; ++j) acc[mi][j] = T(0);
  for (int64_t k = k0; k < k0 + kn; ++k) {
    const T* __restrict bk = b + k * N;
    const T a0 = a_at(0, k), a1 = a_at(1, k), a2 = a_at(2, k), a3 = a_at(3, k);
    for (int64_t j = 0; j < NR; ++j) {
      const T bj = bk[j];
      acc[0][j] += a0 * bj;
      acc[1][j] += a1 * bj;
      acc[2][j] += a2 * bj;
      acc[3][j] += a3 * bj;
    }
  }
  for (int64_t mi = 0; mi < MR; ++mi) {
    T* ci = c + mi * ldc;
    for (int64_t j = 0; j < NR; ++j) ci[j] += acc[mi][j];
  }
}

template <typename T, typename AIdx>
void gemm_rowmajor_b(int64_t M, int64_t N, int64_t K, const T* __restrict b,
                     T* __restrict c, bool accumulate, AIdx a_at) {
  if (!accumulate) std::memset(c, 0, sizeof(T) * static_cast<size_t>(M * N));
  for (int64_t k0 = 0; k0 < K; k0 += KB) {
    const int64_t kn = std::min(KB, K - k0);
    for (int64_t j0 = 0; j0 < N; j0 += NR) {
      const int64_t jn = std::min(NR, N - j0);
      int64_t i = 0;
      if (jn == NR)
        for (; i + MR <= M; i += MR)
          tile_mrnr<T>(k0, kn, N, b + j0, c + i * N + j0, N,
                       [&](int64_t mi, int64_t k) { return a_at(i + mi, k); });
      for (; i < M; ++i) {  // edge rows and the column remainder, saxpy form
        T* ci = c + i * N + j0;
        for (int64_t k = k0; k < k0 + kn; ++k) {
          const T a0 = a_at(i, k);
          const T* __restrict bk = b + k * N + j0;
          for (int64_t j = 0; j < jn; ++j) ci[j] += a0 * bk[j];
        }
      }
    }
  }
}

}  // namespace gemm_detail

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* __restrict a,
             const T* __restrict b, T* __restrict c, bool accumulate) {
  gemm_detail::gemm_rowmajor_b<T>(M, N, K, b, c, accumulate,
                                  [a, K](int64_t i, int64_t k) { return a[i * K + k]; });
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename T>
void gemm_atb(int64_t M, int64_t N, int64_t K, const T* __restrict a,
              const T* __restrict b, T* __restrict c, bool accumulate) {
  gemm_detail::gemm_rowmajor_b<T>(M, N, K, b, c, accumulate,
                                  [a, M](int64_t i, int64_t k) { return a[k * M + i]; });
}

namespace gemm_detail {

constexpr int64_t kLanes = 16;

// fixed pairwise tree over the lane array, cheap and deterministic; reads
// only, so accumulators can stay in registers
template <typename T>
T reduce_lanes(const T (&a)[kLanes]) {
  const T t0 = a[0] + a[8], t1 = a[1] + a[9], t2 = a[2] + a[10], t3 = a[3] + a[11];
  const T t4 = a[4] + a[12], t5 = a[5] + a[13], t6 = a[6] + a[14], t7 = a[7] + a[15];
  const T u0 = t0 + t4, u1 = t1 + t5, u2 = t2 + t6, u3 = t3 + t7;
  return (u0 + u2) + (u1 + u3);
}

}  // namespace gemm_detail

// dot product with a fixed lane-blocked summation order; the independent
// lanes vectorize where a serial reduction cannot
template <typename T>
T dot_lanes(const T* __restrict a, const T* __restrict b, int64_t K) {
  constexpr int64_t L = gemm_detail::kLanes;
  T acc[L] = {};
  int64_t k = 0;
  for (; k + L <= K; k += L)
    for (int64_t l = 0; l < L; ++l) acc[l] += a[k + l] * b[k + l];
  T tail = 0;
  for (; k < K; ++k) tail += a[k] * b[k];
  return tail + gemm_detail::reduce_lanes(acc);
}

namespace gemm_detail {

// four dots against one shared A row in a single pass; each dot's summation
// order is identical to dot_lanes
template <typename T>
void dot_lanes_x4(const T* __restrict a, const T* __restrict b0, const T* __restrict b1,
                  const T* __restrict b2, const T* __restrict b3, int64_t K,
                  T* __restrict out) {
  constexpr int64_t L = kLanes;
  T acc0[L] = {}, acc1[L] = {}, acc2[L] = {}, acc3[L] = {};
  int64_t k = 0;
  for (; k + L <= K; k += L) {
    for (int64_t l = 0; l < L; ++l) {
      const T av = a[k + l];
      acc0[l] += av * b0[k + l];
      acc1[l] += av * b1[k + l];
      acc2[l] += av * b2[k + l];
      acc3[l] += av * b3[k + l];
    }
  }
  T t0 = 0, t1 = 0, t2 = 0, t3 = 0;
  for (; k < K; ++k) {
    const T av = a[k];
    t0 += av * b0[k];
    t1 += av * b1[k];
    t2 += av * b2[k];
    t3 += av * b3[k];
  }
  out[0] = t0 + reduce_lanes(acc0);
  out[1] = t1 + reduce_lanes(acc1);
  out[2] = t2 + reduce_lanes(acc2);
  out[3] = t3 + reduce_lanes(acc3);
}

}  // namespace gemm_detail

// C[M,N] (+)= A[M,K] * B[N,K]^T   (rows of A dot rows of B)
// panels of four B rows are streamed once against every A row
template <typename T>
void gemm_abt(int64_t M, int64_t N, int64_t K, const T* __restrict a,
              const T* __restrict b, T* __restrict c, bool accumulate) {
  const int64_t n_full = N - N % 4;
  for (int64_t j0 = 0; j0 < n_full; j0 += 4) {
    const T* b0 = b + (j0 + 0) * K;
    const T* b1 = b + (j0 + 1) * K;
    const T* b2 = b + (j0 + 2) * K;
    const T* b3 = b + (j0 + 3) * K;
    for (int64_t i = 0; i < M; ++i) {
      T s[4];
      gemm_detail::dot_lanes_x4(a + i * K, b0, b1, b2, b3, K, s);
      T* ci = c + i * N + j0;
      if (accumulate) {
        ci[0] += s[0]; ci[1] += s[1]; ci[2] += s[2]; ci[3] += s[3];
      } else {
        ci[0] = s[0]; ci[1] = s[1]; ci[2] = s[2]; ci[3] = s[3];
      }
    }
  }
  for (int64_t j = n_full; j < N; ++j) {
    const T* bj = b + j * K;
    for (int64_t i = 0; i < M; ++i) {
      const T s = dot_lanes(a + i * K, bj, K);
      if (accumulate) c[i * N + j] += s; else c[i * N + j] = s;
    }
  }
}

}  // namespace sfunet
