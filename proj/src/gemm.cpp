#include "gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#pragma GCC diagnostic ignored "-Wpsabi"

namespace sembg::detail {

namespace {

// Column tile so that four output rows stay in L1.
constexpr std::size_t kTileN = 256;

using v8 = float __attribute__((vector_size(32)));

inline v8 load8(const float* p) {
  v8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(float* p, v8 v) { std::memcpy(p, &v, sizeof v); }

inline float hsum(v8 v) {
  return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
}

// Accumulators for a 4x16 block of C live in registers across the k loop;
// each element still receives its products in increasing p order.
void kernel_4x16(std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                 std::size_t ldc) {
  v8 c00 = load8(c), c01 = load8(c + 8);
  v8 c10 = load8(c + ldc), c11 = load8(c + ldc + 8);
  v8 c20 = load8(c + 2 * ldc), c21 = load8(c + 2 * ldc + 8);
  v8 c30 = load8(c + 3 * ldc), c31 = load8(c + 3 * ldc + 8);
  for (std::size_t p = 0; p < k; ++p) {
    const v8 b0 = load8(b + p * ldb);
    const v8 b1 = load8(b + p * ldb + 8);
    const float a0 = a[p], a1 = a[lda + p], a2 = a[2 * lda + p], a3 = a[3 * lda + p];
    c00 += a0 * b0;
    c01 += a0 * b1;
    c10 += a1 * b0;
    c11 += a1 * b1;
    c20 += a2 * b0;
    c21 += a2 * b1;
    c30 += a3 * b0;
    c31 += a3 * b1;
  }
  store8(c, c00);
  store8(c + 8, c01);
  store8(c + ldc, c10);
  store8(c + ldc + 8, c11);
  store8(c + 2 * ldc, c20);
  store8(c + 2 * ldc + 8, c21);
  store8(c + 3 * ldc, c30);
  store8(c + 3 * ldc + 8, c31);
}

void gemm_nn_tile(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                  const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  std::size_t i = 0;
  const std::size_t n16 = n - n % 16;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < n16; j += 16) kernel_4x16(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    if (n16 == n) continue;
    float* __restrict c0 = c + (i + 0) * ldc;
    float* __restrict c1 = c + (i + 1) * ldc;
    float* __restrict c2 = c + (i + 2) * ldc;
    float* __restrict c3 = c + (i + 3) * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const float a0 = a[(i + 0) * lda + p];
      const float a1 = a[(i + 1) * lda + p];
      const float a2 = a[(i + 2) * lda + p];
      const float a3 = a[(i + 3) * lda + p];
      const float* __restrict brow = b + p * ldb;
      for (std::size_t j = n16; j < n; ++j) {
        const float bv = brow[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    float* __restrict crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * lda + p];
      const float* __restrict brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose(std::size_t rows, std::size_t cols, const float* src, std::size_t ld, std::vector<float>& dst) {
  dst.resize(rows * cols);
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * ld + c];
      }
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  for (std::size_t j0 = 0; j0 < n; j0 += kTileN) {
    gemm_nn_tile(m, std::min(kTileN, n - j0), k, a, lda, b + j0, ldb, c + j0, ldc);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  // Dot products along k with 8-lane partial sums reduced in a fixed order.
  const std::size_t k8 = k - k % 8;
  std::size_t i = 0;
  for (; i < m; i += 2) {
    const bool pair = i + 1 < m;
    const float* a0 = a + i * lda;
    const float* a1 = pair ? a0 + lda : a0;
    for (std::size_t j = 0; j < n; j += 2) {
      const bool jpair = j + 1 < n;
      const float* b0 = b + j * ldb;
      const float* b1 = jpair ? b0 + ldb : b0;
      v8 s00{}, s01{}, s10{}, s11{};
      for (std::size_t p = 0; p < k8; p += 8) {
        const v8 x0 = load8(a0 + p), x1 = load8(a1 + p);
        const v8 y0 = load8(b0 + p), y1 = load8(b1 + p);
        s00 += x0 * y0;
        s01 += x0 * y1;
        s10 += x1 * y0;
        s11 += x1 * y1;
      }
      float r00 = hsum(s00), r01 = hsum(s01), r10 = hsum(s10), r11 = hsum(s11);
      for (std::size_t p = k8; p < k; ++p) {
        r00 += a0[p] * b0[p];
        r01 += a0[p] * b1[p];
        r10 += a1[p] * b0[p];
        r11 += a1[p] * b1[p];
      }
      c[i * ldc + j] += r00;
      if (jpair) c[i * ldc + j + 1] += r01;
      if (pair) {
        c[(i + 1) * ldc + j] += r10;
        if (jpair) c[(i + 1) * ldc + j + 1] += r11;
      }
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  thread_local std::vector<float> at;
  transpose(k, m, a, lda, at);
  gemm_nn(m, n, k, at.data(), k, b, ldb, c, ldc);
}

}  // namespace sembg::detail
