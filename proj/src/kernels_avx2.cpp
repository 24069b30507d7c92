// AVX2/FMA variants. This translation unit is compiled with -mavx2 -mfma and is
// only entered after a runtime CPU check.
#include "weaktime/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace weaktime::kernels {
namespace {

inline __m256d load2(const cplx* p) { return _mm256_loadu_pd(reinterpret_cast<const double*>(p)); }
inline void store2(cplx* p, __m256d v) { _mm256_storeu_pd(reinterpret_cast<double*>(p), v); }
inline __m256d splat(cplx z) { return _mm256_setr_pd(z.real(), z.imag(), z.real(), z.imag()); }

// (a * b) lane-pairwise
inline __m256d cmul(__m256d a, __m256d b) {
  const __m256d a_re = _mm256_movedup_pd(a);
  const __m256d a_im = _mm256_permute_pd(a, 0xF);
  const __m256d b_sw = _mm256_permute_pd(b, 0x5);
  return _mm256_fmaddsub_pd(a_re, b, _mm256_mul_pd(a_im, b_sw));
}

// conj(a) * b lane-pairwise
inline __m256d cmulc(__m256d a, __m256d b) {
  const __m256d a_re = _mm256_movedup_pd(a);
  const __m256d a_im = _mm256_permute_pd(a, 0xF);
  const __m256d b_sw = _mm256_permute_pd(b, 0x5);
  return _mm256_fmsubadd_pd(a_re, b, _mm256_mul_pd(a_im, b_sw));
}

cplx dot_avx2(const cplx* a, const cplx* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    acc0 = _mm256_add_pd(acc0, cmulc(load2(a + k), load2(b + k)));
    acc1 = _mm256_add_pd(acc1, cmulc(load2(a + k + 2), load2(b + k + 2)));
  }
  for (; k + 2 <= n; k += 2) acc0 = _mm256_add_pd(acc0, cmulc(load2(a + k), load2(b + k)));
  acc0 = _mm256_add_pd(acc0, acc1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc0);
  cplx sum(lanes[0] + lanes[2], lanes[1] + lanes[3]);
  for (; k < n; ++k) sum += std::conj(a[k]) * b[k];
  return sum;
}

void axpy_avx2(cplx alpha, const cplx* x, cplx* y, std::size_t n) {
  const __m256d va = splat(alpha);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) store2(y + k, _mm256_add_pd(load2(y + k), cmul(va, load2(x + k))));
  for (; k < n; ++k) y[k] += alpha * x[k];
}

void cayley_rhs_avx2(const cplx* g, cplx h, const cplx* x, cplx* y, std::size_t n,
                     std::size_t batch) {
  const __m256d vh = splat(h);
  if (batch == 1) {
    if (n == 1) {
      y[0] = g[0] * x[0];
      return;
    }
    y[0] = g[0] * x[0] + h * x[1];
    std::size_t j = 1;
    for (; j + 2 <= n - 1; j += 2) {
      const __m256d nb = _mm256_add_pd(load2(x + j - 1), load2(x + j + 1));
      store2(y + j, _mm256_add_pd(cmul(load2(g + j), load2(x + j)), cmul(vh, nb)));
    }
    for (; j < n - 1; ++j) y[j] = g[j] * x[j] + h * (x[j - 1] + x[j + 1]);
    y[n - 1] = g[n - 1] * x[n - 1] + h * x[n - 2];
    return;
  }
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t row = j * batch;
    const cplx* xm = j > 0 ? x + row - batch : nullptr;
    const cplx* xp = j + 1 < n ? x + row + batch : nullptr;
    std::size_t c = 0;
    for (; c + 2 <= batch; c += 2) {
      __m256d nb = _mm256_setzero_pd();
      if (xm) nb = _mm256_add_pd(nb, load2(xm + c));
      if (xp) nb = _mm256_add_pd(nb, load2(xp + c));
      store2(y + row + c,
             _mm256_add_pd(cmul(load2(g + row + c), load2(x + row + c)), cmul(vh, nb)));
    }
    for (; c < batch; ++c) {
      cplx nb = 0.0;
      if (xm) nb += xm[c];
      if (xp) nb += xp[c];
      y[row + c] = g[row + c] * x[row + c] + h * nb;
    }
  }
}

void thomas_solve_avx2(const cplx* m, const cplx* cp, cplx b, cplx* y, std::size_t n,
                       std::size_t batch) {
  const std::size_t wide = batch - batch % 2;
  const __m256d vb = splat(b);
  for (std::size_t c = 0; c < wide; c += 2) store2(y + c, cmul(load2(y + c), load2(m + c)));
  for (std::size_t c = wide; c < batch; ++c) y[c] *= m[c];
  for (std::size_t j = 1; j < n; ++j) {
    const std::size_t row = j * batch;
    const std::size_t prev = row - batch;
    for (std::size_t c = 0; c < wide; c += 2) {
      const __m256d r = _mm256_sub_pd(load2(y + row + c), cmul(vb, load2(y + prev + c)));
      store2(y + row + c, cmul(r, load2(m + row + c)));
    }
    for (std::size_t c = wide; c < batch; ++c)
      y[row + c] = (y[row + c] - b * y[prev + c]) * m[row + c];
  }
  for (std::size_t j = n - 1; j-- > 0;) {
    const std::size_t row = j * batch;
    const std::size_t next = row + batch;
    for (std::size_t c = 0; c < wide; c += 2) {
      const __m256d r = _mm256_sub_pd(load2(y + row + c), cmul(load2(cp + row + c), load2(y + next + c)));
      store2(y + row + c, r);
    }
    for (std::size_t c = wide; c < batch; ++c) y[row + c] -= cp[row + c] * y[next + c];
  }
}

void project_avx2(const cplx* chi, const cplx* x, cplx* out, std::size_t n,
                  std::size_t batch) {
  if (batch == 1) {
    out[0] = dot_avx2(chi, x, n);
    return;
  }
  const std::size_t wide = batch - batch % 2;
  for (std::size_t c = 0; c < batch; ++c) out[c] = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const cplx w = std::conj(chi[j]);
    const __m256d vw = splat(w);
    const std::size_t row = j * batch;
    for (std::size_t c = 0; c < wide; c += 2)
      store2(out + c, _mm256_add_pd(load2(out + c), cmul(vw, load2(x + row + c))));
    for (std::size_t c = wide; c < batch; ++c) out[c] += w * x[row + c];
  }
}

}  // namespace

const KernelTable* avx2_table_impl() {
  static const KernelTable table{"avx2", dot_avx2, axpy_avx2, cayley_rhs_avx2,
                                 thomas_solve_avx2, project_avx2};
  return &table;
}

}  // namespace weaktime::kernels

#else

namespace weaktime::kernels {
const KernelTable* avx2_table_impl() { return nullptr; }
}  // namespace weaktime::kernels

#endif
