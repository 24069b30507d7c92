#pragma once
// Inner-loop arithmetic on complex double arrays.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2/FMA
// variant. The variant is chosen once at startup from the CPU feature flags; the
// environment variable WEAKTIME_KERNELS=scalar forces the reference path.
//
// Batched arrays use an interleaved layout: element j of channel c lives at
// index j * batch + c, so consecutive channels share one SIMD register.

#include <complex>
#include <cstddef>
#include <string_view>

namespace weaktime::kernels {

using cplx = std::complex<double>;

struct KernelTable {
  const char* name;

  // sum_k conj(a_k) * b_k
  cplx (*dot)(const cplx* a, const cplx* b, std::size_t n);

  // y += alpha * x
  void (*axpy)(cplx alpha, const cplx* x, cplx* y, std::size_t n);

  // Explicit half of a Cayley step for a tridiagonal generator with constant
  // off-diagonal: y_j = g_j x_j + h (x_{j-1} + x_{j+1}), Dirichlet ends.
  void (*cayley_rhs)(const cplx* g, cplx h, const cplx* x, cplx* y, std::size_t n,
                     std::size_t batch);

  // In-place solve with a factorized tridiagonal matrix whose sub/super
  // diagonal is the constant b. m holds inverse pivots, cp the modified
  // super-diagonal (both interleaved per channel).
  void (*thomas_solve)(const cplx* m, const cplx* cp, cplx b, cplx* y, std::size_t n,
                       std::size_t batch);

  // out_c = sum_j conj(chi_j) * x[j * batch + c]
  void (*project)(const cplx* chi, const cplx* x, cplx* out, std::size_t n,
                  std::size_t batch);
};

const KernelTable& scalar_table();

// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

// The table selected for this process.
const KernelTable& active();

// Select a table by name ("scalar" or "avx2"); returns false if unavailable.
bool select(std::string_view name);

}  // namespace weaktime::kernels
