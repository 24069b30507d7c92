#include "weaktime/kernels.hpp"

namespace weaktime::kernels {
namespace {

cplx dot_scalar(const cplx* a, const cplx* b, std::size_t n) {
  double re = 0.0;
  double im = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    re += a[k].real() * b[k].real() + a[k].imag() * b[k].imag();
    im += a[k].real() * b[k].imag() - a[k].imag() * b[k].real();
  }
  return {re, im};
}

void axpy_scalar(cplx alpha, const cplx* x, cplx* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += alpha * x[k];
}

void cayley_rhs_scalar(const cplx* g, cplx h, const cplx* x, cplx* y, std::size_t n,
                       std::size_t batch) {
  for (std::size_t j = 0; j < n; ++j) {
    const cplx* xm = j > 0 ? x + (j - 1) * batch : nullptr;
    const cplx* xp = j + 1 < n ? x + (j + 1) * batch : nullptr;
    const std::size_t row = j * batch;
    for (std::size_t c = 0; c < batch; ++c) {
      cplx nb = 0.0;
      if (xm) nb += xm[c];
      if (xp) nb += xp[c];
      y[row + c] = g[row + c] * x[row + c] + h * nb;
    }
  }
}

void thomas_solve_scalar(const cplx* m, const cplx* cp, cplx b, cplx* y, std::size_t n,
                         std::size_t batch) {
  for (std::size_t c = 0; c < batch; ++c) y[c] *= m[c];
  for (std::size_t j = 1; j < n; ++j) {
    const std::size_t row = j * batch;
    const std::size_t prev = row - batch;
    for (std::size_t c = 0; c < batch; ++c) y[row + c] = (y[row + c] - b * y[prev + c]) * m[row + c];
  }
  for (std::size_t j = n - 1; j-- > 0;) {
    const std::size_t row = j * batch;
    const std::size_t next = row + batch;
    for (std::size_t c = 0; c < batch; ++c) y[row + c] -= cp[row + c] * y[next + c];
  }
}

void project_scalar(const cplx* chi, const cplx* x, cplx* out, std::size_t n,
                    std::size_t batch) {
  for (std::size_t c = 0; c < batch; ++c) out[c] = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const cplx w = std::conj(chi[j]);
    const std::size_t row = j * batch;
    for (std::size_t c = 0; c < batch; ++c) out[c] += w * x[row + c];
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", dot_scalar, axpy_scalar, cayley_rhs_scalar,
                                 thomas_solve_scalar, project_scalar};
  return table;
}

}  // namespace weaktime::kernels
