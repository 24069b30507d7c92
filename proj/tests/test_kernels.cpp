#include <doctest.h>

#include <random>
#include <vector>

#include "weaktime/kernels.hpp"

using weaktime::kernels::cplx;
namespace k = weaktime::kernels;

namespace {

std::vector<cplx> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<cplx> v(n);
  for (auto& x : v) x = {nd(rng), nd(rng)};
  return v;
}

double max_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar table is always available") {
  CHECK(std::string(k::scalar_table().name) == "scalar");
  CHECK(k::select("scalar"));
  CHECK(&k::active() == &k::scalar_table());
  CHECK_FALSE(k::select("nonexistent"));
  if (k::avx2_table()) CHECK(k::select("avx2"));
}

TEST_CASE("avx2 kernels match the scalar reference") {
  const k::KernelTable* v = k::avx2_table();
  if (!v) {
    MESSAGE("AVX2 variant unavailable on this machine");
    return;
  }
  const k::KernelTable& s = k::scalar_table();
  for (std::size_t n : {1u, 2u, 3u, 7u, 64u, 513u}) {
    for (std::size_t batch : {1u, 2u, 3u, 5u, 8u}) {
      CAPTURE(n);
      CAPTURE(batch);
      const auto a = random_vec(n * batch, 1 + n);
      const auto b = random_vec(n * batch, 2 + n);
      const auto g = random_vec(n * batch, 3 + n);
      // Diagonally dominant factors keep the recurrences bounded.
      auto m = random_vec(n * batch, 4 + n);
      auto cp = random_vec(n * batch, 5 + n);
      for (auto& z : m) z *= 0.3;
      for (auto& z : cp) z *= 0.3;
      const auto chi = random_vec(n, 6 + n);

      const cplx d1 = s.dot(a.data(), b.data(), n * batch);
      const cplx d2 = v->dot(a.data(), b.data(), n * batch);
      CHECK(std::abs(d1 - d2) <= 1e-12 * (1.0 + std::abs(d1)));

      auto y1 = b, y2 = b;
      s.axpy({0.3, -1.2}, a.data(), y1.data(), n * batch);
      v->axpy({0.3, -1.2}, a.data(), y2.data(), n * batch);
      CHECK(max_diff(y1, y2) <= 1e-13);

      std::vector<cplx> r1(n * batch), r2(n * batch);
      s.cayley_rhs(g.data(), {0.1, 0.7}, a.data(), r1.data(), n, batch);
      v->cayley_rhs(g.data(), {0.1, 0.7}, a.data(), r2.data(), n, batch);
      CHECK(max_diff(r1, r2) <= 1e-13);

      auto t1 = a, t2 = a;
      s.thomas_solve(m.data(), cp.data(), {0.2, -0.4}, t1.data(), n, batch);
      v->thomas_solve(m.data(), cp.data(), {0.2, -0.4}, t2.data(), n, batch);
      CHECK(max_diff(t1, t2) <= 1e-12);

      std::vector<cplx> p1(batch), p2(batch);
      s.project(chi.data(), a.data(), p1.data(), n, batch);
      v->project(chi.data(), a.data(), p2.data(), n, batch);
      CHECK(max_diff(p1, p2) <= 1e-12 * n);
    }
  }
}

TEST_CASE("thomas solve inverts a tridiagonal system") {
  // (I + b*offdiag) with diagonal a_j = 3: factorize by hand and compare to
  // multiplying back.
  const std::size_t n = 9;
  const cplx b(0.0, 0.5);
  std::vector<cplx> a(n, cplx(3.0, 0.2)), m(n), cp(n);
  cplx prev(0.0);
  for (std::size_t j = 0; j < n; ++j) {
    m[j] = 1.0 / (j == 0 ? a[j] : a[j] - b * prev);
    cp[j] = b * m[j];
    prev = cp[j];
  }
  const auto rhs = random_vec(n, 42);
  auto y = rhs;
  k::scalar_table().thomas_solve(m.data(), cp.data(), b, y.data(), n, 1);
  for (std::size_t j = 0; j < n; ++j) {
    cplx back = a[j] * y[j];
    if (j > 0) back += b * y[j - 1];
    if (j + 1 < n) back += b * y[j + 1];
    CHECK(std::abs(back - rhs[j]) < 1e-12);
  }
}

}
