#include <doctest.h>

#include <cmath>
#include <random>

#include "oracle.hpp"
#include "weaktime/error.hpp"
#include "weaktime/sojourn.hpp"

using namespace weaktime;

namespace {

struct Small {
  Grid grid;
  Setup setup;
  oracle::Problem ref;
  Region region;
  QuantumState psi0;
};

Small make_small(PropagationMethod m, double v0 = 3.0) {
  Grid g(32, -4.0, 4.0);
  std::vector<double> v(32, 0.0);
  for (int j = 0; j < 32; ++j)
    if (0.0 <= g.x(j) && g.x(j) < 0.8) v[j] = v0;
  Setup s{Propagator{m, 0.01, system_hamiltonian(g, v)}, Window{0.0, 0.5}, 0};
  oracle::Problem p{32, -4.0, g.dx(), v, 0.0, 0.5, 0.01, m == PropagationMethod::dense_exponential};
  return {g, s, p, Region(0.0, 0.8), gaussian_packet(g, -1.0, 0.9, 1.5)};
}

oracle::Vec to_vec(const QuantumState& s) {
  return oracle::Vec(s.amplitudes().data(), s.amplitudes().data() + s.size());
}

double max_diff(const Matrix& a, const oracle::Mat& b) {
  double d = 0.0;
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < b.n; ++j) d = std::max(d, std::abs(a(i, j) - b(i, j)));
  return d;
}

QuantumState half_line(const QuantumState& psi_f, const Grid& g, bool right) {
  Vector a = psi_f.amplitudes();
  for (int j = 0; j < g.size(); ++j)
    if ((g.x(j) >= 0.8) != right) a(j) = 0.0;
  return QuantumState(psi_f.space(), a, psi_f.time()).normalized();
}

}  // namespace

TEST_SUITE("sojourn") {

TEST_CASE("sojourn operator matches the slice-sum oracle") {
  for (auto m : {PropagationMethod::implicit_step, PropagationMethod::dense_exponential}) {
    CAPTURE(to_string(m));
    const Small s = make_small(m);
    const SojournOperator t = sojourn_matrix(s.region, s.setup);
    const oracle::Mat tr = s.ref.integrated(s.ref.indicator(0.0, 0.8));
    CHECK(max_diff(t.matrix.entries(), tr) < 1e-10);

    const oracle::Vec pf = s.ref.evolve(to_vec(s.psi0));
    const QuantumState psi_f = at_final(s.psi0, s.setup);
    double d = 0.0;
    for (int j = 0; j < 32; ++j) d = std::max(d, std::abs(psi_f.amplitudes()(j) - pf[j]));
    CHECK(d < 1e-10);

    const double dx = s.grid.dx();
    CHECK(std::abs(dwell_time(t, s.psi0) - oracle::moment(tr, pf, pf, 1, dx).real()) < 1e-8);
    CHECK(std::abs(dwell_time(s.psi0, s.region, s.setup) - oracle::moment(tr, pf, pf, 1, dx).real()) < 1e-8);
    for (bool right : {true, false}) {
      const QuantumState chi = half_line(psi_f, s.grid, right);
      for (int l = 1; l <= 3; ++l) {
        const cplx want = oracle::moment(tr, pf, to_vec(chi), l, dx);
        CHECK(std::abs(moment_complex(s.psi0, chi, t, l) - want) < 1e-8 * std::max(1.0, std::abs(want)));
      }
      const cplx w = conditional_dwell_time(t, s.psi0, chi).value;
      CHECK(std::abs(w - oracle::moment(tr, pf, to_vec(chi), 1, dx)) < 1e-8);
    }
  }
}

TEST_CASE("integrated operators agree across routes") {
  const Small s = make_small(PropagationMethod::implicit_step);
  const OperatorMatrix x = position_operator(s.grid);
  const IntegratedOperator ia = integrate_heisenberg(x, s.setup);
  const oracle::Mat xr = s.ref.integrated([&] {
    std::vector<double> d(32);
    for (int j = 0; j < 32; ++j) d[j] = s.grid.x(j);
    return d;
  }());
  CHECK(max_diff(ia.matrix.entries() * s.setup.length(), xr) < 1e-10);

  const QuantumState psi_f = at_final(s.psi0, s.setup);
  const Vector mf = integrated_apply(x, s.setup, psi_f.amplitudes());
  CHECK((mf - ia.matrix.entries() * psi_f.amplitudes()).cwiseAbs().maxCoeff() < 1e-10);
  const cplx avg = schrodinger_average(x, s.setup, s.psi0);
  CHECK(std::abs(avg - weak_value(ia, s.psi0).value) < 1e-10);
  CHECK(std::abs(weak_value(ia, s.psi0).value.imag()) < 1e-12);
}

TEST_CASE("second-moment routes against the oracle") {
  const Small s = make_small(PropagationMethod::implicit_step);
  const SojournOperator t = sojourn_matrix(s.region, s.setup);
  const oracle::Mat tr = s.ref.integrated(s.ref.indicator(0.0, 0.8));
  const oracle::Vec pf = s.ref.evolve(to_vec(s.psi0));
  const double dx = s.grid.dx();
  const oracle::Vec tp = oracle::apply(tr, pf);
  double integral = 0.0;
  for (int j = 0; j < 32; ++j) integral += std::norm(tp[j]) * dx;
  CHECK(std::abs(second_moment_position_integral(s.psi0, s.region, s.setup) - integral) < 1e-8);

  // lambda route: same central difference, oracle exponential
  const double h = 1e-3;
  const oracle::Vec up = oracle::expi(tr, pf, h), dn = oracle::expi(tr, pf, -h);
  double lam = 0.0;
  for (int j = 0; j < 32; ++j) {
    if (std::abs(pf[j]) < 1e-8) continue;
    const cplx d2 = -(up[j] - 2.0 * pf[j] + dn[j]) / (h * h);
    lam += (d2 / pf[j]).real() * std::norm(pf[j]) * dx;
  }
  CHECK(std::abs(lambda_moment2(t, s.psi0, h) - lam) < 1e-8);

  for (int cell : {12, 16, 20}) {
    const CellSecondMoment c = second_moment_position_postselected(s.psi0, cell, t);
    const oracle::Mat t2 = oracle::power(tr, 2);
    const cplx re = oracle::apply(t2, pf)[cell] / pf[cell];
    CHECK(std::abs(c.real_part_form - re.real()) < 1e-8);
    CHECK(std::abs(c.sandwich_form - std::norm(tp[cell]) / std::norm(pf[cell])) < 1e-8);
    CHECK(std::abs(c.weight - std::norm(pf[cell]) * dx) < 1e-12);
  }
}

TEST_CASE("sojourn operator is Hermitian with spectrum in [0, T]") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-3.5, 3.5);
  const Small s = make_small(PropagationMethod::implicit_step);
  for (int trial = 0; trial < 6; ++trial) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    b += 0.3;
    const SojournOperator t = sojourn_matrix(Region(a, b), s.setup);
    const Matrix& m = t.matrix.entries();
    CHECK((m - m.adjoint()).cwiseAbs().maxCoeff() < 1e-14);
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
    CHECK(es.eigenvalues().maxCoeff() < t.length() + 1e-12);
  }
}

TEST_CASE("whole box gives the window length, regions add") {
  const Small s = make_small(PropagationMethod::implicit_step);
  const SojournOperator all = sojourn_matrix(Region::whole(s.grid), s.setup);
  CHECK((all.matrix.entries() - 0.5 * Matrix::Identity(32, 32)).cwiseAbs().maxCoeff() < 1e-12);
  const SojournOperator left = sojourn_matrix(Region(-4.0, 0.3), s.setup);
  const SojournOperator right = sojourn_matrix(Region(0.3, 4.1), s.setup);
  CHECK((left.matrix.entries() + right.matrix.entries() - all.matrix.entries()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(dwell_time(all, s.psi0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("conditional sum rule over a complete family") {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> cut(2, 29);
  const Small s = make_small(PropagationMethod::implicit_step);
  const SojournOperator t = sojourn_matrix(s.region, s.setup);
  const QuantumState psi_f = at_final(s.psi0, s.setup);
  for (int trial = 0; trial < 5; ++trial) {
    // three contiguous pieces of psi_f
    int c1 = cut(rng), c2 = cut(rng);
    if (c1 > c2) std::swap(c1, c2);
    if (c1 == c2) ++c2;
    for (int l = 1; l <= 2; ++l) {
      cplx sum = 0.0;
      for (auto [lo, hi] : {std::pair{0, c1}, std::pair{c1, c2}, std::pair{c2, 32}}) {
        Vector a = Vector::Zero(32);
        a.segment(lo, hi - lo) = psi_f.amplitudes().segment(lo, hi - lo);
        const QuantumState chi = QuantumState(psi_f.space(), a, psi_f.time()).normalized();
        sum += std::norm(inner_product(chi, psi_f)) * moment_complex(s.psi0, chi, t, l);
      }
      CHECK(std::abs(sum - moment(s.psi0, psi_f, t, l)) < 1e-10);
    }
  }
}

TEST_CASE("degenerate postselection is rejected") {
  const Small s = make_small(PropagationMethod::implicit_step);
  const SojournOperator t = sojourn_matrix(s.region, s.setup);
  const QuantumState psi_f = at_final(s.psi0, s.setup);
  // orthogonal to psi_f, supported on two cells
  Vector z = Vector::Zero(32);
  z(12) = std::conj(psi_f.amplitudes()(13));
  z(13) = -std::conj(psi_f.amplitudes()(12));
  const QuantumState chi(psi_f.space(), z, psi_f.time());
  CHECK(std::abs(inner_product(chi, psi_f)) < 1e-14);
  CHECK_THROWS_AS(conditional_dwell_time(t, s.psi0, chi), DegeneratePostselectionError);
}

}
