#include <doctest.h>

#include <cmath>

#include "weaktime/dynamics.hpp"
#include "weaktime/error.hpp"

using namespace weaktime;

namespace {

double max_abs(const Vector& v) { return v.cwiseAbs().maxCoeff(); }

Hamiltonian barrier(const Grid& g, double v0, double lo, double hi) {
  std::vector<double> v(g.size(), 0.0);
  for (int j : Region(lo, hi).indices(g)) v[j] = v0;
  return system_hamiltonian(g, v);
}

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("coupling profiles integrate to one") {
  const auto r = CouplingProfile::rectangular(0.5, 2.5);
  CHECK(r(0.4) == 0.0);
  CHECK(r(1.0) == doctest::Approx(0.5));
  CHECK(std::abs(r.integral(0.0, 3.0, 1e-3) - 1.0) < 1e-12);
  const auto imp = CouplingProfile::impulsive(2.0, 1e-2);
  CHECK(imp.is_impulsive());
  CHECK(std::abs(imp.integral(0.0, 3.0, 1e-2) - 1.0) < 1e-12);
  CHECK_THROWS_AS(CouplingProfile::rectangular(1.0, 1.0), ParameterError);
}

TEST_CASE("step count") {
  CHECK(step_count(0.0, 1.0, 0.25) == 4);
  CHECK(step_count(1.0, 0.0, 0.25) == 4);
  CHECK_THROWS_AS(step_count(0.0, 1.0, 0.3), ParameterError);
}

TEST_CASE("assemble") {
  Grid g(12, 0.0, 1.0);
  const auto k = kinetic_operator(g).entries();
  Hamiltonian h = system_hamiltonian(g);
  CHECK((assemble(h, 0.0).entries() - k).cwiseAbs().maxCoeff() == 0.0);
  CHECK(assemble(h, 0.0).hermitian());

  h = barrier(g, 3.5, 0.3, 0.6);
  const Matrix d = assemble(h, 0.0).entries() - k;
  const auto ind = Region(0.3, 0.6).indicator(g);
  for (int j = 0; j < g.size(); ++j) CHECK(d(j, j) == cplx(3.5 * ind[j]));
  CHECK(d.cwiseAbs().sum() == doctest::Approx(3.5 * 3));

  h.potential_imag.assign(g.size(), -0.1);
  CHECK_FALSE(assemble(h, 0.0).hermitian());

  // Larmor over the whole box splits every kinetic eigenvalue by +-omega/2.
  Hamiltonian hl = system_hamiltonian(g);
  hl.space = {FactorSpace::position(g), FactorSpace::spin2()};
  hl.larmor = LarmorTerm{0.8, Region::whole(g), Window{0.0, 1.0}};
  const auto es = eigendecompose(kinetic_operator(g));
  const auto ev = eigendecompose(assemble(hl, 0.5));
  for (int i = 0; i < g.size(); ++i) {
    CHECK(ev.values[2 * i] == doctest::Approx(es.values[i] - 0.4).epsilon(1e-10));
    CHECK(ev.values[2 * i + 1] == doctest::Approx(es.values[i] + 0.4).epsilon(1e-10));
  }
  // Outside the window the Larmor term is off.
  CHECK((assemble(hl, 1.5).entries() - tensor_extend(kinetic_operator(g), hl.space).entries())
            .cwiseAbs()
            .maxCoeff() == 0.0);
  Hamiltonian bad = system_hamiltonian(g, std::vector<double>(5, 0.0));
  CHECK_THROWS_AS(assemble(bad, 0.0), StructuralError);
}

TEST_CASE("zero Hamiltonian leaves the state unchanged") {
  Hamiltonian h;
  h.space = {FactorSpace::spin2()};
  h.kinetic = false;
  const auto s = spin_state(0.6, cplx(0.0, 0.8));
  for (auto m : {PropagationMethod::dense_exponential, PropagationMethod::implicit_step}) {
    const auto out = evolve(s, Propagator{m, 0.1, h}, 0.0, 1.0);
    CHECK(max_abs(out.amplitudes() - s.amplitudes()) == 0.0);
  }
}

TEST_CASE("hermitian runs conserve norm and reverse exactly") {
  Grid g(128, -20.0, 20.0);
  const auto h = barrier(g, 2.0, 0.0, 1.0);
  const auto psi = gaussian_packet(g, -6.0, 2.0, 1.0);
  Propagator p{PropagationMethod::implicit_step, 1e-3, h};
  Evolution ev(p);
  CHECK(ev.structured());
  QuantumState s = psi;
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double before = s.norm();
    s = ev.advance(s, k * 1e-3, (k + 1) * 1e-3);
    worst = std::max(worst, std::abs(s.norm() - before));
  }
  CHECK(worst < 1e-10);
  CHECK(std::abs(s.norm() - 1.0) < 1e-8);
  const auto back = ev.advance(s, 1.0, 0.0);
  CHECK(max_abs(back.amplitudes() - psi.amplitudes()) < 1e-8);

  Propagator pd{PropagationMethod::dense_exponential, 1e-2, h};
  const Matrix u = propagator_matrix(pd, 0.0, 0.1);
  CHECK((u.adjoint() * u - Matrix::Identity(128, 128)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("implicit stepper agrees with the dense oracle") {
  Grid g(96, -15.0, 15.0);
  const auto h = barrier(g, 1.5, 0.0, 1.2);
  const auto psi = gaussian_packet(g, -5.0, 1.8, 1.1);
  const auto a = evolve(psi, {PropagationMethod::implicit_step, 2e-4, h}, 0.0, 1.0);
  const auto b = evolve(psi, {PropagationMethod::dense_exponential, 2e-4, h}, 0.0, 1.0);
  CHECK(max_abs(a.amplitudes() - b.amplitudes()) < 1e-6);
}

TEST_CASE("second-order dt convergence") {
  Grid g(64, -10.0, 10.0);
  const auto h = barrier(g, 1.5, 0.0, 1.0);
  const auto psi = gaussian_packet(g, -3.0, 1.5, 1.0);
  const auto ref = evolve(psi, {PropagationMethod::dense_exponential, 0.5, h}, 0.0, 0.5);
  const auto e1 = max_abs(evolve(psi, {PropagationMethod::implicit_step, 0.01, h}, 0.0, 0.5).amplitudes() -
                          ref.amplitudes());
  const auto e2 = max_abs(evolve(psi, {PropagationMethod::implicit_step, 0.005, h}, 0.0, 0.5).amplitudes() -
                          ref.amplitudes());
  const double ratio = e1 / e2;
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("uniform absorber decays the norm exponentially and monotonically") {
  Grid g(80, -10.0, 10.0);
  const double gamma = 0.3;
  const auto h = system_hamiltonian(g, {}, std::vector<double>(g.size(), -gamma / 2));
  const auto psi = gaussian_packet(g, 0.0, 1.5, 0.5);
  for (auto m : {PropagationMethod::implicit_step, PropagationMethod::dense_exponential}) {
    Evolution ev({m, 1e-2, h});
    QuantumState s = psi;
    double prev = 1.0;
    bool monotone = true;
    for (int k = 0; k < 200; ++k) {
      s = ev.advance(s, k * 1e-2, (k + 1) * 1e-2);
      const double n2 = inner_product(s, s).real();
      monotone = monotone && n2 <= prev;
      prev = n2;
    }
    CHECK(monotone);
    CHECK(prev == doctest::Approx(std::exp(-gamma * 2.0)).epsilon(1e-3));
  }
}

TEST_CASE("free evolution: stationary phase and Ehrenfest drift") {
  Grid g(48, 0.0, 1.0);
  const auto h = system_hamiltonian(g);
  const auto es = eigendecompose(kinetic_operator(g));
  const auto out = evolve_free(es.vectors[2], {PropagationMethod::dense_exponential, 1e-3, h}, 0.0, 0.05);
  const cplx phase = std::polar(1.0, -es.values[2] * 0.05);
  CHECK(max_abs(out.amplitudes() - phase * es.vectors[2].amplitudes()) < 1e-10);

  Grid w(400, -30.0, 30.0);
  const auto psi = gaussian_packet(w, -5.0, 2.0, 1.0);
  const auto hw = system_hamiltonian(w);
  const auto later = evolve_free(psi, {PropagationMethod::implicit_step, 1e-3, hw}, 0.0, 2.0);
  const auto x = position_operator(w);
  const double x1 = inner_product(later, x.apply(later)).real();
  // Group velocity of the lattice dispersion 4 sin^2(k dx/2)/dx^2 is 2 sin(k dx)/dx.
  const double v = 2.0 * std::sin(w.dx()) / w.dx();
  CHECK(x1 - (-5.0) == doctest::Approx(v * 2.0).epsilon(0.01));
}

TEST_CASE("structured and dense paths agree with spin and pointer factors") {
  Grid g(24, -6.0, 6.0);
  Grid q(8, -2.0, 2.0);
  Hamiltonian h = barrier(g, 2.0, 0.0, 1.0);
  h.space = {FactorSpace::position(g), FactorSpace::spin2(), FactorSpace::pointer(q)};
  h.larmor = LarmorTerm{0.7, Region(-1.0, 1.0), Window{0.1, 0.3}};
  h.region_terms.push_back({cplx(0.4, -0.2), Region(0.0, 2.0), Window{0.0, 0.2}});
  InteractionTerm in;
  in.coupling = 0.3;
  in.profile = CouplingProfile::rectangular(0.05, 0.35);
  const Space sys{FactorSpace::position(g), FactorSpace::spin2()};
  Vector a(sys.empty() ? 0 : dimension(sys));
  for (int k = 0; k < a.size(); ++k) a(k) = 0.1 * (k % 5) - 0.2;
  in.system_operator = OperatorMatrix::diagonal(sys, a, true);
  h.interaction = in;

  const auto psi = tensor_product(tensor_product(gaussian_packet(g, -1.0, 1.6, 1.0), spin_state(0.6, 0.8)),
                                  pointer_gaussian(q, 0.4));
  Evolution fast({PropagationMethod::implicit_step, 0.01, h});
  CHECK(fast.structured());
  const auto a1 = fast.advance(psi, 0.0, 0.4);
  // Spin-dependent A forces the per-spin interaction profiles; compare with dense Cayley.
  Hamiltonian hd = h;
  hd.interaction->schedule = [op = *in.system_operator](double) { return op; };
  Evolution slow({PropagationMethod::implicit_step, 0.01, hd});
  CHECK_FALSE(slow.structured());
  const auto a2 = slow.advance(psi, 0.0, 0.4);
  CHECK(max_abs(a1.amplitudes() - a2.amplitudes()) < 1e-12);
}

TEST_CASE("heisenberg conjugation") {
  Grid g(20, 0.0, 1.0);
  const auto h = barrier(g, 40.0, 0.3, 0.6);
  Propagator p{PropagationMethod::dense_exponential, 1e-3, h};
  const auto proj = projector(Region(0.0, 0.5), g);
  const auto same = heisenberg_conjugate(proj, p, 0.2, 0.2);
  CHECK((same.entries() - proj.entries()).cwiseAbs().maxCoeff() < 1e-14);
  const auto id = OperatorMatrix::identity(h.space);
  CHECK((heisenberg_conjugate(id, p, 0.2, 0.0).entries() - id.entries()).cwiseAbs().maxCoeff() < 1e-10);
  const auto h0 = assemble(h, 0.0);
  const auto h2 = OperatorMatrix(h.space, h0.entries() * h0.entries(), true);
  const auto c = heisenberg_conjugate(h2, p, 0.05, 0.0);
  CHECK((c.entries() - h2.entries()).cwiseAbs().maxCoeff() < 1e-8 * h2.entries().cwiseAbs().maxCoeff());
  const auto moved = heisenberg_conjugate(proj, p, 0.05, 0.0);
  CHECK(moved.hermitian());
}

}
