#include "weaktime/sojourn.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "weaktime/error.hpp"

namespace weaktime {

int Setup::slices() const {
  const long steps = step_count(window.t_i, window.t_f, propagator.dt);
  if (n_slices == 0) return static_cast<int>(steps);
  if (n_slices < 2) throw ParameterError("quadrature needs at least 2 slices");
  if (steps % n_slices != 0) {
    std::ostringstream os;
    os << n_slices << " slices do not align with " << steps << " propagator steps";
    throw ParameterError(os.str());
  }
  return n_slices;
}

long Setup::steps_per_slice() const {
  return step_count(window.t_i, window.t_f, propagator.dt) / slices();
}

QuantumState at_final(const QuantumState& state, const Setup& setup) {
  if (state.time() == setup.window.t_f) return state;
  Propagator p = setup.propagator;
  p.hamiltonian = p.hamiltonian.free_part();
  return evolve(state, p, state.time(), setup.window.t_f);
}

namespace {

// Nodes of the trapezoid rule for a profile inside the window.
struct Nodes {
  double start;
  double end;
  long n;          // number of slices between start and end (0 = impulsive)
  long remaining;  // slices from end to t_f
  double slice;
};

Nodes nodes_for(const Setup& setup, const CouplingProfile& profile) {
  const Window& w = setup.window;
  if (profile.start() < w.t_i - 1e-12 || profile.end() > w.t_f + 1e-12)
    throw ParameterError("coupling profile extends beyond the window");
  const double slice = setup.length() / setup.slices();
  Nodes nd{profile.start(), profile.end(), 0, 0, slice};
  nd.remaining = step_count(profile.end(), w.t_f, slice);
  if (!profile.is_impulsive()) nd.n = step_count(profile.start(), profile.end(), slice);
  if (!profile.is_impulsive() && nd.n < 1) throw ParameterError("profile shorter than a slice");
  return nd;
}

// Phase accumulated by an energy eigenstate over one slice.
double slice_phase(double e, const Setup& s) {
  const double dt = s.propagator.dt;
  const double per_step = s.propagator.method == PropagationMethod::dense_exponential
                              ? e * dt
                              : 2.0 * std::atan(0.5 * e * dt);
  return per_step * static_cast<double>(s.steps_per_slice());
}

double wrap(double d) {
  d = std::remainder(d, 2.0 * std::numbers::pi);
  return d;
}

// sum_{m=0}^{n} w_m exp(-i d m) with trapezoid weights w = 1, except 1/2 at both ends.
cplx trapezoid_phase_sum(double d, long n) {
  d = wrap(d);
  if (std::abs(d) < 1e-12) return static_cast<double>(n);
  const double half = 0.5 * d;
  return std::sin(n * half) / std::tan(half) * std::polar(1.0, -n * half);
}

Matrix free_hamiltonian(const Setup& s) {
  const Hamiltonian h0 = s.propagator.hamiltonian.free_part();
  if (!h0.hermitian()) throw ContractError("Heisenberg integration needs a Hermitian H0");
  return assemble(h0, s.window.t_i).entries();
}

struct Spectral {
  Matrix v;
  std::vector<double> e;
};

Spectral diagonalize(const Matrix& h) {
  Spectral sp;
  if (h.imag().cwiseAbs().maxCoeff() == 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h.real());
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed on H0");
    sp.v = es.eigenvectors().cast<cplx>();
    sp.e.assign(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(h);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed on H0");
    sp.v = es.eigenvectors();
    sp.e.assign(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  }
  return sp;
}

void check_space(const QuantumState& s, const Space& space, const char* what) {
  if (s.space() != space)
    throw StructuralError(std::string(what) + " lives on " + describe(s.space()) + ", expected " +
                          describe(space));
}

// Applies a, using only its diagonal when possible.
struct Applier {
  explicit Applier(const OperatorMatrix& a) : m(a.entries()), diag(a.is_diagonal()) {
    if (diag) d = m.diagonal();
  }
  Vector operator()(const Vector& x) const {
    if (diag) return d.cwiseProduct(x);
    return m * x;
  }
  const Matrix& m;
  bool diag;
  Vector d;
};

cplx ratio(const QuantumState& chi, const Vector& num, const QuantumState& psi, double floor) {
  const double m = measure(psi.space());
  const cplx den = chi.amplitudes().dot(psi.amplitudes()) * m;
  const double scale = chi.norm() * psi.norm();
  if (!(std::abs(den) > floor * scale)) {
    std::ostringstream os;
    os << "postselection overlap " << std::abs(den) << " below floor " << floor * scale;
    throw DegeneratePostselectionError(os.str());
  }
  return chi.amplitudes().dot(num) * m / den;
}

}  // namespace

IntegratedOperator integrate_heisenberg(const OperatorMatrix& a, const Setup& setup,
                                        std::optional<CouplingProfile> profile) {
  const CouplingProfile prof =
      profile.value_or(CouplingProfile::rectangular(setup.window.t_i, setup.window.t_f));
  if (a.space() != setup.propagator.hamiltonian.space)
    throw StructuralError("operator space does not match the Hamiltonian");
  const Nodes nd = nodes_for(setup, prof);
  const Spectral sp = diagonalize(free_hamiltonian(setup));
  const int dim = static_cast<int>(sp.e.size());
  std::vector<double> theta(dim);
  for (int i = 0; i < dim; ++i) theta[i] = slice_phase(sp.e[i], setup);

  Matrix at = sp.v.adjoint() * a.entries() * sp.v;
  for (int b = 0; b < dim; ++b)
    for (int r = 0; r < dim; ++r) {
      const double d = theta[r] - theta[b];
      const cplx lead = std::polar(1.0, -wrap(d) * static_cast<double>(nd.remaining));
      const cplx s = nd.n == 0 ? lead : lead * trapezoid_phase_sum(d, nd.n) / static_cast<double>(nd.n);
      at(r, b) *= s;
    }
  Matrix m = sp.v * at * sp.v.adjoint();
  const bool herm = a.hermitian();
  if (herm) m = (0.5 * (m + m.adjoint())).eval();
  return {a, setup, prof, OperatorMatrix(a.space(), std::move(m), herm)};
}

Vector integrated_apply(const OperatorMatrix& a, const Setup& setup, const Vector& psi_final) {
  const Window& w = setup.window;
  const int n = setup.slices();
  const double slice = setup.length() / n;
  Propagator p = setup.propagator;
  p.hamiltonian = p.hamiltonian.free_part();
  Evolution ev(p);
  const Applier apply(a);
  Vector v = psi_final;
  ev.advance(v, w.t_f, w.t_i);
  Vector acc = 0.5 * slice * apply(v);
  for (int k = 1; k <= n; ++k) {
    const double t0 = w.t_i + (k - 1) * slice;
    const double t1 = w.t_i + k * slice;
    ev.advance(v, t0, t1);
    ev.advance(acc, t0, t1);
    acc += (k == n ? 0.5 : 1.0) * slice * apply(v);
  }
  return acc / setup.length();
}

cplx schrodinger_average(const OperatorMatrix& a, const Setup& setup, const QuantumState& psi0) {
  const Window& w = setup.window;
  const int n = setup.slices();
  const double slice = setup.length() / n;
  Propagator p = setup.propagator;
  p.hamiltonian = p.hamiltonian.free_part();
  Evolution ev(p);
  const Applier apply(a);
  check_space(psi0, p.hamiltonian.space, "state");
  Vector v = psi0.amplitudes();
  ev.advance(v, psi0.time(), w.t_i);
  const double m = measure(psi0.space());
  const double nrm = v.squaredNorm() * m;
  cplx sum = 0.5 * v.dot(apply(v));
  for (int k = 1; k <= n; ++k) {
    ev.advance(v, w.t_i + (k - 1) * slice, w.t_i + k * slice);
    sum += (k == n ? 0.5 : 1.0) * v.dot(apply(v));
  }
  return sum * m * slice / setup.length() / nrm;
}

WeakValueResult weak_value(const IntegratedOperator& a, const QuantumState& psi0) {
  const QuantumState psi = at_final(psi0, a.setup);
  check_space(psi, a.matrix.space(), "state");
  const cplx v = inner_product(psi, a.matrix.apply(psi)) / inner_product(psi, psi).real();
  return {v, "I_H(A)", "", a.setup.window, false, false};
}

WeakValueResult conditional_weak_value(const IntegratedOperator& a, const QuantumState& psi0,
                                       const QuantumState& chi, double floor,
                                       const std::string& label) {
  const QuantumState psi = at_final(psi0, a.setup);
  check_space(psi, a.matrix.space(), "state");
  check_space(chi, a.matrix.space(), "postselection state");
  const cplx v = ratio(chi, a.matrix.entries() * psi.amplitudes(), psi, floor);
  const double bound = a.base.entries().cwiseAbs().rowwise().sum().maxCoeff();
  return {v, "I_H(A)", label, a.setup.window, std::abs(v) > kAnomalyFactor * bound, v.real() < 0.0};
}

SojournOperator sojourn_matrix(const Region& region, const Setup& setup) {
  const Space& space = setup.propagator.hamiltonian.space;
  const int ip = find_factor(space, FactorKind::position);
  if (ip < 0) throw StructuralError("sojourn operator needs a position factor");
  const OperatorMatrix p = tensor_extend(projector(region, space[ip].grid()), space);
  IntegratedOperator ih = integrate_heisenberg(p, setup);
  Matrix m = setup.length() * ih.matrix.entries();
  OperatorMatrix t(space, std::move(m), true);
  return {region, std::move(ih), std::move(t)};
}

double dwell_time(const QuantumState& psi0, const Region& region, const Setup& setup) {
  const Space& space = setup.propagator.hamiltonian.space;
  const int ip = find_factor(space, FactorKind::position);
  if (ip < 0) throw StructuralError("dwell time needs a position factor");
  const OperatorMatrix p = tensor_extend(projector(region, space[ip].grid()), space);
  return setup.length() * schrodinger_average(p, setup, psi0).real();
}

double dwell_time(const SojournOperator& t, const QuantumState& psi0) {
  const QuantumState psi = at_final(psi0, t.integrated.setup);
  check_space(psi, t.matrix.space(), "state");
  return (inner_product(psi, t.matrix.apply(psi)) / inner_product(psi, psi).real()).real();
}

WeakValueResult conditional_dwell_time(const SojournOperator& t, const QuantumState& psi0,
                                       const QuantumState& chi, double floor,
                                       const std::string& label) {
  const QuantumState psi = at_final(psi0, t.integrated.setup);
  check_space(psi, t.matrix.space(), "state");
  check_space(chi, t.matrix.space(), "postselection state");
  const cplx v = ratio(chi, t.matrix.entries() * psi.amplitudes(), psi, floor);
  const double len = t.length();
  return {v, "t_Omega", label, t.integrated.setup.window, std::abs(v) > kAnomalyFactor * len,
          v.real() < 0.0};
}

cplx moment_complex(const QuantumState& psi0, const QuantumState& chi, const SojournOperator& t,
                    int l, double floor) {
  if (l < 1 || l > 4) throw ParameterError("moments are implemented for 1 <= l <= 4");
  const QuantumState psi = at_final(psi0, t.integrated.setup);
  check_space(psi, t.matrix.space(), "state");
  check_space(chi, t.matrix.space(), "postselection state");
  Vector v = psi.amplitudes();
  for (int i = 0; i < l; ++i) v = t.matrix.entries() * v;
  return ratio(chi, v, psi, floor);
}

double moment(const QuantumState& psi0, const QuantumState& chi, const SojournOperator& t, int l,
              double floor) {
  return moment_complex(psi0, chi, t, l, floor).real();
}

double second_moment_position_integral(const QuantumState& psi0, const Region& region,
                                       const Setup& setup, double floor) {
  const Space& space = setup.propagator.hamiltonian.space;
  const int ip = find_factor(space, FactorKind::position);
  if (ip < 0) throw StructuralError("position integral needs a position factor");
  const QuantumState psi = at_final(psi0, setup);
  const OperatorMatrix p = tensor_extend(projector(region, space[ip].grid()), space);
  const Vector num = setup.length() * integrated_apply(p, setup, psi.amplitudes());
  const double m = measure(space);
  const double cut = floor * psi.norm();
  const Vector& a = psi.amplitudes();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const double w = std::norm(a(j)) * m;
    if (std::sqrt(w) > cut) {
      const cplx t_r = num(j) / a(j);
      sum += std::norm(t_r) * w;
    } else {
      sum += std::norm(num(j)) * m;
    }
  }
  return sum / (psi.norm() * psi.norm());
}

CellSecondMoment second_moment_position_postselected(const QuantumState& psi0, int cell,
                                                     const SojournOperator& t, double floor) {
  const QuantumState psi = at_final(psi0, t.integrated.setup);
  const Space& space = psi.space();
  if (space.size() != 1 || space[0].kind() != FactorKind::position)
    throw StructuralError("cell postselection is defined on position-only states");
  const Grid& g = space[0].grid();
  if (cell < 0 || cell >= g.size()) throw ParameterError("cell index outside the grid");
  const QuantumState r = cell_state(g, cell);
  const Vector t1 = t.matrix.entries() * psi.amplitudes();
  const Vector t2 = t.matrix.entries() * t1;
  const cplx form_a = ratio(r, t2, psi, floor);
  const double w = std::norm(psi.amplitudes()(cell)) * g.dx();
  const double sandwich = std::norm(t1(cell)) * g.dx() / w;
  const double n2 = psi.norm() * psi.norm();
  return {cell, w / n2, form_a.real(), sandwich};
}

Vector sojourn_exponential(const SojournOperator& t, const Vector& psi, double lambda) {
  Vector sum = psi;
  Vector term = psi;
  const double base = psi.norm();
  for (int k = 1; k < 200; ++k) {
    term = (cplx(0.0, -lambda) / static_cast<double>(k)) * (t.matrix.entries() * term);
    sum += term;
    if (term.norm() < 1e-18 * base) return sum;
  }
  throw NumericalError("Taylor series for exp(-i lambda t) did not converge");
}

double lambda_moment2(const SojournOperator& t, const QuantumState& psi0, double h, double floor) {
  const QuantumState psi = at_final(psi0, t.integrated.setup);
  const Vector& p0 = psi.amplitudes();
  const Vector plus = sojourn_exponential(t, p0, h);
  const Vector minus = sojourn_exponential(t, p0, -h);
  // (i d/dlambda)^2 = -d^2/dlambda^2
  const Vector num = -(plus - 2.0 * p0 + minus) / (h * h);
  const double m = measure(psi.space());
  const double cut = floor * psi.norm();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < p0.size(); ++j) {
    const double w = std::norm(p0(j)) * m;
    if (std::sqrt(w) > cut)
      sum += (num(j) / p0(j)).real() * w;
    else
      sum += (std::conj(p0(j)) * num(j)).real() * m;
  }
  return sum / (psi.norm() * psi.norm());
}

}  // namespace weaktime
