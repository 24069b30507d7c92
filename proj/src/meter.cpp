#include "weaktime/meter.hpp"

#include <cmath>
#include <sstream>

#include "weaktime/error.hpp"

namespace weaktime {

PointerSpec PointerSpec::make(double width, double reach, int n) {
  if (!(width > 0.0)) throw ParameterError("pointer width must be positive");
  const double half = 8.0 * std::max(width, std::abs(reach));
  return {Grid(n, -half, half), width};
}

int MeterRun::system_dimension() const { return final_state.size() / pointer_dimension(); }

Postselector Postselector::onto(const std::string& label, QuantumState chi) {
  return {label, std::move(chi), {}};
}

Postselector Postselector::projector(const std::string& label, std::vector<double> mask) {
  return {label, std::nullopt, std::move(mask)};
}

namespace {

// Pruning threshold on |phi(k)|^2 relative to the total.
constexpr double kMomentumPrune = 1e-32;

QuantumState to_initial(const QuantumState& psi0, const Setup& s) {
  if (psi0.time() == s.window.t_i) return psi0;
  Propagator p = s.propagator;
  p.hamiltonian = p.hamiltonian.free_part();
  return evolve(psi0, p, psi0.time(), s.window.t_i);
}

void check_aliasing(const QuantumState& phi, const PointerSpec& spec) {
  const Grid& q = spec.grid;
  const int n = q.size();
  const Eigen::Index sys = phi.size() / n;
  double edge = 0.0, total = 0.0;
  for (Eigen::Index s = 0; s < sys; ++s)
    for (int j = 0; j < n; ++j) {
      const double w = std::norm(phi.amplitudes()(s * n + j));
      total += w;
      if (q.x(j) - q.x_min() < spec.width || q.x_max() - q.x(j) < spec.width) edge += w;
    }
  if (edge > 1e-9 * total) {
    std::ostringstream os;
    os << "pointer mass " << edge / total << " within one width of the grid edge; widen the pointer grid";
    throw AliasingError(os.str());
  }
}

// a(q) = <chi|Phi(., q)> with the system measure.
Vector project_system(const MeterRun& run, const QuantumState& chi) {
  const int n = run.pointer_dimension();
  const int sys = run.system_dimension();
  if (chi.size() != sys) throw StructuralError("postselection state does not match the system");
  const double m = measure(run.free_final.space());
  const QuantumState c = chi.normalized();
  Vector a = Vector::Zero(n);
  for (int s = 0; s < sys; ++s) {
    const cplx w = std::conj(c.amplitudes()(s)) * m;
    if (w == cplx(0.0)) continue;
    a += w * run.final_state.amplitudes().segment(static_cast<Eigen::Index>(s) * n, n);
  }
  return a;
}

double pointer_mean_of(const std::vector<double>& f, const Grid& q) {
  double s = 0.0;
  for (int j = 0; j < q.size(); ++j) s += q.x(j) * f[j] * q.dx();
  return s;
}

}  // namespace

MeterRun run_meter(const PointerSpec& spec, const Setup& setup, const QuantumState& psi0,
                   const OperatorMatrix& a, double coupling, std::optional<CouplingProfile> profile) {
  const Hamiltonian& hs = setup.propagator.hamiltonian;
  if (a.space() != hs.space) throw StructuralError("meter observable does not act on the system");
  const QuantumState psi_i = to_initial(psi0, setup);
  const QuantumState phi_i = pointer_gaussian(spec.grid, spec.width);

  Propagator p = setup.propagator;
  p.hamiltonian = hs.free_part();
  p.hamiltonian.space.push_back(FactorSpace::pointer(spec.grid));
  InteractionTerm in;
  in.coupling = coupling;
  in.profile = profile.value_or(CouplingProfile::rectangular(setup.window.t_i, setup.window.t_f));
  in.system_operator = a;
  p.hamiltonian.interaction = in;

  const QuantumState start = tensor_product(psi_i, phi_i).at_time(setup.window.t_i);
  QuantumState fin = evolve(start, p, setup.window.t_i, setup.window.t_f);
  check_aliasing(fin, spec);

  Propagator p0 = setup.propagator;
  p0.hamiltonian = hs.free_part();
  QuantumState free = evolve(psi_i, p0, setup.window.t_i, setup.window.t_f);
  return {spec, coupling, "A", start, std::move(fin), std::move(free)};
}

PointerDistribution pointer_distribution(const MeterRun& run, const std::optional<Postselector>& post,
                                         double floor) {
  const Grid& q = run.pointer.grid;
  const int n = q.size();
  const int sys = run.system_dimension();
  const double m = measure(run.free_final.space());
  std::vector<double> f(n, 0.0);
  PointerDistribution d;
  if (post && post->state) {
    const Vector a = project_system(run, *post->state);
    for (int j = 0; j < n; ++j) f[j] = std::norm(a(j));
    d.label = post->label;
  } else {
    if (post && static_cast<int>(post->mask.size()) != sys)
      throw StructuralError("postselection mask does not match the system");
    for (int s = 0; s < sys; ++s) {
      const double keep = post ? post->mask[s] : 1.0;
      if (keep == 0.0) continue;
      for (int j = 0; j < n; ++j)
        f[j] += keep * std::norm(run.final_state.amplitudes()(static_cast<Eigen::Index>(s) * n + j)) * m;
    }
    d.label = post ? post->label : "none";
  }
  double prob = 0.0;
  for (double v : f) prob += v * q.dx();
  const double total = inner_product(run.final_state, run.final_state).real();
  if (!(prob > floor * floor * total)) {
    std::ostringstream os;
    os << "postselection probability " << prob << " at or below the floor";
    throw DegeneratePostselectionError(os.str());
  }
  for (double& v : f) v /= prob;
  d.probability = prob / total;
  d.mean = pointer_mean_of(f, q);
  double var = 0.0;
  for (int j = 0; j < n; ++j) var += (q.x(j) - d.mean) * (q.x(j) - d.mean) * f[j] * q.dx();
  d.variance = var;
  d.f = std::move(f);
  return d;
}

double survival_probability(const MeterRun& run) {
  const Vector a = project_system(run, run.free_final);
  const double dq = run.pointer.grid.dx();
  return a.squaredNorm() * dq / inner_product(run.final_state, run.final_state).real();
}

int count_peaks(const std::vector<double>& f, double fraction) {
  if (f.empty()) return 0;
  const double top = *std::max_element(f.begin(), f.end());
  const double cut = fraction * top;
  int peaks = 0;
  const std::size_t n = f.size();
  for (std::size_t j = 0; j < n; ++j) {
    if (f[j] < cut) continue;
    // plateaus count once, at their left end
    const double left = j > 0 ? f[j - 1] : -1.0;
    std::size_t k = j;
    while (k + 1 < n && f[k + 1] == f[j]) ++k;
    const double right = k + 1 < n ? f[k + 1] : -1.0;
    if (f[j] > left && f[j] > right) ++peaks;
    j = k;
  }
  return peaks;
}

namespace {

struct TSpectrum {
  Matrix w;
  Eigen::VectorXd tau;
};

TSpectrum sojourn_spectrum(const SojournOperator& t) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(t.matrix.entries());
  if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed on the sojourn operator");
  return {es.eigenvectors(), es.eigenvalues()};
}

MeterRun moment_meter_interaction(const PointerSpec& spec, const SojournOperator& t,
                                  const TSpectrum& sp, const QuantumState& psi0, int l,
                                  double coupling) {
  const Setup& setup = t.integrated.setup;
  const QuantumState psi_i = to_initial(psi0, setup);
  const QuantumState psi_f = at_final(psi0, setup);
  const PointerBasis pb(spec.grid);
  const QuantumState phi = pointer_gaussian(spec.grid, spec.width);
  const Vector phik = pb.forward(phi.amplitudes());
  const int n = spec.grid.size();
  const int sys = psi_f.size();

  double tot = phik.squaredNorm();
  std::vector<int> kept;
  for (int m = 0; m < n; ++m)
    if (std::norm(phik(m)) > kMomentumPrune * tot) kept.push_back(m);

  const Vector c = sp.w.adjoint() * psi_f.amplitudes();
  Eigen::VectorXd tl = sp.tau;
  for (Eigen::Index a = 0; a < tl.size(); ++a) tl(a) = std::pow(sp.tau(a), l);
  // Momentum-space amplitudes on kept channels, then back to q.
  Matrix k(sys, kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const double kappa = pb.wavenumbers()[kept[i]];
    Vector ph(tl.size());
    for (Eigen::Index a = 0; a < tl.size(); ++a) ph(a) = std::polar(1.0, -coupling * kappa * tl(a)) * c(a);
    k.col(i) = phik(kept[i]) * (sp.w * ph);
  }
  Matrix finv(kept.size(), n);
  for (std::size_t i = 0; i < kept.size(); ++i) finv.row(i) = pb.forward_matrix().row(kept[i]).conjugate();
  const Matrix q = k * finv;  // sys x n
  Vector amp(static_cast<Eigen::Index>(sys) * n);
  for (int s = 0; s < sys; ++s)
    for (int j = 0; j < n; ++j) amp(static_cast<Eigen::Index>(s) * n + j) = q(s, j);

  Space space = psi_f.space();
  space.push_back(FactorSpace::pointer(spec.grid));
  QuantumState fin(space, std::move(amp), setup.window.t_f);
  check_aliasing(fin, spec);
  const QuantumState start = tensor_product(psi_i, phi).at_time(setup.window.t_i);
  return {spec, coupling, "t^" + std::to_string(l), start, std::move(fin), psi_f};
}

MeterRun moment_meter_schrodinger(const PointerSpec& spec, const SojournOperator& t,
                                  const QuantumState& psi0, int l, double coupling) {
  const Setup& setup = t.integrated.setup;
  const Hamiltonian h0 = setup.propagator.hamiltonian.free_part();
  Eigen::SelfAdjointEigenSolver<Matrix> es(assemble(h0, setup.window.t_i).entries());
  const Matrix v = es.eigenvectors();
  const Eigen::VectorXd e = es.eigenvalues();
  Matrix tl = t.matrix.entries();
  for (int i = 1; i < l; ++i) tl = (tl * t.matrix.entries()).eval();
  const double tf = setup.window.t_f;
  const Space sys = h0.space;
  // t(t)^l = U0(t_f, t)^dagger t^l U0(t_f, t)
  auto schedule = [v, e, tl, tf, sys](double time) {
    Vector ph(e.size());
    for (Eigen::Index a = 0; a < e.size(); ++a) ph(a) = std::polar(1.0, -e(a) * (tf - time));
    const Matrix u = v * ph.asDiagonal() * v.adjoint();
    Matrix m = u.adjoint() * tl * u;
    m = (0.5 * (m + m.adjoint())).eval();
    return OperatorMatrix(sys, std::move(m), true);
  };
  const QuantumState psi_i = to_initial(psi0, setup);
  const QuantumState phi = pointer_gaussian(spec.grid, spec.width);
  Propagator p = setup.propagator;
  p.method = PropagationMethod::dense_exponential;
  p.hamiltonian = h0;
  p.hamiltonian.space.push_back(FactorSpace::pointer(spec.grid));
  InteractionTerm in;
  in.coupling = coupling;
  in.profile = CouplingProfile::rectangular(setup.window.t_i, setup.window.t_f);
  in.schedule = schedule;
  p.hamiltonian.interaction = in;
  const QuantumState start = tensor_product(psi_i, phi).at_time(setup.window.t_i);
  QuantumState fin = evolve(start, p, setup.window.t_i, setup.window.t_f);
  check_aliasing(fin, spec);
  Propagator p0 = setup.propagator;
  p0.method = PropagationMethod::dense_exponential;
  p0.hamiltonian = h0;
  QuantumState free = evolve(psi_i, p0, setup.window.t_i, setup.window.t_f);
  return {spec, coupling, "t^" + std::to_string(l), start, std::move(fin), std::move(free)};
}

}  // namespace

MeterRun run_moment_meter(const PointerSpec& spec, const SojournOperator& t, const QuantumState& psi0,
                          int l, double coupling, MeterPicture picture) {
  if (l < 1 || l > 4) throw ParameterError("moment meters are implemented for 1 <= l <= 4");
  if (picture == MeterPicture::schrodinger) return moment_meter_schrodinger(spec, t, psi0, l, coupling);
  return moment_meter_interaction(spec, t, sojourn_spectrum(t), psi0, l, coupling);
}

MomentMeterResult moment_meter_sweep(const PointerSpec& spec, const SojournOperator& t,
                                     const QuantumState& psi0, int l, const std::vector<double>& ladder,
                                     const std::optional<Postselector>& post) {
  return moment_meter_sweep(spec, t, psi0, l, ladder, std::vector<std::optional<Postselector>>{post})[0];
}

std::vector<MomentMeterResult> moment_meter_sweep(const PointerSpec& spec, const SojournOperator& t,
                                                  const QuantumState& psi0, int l,
                                                  const std::vector<double>& ladder,
                                                  const std::vector<std::optional<Postselector>>& posts) {
  if (l < 1 || l > 4) throw ParameterError("moment meters are implemented for 1 <= l <= 4");
  const TSpectrum sp = sojourn_spectrum(t);
  std::vector<MomentMeterResult> out(posts.size());
  std::vector<std::vector<cplx>> ratio(posts.size());
  for (double g : ladder) {
    const MeterRun run = moment_meter_interaction(spec, t, sp, psi0, l, g);
    for (std::size_t n = 0; n < posts.size(); ++n) {
      const PointerDistribution d = pointer_distribution(run, posts[n]);
      out[n].couplings.push_back(g);
      out[n].shifts.push_back(d.mean);
      out[n].probabilities.push_back(d.probability);
      ratio[n].push_back(d.mean / g);
    }
  }
  for (std::size_t n = 0; n < posts.size(); ++n) out[n].value = extrapolate_to_zero(ladder, ratio[n], 1);
  return out;
}

IdentityReport pointer_identity_check(const PointerSpec& spec, const Setup& setup,
                                      const QuantumState& psi0, const OperatorMatrix& a,
                                      const IntegratedOperator& ia, const QuantumState& chi,
                                      const std::vector<double>& ladder) {
  const PointerBasis pb(spec.grid);
  const Eigen::RowVectorXcd zero = pb.forward_matrix().row(pb.zero_index());
  Vector qdiag(spec.grid.size());
  for (int j = 0; j < spec.grid.size(); ++j) qdiag(j) = spec.grid.x(j);

  const MeterRun base = run_meter(spec, setup, psi0, a, 0.0);
  const cplx den = zero * project_system(base, chi);
  if (!(std::abs(den) > 0.0)) throw DegeneratePostselectionError("zero-momentum overlap vanishes");
  std::vector<cplx> d;
  for (double g : ladder) {
    const MeterRun up = run_meter(spec, setup, psi0, a, g);
    const MeterRun dn = run_meter(spec, setup, psi0, a, -g);
    const cplx rp = zero * qdiag.cwiseProduct(project_system(up, chi));
    const cplx rm = zero * qdiag.cwiseProduct(project_system(dn, chi));
    d.push_back((rp - rm) / (2.0 * g * den));
  }
  IdentityReport rep;
  rep.direct = conditional_weak_value(ia, psi0, chi).value;
  rep.route = extrapolate_to_zero(ladder, d, 2);
  rep.discrepancy = std::abs(rep.route.value - rep.direct);
  return rep;
}

IdentityReport moment_identity_check(const PointerSpec& spec, const SojournOperator& t,
                                     const QuantumState& psi0, const QuantumState& chi, int l,
                                     const std::vector<double>& ladder) {
  if (l != 1 && l != 2) throw ParameterError("moment identity check supports l = 1, 2");
  const TSpectrum sp = sojourn_spectrum(t);
  const PointerBasis pb(spec.grid);
  const int m1 = 1;
  const double kappa = pb.wavenumbers()[m1];
  const Eigen::RowVectorXcd row = pb.forward_matrix().row(m1);
  auto amp = [&](double g) {
    const MeterRun run = moment_meter_interaction(spec, t, sp, psi0, 1, g);
    return cplx(row * project_system(run, chi));
  };
  const cplx r0 = amp(0.0);
  if (!(std::abs(r0) > 0.0)) throw DegeneratePostselectionError("pointer-momentum overlap vanishes");
  const cplx i(0.0, 1.0);
  std::vector<cplx> d;
  for (double g : ladder) {
    const cplx rp = amp(g) / r0;
    const cplx rm = amp(-g) / r0;
    if (l == 1)
      d.push_back(i / kappa * (rp - rm) / (2.0 * g));
    else
      d.push_back((i / kappa) * (i / kappa) * (rp - 2.0 + rm) / (g * g));
  }
  IdentityReport rep;
  rep.direct = moment_complex(psi0, chi, t, l);
  rep.route = extrapolate_to_zero(ladder, d, 2);
  rep.discrepancy = std::abs(rep.route.value - rep.direct);
  return rep;
}

}  // namespace weaktime
