#include "weaktime/clocks.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "weaktime/error.hpp"
#include "weaktime/parallel.hpp"

namespace weaktime {

const char* to_string(ClockMethod m) {
  switch (m) {
    case ClockMethod::real_potential:
      return "real_potential";
    case ClockMethod::imaginary_potential:
      return "imaginary_potential";
    case ClockMethod::larmor:
      return "larmor";
  }
  return "?";
}

std::vector<double> default_strengths(double window_length) {
  const double e = 1e-3 / window_length;
  return {8 * e, 4 * e, 2 * e, e};
}

bool order_accepted(double order) { return std::isnan(order) || (order >= 0.8 && order <= 2.5); }

Extrapolation extrapolate_to_zero(const std::vector<double>& g, const std::vector<cplx>& f, int p) {
  const std::size_t n = g.size();
  if (n < 3 || f.size() != n) throw ParameterError("extrapolation needs at least 3 points");
  if (p < 1) throw ParameterError("extrapolation exponent must be positive");
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(g[i] > 0.0)) throw ParameterError("extrapolation abscissae must be positive");
    x[i] = std::pow(g[i], p);
    for (std::size_t j = 0; j < i; ++j)
      if (x[j] == x[i]) throw ParameterError("extrapolation abscissae must be distinct");
  }
  // Neville tableau evaluated at x = 0; row i uses points 0..i.
  std::vector<std::vector<cplx>> t(n, std::vector<cplx>(n));
  for (std::size_t i = 0; i < n; ++i) {
    t[i][0] = f[i];
    for (std::size_t j = 1; j <= i; ++j)
      t[i][j] = t[i][j - 1] + (t[i][j - 1] - t[i - 1][j - 1]) * x[i] / (x[i - j] - x[i]);
  }
  Extrapolation e;
  e.value = t[n - 1][n - 1];
  e.residual = std::abs(t[n - 1][n - 1] - t[n - 2][n - 2]);

  // log |f_k - f_inf| against log g_k
  const double scale = std::abs(e.value) + 1.0;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = std::abs(f[i] - e.value);
    if (d > 1e-13 * scale) {
      lx.push_back(std::log(g[i]));
      ly.push_back(std::log(d));
    }
  }
  if (lx.size() < 2) {
    e.order = std::numeric_limits<double>::quiet_NaN();
  } else {
    e.order = fit_line(lx, ly).slope;
  }
  return e;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw ParameterError("line fit needs at least 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw ParameterError("line fit needs distinct abscissae");
  LinearFit fit{sxy / sxx, 0.0, 0.0};
  fit.intercept = my - fit.slope * mx;
  for (std::size_t i = 0; i < n; ++i)
    fit.max_residual = std::max(fit.max_residual, std::abs(y[i] - fit.intercept - fit.slope * x[i]));
  return fit;
}

namespace {

void validate(const ClockConfig& cfg, ClockMethod expected) {
  if (cfg.method != expected)
    throw ParameterError(std::string("clock configured for ") + to_string(cfg.method) +
                         ", called as " + to_string(expected));
  const auto& s = cfg.strengths;
  if (s.size() < 3) throw ParameterError("clock sweep needs at least 3 strengths");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] > 1e-7)) throw ParameterError("clock strengths must exceed 1e-7");
    if (i > 0 && !(s[i] < s[i - 1])) throw ParameterError("clock strengths must strictly decrease");
  }
  const Space& sp = cfg.setup.propagator.hamiltonian.space;
  if (sp.size() != 1 || sp[0].kind() != FactorKind::position)
    throw StructuralError("clocks act on a position-only system");
}

QuantumState initial_state(const QuantumState& psi0, const Setup& s) {
  if (psi0.time() == s.window.t_i) return psi0;
  Propagator p = s.propagator;
  p.hamiltonian = p.hamiltonian.free_part();
  return evolve(psi0, p, psi0.time(), s.window.t_i);
}

QuantumState run_region(const ClockConfig& cfg, const QuantumState& psi_i, cplx strength) {
  Propagator p = cfg.setup.propagator;
  p.hamiltonian = p.hamiltonian.free_part();
  if (strength != cplx(0.0)) p.hamiltonian.region_terms.push_back({strength, cfg.region, cfg.setup.window});
  return evolve(psi_i, p, cfg.setup.window.t_i, cfg.setup.window.t_f);
}

cplx overlap_checked(const QuantumState& chi, const QuantumState& phi0) {
  const cplx d = inner_product(chi, phi0);
  if (!(std::abs(d) > kOverlapFloor * chi.norm() * phi0.norm()))
    throw DegeneratePostselectionError("postselection state is orthogonal to the final state");
  return d;
}

void finish(SweepRecord& r, int p) {
  std::vector<double> g;
  std::vector<cplx> a, b;
  for (const auto& pt : r.points) {
    g.push_back(pt.strength);
    a.push_back(pt.readout);
    b.push_back(pt.cross);
  }
  r.direct = extrapolate_to_zero(g, a, p);
  r.cross = extrapolate_to_zero(g, b, p);
  r.flagged = !order_accepted(r.direct.order);
  if (r.flagged) {
    std::ostringstream os;
    os << "convergence order " << r.direct.order << " outside [0.8, 2.5]";
    r.note = os.str();
  }
}

}  // namespace

SweepRecord clock_real_potential(const ClockConfig& cfg, const QuantumState& psi0,
                                 const std::optional<QuantumState>& chi, const std::string& label) {
  validate(cfg, ClockMethod::real_potential);
  const QuantumState psi_i = initial_state(psi0, cfg.setup);
  const auto& s = cfg.strengths;
  // index 0: unperturbed; then +V, -V pairs
  const auto runs = parallel_map(2 * s.size() + 1, cfg.threads, [&](std::size_t k) {
    if (k == 0) return run_region(cfg, psi_i, 0.0);
    const double v = s[(k - 1) / 2] * ((k % 2) ? 1.0 : -1.0);
    return run_region(cfg, psi_i, v);
  });
  const QuantumState c = chi.value_or(runs[0]);
  const cplx den = overlap_checked(c, runs[0]);
  const double len = cfg.setup.length();
  SweepRecord r{ClockMethod::real_potential, label, {}, {}, {}, false, ""};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const cplx rp = inner_product(c, runs[2 * i + 1]) / den;
    const cplx rm = inner_product(c, runs[2 * i + 2]) / den;
    const cplx d = cplx(0.0, 1.0) * (rp - rm) / (2.0 * s[i]);
    // Pointer-momentum form: V = G pi / T with G = 1 and a unit-width Gaussian
    // pointer; q = i d/dpi picks up the pointer envelope exp(-pi^2).
    const double pi = s[i] * len;
    const cplx q = std::exp(-pi * pi) * d;
    r.points.push_back({s[i], d, q});
  }
  finish(r, 2);
  return r;
}

SweepRecord clock_imaginary_potential(const ClockConfig& cfg, const QuantumState& psi0,
                                      const std::optional<QuantumState>& chi,
                                      const std::string& label) {
  validate(cfg, ClockMethod::imaginary_potential);
  const QuantumState psi_i = initial_state(psi0, cfg.setup);
  const auto& s = cfg.strengths;
  const auto runs = parallel_map(s.size() + 1, cfg.threads, [&](std::size_t k) {
    if (k == 0) return run_region(cfg, psi_i, 0.0);
    return run_region(cfg, psi_i, cplx(0.0, -0.5 * s[k - 1]));
  });
  const double n0 = inner_product(runs[0], runs[0]).real();
  const double absorbed = 1.0 - inner_product(runs[1], runs[1]).real() / n0;
  if (absorbed > 0.2) {
    std::ostringstream os;
    os << "largest absorber removes " << absorbed << " of the norm (limit 0.2)";
    throw ParameterError(os.str());
  }
  const QuantumState c = chi.value_or(runs[0]);
  const cplx den = overlap_checked(c, runs[0]);
  SweepRecord r{ClockMethod::imaginary_potential, label, {}, {}, {}, false, ""};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const cplx ratio = inner_product(c, runs[i + 1]) / den;
    const cplx d = -2.0 * (ratio - 1.0) / s[i];
    // Postselected survival: -d/dGamma |<chi|Phi>|^2 / |<chi|Phi0>|^2.
    const cplx q = -(std::norm(ratio) - 1.0) / s[i];
    r.points.push_back({s[i], d, q});
  }
  finish(r, 1);
  return r;
}

Extrapolation absorption_dwell_time(const ClockConfig& cfg, const QuantumState& psi0) {
  validate(cfg, ClockMethod::imaginary_potential);
  const QuantumState psi_i = initial_state(psi0, cfg.setup);
  const auto& s = cfg.strengths;
  const auto norms = parallel_map(s.size() + 1, cfg.threads, [&](std::size_t k) {
    const QuantumState f = run_region(cfg, psi_i, k == 0 ? cplx(0.0) : cplx(0.0, -0.5 * s[k - 1]));
    return inner_product(f, f).real();
  });
  std::vector<cplx> d;
  for (std::size_t i = 0; i < s.size(); ++i) d.push_back(-(norms[i + 1] - norms[0]) / norms[0] / s[i]);
  return extrapolate_to_zero(s, d, 1);
}

namespace {

Hamiltonian larmor_hamiltonian(const ClockConfig& cfg, double omega) {
  Hamiltonian h = cfg.setup.propagator.hamiltonian.free_part();
  h.space.push_back(FactorSpace::spin2());
  if (omega != 0.0) h.larmor = LarmorTerm{omega, cfg.region, cfg.setup.window};
  return h;
}

QuantumState larmor_run(const ClockConfig& cfg, const QuantumState& psi_i, double omega) {
  Propagator p = cfg.setup.propagator;
  p.hamiltonian = larmor_hamiltonian(cfg, omega);
  const double r = 1.0 / std::sqrt(2.0);
  const QuantumState start = tensor_product(psi_i, spin_state(r, r));
  return evolve(start, p, cfg.setup.window.t_i, cfg.setup.window.t_f);
}

// Spin amplitudes <chi|Phi> for a spatial chi.
std::array<cplx, 2> spin_projection(const QuantumState& chi, const QuantumState& phi) {
  const Grid& g = chi.space()[0].grid();
  std::array<cplx, 2> s{0.0, 0.0};
  for (int j = 0; j < g.size(); ++j) {
    const cplx c = std::conj(chi.amplitudes()(j)) * g.dx();
    s[0] += c * phi.amplitudes()(2 * j);
    s[1] += c * phi.amplitudes()(2 * j + 1);
  }
  return s;
}

double sigma_y_of(const std::array<cplx, 2>& s) {
  return 2.0 * (std::conj(s[0]) * s[1]).imag() / (std::norm(s[0]) + std::norm(s[1]));
}

}  // namespace

SweepRecord clock_larmor(const ClockConfig& cfg, const QuantumState& psi0,
                         const std::optional<QuantumState>& chi, const std::string& label) {
  validate(cfg, ClockMethod::larmor);
  const QuantumState psi_i = initial_state(psi0, cfg.setup);
  const auto& s = cfg.strengths;
  const auto runs = parallel_map(s.size() + 1, cfg.threads,
                                 [&](std::size_t k) { return larmor_run(cfg, psi_i, k == 0 ? 0.0 : s[k - 1]); });
  // The unperturbed spatial state is either spin component times sqrt(2).
  const Grid& g = psi_i.space()[0].grid();
  Vector up(g.size());
  for (int j = 0; j < g.size(); ++j) up(j) = std::sqrt(2.0) * runs[0].amplitudes()(2 * j);
  const QuantumState phi0({FactorSpace::position(g)}, up, cfg.setup.window.t_f);
  const QuantumState c = chi.value_or(phi0);
  const cplx den = overlap_checked(c, phi0);

  SweepRecord r{ClockMethod::larmor, label, {}, {}, {}, false, ""};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto sp = spin_projection(c, runs[i + 1]);
    // <sigma_y> is odd in omega, so the ratio is already a central difference.
    const double a = sigma_y_of(sp) / s[i];
    // <chi,+x|sigma_y|Phi> / <chi,+x|Phi0>; the +x projection carries half
    // of the precession, hence the factor 2.
    const cplx num = cplx(0.0, 1.0) * (sp[0] - sp[1]) / std::sqrt(2.0);
    const cplx b = 2.0 * num / den / s[i];
    r.points.push_back({s[i], a, b});
  }
  finish(r, 2);
  return r;
}

std::vector<double> larmor_spin_y(const ClockConfig& cfg, const QuantumState& psi0) {
  validate(cfg, ClockMethod::larmor);
  const QuantumState psi_i = initial_state(psi0, cfg.setup);
  return parallel_map(cfg.strengths.size(), cfg.threads, [&](std::size_t k) {
    const QuantumState f = larmor_run(cfg, psi_i, cfg.strengths[k]);
    const OperatorMatrix sy = tensor_extend(sigma_y(), f.space());
    return (inner_product(f, sy.apply(f)) / inner_product(f, f)).real();
  });
}

}  // namespace weaktime
