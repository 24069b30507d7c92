#include "weaktime/dynamics.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "weaktime/error.hpp"
#include "weaktime/kernels.hpp"

namespace weaktime {

CouplingProfile CouplingProfile::rectangular(double t_i, double t_f) {
  if (!(t_f > t_i)) throw ParameterError("coupling window requires t_f > t_i");
  return {t_i, t_f, false};
}

CouplingProfile CouplingProfile::impulsive(double t_hit, double width) {
  if (!(width > 0.0)) throw ParameterError("impulsive width must be positive");
  return {t_hit - width, t_hit, true};
}

double CouplingProfile::operator()(double t) const {
  return (start_ < t && t < end_) ? 1.0 / (end_ - start_) : 0.0;
}

double CouplingProfile::integral(double t0, double t1, double dt) const {
  const long n = step_count(t0, t1, dt);
  double s = 0.0;
  for (long k = 0; k < n; ++k) s += (*this)(t0 + (k + 0.5) * dt) * dt;
  return s;
}

OperatorMatrix InteractionTerm::operator_at(double t) const {
  if (schedule) return schedule(t);
  if (!system_operator) throw StructuralError("interaction term has no system operator");
  return *system_operator;
}

Hamiltonian Hamiltonian::free_part() const {
  Hamiltonian h = *this;
  h.region_terms.clear();
  h.larmor.reset();
  h.interaction.reset();
  return h;
}

bool Hamiltonian::hermitian() const {
  for (double v : potential_imag)
    if (v != 0.0) return false;
  for (const auto& r : region_terms)
    if (r.strength.imag() != 0.0) return false;
  if (interaction && !interaction->schedule && interaction->system_operator &&
      !interaction->system_operator->hermitian())
    return false;
  return true;
}

Space Hamiltonian::system_space() const {
  Space s;
  for (const auto& f : space)
    if (f.kind() != FactorKind::pointer) s.push_back(f);
  return s;
}

Hamiltonian system_hamiltonian(const Grid& grid, std::vector<double> v_real,
                               std::vector<double> v_imag) {
  Hamiltonian h;
  h.space = {FactorSpace::position(grid)};
  h.potential_real = std::move(v_real);
  h.potential_imag = std::move(v_imag);
  return h;
}

namespace {

bool window_on(const Window& w, double t) { return w.contains(t); }

void check_potential(const Hamiltonian& h, const Grid& grid) {
  const auto n = static_cast<std::size_t>(grid.size());
  if (!h.potential_real.empty() && h.potential_real.size() != n)
    throw StructuralError("real potential length does not match the position grid");
  if (!h.potential_imag.empty() && h.potential_imag.size() != n)
    throw StructuralError("imaginary potential length does not match the position grid");
}

// Diagonal of everything in H that acts on position alone.
std::vector<cplx> position_diagonal(const Hamiltonian& h, const Grid& grid, double t,
                                    bool include_regions) {
  check_potential(h, grid);
  std::vector<cplx> d(grid.size(), cplx(0.0));
  for (int j = 0; j < grid.size(); ++j) {
    if (!h.potential_real.empty()) d[j] += h.potential_real[j];
    if (!h.potential_imag.empty()) d[j] += cplx(0.0, h.potential_imag[j]);
  }
  if (include_regions)
    for (const auto& r : h.region_terms) {
      if (!window_on(r.window, t)) continue;
      for (int j : r.region.indices(grid)) d[j] += r.strength;
    }
  return d;
}

}  // namespace

OperatorMatrix assemble(const Hamiltonian& h, double t) {
  const Space& space = h.space;
  const int dim = dimension(space);
  Matrix m = Matrix::Zero(dim, dim);
  const int ip = find_factor(space, FactorKind::position);

  if (ip >= 0) {
    const Grid& grid = space[ip].grid();
    const Space pos{space[ip]};
    Matrix local = h.kinetic ? kinetic_operator(grid).entries() : Matrix::Zero(grid.size(), grid.size());
    const auto d = position_diagonal(h, grid, t, true);
    for (int j = 0; j < grid.size(); ++j) local(j, j) += d[j];
    m += tensor_extend(OperatorMatrix(pos, std::move(local), false), space).entries();
  } else if (!h.potential_real.empty() || !h.potential_imag.empty() || !h.region_terms.empty()) {
    throw StructuralError("potential terms need a position factor");
  }

  if (h.larmor && window_on(h.larmor->window, t)) {
    const int is = find_factor(space, FactorKind::spin2);
    if (ip < 0 || is < 0) throw StructuralError("Larmor term needs position and spin factors");
    const Grid& grid = space[ip].grid();
    const auto ind = h.larmor->region.indicator(grid);
    Vector diag(2 * grid.size());
    for (int j = 0; j < grid.size(); ++j) {
      diag(2 * j) = 0.5 * h.larmor->omega * ind[j];
      diag(2 * j + 1) = -0.5 * h.larmor->omega * ind[j];
    }
    const OperatorMatrix op = OperatorMatrix::diagonal({space[ip], space[is]}, diag, true);
    m += tensor_extend(op, space).entries();
  }

  bool herm = h.hermitian();
  if (h.interaction) {
    const auto& in = *h.interaction;
    const int iq = find_factor(space, FactorKind::pointer);
    if (iq < 0) throw StructuralError("interaction term needs a pointer factor");
    const double g = in.coupling * in.profile(t);
    if (g != 0.0) {
      const OperatorMatrix a = in.operator_at(t);
      if (a.space() != h.system_space())
        throw StructuralError("interaction operator lives on " + describe(a.space()) +
                              ", expected " + describe(h.system_space()));
      const OperatorMatrix pi = PointerBasis(space[iq].grid()).momentum_operator();
      // pi (x) A in canonical order: system factors precede the pointer.
      const Matrix& pe = pi.entries();
      const Matrix& ae = a.entries();
      Matrix kron(dim, dim);
      const int na = static_cast<int>(ae.rows());
      const int np = static_cast<int>(pe.rows());
      for (int a1 = 0; a1 < na; ++a1)
        for (int a2 = 0; a2 < na; ++a2) kron.block(a1 * np, a2 * np, np, np) = ae(a1, a2) * pe;
      m += g * kron;
      herm = herm && a.hermitian();
    }
  }
  if (herm) m = (0.5 * (m + m.adjoint())).eval();
  return {space, std::move(m), herm};
}

const char* to_string(PropagationMethod m) {
  return m == PropagationMethod::dense_exponential ? "dense_exponential" : "implicit_step";
}

long step_count(double t_from, double t_to, double dt) {
  if (!(dt > 0.0)) throw ParameterError("time step must be positive");
  const double span = std::abs(t_to - t_from);
  const double n = std::round(span / dt);
  if (std::abs(n * dt - span) > 1e-9 * std::max(1.0, dt)) {
    std::ostringstream os;
    os << "dt = " << dt << " does not divide the interval [" << t_from << ", " << t_to << "]";
    throw ParameterError(os.str());
  }
  return static_cast<long>(n);
}

// ---------------------------------------------------------------------------
// ChannelEvolver

ChannelEvolver::ChannelEvolver(const Grid& grid, std::vector<cplx> base_diagonal,
                               std::vector<Term> terms,
                               std::vector<std::vector<cplx>> coefficients, double dt)
    : grid_(grid),
      base_(std::move(base_diagonal)),
      terms_(std::move(terms)),
      coefficients_(std::move(coefficients)),
      dt_(dt),
      off_diag_(-1.0 / (grid.dx() * grid.dx())) {
  const auto n = static_cast<std::size_t>(grid.size());
  if (base_.size() != n) throw StructuralError("channel base diagonal has wrong length");
  if (coefficients_.empty()) throw StructuralError("channel evolver needs at least one channel");
  for (const auto& t : terms_)
    if (t.profile.size() != n) throw StructuralError("channel term profile has wrong length");
  for (const auto& c : coefficients_)
    if (c.size() != terms_.size()) throw StructuralError("channel coefficient count mismatch");
  if (!(dt > 0.0)) throw ParameterError("time step must be positive");
  const std::size_t len = n * batch();
  g_.resize(len);
  m_.resize(len);
  cp_.resize(len);
  work_.resize(len);
}

void ChannelEvolver::refactor(const std::vector<double>& env, double signed_dt) {
  const int n = grid_.size();
  const std::size_t nb = batch();
  const double tau = 0.5 * signed_dt;
  const double kin = 2.0 / (grid_.dx() * grid_.dx());
  const cplx itau(0.0, tau);
  b_ = itau * off_diag_;
  h_ = -itau * off_diag_;
  for (std::size_t c = 0; c < nb; ++c) {
    cplx prev_cp(0.0);
    double worst = 0.0;
    for (int j = 0; j < n; ++j) {
      cplx d = kin + base_[j];
      for (std::size_t t = 0; t < terms_.size(); ++t)
        if (env[t] != 0.0 && terms_[t].profile[j] != 0.0)
          d += env[t] * coefficients_[c][t] * terms_[t].profile[j];
      const std::size_t k = static_cast<std::size_t>(j) * nb + c;
      const cplx a = 1.0 + itau * d;
      g_[k] = 1.0 - itau * d;
      const cplx pivot = j == 0 ? a : a - b_ * prev_cp;
      const double mag = std::abs(pivot);
      if (!(mag > 1e-300) || !std::isfinite(mag)) {
        std::ostringstream os;
        os << "Cayley factorization broke down in channel " << c << " at row " << j
           << " (pivot " << mag << ", condition estimate > " << (mag > 0 ? 1.0 / mag : INFINITY)
           << ")";
        throw NumericalError(os.str());
      }
      worst = std::max(worst, 1.0 / mag);
      m_[k] = 1.0 / pivot;
      cp_[k] = b_ * m_[k];
      prev_cp = cp_[k];
    }
    (void)worst;
  }
  cached_env_ = env;
  cached_dt_ = signed_dt;
  cache_valid_ = true;
}

void ChannelEvolver::step(std::span<cplx> x, double t, double signed_dt) {
  const std::size_t n = static_cast<std::size_t>(grid_.size());
  const std::size_t nb = batch();
  if (x.size() != n * nb) throw StructuralError("channel state has wrong length");
  const double tm = t + 0.5 * signed_dt;
  std::vector<double> env(terms_.size());
  for (std::size_t i = 0; i < terms_.size(); ++i) env[i] = terms_[i].envelope(tm);
  if (!cache_valid_ || env != cached_env_ || signed_dt != cached_dt_) refactor(env, signed_dt);
  const auto& k = kernels::active();
  k.cayley_rhs(g_.data(), h_, x.data(), work_.data(), n, nb);
  k.thomas_solve(m_.data(), cp_.data(), b_, work_.data(), n, nb);
  std::copy(work_.begin(), work_.end(), x.begin());
}

void ChannelEvolver::evolve(std::span<cplx> x, double t_from, double t_to) {
  const long steps = step_count(t_from, t_to, dt_);
  const double sdt = t_to >= t_from ? dt_ : -dt_;
  for (long s = 0; s < steps; ++s) step(x, t_from + s * sdt, sdt);
}

// ---------------------------------------------------------------------------
// Evolution

namespace {

// Amplitudes of pointer channels whose weight falls below this fraction of the
// total are dropped by the structured stepper.
constexpr double kChannelPrune = 1e-32;

struct Layout {
  int n_pos = 0;
  int n_spin = 1;
  int n_ptr = 1;
  bool has_spin = false;
  bool has_ptr = false;
};

// Returns true when H splits into tridiagonal channels; fills layout and the
// per-(position, spin) diagonal of the interaction operator.
bool detect_structure(const Hamiltonian& h, Layout& lay, std::vector<double>& a_diag) {
  const Space& s = h.space;
  if (s.empty() || s[0].kind() != FactorKind::position || !h.kinetic) return false;
  std::size_t i = 1;
  lay.n_pos = s[0].dimension();
  if (i < s.size() && s[i].kind() == FactorKind::spin2) {
    lay.has_spin = true;
    lay.n_spin = 2;
    ++i;
  }
  if (i < s.size() && s[i].kind() == FactorKind::pointer) {
    lay.has_ptr = true;
    lay.n_ptr = s[i].dimension();
    ++i;
  }
  if (i != s.size()) return false;
  if (h.larmor && !lay.has_spin) return false;
  if (h.interaction) {
    if (!lay.has_ptr) return false;
    const auto& in = *h.interaction;
    if (in.schedule || !in.system_operator) return false;
    const auto& a = *in.system_operator;
    if (!a.is_diagonal()) return false;
    a_diag.resize(a.size());
    for (int k = 0; k < a.size(); ++k) {
      const cplx v = a.entries()(k, k);
      if (v.imag() != 0.0) return false;
      a_diag[k] = v.real();
    }
  }
  return true;
}

}  // namespace

struct Evolution::Impl {
  bool structured = false;

  // structured path
  Layout lay;
  std::vector<double> a_diag;
  std::vector<cplx> base;
  std::vector<ChannelEvolver::Term> terms;
  // per full channel (spin, momentum), coefficient row
  std::vector<std::vector<cplx>> coeffs;
  std::optional<PointerBasis> pointer;
  std::vector<int> kept;
  std::optional<ChannelEvolver> evolver;

  // dense path
  std::vector<double> cached_key;
  double cached_dt = 0.0;
  bool cache_valid = false;
  Matrix expo;
  Eigen::PartialPivLU<Matrix> lu;
  Matrix rhs;
};

Evolution::Evolution(Propagator prop) : prop_(std::move(prop)), impl_(std::make_unique<Impl>()) {
  if (!(prop_.dt > 0.0)) throw ParameterError("time step must be positive");
  if (prop_.method != PropagationMethod::implicit_step) return;
  auto& im = *impl_;
  const Hamiltonian& h = prop_.hamiltonian;
  if (!detect_structure(h, im.lay, im.a_diag)) return;
  im.structured = true;
  const Grid& grid = h.space[0].grid();
  im.base = position_diagonal(h, grid, 0.0, false);

  const int n_channels = im.lay.n_spin * im.lay.n_ptr;
  for (const auto& r : h.region_terms) {
    const Window w = r.window;
    im.terms.push_back({r.region.indicator(grid), [w](double t) { return w.contains(t) ? 1.0 : 0.0; }});
  }
  std::vector<double> kappa(im.lay.n_ptr, 0.0);
  if (im.lay.has_ptr) {
    im.pointer.emplace(h.space.back().grid());
    kappa = im.pointer->wavenumbers();
  }
  const std::size_t n_region = im.terms.size();
  if (h.larmor) {
    const Window w = h.larmor->window;
    im.terms.push_back(
        {h.larmor->region.indicator(grid), [w](double t) { return w.contains(t) ? 1.0 : 0.0; }});
  }
  const std::size_t larmor_at = h.larmor ? n_region : SIZE_MAX;
  std::size_t inter_at = SIZE_MAX;
  if (h.interaction) {
    inter_at = im.terms.size();
    const auto in = *h.interaction;
    for (int s = 0; s < im.lay.n_spin; ++s) {
      std::vector<double> prof(im.lay.n_pos);
      for (int j = 0; j < im.lay.n_pos; ++j) prof[j] = im.a_diag[j * im.lay.n_spin + s];
      const CouplingProfile p = in.profile;
      const double g = in.coupling;
      im.terms.push_back({std::move(prof), [p, g](double t) { return g * p(t); }});
    }
  }
  im.coeffs.assign(n_channels, std::vector<cplx>(im.terms.size(), cplx(0.0)));
  for (int s = 0; s < im.lay.n_spin; ++s)
    for (int q = 0; q < im.lay.n_ptr; ++q) {
      auto& row = im.coeffs[s * im.lay.n_ptr + q];
      for (std::size_t t = 0; t < n_region; ++t) row[t] = h.region_terms[t].strength;
      if (larmor_at != SIZE_MAX) row[larmor_at] = 0.5 * h.larmor->omega * (s == 0 ? 1.0 : -1.0);
      if (inter_at != SIZE_MAX) row[inter_at + s] = kappa[q];
    }
}

Evolution::~Evolution() = default;
Evolution::Evolution(Evolution&&) noexcept = default;
Evolution& Evolution::operator=(Evolution&&) noexcept = default;

bool Evolution::structured() const { return impl_->structured; }

QuantumState Evolution::advance(const QuantumState& state, double t_from, double t_to) {
  if (state.space() != prop_.hamiltonian.space)
    throw StructuralError("state on " + describe(state.space()) + " evolved by Hamiltonian on " +
                          describe(prop_.hamiltonian.space));
  Vector amp = state.amplitudes();
  advance(amp, t_from, t_to);
  return {state.space(), std::move(amp), t_to};
}

void Evolution::advance(Vector& amp, double t_from, double t_to) {
  const Hamiltonian& h = prop_.hamiltonian;
  if (amp.size() != dimension(h.space)) throw StructuralError("amplitude vector has wrong length");
  const long steps = step_count(t_from, t_to, prop_.dt);
  if (steps == 0) return;
  const double sdt = t_to >= t_from ? prop_.dt : -prop_.dt;
  auto& im = *impl_;

  if (im.structured) {
    const Layout& L = im.lay;
    const int nc = L.n_spin * L.n_ptr;
    // position-major blocks of nc entries; transform pointer q -> momentum
    std::vector<cplx> full(static_cast<std::size_t>(L.n_pos) * nc);
    for (int j = 0; j < L.n_pos; ++j)
      for (int s = 0; s < L.n_spin; ++s) {
        const Eigen::Index off = (static_cast<Eigen::Index>(j) * L.n_spin + s) * L.n_ptr;
        if (im.pointer) {
          const Vector k = im.pointer->forward(amp.segment(off, L.n_ptr));
          std::copy(k.data(), k.data() + L.n_ptr, full.begin() + off);
        } else {
          std::copy(amp.data() + off, amp.data() + off + L.n_ptr, full.begin() + off);
        }
      }
    std::vector<double> weight(nc, 0.0);
    double total = 0.0;
    for (int j = 0; j < L.n_pos; ++j)
      for (int c = 0; c < nc; ++c) weight[c] += std::norm(full[static_cast<std::size_t>(j) * nc + c]);
    for (double w : weight) total += w;
    std::vector<int> kept;
    for (int c = 0; c < nc; ++c)
      if (weight[c] > kChannelPrune * total || nc == 1) kept.push_back(c);
    if (kept.empty()) return;
    if (!im.evolver || kept != im.kept) {
      std::vector<std::vector<cplx>> rows;
      rows.reserve(kept.size());
      for (int c : kept) rows.push_back(im.coeffs[c]);
      im.evolver.emplace(h.space[0].grid(), im.base, im.terms, std::move(rows), prop_.dt);
      im.kept = kept;
    }
    const std::size_t nk = kept.size();
    std::vector<cplx> packed(static_cast<std::size_t>(L.n_pos) * nk);
    for (int j = 0; j < L.n_pos; ++j)
      for (std::size_t c = 0; c < nk; ++c)
        packed[j * nk + c] = full[static_cast<std::size_t>(j) * nc + kept[c]];
    for (long s = 0; s < steps; ++s) im.evolver->step(packed, t_from + s * sdt, sdt);
    std::fill(full.begin(), full.end(), cplx(0.0));
    for (int j = 0; j < L.n_pos; ++j)
      for (std::size_t c = 0; c < nk; ++c)
        full[static_cast<std::size_t>(j) * nc + kept[c]] = packed[j * nk + c];
    for (int j = 0; j < L.n_pos; ++j)
      for (int s = 0; s < L.n_spin; ++s) {
        const Eigen::Index off = (static_cast<Eigen::Index>(j) * L.n_spin + s) * L.n_ptr;
        Eigen::Map<const Vector> blk(full.data() + off, L.n_ptr);
        amp.segment(off, L.n_ptr) = im.pointer ? im.pointer->inverse(blk) : Vector(blk);
      }
    return;
  }

  const bool time_dependent_op = h.interaction && h.interaction->schedule;
  const int dim = dimension(h.space);
  for (long s = 0; s < steps; ++s) {
    const double tm = t_from + (s + 0.5) * sdt;
    std::vector<double> key;
    for (const auto& r : h.region_terms) key.push_back(r.window.contains(tm));
    if (h.larmor) key.push_back(h.larmor->window.contains(tm));
    if (h.interaction) key.push_back(h.interaction->profile(tm));
    if (time_dependent_op) key.push_back(tm);
    const bool fresh = !im.cache_valid || key != im.cached_key || sdt != im.cached_dt ||
                       (time_dependent_op && h.interaction->profile(tm) != 0.0);
    if (fresh) {
      const Matrix H = assemble(h, tm).entries();
      if (prop_.method == PropagationMethod::dense_exponential) {
        if (h.hermitian()) {
          Eigen::SelfAdjointEigenSolver<Matrix> es(H);
          if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed in dense step");
          Vector ph(dim);
          for (int a = 0; a < dim; ++a) ph(a) = std::polar(1.0, -sdt * es.eigenvalues()(a));
          im.expo = es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
        } else {
          im.expo = (cplx(0.0, -sdt) * H).exp();
        }
      } else {
        const Matrix I = Matrix::Identity(dim, dim);
        const cplx ih(0.0, 0.5 * sdt);
        im.lu.compute(I + ih * H);
        const double rc = im.lu.rcond();
        if (!(rc > 1e-14)) {
          std::ostringstream os;
          os << "Cayley solve is singular (condition estimate " << (rc > 0 ? 1.0 / rc : INFINITY)
             << ")";
          throw NumericalError(os.str());
        }
        im.rhs = I - ih * H;
      }
      im.cached_key = key;
      im.cached_dt = sdt;
      im.cache_valid = true;
    }
    if (prop_.method == PropagationMethod::dense_exponential)
      amp = im.expo * amp;
    else
      amp = im.lu.solve(im.rhs * amp);
  }
  if (!amp.allFinite()) throw NumericalError("evolution produced non-finite amplitudes");
}

QuantumState evolve(const QuantumState& state, const Propagator& prop, double t_from,
                    double t_to) {
  Evolution ev(prop);
  return ev.advance(state, t_from, t_to);
}

QuantumState evolve_free(const QuantumState& state, const Propagator& prop, double t_from,
                         double t_to) {
  Propagator p = prop;
  p.hamiltonian = prop.hamiltonian.free_part();
  return evolve(state, p, t_from, t_to);
}

Matrix propagator_matrix(const Propagator& prop, double t_from, double t_to) {
  const int dim = dimension(prop.hamiltonian.space);
  Evolution ev(prop);
  Matrix u(dim, dim);
  for (int c = 0; c < dim; ++c) {
    Vector e = Vector::Zero(dim);
    e(c) = 1.0;
    ev.advance(e, t_from, t_to);
    u.col(c) = e;
  }
  return u;
}

OperatorMatrix heisenberg_conjugate(const OperatorMatrix& op, const Propagator& prop, double t_f,
                                    double t) {
  Propagator p = prop;
  p.hamiltonian = prop.hamiltonian.free_part();
  if (op.space() != p.hamiltonian.space)
    throw StructuralError("operator space does not match the Hamiltonian");
  const Matrix u = propagator_matrix(p, t, t_f);
  Matrix m = u * op.entries() * u.adjoint();
  const bool herm = op.hermitian() && p.hamiltonian.hermitian();
  if (herm) m = (0.5 * (m + m.adjoint())).eval();
  return {op.space(), std::move(m), herm};
}

}  // namespace weaktime
