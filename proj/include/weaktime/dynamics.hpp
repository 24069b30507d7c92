#pragma once
// Hamiltonian assembly and time evolution.
//
// Two propagators share one interface: a dense matrix exponential (the
// reference for small problems) and the Cayley form
// (I + iH dt/2)^-1 (I - iH dt/2) used on production grids. Time-dependent
// terms are frozen at each step midpoint, which realizes the time-ordered
// exponential to second order in dt.
//
// The Cayley stepper exploits structure: when every non-kinetic term is
// diagonal in position (x) spin-z (x) pointer-momentum, the problem splits into
// independent tridiagonal channels that are advanced together by the batched
// kernels. Anything else falls back to dense LU.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "weaktime/hilbert.hpp"

namespace weaktime {

struct Window {
  double t_i = 0.0;
  double t_f = 1.0;
  double length() const { return t_f - t_i; }
  // Strictly inside (t_i, t_f).
  bool contains(double t) const { return t_i < t && t < t_f; }
};

class CouplingProfile {
 public:
  // h(t) = 1/(t_f - t_i) on (t_i, t_f).
  static CouplingProfile rectangular(double t_i, double t_f);
  // Rectangle of unit area over the single step (t_hit - width, t_hit).
  static CouplingProfile impulsive(double t_hit, double width);

  double operator()(double t) const;
  double start() const { return start_; }
  double end() const { return end_; }
  bool is_impulsive() const { return impulsive_; }
  Window window() const { return {start_, end_}; }
  // Midpoint-rule integral of h over [t0, t1] with step dt.
  double integral(double t0, double t1, double dt) const;

 private:
  CouplingProfile(double s, double e, bool imp) : start_(s), end_(e), impulsive_(imp) {}
  double start_;
  double end_;
  bool impulsive_;
};

// f(t) * strength * P_region on the position factor, f the window indicator.
// Real strengths are the real-potential clock, imaginary ones the absorber.
struct RegionTerm {
  cplx strength;
  Region region;
  Window window;
};

// f(t) * (omega/2) sigma_z (x) P_region.
struct LarmorTerm {
  double omega = 0.0;
  Region region;
  Window window;
};

// G h(t) pi (x) A, pi the momentum of the pointer factor.
struct InteractionTerm {
  double coupling = 0.0;
  CouplingProfile profile = CouplingProfile::rectangular(0.0, 1.0);
  // A on the system factors (every factor except the pointer).
  std::optional<OperatorMatrix> system_operator;
  // Time-dependent A(t); overrides system_operator when set.
  std::function<OperatorMatrix(double)> schedule;

  OperatorMatrix operator_at(double t) const;
};

struct Hamiltonian {
  Space space;
  bool kinetic = true;
  std::vector<double> potential_real;  // V on the position grid, empty = 0
  std::vector<double> potential_imag;  // -Gamma/2 convention, empty = 0
  std::vector<RegionTerm> region_terms;
  std::optional<LarmorTerm> larmor;
  std::optional<InteractionTerm> interaction;

  // Same system Hamiltonian with every clock and interaction term removed.
  Hamiltonian free_part() const;
  bool hermitian() const;
  // Space without the pointer factor.
  Space system_space() const;
};

// Position-only Hamiltonian K + V with optional absorbing part.
Hamiltonian system_hamiltonian(const Grid& grid, std::vector<double> v_real = {},
                               std::vector<double> v_imag = {});

OperatorMatrix assemble(const Hamiltonian& h, double t);

enum class PropagationMethod { dense_exponential, implicit_step };

const char* to_string(PropagationMethod m);

struct Propagator {
  PropagationMethod method = PropagationMethod::implicit_step;
  double dt = 1e-3;
  Hamiltonian hamiltonian;
};

// Number of steps of size dt covering [t_from, t_to]; throws ParameterError
// if dt does not divide the interval within 1e-9 (relative to dt).
long step_count(double t_from, double t_to, double dt);

// Reusable stepper for one propagator; keeps factorizations and matrix
// exponentials between calls. Not safe for concurrent use.
class Evolution {
 public:
  explicit Evolution(Propagator prop);
  ~Evolution();
  Evolution(Evolution&&) noexcept;
  Evolution& operator=(Evolution&&) noexcept;

  const Propagator& propagator() const { return prop_; }
  // True when the Cayley stepper runs on independent tridiagonal channels.
  bool structured() const;

  QuantumState advance(const QuantumState& state, double t_from, double t_to);
  // In-place on raw amplitudes laid out over propagator().hamiltonian.space.
  void advance(Vector& amplitudes, double t_from, double t_to);

 private:
  struct Impl;
  Propagator prop_;
  std::unique_ptr<Impl> impl_;
};

// Steps from t_from to t_to (backwards when t_to < t_from).
QuantumState evolve(const QuantumState& state, const Propagator& prop, double t_from,
                    double t_to);

// As evolve with every clock and interaction term removed.
QuantumState evolve_free(const QuantumState& state, const Propagator& prop, double t_from,
                         double t_to);

// Dense U(t_to, t_from) built column by column.
Matrix propagator_matrix(const Propagator& prop, double t_from, double t_to);

// U0(t_f, t) op U0(t_f, t)^dagger under the free part of prop.
OperatorMatrix heisenberg_conjugate(const OperatorMatrix& op, const Propagator& prop,
                                    double t_f, double t);

// Advances a batch of independent position-space channels with the Cayley
// scheme. Channel c has Hamiltonian
//   K + diag(base) + sum_m envelope_m(t) * coefficient[c][m] * diag(profile_m).
// State layout is interleaved: amplitude j of channel c at index j * batch + c.
class ChannelEvolver {
 public:
  struct Term {
    std::vector<double> profile;
    std::function<double(double)> envelope;
  };

  ChannelEvolver(const Grid& grid, std::vector<cplx> base_diagonal, std::vector<Term> terms,
                 std::vector<std::vector<cplx>> coefficients, double dt);

  std::size_t batch() const { return coefficients_.size(); }
  const Grid& grid() const { return grid_; }
  double dt() const { return dt_; }

  void evolve(std::span<cplx> interleaved, double t_from, double t_to);
  // Single Cayley step from t to t + signed_dt.
  void step(std::span<cplx> interleaved, double t, double signed_dt);

 private:
  void refactor(const std::vector<double>& env, double signed_dt);

  Grid grid_;
  std::vector<cplx> base_;
  std::vector<Term> terms_;
  std::vector<std::vector<cplx>> coefficients_;
  double dt_;
  cplx off_diag_;  // -1/dx^2

  std::vector<double> cached_env_;
  double cached_dt_ = 0.0;
  bool cache_valid_ = false;
  std::vector<cplx> g_, m_, cp_, work_;
  cplx b_{};
  cplx h_{};
};

}  // namespace weaktime
