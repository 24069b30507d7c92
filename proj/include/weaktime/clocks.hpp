#pragma once
// Perturbative clocks: a small real potential, imaginary potential or Larmor
// field is switched on in a region during the window, and the time spent there
// is read off from the first-order change of the final state. Each method
// sweeps a ladder of strengths and extrapolates the finite-difference readout
// to zero strength.

#include <optional>
#include <string>
#include <vector>

#include "weaktime/sojourn.hpp"

namespace weaktime {

enum class ClockMethod { real_potential, imaginary_potential, larmor };

const char* to_string(ClockMethod m);

struct ClockConfig {
  ClockMethod method = ClockMethod::real_potential;
  std::vector<double> strengths;  // strictly decreasing, positive
  Region region{0.0, 1.0};
  Setup setup;  // system propagator (position only) and window
  int threads = 1;
};

// {8e, 4e, 2e, e} with e = 1e-3 / (t_f - t_i): first-order phase ~ 1e-3.
std::vector<double> default_strengths(double window_length);

struct Extrapolation {
  cplx value;
  double order = 0.0;     // fitted convergence order; NaN when the data are exact
  double residual = 0.0;  // |last two Richardson diagonal entries|
};

// Polynomial extrapolation in g^p to g = 0 (Neville). p = 2 for central
// differences, p = 1 for one-sided ones.
Extrapolation extrapolate_to_zero(const std::vector<double>& g, const std::vector<cplx>& f, int p);

struct SweepPoint {
  double strength;
  cplx readout;  // finite-difference time estimate at this strength
  cplx cross;    // same quantity by the second route
};

struct SweepRecord {
  ClockMethod method;
  std::string postselection;
  std::vector<SweepPoint> points;
  Extrapolation direct;
  Extrapolation cross;
  bool flagged = false;  // convergence order outside [0.8, 2.5]
  std::string note;

  // Real part of the extrapolated direct readout: the clock's time.
  double time() const { return direct.value.real(); }
};

bool order_accepted(double order);

// chi: postselection state at t_f on the position space; nullopt means no
// postselection (the unperturbed final state is used).
SweepRecord clock_real_potential(const ClockConfig& cfg, const QuantumState& psi0,
                                 const std::optional<QuantumState>& chi,
                                 const std::string& label = "none");
SweepRecord clock_imaginary_potential(const ClockConfig& cfg, const QuantumState& psi0,
                                      const std::optional<QuantumState>& chi,
                                      const std::string& label = "none");
// psi0 and chi are spatial; the spin starts in |+x>.
SweepRecord clock_larmor(const ClockConfig& cfg, const QuantumState& psi0,
                         const std::optional<QuantumState>& chi, const std::string& label = "none");

// -d/dGamma ||Phi(Gamma)||^2 at Gamma = 0, one-sided with order-1 Richardson.
Extrapolation absorption_dwell_time(const ClockConfig& cfg, const QuantumState& psi0);

struct LinearFit {
  double slope;
  double intercept;
  double max_residual;
};

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Unconditioned <sigma_y> at each Larmor strength.
std::vector<double> larmor_spin_y(const ClockConfig& cfg, const QuantumState& psi0);

}  // namespace weaktime
