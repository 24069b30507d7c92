#pragma once
// Weak values, dwell times and the sojourn-time operator.
//
// States enter in the Heisenberg representation at t_f: a state whose
// time() differs from window.t_f is first carried there by the free
// propagator. The time integral of U0(t_f,t) A U0(t_f,t)^dagger h(t) is
// evaluated with the trapezoid rule on slices aligned with propagator steps.
// For a Hermitian, time-independent H0 the slice propagator is diagonalized
// once and the sum is done in closed form, so the result equals the discrete
// trapezoid sum to rounding.

#include <optional>
#include <string>
#include <vector>

#include "weaktime/dynamics.hpp"

namespace weaktime {

struct Setup {
  Propagator propagator;  // free system evolution
  Window window;
  int n_slices = 0;  // 0: one slice per propagator step

  double length() const { return window.length(); }
  int slices() const;
  long steps_per_slice() const;
};

// Default overlap floor relative to ||psi0||.
inline constexpr double kOverlapFloor = 1e-8;
// Conditional times beyond this multiple of the window are flagged.
inline constexpr double kAnomalyFactor = 10.0;

struct IntegratedOperator {
  OperatorMatrix base;
  Setup setup;
  CouplingProfile profile;
  OperatorMatrix matrix;
};

struct SojournOperator {
  Region region;
  IntegratedOperator integrated;
  OperatorMatrix matrix;  // (t_f - t_i) I_H(P_Omega)

  double length() const { return integrated.setup.length(); }
};

struct WeakValueResult {
  cplx value;
  std::string observable;
  std::string postselection;  // empty when unconditioned
  Window window;
  bool anomalous = false;
  bool negative = false;
};

// Carries state to the Heisenberg reference time t_f of setup.
QuantumState at_final(const QuantumState& state, const Setup& setup);

// Profile defaults to rectangular over the window. Impulsive profiles reduce
// to a single node at the end of the impulse.
IntegratedOperator integrate_heisenberg(const OperatorMatrix& a, const Setup& setup,
                                        std::optional<CouplingProfile> profile = {});

// I_H(A) psi_final without forming the matrix: back-propagate to t_i, then
// march forward accumulating the trapezoid sum.
Vector integrated_apply(const OperatorMatrix& a, const Setup& setup, const Vector& psi_final);

// Trapezoid quadrature of <psi(t)|A|psi(t)> / (t_f - t_i) in the Schroedinger
// picture.
cplx schrodinger_average(const OperatorMatrix& a, const Setup& setup, const QuantumState& psi0);

WeakValueResult weak_value(const IntegratedOperator& a, const QuantumState& psi0);

// <chi|I_H(A)|psi0> / <chi|psi0>; chi taken at t_f as given.
WeakValueResult conditional_weak_value(const IntegratedOperator& a, const QuantumState& psi0,
                                       const QuantumState& chi, double floor = kOverlapFloor,
                                       const std::string& label = "custom");

SojournOperator sojourn_matrix(const Region& region, const Setup& setup);

double dwell_time(const QuantumState& psi0, const Region& region, const Setup& setup);
double dwell_time(const SojournOperator& t, const QuantumState& psi0);

WeakValueResult conditional_dwell_time(const SojournOperator& t, const QuantumState& psi0,
                                       const QuantumState& chi, double floor = kOverlapFloor,
                                       const std::string& label = "custom");

// <chi|t^l|psi0>/<chi|psi0>, complex; the readout is its real part.
cplx moment_complex(const QuantumState& psi0, const QuantumState& chi, const SojournOperator& t,
                    int l, double floor = kOverlapFloor);
double moment(const QuantumState& psi0, const QuantumState& chi, const SojournOperator& t, int l,
              double floor = kOverlapFloor);

// Sum over cells of |t^(r)|^2 |psi0(r, t_f)|^2 dx with t^(r) the
// cell-postselected conditional time, built matrix-free.
double second_moment_position_integral(const QuantumState& psi0, const Region& region,
                                       const Setup& setup, double floor = kOverlapFloor);

struct CellSecondMoment {
  int cell;
  double weight;          // |psi0(r)|^2 dx
  double real_part_form;  // Re{<r|t^2|psi0>/<r|psi0>}
  double sandwich_form;   // <psi0|t P_r t|psi0>/<psi0|P_r|psi0>
};

CellSecondMoment second_moment_position_postselected(const QuantumState& psi0, int cell,
                                                     const SojournOperator& t,
                                                     double floor = kOverlapFloor);

// exp(-i lambda t) psi for the dense sojourn operator, by Taylor series.
Vector sojourn_exponential(const SojournOperator& t, const Vector& psi, double lambda);

// Unconditioned l = 2 moment assembled cell by cell from the lambda-derivative
// representation: Re{(i d/dlambda)^2 Phi(lambda, r) / Phi0(r)} weighted by
// |Phi0(r)|^2 dx, with a central second difference at step h.
double lambda_moment2(const SojournOperator& t, const QuantumState& psi0, double h,
                      double floor = kOverlapFloor);

}  // namespace weaktime
