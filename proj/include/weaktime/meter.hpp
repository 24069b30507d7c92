#pragma once
// Von Neumann meter: the system is coupled to a pointer through
// G h(t) pi (x) A and the pointer position is read after t_f.
//
// The pointer axis is periodic with pi = F^dagger diag(k) F, so translations
// generated by pi are exact on the grid. The meter Hamiltonian is zero.

#include <optional>
#include <string>
#include <vector>

#include "weaktime/clocks.hpp"
#include "weaktime/sojourn.hpp"

namespace weaktime {

struct PointerSpec {
  Grid grid;
  double width = 1.0;  // Delta q_i, standard deviation of |phi_i(q)|^2

  // Symmetric grid of n points spanning 16 max(width, reach).
  static PointerSpec make(double width, double reach, int n = 256);
  QuantumState initial_state() const { return pointer_gaussian(grid, width); }
};

struct MeterRun {
  PointerSpec pointer;
  double coupling = 0.0;
  std::string observable;
  QuantumState initial;      // psi0(t_i) (x) phi_i
  QuantumState final_state;  // Phi(t_f)
  QuantumState free_final;   // psi0(t_f), system only

  int system_dimension() const;
  int pointer_dimension() const { return pointer.grid.size(); }
};

// Literal evolution on system (x) pointer; setup.propagator carries H_Sigma.
// Throws AliasingError when more than 1e-9 of the final pointer mass lies
// within one width of either edge.
MeterRun run_meter(const PointerSpec& spec, const Setup& setup, const QuantumState& psi0,
                   const OperatorMatrix& a, double coupling,
                   std::optional<CouplingProfile> profile = {});

// Postselection for pointer statistics: a system state, or a projector given
// by its diagonal (1 = keep) over the system basis.
struct Postselector {
  std::string label;
  std::optional<QuantumState> state;
  std::vector<double> mask;

  static Postselector onto(const std::string& label, QuantumState chi);
  static Postselector projector(const std::string& label, std::vector<double> mask);
};

struct PointerDistribution {
  std::vector<double> f;  // density over the pointer grid, sum f dq = 1
  double mean = 0.0;
  double variance = 0.0;
  double probability = 1.0;  // postselection probability P_n(G)
  std::string label;
};

PointerDistribution pointer_distribution(const MeterRun& run,
                                         const std::optional<Postselector>& post = {},
                                         double floor = kOverlapFloor);

// Sum over q of |<psi0(t_f), q|Phi>|^2 dq.
double survival_probability(const MeterRun& run);

// Local maxima of f above fraction of the global maximum.
int count_peaks(const std::vector<double>& f, double fraction = 0.01);

enum class MeterPicture { interaction, schrodinger };

// Meter for the l-th power of the sojourn operator. The interaction picture
// evaluates exp(-i G pi t^l) Phi0 through the eigenvectors of t; the
// Schroedinger picture steps H0 + G h(t) pi (x) t(t)^l literally with a dense
// propagator and is meant for small grids.
MeterRun run_moment_meter(const PointerSpec& spec, const SojournOperator& t,
                          const QuantumState& psi0, int l, double coupling,
                          MeterPicture picture = MeterPicture::interaction);

struct IdentityReport {
  cplx direct;          // <chi|t^l|psi0>/<chi|psi0> or A_w^(n)
  Extrapolation route;  // finite-difference route
  double discrepancy;   // |route.value - direct|
};

// First form of the pointer identity: d/dG <chi,pi=0|q|Phi>/<chi,pi=0|Phi0>
// over the ladder (central differences in G), from literal meter runs of A.
IdentityReport pointer_identity_check(const PointerSpec& spec, const Setup& setup,
                                      const QuantumState& psi0, const OperatorMatrix& a,
                                      const IntegratedOperator& ia, const QuantumState& chi,
                                      const std::vector<double>& ladder);

// <chi,pi|t^l|Phi0>/<chi,pi|Phi0> against (i/pi d/dG)^l <chi,pi|Phi>/<chi,pi|Phi0>
// at the smallest nonzero pointer momentum, for the first-moment meter.
IdentityReport moment_identity_check(const PointerSpec& spec, const SojournOperator& t,
                                     const QuantumState& psi0, const QuantumState& chi, int l,
                                     const std::vector<double>& ladder);

// Conditional mean shift / G extrapolated to G = 0 for the l-th moment meter.
struct MomentMeterResult {
  std::vector<double> couplings;
  std::vector<double> shifts;  // <q>^(n) at each coupling
  std::vector<double> probabilities;  // P_n(G) at each coupling
  Extrapolation value;         // lim shift / G
};

MomentMeterResult moment_meter_sweep(const PointerSpec& spec, const SojournOperator& t,
                                     const QuantumState& psi0, int l,
                                     const std::vector<double>& ladder,
                                     const std::optional<Postselector>& post = {});
// One run per coupling, read out under each postselection in turn.
std::vector<MomentMeterResult> moment_meter_sweep(const PointerSpec& spec, const SojournOperator& t,
                                                  const QuantumState& psi0, int l,
                                                  const std::vector<double>& ladder,
                                                  const std::vector<std::optional<Postselector>>& posts);

}  // namespace weaktime
