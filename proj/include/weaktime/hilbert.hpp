#pragma once
// Discretized Hilbert-space primitives: uniform grids, factor spaces, states,
// dense operators and spatial regions.
//
// Units throughout the library: hbar = 1, m = 1/2, so the kinetic operator is
// -d^2/dx^2 and a plane wave exp(ikx) has energy k^2 and group velocity 2k.
//
// Composite spaces are ordered position (x) spin (x) pointer, row-major: the
// last factor varies fastest. The discrete inner product carries the measure
// dx of every continuous factor, so amplitudes approximate wavefunction values.

#include <Eigen/Dense>
#include <complex>
#include <span>
#include <string>
#include <vector>

namespace weaktime {

using cplx = std::complex<double>;
using Vector = Eigen::VectorXcd;
using Matrix = Eigen::MatrixXcd;

class Grid {
 public:
  Grid(int n_points, double x_min, double x_max);

  int size() const { return n_; }
  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  double dx() const { return dx_; }
  double x(int j) const { return x_min_ + j * dx_; }
  std::vector<double> points() const;

  bool operator==(const Grid&) const = default;

 private:
  int n_;
  double x_min_;
  double x_max_;
  double dx_;
};

enum class FactorKind { position, spin2, pointer };

class FactorSpace {
 public:
  static FactorSpace position(const Grid& grid);
  static FactorSpace spin2();
  static FactorSpace pointer(const Grid& grid);

  FactorKind kind() const { return kind_; }
  int dimension() const;
  // Throws StructuralError for spin2.
  const Grid& grid() const;
  // dx for continuous factors, 1 for spin.
  double measure() const;
  std::string label() const;

  bool operator==(const FactorSpace&) const = default;

 private:
  FactorSpace(FactorKind kind, Grid grid) : kind_(kind), grid_(grid) {}
  FactorKind kind_;
  Grid grid_;
};

using Space = std::vector<FactorSpace>;

int dimension(const Space& space);
double measure(const Space& space);
std::string describe(const Space& space);
// Index of the first factor of the given kind, or -1.
int find_factor(const Space& space, FactorKind kind);

class QuantumState {
 public:
  QuantumState(Space space, Vector amplitudes, double time = 0.0);

  const Space& space() const { return space_; }
  const Vector& amplitudes() const { return amplitudes_; }
  double time() const { return time_; }
  int size() const { return static_cast<int>(amplitudes_.size()); }

  double norm() const;
  QuantumState normalized() const;
  QuantumState at_time(double t) const { return {space_, amplitudes_, t}; }

 private:
  Space space_;
  Vector amplitudes_;
  double time_;
};

// <a|b> = sum conj(a_k) b_k * prod(dx)
cplx inner_product(const QuantumState& a, const QuantumState& b);

QuantumState tensor_product(const QuantumState& a, const QuantumState& b);

class OperatorMatrix {
 public:
  OperatorMatrix(Space space, Matrix entries, bool hermitian);

  static OperatorMatrix identity(const Space& space);
  static OperatorMatrix diagonal(const Space& space, const Vector& diag, bool hermitian);

  const Space& space() const { return space_; }
  const Matrix& entries() const { return entries_; }
  bool hermitian() const { return hermitian_; }
  int size() const { return static_cast<int>(entries_.rows()); }

  // max |M - M^dagger|
  double hermiticity_defect() const;
  bool is_diagonal(double tol = 0.0) const;

  QuantumState apply(const QuantumState& state) const;
  OperatorMatrix operator*(const OperatorMatrix& rhs) const;

 private:
  Space space_;
  Matrix entries_;
  bool hermitian_;
};

// Half-open interval [x_lo, x_hi) on the position axis.
class Region {
 public:
  Region(double x_lo, double x_hi);
  // Covers every point of the grid, including x_max.
  static Region whole(const Grid& grid);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  bool contains(double x) const { return lo_ <= x && x < hi_; }
  // Throws EmptyRegionError when no grid point falls inside.
  std::vector<int> indices(const Grid& grid) const;
  std::vector<double> indicator(const Grid& grid) const;

 private:
  double lo_;
  double hi_;
};

OperatorMatrix projector(const Region& region, const Grid& grid);

// Kronecker product with identities on the factors of full_space absent from
// op.space(); op's factors must appear in full_space in the same order.
OperatorMatrix tensor_extend(const OperatorMatrix& op, const Space& full_space);

// Normalized exp(-(x-x0)^2 / (4 sigma^2)) exp(i k0 x).
QuantumState gaussian_packet(const Grid& grid, double x0, double sigma, double k0);

// Distance from the packet centre to the nearer wall in units of sigma.
double packet_edge_clearance(const Grid& grid, double x0, double sigma);

struct Eigensystem {
  std::vector<double> values;         // ascending
  std::vector<QuantumState> vectors;  // orthonormal under inner_product
};

Eigensystem eigendecompose(const OperatorMatrix& op);

// -d^2/dx^2 on the grid with hard walls beyond both ends.
OperatorMatrix kinetic_operator(const Grid& grid);
OperatorMatrix position_operator(const Grid& grid);

// Pauli matrices on spin2, basis (up, down) with sigma_z = diag(+1, -1).
OperatorMatrix sigma_x();
OperatorMatrix sigma_y();
OperatorMatrix sigma_z();
QuantumState spin_state(cplx up, cplx down);

// Normalized indicator of one position cell.
QuantumState cell_state(const Grid& grid, int j);

// Discrete Fourier machinery of the periodic pointer axis. The momentum
// operator is F^dagger diag(k) F with F the unitary DFT, so exp(-i a pi)
// translates band-limited pointer states by a.
class PointerBasis {
 public:
  explicit PointerBasis(const Grid& grid);

  const Grid& grid() const { return grid_; }
  // Wavenumbers in DFT order: m = 0, 1, ..., N/2-1, -N/2, ..., -1.
  const std::vector<double>& wavenumbers() const { return k_; }
  // Index of the zero-momentum component.
  int zero_index() const { return 0; }

  Vector forward(const Vector& q_values) const;  // q -> pi amplitudes
  Vector inverse(const Vector& k_values) const;  // pi -> q amplitudes
  const Matrix& forward_matrix() const { return f_; }

  OperatorMatrix momentum_operator() const;
  OperatorMatrix position_operator() const;

 private:
  Grid grid_;
  std::vector<double> k_;
  Matrix f_;
};

// Normalized Gaussian pointer state centred at q = 0 with standard deviation
// of |phi(q)|^2 equal to width.
QuantumState pointer_gaussian(const Grid& grid, double width);

}  // namespace weaktime
