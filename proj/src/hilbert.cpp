#include "weaktime/hilbert.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "weaktime/error.hpp"
#include "weaktime/kernels.hpp"

namespace weaktime {

Grid::Grid(int n_points, double x_min, double x_max)
    : n_(n_points), x_min_(x_min), x_max_(x_max), dx_(0.0) {
  if (n_points < 3) throw ParameterError("grid needs at least 3 points");
  if (!(x_max > x_min)) throw ParameterError("grid requires x_max > x_min");
  dx_ = (x_max - x_min) / (n_points - 1);
}

std::vector<double> Grid::points() const {
  std::vector<double> xs(n_);
  for (int j = 0; j < n_; ++j) xs[j] = x(j);
  return xs;
}

// Spin factors carry a placeholder grid so that FactorSpace stays a value type.
FactorSpace FactorSpace::position(const Grid& grid) { return {FactorKind::position, grid}; }
FactorSpace FactorSpace::spin2() { return {FactorKind::spin2, Grid(3, 0.0, 1.0)}; }
FactorSpace FactorSpace::pointer(const Grid& grid) { return {FactorKind::pointer, grid}; }

int FactorSpace::dimension() const { return kind_ == FactorKind::spin2 ? 2 : grid_.size(); }

const Grid& FactorSpace::grid() const {
  if (kind_ == FactorKind::spin2) throw StructuralError("spin factor has no grid");
  return grid_;
}

double FactorSpace::measure() const { return kind_ == FactorKind::spin2 ? 1.0 : grid_.dx(); }

std::string FactorSpace::label() const {
  switch (kind_) {
    case FactorKind::position: return "position[" + std::to_string(grid_.size()) + "]";
    case FactorKind::spin2: return "spin2";
    case FactorKind::pointer: return "pointer[" + std::to_string(grid_.size()) + "]";
  }
  return "?";
}

int dimension(const Space& space) {
  int d = 1;
  for (const auto& f : space) d *= f.dimension();
  return d;
}

double measure(const Space& space) {
  double m = 1.0;
  for (const auto& f : space) m *= f.measure();
  return m;
}

std::string describe(const Space& space) {
  std::ostringstream os;
  for (std::size_t i = 0; i < space.size(); ++i) os << (i ? " x " : "") << space[i].label();
  return os.str();
}

int find_factor(const Space& space, FactorKind kind) {
  for (std::size_t i = 0; i < space.size(); ++i)
    if (space[i].kind() == kind) return static_cast<int>(i);
  return -1;
}

QuantumState::QuantumState(Space space, Vector amplitudes, double time)
    : space_(std::move(space)), amplitudes_(std::move(amplitudes)), time_(time) {
  if (space_.empty()) throw StructuralError("state needs at least one factor");
  if (amplitudes_.size() != dimension(space_))
    throw StructuralError("amplitude count " + std::to_string(amplitudes_.size()) +
                          " does not match " + describe(space_));
}

double QuantumState::norm() const { return std::sqrt(std::max(0.0, inner_product(*this, *this).real())); }

QuantumState QuantumState::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("cannot normalize a null state");
  return {space_, amplitudes_ / n, time_};
}

cplx inner_product(const QuantumState& a, const QuantumState& b) {
  if (a.space() != b.space())
    throw StructuralError("inner product between " + describe(a.space()) + " and " +
                          describe(b.space()));
  const auto& k = kernels::active();
  return k.dot(a.amplitudes().data(), b.amplitudes().data(), a.amplitudes().size()) *
         measure(a.space());
}

QuantumState tensor_product(const QuantumState& a, const QuantumState& b) {
  Space space = a.space();
  space.insert(space.end(), b.space().begin(), b.space().end());
  const auto na = a.amplitudes().size();
  const auto nb = b.amplitudes().size();
  Vector amp(na * nb);
  for (Eigen::Index i = 0; i < na; ++i) amp.segment(i * nb, nb) = a.amplitudes()(i) * b.amplitudes();
  return {std::move(space), std::move(amp), a.time()};
}

OperatorMatrix::OperatorMatrix(Space space, Matrix entries, bool hermitian)
    : space_(std::move(space)), entries_(std::move(entries)), hermitian_(hermitian) {
  const int d = dimension(space_);
  if (entries_.rows() != d || entries_.cols() != d)
    throw StructuralError("operator of size " + std::to_string(entries_.rows()) + "x" +
                          std::to_string(entries_.cols()) + " on " + describe(space_));
  if (hermitian_ && hermiticity_defect() >= 1e-10)
    throw ContractError("operator flagged Hermitian has defect " +
                        std::to_string(hermiticity_defect()));
}

OperatorMatrix OperatorMatrix::identity(const Space& space) {
  const int d = dimension(space);
  return {space, Matrix::Identity(d, d), true};
}

OperatorMatrix OperatorMatrix::diagonal(const Space& space, const Vector& diag, bool hermitian) {
  return {space, diag.asDiagonal().toDenseMatrix(), hermitian};
}

double OperatorMatrix::hermiticity_defect() const {
  return (entries_ - entries_.adjoint()).cwiseAbs().maxCoeff();
}

bool OperatorMatrix::is_diagonal(double tol) const {
  for (Eigen::Index j = 0; j < entries_.cols(); ++j)
    for (Eigen::Index i = 0; i < entries_.rows(); ++i)
      if (i != j && std::abs(entries_(i, j)) > tol) return false;
  return true;
}

QuantumState OperatorMatrix::apply(const QuantumState& state) const {
  if (state.space() != space_)
    throw StructuralError("operator on " + describe(space_) + " applied to state on " +
                          describe(state.space()));
  return {space_, entries_ * state.amplitudes(), state.time()};
}

OperatorMatrix OperatorMatrix::operator*(const OperatorMatrix& rhs) const {
  if (rhs.space_ != space_) throw StructuralError("operator product across different spaces");
  return {space_, entries_ * rhs.entries_, false};
}

Region::Region(double x_lo, double x_hi) : lo_(x_lo), hi_(x_hi) {
  if (!(x_lo < x_hi)) throw ParameterError("region requires x_lo < x_hi");
}

Region Region::whole(const Grid& grid) { return {grid.x_min(), grid.x_max() + grid.dx()}; }

std::vector<int> Region::indices(const Grid& grid) const {
  std::vector<int> idx;
  for (int j = 0; j < grid.size(); ++j)
    if (contains(grid.x(j))) idx.push_back(j);
  if (idx.empty()) {
    std::ostringstream os;
    os << "region [" << lo_ << ", " << hi_ << ") contains no grid point";
    throw EmptyRegionError(os.str());
  }
  return idx;
}

std::vector<double> Region::indicator(const Grid& grid) const {
  std::vector<double> ind(grid.size(), 0.0);
  for (int j : indices(grid)) ind[j] = 1.0;
  return ind;
}

OperatorMatrix projector(const Region& region, const Grid& grid) {
  const auto ind = region.indicator(grid);
  Vector diag(grid.size());
  for (int j = 0; j < grid.size(); ++j) diag(j) = ind[j];
  return OperatorMatrix::diagonal({FactorSpace::position(grid)}, diag, true);
}

OperatorMatrix tensor_extend(const OperatorMatrix& op, const Space& full_space) {
  const Space& sub = op.space();
  // Greedy in-order match of op's factors inside full_space.
  std::vector<int> where;
  std::size_t cursor = 0;
  for (const auto& f : sub) {
    while (cursor < full_space.size() && !(full_space[cursor] == f)) ++cursor;
    if (cursor == full_space.size())
      throw StructuralError("factor " + f.label() + " not found in " + describe(full_space));
    where.push_back(static_cast<int>(cursor++));
  }
  const int nf = static_cast<int>(full_space.size());
  std::vector<int> dims(nf), strides(nf);
  for (int i = nf - 1, s = 1; i >= 0; --i) {
    dims[i] = full_space[i].dimension();
    strides[i] = s;
    s *= dims[i];
  }
  std::vector<bool> in_op(nf, false);
  for (int w : where) in_op[w] = true;

  // Offsets contributed by op's own factors for each op-local index.
  const int d_op = op.size();
  std::vector<int> op_offset(d_op, 0);
  for (int a = 0; a < d_op; ++a) {
    int rem = a;
    for (int k = static_cast<int>(where.size()) - 1; k >= 0; --k) {
      const int d = dims[where[k]];
      op_offset[a] += (rem % d) * strides[where[k]];
      rem /= d;
    }
  }
  // Offsets of the complementary (identity) factors.
  std::vector<int> rest_offset{0};
  for (int i = 0; i < nf; ++i) {
    if (in_op[i]) continue;
    std::vector<int> next;
    next.reserve(rest_offset.size() * dims[i]);
    for (int base : rest_offset)
      for (int v = 0; v < dims[i]; ++v) next.push_back(base + v * strides[i]);
    rest_offset = std::move(next);
  }

  const int d_full = dimension(full_space);
  Matrix m = Matrix::Zero(d_full, d_full);
  const Matrix& e = op.entries();
  for (int b = 0; b < d_op; ++b)
    for (int a = 0; a < d_op; ++a) {
      const cplx v = e(a, b);
      if (v == cplx(0.0)) continue;
      for (int r : rest_offset) m(op_offset[a] + r, op_offset[b] + r) = v;
    }
  return {full_space, std::move(m), op.hermitian()};
}

QuantumState gaussian_packet(const Grid& grid, double x0, double sigma, double k0) {
  if (!(sigma > 0.0)) throw ParameterError("packet width must be positive");
  if (sigma <= 3.0 * grid.dx()) throw ParameterError("packet width not resolved (sigma <= 3 dx)");
  Vector amp(grid.size());
  for (int j = 0; j < grid.size(); ++j) {
    const double x = grid.x(j);
    const double u = x - x0;
    amp(j) = std::exp(-u * u / (4.0 * sigma * sigma)) * std::polar(1.0, k0 * x);
  }
  return QuantumState({FactorSpace::position(grid)}, std::move(amp)).normalized();
}

double packet_edge_clearance(const Grid& grid, double x0, double sigma) {
  return std::min(x0 - grid.x_min(), grid.x_max() - x0) / sigma;
}

Eigensystem eigendecompose(const OperatorMatrix& op) {
  if (!op.hermitian()) throw ContractError("eigendecompose requires a Hermitian operator");
  Eigensystem es;
  const double w = std::sqrt(measure(op.space()));
  const Matrix& m = op.entries();
  if (m.imag().cwiseAbs().maxCoeff() == 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m.real());
    if (solver.info() != Eigen::Success) throw NumericalError("eigensolver did not converge");
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      es.values.push_back(solver.eigenvalues()(i));
      es.vectors.emplace_back(op.space(), solver.eigenvectors().col(i).cast<cplx>() / w);
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
    if (solver.info() != Eigen::Success) throw NumericalError("eigensolver did not converge");
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      es.values.push_back(solver.eigenvalues()(i));
      es.vectors.emplace_back(op.space(), solver.eigenvectors().col(i) / w);
    }
  }
  return es;
}

OperatorMatrix kinetic_operator(const Grid& grid) {
  const int n = grid.size();
  const double inv = 1.0 / (grid.dx() * grid.dx());
  Matrix k = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    k(j, j) = 2.0 * inv;
    if (j + 1 < n) k(j, j + 1) = k(j + 1, j) = -inv;
  }
  return {{FactorSpace::position(grid)}, std::move(k), true};
}

OperatorMatrix position_operator(const Grid& grid) {
  Vector d(grid.size());
  for (int j = 0; j < grid.size(); ++j) d(j) = grid.x(j);
  return OperatorMatrix::diagonal({FactorSpace::position(grid)}, d, true);
}

OperatorMatrix sigma_x() {
  Matrix m(2, 2);
  m << 0.0, 1.0, 1.0, 0.0;
  return {{FactorSpace::spin2()}, m, true};
}

OperatorMatrix sigma_y() {
  Matrix m(2, 2);
  m << 0.0, cplx(0.0, -1.0), cplx(0.0, 1.0), 0.0;
  return {{FactorSpace::spin2()}, m, true};
}

OperatorMatrix sigma_z() {
  Matrix m(2, 2);
  m << 1.0, 0.0, 0.0, -1.0;
  return {{FactorSpace::spin2()}, m, true};
}

QuantumState spin_state(cplx up, cplx down) {
  Vector v(2);
  v << up, down;
  return QuantumState({FactorSpace::spin2()}, v).normalized();
}

QuantumState cell_state(const Grid& grid, int j) {
  if (j < 0 || j >= grid.size()) throw ParameterError("cell index outside grid");
  Vector v = Vector::Zero(grid.size());
  v(j) = 1.0 / std::sqrt(grid.dx());
  return {{FactorSpace::position(grid)}, std::move(v)};
}

PointerBasis::PointerBasis(const Grid& grid) : grid_(grid) {
  const int n = grid.size();
  const double span = n * grid.dx();  // periodic length
  k_.resize(n);
  for (int k = 0; k < n; ++k) {
    const int m = k < n / 2 ? k : k - n;
    k_[k] = 2.0 * std::numbers::pi * m / span;
  }
  f_.resize(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int j = 0; j < n; ++j) {
    const double q = grid.x(j);
    for (int k = 0; k < n; ++k) f_(k, j) = std::polar(scale, -k_[k] * q);
  }
}

Vector PointerBasis::forward(const Vector& q_values) const { return f_ * q_values; }
Vector PointerBasis::inverse(const Vector& k_values) const { return f_.adjoint() * k_values; }

OperatorMatrix PointerBasis::momentum_operator() const {
  Vector k(grid_.size());
  for (int i = 0; i < grid_.size(); ++i) k(i) = k_[i];
  Matrix m = f_.adjoint() * k.asDiagonal() * f_;
  m = 0.5 * (m + m.adjoint()).eval();
  return {{FactorSpace::pointer(grid_)}, std::move(m), true};
}

OperatorMatrix PointerBasis::position_operator() const {
  Vector d(grid_.size());
  for (int j = 0; j < grid_.size(); ++j) d(j) = grid_.x(j);
  return OperatorMatrix::diagonal({FactorSpace::pointer(grid_)}, d, true);
}

QuantumState pointer_gaussian(const Grid& grid, double width) {
  if (!(width > 0.0)) throw ParameterError("pointer width must be positive");
  Vector amp(grid.size());
  for (int j = 0; j < grid.size(); ++j) {
    const double q = grid.x(j);
    amp(j) = std::exp(-q * q / (4.0 * width * width));
  }
  return QuantumState({FactorSpace::pointer(grid)}, std::move(amp)).normalized();
}

}  // namespace weaktime
