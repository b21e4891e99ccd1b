#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qst/rng.hpp"

namespace qst {

// Basis labels are 0-based throughout; the basis vector written |k> in
// physics notation with k = 1..d is stored at index k - 1.

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

/// Ordered subsystem dimensions. Amplitudes are laid out row-major over the
/// dims, leftmost subsystem slowest.
class SystemShape {
 public:
  SystemShape() = default;
  explicit SystemShape(std::vector<int> dims);
  SystemShape(std::initializer_list<int> dims) : SystemShape(std::vector<int>(dims)) {}

  static SystemShape qudits(int n, int d);

  const std::vector<int>& dims() const { return dims_; }
  int size() const { return static_cast<int>(dims_.size()); }
  int dim(int site) const;
  std::int64_t total() const { return total_; }

  /// Product of dims over `sites` (any order, must be valid).
  std::int64_t total_over(std::span<const int> sites) const;

  /// Shape restricted to the sorted `sites`.
  SystemShape restricted(std::span<const int> sites) const;

  /// Merges consecutive runs of subsystems: {2,2,2,2,2} with runs {1,2,2}
  /// becomes {2,4,4}.
  SystemShape grouped(std::span<const int> run_lengths) const;

  bool operator==(const SystemShape&) const = default;

 private:
  std::vector<int> dims_;
  std::int64_t total_ = 1;
};

/// Amplitude vector that is not required to be normalized.
struct StateVector {
  SystemShape shape;
  Vector amplitudes;

  double norm() const { return amplitudes.norm(); }
  bool is_normalized(double tol = 1e-12) const { return std::abs(norm() - 1.0) <= tol; }
};

class PureState {
 public:
  /// Throws ValidationError unless |amplitudes| is within 1e-12 of 1.
  PureState(SystemShape shape, Vector amplitudes);

  /// Rescales to unit norm; throws ValidationError for the zero vector.
  static PureState normalize(const StateVector& v);

  const SystemShape& shape() const { return shape_; }
  const Vector& amplitudes() const { return amplitudes_; }
  cplx operator[](std::int64_t i) const { return amplitudes_(i); }

  Matrix projector() const { return amplitudes_ * amplitudes_.adjoint(); }

 private:
  SystemShape shape_;
  Vector amplitudes_;
};

class DensityOperator {
 public:
  static constexpr double kTol = 1e-10;

  /// Validates Hermiticity, positivity and (when given) the trace, each to kTol.
  DensityOperator(SystemShape shape, Matrix matrix,
                  std::optional<double> declared_trace = 1.0);

  static DensityOperator from_pure(const PureState& psi);

  const SystemShape& shape() const { return shape_; }
  const Matrix& matrix() const { return matrix_; }
  cplx trace() const { return matrix_.trace(); }

 private:
  SystemShape shape_;
  Matrix matrix_;
};

class UnitaryMatrix {
 public:
  static constexpr double kTol = 1e-12;

  explicit UnitaryMatrix(Matrix m);
  static UnitaryMatrix identity(int dim);

  int dim() const { return static_cast<int>(matrix_.rows()); }
  const Matrix& matrix() const { return matrix_; }
  UnitaryMatrix adjoint() const;
  UnitaryMatrix operator*(const UnitaryMatrix& rhs) const;

 private:
  Matrix matrix_;
};

// Small helpers shared by every module.
double max_abs(const Matrix& m);
double hermiticity_defect(const Matrix& m);
double unitarity_defect(const Matrix& m);
Matrix hermitize(const Matrix& m);

Matrix kron(const Matrix& x, const Matrix& y);

/// Trace over every subsystem not in `keep`. Kept subsystems stay in
/// ascending index order. Throws IndexError on empty, duplicate or
/// out-of-range entries.
Matrix partial_trace(const Matrix& rho, const SystemShape& shape, std::span<const int> keep);
DensityOperator partial_trace(const DensityOperator& rho, std::span<const int> keep);

/// Tr over the complement of `keep` of |v><v|, without forming |v><v|.
Matrix reduced_density(const StateVector& v, std::span<const int> keep);
Matrix reduced_density(const PureState& psi, std::span<const int> keep);

/// Reorders subsystems: output subsystem k is input subsystem order[k].
StateVector permute_subsystems(const StateVector& v, std::span<const int> order);

/// Same reordering applied to both indices of an operator.
Matrix permute_operator(const Matrix& rho, const SystemShape& shape, std::span<const int> order);

/// (I x .. x U x .. x I) applied to the amplitudes. U need not be unitary.
Vector apply_local(const Vector& amplitudes, const SystemShape& shape, const Matrix& op, int site);
PureState apply_local_unitary(const PureState& psi, const UnitaryMatrix& u, int site);

/// Normalized complex Gaussian vector drawn from CounterRng(seed).
PureState haar_random_state(const SystemShape& shape, std::uint64_t seed);
/// Haar-distributed unitary via QR of a Ginibre matrix with phase fix.
UnitaryMatrix haar_unitary(int dim, CounterRng& rng);

/// Trace-orthogonal Hermitian basis of d x d matrices: identity, then the
/// symmetric, antisymmetric and diagonal generalized Gell-Mann families.
/// Non-identity members have Tr(O^2) = 2. For d = 2: I, X, Y, Z.
std::vector<Matrix> hermitian_basis(int d);

double fidelity_pure(const PureState& psi, const PureState& phi);
double trace_distance(const Matrix& rho, const Matrix& sigma);

struct SchurResult {
  UnitaryMatrix q;  // q * m * q^dagger == t
  Matrix t;         // upper triangular
};

/// Unitary triangularization of a square matrix. Throws ConvergenceFailure
/// if the QR iteration does not converge.
SchurResult schur_unitary(const Matrix& m);

/// Lexicographic (real, then imaginary) order on eigenvalues; components
/// closer than `group_tol` compare equal.
bool eigen_less(cplx a, cplx b, double group_tol);

/// Schur form with diag(t) sorted by eigen_less. Reordering uses unitary
/// swaps of adjacent diagonal entries.
SchurResult ordered_schur(const Matrix& m, double group_tol = 1e-8);

/// Reorders an existing Schur form so that diag(t)[k] is, greedily, the
/// remaining eigenvalue closest to target[k].
SchurResult schur_reorder_to(const SchurResult& s, std::span<const cplx> target);

/// Smallest pairwise distance between the entries of `values`
/// (infinity when fewer than two).
double min_separation(std::span<const cplx> values);

std::vector<cplx> sorted_eigenvalues(std::vector<cplx> values, double group_tol = 1e-8);

}  // namespace qst
