#pragma once

#include <string>
#include <vector>

#include "qst/tensor.hpp"

namespace qst {

/// Matrix pair (A, B) of a C^2 x C^d x C^d vector:
/// A(i, j) = <0_A i_B j_C|psi>, B(i, j) = <1_A i_B j_C|psi>.
struct MatrixPair {
  Matrix a;
  Matrix b;

  MatrixPair(Matrix a_, Matrix b_);
  int d() const { return static_cast<int>(a.rows()); }
  /// sqrt(|A|_F^2 + |B|_F^2)
  double scale() const;
};

MatrixPair state_to_pair(const StateVector& v);
MatrixPair state_to_pair(const PureState& psi);
/// Inverse of state_to_pair. The result is not renormalized.
StateVector pair_to_state(const MatrixPair& pair);

/// A vector of shape (2, d, d) with both matrices of its pair upper
/// triangular and A real on its diagonal and first superdiagonal.
/// The vector itself need not be normalized (projections of it are used).
class TriangularState {
 public:
  static constexpr double kTol = 1e-10;

  explicit TriangularState(StateVector v);

  int d() const { return vector_.shape.dim(1); }
  const StateVector& vector() const { return vector_; }
  PureState state() const { return PureState::normalize(vector_); }
  /// The C^2 block psi_ij = (<0 i j|psi>, <1 i j|psi>).
  Eigen::Vector2cd block(int i, int j) const;

  /// Keeps C-indices 0..d-2 and B-indices 0..d-2: the compression onto the
  /// complement of |d-1>_C, which lies in the (d-1) manifold.
  TriangularState compressed() const;

 private:
  StateVector vector_;
};

struct TriangularizeOptions {
  double tol = 1e-10;
  /// Coincident pencil roots throw DegeneratePencil instead of being
  /// ordered by index.
  bool strict = false;
  double group_tol = 1e-8;
};

struct Triangularization {
  UnitaryMatrix u;
  UnitaryMatrix v;
  Matrix ta;  // u * A * v^dagger
  Matrix tb;  // u * B * v^dagger
  std::vector<cplx> roots;  // diag(ta) / diag(tb), in frame order
  std::vector<std::string> notes;
};

/// |det B| > tol * |B|_F^d, i.e. det(A - xB) has full degree d.
bool pencil_has_full_degree(const MatrixPair& pair, double tol = 1e-10);

/// Generalized eigenvalues of (A, B) sorted by eigen_less.
/// Throws DegeneratePencil if the degree test fails.
std::vector<cplx> pencil_roots(const MatrixPair& pair, double tol = 1e-10);

/// Unitaries U, V with U A V^dagger and U B V^dagger upper triangular and
/// U A V^dagger real (non-negative where not negligible) on j <= i + 1.
/// Bases come from ordered Schur forms of A B^-1 and B^-1 A.
Triangularization simultaneous_triangularize(const MatrixPair& pair, const TriangularizeOptions& opts = {});

/// Slow reference: recursive deflation by one pencil root at a time
/// (kernel vector of A - x B, reflect it to |0>, deflate). The same reality
/// gauge is applied at the end.
Triangularization triangularize_by_deflation(const MatrixPair& pair, double tol = 1e-10);

/// Diagonal phase gauge fixing the reality pattern in place.
/// Entries with magnitude <= tol are skipped and recorded in notes.
void apply_reality_gauge(Triangularization& tri, double tol);

struct TriangularForm {
  TriangularState phi;
  UnitaryMatrix u;
  UnitaryMatrix v;
  std::vector<cplx> roots;
  std::vector<std::string> notes;
};

/// phi = (I x U x V) psi in triangular form.
TriangularForm triangular_form(const PureState& psi, const TriangularizeOptions& opts = {});

/// Every block psi_ij (i <= j) has norm > tol, and [psi_ij, psi_kk] has
/// smallest singular value > tol unless i == j == k.
bool is_regular_triangular(const TriangularState& phi, double tol = 1e-10);

/// Real dimension of the triangular manifold: 4 * d(d+1)/2 - d - (d-1).
int triangular_manifold_dim(int d);

}  // namespace qst
