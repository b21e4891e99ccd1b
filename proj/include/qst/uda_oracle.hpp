#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "qst/canonical_form.hpp"
#include "qst/reconstruction.hpp"
#include "qst/tensor.hpp"

namespace qst {

/// Hermitian, traceless Delta on (p, dB, dC) with Tr_B Delta = Tr_C Delta = 0
/// and unit Frobenius norm.
class CompatibilityDirection {
 public:
  static constexpr double kTol = 1e-12;

  CompatibilityDirection(SystemShape shape, Matrix delta);

  const SystemShape& shape() const { return shape_; }
  const Matrix& matrix() const { return delta_; }

 private:
  SystemShape shape_;
  Matrix delta_;
};

/// |Tr_C rho - Tr_C sigma|_F and |Tr_B rho - Tr_B sigma|_F on a tripartite
/// shape (p, dB, dC). Operators need not be normalized.
struct RdmDistance {
  double ab = 0.0;
  double ac = 0.0;
  double max() const { return ab > ac ? ab : ac; }
};
RdmDistance rdm_distance(const Matrix& rho, const Matrix& sigma, const SystemShape& shape);

/// rho and sigma share both reduced operators of `split` within tol.
bool rdm_match(const DensityOperator& rho, const DensityOperator& sigma, const Split& split, double tol = 1e-10);
/// Same on an already-grouped tripartite shape.
bool rdm_match(const Matrix& rho, const Matrix& sigma, const SystemShape& shape, double tol = 1e-10);

/// Operator on the full space with subsystems reordered to (A, B, C) of the
/// split and grouped into a tripartite shape.
Matrix group_operator(const Matrix& rho, const SystemShape& shape, const Split& split, SystemShape* grouped = nullptr);

/// Orthogonal projection of a Hermitian operator onto the matching
/// directions {Delta : Tr_B Delta = 0, Tr_C Delta = 0}.
Matrix project_to_matching_directions(const Matrix& delta, const SystemShape& shape);

inline constexpr int kDefaultMaxDim = 256;

/// Orthonormal basis (Frobenius inner product) of the matching directions
/// for a tripartite shape. Its size is p^2 (dB^2 - 1) (dC^2 - 1).
/// Throws DomainError if shape.total() > max_dim, or if the dense basis
/// would exceed 2^27 complex entries.
std::vector<CompatibilityDirection> matching_nullspace_basis(const SystemShape& shape, int max_dim = kDefaultMaxDim);

struct SearchOptions {
  int n_starts = 50;
  int max_iterations = 10000;
  double step_tol = 1e-10;
  /// Stop a start once consecutive steps agree to this relative tolerance.
  double stall_tol = 1e-9;
  double min_separation = 1e-3;
  double match_tol = 1e-8;
  double psd_tol = 1e-10;
  /// Size of the random nullspace kick that seeds each start.
  double start_scale = 1.0;
  int max_dim = kDefaultMaxDim;
  std::uint64_t seed = 1;
};

/// A density operator sharing both reduced operators with the target.
struct Witness {
  Matrix rho;  // on the grouped (A, B, C) shape of the split
  SystemShape shape;
  double trace_distance = 0.0;
  double rdm_residual = 0.0;
  double min_eigenvalue = 0.0;
  int start = 0;
};

/// Empirical outcome only: no start left the target.
struct NoneFound {
  int n_starts = 0;
  /// Largest trace distance from the target reached by a feasible point.
  double best_intrusion = 0.0;
  int total_iterations = 0;
  int converged_starts = 0;
  /// Starts stopped at a stationary nonzero step.
  int stalled_starts = 0;
};

using SearchResult = std::variant<Witness, NoneFound>;

/// Alternating projections between the PSD cone and the affine set of
/// operators matching psi's reduced operators, from random starts.
SearchResult search_alternative(const PureState& psi, const Split& split, const SearchOptions& opts = {});

struct ReductionDiagnostics {
  /// |P1 rho P1 - P1 phi phi^+ P1|_F
  double p1_residual = 0.0;
  /// RDM mismatch (sum of both reductions) of P2 rho P2 vs P2 phi phi^+ P2.
  double p2_rdm_mismatch = 0.0;
};

/// P1 = |d-1><d-1| and P2 = I - P1 act on the third subsystem.
/// Throws NotRegularTriangular or RdmMismatch when the preconditions fail.
ReductionDiagnostics verify_theorem_reduce(const TriangularState& phi, const DensityOperator& rho, double tol = 1e-10);

/// P1 X P1 + P2 X P2 + alpha P1 X P2 + conj(alpha) P2 X P1 with X = phi phi^+.
Matrix alpha_expansion(const TriangularState& phi, cplx alpha);

}  // namespace qst
