#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qst/canonical_form.hpp"
#include "qst/tensor.hpp"

namespace qst {

/// Three-way grouping of subsystem indices.
struct Split {
  std::vector<int> a;
  std::vector<int> b;
  std::vector<int> c;
};

/// rho_AB = Tr_C rho and rho_AC = Tr_B rho of a state on (p, dB, dC).
class RdmPair {
 public:
  /// Throws InconsistentRdms if |Tr_B rho_AB - Tr_C rho_AC|_F > consistency_tol.
  RdmPair(SystemShape shape, DensityOperator rho_ab, DensityOperator rho_ac, double consistency_tol = 1e-10);

  const SystemShape& shape() const { return shape_; }
  int p() const { return shape_.dim(0); }
  int d_b() const { return shape_.dim(1); }
  int d_c() const { return shape_.dim(2); }
  const DensityOperator& rho_ab() const { return rho_ab_; }
  const DensityOperator& rho_ac() const { return rho_ac_; }
  double marginal_mismatch() const { return marginal_mismatch_; }

 private:
  SystemShape shape_;
  DensityOperator rho_ab_;
  DensityOperator rho_ac_;
  double marginal_mismatch_;
};

/// Hermitize, clip negative eigenvalues, rescale to `trace`.
Matrix repair_density(const Matrix& m, double trace = 1.0);

/// Repairs both operators and symmetrizes their shared A-marginal.
/// Shapes are (p, dB) and (p, dC).
std::pair<Matrix, Matrix> repair_rdms(const Matrix& rho_ab, const Matrix& rho_ac, int p, int d_b, int d_c);

void validate_split(const Split& split, int n_subsystems);

RdmPair rdms_of(const PureState& psi, const Split& split);
/// Split {0}|{1}|{2} of a tripartite state.
RdmPair rdms_of(const PureState& psi);

enum class Strategy { Pencil, Purify };
enum class Uniqueness { Generic, Suspect };

std::string to_string(Strategy s);
std::string to_string(Uniqueness u);

struct ReconstructionOptions {
  Strategy strategy = Strategy::Pencil;
  bool fallback = true;
  double cond_max = 1e8;
  double residual_tol = 1e-8;
  /// Relative eigenvalue threshold for numerical rank in PURIFY.
  double rank_tol = 1e-10;
  /// Grouping tolerance for matching the two Schur spectra.
  double group_tol = 1e-8;
  /// Throw NonUniqueSuspect instead of returning a suspect result.
  bool strict = false;
  std::uint64_t gauge_seed = 0x5eed;
  /// Allowed |Tr_B rho_AB - Tr_C rho_AC|_F when reconstruct_nqudit pairs
  /// the inputs itself.
  double consistency_tol = 1e-8;
  std::optional<PureState> truth;
};

struct ReconstructionReport {
  Strategy strategy = Strategy::Pencil;
  /// |Tr_C(psi psi^+) - rho_AB|_F + |Tr_B(psi psi^+) - rho_AC|_F
  double rdm_residual = 0.0;
  std::vector<std::string> gauge_notes;
  std::map<std::string, double> condition_diagnostics;
  Uniqueness uniqueness_flag = Uniqueness::Generic;
  std::optional<double> fidelity_vs_truth;
};

struct Reconstruction {
  PureState psi;
  ReconstructionReport report;
};

/// The Gram blocks of a pair: rho_AB block (a, b) = M_a M_b^dagger and
/// rho_AC block (a, b) = (M_b^dagger M_a)^T with M_0 = A, M_1 = B.
/// This is the block convention the pencil strategy inverts.
struct GramBlocks {
  Matrix g[2][2];
  Matrix k[2][2];
};
GramBlocks gram_blocks(const MatrixPair& pair);
/// Blocks <a_A| rho |b_A> of a (2d x 2d) operator.
Matrix a_block(const Matrix& rho, int d, int a, int b);

/// |Tr_C(v v^+) - rho_AB|_F + |Tr_B(v v^+) - rho_AC|_F on shape (p, dB, dC).
double rdm_residual(const StateVector& v, const Matrix& rho_ab, const Matrix& rho_ac);

/// Largest-magnitude amplitude made real positive.
Vector fix_global_phase(const Vector& amplitudes);

Reconstruction reconstruct_2dd(const RdmPair& rdms, const ReconstructionOptions& opts = {});
Reconstruction reconstruct_pdd(const RdmPair& rdms, const ReconstructionOptions& opts = {});

struct Bipartition {
  int n_a;
  int n_b;
  int n_c;
};
/// m = floor((N-1)/2); A = first N - 2m qudits, B = next m, C = last m.
Bipartition bipartition_split(int n, int d);
/// Qudit index sets of the split above.
Split bipartition_sets(int n);

Reconstruction reconstruct_nqudit(const DensityOperator& rho_ab, const DensityOperator& rho_ac, int n, int d,
                                  const ReconstructionOptions& opts = {});

}  // namespace qst
