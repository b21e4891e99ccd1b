#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "qst/errors.hpp"
#include "qst/reconstruction.hpp"

using namespace qst;

namespace {

PureState ghz(int n, int d = 2) {
  const SystemShape s = SystemShape::qudits(n, d);
  Vector v = Vector::Zero(s.total());
  v(0) = v(s.total() - 1) = 1.0 / std::sqrt(2.0);
  return PureState(s, v);
}

ReconstructionOptions with_truth(const PureState& psi) {
  ReconstructionOptions o;
  o.truth = psi;
  return o;
}

}  // namespace

TEST(RdmsOf, ProductStateGivesProjectors) {
  Vector v = Vector::Zero(8);
  v(0) = 1.0;
  const RdmPair r = rdms_of(PureState(SystemShape{2, 2, 2}, v));
  Matrix p = Matrix::Zero(4, 4);
  p(0, 0) = 1.0;
  EXPECT_EQ(r.rho_ab().matrix(), p);
  EXPECT_EQ(r.rho_ac().matrix(), p);
}

TEST(RdmsOf, MatchesIndexSumOracle) {
  const PureState psi = haar_random_state(SystemShape{2, 2, 2}, 1);
  const RdmPair r = rdms_of(psi);
  const Matrix full = psi.projector();
  EXPECT_LT(max_abs(r.rho_ab().matrix() - oracle::partial_trace(full, {2, 2, 2}, {0, 1})), 1e-15);
  EXPECT_LT(max_abs(r.rho_ac().matrix() - oracle::partial_trace(full, {2, 2, 2}, {0, 2})), 1e-15);
  EXPECT_LT(r.marginal_mismatch(), 1e-12);
}

TEST(RdmsOf, GroupedSplit) {
  const PureState psi = haar_random_state(SystemShape::qudits(5, 2), 2);
  const RdmPair r = rdms_of(psi, Split{{0}, {1, 2}, {3, 4}});
  EXPECT_EQ(r.shape(), (SystemShape{2, 4, 4}));
  EXPECT_LT(max_abs(r.rho_ab().matrix() - oracle::partial_trace(psi.projector(), {2, 2, 2, 2, 2}, {0, 1, 2})), 1e-14);
  EXPECT_LT(max_abs(r.rho_ac().matrix() - oracle::partial_trace(psi.projector(), {2, 2, 2, 2, 2}, {0, 3, 4})), 1e-14);
  // Non-contiguous groups are permuted into (A, B, C) order.
  const RdmPair q = rdms_of(psi, Split{{2}, {0, 4}, {1, 3}});
  const Vector perm = permute_subsystems(StateVector{psi.shape(), psi.amplitudes()}, std::vector<int>{2, 0, 4, 1, 3}).amplitudes;
  const Matrix proj = perm * perm.adjoint();
  EXPECT_LT(max_abs(q.rho_ab().matrix() - oracle::partial_trace(proj, {2, 2, 2, 2, 2}, {0, 1, 2})), 1e-14);
  EXPECT_LT(max_abs(q.rho_ac().matrix() - oracle::partial_trace(proj, {2, 2, 2, 2, 2}, {0, 3, 4})), 1e-14);
}

TEST(RdmsOf, InvalidSplits) {
  const PureState psi = haar_random_state(SystemShape{2, 2, 2}, 3);
  EXPECT_THROW(rdms_of(psi, Split{{0}, {1}, {1}}), IndexError);
  EXPECT_THROW(rdms_of(psi, Split{{0}, {1}, {3}}), IndexError);
  EXPECT_THROW(rdms_of(psi, Split{{0, 1}, {}, {2}}), IndexError);
}

TEST(RdmPair, RejectsInconsistentMarginals) {
  const RdmPair good = rdms_of(haar_random_state(SystemShape{2, 2, 2}, 4));
  const RdmPair other = rdms_of(haar_random_state(SystemShape{2, 2, 2}, 5));
  EXPECT_THROW(RdmPair(good.shape(), good.rho_ab(), other.rho_ac()), InconsistentRdms);
}

TEST(BlockConvention, GramBlocksMatchForwardModel) {
  for (int d = 1; d <= 4; ++d) {
    const PureState psi = haar_random_state(SystemShape{2, d, d}, 10 + d);
    const MatrixPair pair = state_to_pair(psi);
    const GramBlocks g = gram_blocks(pair);
    const Matrix ab = reduced_density(psi, std::vector<int>{0, 1});
    const Matrix ac = reduced_density(psi, std::vector<int>{0, 2});
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y) {
        EXPECT_LT(max_abs(a_block(ab, d, x, y) - g.g[x][y]), 1e-14);
        EXPECT_LT(max_abs(a_block(ac, d, x, y) - g.k[x][y]), 1e-14);
      }
  }
}

TEST(Reconstruct2dd, HaarRoundTrip) {
  for (int d = 2; d <= 5; ++d)
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const PureState psi = haar_random_state(SystemShape{2, d, d}, 100 * d + seed);
      const Reconstruction r = reconstruct_2dd(rdms_of(psi), with_truth(psi));
      EXPECT_EQ(r.report.strategy, Strategy::Pencil);
      EXPECT_EQ(r.report.uniqueness_flag, Uniqueness::Generic);
      EXPECT_LE(r.report.rdm_residual, 1e-8);
      ASSERT_TRUE(r.report.fidelity_vs_truth);
      EXPECT_GE(*r.report.fidelity_vs_truth, 1.0 - 1e-8) << "d=" << d << " seed=" << seed;
    }
}

TEST(Reconstruct2dd, ReportedResidualIsRecomputable) {
  const PureState psi = haar_random_state(SystemShape{2, 3, 3}, 7);
  const RdmPair rdms = rdms_of(psi);
  const Reconstruction r = reconstruct_2dd(rdms);
  const RdmPair back = rdms_of(r.psi);
  const double recomputed = (back.rho_ab().matrix() - rdms.rho_ab().matrix()).norm() +
                            (back.rho_ac().matrix() - rdms.rho_ac().matrix()).norm();
  EXPECT_NEAR(recomputed, r.report.rdm_residual, 1e-12);
}

TEST(Reconstruct2dd, GlobalPhaseConvention) {
  const PureState psi = haar_random_state(SystemShape{2, 3, 3}, 8);
  const Reconstruction r = reconstruct_2dd(rdms_of(psi));
  Eigen::Index best = 0;
  for (Eigen::Index i = 0; i < r.psi.amplitudes().size(); ++i)
    if (std::abs(r.psi[i]) > std::abs(r.psi[best])) best = i;
  EXPECT_EQ(r.psi[best].imag(), 0.0);
  EXPECT_GT(r.psi[best].real(), 0.0);
}

TEST(Reconstruct2dd, StrategiesAgree) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PureState psi = haar_random_state(SystemShape{2, 3, 3}, 20 + seed);
    const RdmPair rdms = rdms_of(psi);
    ReconstructionOptions pencil, purify;
    pencil.fallback = purify.fallback = false;
    purify.strategy = Strategy::Purify;
    const Reconstruction a = reconstruct_2dd(rdms, pencil), b = reconstruct_2dd(rdms, purify);
    EXPECT_EQ(a.report.strategy, Strategy::Pencil);
    EXPECT_EQ(b.report.strategy, Strategy::Purify);
    EXPECT_GE(fidelity_pure(a.psi, b.psi), 1.0 - 1e-8);
    EXPECT_GE(fidelity_pure(b.psi, psi), 1.0 - 1e-8);
  }
}

TEST(Reconstruct2dd, LocalUnitaryCovariance) {
  CounterRng rng(30);
  const PureState psi = haar_random_state(SystemShape{2, 4, 4}, 31);
  const UnitaryMatrix u = haar_unitary(4, rng), v = haar_unitary(4, rng);
  const Reconstruction r0 = reconstruct_2dd(rdms_of(psi));
  const RdmPair rdms = rdms_of(psi);
  const Matrix iu = kron(Matrix::Identity(2, 2), u.matrix()), iv = kron(Matrix::Identity(2, 2), v.matrix());
  const RdmPair rotated(rdms.shape(), DensityOperator(SystemShape{2, 4}, iu * rdms.rho_ab().matrix() * iu.adjoint()),
                        DensityOperator(SystemShape{2, 4}, iv * rdms.rho_ac().matrix() * iv.adjoint()));
  const Reconstruction r1 = reconstruct_2dd(rotated);
  const PureState expect = apply_local_unitary(apply_local_unitary(r0.psi, u, 1), v, 2);
  EXPECT_GE(fidelity_pure(expect, r1.psi), 1.0 - 1e-8);
}

TEST(Reconstruct2dd, IllConditionedBlockUsesGauge) {
  // B has rank d - 1, so G22 = B B^+ is singular; a rotation on A restores it.
  const int d = 3;
  CounterRng rng(40);
  Matrix a(d, d), b(d, d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) a(i, j) = rng.complex_normal(), b(i, j) = rng.complex_normal();
  b.col(2) = 0.3 * b.col(0) - b.col(1);
  StateVector v = pair_to_state(MatrixPair(a, b));
  const PureState psi = PureState::normalize(v);
  const Reconstruction r = reconstruct_2dd(rdms_of(psi), with_truth(psi));
  EXPECT_EQ(r.report.strategy, Strategy::Pencil);
  EXPECT_GE(*r.report.fidelity_vs_truth, 1.0 - 1e-8);
  bool noted = false;
  for (const auto& n : r.report.gauge_notes) noted = noted || n.find("gauge applied") != std::string::npos;
  EXPECT_TRUE(noted);
}

TEST(Reconstruct2dd, GhzIsSuspect) {
  const PureState g = ghz(3);
  const RdmPair rdms = rdms_of(g);
  ReconstructionOptions no_fallback;
  no_fallback.fallback = false;
  EXPECT_THROW(reconstruct_2dd(rdms, no_fallback), DegeneratePencil);

  ReconstructionOptions purify;
  purify.strategy = Strategy::Purify;
  const Reconstruction r = reconstruct_2dd(rdms, purify);
  EXPECT_EQ(r.report.uniqueness_flag, Uniqueness::Suspect);
  EXPECT_EQ(reconstruct_2dd(rdms).report.uniqueness_flag, Uniqueness::Suspect);

  ReconstructionOptions strict;
  strict.strict = true;
  EXPECT_THROW(reconstruct_2dd(rdms, strict), NonUniqueSuspect);

  // The whole phase family shares both RDMs.
  for (double theta : {0.3, 1.7, 3.0}) {
    Vector v = Vector::Zero(8);
    v(0) = 1.0 / std::sqrt(2.0);
    v(7) = std::polar(1.0 / std::sqrt(2.0), theta);
    const RdmPair other = rdms_of(PureState(SystemShape{2, 2, 2}, v));
    EXPECT_LT(max_abs(other.rho_ab().matrix() - rdms.rho_ab().matrix()), 1e-15);
    EXPECT_LT(max_abs(other.rho_ac().matrix() - rdms.rho_ac().matrix()), 1e-15);
  }
}

TEST(Reconstruct2dd, ProductStateViaPurify) {
  const PureState a = haar_random_state(SystemShape{2}, 50), b = haar_random_state(SystemShape{3}, 51),
                  c = haar_random_state(SystemShape{3}, 52);
  const Vector v = kron(kron(Matrix(a.amplitudes()), Matrix(b.amplitudes())), Matrix(c.amplitudes()));
  const PureState psi(SystemShape{2, 3, 3}, v);
  const Reconstruction r = reconstruct_2dd(rdms_of(psi), with_truth(psi));
  EXPECT_EQ(r.report.strategy, Strategy::Purify);
  EXPECT_NEAR(*r.report.fidelity_vs_truth, 1.0, 1e-12);
}

TEST(Reconstruct2dd, ShapeErrors) {
  const RdmPair r = rdms_of(haar_random_state(SystemShape{3, 2, 2}, 60));
  EXPECT_THROW(reconstruct_2dd(r), DimensionMismatch);
  const RdmPair s = rdms_of(haar_random_state(SystemShape{2, 2, 3}, 61));
  EXPECT_THROW(reconstruct_2dd(s), DimensionMismatch);
}

TEST(ReconstructPdd, DelegatesForTwo) {
  const PureState psi = haar_random_state(SystemShape{2, 3, 3}, 70);
  const RdmPair r = rdms_of(psi);
  EXPECT_EQ(reconstruct_pdd(r).psi.amplitudes(), reconstruct_2dd(r).psi.amplitudes());
}

TEST(ReconstructPdd, HaarRoundTrip) {
  for (int p = 3; p <= 4; ++p)
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const PureState psi = haar_random_state(SystemShape{p, 3, 3}, 1000 * p + seed);
      const Reconstruction r = reconstruct_pdd(rdms_of(psi), with_truth(psi));
      EXPECT_GE(*r.report.fidelity_vs_truth, 1.0 - 1e-8) << "p=" << p << " seed=" << seed;
      EXPECT_LE(r.report.rdm_residual, 1e-8);
    }
}

TEST(ReconstructPdd, ZeroPivotRowIsReselected) {
  const PureState base = haar_random_state(SystemShape{3, 3, 3}, 80);
  Vector v = base.amplitudes();
  v.head(9).setZero();
  const PureState psi = PureState::normalize(StateVector{base.shape(), v});
  const Reconstruction r = reconstruct_pdd(rdms_of(psi), with_truth(psi));
  EXPECT_GE(*r.report.fidelity_vs_truth, 1.0 - 1e-8);
  const std::string& first = r.report.gauge_notes.front();
  EXPECT_EQ(first.rfind("pivot row ", 0), 0u);
  EXPECT_NE(first, "pivot row 0");
}

TEST(ReconstructPdd, AllPivotsFail) {
  // Every A-row is a product matrix of the same rank-1 kind: slices decompose.
  Vector v = Vector::Zero(27);
  for (int a = 0; a < 3; ++a) v(a * 9 + a * 3 + a) = 1.0 / std::sqrt(3.0);
  ReconstructionOptions no_fallback;
  no_fallback.fallback = false;
  EXPECT_THROW(reconstruct_pdd(rdms_of(PureState(SystemShape{3, 3, 3}, v)), no_fallback), PivotFailure);
}

TEST(Bipartition, Splits) {
  auto eq = [](Bipartition b, int x, int y, int z) { return b.n_a == x && b.n_b == y && b.n_c == z; };
  EXPECT_TRUE(eq(bipartition_split(5, 2), 1, 2, 2));
  EXPECT_TRUE(eq(bipartition_split(4, 2), 2, 1, 1));
  EXPECT_TRUE(eq(bipartition_split(3, 2), 1, 1, 1));
  for (int n = 3; n <= 12; ++n) {
    const Bipartition b = bipartition_split(n, 3);
    EXPECT_EQ(b.n_a + b.n_b + b.n_c, n);
    EXPECT_EQ(b.n_a + b.n_b, (n + 2) / 2);
  }
  EXPECT_THROW(bipartition_split(2, 2), DomainError);
}

TEST(ReconstructNqudit, Qubits) {
  for (int n = 3; n <= 5; ++n)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const PureState psi = haar_random_state(SystemShape::qudits(n, 2), 10 * n + seed);
      const RdmPair r = rdms_of(psi, bipartition_sets(n));
      const Reconstruction out = reconstruct_nqudit(r.rho_ab(), r.rho_ac(), n, 2, with_truth(psi));
      EXPECT_EQ(out.psi.shape(), SystemShape::qudits(n, 2));
      EXPECT_GE(*out.report.fidelity_vs_truth, 1.0 - 1e-8) << "n=" << n;
    }
}

TEST(ReconstructNqudit, QutritsAndWrongSize) {
  const PureState psi = haar_random_state(SystemShape::qudits(3, 3), 90);
  const RdmPair r = rdms_of(psi, bipartition_sets(3));
  EXPECT_GE(*reconstruct_nqudit(r.rho_ab(), r.rho_ac(), 3, 3, with_truth(psi)).report.fidelity_vs_truth, 1.0 - 1e-8);
  EXPECT_THROW(reconstruct_nqudit(r.rho_ab(), r.rho_ac(), 4, 3), DimensionMismatch);
}

TEST(ReconstructNqudit, GhzIsSuspect) {
  for (int n = 3; n <= 5; ++n) {
    const RdmPair r = rdms_of(ghz(n), bipartition_sets(n));
    EXPECT_EQ(reconstruct_nqudit(r.rho_ab(), r.rho_ac(), n, 2).report.uniqueness_flag, Uniqueness::Suspect);
  }
}

TEST(Repair, ProducesDensityOperators) {
  const RdmPair r = rdms_of(haar_random_state(SystemShape{2, 2, 2}, 95));
  CounterRng rng(96);
  Matrix noise(4, 4);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) noise(i, j) = 1e-3 * rng.complex_normal();
  auto [ab, ac] = repair_rdms(r.rho_ab().matrix() + noise, r.rho_ac().matrix() - noise, 2, 2, 2);
  EXPECT_NO_THROW(DensityOperator(SystemShape{2, 2}, ab));
  EXPECT_NO_THROW(DensityOperator(SystemShape{2, 2}, ac));
  EXPECT_NO_THROW(RdmPair(r.shape(), DensityOperator(SystemShape{2, 2}, ab), DensityOperator(SystemShape{2, 2}, ac), 1e-10));
}

TEST(Noise, FidelityDegradesGracefully) {
  const PureState psi = haar_random_state(SystemShape{2, 3, 3}, 97);
  const RdmPair r = rdms_of(psi);
  CounterRng rng(98);
  for (double eps : {1e-8, 1e-7, 1e-6}) {
    Matrix n1(6, 6), n2(6, 6);
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 6; ++i) n1(i, j) = rng.complex_normal(), n2(i, j) = rng.complex_normal();
    n1 = hermitize(n1) * (eps / hermitize(n1).norm());
    n2 = hermitize(n2) * (eps / hermitize(n2).norm());
    auto [ab, ac] = repair_rdms(r.rho_ab().matrix() + n1, r.rho_ac().matrix() + n2, 2, 3, 3);
    const RdmPair noisy(r.shape(), DensityOperator(SystemShape{2, 3}, ab), DensityOperator(SystemShape{2, 3}, ac), 1e-6);
    const Reconstruction out = reconstruct_2dd(noisy, with_truth(psi));
    const double loss = 1.0 - *out.report.fidelity_vs_truth;
    RecordProperty("eps_" + std::to_string(eps), std::to_string(loss / eps));
    EXPECT_LT(loss, 1e4 * eps);
  }
}
