#include "qst/reconstruction.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "qst/errors.hpp"

namespace qst {

namespace {

constexpr int kKeepAB[] = {0, 1};
constexpr int kKeepAC[] = {0, 2};

cplx unit_phase(cplx z) {
  const double a = std::abs(z);
  return a > 0.0 ? z / a : cplx(1.0);
}

double below_diagonal(const Matrix& m) {
  double worst = 0.0;
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = c + 1; r < m.rows(); ++r) worst = std::max(worst, std::abs(m(r, c)));
  return worst;
}

// Tree of relative phases. links(i, j) ~ conj(z_i) z_j * w_ij, w_ij >= 0.
// Grows a maximum-weight spanning tree from node 0. Nodes that cannot be
// reached through a link above `threshold` keep phase 1 and are reported.
struct PhaseTree {
  Eigen::VectorXcd phases;
  int unreached = 0;
  double weakest_link = std::numeric_limits<double>::infinity();
};

PhaseTree solve_phase_tree(const Matrix& links, double threshold) {
  const Eigen::Index n = links.rows();
  PhaseTree out{Eigen::VectorXcd::Ones(n)};
  std::vector<bool> in_tree(n, false);
  if (n == 0) return out;
  in_tree[0] = true;
  for (Eigen::Index added = 1; added < n; ++added) {
    double best = -1.0;
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!in_tree[i]) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (in_tree[j]) continue;
        const double w = std::abs(links(i, j));
        if (w > best) best = w, bi = i, bj = j;
      }
    }
    if (best <= threshold) {
      // Disconnected: the remaining nodes form their own components.
      for (Eigen::Index j = 0; j < n; ++j)
        if (!in_tree[j]) ++out.unreached;
      break;
    }
    out.phases(bj) = out.phases(bi) * unit_phase(links(bi, bj));
    out.weakest_link = std::min(out.weakest_link, best);
    in_tree[bj] = true;
  }
  return out;
}

// Upper-triangular R with R R^dagger = g (g Hermitian positive definite).
Matrix ul_cholesky(const Matrix& g) {
  const Eigen::Index n = g.rows();
  const Matrix flip = Matrix::Identity(n, n).rowwise().reverse();
  Eigen::LLT<Matrix> llt(flip * hermitize(g) * flip);
  if (llt.info() != Eigen::Success) throw DegeneratePencil("B B^dagger block is not positive definite");
  const Matrix l = llt.matrixL();
  return flip * l * flip;
}

struct Candidate {
  StateVector vector;
  Strategy strategy;
  double residual = 0.0;
  bool suspect = false;
  std::vector<std::string> notes;
  std::map<std::string, double> diagnostics;
};

void check_block_convention_once() {
  static const bool ok = [] {
    CounterRng rng(0xb10c);
    const int d = 3;
    Matrix a(d, d), b(d, d);
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) a(i, j) = rng.complex_normal(), b(i, j) = rng.complex_normal();
    const MatrixPair pair(a, b);
    const StateVector v = pair_to_state(pair);
    const Matrix ab = reduced_density(v, kKeepAB);
    const Matrix ac = reduced_density(v, kKeepAC);
    const GramBlocks blocks = gram_blocks(pair);
    double worst = 0.0;
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y) {
        worst = std::max(worst, max_abs(a_block(ab, d, x, y) - blocks.g[x][y]));
        worst = std::max(worst, max_abs(a_block(ac, d, x, y) - blocks.k[x][y]));
      }
    return worst < 1e-12;
  }();
  if (!ok) throw std::logic_error("RDM block convention self-test failed");
}

Matrix rotate_a(const Matrix& rho, const Matrix& w, int d) {
  const Matrix big = kron(w, Matrix::Identity(d, d));
  return big * rho * big.adjoint();
}

double cond_psd(const Matrix& g) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(g), Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(es.eigenvalues().size() - 1);
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

Matrix random_su2(CounterRng& rng) {
  Matrix u = haar_unitary(2, rng).matrix();
  const cplx det = u.determinant();
  return u / std::sqrt(det);
}

// Pencil strategy on a (2, d, d) pair of operators with any trace.
Candidate pencil_candidate(const Matrix& ab_in, const Matrix& ac_in, int d, const ReconstructionOptions& opts) {
  check_block_convention_once();
  Candidate out{StateVector{SystemShape{2, d, d}, Vector()}, Strategy::Pencil};
  const double trace = ab_in.trace().real();

  // Gauge on A when the B-block is ill-conditioned.
  Matrix w = Matrix::Identity(2, 2);
  Matrix ab = ab_in, ac = ac_in;
  double cond = cond_psd(a_block(ab, d, 1, 1));
  if (!(cond <= opts.cond_max)) {
    CounterRng rng(opts.gauge_seed);
    bool found = false;
    for (int attempt = 0; attempt < 16 && !found; ++attempt) {
      const Matrix cand = random_su2(rng);
      const Matrix rot = rotate_a(ab_in, cand, d);
      const double c = cond_psd(a_block(rot, d, 1, 1));
      if (c <= opts.cond_max) {
        w = cand;
        ab = rot;
        ac = rotate_a(ac_in, cand, d);
        cond = c;
        found = true;
        out.notes.push_back("A-subsystem SU(2) gauge applied (attempt " + std::to_string(attempt) + ")");
      }
    }
    if (!found) throw DegeneratePencil("no A-gauge makes the B block well conditioned");
  }
  out.diagnostics["cond_bb"] = cond;

  Matrix g[2][2], k[2][2];
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) g[x][y] = a_block(ab, d, x, y), k[x][y] = a_block(ac, d, x, y);

  // A B^-1 from rho_AB and B^-1 A from rho_AC.
  const Matrix left = g[0][1] * hermitize(g[1][1]).ldlt().solve(Matrix::Identity(d, d));
  const Matrix k11t = k[1][1].transpose();
  const Matrix right = hermitize(k11t).ldlt().solve(Matrix(k[0][1].transpose()));

  const double root_scale = std::max(1.0, left.norm());
  const SchurResult su = ordered_schur(left, opts.group_tol * root_scale);
  std::vector<cplx> roots;
  for (int i = 0; i < d; ++i) roots.push_back(su.t(i, i));
  const double sep = min_separation(roots);
  out.diagnostics["root_separation"] = d > 1 ? sep : 0.0;
  if (d > 1 && sep <= opts.group_tol * root_scale) throw DegeneratePencil("coincident pencil roots");

  const SchurResult sv = schur_reorder_to(schur_unitary(right), roots);
  double mismatch = 0.0;
  for (int i = 0; i < d; ++i) mismatch = std::max(mismatch, std::abs(sv.t(i, i) - roots[i]));
  out.diagnostics["frame_root_mismatch"] = mismatch;
  if (d > 1 && mismatch >= 0.5 * sep) throw DegeneratePencil("left and right pencil spectra do not align");

  const Matrix& u = su.q.matrix();
  const Matrix& v = sv.q.matrix();
  const Matrix g22 = u * g[1][1] * u.adjoint();
  const Matrix g12 = u * g[0][1] * u.adjoint();
  Matrix tb = ul_cholesky(g22);
  // ta tb^dagger = g12.
  Matrix ta = Matrix(tb.triangularView<Eigen::Upper>().solve(g12.adjoint())).adjoint();
  out.diagnostics["ta_lower_leak"] = below_diagonal(ta) / std::max(ta.norm(), 1e-300);
  ta = Matrix(ta.triangularView<Eigen::Upper>());

  // Right phase gauge from the rho_AC blocks: v k^T v^+ = D^+ (t_y^+ t_x) D.
  const Matrix* t[2] = {&ta, &tb};
  Matrix links = Matrix::Zero(d, d);
  double total = 0.0;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      const Matrix z = t[y]->adjoint() * *t[x];
      const Matrix obs = v * k[x][y].transpose() * v.adjoint();
      links += z.conjugate().cwiseProduct(obs);
      total += z.squaredNorm();
    }
  links.diagonal().setZero();
  const PhaseTree tree = solve_phase_tree(links, 1e-10 * std::max(total, 1e-300));
  if (tree.unreached > 0)
    throw DegeneratePencil("pencil decomposes into a direct sum; relative phases are undetermined");
  out.diagnostics["phase_link_min"] = d > 1 ? tree.weakest_link / total : 1.0;
  const Matrix dphase = tree.phases.asDiagonal();

  const Matrix ma = u.adjoint() * ta * dphase * v;
  const Matrix mb = u.adjoint() * tb * dphase * v;

  // Canonical (reality-gauged) form of the recovered pair, for the notes.
  Triangularization canon{su.q, sv.q, ta * dphase, tb * dphase, {}, {}};
  apply_reality_gauge(canon, 1e-10);
  for (auto& n : canon.notes) out.notes.push_back(std::move(n));

  StateVector sv_out = pair_to_state(MatrixPair(ma, mb));
  sv_out.amplitudes = apply_local(sv_out.amplitudes, sv_out.shape, w.adjoint(), 0);
  const double nrm = sv_out.norm();
  if (nrm > 0.0) sv_out.amplitudes *= std::sqrt(std::max(trace, 0.0)) / nrm;
  out.vector = std::move(sv_out);
  out.residual = rdm_residual(out.vector, ab_in, ac_in);
  return out;
}

// Schmidt purification across AB | C with phases fixed by rho_AC.
Candidate purify_candidate(const Matrix& ab, const Matrix& ac, int p, int d_b, int d_c,
                           const ReconstructionOptions& opts) {
  Candidate out{StateVector{SystemShape{p, d_b, d_c}, Vector::Zero(std::int64_t(p) * d_b * d_c)}, Strategy::Purify};
  const int nab = p * d_b;

  Eigen::SelfAdjointEigenSolver<Matrix> eab(hermitize(ab));
  const SystemShape ac_shape{p, d_c};
  const int keep_c[] = {1};
  Eigen::SelfAdjointEigenSolver<Matrix> ec(hermitize(partial_trace(ac, ac_shape, keep_c)));
  if (eab.info() != Eigen::Success || ec.info() != Eigen::Success)
    throw ConvergenceFailure("eigendecomposition failed");

  const double lmax = eab.eigenvalues()(nab - 1);
  if (!(lmax > 0.0)) throw NonUniqueSuspect("rho_AB is zero");
  int rank = 0;
  for (int i = nab - 1; i >= 0 && eab.eigenvalues()(i) > opts.rank_tol * lmax; --i) ++rank;
  if (rank > d_c) {
    out.notes.push_back("numerical rank " + std::to_string(rank) + " exceeds dim C; truncated");
    rank = d_c;
  }
  out.diagnostics["rank"] = rank;

  std::vector<double> lam(rank);
  Matrix uk(nab, rank), yk(d_c, rank);
  for (int k = 0; k < rank; ++k) {
    lam[k] = eab.eigenvalues()(nab - 1 - k);
    uk.col(k) = eab.eigenvectors().col(nab - 1 - k);
    yk.col(k) = ec.eigenvectors().col(d_c - 1 - k);
  }
  double min_gap = std::numeric_limits<double>::infinity();
  for (int k = 0; k + 1 < rank; ++k) min_gap = std::min(min_gap, (lam[k] - lam[k + 1]) / lmax);
  out.diagnostics["schmidt_gap"] = rank > 1 ? min_gap : 1.0;
  if (rank > 1 && min_gap <= 1e-8) {
    out.suspect = true;
    out.notes.push_back("degenerate Schmidt spectrum across AB | C; purification basis not unique");
  }

  // links(k, l) = sum conj(N_kl) . M_kl  ~  e^{i(theta_k - theta_l)}.
  Matrix links = Matrix::Zero(rank, rank);
  double total = 0.0;
  for (int k = 0; k < rank; ++k)
    for (int l = 0; l < rank; ++l) {
      if (k == l) continue;
      Matrix n_kl = Matrix::Zero(p, p), m_kl = Matrix::Zero(p, p);
      for (int a = 0; a < p; ++a)
        for (int a2 = 0; a2 < p; ++a2) {
          cplx nsum = 0.0, msum = 0.0;
          for (int bb = 0; bb < d_b; ++bb) nsum += uk(a * d_b + bb, k) * std::conj(uk(a2 * d_b + bb, l));
          for (int c = 0; c < d_c; ++c)
            for (int c2 = 0; c2 < d_c; ++c2)
              msum += std::conj(yk(c, k)) * ac(a * d_c + c, a2 * d_c + c2) * yk(c2, l);
          n_kl(a, a2) = std::sqrt(lam[k] * lam[l]) * nsum;
          m_kl(a, a2) = msum;
        }
      links(k, l) = std::conj(n_kl.conjugate().cwiseProduct(m_kl).sum());
      total += n_kl.squaredNorm();
    }
  const PhaseTree tree = solve_phase_tree(links, 1e-10 * std::max(total, lmax * lmax * 1e-300));
  if (tree.unreached > 0) {
    out.suspect = true;
    out.notes.push_back(std::to_string(tree.unreached) + " Schmidt phases undetermined by rho_AC");
  }

  for (int k = 0; k < rank; ++k) {
    const cplx coef = std::sqrt(lam[k]) * tree.phases(k);
    for (int ab_i = 0; ab_i < nab; ++ab_i)
      for (int c = 0; c < d_c; ++c) out.vector.amplitudes(std::int64_t(ab_i) * d_c + c) += coef * uk(ab_i, k) * yk(c, k);
  }
  out.residual = rdm_residual(out.vector, ab, ac);
  return out;
}

bool better(const Candidate& x, const Candidate& y, double tol) {
  const bool xg = !x.suspect && x.residual <= tol;
  const bool yg = !y.suspect && y.residual <= tol;
  if (xg != yg) return xg;
  return x.residual < y.residual;
}

// Strategy selection with fallback on a (p, dB, dC) operator pair.
Candidate solve_tripartite(const Matrix& ab, const Matrix& ac, int p, int d_b, int d_c,
                           const ReconstructionOptions& opts) {
  const bool pencil_ok = p == 2 && d_b == d_c;
  auto run = [&](Strategy s) {
    if (s == Strategy::Pencil) {
      if (!pencil_ok) throw DegeneratePencil("pencil strategy needs a (2, d, d) shape");
      return pencil_candidate(ab, ac, d_b, opts);
    }
    return purify_candidate(ab, ac, p, d_b, d_c, opts);
  };
  const Strategy first = opts.strategy;
  const Strategy second = first == Strategy::Pencil ? Strategy::Purify : Strategy::Pencil;

  std::optional<Candidate> best;
  std::vector<std::string> notes;
  try {
    best = run(first);
  } catch (const Error& e) {
    if (!opts.fallback || e.kind() != ErrorKind::Numerical) throw;
    notes.push_back(to_string(first) + " failed: " + e.what());
  }
  const bool good = best && !best->suspect && best->residual <= opts.residual_tol;
  if (!good && opts.fallback) {
    try {
      Candidate alt = run(second);
      notes.push_back("fell back to " + to_string(second));
      if (!best || better(alt, *best, opts.residual_tol)) best = std::move(alt);
    } catch (const Error& e) {
      if (!best) throw;
      notes.push_back(to_string(second) + " failed: " + e.what());
    }
  }
  best->notes.insert(best->notes.begin(), notes.begin(), notes.end());
  return std::move(*best);
}

Reconstruction finish(StateVector v, double residual, Strategy strategy, bool suspect, std::vector<std::string> notes,
                      std::map<std::string, double> diag, const ReconstructionOptions& opts) {
  ReconstructionReport report;
  report.strategy = strategy;
  report.gauge_notes = std::move(notes);
  report.condition_diagnostics = std::move(diag);
  report.uniqueness_flag = (suspect || !(residual <= opts.residual_tol)) ? Uniqueness::Suspect : Uniqueness::Generic;
  if (report.uniqueness_flag == Uniqueness::Suspect && opts.strict)
    throw NonUniqueSuspect("reconstruction residual " + std::to_string(residual) +
                           (suspect ? " with undetermined gauge" : ""));
  v.amplitudes = fix_global_phase(v.amplitudes);
  PureState psi = PureState::normalize(v);
  report.rdm_residual = residual;
  if (opts.truth) report.fidelity_vs_truth = fidelity_pure(psi, *opts.truth);
  return {std::move(psi), std::move(report)};
}

Matrix sub_blocks(const Matrix& rho, int d, int i, int j) {
  Matrix out(2 * d, 2 * d);
  const int idx[2] = {i, j};
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) out.block(x * d, y * d, d, d) = rho.block(idx[x] * d, idx[y] * d, d, d);
  return out;
}

void check_consistency(const RdmPair& rdms) {
  for (const auto* rho : {&rdms.rho_ab(), &rdms.rho_ac()})
    if (std::abs(rho->trace().real() - 1.0) > 1e-8) throw ValidationError("RDMs must have unit trace");
}

}  // namespace

// ---------------------------------------------------------------------------

RdmPair::RdmPair(SystemShape shape, DensityOperator rho_ab, DensityOperator rho_ac, double consistency_tol)
    : shape_(std::move(shape)), rho_ab_(std::move(rho_ab)), rho_ac_(std::move(rho_ac)) {
  if (shape_.size() != 3) throw DimensionMismatch("RDM pair needs a tripartite shape");
  if (rho_ab_.shape().total() != std::int64_t(p()) * d_b() || rho_ac_.shape().total() != std::int64_t(p()) * d_c())
    throw DimensionMismatch("RDM sizes do not match the (p, dB, dC) shape");
  const int keep_a[] = {0};
  const Matrix ma = partial_trace(rho_ab_.matrix(), SystemShape{p(), d_b()}, keep_a);
  const Matrix mc = partial_trace(rho_ac_.matrix(), SystemShape{p(), d_c()}, keep_a);
  marginal_mismatch_ = (ma - mc).norm();
  if (!(marginal_mismatch_ <= consistency_tol))
    throw InconsistentRdms("shared A-marginal differs by " + std::to_string(marginal_mismatch_));
}

Matrix repair_density(const Matrix& m, double trace) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(m));
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  const double s = lam.sum();
  if (!(s > 0.0)) throw ValidationError("operator has no positive part to repair");
  lam *= trace / s;
  const Matrix& q = es.eigenvectors();
  return hermitize(q * lam.cast<cplx>().asDiagonal() * q.adjoint());
}

std::pair<Matrix, Matrix> repair_rdms(const Matrix& rho_ab, const Matrix& rho_ac, int p, int d_b, int d_c) {
  const int keep_a[] = {0};
  const SystemShape sab{p, d_b}, sac{p, d_c};
  Matrix ab = repair_density(rho_ab);
  Matrix ac = repair_density(rho_ac);
  for (int round = 0; round < 50; ++round) {
    const Matrix ma = partial_trace(ab, sab, keep_a);
    const Matrix mc = partial_trace(ac, sac, keep_a);
    if ((ma - mc).norm() <= 1e-12) break;
    const Matrix avg = 0.5 * (ma + mc);
    ab = repair_density(ab + kron(avg - ma, Matrix::Identity(d_b, d_b)) / double(d_b));
    ac = repair_density(ac + kron(avg - mc, Matrix::Identity(d_c, d_c)) / double(d_c));
  }
  return {std::move(ab), std::move(ac)};
}

void validate_split(const Split& split, int n_subsystems) {
  std::vector<int> all;
  for (const auto* g : {&split.a, &split.b, &split.c}) {
    if (g->empty()) throw IndexError("every group of the split needs at least one subsystem");
    all.insert(all.end(), g->begin(), g->end());
  }
  std::sort(all.begin(), all.end());
  if (static_cast<int>(all.size()) != n_subsystems) throw IndexError("split does not cover every subsystem exactly once");
  for (int i = 0; i < n_subsystems; ++i)
    if (all[i] != i) throw IndexError("split references a missing or repeated subsystem");
}

RdmPair rdms_of(const PureState& psi, const Split& split) {
  validate_split(split, psi.shape().size());
  std::vector<int> order = split.a;
  order.insert(order.end(), split.b.begin(), split.b.end());
  order.insert(order.end(), split.c.begin(), split.c.end());
  StateVector v = permute_subsystems(StateVector{psi.shape(), psi.amplitudes()}, order);
  const int runs[] = {int(split.a.size()), int(split.b.size()), int(split.c.size())};
  v.shape = v.shape.grouped(runs);
  const int p = v.shape.dim(0), db = v.shape.dim(1), dc = v.shape.dim(2);
  Matrix ab = hermitize(reduced_density(v, kKeepAB));
  Matrix ac = hermitize(reduced_density(v, kKeepAC));
  return RdmPair(v.shape, DensityOperator(SystemShape{p, db}, std::move(ab)),
                 DensityOperator(SystemShape{p, dc}, std::move(ac)));
}

RdmPair rdms_of(const PureState& psi) {
  if (psi.shape().size() != 3) throw DimensionMismatch("default split needs a tripartite state");
  return rdms_of(psi, Split{{0}, {1}, {2}});
}

std::string to_string(Strategy s) { return s == Strategy::Pencil ? "PENCIL" : "PURIFY"; }
std::string to_string(Uniqueness u) { return u == Uniqueness::Generic ? "generic" : "suspect"; }

GramBlocks gram_blocks(const MatrixPair& pair) {
  GramBlocks out;
  const Matrix* m[2] = {&pair.a, &pair.b};
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      out.g[x][y] = *m[x] * m[y]->adjoint();
      out.k[x][y] = (m[y]->adjoint() * *m[x]).transpose();
    }
  return out;
}

Matrix a_block(const Matrix& rho, int d, int a, int b) { return rho.block(a * d, b * d, d, d); }

double rdm_residual(const StateVector& v, const Matrix& rho_ab, const Matrix& rho_ac) {
  return (reduced_density(v, kKeepAB) - rho_ab).norm() + (reduced_density(v, kKeepAC) - rho_ac).norm();
}

Vector fix_global_phase(const Vector& amplitudes) {
  if (amplitudes.size() == 0) return amplitudes;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < amplitudes.size(); ++i)
    if (std::abs(amplitudes(i)) > std::abs(amplitudes(best))) best = i;
  return amplitudes * std::conj(unit_phase(amplitudes(best)));
}

Reconstruction reconstruct_2dd(const RdmPair& rdms, const ReconstructionOptions& opts) {
  if (rdms.p() != 2) throw DimensionMismatch("reconstruct_2dd needs p = 2");
  if (rdms.d_b() != rdms.d_c()) throw DimensionMismatch("reconstruct_2dd needs dB = dC");
  check_consistency(rdms);
  Candidate c = solve_tripartite(rdms.rho_ab().matrix(), rdms.rho_ac().matrix(), 2, rdms.d_b(), rdms.d_c(), opts);
  return finish(std::move(c.vector), c.residual, c.strategy, c.suspect, std::move(c.notes), std::move(c.diagnostics), opts);
}

Reconstruction reconstruct_pdd(const RdmPair& rdms, const ReconstructionOptions& opts) {
  if (rdms.p() == 2) return reconstruct_2dd(rdms, opts);
  if (rdms.d_b() != rdms.d_c()) throw DimensionMismatch("reconstruct_pdd needs dB = dC");
  check_consistency(rdms);
  const int p = rdms.p(), d = rdms.d_b();
  const Matrix& ab = rdms.rho_ab().matrix();
  const Matrix& ac = rdms.rho_ac().matrix();
  const int keep_a[] = {0};
  const Matrix rho_a = partial_trace(ab, SystemShape{p, d}, keep_a);
  std::vector<double> weight(p);
  for (int a = 0; a < p; ++a) weight[a] = rho_a(a, a).real();
  const double pivot_tol = 1e-10;
  const double drop_tol = 1e-14;

  std::vector<int> pivots;
  if (weight[0] > pivot_tol) pivots.push_back(0);
  std::vector<int> by_weight(p);
  std::iota(by_weight.begin(), by_weight.end(), 0);
  std::stable_sort(by_weight.begin(), by_weight.end(), [&](int x, int y) { return weight[x] > weight[y]; });
  for (int a : by_weight)
    if (a != 0 && weight[a] > pivot_tol) pivots.push_back(a);

  ReconstructionOptions slice_opts = opts;
  slice_opts.truth.reset();
  slice_opts.strict = false;
  const std::int64_t row = std::int64_t(d) * d;

  std::vector<std::string> failures;
  for (int pivot : pivots) {
    struct Slice {
      int row_index;
      Vector pivot_row, other_row;
      Candidate cand;
    };
    std::vector<Slice> slices;
    std::vector<int> dropped;
    bool failed = false;
    for (int j = 0; j < p && !failed; ++j) {
      if (j == pivot) continue;
      if (weight[j] <= drop_tol) {
        dropped.push_back(j);
        continue;
      }
      const double t = weight[pivot] + weight[j];
      try {
        Candidate c = solve_tripartite(sub_blocks(ab, d, pivot, j) / t, sub_blocks(ac, d, pivot, j) / t, 2, d, d, slice_opts);
        c.vector.amplitudes *= std::sqrt(t);
        Vector pr = c.vector.amplitudes.head(row), orow = c.vector.amplitudes.tail(row);
        if (pr.norm() <= pivot_tol) throw PivotFailure("pivot row vanishes in slice");
        slices.push_back({j, std::move(pr), std::move(orow), std::move(c)});
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numerical) throw;
        failures.push_back("pivot " + std::to_string(pivot) + ", row " + std::to_string(j) + ": " + e.what());
        failed = true;
      }
    }
    if (failed) continue;

    // Reference pivot row from the best slice; align every slice to it.
    std::size_t ref = 0;
    for (std::size_t s = 1; s < slices.size(); ++s)
      if (better(slices[s].cand, slices[ref].cand, opts.residual_tol)) ref = s;
    StateVector v{rdms.shape(), Vector::Zero(std::int64_t(p) * row)};
    bool suspect = false;
    Strategy strategy = Strategy::Pencil;
    std::vector<std::string> notes;
    std::map<std::string, double> diag;
    double worst_slice = 0.0;
    if (slices.empty()) {
      // Only the pivot row carries weight: psi = |pivot> x (BC state).
      failures.push_back("pivot " + std::to_string(pivot) + ": no partner rows with weight");
      continue;
    }
    const Vector& ref_row = slices[ref].pivot_row;
    v.amplitudes.segment(pivot * row, row) = ref_row;
    for (auto& s : slices) {
      const cplx overlap = s.pivot_row.dot(ref_row);
      if (std::abs(overlap) <= pivot_tol * ref_row.squaredNorm()) {
        failed = true;
        break;
      }
      v.amplitudes.segment(s.row_index * row, row) = s.other_row * unit_phase(overlap);
      suspect = suspect || s.cand.suspect;
      if (s.cand.strategy == Strategy::Purify) strategy = Strategy::Purify;
      worst_slice = std::max(worst_slice, s.cand.residual);
      for (const auto& n : s.cand.notes) notes.push_back("slice " + std::to_string(s.row_index) + ": " + n);
    }
    if (failed) {
      failures.push_back("pivot " + std::to_string(pivot) + ": pivot rows of slices are orthogonal");
      continue;
    }
    for (int j : dropped) notes.push_back("row " + std::to_string(j) + " has zero weight");
    notes.insert(notes.begin(), "pivot row " + std::to_string(pivot));
    diag["slices"] = double(slices.size());
    diag["worst_slice_residual"] = worst_slice;
    const double residual = rdm_residual(v, ab, ac);
    return finish(std::move(v), residual, strategy, suspect, std::move(notes), std::move(diag), opts);
  }
  std::string msg = "every pivot row failed";
  for (const auto& f : failures) msg += "; " + f;
  throw PivotFailure(msg);
}

Bipartition bipartition_split(int n, int d) {
  if (n < 3) throw DomainError("bipartition needs N >= 3, got " + std::to_string(n));
  if (d < 1) throw DomainError("qudit dimension must be positive");
  const int m = (n - 1) / 2;
  return {n - 2 * m, m, m};
}

Split bipartition_sets(int n) {
  const Bipartition b = bipartition_split(n, 2);
  Split s;
  for (int i = 0; i < b.n_a; ++i) s.a.push_back(i);
  for (int i = 0; i < b.n_b; ++i) s.b.push_back(b.n_a + i);
  for (int i = 0; i < b.n_c; ++i) s.c.push_back(b.n_a + b.n_b + i);
  return s;
}

Reconstruction reconstruct_nqudit(const DensityOperator& rho_ab, const DensityOperator& rho_ac, int n, int d,
                                  const ReconstructionOptions& opts) {
  const Bipartition b = bipartition_split(n, d);
  auto ipow = [](int base, int e) {
    std::int64_t r = 1;
    for (int i = 0; i < e; ++i) r *= base;
    return r;
  };
  const std::int64_t p = ipow(d, b.n_a), db = ipow(d, b.n_b), dc = ipow(d, b.n_c);
  if (rho_ab.shape().total() != p * db || rho_ac.shape().total() != p * dc)
    throw DimensionMismatch("RDM sizes do not match the bipartition of " + std::to_string(n) + " qudits");
  const SystemShape shape{int(p), int(db), int(dc)};
  RdmPair rdms(shape, DensityOperator(SystemShape{int(p), int(db)}, rho_ab.matrix()),
               DensityOperator(SystemShape{int(p), int(dc)}, rho_ac.matrix()),
               opts.consistency_tol);
  ReconstructionOptions inner = opts;
  inner.truth.reset();
  Reconstruction r = p == 2 ? reconstruct_2dd(rdms, inner) : reconstruct_pdd(rdms, inner);
  PureState psi(SystemShape::qudits(n, d), r.psi.amplitudes());
  if (opts.truth) r.report.fidelity_vs_truth = fidelity_pure(psi, *opts.truth);
  return {std::move(psi), std::move(r.report)};
}

}  // namespace qst
