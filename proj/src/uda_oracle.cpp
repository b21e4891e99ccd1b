#include "qst/uda_oracle.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <optional>

#include "qst/errors.hpp"

namespace qst {

namespace {

constexpr int kKeepAB[] = {0, 1};
constexpr int kKeepAC[] = {0, 2};
constexpr int kKeepA[] = {0};
constexpr std::int64_t kMaxBasisEntries = std::int64_t(1) << 27;  // 2 GiB of complex doubles

void require_tripartite(const SystemShape& shape) {
  if (shape.size() != 3) throw DimensionMismatch("expected a tripartite (p, dB, dC) shape");
}

// X on (A, C) embedded as X x I_B in the (A, B, C) layout.
Matrix embed_ac(const Matrix& x, int p, int db, int dc) {
  const std::int64_t n = std::int64_t(p) * db * dc;
  Matrix out = Matrix::Zero(n, n);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < db; ++b)
      for (int c = 0; c < dc; ++c)
        for (int a2 = 0; a2 < p; ++a2)
          for (int c2 = 0; c2 < dc; ++c2)
            out((a * db + b) * dc + c, (a2 * db + b) * dc + c2) = x(a * dc + c, a2 * dc + c2);
  return out;
}

double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// Nearest PSD operator with unit trace (eigenvalue clip, then rescale).
Matrix psd_project(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(m));
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  const double s = lam.sum();
  if (!(s > 0.0)) return m;
  lam /= s;
  const Matrix& q = es.eigenvectors();
  return q * lam.cast<cplx>().asDiagonal() * q.adjoint();
}

Matrix random_hermitian(int n, CounterRng& rng) {
  Matrix g(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) g(i, j) = rng.complex_normal();
  return hermitize(g);
}

// Largest t in [lo, hi] with min_eig(base + t dir) >= floor, assuming
// feasibility at lo.
double feasible_extent(const Matrix& base, const Matrix& dir, double lo, double hi, double floor) {
  if (min_eigenvalue(base + hi * dir) >= floor) return hi;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (min_eigenvalue(base + mid * dir) >= floor ? lo : hi) = mid;
  }
  return lo;
}

// Real coordinates of the two reduced operators of m.
Eigen::VectorXd rdm_coordinates(const Matrix& m, const SystemShape& shape) {
  const Matrix ab = partial_trace(m, shape, kKeepAB);
  const Matrix ac = partial_trace(m, shape, kKeepAC);
  Eigen::VectorXd out(2 * (ab.size() + ac.size()));
  Eigen::Index r = 0;
  for (const Matrix* x : {&ab, &ac})
    for (Eigen::Index i = 0; i < x->size(); ++i) {
      out(r++) = x->data()[i].real();
      out(r++) = x->data()[i].imag();
    }
  return out;
}

// Snaps an approximately feasible iterate onto the matching set by
// Gauss-Newton on a low-rank factor rho = Y Y^+, seeded from the dominant
// eigenpairs. The result is PSD by construction.
std::optional<Matrix> polish_on_face(const Matrix& rho, const Matrix& target, const SystemShape& shape) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(rho));
  const Eigen::Index n = rho.rows();
  const double lmax = es.eigenvalues()(n - 1);
  const Eigen::VectorXd b = rdm_coordinates(target, shape);
  Eigen::Index last_k = -1;
  for (double rel : {1e-3, 1e-5, 1e-7}) {
    Eigen::Index k = 0;
    while (k < n && es.eigenvalues()(n - 1 - k) > rel * lmax) ++k;
    if (k == 0 || k == last_k) continue;
    last_k = k;
    Matrix y = es.eigenvectors().rightCols(k) * es.eigenvalues().tail(k).cwiseSqrt().asDiagonal();
    Eigen::MatrixXd jac(b.size(), 2 * n * k);
    for (int iter = 0; iter < 30; ++iter) {
      const Eigen::VectorXd r = b - rdm_coordinates(y * y.adjoint(), shape);
      if (r.norm() < 1e-14) return hermitize(y * y.adjoint());
      Eigen::Index col = 0;
      for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
          for (cplx u : {cplx(1.0, 0.0), cplx(0.0, 1.0)}) {
            Matrix e = Matrix::Zero(n, k);
            e(i, j) = u;
            const Matrix dy = e * y.adjoint();
            jac.col(col++) = rdm_coordinates(dy + dy.adjoint(), shape);
          }
      const Eigen::VectorXd step = jac.completeOrthogonalDecomposition().solve(r);
      col = 0;
      for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < n; ++i) {
          y(i, j) += cplx(step(col), step(col + 1));
          col += 2;
        }
    }
  }
  return std::nullopt;
}

StateVector grouped_vector(const PureState& psi, const Split& split) {
  validate_split(split, psi.shape().size());
  std::vector<int> order = split.a;
  order.insert(order.end(), split.b.begin(), split.b.end());
  order.insert(order.end(), split.c.begin(), split.c.end());
  StateVector v = permute_subsystems(StateVector{psi.shape(), psi.amplitudes()}, order);
  const int runs[] = {int(split.a.size()), int(split.b.size()), int(split.c.size())};
  v.shape = v.shape.grouped(runs);
  return v;
}

}  // namespace

CompatibilityDirection::CompatibilityDirection(SystemShape shape, Matrix delta)
    : shape_(std::move(shape)), delta_(std::move(delta)) {
  require_tripartite(shape_);
  if (delta_.rows() != shape_.total() || delta_.cols() != shape_.total())
    throw DimensionMismatch("direction size vs shape");
  if (hermiticity_defect(delta_) > kTol) throw ValidationError("direction is not Hermitian");
  if (std::abs(delta_.norm() - 1.0) > 1e-10) throw ValidationError("direction does not have unit norm");
  const Matrix zero_ab = Matrix::Zero(shape_.dim(0) * shape_.dim(1), shape_.dim(0) * shape_.dim(1));
  const Matrix zero_ac = Matrix::Zero(shape_.dim(0) * shape_.dim(2), shape_.dim(0) * shape_.dim(2));
  const RdmDistance r{(partial_trace(delta_, shape_, kKeepAB) - zero_ab).norm(),
                      (partial_trace(delta_, shape_, kKeepAC) - zero_ac).norm()};
  if (r.max() > kTol) throw ValidationError("direction changes a reduced operator");
}

RdmDistance rdm_distance(const Matrix& rho, const Matrix& sigma, const SystemShape& shape) {
  require_tripartite(shape);
  if (rho.rows() != shape.total() || sigma.rows() != shape.total() || rho.cols() != rho.rows() ||
      sigma.cols() != sigma.rows())
    throw DimensionMismatch("operator sizes vs shape");
  const Matrix diff = rho - sigma;
  return {partial_trace(diff, shape, kKeepAB).norm(), partial_trace(diff, shape, kKeepAC).norm()};
}

Matrix group_operator(const Matrix& rho, const SystemShape& shape, const Split& split, SystemShape* grouped) {
  validate_split(split, shape.size());
  std::vector<int> order = split.a;
  order.insert(order.end(), split.b.begin(), split.b.end());
  order.insert(order.end(), split.c.begin(), split.c.end());
  Matrix out = permute_operator(rho, shape, order);
  if (grouped) {
    std::vector<int> dims;
    for (int s : order) dims.push_back(shape.dim(s));
    const int runs[] = {int(split.a.size()), int(split.b.size()), int(split.c.size())};
    *grouped = SystemShape(dims).grouped(runs);
  }
  return out;
}

bool rdm_match(const Matrix& rho, const Matrix& sigma, const SystemShape& shape, double tol) {
  return rdm_distance(rho, sigma, shape).max() <= tol;
}

bool rdm_match(const DensityOperator& rho, const DensityOperator& sigma, const Split& split, double tol) {
  if (!(rho.shape() == sigma.shape())) throw DimensionMismatch("operands have different shapes");
  SystemShape g;
  const Matrix r = group_operator(rho.matrix(), rho.shape(), split, &g);
  const Matrix s = group_operator(sigma.matrix(), sigma.shape(), split);
  return rdm_match(r, s, g, tol);
}

Matrix project_to_matching_directions(const Matrix& delta, const SystemShape& shape) {
  require_tripartite(shape);
  const int p = shape.dim(0), db = shape.dim(1), dc = shape.dim(2);
  const Matrix tr_c = partial_trace(delta, shape, kKeepAB);
  const Matrix tr_b = partial_trace(delta, shape, kKeepAC);
  const Matrix tr_bc = partial_trace(delta, shape, kKeepA);
  const Matrix ic = Matrix::Identity(dc, dc);
  // (id_A x Q_B x Q_C) with Q(X) = X - Tr(X) I / dim.
  return delta - kron(tr_c, ic) / double(dc) - embed_ac(tr_b, p, db, dc) / double(db) +
         kron(tr_bc, Matrix::Identity(db * dc, db * dc)) / double(db * dc);
}

std::vector<CompatibilityDirection> matching_nullspace_basis(const SystemShape& shape, int max_dim) {
  require_tripartite(shape);
  if (shape.total() > max_dim)
    throw DomainError("total dimension " + std::to_string(shape.total()) + " exceeds max_dim " + std::to_string(max_dim));
  const std::int64_t nullity = std::int64_t(shape.dim(0)) * shape.dim(0) * (shape.dim(1) * shape.dim(1) - 1) *
                               (shape.dim(2) * shape.dim(2) - 1);
  if (nullity * shape.total() * shape.total() > kMaxBasisEntries)
    throw DomainError("materialized basis would hold " + std::to_string(nullity) + " dense " +
                      std::to_string(shape.total()) + "-dimensional operators; use project_to_matching_directions");
  // Products O_a x T_b x T_c of trace-orthogonal local bases, with T traceless.
  const auto ba = hermitian_basis(shape.dim(0));
  const auto bb = hermitian_basis(shape.dim(1));
  const auto bc = hermitian_basis(shape.dim(2));
  std::vector<CompatibilityDirection> out;
  for (const auto& oa : ba)
    for (std::size_t j = 1; j < bb.size(); ++j) {
      const Matrix ab = kron(oa, bb[j]);
      for (std::size_t k = 1; k < bc.size(); ++k) {
        Matrix m = kron(ab, bc[k]);
        m /= m.norm();
        out.emplace_back(shape, std::move(m));
      }
    }
  return out;
}

SearchResult search_alternative(const PureState& psi, const Split& split, const SearchOptions& opts) {
  const StateVector v = grouped_vector(psi, split);
  const SystemShape& shape = v.shape;
  if (shape.total() > opts.max_dim)
    throw DomainError("total dimension " + std::to_string(shape.total()) + " exceeds max_dim " +
                      std::to_string(opts.max_dim));
  if (opts.n_starts < 0) throw ValidationError("n_starts must be non-negative");
  const int n = static_cast<int>(shape.total());
  const Matrix target = v.amplitudes * v.amplitudes.adjoint();

  NoneFound none;

  // Matching directions that lower <psi|rho|psi>; if there are none every
  // matching operator has unit fidelity and equals the target once PSD.
  const Matrix w = project_to_matching_directions(target, shape);
  const double w2 = w.squaredNorm();
  if (!(w2 > 1e-24)) {
    none.n_starts = 0;
    return none;
  }

  const CounterRng root(opts.seed);
  std::optional<Witness> best;
  for (int s = 0; s < opts.n_starts; ++s) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(s));
    Matrix dir = project_to_matching_directions(random_hermitian(n, rng), shape);
    dir /= dir.norm();
    const double eps = opts.start_scale * (0.5 + 1.5 * rng.uniform());
    // Each start targets one fidelity level 1 - sep with sep log-uniform in
    // [2 min_separation, 1]. The level set of the matching set is affine.
    const double lo = std::min(1.0, 2.0 * opts.min_separation);
    const double sep_level = lo * std::pow(1.0 / lo, rng.uniform());
    auto project_affine = [&](const Matrix& rho) {
      Matrix delta = project_to_matching_directions(rho - target, shape);
      const double shift = (-sep_level - (w.adjoint() * delta).trace().real()) / w2;
      return Matrix(target + delta + shift * w);
    };
    Matrix rho = psd_project(target + eps * dir);

    bool converged = false, stalled = false;
    int it = 0;
    double prev_step = -1.0;
    for (; it < opts.max_iterations; ++it) {
      const Matrix next = psd_project(project_affine(rho));
      const double step = (next - rho).norm();
      rho = next;
      if (step < opts.step_tol) {
        converged = true;
        ++it;
        break;
      }
      // A constant nonzero step means the two sets are disjoint at this
      // fidelity level and the iterates have settled at their gap.
      if (std::abs(step - prev_step) <= opts.stall_tol * step) {
        stalled = true;
        ++it;
        break;
      }
      prev_step = step;
    }
    none.total_iterations += it;
    none.converged_starts += converged;
    none.stalled_starts += stalled;

    // Final point on the matching set, pulled back to the PSD cone along the
    // segment to the target, then pushed outward as far as PSD allows.
    const double floor = -0.5 * opts.psd_tol;
    const std::optional<Matrix> snapped = polish_on_face(rho, target, shape);
    Matrix diff = project_to_matching_directions(hermitize((snapped ? *snapped : rho) - target), shape);
    double t = 1.0;
    if (min_eigenvalue(target + diff) < floor) t = feasible_extent(target, diff, 0.0, 1.0, floor);
    const double dn = diff.norm();
    if (dn > 0.0) t = feasible_extent(target, diff, t, std::max(t, 2.0 / dn), floor);
    const Matrix cand = target + t * diff;
    const double sep = trace_distance(cand, target);
    none.best_intrusion = std::max(none.best_intrusion, sep);

    const double residual = rdm_distance(cand, target, shape).max();
    const double lmin = min_eigenvalue(cand);
    if (sep >= opts.min_separation && residual <= opts.match_tol && lmin >= -opts.psd_tol) {
      if (!best || sep > best->trace_distance) best = Witness{cand, shape, sep, residual, lmin, s};
    }
  }
  none.n_starts = opts.n_starts;
  if (best) return *best;
  return none;
}

Matrix alpha_expansion(const TriangularState& phi, cplx alpha) {
  const int d = phi.d();
  const Vector x = phi.vector().amplitudes;
  Vector x1 = Vector::Zero(x.size()), x2 = x;
  for (std::int64_t i = d - 1; i < x.size(); i += d) x1(i) = x(i), x2(i) = 0.0;
  return x1 * x1.adjoint() + x2 * x2.adjoint() + alpha * x1 * x2.adjoint() + std::conj(alpha) * x2 * x1.adjoint();
}

ReductionDiagnostics verify_theorem_reduce(const TriangularState& phi, const DensityOperator& rho, double tol) {
  if (!is_regular_triangular(phi)) throw NotRegularTriangular("phi is not a regular triangular vector");
  const int d = phi.d();
  const SystemShape shape{2, d, d};
  if (rho.matrix().rows() != shape.total()) throw DimensionMismatch("rho size vs phi");
  const Vector x = phi.state().amplitudes();
  const Matrix target = x * x.adjoint();
  const RdmDistance pre = rdm_distance(rho.matrix(), target, shape);
  if (pre.max() > tol) throw RdmMismatch("rho does not share the reduced operators of phi phi^+ (" + std::to_string(pre.max()) + ")");

  // P1 keeps C-index d - 1.
  const std::int64_t n = shape.total();
  Eigen::VectorXd p1 = Eigen::VectorXd::Zero(n);
  for (std::int64_t i = d - 1; i < n; i += d) p1(i) = 1.0;
  const Eigen::VectorXd p2 = Eigen::VectorXd::Ones(n) - p1;
  auto sandwich = [](const Eigen::VectorXd& p, const Matrix& m) {
    return Matrix(p.cast<cplx>().asDiagonal() * m * p.cast<cplx>().asDiagonal());
  };
  ReductionDiagnostics out;
  out.p1_residual = (sandwich(p1, rho.matrix()) - sandwich(p1, target)).norm();
  const RdmDistance r2 = rdm_distance(sandwich(p2, rho.matrix()), sandwich(p2, target), shape);
  out.p2_rdm_mismatch = r2.ab + r2.ac;
  return out;
}

}  // namespace qst
