#include "qst/canonical_form.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <string>

#include "qst/errors.hpp"

namespace qst {

namespace {

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

// Unitary W with W * x proportional to e_0.
Matrix reflector_to_e0(const Eigen::VectorXcd& x) {
  const Eigen::Index n = x.size();
  const Matrix col = x;
  Eigen::HouseholderQR<Matrix> qr(col);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  return q.adjoint();
}

// X = R Q with R upper triangular and Q unitary.
std::pair<Matrix, Matrix> rq_decompose(const Matrix& x) {
  const Eigen::Index n = x.rows();
  const Matrix flip = Matrix::Identity(n, n).rowwise().reverse();
  Eigen::HouseholderQR<Matrix> qr(Matrix((flip * x).adjoint()));
  const Matrix q1 = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix r1 = qr.matrixQR().triangularView<Eigen::Upper>();
  return {flip * r1.adjoint() * flip, flip * q1.adjoint()};
}

std::vector<cplx> ratios(const Matrix& ta, const Matrix& tb) {
  std::vector<cplx> out;
  for (Eigen::Index i = 0; i < ta.rows(); ++i) out.push_back(ta(i, i) / tb(i, i));
  return out;
}

}  // namespace

MatrixPair::MatrixPair(Matrix a_, Matrix b_) : a(std::move(a_)), b(std::move(b_)) {
  if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
    throw DimensionMismatch("matrix pair must be two d x d matrices");
}

double MatrixPair::scale() const { return std::sqrt(a.squaredNorm() + b.squaredNorm()); }

MatrixPair state_to_pair(const StateVector& v) {
  const auto& dims = v.shape.dims();
  if (dims.size() != 3 || dims[0] != 2 || dims[1] != dims[2])
    throw DimensionMismatch("matrix pair needs a (2, d, d) shape");
  const int d = dims[1];
  Matrix a(d, d), b(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      a(i, j) = v.amplitudes(i * d + j);
      b(i, j) = v.amplitudes(d * d + i * d + j);
    }
  return MatrixPair(std::move(a), std::move(b));
}

MatrixPair state_to_pair(const PureState& psi) {
  return state_to_pair(StateVector{psi.shape(), psi.amplitudes()});
}

StateVector pair_to_state(const MatrixPair& pair) {
  const int d = pair.d();
  StateVector v{SystemShape{2, d, d}, Vector(2 * d * d)};
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      v.amplitudes(i * d + j) = pair.a(i, j);
      v.amplitudes(d * d + i * d + j) = pair.b(i, j);
    }
  return v;
}

// ---------------------------------------------------------------------------
// TriangularState

TriangularState::TriangularState(StateVector v) : vector_(std::move(v)) {
  const MatrixPair pair = state_to_pair(vector_);
  const int d = pair.d();
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < j; ++k)
      if (std::abs(pair.a(j, k)) > kTol || std::abs(pair.b(j, k)) > kTol)
        throw ValidationError("vector has a nonzero coefficient below the diagonal");
  for (int j = 0; j < d; ++j)
    for (int k = 0; k <= std::min(j + 1, d - 1); ++k)
      if (std::abs(pair.a(j, k).imag()) > kTol)
        throw ValidationError("A-coefficient (" + std::to_string(j) + ", " + std::to_string(k) + ") is not real");
}

Eigen::Vector2cd TriangularState::block(int i, int j) const {
  const int d = this->d();
  if (i < 0 || j < 0 || i >= d || j >= d) throw IndexError("block index out of range");
  return {vector_.amplitudes(i * d + j), vector_.amplitudes(d * d + i * d + j)};
}

TriangularState TriangularState::compressed() const {
  const int d = this->d();
  if (d < 2) throw DomainError("cannot compress a d = 1 vector");
  const MatrixPair pair = state_to_pair(vector_);
  return TriangularState(pair_to_state(MatrixPair(pair.a.topLeftCorner(d - 1, d - 1), pair.b.topLeftCorner(d - 1, d - 1))));
}

// ---------------------------------------------------------------------------
// Pencil

bool pencil_has_full_degree(const MatrixPair& pair, double tol) {
  const double nb = pair.b.norm();
  if (nb == 0.0) return false;
  // Compare in the scale-free form |det(B / |B|)| > tol.
  return std::abs((pair.b / nb).determinant()) > tol;
}

std::vector<cplx> pencil_roots(const MatrixPair& pair, double tol) {
  if (!pencil_has_full_degree(pair, tol)) throw DegeneratePencil("det(A - xB) has degree below d (det B ~ 0)");
  Eigen::ComplexEigenSolver<Matrix> es(pair.b.partialPivLu().solve(pair.a), false);
  if (es.info() != Eigen::Success) throw ConvergenceFailure("pencil eigenvalues did not converge");
  std::vector<cplx> roots(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  return sorted_eigenvalues(std::move(roots));
}

void apply_reality_gauge(Triangularization& tri, double tol) {
  const Eigen::Index d = tri.ta.rows();
  if (d == 0) return;
  const double scale = std::max(1.0, max_abs(tri.ta));
  Eigen::VectorXcd e(d), f(d);
  f(0) = 1.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::abs(tri.ta(i, i)) > tol * scale) {
      e(i) = f(i) * std::conj(unit_phase(tri.ta(i, i)));
    } else {
      e(i) = f(i);
      tri.notes.push_back("reality gauge: A(" + std::to_string(i) + "," + std::to_string(i) + ") negligible");
    }
    if (i + 1 < d) {
      if (std::abs(tri.ta(i, i + 1)) > tol * scale) {
        f(i + 1) = e(i) * unit_phase(tri.ta(i, i + 1));
      } else {
        f(i + 1) = e(i);
        tri.notes.push_back("reality gauge: A(" + std::to_string(i) + "," + std::to_string(i + 1) + ") negligible");
      }
    }
  }
  // ta <- E ta F^dagger, u <- E u, v <- F v.
  const Matrix E = e.asDiagonal();
  const Matrix F = f.asDiagonal();
  tri.ta = E * tri.ta * F.adjoint();
  tri.tb = E * tri.tb * F.adjoint();
  for (Eigen::Index i = 0; i < d; ++i) {
    // Clear rounding residue in the entries the gauge made real.
    tri.ta(i, i) = tri.ta(i, i).real();
    if (i + 1 < d) tri.ta(i, i + 1) = tri.ta(i, i + 1).real();
  }
  tri.u = UnitaryMatrix(E * tri.u.matrix());
  tri.v = UnitaryMatrix(F * tri.v.matrix());
}

Triangularization simultaneous_triangularize(const MatrixPair& pair, const TriangularizeOptions& opts) {
  if (!pencil_has_full_degree(pair, opts.tol)) throw DegeneratePencil("det(A - xB) has degree below d (det B ~ 0)");
  const int d = pair.d();
  const auto lu = pair.b.partialPivLu();
  const Matrix left = pair.a * lu.inverse();  // A B^-1
  const Matrix right = lu.solve(pair.a);      // B^-1 A

  const double root_scale = std::max(1.0, left.norm());
  const SchurResult su = ordered_schur(left, opts.group_tol * root_scale);
  std::vector<cplx> roots;
  for (int i = 0; i < d; ++i) roots.push_back(su.t(i, i));
  std::vector<std::string> notes;
  if (min_separation(roots) <= opts.group_tol * root_scale) {
    if (opts.strict) throw DegeneratePencil("coincident pencil roots");
    notes.push_back("coincident pencil roots ordered by index");
  }

  const SchurResult sv = ordered_schur(right, opts.group_tol * root_scale);
  Triangularization tri{su.q, sv.q, su.q.matrix() * pair.a * sv.q.matrix().adjoint(),
                        su.q.matrix() * pair.b * sv.q.matrix().adjoint(), {}, std::move(notes)};

  const double limit = opts.tol * std::max(pair.scale(), 1e-300);
  if (below_diagonal(tri.ta) > limit || below_diagonal(tri.tb) > limit) {
    // The two Schur frames disagree (near-coincident roots); derive V from U
    // instead so that U B V^dagger is triangular by construction.
    auto [r, q] = rq_decompose(su.q.matrix() * pair.b);
    tri.v = UnitaryMatrix(q);
    tri.ta = su.q.matrix() * pair.a * q.adjoint();
    tri.tb = su.q.matrix() * pair.b * q.adjoint();
    tri.notes.push_back("right frame derived from left frame by RQ");
  }
  apply_reality_gauge(tri, opts.tol);
  tri.roots = ratios(tri.ta, tri.tb);
  return tri;
}

Triangularization triangularize_by_deflation(const MatrixPair& pair, double tol) {
  if (!pencil_has_full_degree(pair, tol)) throw DegeneratePencil("det(A - xB) has degree below d (det B ~ 0)");
  const int n = pair.d();
  Matrix u = Matrix::Identity(n, n);
  Matrix v = Matrix::Identity(n, n);
  Matrix a = pair.a;
  Matrix b = pair.b;
  // Each step deflates the trailing (n - k) x (n - k) block of the pencil.
  for (int k = 0; k + 1 < n; ++k) {
    const int m = n - k;
    const Matrix ak = a.bottomRightCorner(m, m);
    const Matrix bk = b.bottomRightCorner(m, m);
    const cplx root = pencil_roots(MatrixPair(ak, bk), 0.0).front();

    Eigen::JacobiSVD<Matrix> svd(ak - root * bk, Eigen::ComputeFullV);
    const Eigen::VectorXcd kernel = svd.matrixV().col(m - 1);
    const Eigen::VectorXcd image = bk * kernel;
    if (image.norm() == 0.0) throw DegeneratePencil("kernel vector annihilated by B");

    Matrix v1 = Matrix::Identity(n, n);
    Matrix w1 = Matrix::Identity(n, n);
    v1.bottomRightCorner(m, m) = reflector_to_e0(kernel);
    w1.bottomRightCorner(m, m) = reflector_to_e0(image);
    a = w1 * a * v1.adjoint();
    b = w1 * b * v1.adjoint();
    u = w1 * u;
    v = v1 * v;
  }
  Triangularization tri{UnitaryMatrix(u), UnitaryMatrix(v), u * pair.a * v.adjoint(), u * pair.b * v.adjoint(), {}, {}};
  apply_reality_gauge(tri, tol);
  tri.roots = ratios(tri.ta, tri.tb);
  return tri;
}

TriangularForm triangular_form(const PureState& psi, const TriangularizeOptions& opts) {
  const MatrixPair pair = state_to_pair(psi);
  Triangularization tri = simultaneous_triangularize(pair, opts);
  Matrix ta = tri.ta;
  Matrix tb = tri.tb;
  // Rounding residue below the diagonal is far under the invariant tolerance;
  // keep the vector equal to (I x U x V) psi rather than projecting it.
  StateVector phi = pair_to_state(MatrixPair(std::move(ta), std::move(tb)));
  return {TriangularState(std::move(phi)), tri.u, tri.v, tri.roots, tri.notes};
}

bool is_regular_triangular(const TriangularState& phi, double tol) {
  const int d = phi.d();
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      const Eigen::Vector2cd bij = phi.block(i, j);
      if (bij.norm() <= tol) return false;
      for (int k = 0; k < d; ++k) {
        if (i == j && j == k) continue;
        Eigen::Matrix2cd pairm;
        pairm.col(0) = bij;
        pairm.col(1) = phi.block(k, k);
        Eigen::JacobiSVD<Eigen::Matrix2cd> svd(pairm);
        if (svd.singularValues()(1) <= tol) return false;
      }
    }
  return true;
}

int triangular_manifold_dim(int d) {
  if (d < 1) throw DomainError("dimension must be >= 1");
  return 2 * d * d + 1;
}

}  // namespace qst
