#include "qst/tensor.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qst/errors.hpp"

namespace qst {

namespace {

std::vector<int> checked_keep(const SystemShape& shape, std::span<const int> keep) {
  if (keep.empty()) throw IndexError("keep set is empty");
  std::vector<int> sorted(keep.begin(), keep.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] < 0 || sorted[i] >= shape.size())
      throw IndexError("subsystem " + std::to_string(sorted[i]) + " does not exist in a " +
                       std::to_string(shape.size()) + "-partite shape");
    if (i > 0 && sorted[i] == sorted[i - 1])
      throw IndexError("subsystem " + std::to_string(sorted[i]) + " listed twice");
  }
  return sorted;
}

std::vector<std::int64_t> strides_of(const SystemShape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int s = shape.size() - 2; s >= 0; --s) strides[s] = strides[s + 1] * shape.dim(s + 1);
  return strides;
}

// Flat offsets of every multi-index over `sites`, enumerated row-major over
// the sites in the given order.
std::vector<std::int64_t> offsets_over(const SystemShape& shape, std::span<const int> sites) {
  const auto strides = strides_of(shape);
  std::vector<std::int64_t> out{0};
  for (int site : sites) {
    std::vector<std::int64_t> next;
    next.reserve(out.size() * shape.dim(site));
    for (auto base : out)
      for (int k = 0; k < shape.dim(site); ++k) next.push_back(base + k * strides[site]);
    out = std::move(next);
  }
  return out;
}

std::vector<int> complement(const SystemShape& shape, const std::vector<int>& keep) {
  std::vector<int> rest;
  for (int s = 0; s < shape.size(); ++s)
    if (!std::binary_search(keep.begin(), keep.end(), s)) rest.push_back(s);
  return rest;
}

}  // namespace

// ---------------------------------------------------------------------------
// SystemShape

SystemShape::SystemShape(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw ValidationError("shape needs at least one subsystem");
  for (int d : dims_) {
    if (d < 1) throw ValidationError("subsystem dimensions must be >= 1");
    total_ *= d;
  }
}

SystemShape SystemShape::qudits(int n, int d) {
  if (n < 1) throw DomainError("need at least one qudit");
  return SystemShape(std::vector<int>(n, d));
}

int SystemShape::dim(int site) const {
  if (site < 0 || site >= size()) throw IndexError("site " + std::to_string(site) + " out of range");
  return dims_[site];
}

std::int64_t SystemShape::total_over(std::span<const int> sites) const {
  std::int64_t t = 1;
  for (int s : sites) t *= dim(s);
  return t;
}

SystemShape SystemShape::restricted(std::span<const int> sites) const {
  std::vector<int> d;
  for (int s : checked_keep(*this, sites)) d.push_back(dims_[s]);
  return SystemShape(std::move(d));
}

SystemShape SystemShape::grouped(std::span<const int> run_lengths) const {
  std::vector<int> d;
  int pos = 0;
  for (int len : run_lengths) {
    if (len < 1 || pos + len > size()) throw DimensionMismatch("grouping does not fit shape");
    int g = 1;
    for (int k = 0; k < len; ++k) g *= dims_[pos + k];
    d.push_back(g);
    pos += len;
  }
  if (pos != size()) throw DimensionMismatch("grouping does not cover every subsystem");
  return SystemShape(std::move(d));
}

// ---------------------------------------------------------------------------
// State and operator types

PureState::PureState(SystemShape shape, Vector amplitudes)
    : shape_(std::move(shape)), amplitudes_(std::move(amplitudes)) {
  if (amplitudes_.size() != shape_.total())
    throw DimensionMismatch("amplitude count " + std::to_string(amplitudes_.size()) +
                            " does not match shape total " + std::to_string(shape_.total()));
  const double n = amplitudes_.norm();
  if (std::abs(n - 1.0) > 1e-12)
    throw ValidationError("state norm " + std::to_string(n) + " is not 1");
}

PureState PureState::normalize(const StateVector& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("cannot normalize a zero vector");
  return PureState(v.shape, v.amplitudes / n);
}

DensityOperator::DensityOperator(SystemShape shape, Matrix matrix,
                                 std::optional<double> declared_trace)
    : shape_(std::move(shape)), matrix_(std::move(matrix)) {
  if (matrix_.rows() != shape_.total() || matrix_.cols() != shape_.total())
    throw DimensionMismatch("operator size does not match shape");
  if (hermiticity_defect(matrix_) > kTol) throw ValidationError("operator is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Matrix> es(matrix_, Eigen::EigenvaluesOnly);
  if (es.eigenvalues()(0) < -kTol)
    throw ValidationError("operator has negative eigenvalue " + std::to_string(es.eigenvalues()(0)));
  if (declared_trace && std::abs(matrix_.trace().real() - *declared_trace) > kTol)
    throw ValidationError("trace " + std::to_string(matrix_.trace().real()) +
                          " differs from declared " + std::to_string(*declared_trace));
}

DensityOperator DensityOperator::from_pure(const PureState& psi) {
  return DensityOperator(psi.shape(), psi.projector());
}

UnitaryMatrix::UnitaryMatrix(Matrix m) : matrix_(std::move(m)) {
  if (matrix_.rows() != matrix_.cols()) throw DimensionMismatch("unitary must be square");
  if (unitarity_defect(matrix_) > kTol) throw ValidationError("matrix is not unitary");
}

UnitaryMatrix UnitaryMatrix::identity(int dim) { return UnitaryMatrix(Matrix::Identity(dim, dim)); }

UnitaryMatrix UnitaryMatrix::adjoint() const { return UnitaryMatrix(matrix_.adjoint()); }

UnitaryMatrix UnitaryMatrix::operator*(const UnitaryMatrix& rhs) const {
  return UnitaryMatrix(matrix_ * rhs.matrix_);
}

// ---------------------------------------------------------------------------
// Kernels

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double hermiticity_defect(const Matrix& m) { return max_abs(m - m.adjoint()); }

double unitarity_defect(const Matrix& m) {
  return max_abs(m * m.adjoint() - Matrix::Identity(m.rows(), m.rows()));
}

Matrix hermitize(const Matrix& m) { return 0.5 * (m + m.adjoint()); }

Matrix kron(const Matrix& x, const Matrix& y) {
  Matrix out(x.rows() * y.rows(), x.cols() * y.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index k = 0; k < x.cols(); ++k)
      out.block(i * y.rows(), k * y.cols(), y.rows(), y.cols()) = x(i, k) * y;
  return out;
}

Matrix partial_trace(const Matrix& rho, const SystemShape& shape, std::span<const int> keep) {
  if (rho.rows() != shape.total() || rho.cols() != shape.total())
    throw DimensionMismatch("operator size does not match shape");
  const auto kept = checked_keep(shape, keep);
  const auto traced = complement(shape, kept);
  const auto off_k = offsets_over(shape, kept);
  const auto off_t = offsets_over(shape, traced);
  const auto nk = static_cast<Eigen::Index>(off_k.size());
  Matrix out = Matrix::Zero(nk, nk);
  for (Eigen::Index c = 0; c < nk; ++c)
    for (Eigen::Index r = 0; r < nk; ++r) {
      cplx acc = 0.0;
      for (auto t : off_t) acc += rho(off_k[r] + t, off_k[c] + t);
      out(r, c) = acc;
    }
  return out;
}

DensityOperator partial_trace(const DensityOperator& rho, std::span<const int> keep) {
  Matrix m = partial_trace(rho.matrix(), rho.shape(), keep);
  const double tr = rho.trace().real();
  return DensityOperator(rho.shape().restricted(keep), std::move(m), tr);
}

Matrix reduced_density(const StateVector& v, std::span<const int> keep) {
  if (v.amplitudes.size() != v.shape.total()) throw DimensionMismatch("amplitudes vs shape");
  const auto kept = checked_keep(v.shape, keep);
  const auto traced = complement(v.shape, kept);
  const auto off_k = offsets_over(v.shape, kept);
  const auto off_t = offsets_over(v.shape, traced);
  Matrix psi(off_k.size(), off_t.size());
  for (std::size_t r = 0; r < off_k.size(); ++r)
    for (std::size_t c = 0; c < off_t.size(); ++c) psi(r, c) = v.amplitudes(off_k[r] + off_t[c]);
  return psi * psi.adjoint();
}

Matrix reduced_density(const PureState& psi, std::span<const int> keep) {
  return reduced_density(StateVector{psi.shape(), psi.amplitudes()}, keep);
}

StateVector permute_subsystems(const StateVector& v, std::span<const int> order) {
  if (static_cast<int>(order.size()) != v.shape.size())
    throw DimensionMismatch("permutation length differs from subsystem count");
  std::vector<int> seen(order.begin(), order.end());
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < v.shape.size(); ++i)
    if (seen[i] != i) throw IndexError("not a permutation of the subsystems");
  std::vector<int> dims;
  for (int s : order) dims.push_back(v.shape.dim(s));
  const auto src = offsets_over(v.shape, order);
  StateVector out{SystemShape(dims), Vector(v.amplitudes.size())};
  for (std::size_t i = 0; i < src.size(); ++i) out.amplitudes(i) = v.amplitudes(src[i]);
  return out;
}

Matrix permute_operator(const Matrix& rho, const SystemShape& shape, std::span<const int> order) {
  if (rho.rows() != shape.total() || rho.cols() != shape.total()) throw DimensionMismatch("operator size vs shape");
  StateVector probe{shape, Vector(shape.total())};
  for (std::int64_t i = 0; i < shape.total(); ++i) probe.amplitudes(i) = double(i);
  const StateVector idx = permute_subsystems(probe, order);
  const std::int64_t n = shape.total();
  std::vector<std::int64_t> src(n);
  for (std::int64_t i = 0; i < n; ++i) src[i] = static_cast<std::int64_t>(idx.amplitudes(i).real());
  Matrix out(n, n);
  for (std::int64_t c = 0; c < n; ++c)
    for (std::int64_t r = 0; r < n; ++r) out(r, c) = rho(src[r], src[c]);
  return out;
}

Vector apply_local(const Vector& amplitudes, const SystemShape& shape, const Matrix& op, int site) {
  const int d = shape.dim(site);
  if (op.rows() != d || op.cols() != d) throw DimensionMismatch("local operator size differs from site dimension");
  if (amplitudes.size() != shape.total()) throw DimensionMismatch("amplitudes vs shape");
  const auto strides = strides_of(shape);
  const std::int64_t inner = strides[site];
  const std::int64_t outer = shape.total() / (inner * d);
  Vector out(amplitudes.size());
  Vector fiber(d);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * d * inner + in;
      for (int k = 0; k < d; ++k) fiber(k) = amplitudes(base + k * inner);
      const Vector res = op * fiber;
      for (int k = 0; k < d; ++k) out(base + k * inner) = res(k);
    }
  return out;
}

PureState apply_local_unitary(const PureState& psi, const UnitaryMatrix& u, int site) {
  if (site < 0 || site >= psi.shape().size()) throw IndexError("site out of range");
  if (u.dim() != psi.shape().dim(site))
    throw DimensionMismatch("unitary dimension " + std::to_string(u.dim()) + " differs from site dimension " +
                            std::to_string(psi.shape().dim(site)));
  Vector out = apply_local(psi.amplitudes(), psi.shape(), u.matrix(), site);
  // Rounding may move the norm by a few ulps; restore it exactly.
  out /= out.norm();
  return PureState(psi.shape(), std::move(out));
}

PureState haar_random_state(const SystemShape& shape, std::uint64_t seed) {
  CounterRng rng(seed);
  Vector v(shape.total());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.complex_normal();
  return PureState(shape, v / v.norm());
}

UnitaryMatrix haar_unitary(int dim, CounterRng& rng) {
  Matrix z(dim, dim);
  for (int c = 0; c < dim; ++c)
    for (int r = 0; r < dim; ++r) z(r, c) = rng.complex_normal();
  Eigen::HouseholderQR<Matrix> qr(z);
  Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int k = 0; k < dim; ++k) {
    const double a = std::abs(r(k, k));
    if (a > 0) q.col(k) *= r(k, k) / a;
  }
  return UnitaryMatrix(std::move(q));
}

std::vector<Matrix> hermitian_basis(int d) {
  if (d < 1) throw DomainError("dimension must be >= 1");
  const cplx i_unit(0.0, 1.0);
  std::vector<Matrix> out{Matrix::Identity(d, d)};
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      Matrix m = Matrix::Zero(d, d);
      m(j, k) = m(k, j) = 1.0;
      out.push_back(std::move(m));
    }
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      Matrix m = Matrix::Zero(d, d);
      m(j, k) = -i_unit;
      m(k, j) = i_unit;
      out.push_back(std::move(m));
    }
  for (int l = 1; l < d; ++l) {
    Matrix m = Matrix::Zero(d, d);
    const double c = std::sqrt(2.0 / (l * (l + 1.0)));
    for (int j = 0; j < l; ++j) m(j, j) = c;
    m(l, l) = -c * l;
    out.push_back(std::move(m));
  }
  return out;
}

double fidelity_pure(const PureState& psi, const PureState& phi) {
  if (!(psi.shape() == phi.shape())) throw DimensionMismatch("fidelity of states with different shapes");
  const double f = std::norm(psi.amplitudes().dot(phi.amplitudes()));
  return std::clamp(f, 0.0, 1.0);
}

double trace_distance(const Matrix& rho, const Matrix& sigma) {
  if (rho.rows() != sigma.rows() || rho.cols() != sigma.cols()) throw DimensionMismatch("trace distance operands differ in size");
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(rho - sigma), Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

// ---------------------------------------------------------------------------
// Schur

SchurResult schur_unitary(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("Schur decomposition of a non-square matrix");
  if (m.rows() == 0) return {UnitaryMatrix(Matrix(0, 0)), Matrix(0, 0)};
  Eigen::ComplexSchur<Matrix> schur(m);
  if (schur.info() != Eigen::Success) throw ConvergenceFailure("complex Schur QR iteration did not converge");
  Matrix t = schur.matrixT().triangularView<Eigen::Upper>();
  return {UnitaryMatrix(schur.matrixU().adjoint()), std::move(t)};
}

bool eigen_less(cplx a, cplx b, double group_tol) {
  if (a.real() < b.real() - group_tol) return true;
  if (a.real() > b.real() + group_tol) return false;
  return a.imag() < b.imag() - group_tol;
}

namespace {

// Swaps diagonal entries k and k+1 of the triangular t, keeping m = z t z^+.
void swap_adjacent(Matrix& t, Matrix& z, Eigen::Index k) {
  // Eigenvector of the 2x2 block for t(k+1,k+1) becomes the new first
  // basis vector of the pair.
  cplx x1 = t(k, k + 1);
  cplx x2 = t(k + 1, k + 1) - t(k, k);
  const double nx = std::hypot(std::abs(x1), std::abs(x2));
  if (nx == 0.0) return;
  x1 /= nx;
  x2 /= nx;
  Eigen::Matrix2cd g;
  g << x1, -std::conj(x2), x2, std::conj(x1);
  t.middleRows(k, 2) = g.adjoint() * t.middleRows(k, 2);
  t.middleCols(k, 2) = t.middleCols(k, 2) * g;
  z.middleCols(k, 2) = z.middleCols(k, 2) * g;
  t(k + 1, k) = 0.0;
}

}  // namespace

SchurResult ordered_schur(const Matrix& m, double group_tol) {
  SchurResult s = schur_unitary(m);
  Matrix& t = s.t;
  Matrix z = s.q.matrix().adjoint();  // m = z t z^dagger
  const Eigen::Index n = t.rows();
  // Bubble sort with adjacent swaps; n is small.
  for (Eigen::Index pass = 0; pass < n; ++pass) {
    bool swapped = false;
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
      if (!eigen_less(t(k + 1, k + 1), t(k, k), group_tol)) continue;
      swap_adjacent(t, z, k);
      swapped = true;
    }
    if (!swapped) break;
  }
  return {UnitaryMatrix(z.adjoint()), std::move(t)};
}

SchurResult schur_reorder_to(const SchurResult& s, std::span<const cplx> target) {
  Matrix t = s.t;
  Matrix z = s.q.matrix().adjoint();
  const Eigen::Index n = t.rows();
  if (static_cast<Eigen::Index>(target.size()) != n) throw DimensionMismatch("target spectrum has wrong length");
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index best = k;
    for (Eigen::Index m = k + 1; m < n; ++m)
      if (std::abs(t(m, m) - target[k]) < std::abs(t(best, best) - target[k])) best = m;
    for (Eigen::Index m = best; m > k; --m) swap_adjacent(t, z, m - 1);
  }
  return {UnitaryMatrix(z.adjoint()), std::move(t)};
}

double min_separation(std::span<const cplx> values) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = i + 1; j < values.size(); ++j) best = std::min(best, std::abs(values[i] - values[j]));
  return best;
}

std::vector<cplx> sorted_eigenvalues(std::vector<cplx> values, double group_tol) {
  std::stable_sort(values.begin(), values.end(),
                   [group_tol](cplx a, cplx b) { return eigen_less(a, b, group_tol); });
  return values;
}

}  // namespace qst
