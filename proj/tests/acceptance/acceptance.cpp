// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "qst/canonical_form.hpp"
#include "qst/errors.hpp"
#include "qst/io.hpp"
#include "qst/reconstruction.hpp"
#include "qst/tomography.hpp"
#include "qst/uda_oracle.hpp"

using namespace qst;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream ss;
  ss.precision(3);
  ss << x;
  return ss.str();
}

double below_diagonal(const Matrix& m) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = j + 1; i < m.rows(); ++i) worst = std::max(worst, std::abs(m(i, j)));
  return worst;
}

double reality_defect(const Matrix& ta) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < ta.rows(); ++i) {
    worst = std::max(worst, std::abs(ta(i, i).imag()));
    if (i + 1 < ta.cols()) worst = std::max(worst, std::abs(ta(i, i + 1).imag()));
  }
  return worst;
}

// Greedy matching distance between two root lists.
double root_distance(std::vector<cplx> x, std::vector<cplx> y) {
  if (x.size() != y.size()) return 1e300;
  double worst = 0.0;
  for (const cplx& v : x) {
    auto best = std::min_element(y.begin(), y.end(),
                                 [&](const cplx& a, const cplx& b) { return std::abs(a - v) < std::abs(b - v); });
    worst = std::max(worst, std::abs(*best - v));
    y.erase(best);
  }
  return worst;
}

Outcome criterion_triangular_form() {
  const auto t0 = std::chrono::steady_clock::now();
  double lower = 0.0, reality = 0.0, unitary = 0.0, spectra = 0.0;
  for (int d = 2; d <= 6; ++d)
    for (int t = 0; t < 100; ++t) {
      const PureState psi = haar_random_state(SystemShape{2, d, d}, 1000 * d + t);
      const MatrixPair pair = state_to_pair(psi);
      const Triangularization tri = simultaneous_triangularize(pair);
      const double scale = pair.scale();
      lower = std::max(lower, std::max(below_diagonal(tri.ta), below_diagonal(tri.tb)) / scale);
      reality = std::max(reality, reality_defect(tri.ta));
      unitary = std::max(unitary, std::max(unitarity_defect(tri.u.matrix()), unitarity_defect(tri.v.matrix())));
      const Triangularization ref = triangularize_by_deflation(pair);
      spectra = std::max(spectra, root_distance(tri.roots, ref.roots));
    }
  const double secs = elapsed_s(t0);
  Outcome o;
  o.pass = lower <= 1e-10 && reality <= 1e-10 && unitary <= 1e-12 && spectra <= 1e-8 && secs < 30.0;
  o.detail = "lower/scale " + fmt(lower) + ", imag " + fmt(reality) + ", unitarity " + fmt(unitary) +
             ", spectra vs deflation " + fmt(spectra) + ", " + fmt(secs) + " s";
  return o;
}

Outcome criterion_manifold_dim() {
  Outcome o;
  for (int d = 1; d <= 10; ++d) {
    const int independent = d * (d + 1) / 2 * 4 - d - (d - 1);
    const int got = triangular_manifold_dim(d);
    if (got != 2 * d * d + 1 || got != independent) {
      o.pass = false;
      o.detail += "d=" + std::to_string(d) + " got " + std::to_string(got) + "; ";
    }
  }
  if (o.pass) o.detail = "2d^2+1 for d = 1..10";
  return o;
}

Outcome criterion_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  auto run = [&](const std::string& label, const std::function<double(std::uint64_t)>& trial) {
    int good = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
      double f = 0.0;
      try {
        f = trial(t);
      } catch (const Error&) {
        f = 0.0;
      }
      good += f >= 1.0 - 1e-8;
    }
    if (good < 99) o.pass = false;
    o.detail += label + " " + std::to_string(good) + "/100; ";
  };
  ReconstructionOptions opts;
  for (int d = 2; d <= 5; ++d)
    run("(2," + std::to_string(d) + "," + std::to_string(d) + ")", [&](std::uint64_t t) {
      const PureState psi = haar_random_state(SystemShape{2, d, d}, 5000 + 100 * d + t);
      return fidelity_pure(reconstruct_2dd(rdms_of(psi), opts).psi, psi);
    });
  for (int p = 3; p <= 4; ++p)
    run("(" + std::to_string(p) + ",3,3)", [&](std::uint64_t t) {
      const PureState psi = haar_random_state(SystemShape{p, 3, 3}, 6000 + 100 * p + t);
      return fidelity_pure(reconstruct_pdd(rdms_of(psi), opts).psi, psi);
    });
  const std::pair<int, int> nq[] = {{3, 2}, {4, 2}, {5, 2}, {3, 3}};
  for (auto [n, d] : nq)
    run("N=" + std::to_string(n) + ",d=" + std::to_string(d), [&, n = n, d = d](std::uint64_t t) {
      const PureState psi = haar_random_state(SystemShape::qudits(n, d), 7000 + 100 * n + 10 * d + t);
      const RdmPair r = rdms_of(psi, bipartition_sets(n));
      const Bipartition b = bipartition_split(n, d);
      const DensityOperator ab(SystemShape::qudits(b.n_a + b.n_b, d), r.rho_ab().matrix());
      const DensityOperator ac(SystemShape::qudits(b.n_a + b.n_c, d), r.rho_ac().matrix());
      return fidelity_pure(reconstruct_nqudit(ab, ac, n, d, opts).psi, psi);
    });
  const double secs = elapsed_s(t0);
  if (secs >= 120.0) o.pass = false;
  o.detail += fmt(secs) + " s";
  return o;
}

Outcome criterion_counting() {
  Outcome o;
  const struct {
    int n, d;
    std::int64_t expected;
  } cases[] = {{3, 2, 32}, {5, 2, 128}, {3, 3, 162}};
  for (const auto& c : cases) {
    const std::int64_t count = measurement_count(c.n, c.d);
    ExperimentConfig cfg;
    cfg.n = c.n;
    cfg.d = c.d;
    cfg.seed = 42;
    const ExperimentResult r = run_experiment(cfg);
    const std::int64_t consumed = static_cast<std::int64_t>(r.records_ab.size() + r.records_ac.size());
    std::int64_t dn = 1;
    for (int i = 0; i < c.n; ++i) dn *= c.d;
    const std::int64_t ratio_expected = c.n % 2 ? 2 * c.d : 2 * c.d * c.d;
    const bool ok = count == c.expected && consumed == count && count % dn == 0 && count / dn == ratio_expected;
    o.pass &= ok;
    o.detail += "(" + std::to_string(c.n) + "," + std::to_string(c.d) + ") count " + std::to_string(count) +
                " consumed " + std::to_string(consumed) + "; ";
  }
  for (int d = 2; d <= 4; ++d)
    for (int n = 3; n <= 8; ++n) {
      std::int64_t dn = 1;
      for (int i = 0; i < n; ++i) dn *= d;
      const std::int64_t c = measurement_count(n, d);
      if (c % dn != 0 || c / dn != (n % 2 ? 2 * d : 2 * d * d)) {
        o.pass = false;
        o.detail += "ratio off at (" + std::to_string(n) + "," + std::to_string(d) + "); ";
      }
    }
  o.detail += "ratios 2d (odd N) / 2d^2 (even N) for N = 3..8, d = 2..4";
  return o;
}

PureState ghz3() {
  Vector v = Vector::Zero(8);
  v(0) = v(7) = 1.0 / std::sqrt(2.0);
  return PureState(SystemShape{2, 2, 2}, v);
}

Outcome criterion_ghz_witness() {
  const auto t0 = std::chrono::steady_clock::now();
  const PureState g = ghz3();
  Matrix mix = Matrix::Zero(8, 8);
  mix(0, 0) = mix(7, 7) = 0.5;
  const bool match = rdm_match(DensityOperator::from_pure(g), DensityOperator(SystemShape{2, 2, 2}, mix),
                               Split{{0}, {1}, {2}}, 1e-10);
  const SearchResult r = search_alternative(g, Split{{0}, {1}, {2}});
  const double secs = elapsed_s(t0);
  Outcome o;
  o.pass = match && secs < 60.0;
  o.detail = std::string("mixture match ") + (match ? "yes" : "no");
  if (const auto* w = std::get_if<Witness>(&r)) {
    o.pass &= w->trace_distance >= 0.1 && w->rdm_residual <= 1e-8 && w->min_eigenvalue >= -1e-10;
    o.detail += ", witness trace distance " + fmt(w->trace_distance) + ", residual " + fmt(w->rdm_residual) +
                ", min eigenvalue " + fmt(w->min_eigenvalue);
  } else {
    o.pass = false;
    o.detail += ", no witness found";
  }
  o.detail += ", " + fmt(secs) + " s";
  return o;
}

Outcome criterion_empirical_uda() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  int none = 0, total = 0, starts = 0;
  double intrusion = 0.0;
  auto check = [&](const SystemShape& shape, int count, std::uint64_t base) {
    for (int s = 0; s < count; ++s) {
      SearchOptions opts;
      opts.n_starts = 50;
      opts.seed = base + s;
      const SearchResult r = search_alternative(haar_random_state(shape, base + s), Split{{0}, {1}, {2}}, opts);
      ++total;
      if (const auto* nf = std::get_if<NoneFound>(&r)) {
        ++none;
        starts += nf->n_starts;
        intrusion = std::max(intrusion, nf->best_intrusion);
        if (nf->n_starts < 50) o.pass = false;
      } else {
        o.pass = false;
      }
    }
  };
  check(SystemShape{2, 2, 2}, 20, 8000);
  check(SystemShape{2, 3, 3}, 10, 9000);
  const double secs = elapsed_s(t0);
  if (secs >= 300.0) o.pass = false;
  o.detail = std::to_string(none) + "/" + std::to_string(total) + " none-found over " + std::to_string(starts) +
             " starts, largest excursion " + fmt(intrusion) + ", " + fmt(secs) + " s";
  return o;
}

Outcome criterion_reduction_diagnostic() {
  Outcome o;
  double exact = 0.0, perturbed = 0.0;
  int used = 0;
  for (int d = 2; d <= 4; ++d)
    for (int t = 0; t < 5; ++t) {
      const TriangularForm f = triangular_form(haar_random_state(SystemShape{2, d, d}, 9500 + 10 * d + t));
      if (!is_regular_triangular(f.phi)) continue;
      ++used;
      const Matrix target = f.phi.state().projector();
      const ReductionDiagnostics e = verify_theorem_reduce(f.phi, DensityOperator::from_pure(f.phi.state()));
      exact = std::max({exact, e.p1_residual, e.p2_rdm_mismatch});

      const SystemShape shape{2, d, d};
      const auto basis = matching_nullspace_basis(shape);
      CounterRng rng(9600 + 10 * d + t);
      Matrix delta = Matrix::Zero(target.rows(), target.cols());
      for (const auto& dir : basis) delta += rng.normal() * dir.matrix();
      delta /= delta.norm();
      Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(target + 1e-6 * delta));
      Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
      lam /= lam.sum();
      const Matrix rho = hermitize(es.eigenvectors() * lam.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint());
      const ReductionDiagnostics p = verify_theorem_reduce(f.phi, DensityOperator(shape, rho), 1e-5);
      perturbed = std::max({perturbed, p.p1_residual, p.p2_rdm_mismatch});
    }
  o.pass = used > 0 && exact <= 1e-12 && perturbed <= 1e-5;
  o.detail = std::to_string(used) + " regular vectors, exact " + fmt(exact) + ", perturbed " + fmt(perturbed);
  return o;
}

Outcome criterion_noisy() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> fid;
  for (int t = 0; t < 10; ++t) {
    ExperimentConfig cfg;
    cfg.n = 3;
    cfg.d = 2;
    cfg.seed = 10000 + t;
    cfg.shots = 1000000;
    cfg.noise = NoiseModel::Shot;
    fid.push_back(*run_experiment(cfg).reconstruction.report.fidelity_vs_truth);
  }
  std::sort(fid.begin(), fid.end());
  const double median = 0.5 * (fid[4] + fid[5]);
  const double secs = elapsed_s(t0);
  Outcome o;
  o.pass = median >= 0.99 && secs < 300.0;
  o.detail = "median fidelity " + fmt(median) + " (min " + fmt(fid.front()) + "), " + fmt(secs) + " s";
  return o;
}

Outcome criterion_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "qst_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << R"({"N": 4, "d": 2, "shots": 5000, "noise_model": "shot"})" << "\n";
  std::vector<std::string> hashes;
  Outcome o;
  for (int run = 0; run < 2; ++run) {
    const fs::path report = dir / ("report" + std::to_string(run) + ".json");
    const std::string cmd = std::string(QST_CLI_PATH) + " experiment --config " + (dir / "config.json").string() +
                            " --seed 2024 --report " + report.string();
    if (std::system(cmd.c_str()) != 0) {
      o.pass = false;
      o.detail = "experiment command failed";
      return o;
    }
    hashes.push_back(sha256_file(report));
  }
  fs::remove_all(dir);
  o.pass = hashes[0] == hashes[1];
  o.detail = "report sha256 " + hashes[0].substr(0, 16) + (o.pass ? " == " : " != ") + hashes[1].substr(0, 16);
  return o;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"triangular form", criterion_triangular_form},
      {"manifold dimension", criterion_manifold_dim},
      {"reconstruction round trip", criterion_round_trip},
      {"measurement counting", criterion_counting},
      {"GHZ witness", criterion_ghz_witness},
      {"empirical UDA", criterion_empirical_uda},
      {"reduction diagnostic", criterion_reduction_diagnostic},
      {"noisy end-to-end", criterion_noisy},
      {"determinism", criterion_determinism},
  };
  int failed = 0, k = 0;
  for (const auto& [name, fn] : criteria) {
    ++k;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << name << "): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
