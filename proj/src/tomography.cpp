#include "qst/tomography.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <tuple>

#include "qst/errors.hpp"

namespace qst {

namespace {

std::int64_t ipow(std::int64_t base, int e) {
  std::int64_t r = 1;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

void check_counting_domain(int n, int d) {
  if (n < 3) throw DomainError("N must be at least 3, got " + std::to_string(n));
  if (d < 2) throw DomainError("d must be at least 2, got " + std::to_string(d));
}

// Multi-index with the first site slowest.
std::vector<int> multi_index(std::int64_t flat, int sites, int base) {
  std::vector<int> idx(sites);
  for (int s = sites - 1; s >= 0; --s) {
    idx[s] = static_cast<int>(flat % base);
    flat /= base;
  }
  return idx;
}

std::int64_t flat_index(const std::vector<int>& idx, int base) {
  std::int64_t f = 0;
  for (int i : idx) f = f * base + i;
  return f;
}

struct LocalSpectrum {
  Eigen::VectorXd values;
  Matrix vectors;
};

std::vector<int> sorted_union(std::vector<int> x, const std::vector<int>& y) {
  x.insert(x.end(), y.begin(), y.end());
  std::sort(x.begin(), x.end());
  return x;
}

}  // namespace

ObservableBasis observable_basis(int d) {
  if (d < 2) throw DomainError("observable basis needs d >= 2, got " + std::to_string(d));
  return {d, hermitian_basis(d)};
}

std::int64_t measurement_count(int n, int d) {
  check_counting_domain(n, d);
  return 2 * ipow(d, 2 * ((n + 2) / 2));
}

std::int64_t deduplicated_measurement_count(int n, int d) {
  check_counting_domain(n, d);
  const Bipartition b = bipartition_split(n, d);
  return 2 * ipow(d, 2 * (b.n_a + b.n_b)) - ipow(d, 2 * b.n_a);
}

std::vector<ExpectationRecord> simulate_expectations(const PureState& psi, const std::vector<int>& subset,
                                                     std::int64_t shots, std::uint64_t seed) {
  const SystemShape& shape = psi.shape();
  if (subset.empty()) throw IndexError("empty subset");
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] < 0 || subset[i] >= shape.size())
      throw IndexError("subset index " + std::to_string(subset[i]) + " out of range");
    if (i > 0 && subset[i] <= subset[i - 1]) throw IndexError("subset must be strictly ascending");
  }
  if (shots < 0) throw ValidationError("shots must be non-negative (0 = exact)");
  const int d = shape.dim(subset[0]);
  for (int s : subset)
    if (shape.dim(s) != d) throw ValidationError("subset sites must share one local dimension");

  const int k = static_cast<int>(subset.size());
  const Matrix rho = reduced_density(psi, subset);
  const ObservableBasis basis = observable_basis(d);
  std::vector<LocalSpectrum> spectra;
  for (const Matrix& o : basis.operators) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(o);
    spectra.push_back({es.eigenvalues(), es.eigenvectors()});
  }

  const std::int64_t count = ipow(d * d, k);
  const CounterRng root(seed);
  std::vector<ExpectationRecord> out;
  out.reserve(count);
  for (std::int64_t r = 0; r < count; ++r) {
    ExpectationRecord rec{subset, multi_index(r, k, d * d), 0.0, shots, seed};
    if (shots == kExactShots) {
      Matrix op = basis.operators[rec.operator_index[0]];
      for (int s = 1; s < k; ++s) op = kron(op, basis.operators[rec.operator_index[s]]);
      rec.value = (rho * op).trace().real();
    } else {
      // Product eigenbasis: eigenvalues multiply, eigenvectors tensor.
      Eigen::VectorXd lam = spectra[rec.operator_index[0]].values;
      Matrix vec = spectra[rec.operator_index[0]].vectors;
      for (int s = 1; s < k; ++s) {
        const LocalSpectrum& ls = spectra[rec.operator_index[s]];
        Eigen::VectorXd next(lam.size() * ls.values.size());
        for (Eigen::Index i = 0; i < lam.size(); ++i)
          for (Eigen::Index j = 0; j < ls.values.size(); ++j) next(i * ls.values.size() + j) = lam(i) * ls.values(j);
        lam = next;
        vec = kron(vec, ls.vectors);
      }
      std::vector<double> cdf(lam.size());
      double acc = 0.0;
      for (Eigen::Index i = 0; i < lam.size(); ++i) {
        acc += std::max(0.0, (vec.col(i).adjoint() * rho * vec.col(i)).value().real());
        cdf[i] = acc;
      }
      CounterRng rng = root.split(static_cast<std::uint64_t>(r));
      std::vector<std::int64_t> hits(lam.size(), 0);
      for (std::int64_t shot = 0; shot < shots; ++shot) {
        const double u = rng.uniform() * acc;
        std::size_t i = 0;
        while (i + 1 < cdf.size() && u >= cdf[i]) ++i;
        ++hits[i];
      }
      double sum = 0.0;
      for (Eigen::Index i = 0; i < lam.size(); ++i) sum += static_cast<double>(hits[i]) * lam(i);
      rec.value = sum / static_cast<double>(shots);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Matrix linear_inversion(const std::vector<ExpectationRecord>& records, int d) {
  if (records.empty()) throw IncompleteBasis("no records");
  const ObservableBasis basis = observable_basis(d);
  const std::vector<int>& subset = records.front().subset;
  const int k = static_cast<int>(subset.size());
  const std::int64_t count = ipow(d * d, k);
  if (static_cast<std::int64_t>(records.size()) != count)
    throw IncompleteBasis("expected " + std::to_string(count) + " records, got " + std::to_string(records.size()));
  std::vector<bool> seen(count, false);
  const std::int64_t dim = ipow(d, k);
  Matrix est = Matrix::Zero(dim, dim);
  for (const ExpectationRecord& rec : records) {
    if (rec.subset != subset) throw IncompleteBasis("records span more than one subset");
    if (static_cast<int>(rec.operator_index.size()) != k) throw IncompleteBasis("operator index length mismatch");
    for (int i : rec.operator_index)
      if (i < 0 || i >= d * d) throw IncompleteBasis("operator index out of range");
    const std::int64_t f = flat_index(rec.operator_index, d * d);
    if (seen[f]) throw IncompleteBasis("duplicate record for one basis element");
    seen[f] = true;
    Matrix op = basis.operators[rec.operator_index[0]];
    for (int s = 1; s < k; ++s) op = kron(op, basis.operators[rec.operator_index[s]]);
    est += rec.value / (op * op).trace().real() * op;
  }
  return est;
}

DensityOperator rdm_from_expectations(const std::vector<ExpectationRecord>& records, int d) {
  const Matrix est = linear_inversion(records, d);
  return DensityOperator(SystemShape::qudits(static_cast<int>(records.front().subset.size()), d), repair_density(est));
}

void ExperimentConfig::validate() const {
  if (n < 3) throw ValidationError("N must be at least 3");
  if (d < 2) throw ValidationError("d must be at least 2");
  if (shots < 0) throw ValidationError("shots must be non-negative");
  if (noise == NoiseModel::Shot && shots == kExactShots) throw ValidationError("shot noise needs shots >= 1");
  if (noise == NoiseModel::None && shots != kExactShots) throw ValidationError("noise model none takes exact expectations");
}

NoiseModel noise_from_string(const std::string& s) {
  if (s == "none") return NoiseModel::None;
  if (s == "shot") return NoiseModel::Shot;
  throw ValidationError("unknown noise model '" + s + "'");
}

std::string to_string(NoiseModel m) { return m == NoiseModel::None ? "none" : "shot"; }

Strategy strategy_from_string(const std::string& s) {
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "pencil") return Strategy::Pencil;
  if (lower == "purify") return Strategy::Purify;
  throw ValidationError("unknown strategy '" + s + "'");
}

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig cfg) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "N") cfg.n = v.get<int>();
      else if (key == "d") cfg.d = v.get<int>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "shots") {
        if (v.is_string() && v.get<std::string>() == "exact") cfg.shots = kExactShots;
        else cfg.shots = v.get<std::int64_t>();
      } else if (key == "noise_model") cfg.noise = noise_from_string(v.get<std::string>());
      else if (key == "strategy") cfg.strategy = strategy_from_string(v.get<std::string>());
      else if (key == "fallback") cfg.fallback = v.get<bool>();
      else if (key == "residual_tol") cfg.residual_tol = v.get<double>();
      else if (key == "report") cfg.report_path = v.get<std::string>();
      else if (key == "state_out") cfg.state_path = v.get<std::string>();
      else throw ValidationError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["N"] = cfg.n;
  j["d"] = cfg.d;
  j["seed"] = cfg.seed;
  if (cfg.shots == kExactShots) j["shots"] = "exact";
  else j["shots"] = cfg.shots;
  j["noise_model"] = to_string(cfg.noise);
  j["strategy"] = to_string(cfg.strategy);
  j["fallback"] = cfg.fallback;
  j["residual_tol"] = cfg.residual_tol;
  return j;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const SystemShape shape = SystemShape::qudits(cfg.n, cfg.d);
  const CounterRng root(cfg.seed);
  PureState truth = haar_random_state(shape, root.split(0)());
  const Split sets = bipartition_sets(cfg.n);
  const std::vector<int> ab = sorted_union(sets.a, sets.b);
  const std::vector<int> ac = sorted_union(sets.a, sets.c);
  const std::uint64_t seed_ab = root.split(1)(), seed_ac = root.split(2)();
  std::vector<ExpectationRecord> rec_ab = simulate_expectations(truth, ab, cfg.shots, seed_ab);
  std::vector<ExpectationRecord> rec_ac = simulate_expectations(truth, ac, cfg.shots, seed_ac);

  const Bipartition bp = bipartition_split(cfg.n, cfg.d);
  const int p = static_cast<int>(ipow(cfg.d, bp.n_a));
  const int db = static_cast<int>(ipow(cfg.d, bp.n_b)), dc = static_cast<int>(ipow(cfg.d, bp.n_c));
  Matrix est_ab = rdm_from_expectations(rec_ab, cfg.d).matrix();
  Matrix est_ac = rdm_from_expectations(rec_ac, cfg.d).matrix();
  // Subsystems of rho_AC as measured are a then c, which is already the
  // grouped (A, C) order because every index of c exceeds every index of a.
  ReconstructionOptions opts;
  opts.strategy = cfg.strategy;
  opts.fallback = cfg.fallback;
  opts.residual_tol = cfg.residual_tol;
  opts.truth = truth;
  if (cfg.noise == NoiseModel::Shot) {
    std::tie(est_ab, est_ac) = repair_rdms(est_ab, est_ac, p, db, dc);
    // Sampled RDMs are full rank and their two pencil spectra agree only to
    // the sampling error; both tolerances follow the shot count.
    const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg.shots));
    opts.group_tol = std::max(opts.group_tol, 10.0 * sigma);
    opts.rank_tol = std::max(opts.rank_tol, 10.0 * sigma);
    opts.consistency_tol = std::max(opts.consistency_tol, 10.0 * sigma);
  }
  const DensityOperator rho_ab(SystemShape::qudits(bp.n_a + bp.n_b, cfg.d), est_ab);
  const DensityOperator rho_ac(SystemShape::qudits(bp.n_a + bp.n_c, cfg.d), est_ac);
  Reconstruction rec = reconstruct_nqudit(rho_ab, rho_ac, cfg.n, cfg.d, opts);

  const Matrix exact_ab = reduced_density(truth, ab), exact_ac = reduced_density(truth, ac);
  const std::int64_t consumed = static_cast<std::int64_t>(rec_ab.size() + rec_ac.size());
  const std::int64_t count = measurement_count(cfg.n, cfg.d);
  const std::int64_t dn = ipow(cfg.d, cfg.n);

  nlohmann::json report;
  report["config"] = config_to_json(cfg);
  report["rdm_body"] = (cfg.n + 2) / 2;
  report["bipartition"] = {{"n_a", bp.n_a}, {"n_b", bp.n_b}, {"n_c", bp.n_c}};
  report["subsets"] = {{"ab", ab}, {"ac", ac}};
  report["measurement_unit"] = "expectation value of one product-basis observable";
  report["measurement_count"] = count;
  report["deduplicated_measurement_count"] = deduplicated_measurement_count(cfg.n, cfg.d);
  report["records_consumed"] = consumed;
  report["ratio_to_dn"] = {{"numerator", count}, {"denominator", dn}, {"value", static_cast<double>(count) / dn}};
  report["rdm_estimation_error"] = {{"ab", (est_ab - exact_ab).norm()}, {"ac", (est_ac - exact_ac).norm()}};
  nlohmann::json recon;
  recon["strategy"] = to_string(rec.report.strategy);
  recon["rdm_residual"] = rec.report.rdm_residual;
  recon["uniqueness"] = to_string(rec.report.uniqueness_flag);
  recon["gauge_notes"] = rec.report.gauge_notes;
  recon["condition_diagnostics"] = rec.report.condition_diagnostics;
  recon["fidelity"] = *rec.report.fidelity_vs_truth;
  report["reconstruction"] = recon;

  return {std::move(truth), std::move(rec), std::move(rec_ab), std::move(rec_ac), std::move(report)};
}

}  // namespace qst
