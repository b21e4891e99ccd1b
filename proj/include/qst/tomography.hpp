#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "qst/reconstruction.hpp"
#include "qst/tensor.hpp"

namespace qst {

/// Local operator basis on one qudit: d^2 trace-orthogonal Hermitian
/// operators, identity first.
struct ObservableBasis {
  int d = 0;
  std::vector<Matrix> operators;
};

/// Throws DomainError for d < 2.
ObservableBasis observable_basis(int d);

/// 2 d^(2 ceil((N+1)/2)): both subsets of the split, each measured with a
/// complete product basis. Throws DomainError unless N >= 3 and d >= 2.
std::int64_t measurement_count(int n, int d);

/// Same count with the product observables supported on A alone counted once.
std::int64_t deduplicated_measurement_count(int n, int d);

/// Shots value standing for exact expectation values.
inline constexpr std::int64_t kExactShots = 0;

/// Expectation of the product operator O_{i_1} x ... x O_{i_k} on `subset`.
struct ExpectationRecord {
  std::vector<int> subset;
  std::vector<int> operator_index;
  double value = 0.0;
  std::int64_t shots = kExactShots;
  std::uint64_t seed = 0;

  bool exact() const { return shots == kExactShots; }
};

/// One record per element of the product basis on `subset` (strictly
/// ascending qudit indices, equal local dimensions), ordered by multi-index
/// with the first site slowest. Shot mode samples the eigenbasis of each
/// observable from the Born distribution; record k draws from stream k of
/// `seed`. Throws IndexError for an invalid subset and ValidationError for
/// negative shots or unequal local dimensions.
std::vector<ExpectationRecord> simulate_expectations(const PureState& psi, const std::vector<int>& subset,
                                                     std::int64_t shots, std::uint64_t seed);

/// Linear inversion sum_i value_i O_i / Tr(O_i^2) without repair.
/// Throws IncompleteBasis unless the records cover the product basis of a
/// single subset exactly once.
Matrix linear_inversion(const std::vector<ExpectationRecord>& records, int d);

/// linear_inversion followed by repair_density.
DensityOperator rdm_from_expectations(const std::vector<ExpectationRecord>& records, int d);

enum class NoiseModel { None, Shot };

struct ExperimentConfig {
  int n = 3;
  int d = 2;
  std::uint64_t seed = 0;
  std::int64_t shots = kExactShots;
  NoiseModel noise = NoiseModel::None;
  Strategy strategy = Strategy::Pencil;
  bool fallback = true;
  double residual_tol = 1e-8;
  std::string report_path;
  std::string state_path;

  /// Throws ValidationError unless N >= 3, d >= 2 and the shot setting
  /// agrees with the noise model.
  void validate() const;
};

/// Fields of `j` override the fields of `base`. Unknown keys throw
/// ValidationError. Strategy names are case-insensitive.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
nlohmann::json config_to_json(const ExperimentConfig& cfg);

NoiseModel noise_from_string(const std::string& s);
std::string to_string(NoiseModel m);
Strategy strategy_from_string(const std::string& s);

struct ExperimentResult {
  PureState truth;
  Reconstruction reconstruction;
  std::vector<ExpectationRecord> records_ab;
  std::vector<ExpectationRecord> records_ac;
  nlohmann::json report;
};

/// Haar state from the seed, both subsets measured, RDMs estimated by
/// linear inversion, then reconstruct_nqudit. The report holds no timings
/// and depends only on the config.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace qst
