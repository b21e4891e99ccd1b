#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qst/canonical_form.hpp"
#include "qst/errors.hpp"
#include "qst/io.hpp"
#include "qst/reconstruction.hpp"
#include "qst/tomography.hpp"
#include "qst/uda_oracle.hpp"

using namespace qst;
using nlohmann::json;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Validation: return 2;
    case ErrorKind::Numerical: return 3;
    case ErrorKind::Io: return 4;
  }
  return 3;
}

std::vector<int> sorted_union(std::vector<int> x, const std::vector<int>& y) {
  x.insert(x.end(), y.begin(), y.end());
  std::sort(x.begin(), x.end());
  return x;
}

// Three subsystems split one per group; otherwise equal qudits split as N-qudit bipartition.
Split default_split(const SystemShape& shape) {
  if (shape.size() == 3) return Split{{0}, {1}, {2}};
  for (int d : shape.dims())
    if (d != shape.dim(0)) throw ValidationError("states with more than three subsystems need equal local dimensions");
  return bipartition_sets(shape.size());
}

json report_json(const ReconstructionReport& r) {
  json j;
  j["strategy"] = to_string(r.strategy);
  j["rdm_residual"] = r.rdm_residual;
  j["uniqueness"] = to_string(r.uniqueness_flag);
  j["gauge_notes"] = r.gauge_notes;
  j["condition_diagnostics"] = r.condition_diagnostics;
  if (r.fidelity_vs_truth) j["fidelity"] = *r.fidelity_vs_truth;
  return j;
}

void emit(const json& j, const std::string& path) {
  if (path.empty()) std::cout << j.dump(2) << "\n";
  else write_json(path, j);
}

std::vector<int> parse_dims(const std::string& text) {
  std::vector<int> dims;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      dims.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad dimension list '" + text + "'");
    }
  }
  return dims;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pure-state reconstruction from two reduced density matrices"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Haar-random pure state to a file");
  std::string gen_dims, gen_out;
  int gen_n = 0, gen_d = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--dims", gen_dims, "comma-separated subsystem dimensions");
  gen->add_option("--qudits", gen_n, "number of qudits (with --d)");
  gen->add_option("--d", gen_d, "local dimension (with --qudits)");
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--out", gen_out)->required();

  // rdms
  auto* rdms = app.add_subcommand("rdms", "exact rho_AB and rho_AC of a state file");
  std::string rdms_state, rdms_ab, rdms_ac;
  rdms->add_option("--state", rdms_state)->required();
  rdms->add_option("--out-ab", rdms_ab)->required();
  rdms->add_option("--out-ac", rdms_ac)->required();

  // measure
  auto* measure = app.add_subcommand("measure", "simulated product-basis expectations on both subsets");
  std::string meas_state, meas_out;
  std::int64_t meas_shots = 0;
  bool meas_exact = false;
  std::uint64_t meas_seed = 0;
  measure->add_option("--state", meas_state)->required();
  measure->add_option("--out", meas_out)->required();
  auto* shots_opt = measure->add_option("--shots", meas_shots)->check(CLI::PositiveNumber);
  auto* exact_opt = measure->add_flag("--exact", meas_exact);
  shots_opt->excludes(exact_opt);
  measure->add_option("--seed", meas_seed)->required();

  // estimate
  auto* estimate = app.add_subcommand("estimate", "linear-inversion RDMs from a records file");
  std::string est_records, est_ab, est_ac;
  estimate->add_option("--records", est_records)->required();
  estimate->add_option("--out-ab", est_ab)->required();
  estimate->add_option("--out-ac", est_ac)->required();

  // reconstruct
  auto* recon = app.add_subcommand("reconstruct", "pure state from two RDM files");
  std::string rec_ab, rec_ac, rec_out, rec_report, rec_strategy = "pencil", rec_truth;
  bool rec_no_fallback = false, rec_strict = false;
  double rec_tol = 1e-8;
  recon->add_option("--ab", rec_ab)->required();
  recon->add_option("--ac", rec_ac)->required();
  recon->add_option("--out", rec_out)->required();
  recon->add_option("--report", rec_report);
  recon->add_option("--strategy", rec_strategy)->check(CLI::IsMember({"pencil", "purify"}));
  recon->add_flag("--no-fallback", rec_no_fallback);
  recon->add_flag("--strict", rec_strict);
  recon->add_option("--residual-tol", rec_tol);
  recon->add_option("--truth", rec_truth, "state file for a fidelity figure");

  // canonicalize
  auto* canon = app.add_subcommand("canonicalize", "triangular form of a (2, d, d) state");
  std::string can_state, can_out, can_u, can_v, can_report;
  bool can_strict = false;
  canon->add_option("--state", can_state)->required();
  canon->add_option("--out", can_out)->required();
  canon->add_option("--u", can_u)->required();
  canon->add_option("--v", can_v)->required();
  canon->add_option("--report", can_report);
  canon->add_flag("--strict", can_strict);

  // verify-uda
  auto* verify = app.add_subcommand("verify-uda", "search for another state with the same two RDMs");
  std::string ver_state, ver_report, ver_witness;
  SearchOptions ver_opts;
  verify->add_option("--state", ver_state)->required();
  verify->add_option("--seed", ver_opts.seed)->required();
  verify->add_option("--starts", ver_opts.n_starts);
  verify->add_option("--max-iterations", ver_opts.max_iterations);
  verify->add_option("--min-separation", ver_opts.min_separation);
  verify->add_option("--max-dim", ver_opts.max_dim);
  verify->add_option("--report", ver_report);
  verify->add_option("--witness", ver_witness, "density file for a witness, if one is found");

  // experiment
  auto* exper = app.add_subcommand("experiment", "full pipeline from a config");
  std::string exp_config, exp_report, exp_state, exp_strategy, exp_noise;
  int exp_n = 0, exp_d = 0;
  std::uint64_t exp_seed = 0;
  std::int64_t exp_shots = 0;
  bool exp_exact = false;
  exper->add_option("--config", exp_config, "JSON config; flags override its fields");
  auto* exp_n_opt = exper->add_option("--n", exp_n);
  auto* exp_d_opt = exper->add_option("--d", exp_d);
  exper->add_option("--seed", exp_seed)->required();
  auto* exp_shots_opt = exper->add_option("--shots", exp_shots)->check(CLI::PositiveNumber);
  auto* exp_exact_opt = exper->add_flag("--exact", exp_exact);
  exp_shots_opt->excludes(exp_exact_opt);
  auto* exp_strategy_opt = exper->add_option("--strategy", exp_strategy)->check(CLI::IsMember({"pencil", "purify"}));
  exper->add_option("--report", exp_report);
  exper->add_option("--state-out", exp_state);

  // dims
  auto* dims = app.add_subcommand("dims", "bipartition and measurement count for N qudits");
  int dims_n = 0, dims_d = 0;
  dims->add_option("--n", dims_n)->required();
  dims->add_option("--d", dims_d)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      SystemShape shape;
      if (!gen_dims.empty()) shape = SystemShape(parse_dims(gen_dims));
      else if (gen_n > 0 && gen_d > 0) shape = SystemShape::qudits(gen_n, gen_d);
      else throw ValidationError("gen needs --dims or --qudits with --d");
      save_state(gen_out, haar_random_state(shape, gen_seed));
    } else if (*rdms) {
      const PureState psi = load_state(rdms_state);
      const Split s = default_split(psi.shape());
      const std::vector<int> ab = sorted_union(s.a, s.b), ac = sorted_union(s.a, s.c);
      const auto& pd = psi.shape().dims();
      save_density(rdms_ab, DensityOperator(psi.shape().restricted(ab), reduced_density(psi, ab)), ab, pd);
      save_density(rdms_ac, DensityOperator(psi.shape().restricted(ac), reduced_density(psi, ac)), ac, pd);
    } else if (*measure) {
      if (!meas_exact && shots_opt->count() == 0) throw ValidationError("measure needs --shots or --exact");
      const PureState psi = load_state(meas_state);
      const Split s = default_split(psi.shape());
      const std::int64_t shots = meas_exact ? kExactShots : meas_shots;
      const CounterRng root(meas_seed);
      RecordSet set;
      set.d = psi.shape().dim(0);
      set.parent_dims = psi.shape().dims();
      const std::vector<int> ab = sorted_union(s.a, s.b), ac = sorted_union(s.a, s.c);
      for (int i : sorted_union(ab, ac))
        if (psi.shape().dim(i) != set.d) throw ValidationError("measure needs equal local dimensions");
      set.groups.push_back(simulate_expectations(psi, ab, shots, root.split(1)()));
      set.groups.push_back(simulate_expectations(psi, ac, shots, root.split(2)()));
      save_records(meas_out, set);
    } else if (*estimate) {
      const RecordSet set = load_records(est_records);
      if (set.groups.size() != 2) throw ValidationError("estimate expects two record groups (AB, AC)");
      Matrix ab = linear_inversion(set.groups[0], set.d);
      Matrix ac = linear_inversion(set.groups[1], set.d);
      const std::vector<int>& sab = set.groups[0].front().subset;
      const std::vector<int>& sac = set.groups[1].front().subset;
      const SystemShape parent(set.parent_dims);
      const SystemShape shape_ab = parent.restricted(sab), shape_ac = parent.restricted(sac);
      // Shared leading sites form A.
      std::size_t na = 0;
      while (na < sab.size() && na < sac.size() && sab[na] == sac[na]) ++na;
      std::int64_t p = 1;
      for (std::size_t i = 0; i < na; ++i) p *= set.d;
      std::tie(ab, ac) = repair_rdms(ab, ac, int(p), int(shape_ab.total() / p), int(shape_ac.total() / p));
      save_density(est_ab, DensityOperator(shape_ab, ab), sab, set.parent_dims);
      save_density(est_ac, DensityOperator(shape_ac, ac), sac, set.parent_dims);
    } else if (*recon) {
      const LoadedDensity ab = load_density(rec_ab), ac = load_density(rec_ac);
      ReconstructionOptions opts;
      opts.strategy = strategy_from_string(rec_strategy);
      opts.fallback = !rec_no_fallback;
      opts.strict = rec_strict;
      opts.residual_tol = rec_tol;
      if (!rec_truth.empty()) opts.truth = load_state(rec_truth);
      const std::vector<int>& parent = ab.parent_dims;
      Reconstruction r = [&] {
        if (parent.size() > 3) {
          return reconstruct_nqudit(ab.rho, ac.rho, static_cast<int>(parent.size()), parent[0], opts);
        }
        const auto& dab = ab.rho.shape().dims();
        const auto& dac = ac.rho.shape().dims();
        if (dab.size() != 2 || dac.size() != 2 || dab[0] != dac[0])
          throw DimensionMismatch("tripartite RDMs need dims (p, dB) and (p, dC)");
        const SystemShape shape{dab[0], dab[1], dac[1]};
        const RdmPair pair(shape, DensityOperator(SystemShape{dab[0], dab[1]}, ab.rho.matrix()),
                           DensityOperator(SystemShape{dac[0], dac[1]}, ac.rho.matrix()));
        return reconstruct_pdd(pair, opts);
      }();
      save_state(rec_out, r.psi);
      emit(report_json(r.report), rec_report);
    } else if (*canon) {
      const PureState psi = load_state(can_state);
      TriangularizeOptions topts;
      topts.strict = can_strict;
      const TriangularForm tf = triangular_form(psi, topts);
      save_state(can_out, tf.phi.state());
      save_unitary(can_u, tf.u);
      save_unitary(can_v, tf.v);
      json j;
      json roots = json::array();
      for (cplx z : tf.roots) roots.push_back({z.real(), z.imag()});
      j["roots"] = roots;
      j["notes"] = tf.notes;
      j["regular"] = is_regular_triangular(tf.phi);
      emit(j, can_report);
    } else if (*verify) {
      const PureState psi = load_state(ver_state);
      const Split s = default_split(psi.shape());
      const SearchResult res = search_alternative(psi, s, ver_opts);
      json j;
      j["n_starts"] = ver_opts.n_starts;
      j["seed"] = ver_opts.seed;
      if (const auto* w = std::get_if<Witness>(&res)) {
        j["verdict"] = "witness";
        j["trace_distance"] = w->trace_distance;
        j["rdm_residual"] = w->rdm_residual;
        j["min_eigenvalue"] = w->min_eigenvalue;
        j["start"] = w->start;
        if (!ver_witness.empty()) save_density(ver_witness, DensityOperator(w->shape, w->rho));
      } else {
        const auto& nf = std::get<NoneFound>(res);
        j["verdict"] = "none-found";
        j["note"] = "empirical: no start produced a distinct compatible state";
        j["n_starts"] = nf.n_starts;
        j["best_intrusion"] = nf.best_intrusion;
        j["total_iterations"] = nf.total_iterations;
        j["converged_starts"] = nf.converged_starts;
      }
      emit(j, ver_report);
    } else if (*exper) {
      ExperimentConfig cfg;
      if (!exp_config.empty()) cfg = config_from_json(read_json(exp_config));
      if (exp_n_opt->count()) cfg.n = exp_n;
      if (exp_d_opt->count()) cfg.d = exp_d;
      cfg.seed = exp_seed;
      if (exp_shots_opt->count()) cfg.shots = exp_shots, cfg.noise = NoiseModel::Shot;
      if (exp_exact) cfg.shots = kExactShots, cfg.noise = NoiseModel::None;
      if (exp_strategy_opt->count()) cfg.strategy = strategy_from_string(exp_strategy);
      if (!exp_report.empty()) cfg.report_path = exp_report;
      if (!exp_state.empty()) cfg.state_path = exp_state;
      const ExperimentResult res = run_experiment(cfg);
      if (!cfg.state_path.empty()) save_state(cfg.state_path, res.reconstruction.psi);
      emit(res.report, cfg.report_path);
    } else if (*dims) {
      const Bipartition b = bipartition_split(dims_n, dims_d);
      json j;
      j["N"] = dims_n;
      j["d"] = dims_d;
      j["m"] = b.n_b;
      j["bipartition"] = {{"n_a", b.n_a}, {"n_b", b.n_b}, {"n_c", b.n_c}};
      j["rdm_body"] = (dims_n + 2) / 2;
      j["measurement_count"] = measurement_count(dims_n, dims_d);
      j["deduplicated_measurement_count"] = deduplicated_measurement_count(dims_n, dims_d);
      std::cout << j.dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
