#include "gpmpc/experiment.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>

#include "gpmpc/errors.hpp"
#include "gpmpc/mc_sampler.hpp"
#include "gpmpc/stats.hpp"

namespace gpmpc {

using nlohmann::json;

namespace {

// Stream ids for the master seed.
constexpr std::uint64_t kFitStream = 2;
constexpr std::uint64_t kBackoffKey = 0xb4c0ffULL;
constexpr std::uint64_t kEvalKey = 0xe7a1ULL;

template <class T>
void read_key(const json& obj, const char* key, T& target, std::set<std::string>& known) {
  known.insert(key);
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  for (const auto& item : obj.items())
    if (!known.count(item.key())) throw DomainError("config: unknown key '" + where + item.key() + "'");
}

json section(const json& doc, const char* key) {
  if (!doc.contains(key)) return json::object();
  if (!doc.at(key).is_object()) throw DomainError(std::string("config: '") + key + "' must be an object");
  return doc.at(key);
}

Matrix constraints_of(const std::vector<StateConstraint>& cs, const Matrix& states, bool complete) {
  if (complete) return evaluate_constraints(cs, states);
  Matrix g(states.rows(), cs.size());
  for (std::size_t t = 0; t < states.rows(); ++t)
    for (std::size_t j = 0; j < cs.size(); ++j)
      if (!cs[j].terminal_only) g(t, j) = cs[j].value(states.row(t));
  return g;
}

std::uint64_t eval_seed(const ExperimentConfig& cfg) { return mix64(cfg.seed ^ kEvalKey); }

SummaryRow summary_row(const std::string& variant, double beta_hat, double beta_lb, const Matrix& b,
                       const OCPSpec& spec, const std::vector<Episode>& episodes) {
  const auto [g13, g2] = mean_backoffs(b, spec.constraints);
  const EpisodeStats st = episode_stats(episodes);
  return {variant, beta_hat, beta_lb, g13, g2, st.violation_fraction, st.mean_objective, st.std_objective};
}

}  // namespace

Profile parse_profile(const std::string& name) {
  if (name == "desk") return Profile::Desk;
  if (name == "paper") return Profile::Paper;
  throw DomainError("unknown profile '" + name + "' (expected desk or paper)");
}

std::string profile_name(Profile p) { return p == Profile::Desk ? "desk" : "paper"; }

void ExperimentConfig::apply_profile(Profile p) {
  profile = p;
  if (p == Profile::Desk) {
    chance.samples = 200;
    chance.iterations = 8;
  } else {
    chance.samples = 1000;
    chance.iterations = 16;
  }
  eval.runs = 50;
}

OCPSpec ExperimentConfig::ocp_spec() const {
  OCPSpec s = OCPSpec::bioreactor(variant.state_dependent);
  s.horizon = ocp.horizon;
  s.r_diag = ocp.r_diag;
  s.u_lower = ocp.u_lower;
  s.u_upper = ocp.u_upper;
  s.eta = variant.state_dependent ? Vector{ocp.eta0} : Vector{};
  return s;
}

BackoffSettings ExperimentConfig::backoff_settings() const {
  BackoffSettings s;
  s.epsilon = chance.epsilon;
  s.alpha = chance.alpha;
  s.delta = chance.delta;
  s.samples = chance.samples;
  s.iterations = chance.iterations;
  s.gamma_upper = chance.gamma_upper;
  s.frozen_seeds = chance.frozen_seeds;
  s.seed = mix64(seed ^ kBackoffKey);
  s.batch = batch_options();
  return s;
}

BatchOptions ExperimentConfig::batch_options() const {
  BatchOptions b;
  b.execution = Execution::Parallel;
  b.workers = workers;
  b.replacement_budget = chance.replacement_budget;
  return b;
}

json config_to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"profile", profile_name(c.profile)},
          {"seed", c.seed},
          {"workers", c.workers},
          {"output_dir", c.output_dir},
          {"dataset", {{"type", c.dataset.type}, {"N", c.dataset.n}, {"seed", c.dataset.seed}}},
          {"gp", {{"restarts", c.gp.restarts}}},
          {"ocp",
           {{"horizon", c.ocp.horizon},
            {"r_diag", c.ocp.r_diag},
            {"eta0", c.ocp.eta0},
            {"u_lower", c.ocp.u_lower},
            {"u_upper", c.ocp.u_upper},
            {"x0_mean", c.noise.x0_mean},
            {"x0_cov_diag", c.noise.x0_cov_diag},
            {"sigma_nu_diag", c.noise.sigma_nu_diag},
            {"sigma_omega_diag", c.noise.sigma_omega_diag}}},
          {"chance",
           {{"epsilon", c.chance.epsilon},
            {"alpha", c.chance.alpha},
            {"delta", c.chance.delta},
            {"S", c.chance.samples},
            {"n_b", c.chance.iterations},
            {"gamma_upper", c.chance.gamma_upper},
            {"frozen_seeds", c.chance.frozen_seeds},
            {"replacement_budget", c.chance.replacement_budget}}},
          {"variant", {{"learning", c.variant.learning}, {"state_dependent", c.variant.state_dependent}}},
          {"eval", {{"n_closed_loop_runs", c.eval.runs}, {"nominal_comparison", c.eval.nominal_comparison}}}};
}

ExperimentConfig config_from_json(const json& doc, std::optional<Profile> profile_override) {
  if (!doc.is_object()) throw DomainError("config: top level must be an object");
  ExperimentConfig c;
  try {
    Profile p = Profile::Desk;
    if (doc.contains("profile")) p = parse_profile(doc.at("profile").get<std::string>());
    if (profile_override) p = *profile_override;
    c.apply_profile(p);

    std::set<std::string> top{"profile", "dataset", "gp", "ocp", "chance", "variant", "eval"};
    read_key(doc, "name", c.name, top);
    read_key(doc, "seed", c.seed, top);
    c.dataset.seed = c.seed;
    read_key(doc, "workers", c.workers, top);
    read_key(doc, "output_dir", c.output_dir, top);
    reject_unknown(doc, top, "");

    std::set<std::string> k;
    const json ds = section(doc, "dataset");
    read_key(ds, "type", c.dataset.type, k);
    read_key(ds, "N", c.dataset.n, k);
    read_key(ds, "seed", c.dataset.seed, k);
    reject_unknown(ds, k, "dataset.");

    k.clear();
    const json gp = section(doc, "gp");
    read_key(gp, "restarts", c.gp.restarts, k);
    reject_unknown(gp, k, "gp.");

    k.clear();
    const json ocp = section(doc, "ocp");
    read_key(ocp, "horizon", c.ocp.horizon, k);
    read_key(ocp, "r_diag", c.ocp.r_diag, k);
    read_key(ocp, "eta0", c.ocp.eta0, k);
    read_key(ocp, "u_lower", c.ocp.u_lower, k);
    read_key(ocp, "u_upper", c.ocp.u_upper, k);
    read_key(ocp, "x0_mean", c.noise.x0_mean, k);
    read_key(ocp, "x0_cov_diag", c.noise.x0_cov_diag, k);
    read_key(ocp, "sigma_nu_diag", c.noise.sigma_nu_diag, k);
    read_key(ocp, "sigma_omega_diag", c.noise.sigma_omega_diag, k);
    reject_unknown(ocp, k, "ocp.");

    k.clear();
    const json ch = section(doc, "chance");
    read_key(ch, "epsilon", c.chance.epsilon, k);
    read_key(ch, "alpha", c.chance.alpha, k);
    read_key(ch, "delta", c.chance.delta, k);
    read_key(ch, "S", c.chance.samples, k);
    read_key(ch, "n_b", c.chance.iterations, k);
    read_key(ch, "gamma_upper", c.chance.gamma_upper, k);
    read_key(ch, "frozen_seeds", c.chance.frozen_seeds, k);
    read_key(ch, "replacement_budget", c.chance.replacement_budget, k);
    reject_unknown(ch, k, "chance.");

    k.clear();
    const json v = section(doc, "variant");
    read_key(v, "learning", c.variant.learning, k);
    read_key(v, "state_dependent", c.variant.state_dependent, k);
    reject_unknown(v, k, "variant.");

    k.clear();
    const json ev = section(doc, "eval");
    read_key(ev, "n_closed_loop_runs", c.eval.runs, k);
    read_key(ev, "nominal_comparison", c.eval.nominal_comparison, k);
    reject_unknown(ev, k, "eval.");
  } catch (const json::exception& e) {
    throw DomainError(std::string("config: ") + e.what());
  }

  if (c.dataset.type != 1 && c.dataset.type != 2) throw DomainError("config: dataset.type must be 1 or 2");
  if (c.dataset.n < 5) throw DomainError("config: dataset.N must be >= 5");
  if (c.ocp.horizon < 1) throw DomainError("config: ocp.horizon must be >= 1");
  if (c.chance.samples < 1 || c.chance.iterations < 0) throw DomainError("config: bad chance.S or chance.n_b");
  if (c.eval.runs < 0) throw DomainError("config: eval.n_closed_loop_runs must be >= 0");
  return c;
}

ExperimentConfig load_config(const fs::path& path, std::optional<Profile> profile_override) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return config_from_json(doc, profile_override);
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"gp50", "gp60", "gp100", "gp50-learning", "gp50-sd", "gp50-nsd"};
  return names;
}

ExperimentConfig variant_config(const std::string& variant, ExperimentConfig c) {
  c.name = variant;
  c.variant = VariantFlags{};
  c.dataset.type = 1;
  if (variant == "gp50") {
    c.dataset.n = 50;
  } else if (variant == "gp60") {
    c.dataset.n = 60;
  } else if (variant == "gp100") {
    c.dataset.n = 100;
  } else if (variant == "gp50-learning") {
    c.dataset.n = 50;
    c.variant.learning = true;
  } else if (variant == "gp50-sd" || variant == "gp50-nsd") {
    c.dataset.type = 2;
    c.dataset.n = 50;
    c.variant.state_dependent = variant == "gp50-sd";
  } else {
    throw DomainError("unknown variant '" + variant + "'");
  }
  return c;
}

ArtifactPaths::ArtifactPaths(const fs::path& dir)
    : dataset(dir / "dataset.csv"),
      model(dir / "model.json"),
      backoff(dir / "backoff.csv"),
      backoff_report(dir / "backoff_report.json"),
      bisection(dir / "bisection.csv"),
      mc_dir(dir / "mc"),
      trajectories(dir / "trajectories.csv"),
      trajectories_nominal(dir / "trajectories_nominal.csv"),
      diagnostics(dir / "diagnostics.csv"),
      summary(dir / "summary.csv") {}

std::pair<double, double> mean_backoffs(const Matrix& b, const std::vector<StateConstraint>& cs) {
  if (b.empty() || b.rows() < 2) return {0.0, 0.0};
  const std::size_t T = b.rows() - 1;
  double s13 = 0.0, s2 = 0.0;
  int n13 = 0, n2 = 0;
  for (std::size_t j = 0; j < cs.size() && j < b.cols(); ++j) {
    const bool g2 = cs[j].name == "g2";
    for (std::size_t t = cs[j].terminal_only ? T : 1; t <= T; ++t) {
      if (g2) {
        s2 += b(t, j);
        ++n2;
      } else {
        s13 += b(t, j);
        ++n13;
      }
    }
  }
  return {n13 ? s13 / n13 : 0.0, n2 ? s2 / n2 : 0.0};
}

Episode run_plant_episode(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                          VariantFlags variant, const SolverOptions& solver, const NoiseSpec& noise, RngStream& rng,
                          int run_id) {
  const int T = spec.horizon;
  const std::size_t nx = noise.x0_mean.size(), nu = spec.control_dim();
  Episode ep;
  ep.run_id = run_id;
  ep.trajectory.sample_id = run_id;
  PolicyState ps(model, spec, backoffs, variant, solver);

  Matrix states(T + 1, nx), controls(T, nu);
  Vector x = sample_gaussian(noise.x0_mean, DiagonalCovariance{noise.x0_cov_diag}, rng);
  for (auto& v : x) v = std::max(v, 0.0);
  std::copy(x.begin(), x.end(), states.row(0).begin());
  int reached = 0;
  double du_cost = 0.0;
  try {
    for (int t = 0; t < T; ++t) {
      const Vector u = policy_kappa(ps, x, t);
      if (t > 0)
        for (std::size_t d = 0; d < nu; ++d) {
          const double du = u[d] - controls(t - 1, d);
          du_cost += spec.r_diag[d] * du * du;
        }
      std::copy(u.begin(), u.end(), controls.row(t).begin());
      x = plant_transition(x, u, noise, rng);
      std::copy(x.begin(), x.end(), states.row(t + 1).begin());
      reached = t + 1;
    }
  } catch (const Error& e) {
    ep.failed = true;
    ep.failure = e.what();
  }

  ep.trajectory.states = Matrix(reached + 1, nx);
  ep.trajectory.controls = Matrix(reached, nu);
  for (int t = 0; t <= reached; ++t) std::copy(states.row(t).begin(), states.row(t).end(), ep.trajectory.states.row(t).begin());
  for (int t = 0; t < reached; ++t)
    std::copy(controls.row(t).begin(), controls.row(t).end(), ep.trajectory.controls.row(t).begin());
  ep.constraints = constraints_of(spec.constraints, ep.trajectory.states, !ep.failed);
  ep.violated = ep.failed || joint_satisfaction_stat(ep.constraints) > 0.0;
  const auto last = ep.trajectory.states.row(reached);
  ep.terminal_product = last[nx - 1];
  double terminal = 0.0;
  for (std::size_t i = 0; i < nx && i < spec.terminal_weights.size(); ++i) terminal -= spec.terminal_weights[i] * last[i];
  ep.objective = terminal - du_cost;
  ep.diagnostics = std::move(ps.diagnostics);
  return ep;
}

std::vector<Episode> run_plant_episodes(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                                        VariantFlags variant, const SolverOptions& solver, const NoiseSpec& noise,
                                        std::uint64_t seed, int runs, const BatchOptions& batch) {
  std::vector<Episode> out(static_cast<std::size_t>(runs));
  parallel_for_indexed(
      out.size(),
      [&](std::size_t i) {
        RngStream rng(seed, i);
        out[i] = run_plant_episode(model, spec, backoffs, variant, solver, noise, rng, static_cast<int>(i));
      },
      batch.execution, batch.workers);
  return out;
}

EpisodeStats episode_stats(const std::vector<Episode>& episodes) {
  EpisodeStats s;
  if (episodes.empty()) return s;
  Vector obj, prod;
  int violated = 0;
  for (const Episode& e : episodes) {
    if (e.violated) ++violated;
    if (e.failed) {
      ++s.failed;
      continue;
    }
    obj.push_back(e.objective);
    prod.push_back(e.terminal_product);
  }
  s.violation_fraction = static_cast<double>(violated) / static_cast<double>(episodes.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  s.mean_objective = obj.empty() ? nan : mean(obj);
  s.std_objective = obj.empty() ? nan : stddev(obj);
  s.mean_terminal_product = prod.empty() ? nan : mean(prod);
  return s;
}

// ---- commands ----------------------------------------------------------

Dataset cmd_generate(const ExperimentConfig& cfg, std::ostream& log) {
  const ArtifactPaths paths(cfg.output_dir);
  RngStream rng(cfg.dataset.seed, 1);
  Dataset ds = cfg.dataset.type == 1 ? generate_dataset_type1(cfg.dataset.n, cfg.noise, rng)
                                     : generate_dataset_type2(cfg.dataset.n, cfg.ocp.horizon, cfg.noise, rng);
  ds.seed = cfg.dataset.seed;
  save_dataset(paths.dataset, ds, cfg.noise);
  log << "generate: type " << ds.type << ", N = " << ds.z.rows();
  if (ds.type == 2) log << " from " << ds.trajectories << " open-loop trajectories";
  log << " -> " << paths.dataset.string() << "\n";
  return ds;
}

GPStateSpace cmd_fit(const ExperimentConfig& cfg, std::ostream& log) {
  const ArtifactPaths paths(cfg.output_dir);
  const Dataset ds = load_dataset(paths.dataset);
  RngStream rng(cfg.seed, kFitStream);
  std::vector<FitReport> reports;
  GPStateSpace model = fit_state_space(ds.z, ds.y, cfg.noise.sigma_omega_diag, cfg.gp.restarts, rng, {}, &reports);
  save_model(paths.model, model);
  log << "fit: N = " << ds.z.rows() << " -> " << paths.model.string() << "\n";
  log << std::setprecision(6);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const Hyperparameters& psi = reports[i].psi;
    log << "  output " << i + 1 << ": nll " << reports[i].nll << ", zeta " << std::exp(psi.log_zeta) << ", sigma_nu "
        << std::exp(psi.log_sigma_nu) << ", lambda [";
    for (std::size_t d = 0; d < psi.log_lambda.size(); ++d) log << (d ? ", " : "") << std::exp(psi.log_lambda[d]);
    log << "]\n";
  }
  return model;
}

BackoffRunReport cmd_backoff(const ExperimentConfig& cfg, std::ostream& log) {
  const ArtifactPaths paths(cfg.output_dir);
  const GPStateSpace model = load_model(paths.model);
  GPNMPCSampler sampler(model, cfg.ocp_spec(), cfg.variant, SolverOptions{}, cfg.noise.x0_mean,
                        cfg.noise.x0_cov_diag);
  const BackoffSettings settings = cfg.backoff_settings();
  log << "backoff: S = " << settings.samples << ", n_b = " << settings.iterations << "\n" << std::setprecision(4);
  const BackoffRunReport report = run_backoff_iterations(
      settings, sampler, [&](const BisectionRecord& rec, const BatchResult& batch) {
        save_mc_trajectories(paths.mc_dir / ("iter_" + std::to_string(rec.iteration) + ".csv"), batch);
        log << "  iter " << rec.iteration << ": gamma " << rec.gamma << ", beta_hat " << rec.beta_hat << ", beta_lb "
            << rec.beta_lb << ", bracket [" << rec.bracket_lower << ", " << rec.bracket_upper << "]";
        if (rec.replaced) log << ", replaced " << rec.replaced;
        log << std::endl;
      });
  save_backoff_table(paths.backoff, report.table);
  save_bisection_records(paths.bisection, report.records);
  write_text(paths.backoff_report, backoff_report_json(report).dump(1) + "\n");
  if (report.no_sign_change)
    log << "backoff: h(0) >= 0, the controller meets the target without back-offs; bisection skipped\n";
  log << "backoff: gamma " << report.table.gamma << ", beta_lb " << report.beta_lb
      << (report.converged ? " (converged)" : " (not converged)") << "\n";
  return report;
}

EvaluationResult cmd_evaluate(const ExperimentConfig& cfg, std::ostream& log) {
  const ArtifactPaths paths(cfg.output_dir);
  const GPStateSpace model = load_model(paths.model);
  const BackoffTable table = load_backoff_table(paths.backoff);
  const OCPSpec spec = cfg.ocp_spec();
  double beta_hat = std::numeric_limits<double>::quiet_NaN(), beta_lb = beta_hat;
  double beta_hat0 = beta_hat, beta_lb0 = beta_hat;
  if (fs::exists(paths.backoff_report)) {
    const json rep = json::parse(read_text(paths.backoff_report));
    beta_hat = rep.value("beta_hat", beta_hat);
    beta_lb = rep.value("beta_lb", beta_lb);
    if (rep.contains("iterations") && !rep["iterations"].empty()) {
      beta_hat0 = rep["iterations"][0].value("beta_hat", beta_hat0);
      beta_lb0 = rep["iterations"][0].value("beta_lb", beta_lb0);
    }
  }

  EvaluationResult res;
  const std::uint64_t seed = eval_seed(cfg);
  res.backoff = run_plant_episodes(model, spec, table.b, cfg.variant, SolverOptions{}, cfg.noise, seed, cfg.eval.runs,
                                   cfg.batch_options());
  save_episodes(paths.trajectories, res.backoff);
  save_diagnostics(paths.diagnostics, res.backoff);
  res.summary.push_back(summary_row(cfg.name, beta_hat, beta_lb, table.b, spec, res.backoff));

  if (cfg.eval.nominal_comparison) {
    // Same noise streams as the back-off runs.
    res.nominal = run_plant_episodes(model, spec, Matrix(), cfg.variant, SolverOptions{}, cfg.noise, seed,
                                     cfg.eval.runs, cfg.batch_options());
    save_episodes(paths.trajectories_nominal, res.nominal);
    res.summary.push_back(summary_row(cfg.name + "-nominal", beta_hat0, beta_lb0, Matrix(), spec, res.nominal));
  }
  save_summary(paths.summary, res.summary);
  log << std::setprecision(4);
  for (const SummaryRow& r : res.summary)
    log << "evaluate " << r.variant << ": violation fraction " << r.violation_fraction << ", objective "
        << r.mean_objective << " +- " << r.std_objective << "\n";
  return res;
}

std::vector<SummaryRow> cmd_reproduce(const std::string& variant, const ExperimentConfig& base, std::ostream& log) {
  std::vector<std::string> variants;
  if (variant == "all") variants = variant_names();
  else variants.push_back(variant);

  std::vector<SummaryRow> rows;
  for (const std::string& v : variants) {
    ExperimentConfig cfg = variant_config(v, base);
    cfg.output_dir = (fs::path(base.output_dir) / v).string();
    log << "== " << v << " ==\n";
    cmd_generate(cfg, log);
    cmd_fit(cfg, log);
    cmd_backoff(cfg, log);
    const EvaluationResult ev = cmd_evaluate(cfg, log);
    rows.insert(rows.end(), ev.summary.begin(), ev.summary.end());
  }
  save_summary(fs::path(base.output_dir) / "summary.csv", rows);

  log << "\n" << std::left << std::setw(22) << "variant" << std::setw(12) << "g1/g3" << std::setw(10) << "g2"
      << std::setw(10) << "beta_lb" << std::setw(10) << "beta_hat" << std::setw(12) << "violations"
      << "objective\n";
  log << std::setprecision(4);
  for (const SummaryRow& r : rows)
    log << std::setw(22) << r.variant << std::setw(12) << r.mean_backoff_g1g3 << std::setw(10) << r.mean_backoff_g2
        << std::setw(10) << r.beta_lb << std::setw(10) << r.beta_hat << std::setw(12) << r.violation_fraction
        << r.mean_objective << "\n";
  return rows;
}

}  // namespace gpmpc
