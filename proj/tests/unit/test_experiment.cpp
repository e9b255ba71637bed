#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <unistd.h>

#include "gpmpc/errors.hpp"
#include "gpmpc/experiment.hpp"
#include "gpmpc/serialization.hpp"

using namespace gpmpc;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gpmpc_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const GPStateSpace& small_model() {
  static const GPStateSpace model = [] {
    RngStream rng(8, 0);
    const Dataset ds = generate_dataset_type1(30, NoiseSpec{}, rng);
    RngStream fit_rng(8, 1);
    return fit_state_space(ds.z, ds.y, NoiseSpec{}.sigma_omega_diag, 1, fit_rng);
  }();
  return model;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const fs::path log = fs::temp_directory_path() / ("gpmpc_cli_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = std::string(GPMPC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = read_text(log);
  fs::remove(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Serialization, DoublesRoundTripExactly) {
  RngStream rng(1, 0);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::ldexp(rng.normal(), static_cast<int>(rng.uniform() * 80) - 40);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(800.0), "800");
}

TEST(Serialization, ModelRoundTripReproducesPredictions) {
  const GPStateSpace& m = small_model();
  const fs::path dir = scratch("model");
  save_model(dir / "model.json", m);
  const GPStateSpace back = load_model(dir / "model.json");
  EXPECT_EQ(back.content_hash(), m.content_hash());
  const json doc = json::parse(read_text(dir / "model.json"));
  EXPECT_FALSE(doc.dump().find("inv_cov") != std::string::npos);
  RngStream rng(2, 0);
  for (int i = 0; i < 20; ++i) {
    const Vector x{20.0 * rng.uniform(), 800.0 * rng.uniform(), 0.18 * rng.uniform()};
    const Vector u{120.0 + 280.0 * rng.uniform(), 40.0 * rng.uniform()};
    const Prediction a = m.predict(x, u), b = back.predict(x, u);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(a.mean[k], b.mean[k], 1e-10 * std::max(1.0, std::abs(a.mean[k])));
      EXPECT_NEAR(a.variance[k], b.variance[k], 1e-10 * std::max(1.0, a.variance[k]));
    }
  }
}

TEST(Serialization, ConditionedModelKeepsNoiseFlags) {
  const GPStateSpace c = small_model().condition_all(Vector{1.0, 150.0, 0.0}, Vector{300.0, 20.0},
                                                     Vector{1.3, 500.0, 0.01}, true);
  const GPStateSpace back = model_from_json(model_to_json(c));
  EXPECT_EQ(back.gps()[1].noise_flags(), c.gps()[1].noise_flags());
  EXPECT_EQ(back.gps()[1].noise_flags().back(), 0);
  EXPECT_EQ(back.content_hash(), c.content_hash());
}

TEST(Serialization, MalformedModelIsIoError) {
  EXPECT_THROW(model_from_json(json{{"format", "other"}}), IoError);
  json doc = model_to_json(small_model());
  doc["outputs"][0].erase("psi");
  EXPECT_THROW(model_from_json(doc), IoError);
  EXPECT_THROW(load_model("/nonexistent/model.json"), IoError);
}

TEST(Serialization, DatasetRoundTripAndSidecar) {
  RngStream rng(3, 0);
  Dataset ds = generate_dataset_type2(50, 12, NoiseSpec{}, rng);
  ds.seed = 3;
  const fs::path dir = scratch("dataset");
  save_dataset(dir / "d.csv", ds, NoiseSpec{});
  const Dataset back = load_dataset(dir / "d.csv");
  EXPECT_EQ(back.z, ds.z);
  EXPECT_EQ(back.y, ds.y);
  EXPECT_EQ(back.type, 2);
  EXPECT_EQ(back.trajectories, 5);
  EXPECT_EQ(back.seed, 3u);
  const CsvTable t = read_csv(dir / "d.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"z_1", "z_2", "z_3", "z_4", "z_5", "y_1", "y_2", "y_3"}));
  EXPECT_EQ(t.rows.size(), 50u);
  const json meta = json::parse(read_text(dir / "d.json"));
  EXPECT_EQ(meta.at("N"), 50);
  EXPECT_EQ(meta.at("noise").at("x0_cov_diag")[1], 22.5);
}

TEST(Serialization, BackoffTableRoundTrip) {
  BackoffTable t = BackoffTable::scaled(Matrix{{0, 0, 0}, {10, 0.002, 0}, {20, 0.004, 7}}, 1.5);
  const fs::path dir = scratch("backoff");
  save_backoff_table(dir / "b.csv", t);
  const BackoffTable back = load_backoff_table(dir / "b.csv");
  EXPECT_EQ(back.b, t.b);
  EXPECT_EQ(back.b_tilde, t.b_tilde);
  EXPECT_DOUBLE_EQ(back.gamma, 1.5);
  const CsvTable csv = read_csv(dir / "b.csv");
  EXPECT_EQ(csv.header, (std::vector<std::string>{"t", "j", "b", "b_tilde"}));
  EXPECT_EQ(csv.rows.size(), 9u);
}

TEST(Serialization, ReportJsonCarriesHeaderFields) {
  BackoffRunReport r;
  r.settings.samples = 200;
  r.records.push_back({0, 0.0, 0.5, 0.4, -0.5, 0.0, 2.5, 0});
  const json j = backoff_report_json(r);
  for (const char* k : {"gamma", "epsilon", "alpha", "delta", "S", "n_b", "beta_hat", "beta_lb", "converged"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.at("S"), 200);
  EXPECT_EQ(j.at("iterations").size(), 1u);
}

TEST(Serialization, SummarySchemaIsExact) {
  const fs::path dir = scratch("summary");
  const std::vector<SummaryRow> rows{{"gp60", 0.93, 0.9, 40.0, 0.008, 0.04, 0.18, 0.01},
                                     {"gp60-nominal", 0.1, 0.05, 0.0, 0.0, 0.8, 0.19, 0.01}};
  save_summary(dir / "s.csv", rows);
  const std::string text = read_text(dir / "s.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "variant,beta_hat,beta_lb,mean_backoff_g1g3,mean_backoff_g2,violation_fraction,mean_objective,"
            "std_objective");
  const auto back = load_summary(dir / "s.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].variant, "gp60-nominal");
  EXPECT_EQ(back[0].mean_backoff_g2, 0.008);
}

TEST(Config, DefaultsAreTheCaseStudy) {
  const ExperimentConfig c;
  EXPECT_EQ(c.ocp.horizon, 12);
  EXPECT_DOUBLE_EQ(c.batch_hours(), 240.0);
  EXPECT_EQ(c.chance.epsilon, 0.1);
  EXPECT_EQ(c.chance.alpha, 0.01);
  EXPECT_EQ(c.chance.delta, 0.1);
  EXPECT_EQ(c.chance.samples, 1000);
  EXPECT_EQ(c.chance.iterations, 16);
  EXPECT_TRUE(c.ocp_spec().eta.empty());
  ExperimentConfig sd = c;
  sd.variant.state_dependent = true;
  EXPECT_EQ(sd.ocp_spec().eta, Vector{15.0});
  EXPECT_EQ(c.noise.x0_cov_diag, (Vector{1e-3, 22.5, 0.0}));
  const OCPSpec s = c.ocp_spec();
  EXPECT_EQ(s.r_diag, (Vector{3.125e-8, 3.125e-6}));
  EXPECT_EQ(s.constraints.size(), 3u);
}

TEST(Config, ProfilesAndOverrides) {
  const ExperimentConfig desk = config_from_json(json::object());
  EXPECT_EQ(desk.profile, Profile::Desk);
  EXPECT_EQ(desk.chance.samples, 200);
  EXPECT_EQ(desk.chance.iterations, 8);
  EXPECT_EQ(desk.eval.runs, 50);
  const ExperimentConfig paper = config_from_json(json{{"profile", "paper"}});
  EXPECT_EQ(paper.chance.samples, 1000);
  EXPECT_EQ(paper.chance.iterations, 16);
  // Explicit keys win over the profile, the CLI profile wins over the file's.
  const ExperimentConfig c =
      config_from_json(json{{"profile", "desk"}, {"chance", {{"S", 77}}}, {"dataset", {{"N", 80}}}}, Profile::Paper);
  EXPECT_EQ(c.chance.samples, 77);
  EXPECT_EQ(c.chance.iterations, 16);
  EXPECT_EQ(c.dataset.n, 80);
  EXPECT_THROW(config_from_json(json{{"chance", {{"epsilonn", 0.2}}}}), DomainError);
  EXPECT_THROW(config_from_json(json{{"bogus", 1}}), DomainError);
  EXPECT_THROW(config_from_json(json{{"dataset", {{"type", 3}}}}), DomainError);
  EXPECT_THROW(config_from_json(json{{"profile", "huge"}}), DomainError);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = variant_config("gp50-sd", ExperimentConfig{});
  c.seed = 99;
  c.dataset.seed = 5;
  c.chance.samples = 321;
  c.eval.runs = 7;
  const ExperimentConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
}

TEST(Config, VariantWiring) {
  const ExperimentConfig base;
  EXPECT_EQ(variant_config("gp100", base).dataset.n, 100);
  EXPECT_EQ(variant_config("gp60", base).dataset.type, 1);
  EXPECT_TRUE(variant_config("gp50-learning", base).variant.learning);
  const ExperimentConfig sd = variant_config("gp50-sd", base);
  EXPECT_EQ(sd.dataset.type, 2);
  EXPECT_TRUE(sd.variant.state_dependent);
  const ExperimentConfig nsd = variant_config("gp50-nsd", base);
  EXPECT_EQ(nsd.dataset.type, 2);
  EXPECT_FALSE(nsd.variant.state_dependent);
  EXPECT_THROW(variant_config("gp70", base), DomainError);
}

TEST(Evaluation, MeanBackoffsOverEnforcedEntries) {
  // T = 2: g1 at t = 1, 2 and g3 at t = 2 average together; g2 at t = 1, 2.
  const Matrix b{{99, 99, 99}, {10, 0.1, 99}, {20, 0.3, 60}};
  const auto [g13, g2] = mean_backoffs(b, bioreactor_constraints());
  EXPECT_DOUBLE_EQ(g13, 30.0);
  EXPECT_DOUBLE_EQ(g2, 0.2);
  EXPECT_EQ(mean_backoffs(Matrix(), bioreactor_constraints()), std::make_pair(0.0, 0.0));
}

TEST(Evaluation, ZeroNoiseEpisodeIsThePlantUnderTheAppliedControls) {
  const OCPSpec spec = OCPSpec::bioreactor();
  RngStream rng(4, 0);
  const Episode e =
      run_plant_episode(small_model(), spec, Matrix(), VariantFlags{}, SolverOptions{}, NoiseSpec::zero(), rng, 3);
  ASSERT_FALSE(e.failed) << e.failure;
  EXPECT_EQ(e.run_id, 3);
  ASSERT_EQ(e.trajectory.states.rows(), 13u);
  Vector x{1.0, 150.0, 0.0};
  double du = 0.0;
  for (int t = 0; t < 12; ++t) {
    x = step(x, e.trajectory.controls.row(t));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(e.trajectory.states(t + 1, i), x[i]);
    if (t > 0)
      for (std::size_t d = 0; d < 2; ++d) {
        const double v = e.trajectory.controls(t, d) - e.trajectory.controls(t - 1, d);
        du += spec.r_diag[d] * v * v;
      }
  }
  EXPECT_DOUBLE_EQ(e.terminal_product, x[2]);
  EXPECT_NEAR(e.objective, x[2] - du, 1e-15);
  EXPECT_EQ(e.constraints, evaluate_constraints(spec.constraints, e.trajectory.states));
  EXPECT_EQ(e.violated, joint_satisfaction_stat(e.constraints) > 0.0);
  EXPECT_EQ(e.diagnostics.size(), 12u);
}

TEST(Evaluation, EpisodesAreReproducibleAcrossExecutionModes) {
  const OCPSpec spec = OCPSpec::bioreactor();
  const auto a = run_plant_episodes(small_model(), spec, Matrix(), VariantFlags{}, SolverOptions{}, NoiseSpec{}, 11, 3,
                                    {Execution::Serial, 0, 0.0});
  const auto b = run_plant_episodes(small_model(), spec, Matrix(), VariantFlags{}, SolverOptions{}, NoiseSpec{}, 11, 3,
                                    {Execution::Parallel, 2, 0.0});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].trajectory.states, b[i].trajectory.states);
    EXPECT_EQ(a[i].run_id, static_cast<int>(i));
  }
  EXPECT_NE(a[0].trajectory.states(0, 1), a[1].trajectory.states(0, 1));
}

TEST(Evaluation, StatsCountFailuresAsViolations) {
  std::vector<Episode> eps(4);
  eps[0].objective = 1.0;
  eps[1].objective = 3.0;
  eps[2].violated = true;
  eps[2].objective = 2.0;
  eps[3].failed = eps[3].violated = true;
  const EpisodeStats s = episode_stats(eps);
  EXPECT_DOUBLE_EQ(s.violation_fraction, 0.5);
  EXPECT_EQ(s.failed, 1);
  EXPECT_DOUBLE_EQ(s.mean_objective, 2.0);
  EXPECT_DOUBLE_EQ(s.std_objective, 1.0);
}

TEST(Cli, PipelineIsReproducibleAndRerunnable) {
  const fs::path dir = scratch("cli");
  const fs::path cfg = dir / "cfg.json";
  write_text(cfg, R"({"dataset": {"N": 30}, "gp": {"restarts": 1}, "chance": {"S": 10, "n_b": 1},
                      "eval": {"n_closed_loop_runs": 2}})");
  const std::string common = "--config " + cfg.string() + " --seed 17 --workers 1 --output-dir " + (dir / "a").string();

  std::string out;
  ASSERT_EQ(run_cli(common + " generate", &out), 0) << out;
  const std::string first = read_text(dir / "a" / "dataset.csv");
  ASSERT_EQ(run_cli(common + " generate"), 0);
  EXPECT_EQ(read_text(dir / "a" / "dataset.csv"), first);
  EXPECT_EQ(read_csv(dir / "a" / "dataset.csv").rows.size(), 30u);

  ASSERT_EQ(run_cli(common + " fit", &out), 0) << out;
  EXPECT_NE(out.find("output 3: nll"), std::string::npos) << out;
  {
    // Stored scalers are the column means and sample stds of the dataset.
    const Dataset ds = load_dataset(dir / "a" / "dataset.csv");
    const GPStateSpace m = load_model(dir / "a" / "model.json");
    for (std::size_t j = 0; j < 5; ++j) {
      const Vector col = ds.z.col(j);
      double mu = 0.0, ss = 0.0;
      for (double v : col) mu += v / static_cast<double>(col.size());
      for (double v : col) ss += (v - mu) * (v - mu);
      EXPECT_NEAR(m.z_scaler().mean[j], mu, 1e-12 * std::max(1.0, std::abs(mu)));
      EXPECT_NEAR(m.z_scaler().std[j], std::sqrt(ss / static_cast<double>(col.size() - 1)), 1e-10 * std::max(1.0, mu));
    }
  }

  // With S = 10 the bound alpha^(1/S) = 0.63 can never reach 0.9.
  EXPECT_EQ(run_cli(common + " backoff", &out), 3) << out;
  EXPECT_NE(out.find("--allow-nonconverged"), std::string::npos);
  const std::string report = read_text(dir / "a" / "backoff_report.json");
  ASSERT_EQ(run_cli(common + " --allow-nonconverged backoff", &out), 0) << out;
  EXPECT_EQ(read_text(dir / "a" / "backoff_report.json"), report);
  EXPECT_TRUE(fs::exists(dir / "a" / "mc" / "iter_1.csv"));
  EXPECT_EQ(read_csv(dir / "a" / "mc" / "iter_0.csv").header.front(), "sample_id");

  ASSERT_EQ(run_cli(common + " evaluate", &out), 0) << out;
  const auto summary = load_summary(dir / "a" / "summary.csv");
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[1].variant, "custom-nominal");
  const CsvTable traj = read_csv(dir / "a" / "trajectories.csv");
  EXPECT_EQ(traj.header,
            (std::vector<std::string>{"run_id", "t", "x_1", "x_2", "x_3", "u_1", "u_2", "g_1", "g_2", "g_3"}));
  EXPECT_EQ(traj.rows.size(), 26u);
}

TEST(Cli, AcceptsGlobalOptionsAfterSubcommand) {
  const fs::path dir = scratch("cli_order");
  std::string out;
  ASSERT_EQ(run_cli("generate --seed 5 --output-dir " + dir.string() + " --print-config", &out), 0) << out;
  EXPECT_NE(out.find("\"seed\": 5"), std::string::npos) << out;
  EXPECT_TRUE(fs::exists(dir / "dataset.csv"));
}

TEST(Cli, RejectsBadInvocations) {
  EXPECT_NE(run_cli(""), 0);
  EXPECT_NE(run_cli("frobnicate"), 0);
  EXPECT_NE(run_cli("--profile huge generate"), 0);
  EXPECT_NE(run_cli("reproduce gp70"), 0);
  EXPECT_EQ(run_cli("--output-dir /nonexistent_dir_for_gpmpc_test fit"), 2);
}
