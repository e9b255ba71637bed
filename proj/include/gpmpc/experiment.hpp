#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpmpc/backoff.hpp"
#include "gpmpc/nmpc.hpp"
#include "gpmpc/plant.hpp"
#include "gpmpc/serialization.hpp"

namespace gpmpc {

enum class Profile { Desk, Paper };

Profile parse_profile(const std::string& name);
std::string profile_name(Profile p);

/// Everything one pipeline run needs. Default values are the case-study
/// settings (full-scale S and n_b); `apply_profile(Desk)` shrinks the Monte
/// Carlo budget for desk runs.
struct ExperimentConfig {
  std::string name = "custom";
  Profile profile = Profile::Paper;
  std::uint64_t seed = 2024;  ///< master seed for fit, back-off and evaluation streams
  int workers = 0;            ///< 0 uses the OpenMP default
  std::string output_dir = "out";

  struct {
    int type = 1;
    int n = 60;
    std::uint64_t seed = 2024;
  } dataset;

  struct {
    int restarts = 3;
  } gp;

  struct {
    int horizon = 12;
    Vector r_diag{3.125e-8, 3.125e-6};
    double eta0 = 15.0;  ///< used only when variant.state_dependent
    Vector u_lower{120.0, 0.0};
    Vector u_upper{400.0, 40.0};
  } ocp;

  NoiseSpec noise;

  struct {
    double epsilon = 0.1;
    double alpha = 0.01;
    double delta = 0.1;
    int samples = 1000;
    int iterations = 16;
    double gamma_upper = 2.5;
    bool frozen_seeds = true;
    double replacement_budget = 0.05;
  } chance;

  VariantFlags variant;

  struct {
    int runs = 50;
    bool nominal_comparison = true;
  } eval;

  void apply_profile(Profile p);
  OCPSpec ocp_spec() const;
  BackoffSettings backoff_settings() const;
  BatchOptions batch_options() const;
  double batch_hours() const { return ocp.horizon * kSamplingHours; }
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Defaults, then the profile (`profile_override`, else the document's
/// "profile" key, else desk), then every key present in `doc`. Unknown keys
/// throw DomainError.
ExperimentConfig config_from_json(const nlohmann::json& doc, std::optional<Profile> profile_override = std::nullopt);
ExperimentConfig load_config(const fs::path& path, std::optional<Profile> profile_override = std::nullopt);

/// Named case-study variants: gp50, gp60, gp100, gp50-learning, gp50-sd, gp50-nsd.
const std::vector<std::string>& variant_names();
/// Sets dataset type and size and the variant flags of `variant` on `base`.
ExperimentConfig variant_config(const std::string& variant, ExperimentConfig base);

/// Artifact paths inside cfg.output_dir.
struct ArtifactPaths {
  fs::path dataset, model, backoff, backoff_report, bisection, mc_dir, trajectories, trajectories_nominal,
      diagnostics, summary;
  explicit ArtifactPaths(const fs::path& dir);
};

/// Mean back-off over enforced entries, t = 1..T: path g1 together with the
/// terminal g3 entry, and path g2.
std::pair<double, double> mean_backoffs(const Matrix& b, const std::vector<StateConstraint>& constraints);

/// One closed-loop run of the GP-NMPC feedback law against the plant with
/// process noise; x0 is drawn from the configured initial distribution.
/// A policy failure ends the episode, which then counts as violated.
Episode run_plant_episode(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                          VariantFlags variant, const SolverOptions& solver, const NoiseSpec& noise, RngStream& rng,
                          int run_id);

/// `runs` episodes with streams (seed, run_id), in parallel over runs.
std::vector<Episode> run_plant_episodes(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                                        VariantFlags variant, const SolverOptions& solver, const NoiseSpec& noise,
                                        std::uint64_t seed, int runs, const BatchOptions& batch);

struct EpisodeStats {
  double violation_fraction = 0.0;
  double mean_objective = 0.0;
  double std_objective = 0.0;
  double mean_terminal_product = 0.0;
  int failed = 0;
};
EpisodeStats episode_stats(const std::vector<Episode>& episodes);

struct EvaluationResult {
  std::vector<Episode> backoff;
  std::vector<Episode> nominal;  ///< empty without nominal comparison
  std::vector<SummaryRow> summary;
};

/// Pipeline stages. Each reads its inputs from and writes its outputs to
/// cfg.output_dir, logging progress to `log`.
Dataset cmd_generate(const ExperimentConfig& cfg, std::ostream& log);
GPStateSpace cmd_fit(const ExperimentConfig& cfg, std::ostream& log);
BackoffRunReport cmd_backoff(const ExperimentConfig& cfg, std::ostream& log);
EvaluationResult cmd_evaluate(const ExperimentConfig& cfg, std::ostream& log);
/// generate, fit, backoff and evaluate for one variant (or "all") under
/// output_dir/<variant>, plus a combined summary.csv in output_dir.
std::vector<SummaryRow> cmd_reproduce(const std::string& variant, const ExperimentConfig& base, std::ostream& log);

}  // namespace gpmpc
