#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "gpmpc/errors.hpp"
#include "gpmpc/experiment.hpp"

using namespace gpmpc;

int main(int argc, char** argv) {
  CLI::App app{"Back-off GP-NMPC pipeline: generate data, fit the GP model, compute back-offs, evaluate on the plant"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string profile = "desk";
  bool allow_nonconverged = false;
  std::optional<std::string> output_dir;
  bool dump_config = false;

  app.add_option("--config", config_path, "JSON config file; missing keys take the case-study defaults")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Master seed (also the dataset seed)");
  app.add_option("--workers", workers, "Worker threads for Monte Carlo samples and episodes (0 = all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--profile", profile, "Monte Carlo budget: desk (S=200, n_b=8) or paper (S=1000, n_b=16)")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_flag("--allow-nonconverged", allow_nonconverged, "Exit 0 even when the back-off bisection did not converge");
  app.add_option("--output-dir", output_dir, "Artifact directory (overrides the config)");
  app.add_flag("--print-config", dump_config, "Print the resolved config before running");

  auto* gen = app.add_subcommand("generate", "Write the training dataset CSV and its metadata");
  auto* fit = app.add_subcommand("fit", "Fit the GP state-space model and write model.json");
  auto* bo = app.add_subcommand("backoff", "Compute back-offs by bisection and write the table and report");
  auto* ev = app.add_subcommand("evaluate", "Run closed-loop episodes against the plant and write CSVs");
  auto* rep = app.add_subcommand("reproduce", "Run the whole pipeline for a case-study variant");
  for (auto* sub : {gen, fit, bo, ev, rep}) sub->fallthrough();
  std::string variant;
  std::vector<std::string> choices = variant_names();
  choices.push_back("all");
  rep->add_option("variant", variant, "gp50, gp60, gp100, gp50-learning, gp50-sd, gp50-nsd or all")
      ->required()
      ->check(CLI::IsMember(choices));

  CLI11_PARSE(app, argc, argv);

  try {
    const Profile prof = parse_profile(profile);
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      cfg = load_config(config_path, prof);
    } else {
      cfg.apply_profile(prof);
    }
    if (seed) cfg.seed = cfg.dataset.seed = *seed;
    if (workers) cfg.workers = *workers;
    if (output_dir) cfg.output_dir = *output_dir;
    if (dump_config) std::cout << config_to_json(cfg).dump(2) << "\n";

    if (gen->parsed()) {
      cmd_generate(cfg, std::cout);
    } else if (fit->parsed()) {
      cmd_fit(cfg, std::cout);
    } else if (bo->parsed()) {
      const BackoffRunReport r = cmd_backoff(cfg, std::cout);
      if (!r.converged && !allow_nonconverged) {
        std::cerr << "back-off bisection did not converge"
                  << (r.no_sign_change ? " (no sign change: zero back-offs already meet the target)" : "")
                  << "; pass --allow-nonconverged to accept\n";
        return 3;
      }
    } else if (ev->parsed()) {
      cmd_evaluate(cfg, std::cout);
    } else if (rep->parsed()) {
      cmd_reproduce(variant, cfg, std::cout);
    }
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
