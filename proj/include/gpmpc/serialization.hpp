#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpmpc/backoff.hpp"
#include "gpmpc/mc_sampler.hpp"
#include "gpmpc/nmpc.hpp"
#include "gpmpc/plant.hpp"
#include "gpmpc/state_space.hpp"

namespace gpmpc {

namespace fs = std::filesystem;

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Writes `text` to `path`, creating parent directories. Throws IoError.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Per output: normalized inputs and targets, hyperparameters and noise
/// flags; plus both scalers and Sigma_omega. The inverse covariance is
/// rebuilt on load.
nlohmann::json model_to_json(const GPStateSpace& model);
GPStateSpace model_from_json(const nlohmann::json& doc);
void save_model(const fs::path& path, const GPStateSpace& model);
GPStateSpace load_model(const fs::path& path);

/// CSV with columns z_1..z_5, y_1..y_3 in physical units, and a sidecar
/// `<stem>.json` with seed, N, type, trajectories and the noise spec.
void save_dataset(const fs::path& csv_path, const Dataset& ds, const NoiseSpec& noise);
Dataset load_dataset(const fs::path& csv_path);
fs::path dataset_sidecar(const fs::path& csv_path);

/// Back-off CSV (t, j, b, b_tilde) and report JSON.
void save_backoff_table(const fs::path& csv_path, const BackoffTable& table);
BackoffTable load_backoff_table(const fs::path& csv_path);
nlohmann::json backoff_report_json(const BackoffRunReport& report);
/// Bisection history: iteration, gamma, beta_hat, beta_lb, h, bracket, replaced.
void save_bisection_records(const fs::path& csv_path, const std::vector<BisectionRecord>& records);

/// Monte-Carlo batch as CSV (sample_id, t, x_1.., u_1..); u is empty at t = T.
void save_mc_trajectories(const fs::path& csv_path, const BatchResult& batch);

/// One closed-loop run against the plant.
struct Episode {
  int run_id = 0;
  Trajectory trajectory;
  Matrix constraints;  ///< (T + 1) x n_g; rows after a failure are absent
  bool failed = false;
  std::string failure;
  bool violated = false;         ///< some g > 0 (failed episodes count as violated)
  double terminal_product = 0.0; ///< C_qc at the last reached state
  double objective = 0.0;        ///< C_qc,T - sum du^T R du
  std::vector<SolveDiagnostics> diagnostics;
};

/// Columns run_id, t, x_1.., u_1.., g_1..; u is empty at the final row.
void save_episodes(const fs::path& csv_path, const std::vector<Episode>& episodes);
/// Columns run_id, t, iterations, objective, max_violation, wall_time.
void save_diagnostics(const fs::path& csv_path, const std::vector<Episode>& episodes);

struct SummaryRow {
  std::string variant;
  double beta_hat = 0.0;
  double beta_lb = 0.0;
  double mean_backoff_g1g3 = 0.0;
  double mean_backoff_g2 = 0.0;
  double violation_fraction = 0.0;
  double mean_objective = 0.0;
  double std_objective = 0.0;
};

const std::vector<std::string>& summary_columns();
void save_summary(const fs::path& csv_path, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> load_summary(const fs::path& csv_path);

/// Minimal CSV reader for the files above: header names and numeric-or-text cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const fs::path& path);

}  // namespace gpmpc
