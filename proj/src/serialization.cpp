#include "gpmpc/serialization.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gpmpc/errors.hpp"

namespace gpmpc {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s, const fs::path& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw IoError(where.string() + ": cannot parse number '" + s + "'");
  return v;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  return rows;
}

Matrix matrix_from(const json& j) {
  if (!j.is_array()) throw IoError("expected a matrix array");
  if (j.empty()) return Matrix();
  Matrix m(j.size(), j.front().size());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = j[i].get<std::vector<double>>();
    if (r.size() != m.cols()) throw IoError("ragged matrix in JSON");
    std::copy(r.begin(), r.end(), m.row(i).begin());
  }
  return m;
}

json scaler_json(const Scaler& s) { return {{"mean", s.mean}, {"std", s.std}}; }

Scaler scaler_from(const json& j) { return Scaler{j.at("mean").get<Vector>(), j.at("std").get<Vector>()}; }

void append_row(std::string& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  out += '\n';
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CsvTable read_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty CSV");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size())
      throw IoError(path.string() + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw IoError("CSV has no column '" + name + "'");
}

// ---- model -------------------------------------------------------------

json model_to_json(const GPStateSpace& model) {
  json outputs = json::array();
  for (const GPModel& gp : model.gps()) {
    const Hyperparameters& psi = gp.hyperparameters();
    outputs.push_back({{"inputs", matrix_json(gp.inputs())},
                       {"targets", gp.targets()},
                       {"noise_flags", gp.noise_flags()},
                       {"psi",
                        {{"log_zeta", psi.log_zeta},
                         {"log_lambda", psi.log_lambda},
                         {"log_sigma_nu", psi.log_sigma_nu}}}});
  }
  return {{"format", "gpmpc-model"},
          {"version", 1},
          {"sigma_omega", model.sigma_omega()},
          {"z_scaler", scaler_json(model.z_scaler())},
          {"y_scaler", scaler_json(model.y_scaler())},
          {"outputs", outputs}};
}

GPStateSpace model_from_json(const json& doc) {
  try {
    if (doc.value("format", "") != "gpmpc-model") throw IoError("not a gpmpc model document");
    std::vector<GPModel> gps;
    for (const json& o : doc.at("outputs")) {
      Hyperparameters psi;
      psi.log_zeta = o.at("psi").at("log_zeta").get<double>();
      psi.log_lambda = o.at("psi").at("log_lambda").get<Vector>();
      psi.log_sigma_nu = o.at("psi").at("log_sigma_nu").get<double>();
      gps.emplace_back(matrix_from(o.at("inputs")), o.at("targets").get<Vector>(), psi,
                       o.at("noise_flags").get<std::vector<std::uint8_t>>());
    }
    return GPStateSpace(std::move(gps), doc.at("sigma_omega").get<Vector>(), scaler_from(doc.at("z_scaler")),
                        scaler_from(doc.at("y_scaler")));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model JSON: ") + e.what());
  }
}

void save_model(const fs::path& path, const GPStateSpace& model) { write_text(path, model_to_json(model).dump(1) + "\n"); }

GPStateSpace load_model(const fs::path& path) {
  try {
    return model_from_json(json::parse(read_text(path)));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// ---- dataset -----------------------------------------------------------

fs::path dataset_sidecar(const fs::path& csv_path) {
  fs::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

void save_dataset(const fs::path& csv_path, const Dataset& ds, const NoiseSpec& noise) {
  std::string out;
  auto header = numbered("z_", ds.z.cols());
  for (auto& h : numbered("y_", ds.y.cols())) header.push_back(h);
  append_row(out, header);
  for (std::size_t i = 0; i < ds.z.rows(); ++i) {
    std::vector<std::string> cells;
    for (double v : ds.z.row(i)) cells.push_back(format_double(v));
    for (double v : ds.y.row(i)) cells.push_back(format_double(v));
    append_row(out, cells);
  }
  write_text(csv_path, out);
  const json meta = {{"type", ds.type},
                     {"N", ds.z.rows()},
                     {"seed", ds.seed},
                     {"trajectories", ds.trajectories},
                     {"noise",
                      {{"sigma_nu_diag", noise.sigma_nu_diag},
                       {"sigma_omega_diag", noise.sigma_omega_diag},
                       {"x0_mean", noise.x0_mean},
                       {"x0_cov_diag", noise.x0_cov_diag}}}};
  write_text(dataset_sidecar(csv_path), meta.dump(1) + "\n");
}

Dataset load_dataset(const fs::path& csv_path) {
  const CsvTable t = read_csv(csv_path);
  std::size_t nz = 0, ny = 0;
  for (const auto& h : t.header) {
    if (h.rfind("z_", 0) == 0) ++nz;
    else if (h.rfind("y_", 0) == 0) ++ny;
  }
  if (nz == 0 || ny == 0 || nz + ny != t.header.size()) throw IoError(csv_path.string() + ": not a dataset CSV");
  Dataset ds;
  ds.z = Matrix(t.rows.size(), nz);
  ds.y = Matrix(t.rows.size(), ny);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t j = 0; j < nz; ++j) ds.z(i, j) = parse_double(t.rows[i][t.column("z_" + std::to_string(j + 1))], csv_path);
    for (std::size_t j = 0; j < ny; ++j) ds.y(i, j) = parse_double(t.rows[i][t.column("y_" + std::to_string(j + 1))], csv_path);
  }
  const fs::path side = dataset_sidecar(csv_path);
  if (fs::exists(side)) {
    const json meta = json::parse(read_text(side));
    ds.type = meta.value("type", 1);
    ds.seed = meta.value("seed", std::uint64_t{0});
    ds.trajectories = meta.value("trajectories", 0);
  }
  return ds;
}

// ---- back-offs ---------------------------------------------------------

void save_backoff_table(const fs::path& csv_path, const BackoffTable& table) {
  std::string out;
  append_row(out, {"t", "j", "b", "b_tilde"});
  for (std::size_t t = 0; t < table.b.rows(); ++t)
    for (std::size_t j = 0; j < table.b.cols(); ++j) {
      const double bt = table.b_tilde.empty() ? 0.0 : table.b_tilde(t, j);
      append_row(out, {std::to_string(t), std::to_string(j + 1), format_double(table.b(t, j)), format_double(bt)});
    }
  write_text(csv_path, out);
}

BackoffTable load_backoff_table(const fs::path& csv_path) {
  const CsvTable t = read_csv(csv_path);
  const std::size_t ct = t.column("t"), cj = t.column("j"), cb = t.column("b"), cbt = t.column("b_tilde");
  std::size_t rows = 0, cols = 0;
  for (const auto& r : t.rows) {
    rows = std::max(rows, static_cast<std::size_t>(parse_double(r[ct], csv_path)) + 1);
    cols = std::max(cols, static_cast<std::size_t>(parse_double(r[cj], csv_path)));
  }
  if (rows * cols != t.rows.size()) throw IoError(csv_path.string() + ": incomplete back-off table");
  BackoffTable table{Matrix(rows, cols), Matrix(rows, cols), 0.0};
  for (const auto& r : t.rows) {
    const auto i = static_cast<std::size_t>(parse_double(r[ct], csv_path));
    const auto j = static_cast<std::size_t>(parse_double(r[cj], csv_path)) - 1;
    table.b(i, j) = parse_double(r[cb], csv_path);
    table.b_tilde(i, j) = parse_double(r[cbt], csv_path);
  }
  // gamma = b / b_tilde wherever b_tilde is nonzero
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      if (table.b_tilde(i, j) > 0.0) {
        table.gamma = table.b(i, j) / table.b_tilde(i, j);
        return table;
      }
  return table;
}

json backoff_report_json(const BackoffRunReport& r) {
  json iterations = json::array();
  for (const BisectionRecord& rec : r.records)
    iterations.push_back({{"iteration", rec.iteration},
                          {"gamma", rec.gamma},
                          {"beta_hat", rec.beta_hat},
                          {"beta_lb", rec.beta_lb},
                          {"h", rec.h},
                          {"bracket", {rec.bracket_lower, rec.bracket_upper}},
                          {"replaced", rec.replaced}});
  const BackoffSettings& s = r.settings;
  return {{"gamma", r.table.gamma},
          {"epsilon", s.epsilon},
          {"alpha", s.alpha},
          {"delta", s.delta},
          {"S", s.samples},
          {"n_b", s.iterations},
          {"beta_hat", r.beta_hat},
          {"beta_lb", r.beta_lb},
          {"h", r.h},
          {"converged", r.converged},
          {"no_sign_change", r.no_sign_change},
          {"gamma_upper", s.gamma_upper},
          {"frozen_seeds", s.frozen_seeds},
          {"seed", s.seed},
          {"iterations", iterations}};
}

void save_bisection_records(const fs::path& csv_path, const std::vector<BisectionRecord>& records) {
  std::string out;
  append_row(out, {"iteration", "gamma", "beta_hat", "beta_lb", "h", "bracket_lower", "bracket_upper", "replaced"});
  for (const auto& r : records)
    append_row(out, {std::to_string(r.iteration), format_double(r.gamma), format_double(r.beta_hat),
                     format_double(r.beta_lb), format_double(r.h), format_double(r.bracket_lower),
                     format_double(r.bracket_upper), std::to_string(r.replaced)});
  write_text(csv_path, out);
}

void save_mc_trajectories(const fs::path& csv_path, const BatchResult& batch) {
  std::string out;
  std::size_t nx = 0, nu = 0;
  if (!batch.outcomes.empty()) {
    nx = batch.outcomes.front().trajectory.states.cols();
    nu = batch.outcomes.front().trajectory.controls.cols();
  }
  std::vector<std::string> header{"sample_id", "t"};
  for (auto& h : numbered("x_", nx)) header.push_back(h);
  for (auto& h : numbered("u_", nu)) header.push_back(h);
  append_row(out, header);
  for (const SampleOutcome& o : batch.outcomes) {
    const Trajectory& tr = o.trajectory;
    for (std::size_t t = 0; t < tr.states.rows(); ++t) {
      std::vector<std::string> cells{std::to_string(tr.sample_id), std::to_string(t)};
      for (double v : tr.states.row(t)) cells.push_back(format_double(v));
      for (std::size_t d = 0; d < nu; ++d)
        cells.push_back(t < tr.controls.rows() ? format_double(tr.controls(t, d)) : std::string());
      append_row(out, cells);
    }
  }
  write_text(csv_path, out);
}

// ---- closed-loop episodes ---------------------------------------------

void save_episodes(const fs::path& csv_path, const std::vector<Episode>& episodes) {
  std::size_t nx = 0, nu = 0, ng = 0;
  for (const Episode& e : episodes) {
    nx = std::max(nx, e.trajectory.states.cols());
    nu = std::max(nu, e.trajectory.controls.cols());
    ng = std::max(ng, e.constraints.cols());
  }
  std::string out;
  std::vector<std::string> header{"run_id", "t"};
  for (auto& h : numbered("x_", nx)) header.push_back(h);
  for (auto& h : numbered("u_", nu)) header.push_back(h);
  for (auto& h : numbered("g_", ng)) header.push_back(h);
  append_row(out, header);
  for (const Episode& e : episodes) {
    const Trajectory& tr = e.trajectory;
    for (std::size_t t = 0; t < tr.states.rows(); ++t) {
      std::vector<std::string> cells{std::to_string(e.run_id), std::to_string(t)};
      for (double v : tr.states.row(t)) cells.push_back(format_double(v));
      for (std::size_t d = 0; d < nu; ++d)
        cells.push_back(t < tr.controls.rows() ? format_double(tr.controls(t, d)) : std::string());
      for (std::size_t j = 0; j < ng; ++j)
        cells.push_back(t < e.constraints.rows() ? format_double(e.constraints(t, j)) : std::string());
      append_row(out, cells);
    }
  }
  write_text(csv_path, out);
}

void save_diagnostics(const fs::path& csv_path, const std::vector<Episode>& episodes) {
  std::string out;
  append_row(out, {"run_id", "t", "iterations", "objective", "max_violation", "wall_time"});
  for (const Episode& e : episodes)
    for (const SolveDiagnostics& d : e.diagnostics)
      append_row(out, {std::to_string(e.run_id), std::to_string(d.t), std::to_string(d.iterations),
                       format_double(d.objective), format_double(d.max_violation), format_double(d.wall_seconds)});
  write_text(csv_path, out);
}

// ---- summary -----------------------------------------------------------

const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> cols{"variant",           "beta_hat",        "beta_lb",
                                             "mean_backoff_g1g3", "mean_backoff_g2", "violation_fraction",
                                             "mean_objective",    "std_objective"};
  return cols;
}

void save_summary(const fs::path& csv_path, const std::vector<SummaryRow>& rows) {
  std::string out;
  append_row(out, summary_columns());
  for (const SummaryRow& r : rows)
    append_row(out, {r.variant, format_double(r.beta_hat), format_double(r.beta_lb),
                     format_double(r.mean_backoff_g1g3), format_double(r.mean_backoff_g2),
                     format_double(r.violation_fraction), format_double(r.mean_objective),
                     format_double(r.std_objective)});
  write_text(csv_path, out);
}

std::vector<SummaryRow> load_summary(const fs::path& csv_path) {
  const CsvTable t = read_csv(csv_path);
  if (t.header != summary_columns()) throw IoError(csv_path.string() + ": unexpected summary columns");
  std::vector<SummaryRow> rows;
  for (const auto& r : t.rows)
    rows.push_back({r[0], parse_double(r[1], csv_path), parse_double(r[2], csv_path), parse_double(r[3], csv_path),
                    parse_double(r[4], csv_path), parse_double(r[5], csv_path), parse_double(r[6], csv_path),
                    parse_double(r[7], csv_path)});
  return rows;
}

}  // namespace gpmpc
