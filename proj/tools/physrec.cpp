// physrec command-line entry point.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "physrec/datagen.hpp"
#include "physrec/experiment.hpp"
#include "physrec/metrics.hpp"
#include "physrec/neuralmr.hpp"

namespace fs = std::filesystem;
using namespace physrec;
using nlohmann::json;

namespace {

ReportFormat format_for(const std::string& path) {
  return fs::path(path).extension() == ".json" ? ReportFormat::json : ReportFormat::csv;
}

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

int cmd_generate(const std::string& system, const std::string& preset, std::uint64_t seed, const std::string& out,
                 const GenOptions& opts) {
  const auto [spec, theta] = resolve_system(system);
  const Dataset ds = generate_benchmark_data(spec, theta, preset, seed, opts);
  write_dataset(ds, out);
  std::cout << "wrote " << ds.traces.size() << " traces to " << out << "\n";
  return 0;
}

int cmd_recover(const std::string& arch, const std::string& data, const std::string& config, const std::string& out) {
  const Dataset ds = read_dataset(data);
  ExperimentConfig cfg;
  cfg.system = ds.spec.name;
  if (!config.empty()) cfg = load_experiment(config, cfg);
  const SensingMask mask =
      cfg.mask.empty() ? SensingMask::all(ds.spec.n)
                       : SensingMask(Eigen::Map<const Eigen::VectorXi>(cfg.mask.data(),
                                                                       static_cast<Eigen::Index>(cfg.mask.size())));
  const Problem problem(ds.spec, mask, ds.theta_true);
  const int factor = cfg.sampling == "list" ? cfg.sampling_factors.front()
                     : cfg.sampling == "nyquist10" ? std::max(1, nyquist_factor(ds) / 10)
                                                   : nyquist_factor(ds);
  std::vector<Trace> traces;
  for (const Trace& tr : ds.traces) traces.push_back(observe(resample(tr, factor, cfg.k_window), mask));
  TrainConfig tc = cfg.train;
  tc.k_window = cfg.k_window;
  if (!cfg.seeds.empty()) tc.seed = cfg.seeds.front();

  json j = {{"arch", arch}, {"system", ds.spec.name}, {"sampling_factor", factor}, {"coeff_names", ds.spec.coeff_names()}};
  if (arch == "sindyc") {
    const SindyFit fit = fit_sindy_windows(traces, problem, ds.theta_true, cfg.sindy);
    j["theta_est"] = to_vec(fit.theta);
    j["spurious_terms"] = fit.spurious_labels;
    j["rmse_theta"] = fit.rmse_theta;
  } else {
    const RecoveryResult r = recover(traces, problem, arch_from_string(arch), tc, ds.theta_true);
    j["theta_est"] = to_vec(r.theta_est);
    j["shifts"] = to_vec(r.shifts);
    j["loss_history"] = r.loss_history;
    j["rmse_y"] = r.rmse_y;
    j["rmse_theta"] = *r.rmse_theta;
  }
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write '" + out + "'");
  f << j.dump(1) << "\n";
  std::cout << "rmse_theta " << j["rmse_theta"].get<double>() << "\n";
  return 0;
}

int cmd_sweep(const std::string& name, const std::string& config, const std::string& out, bool runtime) {
  ExperimentConfig cfg = default_experiment(name);
  if (!config.empty()) cfg = load_experiment(config, cfg);
  const std::string path = out.empty() ? (cfg.output.empty() ? name + ".csv" : cfg.output) : out;
  const auto rows = run_experiment(cfg);
  emit_report(rows, format_for(path), path, runtime);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  std::cout << rows.size() << " rows (" << failed << " not ok) written to " << path << "\n";
  return 0;
}

int cmd_nyquist(const std::string& data) {
  if (fs::is_directory(data)) {
    const Dataset ds = read_dataset(data);
    double f = 0.0;
    for (const Trace& tr : ds.traces) f = std::max(f, nyquist_rate(tr));
    std::cout << "nyquist_rate " << format_double(f) << "\nfactor " << nyquist_factor(ds) << "\n";
    return 0;
  }
  const CsvTable table = read_csv_table(data);
  const Trace tr = read_trace_csv(data, static_cast<int>(table.header.size()) - 1);
  std::cout << "nyquist_rate " << format_double(nyquist_rate(tr)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physical model recovery from sampled traces"};
  app.require_subcommand(1);

  std::string system, preset, out, data, config, arch, experiment;
  std::uint64_t seed = 0;
  GenOptions gen;
  bool runtime = false;

  auto* g = app.add_subcommand("generate", "Simulate a benchmark dataset");
  g->add_option("--system", system, "Built-in system name or JSON path")->required();
  g->add_option("--preset", preset, "Generation preset")->required();
  g->add_option("--seed", seed)->required();
  g->add_option("--out", out, "Output directory")->required();
  g->add_option("--traces", gen.traces);
  g->add_option("--samples", gen.samples);
  g->add_option("--shift", gen.shift_samples, "Injected input shift in samples, per external channel");
  g->add_flag("!--no-perturbation", gen.perturbation, "Disable input perturbation");

  auto* r = app.add_subcommand("recover", "Recover coefficients from a generated dataset");
  r->add_option("--arch", arch)->required()->check(CLI::IsMember({"ltc", "ctrnn", "node", "sindyc"}));
  r->add_option("--data", data, "Dataset directory")->required();
  r->add_option("--config", config, "Experiment config (JSON)");
  r->add_option("--out", out, "Result JSON")->required();

  auto* s = app.add_subcommand("sweep", "Run a named experiment sweep");
  s->add_option("--experiment", experiment)->required()->check(CLI::IsMember({"c1", "c2", "c5", "aid", "eeg"}));
  s->add_option("--config", config, "Overrides (JSON)");
  s->add_option("--out", out, "Report path (.csv or .json)");
  s->add_flag("--runtime", runtime, "Include wall-clock seconds per row");

  auto* n = app.add_subcommand("nyquist", "Nyquist rate of a trace CSV or dataset directory");
  n->add_option("--data", data)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*g) return cmd_generate(system, preset, seed, out, gen);
    if (*r) return cmd_recover(arch, data, config, out);
    if (*s) return cmd_sweep(experiment, config, out, runtime);
    if (*n) return cmd_nyquist(data);
  } catch (const std::exception& e) {
    std::cerr << "physrec: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
