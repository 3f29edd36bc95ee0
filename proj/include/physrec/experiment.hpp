#ifndef PHYSREC_EXPERIMENT_HPP
#define PHYSREC_EXPERIMENT_HPP

// Experiment sweeps and their reports.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "physrec/datagen.hpp"
#include "physrec/neuralmr.hpp"
#include "physrec/sindy.hpp"

namespace physrec {

struct SindyOptions {
  int degree = 2;
  bool trig = false;
  bool control_cross = true;
  double lambda = 1e-6;
  double threshold = 0.03;  ///< minimum share of the target per column
  int iters = 10;
};

struct ExperimentConfig {
  std::string name = "custom";
  std::string system = "lotka_volterra";  ///< built-in name or JSON path
  std::string preset = "lotka_volterra";
  std::vector<std::string> architectures = {"ltc"};  ///< ltc, ctrnn, node, sindyc
  /// Decimation factors relative to the generated rate; "nyquist" and "auto" are resolved from the data.
  std::vector<int> sampling_factors = {1};
  /// "list", "nyquist" (one point at the Nyquist rate), "nyquist10" (ten times the Nyquist rate) or
  /// "auto" (four geometric points from the base rate down to the Nyquist rate).
  std::string sampling = "list";
  /// Observed states as a 0/1 diagonal; empty means all observed.
  std::vector<int> mask;
  std::vector<bool> perturbation = {true};
  /// Injected shift per sweep point; each entry holds one value per external input.
  std::vector<std::vector<double>> injected_shifts = {{}};
  std::vector<bool> shift_search = {false};
  std::vector<std::uint64_t> seeds = {1};
  GenOptions generation;
  TrainConfig train;
  SindyOptions sindy;
  int k_window = 200;
  std::string output;
};

struct SindyFit {
  Vector theta;  ///< sign-projected
  double rmse_theta = 0.0;  ///< spurious terms count against truth 0
  std::vector<std::string> spurious_labels;
};

/// One STRidge regression over all windows stacked (full state in each window's x).
SindyFit fit_sindy_windows(const std::vector<Trace>& windows, const Problem& problem, const Vector& truth,
                           const SindyOptions& opts);

/// Defaults for the named sweeps c1, c2, c5, aid and eeg.
ExperimentConfig default_experiment(const std::string& name);
/// Overlays a JSON config on `base`. Unknown keys raise ParseError with their path.
ExperimentConfig experiment_from_json(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_experiment(const std::string& path, ExperimentConfig base = {});
std::string experiment_to_json(const ExperimentConfig& cfg);

struct ReportRow {
  std::string digest;
  std::string experiment;
  std::string system;
  std::string arch;
  std::uint64_t seed = 0;
  int sampling_factor = 1;
  double dt = 0.0;
  bool perturbation = true;
  std::vector<double> injected_shift;
  bool shift_search = false;
  double rmse_theta = 0.0;
  double rmse_y = 0.0;
  /// Percent change against the matching unshifted, search-free row (when one exists).
  std::optional<double> degradation_theta;
  std::optional<double> degradation_y;
  std::vector<std::string> coeff_names;
  std::vector<double> coeff_errors;  ///< estimate minus truth
  std::vector<double> shifts;        ///< learned, samples
  double runtime_s = 0.0;
  std::string status = "ok";

  bool operator==(const ReportRow&) const = default;
};

/// Runs every sweep point; failures are recorded in the row's status.
std::vector<ReportRow> run_experiment(const ExperimentConfig& cfg);

/// Nyquist decimation factor of a dataset: floor(base rate / max per-trace Nyquist rate), at least 1.
int nyquist_factor(const Dataset& ds);

enum class ReportFormat { csv, json };
ReportFormat report_format_from_string(const std::string& s);

/// Runtime is omitted unless `include_runtime`, so repeated runs produce identical files.
std::string format_report(const std::vector<ReportRow>& rows, ReportFormat fmt, bool include_runtime = false);
void emit_report(const std::vector<ReportRow>& rows, ReportFormat fmt, const std::string& path,
                 bool include_runtime = false);
std::vector<ReportRow> parse_report_json(const std::string& text);

}  // namespace physrec

#endif  // PHYSREC_EXPERIMENT_HPP
