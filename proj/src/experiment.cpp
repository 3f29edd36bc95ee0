#include "physrec/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "physrec/metrics.hpp"

namespace physrec {

using jsonio::json;

// Config ---------------------------------------------------------------------

ExperimentConfig default_experiment(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "c1") {
    c.architectures = {"ltc", "ctrnn", "node", "sindyc"};
    c.sampling = "auto";
    c.seeds = {1, 2, 3};
    c.train.horizon_start = 10;
    c.train.horizon_epochs = 100;
  } else if (name == "c2") {
    c.architectures = {"ltc", "ctrnn", "node", "sindyc"};
    c.sampling = "nyquist";
    c.perturbation = {true, false};
    c.seeds = {1, 2, 3};
    c.train.horizon_start = 10;
    c.train.horizon_epochs = 100;
  } else if (name == "c5") {
    c.system = "bergman_aid";
    c.preset = "aid";
    c.mask = {0, 0, 1};
    c.injected_shifts = {{0.0}, {3.0}, {10.0}, {20.0}};
    c.shift_search = {false, true};
    c.train.epochs = 400;
    c.train.restarts = 3;
  } else if (name == "aid") {
    c.system = "bergman_aid";
    c.preset = "aid";
    c.mask = {0, 0, 1};
    c.architectures = {"ltc", "sindyc"};
    c.train.epochs = 400;
    c.train.restarts = 3;
  } else if (name == "eeg") {
    c.system = "eeg_dvdp";
    c.preset = "eeg_wiener";
    c.architectures = {"sindyc", "ltc"};
    c.sindy.degree = 3;
  } else {
    throw LookupError("unknown experiment '" + name + "'; supported: c1 c2 c5 aid eeg");
  }
  return c;
}

namespace {

template <typename T>
std::vector<T> one_or_many(const json& j, const std::string& path) {
  try {
    if (j.is_array()) return j.get<std::vector<T>>();
    return {j.get<T>()};
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& known, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ParseError(path + "." + key + ": unknown field");
}

}  // namespace

ExperimentConfig experiment_from_json(const std::string& text, ExperimentConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
  check_keys(j,
             {"name", "system", "preset", "architectures", "architecture", "sampling_factors", "mask", "perturbation",
              "injected_shifts", "shift_search", "seeds", "seed", "generation", "train", "sindy", "k_window", "output"},
             "$");
  try {
    if (j.contains("name")) c.name = j["name"].get<std::string>();
    if (j.contains("system")) c.system = j["system"].get<std::string>();
    if (j.contains("preset")) c.preset = j["preset"].get<std::string>();
    if (j.contains("architectures")) c.architectures = one_or_many<std::string>(j["architectures"], "$.architectures");
    if (j.contains("architecture")) c.architectures = one_or_many<std::string>(j["architecture"], "$.architecture");
    if (j.contains("sampling_factors")) {
      const json& s = j["sampling_factors"];
      if (s.is_string()) {
        c.sampling = s.get<std::string>();
        if (c.sampling != "auto" && c.sampling != "nyquist" && c.sampling != "nyquist10")
          throw ParseError("$.sampling_factors: expected a list, \"auto\", \"nyquist\" or \"nyquist10\"");
      } else {
        c.sampling = "list";
        c.sampling_factors = one_or_many<int>(s, "$.sampling_factors");
      }
    }
    if (j.contains("mask")) c.mask = j["mask"].get<std::vector<int>>();
    if (j.contains("perturbation")) c.perturbation = one_or_many<bool>(j["perturbation"], "$.perturbation");
    if (j.contains("injected_shifts")) {
      c.injected_shifts.clear();
      for (const auto& e : j["injected_shifts"])
        c.injected_shifts.push_back(e.is_array() ? e.get<std::vector<double>>() : std::vector<double>{e.get<double>()});
    }
    if (j.contains("shift_search")) c.shift_search = one_or_many<bool>(j["shift_search"], "$.shift_search");
    if (j.contains("seeds")) c.seeds = one_or_many<std::uint64_t>(j["seeds"], "$.seeds");
    if (j.contains("seed")) c.seeds = {j["seed"].get<std::uint64_t>()};
    if (j.contains("generation")) {
      const json& g = j["generation"];
      check_keys(g, {"traces", "samples", "dt", "noise"}, "$.generation");
      if (g.contains("traces")) c.generation.traces = g["traces"].get<int>();
      if (g.contains("samples")) c.generation.samples = g["samples"].get<int>();
      if (g.contains("dt")) c.generation.dt = g["dt"].get<double>();
      if (g.contains("noise")) c.generation.noise = g["noise"].get<double>();
    }
    if (j.contains("train")) {
      json merged = jsonio::to_json(c.train);
      merged.merge_patch(j["train"]);
      c.train = jsonio::train_config_from_json(merged, "$.train");
    }
    if (j.contains("sindy")) {
      const json& s = j["sindy"];
      check_keys(s, {"degree", "trig", "control_cross", "lambda", "threshold", "iters"}, "$.sindy");
      if (s.contains("degree")) c.sindy.degree = s["degree"].get<int>();
      if (s.contains("trig")) c.sindy.trig = s["trig"].get<bool>();
      if (s.contains("control_cross")) c.sindy.control_cross = s["control_cross"].get<bool>();
      if (s.contains("lambda")) c.sindy.lambda = s["lambda"].get<double>();
      if (s.contains("threshold")) c.sindy.threshold = s["threshold"].get<double>();
      if (s.contains("iters")) c.sindy.iters = s["iters"].get<int>();
    }
    if (j.contains("k_window")) c.k_window = j["k_window"].get<int>();
    if (j.contains("output")) c.output = j["output"].get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
  for (const auto& a : c.architectures)
    if (a != "sindyc") arch_from_string(a);
  if (c.k_window < 2) throw ParseError("$.k_window: must be >= 2");
  for (int f : c.sampling_factors)
    if (f < 1) throw ParseError("$.sampling_factors: factors must be >= 1");
  return c;
}

ExperimentConfig load_experiment(const std::string& path, ExperimentConfig base) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read experiment config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return experiment_from_json(ss.str(), std::move(base));
}

std::string experiment_to_json(const ExperimentConfig& c) {
  json gen = json::object();
  if (c.generation.traces) gen["traces"] = *c.generation.traces;
  if (c.generation.samples) gen["samples"] = *c.generation.samples;
  if (c.generation.dt) gen["dt"] = *c.generation.dt;
  if (c.generation.noise) gen["noise"] = *c.generation.noise;
  json j = {{"name", c.name},
            {"system", c.system},
            {"preset", c.preset},
            {"architectures", c.architectures},
            {"mask", c.mask},
            {"perturbation", c.perturbation},
            {"injected_shifts", c.injected_shifts},
            {"shift_search", c.shift_search},
            {"seeds", c.seeds},
            {"generation", gen},
            {"train", jsonio::to_json(c.train)},
            {"sindy",
             {{"degree", c.sindy.degree},
              {"trig", c.sindy.trig},
              {"control_cross", c.sindy.control_cross},
              {"lambda", c.sindy.lambda},
              {"threshold", c.sindy.threshold},
              {"iters", c.sindy.iters}}},
            {"k_window", c.k_window},
            {"output", c.output}};
  if (c.sampling == "list")
    j["sampling_factors"] = c.sampling_factors;
  else
    j["sampling_factors"] = c.sampling;
  return j.dump(1);
}

// Running --------------------------------------------------------------------

int nyquist_factor(const Dataset& ds) {
  if (ds.traces.empty()) throw ContractViolation("nyquist_factor: empty dataset");
  double f = 0.0;
  for (const Trace& tr : ds.traces) f = std::max(f, nyquist_rate(tr));
  const double fs = 1.0 / ds.traces.front().dt;
  if (!(f > 0.0)) return 1;
  return std::max(1, static_cast<int>(std::floor(fs / f + 1e-9)));
}

namespace {

std::string fnv_digest(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<int> resolve_factors(const ExperimentConfig& cfg, const Dataset& probe) {
  if (cfg.sampling == "list") return cfg.sampling_factors;
  const int fn = nyquist_factor(probe);
  if (cfg.sampling == "nyquist") return {fn};
  if (cfg.sampling == "nyquist10") return {std::max(1, fn / 10)};
  std::vector<int> out;
  for (int i = 0; i < 4; ++i) {
    const int f = static_cast<int>(std::lround(std::pow(static_cast<double>(fn), i / 3.0)));
    if (out.empty() || out.back() != f) out.push_back(f);
  }
  return out;
}

}  // namespace

SindyFit fit_sindy_windows(const std::vector<Trace>& windows, const Problem& pr, const Vector& truth,
                           const SindyOptions& o) {
  const SystemSpec& spec = pr.spec;
  const FunctionLibrary lib =
      make_library(spec.n, spec.m, o.degree, o.trig, o.control_cross, spec.state_names, spec.input_names);
  std::vector<Matrix> As, Ds;
  Eigen::Index rows = 0;
  for (const Trace& tr : windows) {
    if (tr.x.size() == 0) throw ContractViolation("sindyc needs the full state of every window");
    As.push_back(build_library(lib, tr.x, tr.u));
    Ds.push_back(estimate_derivatives(tr.x, tr.dt).transpose());
    rows += As.back().rows();
  }
  Matrix A(rows, lib.size()), D(rows, spec.n);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < As.size(); ++i) {
    A.middleRows(r, As[i].rows()) = As[i];
    D.middleRows(r, Ds[i].rows()) = Ds[i];
    r += As[i].rows();
  }
  SparseModel model;
  model.labels = lib.labels();
  model.threshold = o.threshold;
  model.Xi = Matrix::Zero(lib.size(), spec.n);
  for (int s = 0; s < spec.n; ++s) model.Xi.col(s) = stridge(A, D.col(s), o.lambda, o.threshold, o.iters);
  const ThetaMapping m = map_to_theta(model, lib, spec, pr.fixed_theta);
  Vector theta = m.theta;
  for (int i = 0; i < spec.p(); ++i) {
    const Sign sg = spec.coeffs[static_cast<std::size_t>(i)].sign;
    if (sg == Sign::nonneg) theta[i] = std::max(theta[i], 0.0);
    if (sg == Sign::nonpos) theta[i] = std::min(theta[i], 0.0);
  }
  return {theta, sindy_rmse_theta(m, truth), m.spurious_labels};
}

namespace {

double test_rmse_y(const BatchSet& set, const Problem& pr, const Vector& theta, const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.shift_search = false;
  const Vector d = Vector::Zero(static_cast<Eigen::Index>(pr.spec.external_inputs.size()));
  double total = 0.0;
  for (int id : set.test) {
    const Trace& tr = set.instances[static_cast<std::size_t>(id)];
    try {
      total += rmse_y(reconstruct(pr, theta, d, tr, c).y, tr.y);
    } catch (const DivergenceError&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return total / static_cast<double>(set.test.size());
}

}  // namespace

std::vector<ReportRow> run_experiment(const ExperimentConfig& cfg) {
  std::vector<ReportRow> rows;
  if (cfg.architectures.empty() || cfg.seeds.empty() || cfg.perturbation.empty() || cfg.injected_shifts.empty() ||
      cfg.shift_search.empty() || (cfg.sampling == "list" && cfg.sampling_factors.empty()))
    return rows;
  const auto [spec, theta_true] = resolve_system(cfg.system);
  const SensingMask mask = cfg.mask.empty()
                               ? SensingMask::all(spec.n)
                               : SensingMask(Eigen::Map<const Eigen::VectorXi>(cfg.mask.data(),
                                                                               static_cast<Eigen::Index>(cfg.mask.size())));
  if (mask.size() != spec.n) throw ContractViolation("experiment: mask length differs from the system's state count");
  const Problem problem(spec, mask, theta_true);
  const std::string base_digest = experiment_to_json(cfg);
  const auto q = spec.external_inputs.size();

  std::map<std::tuple<std::uint64_t, bool, std::vector<double>>, Dataset> cache;
  auto dataset = [&](std::uint64_t seed, bool pert, const std::vector<double>& shift) -> const Dataset& {
    auto key = std::make_tuple(seed, pert, shift);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    GenOptions g = cfg.generation;
    g.perturbation = pert;
    g.shift_samples = shift;
    return cache.emplace(key, generate_benchmark_data(spec, theta_true, cfg.preset, seed, g)).first->second;
  };
  const std::vector<int> factors = resolve_factors(cfg, dataset(cfg.seeds.front(), true, std::vector<double>(q, 0.0)));

  for (int factor : factors)
    for (bool pert : cfg.perturbation)
      for (const auto& shift_in : cfg.injected_shifts)
        for (bool search : cfg.shift_search)
          for (const auto& arch : cfg.architectures)
            for (std::uint64_t seed : cfg.seeds) {
              const std::vector<double> shift = shift_in.empty() ? std::vector<double>(q, 0.0) : shift_in;
              ReportRow row;
              row.experiment = cfg.name;
              row.system = spec.name;
              row.arch = arch;
              row.seed = seed;
              row.sampling_factor = factor;
              row.perturbation = pert;
              row.injected_shift = shift;
              row.shift_search = search;
              row.coeff_names = spec.coeff_names();
              std::ostringstream point;
              point << factor << '|' << pert << '|' << search << '|' << arch << '|' << seed;
              for (double s : shift) point << '|' << s;
              row.digest = fnv_digest(base_digest + point.str());
              const auto t_start = std::chrono::steady_clock::now();
              try {
                const Dataset& ds = dataset(seed, pert, shift);
                std::vector<Trace> traces;
                for (const Trace& tr : ds.traces) traces.push_back(observe(resample(tr, factor, cfg.k_window), mask));
                row.dt = traces.front().dt;
                TrainConfig tc = cfg.train;
                tc.seed = seed;
                tc.k_window = cfg.k_window;
                tc.shift_search = search;
                Vector est;
                if (arch == "sindyc") {
                  const BatchSet set = make_batches(traces, tc.batch_size, tc.k_window, tc.split_ratio, seed);
                  std::vector<Trace> train;
                  for (int id : set.train) train.push_back(set.instances[static_cast<std::size_t>(id)]);
                  const SindyFit fit = fit_sindy_windows(train, problem, theta_true, cfg.sindy);
                  est = fit.theta;
                  row.rmse_theta = fit.rmse_theta;
                  row.rmse_y = test_rmse_y(set, problem, est, tc);
                  row.shifts.assign(q, 0.0);
                } else {
                  const RecoveryResult r = recover(traces, problem, arch_from_string(arch), tc, theta_true);
                  est = r.theta_est;
                  row.rmse_theta = *r.rmse_theta;
                  row.rmse_y = r.rmse_y;
                  row.shifts.assign(r.shifts.data(), r.shifts.data() + r.shifts.size());
                }
                for (int i = 0; i < spec.p(); ++i) row.coeff_errors.push_back(est[i] - theta_true[i]);
                if (!std::isfinite(row.rmse_y) || !std::isfinite(row.rmse_theta)) row.status = "diverged";
              } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
                row.rmse_theta = std::numeric_limits<double>::quiet_NaN();
                row.rmse_y = std::numeric_limits<double>::quiet_NaN();
              }
              row.runtime_s =
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
              rows.push_back(std::move(row));
            }

  // Degradation against the unshifted, search-free row of the same point.
  for (ReportRow& r : rows) {
    const bool shifted = std::any_of(r.injected_shift.begin(), r.injected_shift.end(), [](double s) { return s != 0.0; });
    if (!shifted) continue;
    for (const ReportRow& b : rows) {
      const bool base_shifted =
          std::any_of(b.injected_shift.begin(), b.injected_shift.end(), [](double s) { return s != 0.0; });
      if (base_shifted || b.shift_search || b.arch != r.arch || b.seed != r.seed ||
          b.sampling_factor != r.sampling_factor || b.perturbation != r.perturbation || b.status != "ok")
        continue;
      if (r.status == "ok" && b.rmse_theta > 0.0) r.degradation_theta = degradation_pct(r.rmse_theta, b.rmse_theta);
      if (r.status == "ok" && b.rmse_y > 0.0) r.degradation_y = degradation_pct(r.rmse_y, b.rmse_y);
      break;
    }
  }
  return rows;
}

}  // namespace physrec
