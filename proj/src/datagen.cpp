#include "physrec/datagen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "physrec/odesolve.hpp"
#include "physrec/rng.hpp"

namespace physrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PresetDefaults {
  int n = -1;  ///< required state dimension, -1 for any
  int m = -1;
  int traces;
  int samples;
  double dt;
  double noise;
};

PresetDefaults defaults_for(const std::string& preset) {
  if (preset == "scalar") return {1, 1, 64, 200, 0.05, 0.0};
  if (preset == "lotka_volterra") return {2, 1, 64, 6000, 0.1, 0.0};
  if (preset == "lorenz") return {3, 1, 16, 2000, 0.01, 0.0};
  if (preset == "aid") return {3, 2, 14, 200, 5.0, 0.05};
  if (preset == "eeg_sine" || preset == "eeg_wiener") return {4, 1, 16, 1000, 0.02, 0.0};
  std::string msg = "unknown preset '" + preset + "'; supported:";
  for (const auto& p : preset_names()) msg += " " + p;
  throw LookupError(msg);
}

bool is_external(const SystemSpec& spec, int ch) {
  for (int e : spec.external_inputs)
    if (e == ch) return true;
  return false;
}

double shift_of(const Dataset& ds, int ch) {
  for (std::size_t i = 0; i < ds.spec.external_inputs.size(); ++i)
    if (ds.spec.external_inputs[i] == ch) return ds.injected_shift[static_cast<Eigen::Index>(i)];
  return 0.0;
}

/// Input held by the simulator; finer than the recorded grid so smooth forcing stays smooth.
constexpr int kInputSub = 10;

/// Continuous forcing on the fine simulation grid, with the recorded copy evaluated `lead` seconds
/// ahead on external channels.
template <typename F>
void sample_forcing(const Dataset& ds, F f, int k, double dt, Matrix& u_fine, Matrix& u_rec) {
  const int kf = (k - 1) * kInputSub + 1;
  u_fine.resize(ds.spec.m, kf);
  u_rec.resize(ds.spec.m, k);
  for (int ch = 0; ch < ds.spec.m; ++ch) {
    const double lead = is_external(ds.spec, ch) ? shift_of(ds, ch) * dt : 0.0;
    for (int j = 0; j < kf; ++j) u_fine(ch, j) = f(ch, j * dt / kInputSub);
    for (int j = 0; j < k; ++j) u_rec(ch, j) = f(ch, j * dt + lead);
  }
}

/// Zero-order hold of a recorded-grid input onto the fine grid.
Matrix hold_fine(const Matrix& u) {
  const auto k = u.cols();
  Matrix out(u.rows(), (k - 1) * kInputSub + 1);
  for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) = u.col(j / kInputSub);
  return out;
}

}  // namespace

std::vector<std::string> preset_names() { return {"scalar", "lotka_volterra", "lorenz", "aid", "eeg_sine", "eeg_wiener"}; }

Dataset generate_benchmark_data(const SystemSpec& spec, const Vector& theta, const std::string& preset,
                                std::uint64_t seed, const GenOptions& opts) {
  validate(spec);
  validate_theta(spec, theta);
  const PresetDefaults def = defaults_for(preset);
  if ((def.n >= 0 && spec.n != def.n) || (def.m >= 0 && spec.m != def.m))
    throw ContractViolation("preset '" + preset + "' needs a system with n=" + std::to_string(def.n) +
                            " and m=" + std::to_string(def.m) + ", got n=" + std::to_string(spec.n) +
                            " and m=" + std::to_string(spec.m));
  Dataset ds;
  ds.preset = preset;
  ds.seed = seed;
  ds.spec = spec;
  ds.theta_true = theta;
  ds.perturbation = opts.perturbation;
  ds.noise = opts.noise.value_or(def.noise);
  const int n_traces = opts.traces.value_or(def.traces);
  const int k = opts.samples.value_or(def.samples);
  const double dt = opts.dt.value_or(def.dt);
  if (n_traces < 1 || k < 2 || !(dt > 0.0) || ds.noise < 0.0)
    throw ContractViolation("generate: need traces >= 1, samples >= 2, dt > 0 and noise >= 0");
  const auto q = static_cast<Eigen::Index>(spec.external_inputs.size());
  ds.injected_shift = Vector::Zero(q);
  if (!opts.shift_samples.empty()) {
    if (static_cast<Eigen::Index>(opts.shift_samples.size()) != q)
      throw ContractViolation("generate: expected " + std::to_string(q) + " shift value(s), one per external input");
    for (Eigen::Index i = 0; i < q; ++i) {
      ds.injected_shift[i] = opts.shift_samples[static_cast<std::size_t>(i)];
      if (ds.injected_shift[i] < 0.0) throw ContractViolation("generate: injected shifts must be >= 0");
    }
  }
  const Vector grid = uniform_grid(0.0, dt, k);
  const Vector rest = resting_state(spec, theta);
  const SolverConfig solver{Method::rk4, 10};
  const bool events = preset == "aid";

  for (int tr_i = 0; tr_i < n_traces; ++tr_i) {
    Rng rng(derive_seed(seed, 0x6e4, static_cast<std::uint64_t>(tr_i)));
    Vector x0 = rest;
    Matrix u_true, u_rec;  // u_true lives on the fine grid
    EventList ev_true;
    if (preset == "scalar") {
      x0[0] = rng.uniform(0.0, 2.0);
      const int hold = 20;
      std::vector<double> levels(static_cast<std::size_t>(k / hold + 2));
      for (double& l : levels) l = rng.uniform(0.0, 2.0);
      sample_forcing(
          ds,
          [&](int, double t) {
            if (!opts.perturbation) return 0.0;
            const auto idx = static_cast<std::size_t>(std::floor(t / dt + 1e-9)) / hold;
            return levels[std::min(idx, levels.size() - 1)];
          },
          k, dt, u_true, u_rec);
    } else if (preset == "lotka_volterra") {
      x0[1] = rng.uniform(10.0, 30.0);
      const double phase = rng.uniform(0.0, 20.0 * std::numbers::pi);
      sample_forcing(
          ds,
          [&](int, double t) {
            if (!opts.perturbation) return 0.0;
            const double s = 2.0 * std::sin(t + phase) + 2.0 * std::sin((t + phase) / 10.0);
            return s * s;
          },
          k, dt, u_true, u_rec);
    } else if (preset == "lorenz") {
      for (int i = 0; i < 3; ++i) x0[i] = rng.uniform(-10.0, 10.0);
      x0[2] += 25.0;
      const double w = rng.uniform(0.5, 2.0);
      sample_forcing(ds, [&](int, double t) { return opts.perturbation ? 5.0 * std::sin(w * t) : 0.0; }, k, dt, u_true,
                     u_rec);
    } else if (preset == "eeg_sine" || preset == "eeg_wiener") {
      for (int i = 0; i < 4; ++i) x0[i] = rng.uniform(-1.0, 1.0);
      if (preset == "eeg_sine") {
        const double w = rng.uniform(1.0, 3.0), ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
        sample_forcing(ds, [&](int, double t) { return opts.perturbation ? 2.0 * std::sin(w * t + ph) : 0.0; }, k, dt,
                       u_true, u_rec);
      } else {
        // Pre-sampled Wiener path, long enough for the recorded copy's lead.
        const int lead = static_cast<int>(std::ceil(q > 0 ? ds.injected_shift[0] : 0.0)) + 2;
        std::vector<double> w(static_cast<std::size_t>(k + lead), 0.0);
        for (std::size_t j = 1; j < w.size(); ++j) w[j] = w[j - 1] + 2.0 * std::sqrt(dt) * rng.normal();
        auto at = [&](double t) {
          const double pos = t / dt;
          const auto j = static_cast<std::size_t>(std::floor(pos + 1e-9));
          if (j + 1 >= w.size()) return w.back();
          const double a = pos - static_cast<double>(j);
          return (1.0 - a) * w[j] + a * w[j + 1];
        };
        sample_forcing(ds, [&](int, double t) { return opts.perturbation ? at(t) : 0.0; }, k, dt, u_true, u_rec);
      }
    } else if (events) {
      // Bergman AID: basal insulin holding i at i_b, one reported meal with a bolus at the report time.
      const int i_n = spec.coeff_index("n"), i_p4 = spec.coeff_index("p4"), i_ib = spec.coeff_index("i_b");
      const double basal = theta[i_n] * theta[i_ib] / theta[i_p4];
      u_true = Matrix::Zero(2, k);
      u_true.row(0).setConstant(basal);
      if (opts.perturbation) {
        const double t_report = rng.uniform(15.0, 400.0);
        const double carbs = rng.uniform(0.0, 28.0);
        const double bolus = rng.uniform(0.0, 40.0);
        const double t_meal = t_report + shift_of(ds, 1) * dt;
        if (t_meal > (k - 1) * dt) throw ContractViolation("generate: injected shift moves the meal past the trace end");
        ev_true.push_back({1, t_meal, carbs});
        // Magnitudes become rates so that a held sample delivers the full amount.
        u_true += encode_events({{0, t_report, bolus}}, 2, 0.0, dt, k) / dt;
        u_true += encode_events(ev_true, 2, 0.0, dt, k) / dt;
        u_rec = u_true;
        u_rec.row(1) = encode_events({{1, t_report, carbs}}, 2, 0.0, dt, k).row(1) / dt;
      } else {
        u_rec = u_true;
      }
      u_true = hold_fine(u_true);
    }
    Solution sol;
    try {
      sol = solve(spec, theta, x0, InputSignal(0.0, dt / kInputSub, u_true), grid, solver, SensingMask::all(spec.n));
    } catch (const DivergenceError& e) {
      throw NumericalFailure("generate: trace " + std::to_string(tr_i) + " diverged at t=" + std::to_string(e.time()));
    }
    Trace tr;
    tr.t0 = 0.0;
    tr.dt = dt;
    tr.x = sol.x;
    if (ds.noise > 0.0) {
      Rng nrng(derive_seed(seed, 0x9015e, static_cast<std::uint64_t>(tr_i)));
      for (Eigen::Index j = 0; j < tr.x.cols(); ++j)
        for (Eigen::Index i = 0; i < tr.x.rows(); ++i) tr.x(i, j) += ds.noise * nrng.normal();
    }
    tr.y = tr.x;
    tr.u = u_rec;
    tr.y_labels = spec.state_names;
    tr.u_labels = spec.input_names;
    ds.traces.push_back(std::move(tr));
    if (events) ds.events.push_back(ev_true);
  }
  return ds;
}

Trace observe(const Trace& tr, const SensingMask& mask) {
  const Matrix& x = tr.x.size() > 0 ? tr.x : tr.y;
  if (x.rows() != mask.size()) throw ContractViolation("observe: mask size differs from the state dimension");
  Trace out = tr;
  out.x = x;
  out.y.resize(mask.observed_count(), x.cols());
  out.y_labels.clear();
  for (int r = 0; r < mask.observed_count(); ++r) {
    const int s = mask.observed()[static_cast<std::size_t>(r)];
    out.y.row(r) = x.row(s);
    if (s < static_cast<int>(tr.y_labels.size())) out.y_labels.push_back(tr.y_labels[static_cast<std::size_t>(s)]);
  }
  return out;
}

Trace resample(const Trace& tr, int factor, int k) {
  if (factor < 1 || k < 2) throw ContractViolation("resample: need factor >= 1 and k >= 2");
  const int need = (k - 1) * factor + 1;
  if (tr.k() < need)
    throw ContractViolation("resample: trace has " + std::to_string(tr.k()) + " samples, " + std::to_string(need) +
                            " needed for k=" + std::to_string(k) + " at factor " + std::to_string(factor));
  return decimate(tr.window(0, need), factor);
}

// Files ----------------------------------------------------------------------

namespace {

std::string numbered(const std::string& stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu.csv", stem.c_str(), i);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  json meta = {{"format", "physrec-dataset"},
               {"preset", ds.preset},
               {"seed", ds.seed},
               {"system", json::parse(dump_system_config(ds.spec, ds.theta_true))},
               {"theta_true", std::vector<double>(ds.theta_true.data(), ds.theta_true.data() + ds.theta_true.size())},
               {"injected_shift",
                std::vector<double>(ds.injected_shift.data(), ds.injected_shift.data() + ds.injected_shift.size())},
               {"perturbation", ds.perturbation},
               {"noise", ds.noise},
               {"traces", ds.traces.size()},
               {"events", !ds.events.empty()}};
  {
    std::ofstream f(fs::path(dir) / "meta.json");
    if (!f) throw std::runtime_error("cannot write '" + (fs::path(dir) / "meta.json").string() + "'");
    f << meta.dump(1) << '\n';
  }
  for (std::size_t i = 0; i < ds.traces.size(); ++i) {
    Trace full = ds.traces[i];
    full.y = full.x;
    full.y_labels = ds.spec.state_names;
    write_trace_csv((fs::path(dir) / numbered("trace", i)).string(), full);
    if (!ds.events.empty()) write_events_csv((fs::path(dir) / numbered("events", i)).string(), ds.events[i]);
  }
}

Dataset read_dataset(const std::string& dir) {
  const fs::path meta_path = fs::path(dir) / "meta.json";
  std::ifstream f(meta_path);
  if (!f) throw std::runtime_error("cannot read '" + meta_path.string() + "'");
  json meta;
  try {
    meta = json::parse(f);
  } catch (const json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  if (meta.value("format", "") != "physrec-dataset") throw ParseError(meta_path.string() + ": not a physrec dataset");
  Dataset ds;
  try {
    ds.preset = meta.at("preset").get<std::string>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    auto [spec, theta] = parse_system_config(meta.at("system").dump());
    ds.spec = std::move(spec);
    const auto tt = meta.at("theta_true").get<std::vector<double>>();
    ds.theta_true = Eigen::Map<const Vector>(tt.data(), static_cast<Eigen::Index>(tt.size()));
    const auto sh = meta.at("injected_shift").get<std::vector<double>>();
    ds.injected_shift = Eigen::Map<const Vector>(sh.data(), static_cast<Eigen::Index>(sh.size()));
    ds.perturbation = meta.at("perturbation").get<bool>();
    ds.noise = meta.at("noise").get<double>();
    const auto count = meta.at("traces").get<std::size_t>();
    const bool events = meta.at("events").get<bool>();
    for (std::size_t i = 0; i < count; ++i) {
      Trace tr = read_trace_csv((fs::path(dir) / numbered("trace", i)).string(), ds.spec.n);
      tr.x = tr.y;
      ds.traces.push_back(std::move(tr));
      if (events) ds.events.push_back(read_events_csv((fs::path(dir) / numbered("events", i)).string()));
    }
  } catch (const json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace physrec
