#ifndef PHYSREC_DATAGEN_HPP
#define PHYSREC_DATAGEN_HPP

// Benchmark corpora: simulated traces with their ground truth.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "physrec/dynamics.hpp"
#include "physrec/signal.hpp"

namespace physrec {

/// Overrides for a preset's defaults.
struct GenOptions {
  std::optional<int> traces;
  std::optional<int> samples;
  std::optional<double> dt;
  std::optional<double> noise;  ///< measurement noise standard deviation
  bool perturbation = true;
  /// Recorded external inputs lead the true ones by this many samples (one entry per external channel).
  std::vector<double> shift_samples;
};

struct Dataset {
  std::string preset;
  std::uint64_t seed = 0;
  SystemSpec spec;
  Vector theta_true;
  /// Each trace carries the measured full state in `x` and all of it in `y`; see `observe`.
  std::vector<Trace> traces;
  /// True external-input events per trace (event presets only).
  std::vector<EventList> events;
  Vector injected_shift;
  bool perturbation = true;
  double noise = 0.0;
};

std::vector<std::string> preset_names();

/// Simulates the preset on `spec`. Throws LookupError for an unknown preset, ContractViolation when the
/// preset does not fit the system, and NumericalFailure naming the trace if a simulation diverges.
Dataset generate_benchmark_data(const SystemSpec& spec, const Vector& theta, const std::string& preset,
                                std::uint64_t seed, const GenOptions& opts = {});

/// Restricts y to the masked channels of x.
Trace observe(const Trace& tr, const SensingMask& mask);

/// First `k` samples at every `factor`-th base sample.
Trace resample(const Trace& tr, int factor, int k);

/// Directory layout: meta.json, trace_NNN.csv (t, states, inputs), events_NNN.csv for event presets.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

}  // namespace physrec

#endif  // PHYSREC_DATAGEN_HPP
