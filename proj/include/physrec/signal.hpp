#ifndef PHYSREC_SIGNAL_HPP
#define PHYSREC_SIGNAL_HPP

#include <unsupported/Eigen/CXX11/Tensor>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "physrec/dynamics.hpp"
#include "physrec/odesolve.hpp"

namespace physrec {

/// Uniformly sampled observations and inputs.
struct Trace {
  double t0 = 0.0;
  double dt = 1.0;
  Matrix y;  ///< observed channels x k
  Matrix u;  ///< input channels x k (control plus encoded external events)
  std::vector<std::string> y_labels;
  std::vector<std::string> u_labels;
  /// Full state n x k when known (simulated data); empty otherwise.
  Matrix x;

  int k() const { return static_cast<int>(y.cols()); }
  int ny() const { return static_cast<int>(y.rows()); }
  int m() const { return static_cast<int>(u.rows()); }
  Vector times() const { return uniform_grid(t0, dt, k()); }
  InputSignal input_signal() const { return InputSignal(t0, dt, u); }
  /// Columns [start, start + len) as a new trace.
  Trace window(int start, int len) const;
};

/// dt > 0, k >= 2, shapes consistent, finite values. Throws ContractViolation.
void validate(const Trace& tr);

struct Event {
  int channel = 0;
  double t = 0.0;
  double magnitude = 0.0;

  bool operator==(const Event&) const = default;
};
using EventList = std::vector<Event>;

/// m x k array with each event's magnitude at its nearest grid index (coincident events add).
Matrix encode_events(const EventList& ev, int m, double t0, double dt, int k);

/// Forward delay by s samples with linear-interpolation placement; mass past the end is dropped.
/// Requires 0 <= s < k.
Vector fractional_shift(const Vector& row, double s);
/// Same placement rule for |s| < k; negative s advances the row.
Vector signed_fractional_shift(const Vector& row, double s);

/// Keeps every factor-th sample.
Trace decimate(const Trace& tr, int factor);

struct Periodogram {
  Vector freqs;
  Vector power;
};

/// One-sided periodogram normalised so that the bins sum to the mean square of x.
Periodogram periodogram(const Vector& x, double fs);

/// Twice the smallest frequency at which cumulative non-DC power reaches 90%.
double nyquist_rate(const Vector& x, double fs);
/// Largest per-channel Nyquist rate over the observed (and full-state, if present) channels.
double nyquist_rate(const Trace& tr);

using Tensor3 = Eigen::Tensor<double, 3>;

struct BatchSet {
  /// Windowed instances, each (|Y|+m) channels by k_window samples.
  std::vector<Trace> instances;
  std::vector<int> train;
  std::vector<int> test;
  /// Train instance ids grouped into batches of at most S_B.
  std::vector<std::vector<int>> train_batches;
  std::vector<Tensor3> batches;
  int k_window = 0;
  int batch_size = 0;

  /// S x (|Y|+m) x k tensor for the given instance ids.
  Tensor3 tensor(const std::vector<int>& ids) const;
};

BatchSet make_batches(const std::vector<Trace>& traces, int batch_size, int k_window,
                      double split_ratio, std::uint64_t seed);

// CSV I/O --------------------------------------------------------------------

/// Header `t,<y-labels...>,<u-labels...>`. The first n_y data columns are observations.
void write_trace_csv(const std::string& path, const Trace& tr);
std::string trace_to_csv(const Trace& tr);
Trace read_trace_csv(const std::string& path, int n_y);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
CsvTable read_csv_table(const std::string& path);

/// Header `t,channel,magnitude`.
void write_events_csv(const std::string& path, const EventList& ev);
EventList read_events_csv(const std::string& path);

/// %.17g formatting, used wherever output must be byte-reproducible.
std::string format_double(double v);

}  // namespace physrec

#endif  // PHYSREC_SIGNAL_HPP
