#ifndef PHYSREC_REALDATA_HPP
#define PHYSREC_REALDATA_HPP

// Ingestion of recorded traces (CGM/insulin/meal logs, EEG exports).

#include <string>
#include <vector>

#include "physrec/signal.hpp"

namespace physrec {

/// Which CSV columns become observations and inputs.
struct RealSchema {
  std::vector<std::string> observed;  ///< trace columns mapped to y, in order
  std::vector<std::string> inputs;    ///< trace columns mapped to the leading rows of u
  /// Event channel c becomes u row inputs.size() + c, holding magnitude / dt at the nearest sample.
  std::vector<std::string> event_channels;
  /// Nominal sampling interval; 0 takes the first time step.
  double dt = 0.0;
};

struct RealData {
  std::vector<Trace> segments;
  EventList events;
};

/// Reads a trace CSV and an optional events CSV (empty path for none). Steps within 1e-9 relative of dt
/// continue a segment, steps longer than 2 dt start a new one, anything else is an error naming the row.
/// Segments shorter than two samples are dropped.
RealData load_real_csv(const std::string& trace_path, const std::string& events_path, const RealSchema& schema);

}  // namespace physrec

#endif  // PHYSREC_REALDATA_HPP
