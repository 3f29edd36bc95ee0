#include "physrec/realdata.hpp"

#include <algorithm>
#include <cmath>

#include "physrec/errors.hpp"

namespace physrec {

namespace {

int column_of(const CsvTable& t, const std::string& label, const std::string& path) {
  const auto it = std::find(t.header.begin(), t.header.end(), label);
  if (it == t.header.end() || it == t.header.begin()) throw LookupError(path + ": unknown channel label '" + label + "'");
  return static_cast<int>(it - t.header.begin());
}

}  // namespace

RealData load_real_csv(const std::string& trace_path, const std::string& events_path, const RealSchema& schema) {
  if (schema.observed.empty()) throw ContractViolation("load_real_csv: schema has no observed channels");
  const CsvTable table = read_csv_table(trace_path);
  if (table.header.empty() || table.header[0] != "t") throw ParseError(trace_path + ": first column must be 't'");
  if (table.rows.size() < 2) throw ParseError(trace_path + ": need at least 2 rows");

  std::vector<int> ycols, ucols;
  for (const auto& l : schema.observed) ycols.push_back(column_of(table, l, trace_path));
  for (const auto& l : schema.inputs) ucols.push_back(column_of(table, l, trace_path));

  const double dt = schema.dt > 0.0 ? schema.dt : table.rows[1][0] - table.rows[0][0];
  if (!(dt > 0.0)) throw ParseError(trace_path + ": row 3: times must be strictly increasing");

  RealData out;
  if (!events_path.empty()) {
    out.events = read_events_csv(events_path);
    for (std::size_t r = 0; r < out.events.size(); ++r)
      if (out.events[r].channel >= static_cast<int>(schema.event_channels.size()))
        throw LookupError(events_path + ": row " + std::to_string(r + 2) + ": channel " +
                          std::to_string(out.events[r].channel) + " has no label in the schema");
  }

  // Segment boundaries: [begin, end) over table rows.
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t begin = 0;
  for (std::size_t j = 1; j < table.rows.size(); ++j) {
    const double step = table.rows[j][0] - table.rows[j - 1][0];
    const std::string where = trace_path + ": row " + std::to_string(j + 2);
    if (!(step > 0.0)) throw ParseError(where + ": times must be strictly increasing");
    if (std::abs(step - dt) <= 1e-9 * dt) continue;
    if (step > 2.0 * dt) {
      spans.emplace_back(begin, j);
      begin = j;
      continue;
    }
    throw ParseError(where + ": non-uniform time step " + format_double(step) + " (dt " + format_double(dt) + ")");
  }
  spans.emplace_back(begin, table.rows.size());

  const int m_cont = static_cast<int>(ucols.size());
  const int m = m_cont + static_cast<int>(schema.event_channels.size());
  for (const auto& [b, e] : spans) {
    const int k = static_cast<int>(e - b);
    if (k < 2) continue;
    Trace tr;
    tr.t0 = table.rows[b][0];
    tr.dt = dt;
    tr.y_labels = schema.observed;
    tr.u_labels = schema.inputs;
    tr.u_labels.insert(tr.u_labels.end(), schema.event_channels.begin(), schema.event_channels.end());
    tr.y.resize(static_cast<Eigen::Index>(ycols.size()), k);
    tr.u = Matrix::Zero(m, k);
    for (int j = 0; j < k; ++j) {
      const auto& row = table.rows[b + static_cast<std::size_t>(j)];
      for (std::size_t i = 0; i < ycols.size(); ++i) tr.y(static_cast<Eigen::Index>(i), j) = row[static_cast<std::size_t>(ycols[i])];
      for (int i = 0; i < m_cont; ++i) tr.u(i, j) = row[static_cast<std::size_t>(ucols[static_cast<std::size_t>(i)])];
    }
    if (!schema.event_channels.empty()) {
      const double t_end = tr.t0 + (k - 1) * dt;
      EventList inside;
      for (const Event& ev : out.events)
        if (ev.t >= tr.t0 - 1e-9 * dt && ev.t <= t_end + 1e-9 * dt) inside.push_back(ev);
      const Matrix enc = encode_events(inside, static_cast<int>(schema.event_channels.size()), tr.t0, dt, k);
      tr.u.bottomRows(enc.rows()) = enc / dt;
    }
    validate(tr);
    out.segments.push_back(std::move(tr));
  }
  return out;
}

}  // namespace physrec
