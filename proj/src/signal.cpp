#include "physrec/signal.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "physrec/rng.hpp"

namespace physrec {

Trace Trace::window(int start, int len) const {
  if (start < 0 || len < 1 || start + len > k()) throw ContractViolation("Trace::window out of range");
  Trace w;
  w.t0 = t0 + start * dt;
  w.dt = dt;
  w.y = y.middleCols(start, len);
  w.u = u.middleCols(start, len);
  w.y_labels = y_labels;
  w.u_labels = u_labels;
  if (x.size() > 0) w.x = x.middleCols(start, len);
  return w;
}

void validate(const Trace& tr) {
  if (!(tr.dt > 0.0)) throw ContractViolation("trace: dt must be positive");
  if (tr.k() < 2) throw ContractViolation("trace: need at least 2 samples");
  if (tr.u.cols() != tr.y.cols()) throw ContractViolation("trace: y and u lengths differ");
  if (tr.x.size() > 0 && tr.x.cols() != tr.y.cols()) throw ContractViolation("trace: x length differs");
  if (!tr.y.allFinite() || !tr.u.allFinite()) throw ContractViolation("trace: non-finite sample");
}

Matrix encode_events(const EventList& ev, int m, double t0, double dt, int k) {
  if (!(dt > 0.0) || k < 1) throw ContractViolation("encode_events: need dt > 0 and k >= 1");
  Matrix out = Matrix::Zero(m, k);
  const double t_end = t0 + (k - 1) * dt;
  const double slack = 1e-9 * dt;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    const Event& e = ev[i];
    if (e.channel < 0 || e.channel >= m || e.t < t0 - slack || e.t > t_end + slack || e.t < 0.0) {
      std::ostringstream msg;
      msg << "encode_events: event " << i << " (channel " << e.channel << ", t=" << e.t
          << ") outside channels [0," << m << ") or window [" << t0 << ", " << t_end << "]";
      throw ContractViolation(msg.str());
    }
    const int idx = std::clamp(static_cast<int>(std::lround((e.t - t0) / dt)), 0, k - 1);
    out(e.channel, idx) += e.magnitude;
  }
  return out;
}

Vector signed_fractional_shift(const Vector& row, double s) {
  const auto k = row.size();
  if (!(std::abs(s) < static_cast<double>(k)))
    throw ContractViolation("fractional_shift: |s| must be below the row length");
  const double lo = std::floor(s);
  const double frac = s - lo;
  const auto base = static_cast<Eigen::Index>(lo);
  Vector out = Vector::Zero(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (row[j] == 0.0) continue;
    const Eigen::Index a = j + base;
    if (a >= 0 && a < k) out[a] += (1.0 - frac) * row[j];
    if (frac > 0.0 && a + 1 >= 0 && a + 1 < k) out[a + 1] += frac * row[j];
  }
  return out;
}

Vector fractional_shift(const Vector& row, double s) {
  if (!(s >= 0.0 && s < static_cast<double>(row.size())))
    throw ContractViolation("fractional_shift: s must lie in [0, k)");
  return signed_fractional_shift(row, s);
}

Trace decimate(const Trace& tr, int factor) {
  if (factor < 1) throw ContractViolation("decimate: factor must be >= 1");
  const int k2 = (tr.k() - 1) / factor + 1;
  if (k2 < 2) throw ContractViolation("decimate: fewer than 2 samples would remain");
  Trace out;
  out.t0 = tr.t0;
  out.dt = tr.dt * factor;
  out.y_labels = tr.y_labels;
  out.u_labels = tr.u_labels;
  out.y.resize(tr.y.rows(), k2);
  out.u.resize(tr.u.rows(), k2);
  if (tr.x.size() > 0) out.x.resize(tr.x.rows(), k2);
  for (int i = 0; i < k2; ++i) {
    out.y.col(i) = tr.y.col(i * factor);
    out.u.col(i) = tr.u.col(i * factor);
    if (tr.x.size() > 0) out.x.col(i) = tr.x.col(i * factor);
  }
  return out;
}

Periodogram periodogram(const Vector& x, double fs) {
  const auto k = x.size();
  if (k < 4) throw ContractViolation("periodogram: need at least 4 samples");
  if (!(fs > 0.0)) throw ContractViolation("periodogram: fs must be positive");
  Eigen::FFT<double> fft;
  std::vector<double> in(x.data(), x.data() + k);
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, in);
  const auto half = k / 2;
  Periodogram p;
  p.freqs.resize(half + 1);
  p.power.resize(half + 1);
  const double kk = static_cast<double>(k) * static_cast<double>(k);
  for (Eigen::Index j = 0; j <= half; ++j) {
    const bool unpaired = (j == 0) || (k % 2 == 0 && j == half);
    p.freqs[j] = fs * static_cast<double>(j) / static_cast<double>(k);
    p.power[j] = (unpaired ? 1.0 : 2.0) * std::norm(spec[static_cast<std::size_t>(j)]) / kk;
  }
  return p;
}

double nyquist_rate(const Vector& x, double fs) {
  const Periodogram p = periodogram(x, fs);
  const double total = p.power.tail(p.power.size() - 1).sum();
  if (!(total > 1e-14 * (p.power[0] + total))) return 0.0;
  const double target = 0.9 * total * (1.0 - 1e-9);
  const double bin = fs / static_cast<double>(x.size());
  double cum = 0.0;
  for (Eigen::Index j = 1; j < p.power.size(); ++j) {
    cum += p.power[j];
    if (cum >= target) return 2.0 * std::max(p.freqs[j], bin);
  }
  return 2.0 * p.freqs[p.freqs.size() - 1];
}

double nyquist_rate(const Trace& tr) {
  const double fs = 1.0 / tr.dt;
  double best = 0.0;
  const Matrix& src = tr.x.size() > 0 ? tr.x : tr.y;
  for (Eigen::Index r = 0; r < src.rows(); ++r) best = std::max(best, nyquist_rate(Vector(src.row(r).transpose()), fs));
  return best;
}

Tensor3 BatchSet::tensor(const std::vector<int>& ids) const {
  if (ids.empty()) return Tensor3(0, 0, k_window);
  const Trace& first = instances.at(static_cast<std::size_t>(ids.front()));
  const int ch = first.ny() + first.m();
  Tensor3 t(static_cast<Eigen::Index>(ids.size()), ch, k_window);
  for (std::size_t s = 0; s < ids.size(); ++s) {
    const Trace& tr = instances.at(static_cast<std::size_t>(ids[s]));
    for (int j = 0; j < k_window; ++j) {
      for (int c = 0; c < tr.ny(); ++c) t(static_cast<Eigen::Index>(s), c, j) = tr.y(c, j);
      for (int c = 0; c < tr.m(); ++c) t(static_cast<Eigen::Index>(s), tr.ny() + c, j) = tr.u(c, j);
    }
  }
  return t;
}

BatchSet make_batches(const std::vector<Trace>& traces, int batch_size, int k_window,
                      double split_ratio, std::uint64_t seed) {
  if (batch_size < 1) throw ContractViolation("make_batches: batch size must be >= 1");
  if (k_window < 2) throw ContractViolation("make_batches: k_window must be >= 2");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ContractViolation("make_batches: split ratio must lie in (0,1)");
  BatchSet set;
  set.k_window = k_window;
  set.batch_size = batch_size;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const Trace& tr = traces[i];
    if (tr.k() < k_window)
      throw ContractViolation("make_batches: trace " + std::to_string(i) + " has " + std::to_string(tr.k()) +
                              " samples, shorter than k_window=" + std::to_string(k_window));
    if (i > 0 && (tr.ny() != traces[0].ny() || tr.m() != traces[0].m()))
      throw ContractViolation("make_batches: traces disagree on channel counts");
    for (int start = 0; start + k_window <= tr.k(); start += k_window) set.instances.push_back(tr.window(start, k_window));
  }
  const int total = static_cast<int>(set.instances.size());
  const int n_train = static_cast<int>(std::lround(split_ratio * total));
  if (n_train < 1 || total - n_train < 1)
    throw ContractViolation("make_batches: insufficient data, need at least one train and one test instance (required >= 2 instances, available " +
                            std::to_string(total) + ")");
  std::vector<int> order(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0xba7c4));
  rng.shuffle(order);
  set.train.assign(order.begin(), order.begin() + n_train);
  set.test.assign(order.begin() + n_train, order.end());
  for (int start = 0; start < n_train; start += batch_size) {
    const int end = std::min(n_train, start + batch_size);
    set.train_batches.emplace_back(set.train.begin() + start, set.train.begin() + end);
    set.batches.push_back(set.tensor(set.train_batches.back()));
  }
  return set;
}

// CSV ------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trace_to_csv(const Trace& tr) {
  std::ostringstream out;
  out << "t";
  for (int i = 0; i < tr.ny(); ++i) out << ',' << (i < static_cast<int>(tr.y_labels.size()) ? tr.y_labels[i] : "y" + std::to_string(i + 1));
  for (int i = 0; i < tr.m(); ++i) out << ',' << (i < static_cast<int>(tr.u_labels.size()) ? tr.u_labels[i] : "u" + std::to_string(i + 1));
  out << '\n';
  for (int j = 0; j < tr.k(); ++j) {
    out << format_double(tr.t0 + j * tr.dt);
    for (int i = 0; i < tr.ny(); ++i) out << ',' << format_double(tr.y(i, j));
    for (int i = 0; i < tr.m(); ++i) out << ',' << format_double(tr.u(i, j));
    out << '\n';
  }
  return out.str();
}

void write_trace_csv(const std::string& path, const Trace& tr) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write trace CSV '" + path + "'");
  f << trace_to_csv(tr);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace

CsvTable read_csv_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open CSV '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(f, line)) throw ParseError(path + ": empty file");
  table.header = split_line(line);
  int row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != table.header.size())
      throw ParseError(path + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " columns, header has " + std::to_string(table.header.size()));
    std::vector<double> vals;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw ParseError(path + ": row " + std::to_string(row) + ": '" + c + "' is not a number");
      }
    }
    table.rows.push_back(std::move(vals));
  }
  return table;
}

Trace read_trace_csv(const std::string& path, int n_y) {
  const CsvTable table = read_csv_table(path);
  if (table.header.empty() || table.header[0] != "t") throw ParseError(path + ": first column must be 't'");
  const int cols = static_cast<int>(table.header.size()) - 1;
  if (n_y < 1 || n_y > cols) throw ParseError(path + ": expected at least " + std::to_string(n_y) + " observation columns");
  const int k = static_cast<int>(table.rows.size());
  if (k < 2) throw ParseError(path + ": need at least 2 rows");
  Trace tr;
  tr.t0 = table.rows[0][0];
  tr.dt = table.rows[1][0] - table.rows[0][0];
  if (!(tr.dt > 0.0)) throw ParseError(path + ": row 3: times must be strictly increasing");
  for (int j = 1; j < k; ++j) {
    const double d = table.rows[j][0] - table.rows[j - 1][0];
    if (std::abs(d - tr.dt) > 1e-9 * tr.dt)
      throw ParseError(path + ": row " + std::to_string(j + 2) + ": non-uniform time step");
  }
  tr.y_labels.assign(table.header.begin() + 1, table.header.begin() + 1 + n_y);
  tr.u_labels.assign(table.header.begin() + 1 + n_y, table.header.end());
  tr.y.resize(n_y, k);
  tr.u.resize(cols - n_y, k);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < n_y; ++i) tr.y(i, j) = table.rows[j][1 + i];
    for (int i = 0; i < cols - n_y; ++i) tr.u(i, j) = table.rows[j][1 + n_y + i];
  }
  validate(tr);
  return tr;
}

void write_events_csv(const std::string& path, const EventList& ev) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write events CSV '" + path + "'");
  f << "t,channel,magnitude\n";
  for (const auto& e : ev) f << format_double(e.t) << ',' << e.channel << ',' << format_double(e.magnitude) << '\n';
}

EventList read_events_csv(const std::string& path) {
  const CsvTable table = read_csv_table(path);
  if (table.header != std::vector<std::string>{"t", "channel", "magnitude"})
    throw ParseError(path + ": header must be t,channel,magnitude");
  EventList ev;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = path + ": row " + std::to_string(r + 2);
    if (row[0] < 0.0) throw ParseError(where + ": negative event time");
    if (row[1] < 0.0 || row[1] != std::floor(row[1])) throw ParseError(where + ": channel must be a non-negative integer");
    ev.push_back({static_cast<int>(row[1]), row[0], row[2]});
  }
  return ev;
}

}  // namespace physrec
