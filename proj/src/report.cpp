#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json_util.hpp"
#include "physrec/experiment.hpp"

namespace physrec {

using jsonio::json;


ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw ParseError("unknown report format '" + s + "' (expected csv or json)");
}

namespace {

std::string num(double v) { return format_double(v); }

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + num(v[i]);
  return out;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string format_report(const std::vector<ReportRow>& rows, ReportFormat fmt, bool include_runtime) {
  if (fmt == ReportFormat::json) {
    json arr = json::array();
    for (const auto& r : rows) {
      json j = {{"digest", r.digest},
                {"experiment", r.experiment},
                {"system", r.system},
                {"arch", r.arch},
                {"seed", r.seed},
                {"sampling_factor", r.sampling_factor},
                {"dt", r.dt},
                {"perturbation", r.perturbation},
                {"injected_shift", r.injected_shift},
                {"shift_search", r.shift_search},
                {"rmse_theta", finite_or_null(r.rmse_theta)},
                {"rmse_y", finite_or_null(r.rmse_y)},
                {"degradation_theta", r.degradation_theta ? json(*r.degradation_theta) : json(nullptr)},
                {"degradation_y", r.degradation_y ? json(*r.degradation_y) : json(nullptr)},
                {"coeff_names", r.coeff_names},
                {"coeff_errors", r.coeff_errors},
                {"shifts", r.shifts},
                {"status", r.status}};
      if (include_runtime) j["runtime_s"] = r.runtime_s;
      arr.push_back(j);
    }
    return arr.dump(1) + "\n";
  }
  std::ostringstream out;
  out << "digest,arch,system,sampling_factor,rmse_theta,rmse_y,shifts";
  const std::vector<std::string> names = rows.empty() ? std::vector<std::string>{} : rows.front().coeff_names;
  for (const auto& n : names) out << ",err_" << n;
  if (include_runtime) out << ",runtime_s";
  out << ",seed,experiment,dt,perturbation,injected_shift,shift_search,degradation_theta,degradation_y,status\n";
  for (const auto& r : rows) {
    out << r.digest << ',' << r.arch << ',' << r.system << ',' << r.sampling_factor << ',' << num(r.rmse_theta) << ','
        << num(r.rmse_y) << ',' << join(r.shifts);
    for (std::size_t i = 0; i < names.size(); ++i)
      out << ',' << (i < r.coeff_errors.size() ? num(r.coeff_errors[i]) : "");
    if (include_runtime) out << ',' << num(r.runtime_s);
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << ',' << r.seed << ',' << r.experiment << ',' << num(r.dt) << ',' << (r.perturbation ? 1 : 0) << ','
        << join(r.injected_shift) << ',' << (r.shift_search ? 1 : 0) << ','
        << (r.degradation_theta ? num(*r.degradation_theta) : "") << ','
        << (r.degradation_y ? num(*r.degradation_y) : "") << ',' << status << '\n';
  }
  return out.str();
}

void emit_report(const std::vector<ReportRow>& rows, ReportFormat fmt, const std::string& path, bool include_runtime) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write report '" + path + "'");
  f << format_report(rows, fmt, include_runtime);
  if (!f) throw std::runtime_error("failed writing report '" + path + "'");
}

std::vector<ReportRow> parse_report_json(const std::string& text) {
  std::vector<ReportRow> rows;
  try {
    const json arr = json::parse(text);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& j : arr) {
      ReportRow r;
      r.digest = j.at("digest").get<std::string>();
      r.experiment = j.at("experiment").get<std::string>();
      r.system = j.at("system").get<std::string>();
      r.arch = j.at("arch").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.sampling_factor = j.at("sampling_factor").get<int>();
      r.dt = j.at("dt").get<double>();
      r.perturbation = j.at("perturbation").get<bool>();
      r.injected_shift = j.at("injected_shift").get<std::vector<double>>();
      r.shift_search = j.at("shift_search").get<bool>();
      r.rmse_theta = j.at("rmse_theta").is_null() ? nan : j.at("rmse_theta").get<double>();
      r.rmse_y = j.at("rmse_y").is_null() ? nan : j.at("rmse_y").get<double>();
      if (!j.at("degradation_theta").is_null()) r.degradation_theta = j.at("degradation_theta").get<double>();
      if (!j.at("degradation_y").is_null()) r.degradation_y = j.at("degradation_y").get<double>();
      r.coeff_names = j.at("coeff_names").get<std::vector<std::string>>();
      r.coeff_errors = j.at("coeff_errors").get<std::vector<double>>();
      r.shifts = j.at("shifts").get<std::vector<double>>();
      r.runtime_s = j.value("runtime_s", 0.0);
      r.status = j.at("status").get<std::string>();
      rows.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  return rows;
}

}  // namespace physrec
