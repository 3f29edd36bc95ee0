// JSON system-spec files.
//
// {
//   "name": "...", "n": 2, "m": 1,
//   "states": [...], "inputs": [...],                       (optional labels)
//   "coeffs": [{"name": "a", "sign": "nonneg", "value": 0.5, "scale": 1, "fit": true}],
//   "f_terms": [{"state": 0, "coeff": "a" | ["p2","i_b"], "gain": -1,
//                "factors": [{"var": 0, "power": 1, "fn": "pow|sin|cos"}]}],
//   "g_terms": [{"state": 1, "input": 0, "coeff": ..., "gain": ..., "factors": [...]}],
//   "rho": 1.0, "rest": [0, "i_b", ...], "external_inputs": [0]
// }

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "physrec/dynamics.hpp"

namespace physrec {

using nlohmann::json;

namespace {

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing required field");
  return *it;
}

int as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ParseError(path + ": expected an integer");
  return v.get<int>();
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ParseError(path + ": expected a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ParseError(path + ": expected a string");
  return v.get<std::string>();
}

std::vector<int> coeff_refs(const json& term, const SystemSpec& spec, const std::string& path) {
  std::vector<int> out;
  auto it = term.find("coeff");
  if (it == term.end() || it->is_null()) return out;
  auto resolve = [&](const json& v, const std::string& p) {
    const std::string name = as_string(v, p);
    const int idx = spec.coeff_index(name);
    if (idx < 0) throw ParseError(p + ": unknown coefficient '" + name + "'");
    out.push_back(idx);
  };
  if (it->is_array()) {
    for (std::size_t i = 0; i < it->size(); ++i)
      resolve((*it)[i], path + ".coeff[" + std::to_string(i) + "]");
  } else {
    resolve(*it, path + ".coeff");
  }
  return out;
}

Term parse_term(const json& j, const SystemSpec& spec, bool is_g, const std::string& path) {
  Term t;
  t.state = as_int(require(j, "state", path), path + ".state");
  if (t.state < 0 || t.state >= spec.n)
    throw ParseError(path + ".state: index " + std::to_string(t.state) + " out of range for n=" +
                     std::to_string(spec.n));
  if (is_g) {
    t.input = as_int(require(j, "input", path), path + ".input");
    if (t.input < 0 || t.input >= spec.m)
      throw ParseError(path + ".input: index " + std::to_string(t.input) + " out of range for m=" +
                       std::to_string(spec.m));
  }
  t.coeffs = coeff_refs(j, spec, path);
  if (auto g = j.find("gain"); g != j.end()) t.gain = as_number(*g, path + ".gain");
  if (auto fs = j.find("factors"); fs != j.end()) {
    if (!fs->is_array()) throw ParseError(path + ".factors: expected an array");
    for (std::size_t i = 0; i < fs->size(); ++i) {
      const std::string fp = path + ".factors[" + std::to_string(i) + "]";
      const json& fj = (*fs)[i];
      Factor f;
      f.var = as_int(require(fj, "var", fp), fp + ".var");
      if (f.var < 0 || f.var >= spec.n)
        throw ParseError(fp + ".var: state index " + std::to_string(f.var) + " out of range for n=" +
                         std::to_string(spec.n));
      if (auto pw = fj.find("power"); pw != fj.end()) f.power = as_int(*pw, fp + ".power");
      if (f.power < 0) throw ParseError(fp + ".power: must be >= 0");
      if (auto fn = fj.find("fn"); fn != fj.end()) {
        const std::string s = as_string(*fn, fp + ".fn");
        if (s == "pow") f.fn = FactorFn::pow;
        else if (s == "sin") f.fn = FactorFn::sin;
        else if (s == "cos") f.fn = FactorFn::cos;
        else throw ParseError(fp + ".fn: unknown function '" + s + "'");
      }
      t.factors.push_back(f);
    }
  }
  return t;
}

json dump_term(const Term& t, const SystemSpec& spec, bool is_g) {
  json j;
  j["state"] = t.state;
  if (is_g) j["input"] = t.input;
  if (t.coeffs.size() == 1) {
    j["coeff"] = spec.coeffs[t.coeffs[0]].name;
  } else if (t.coeffs.size() > 1) {
    json arr = json::array();
    for (int c : t.coeffs) arr.push_back(spec.coeffs[c].name);
    j["coeff"] = arr;
  }
  if (t.gain != 1.0) j["gain"] = t.gain;
  json facs = json::array();
  for (const auto& f : t.factors) {
    json fj{{"var", f.var}, {"power", f.power}};
    if (f.fn == FactorFn::sin) fj["fn"] = "sin";
    if (f.fn == FactorFn::cos) fj["fn"] = "cos";
    facs.push_back(fj);
  }
  j["factors"] = facs;
  return j;
}

}  // namespace

std::pair<SystemSpec, Vector> parse_system_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("system config: ") + e.what());
  }
  SystemSpec spec;
  spec.name = as_string(require(root, "name", "$"), "$.name");
  spec.n = as_int(require(root, "n", "$"), "$.n");
  spec.m = as_int(require(root, "m", "$"), "$.m");
  if (spec.n < 1) throw ParseError("$.n: must be >= 1");
  if (spec.m < 0) throw ParseError("$.m: must be >= 0");

  auto labels = [&](const char* key, int count, const std::string& prefix) {
    std::vector<std::string> out;
    if (auto it = root.find(key); it != root.end()) {
      if (!it->is_array() || static_cast<int>(it->size()) != count)
        throw ParseError(std::string("$.") + key + ": expected " + std::to_string(count) + " labels");
      for (std::size_t i = 0; i < it->size(); ++i)
        out.push_back(as_string((*it)[i], std::string("$.") + key + "[" + std::to_string(i) + "]"));
    } else {
      for (int i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i + 1));
    }
    return out;
  };
  spec.state_names = labels("states", spec.n, "x");
  spec.input_names = labels("inputs", spec.m, "u");

  const json& cj = require(root, "coeffs", "$");
  if (!cj.is_array()) throw ParseError("$.coeffs: expected an array");
  std::vector<double> values;
  for (std::size_t i = 0; i < cj.size(); ++i) {
    const std::string cp = "$.coeffs[" + std::to_string(i) + "]";
    Coefficient c;
    c.name = as_string(require(cj[i], "name", cp), cp + ".name");
    if (auto s = cj[i].find("sign"); s != cj[i].end()) {
      try {
        c.sign = sign_from_string(as_string(*s, cp + ".sign"));
      } catch (const ParseError& e) {
        throw ParseError(cp + ".sign: " + e.what());
      }
    }
    if (auto s = cj[i].find("scale"); s != cj[i].end()) c.scale = as_number(*s, cp + ".scale");
    if (auto s = cj[i].find("fit"); s != cj[i].end()) {
      if (!s->is_boolean()) throw ParseError(cp + ".fit: expected a boolean");
      c.fit = s->get<bool>();
    }
    values.push_back(as_number(require(cj[i], "value", cp), cp + ".value"));
    spec.coeffs.push_back(c);
  }

  auto terms = [&](const char* key, bool is_g, std::vector<Term>& out) {
    auto it = root.find(key);
    if (it == root.end()) return;
    if (!it->is_array()) throw ParseError(std::string("$.") + key + ": expected an array");
    for (std::size_t i = 0; i < it->size(); ++i)
      out.push_back(parse_term((*it)[i], spec, is_g, std::string("$.") + key + "[" + std::to_string(i) + "]"));
  };
  terms("f_terms", false, spec.f_terms);
  terms("g_terms", true, spec.g_terms);

  if (auto it = root.find("rho"); it != root.end() && !it->is_null()) spec.rho = as_number(*it, "$.rho");
  if (auto it = root.find("rest"); it != root.end()) {
    if (!it->is_array() || static_cast<int>(it->size()) != spec.n)
      throw ParseError("$.rest: expected " + std::to_string(spec.n) + " entries");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string rp = "$.rest[" + std::to_string(i) + "]";
      const json& r = (*it)[i];
      if (r.is_string()) {
        const int idx = spec.coeff_index(r.get<std::string>());
        if (idx < 0) throw ParseError(rp + ": unknown coefficient '" + r.get<std::string>() + "'");
        spec.rest.emplace_back(idx);
      } else {
        spec.rest.emplace_back(as_number(r, rp));
      }
    }
  }
  if (auto it = root.find("external_inputs"); it != root.end()) {
    if (!it->is_array()) throw ParseError("$.external_inputs: expected an array");
    for (std::size_t i = 0; i < it->size(); ++i)
      spec.external_inputs.push_back(as_int((*it)[i], "$.external_inputs[" + std::to_string(i) + "]"));
  }

  try {
    validate(spec);
  } catch (const ContractViolation& e) {
    throw ParseError(std::string("$: ") + e.what());
  }
  Vector theta = Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  try {
    validate_theta(spec, theta);
  } catch (const ContractViolation& e) {
    throw ParseError(std::string("$.coeffs: ") + e.what());
  }
  return {spec, theta};
}

std::pair<SystemSpec, Vector> load_system_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open system config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_system_config(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string dump_system_config(const SystemSpec& spec, const Vector& theta) {
  json root;
  root["name"] = spec.name;
  root["n"] = spec.n;
  root["m"] = spec.m;
  root["states"] = spec.state_names;
  root["inputs"] = spec.input_names;
  json cj = json::array();
  for (int i = 0; i < spec.p(); ++i) {
    const auto& c = spec.coeffs[i];
    cj.push_back({{"name", c.name}, {"sign", to_string(c.sign)}, {"value", theta[i]},
                  {"scale", c.scale}, {"fit", c.fit}});
  }
  root["coeffs"] = cj;
  json fj = json::array(), gj = json::array();
  for (const auto& t : spec.f_terms) fj.push_back(dump_term(t, spec, false));
  for (const auto& t : spec.g_terms) gj.push_back(dump_term(t, spec, true));
  root["f_terms"] = fj;
  root["g_terms"] = gj;
  if (spec.rho) root["rho"] = *spec.rho;
  if (!spec.rest.empty()) {
    json rj = json::array();
    for (const auto& r : spec.rest) {
      if (const double* v = std::get_if<double>(&r)) rj.push_back(*v);
      else rj.push_back(spec.coeffs[std::get<int>(r)].name);
    }
    root["rest"] = rj;
  }
  root["external_inputs"] = spec.external_inputs;
  return root.dump(2) + "\n";
}

void save_system_config(const std::string& path, const SystemSpec& spec, const Vector& theta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write system config '" + path + "'");
  out << dump_system_config(spec, theta);
}

}  // namespace physrec
