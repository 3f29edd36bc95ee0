// Trainer checkpoints and TrainConfig JSON mapping.

#include <fstream>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "physrec/neuralmr.hpp"

namespace physrec {

namespace jsonio {

json matrix_to_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const json& j, const std::string& path) {
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw ParseError(path + ": matrix data length does not match rows*cols");
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = data[k++].get<double>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"restarts", c.restarts},
          {"restart_epochs", c.restart_epochs},
          {"init_spread", c.init_spread},
          {"lr_floor", c.lr_floor},
          {"grad_clip", c.grad_clip},
          {"batch_size", c.batch_size},
          {"k_window", c.k_window},
          {"split_ratio", c.split_ratio},
          {"hidden", c.hidden},
          {"head_hidden", c.head_hidden},
          {"dropout", c.dropout},
          {"coeff_mode", to_string(c.coeff_mode)},
          {"cell_dt", c.cell_dt},
          {"substeps", c.substeps},
          {"s_max", c.s_max},
          {"horizon_start", c.horizon_start},
          {"horizon_epochs", c.horizon_epochs},
          {"shift_search", c.shift_search},
          {"explicit_loss", c.explicit_loss},
          {"solver", {{"method", to_string(c.solver.method)}, {"substeps", c.solver.substeps}}},
          {"fd_step", c.fd_step},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected an object");
  static const std::set<std::string> known = {"epochs", "lr", "beta1", "beta2", "adam_eps", "restarts", "restart_epochs", "init_spread", "lr_floor", "grad_clip", "batch_size", "k_window",
                                              "split_ratio", "hidden", "head_hidden", "dropout", "coeff_mode",
                                              "cell_dt", "substeps", "s_max", "horizon_start", "horizon_epochs", "shift_search", "explicit_loss",
                                              "solver", "fd_step", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ParseError(path + "." + key + ": unknown field");
  TrainConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const json::exception& e) {
      throw ParseError(path + "." + key + ": " + e.what());
    }
  };
  get("epochs", c.epochs);
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("grad_clip", c.grad_clip);
  get("lr_floor", c.lr_floor);
  get("init_spread", c.init_spread);
  get("restarts", c.restarts);
  get("restart_epochs", c.restart_epochs);
  get("batch_size", c.batch_size);
  get("k_window", c.k_window);
  get("split_ratio", c.split_ratio);
  get("hidden", c.hidden);
  get("head_hidden", c.head_hidden);
  get("dropout", c.dropout);
  if (j.contains("coeff_mode")) c.coeff_mode = coeff_mode_from_string(j.at("coeff_mode").get<std::string>());
  get("horizon_start", c.horizon_start);
  get("horizon_epochs", c.horizon_epochs);
  get("cell_dt", c.cell_dt);
  get("substeps", c.substeps);
  get("s_max", c.s_max);
  get("shift_search", c.shift_search);
  get("explicit_loss", c.explicit_loss);
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    if (s.contains("method")) c.solver.method = method_from_string(s.at("method").get<std::string>());
    if (s.contains("substeps")) c.solver.substeps = s.at("substeps").get<int>();
  }
  get("fd_step", c.fd_step);
  get("seed", c.seed);
  try {
    validate(c);
  } catch (const ContractViolation& e) {
    throw ParseError(path + ": " + e.what());
  }
  return c;
}

}  // namespace jsonio

using jsonio::json;

std::string Trainer::checkpoint_json() const {
  json params = json::array(), m = json::array(), v = json::array();
  const auto ps = parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    params.push_back(jsonio::matrix_to_json(ps[i]));
    m.push_back(jsonio::matrix_to_json(adam_m_[i]));
    v.push_back(jsonio::matrix_to_json(adam_v_[i]));
  }
  json j = {{"format", "physrec-checkpoint"},
            {"version", 1},
            {"arch", to_string(arch_)},
            {"system", problem_.spec.name},
            {"config", jsonio::to_json(cfg_)},
            {"epoch", epoch_},
            {"adam_t", adam_t_},
            {"loss_history", history_},
            {"norm_mean", jsonio::matrix_to_json(model_.norm.mean)},
            {"norm_scale", jsonio::matrix_to_json(model_.norm.scale)},
            {"params", params},
            {"adam_m", m},
            {"adam_v", v}};
  return j.dump(1);
}

void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  f << checkpoint_json();
  if (!f) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

void Trainer::restore_checkpoint_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "physrec-checkpoint") throw ParseError("checkpoint: not a physrec checkpoint");
  if (j.at("arch").get<std::string>() != to_string(arch_)) throw ContractViolation("checkpoint: architecture differs");
  if (j.at("system").get<std::string>() != problem_.spec.name) throw ContractViolation("checkpoint: system differs");
  const TrainConfig cfg = jsonio::train_config_from_json(j.at("config"), "$.config");
  if (jsonio::to_json(cfg) != jsonio::to_json(cfg_)) throw ContractViolation("checkpoint: training configuration differs");
  auto ps = parameters();
  const auto& jp = j.at("params");
  const auto& jm = j.at("adam_m");
  const auto& jv = j.at("adam_v");
  if (jp.size() != ps.size() || jm.size() != ps.size() || jv.size() != ps.size())
    throw ContractViolation("checkpoint: parameter count differs");
  std::vector<Matrix> np, nm, nv;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string at = "$.params[" + std::to_string(i) + "]";
    np.push_back(jsonio::matrix_from_json(jp[i], at));
    nm.push_back(jsonio::matrix_from_json(jm[i], at));
    nv.push_back(jsonio::matrix_from_json(jv[i], at));
    for (const Matrix* x : {&np.back(), &nm.back(), &nv.back()})
      if (x->rows() != ps[i].rows() || x->cols() != ps[i].cols())
        throw ContractViolation("checkpoint: shape mismatch at " + at);
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ps[i] = np[i];
    adam_m_[i] = nm[i];
    adam_v_[i] = nv[i];
  }
  model_.norm.mean = jsonio::matrix_from_json(j.at("norm_mean"), "$.norm_mean");
  model_.norm.scale = jsonio::matrix_from_json(j.at("norm_scale"), "$.norm_scale");
  for (std::size_t i = 0; i < batches_->instances.size(); ++i) {
    const Trace& tr = batches_->instances[i];
    Matrix z(tr.ny() + tr.m(), tr.k());
    z << tr.y, tr.u;
    inputs_[i] = model_.norm.apply(z);
  }
  epoch_ = j.at("epoch").get<int>();
  adam_t_ = j.at("adam_t").get<long>();
  history_ = j.at("loss_history").get<std::vector<double>>();
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  restore_checkpoint_json(ss.str());
}

}  // namespace physrec
