#ifndef PHYSREC_NEURALMR_HPP
#define PHYSREC_NEURALMR_HPP

// Neural model recovery: a recurrent cell reads a window of observations and
// inputs, a dense head maps its final hidden state to coefficient estimates
// and input shifts, and the ODE solver scores the estimate against the data.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "physrec/dynamics.hpp"
#include "physrec/odesolve.hpp"
#include "physrec/signal.hpp"
#include "physrec/tape.hpp"

namespace physrec {

enum class Arch { ltc, ctrnn, node };
enum class CoeffMode { relu_signed, linear };

Arch arch_from_string(const std::string& s);
std::string to_string(Arch a);
CoeffMode coeff_mode_from_string(const std::string& s);
std::string to_string(CoeffMode m);

/// Recurrent cell weights. `log_rho` and `A` are unused by NODE; `A` is unused by CT-RNN.
struct CellWeights {
  Arch arch = Arch::ltc;
  Matrix w_in;   ///< V x n_in
  Matrix w_rec;  ///< V x V
  Vector b;
  Vector log_rho;
  Vector A;

  int width() const { return static_cast<int>(b.size()); }
  int inputs() const { return static_cast<int>(w_in.cols()); }
  Vector rho() const { return log_rho.array().exp(); }
};

CellWeights init_cell(Arch arch, int width, int n_in, std::uint64_t seed);

/// One fused semi-implicit LTC update: (h + delta f A) / (1 + delta (1/rho + f)).
Vector ltc_fused_update(const Vector& h, const Vector& f, const Vector& rho, const Vector& A, double delta);
/// Right-hand side -h/rho + f (A - h).
Vector ltc_rhs(const Vector& h, const Vector& f, const Vector& rho, const Vector& A);
/// The same field written with the input-dependent time constant rho / (1 + rho f).
Vector ltc_rhs_time_constant(const Vector& h, const Vector& f, const Vector& rho, const Vector& A);

/// Advance the cell by dt split into `substeps`. Throws DivergenceError on non-finite state.
Vector ltc_step(const CellWeights& c, const Vector& h, const Vector& input, double dt, int substeps);
Vector ctrnn_step(const CellWeights& c, const Vector& h, const Vector& input, double dt, int substeps);
Vector node_step(const CellWeights& c, const Vector& h, const Vector& input, double dt, int substeps);
Vector cell_step(const CellWeights& c, const Vector& h, const Vector& input, double dt, int substeps);

/// Final hidden state after reading every column of `inputs` from h = 0.
Vector run_cell(const CellWeights& c, const Matrix& inputs, double dt, int substeps);

struct DenseHead {
  std::vector<Matrix> W;  ///< hidden layers then the output layer
  std::vector<Vector> b;
  double dropout = 0.0;
  /// Initial coefficient estimates are drawn from scale * U(1 - spread, 1 + spread).
  double init_spread = 0.5;
  /// Independent initialisations; each trains restart_epochs and the lowest training loss continues.
  int restarts = 1;
  int restart_epochs = 40;
  CoeffMode mode = CoeffMode::relu_signed;
  int p = 0;
  int q = 0;
  std::vector<Sign> signs;
  Vector scales;
};

DenseHead init_head(const SystemSpec& spec, int q, int in_width, const std::vector<int>& hidden, double dropout,
                    CoeffMode mode, std::uint64_t seed, double init_spread = 0.5);

struct HeadOutput {
  Vector theta;  ///< p coefficients with scales and signs applied
  Vector d;      ///< q shift fractions in (0, 1)
};

/// Dropout is active only when `training`; its mask is drawn from `seed`.
HeadOutput head_forward(const DenseHead& head, const Vector& h, bool training, std::uint64_t seed);

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-3;
  /// Final learning rate as a fraction of lr; cosine decay in between (1 keeps it constant).
  double lr_floor = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm cap per step; 0 disables.
  double grad_clip = 1.0;
  int batch_size = 8;
  int k_window = 200;
  double split_ratio = 0.8;
  int hidden = 32;
  std::vector<int> head_hidden = {64};
  double dropout = 0.0;
  /// Initial coefficient estimates are drawn from scale * U(1 - spread, 1 + spread).
  double init_spread = 0.5;
  /// Independent initialisations; each trains restart_epochs and the lowest training loss continues.
  int restarts = 1;
  int restart_epochs = 40;
  CoeffMode coeff_mode = CoeffMode::relu_signed;
  /// Cell time advanced per sample, in normalised units.
  double cell_dt = 0.1;
  int substeps = 6;
  double s_max = 25.0;
  /// Loss horizon curriculum: the reconstruction covers horizon_start samples at epoch 0 and grows
  /// geometrically to the full window by horizon_epochs. 0 disables.
  int horizon_start = 0;
  int horizon_epochs = 0;
  bool shift_search = true;
  bool explicit_loss = false;
  SolverConfig solver;
  /// Central-difference step relative to max(|theta_i|, scale_i).
  double fd_step = 1e-6;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

/// Measurement setup shared by the loss and the trainer.
struct Problem {
  SystemSpec spec;
  SensingMask mask = SensingMask::all(1);
  /// Values used for coefficients with fit = false.
  Vector fixed_theta;

  Problem(SystemSpec s, SensingMask m, Vector fixed = {});
  /// theta with fit = false entries replaced by fixed values.
  Vector complete(const Vector& theta) const;
};

/// Loss value with its sensitivities.
struct LossEval {
  double value = 0.0;
  Vector grad_theta;
  Vector grad_d;
  bool diverged = false;
};

inline constexpr double kDivergedLoss = 1e6;

/// Input matrix with each external channel delayed by d_i * s_max samples.
Matrix shifted_inputs(const Problem& pr, const Matrix& u, const Vector& d, double s_max);

/// Reconstruction from y(:,0) under theta and shifts; n x k full state. A nonzero `horizon` stops after
/// that many samples, with the inputs still shifted over the whole window.
Solution reconstruct(const Problem& pr, const Vector& theta, const Vector& d, const Trace& tr,
                     const TrainConfig& cfg, int horizon = 0);

/// Mean-square reconstruction error over samples 1..k-1 (observed channels, or all states when
/// cfg.explicit_loss). `with_grad` adds central-difference sensitivities.
LossEval ode_loss(const Problem& pr, const Vector& theta, const Vector& d, const Trace& tr,
                  const TrainConfig& cfg, bool with_grad = true, int horizon = 0);

/// ode_loss recorded as a tape node with parents (theta, d).
Var ode_loss_node(Var theta, Var d, const Problem& pr, const Trace& tr, const TrainConfig& cfg, int horizon = 0);

struct RecoveryResult {
  Vector theta_est;
  Vector shifts;  ///< samples
  std::vector<double> loss_history;
  double rmse_y = 0.0;
  std::optional<double> rmse_theta;
  std::vector<Matrix> reconstructed;  ///< observed channels per test instance
  int epochs_run = 0;
};

struct Normaliser {
  Vector mean;
  Vector scale;
  Matrix apply(const Matrix& x) const;
};

/// Cell + head parameters with Adam moments.
struct Model {
  CellWeights cell;
  DenseHead head;
  Normaliser norm;
};

class Trainer {
 public:
  Trainer(Arch arch, Problem problem, const BatchSet& batches, TrainConfig cfg);

  /// One pass over the training batches. Throws TrainingError if every element diverges.
  void run_epoch();
  int epoch() const { return epoch_; }
  const std::vector<double>& loss_history() const { return history_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  Arch arch() const { return arch_; }

  /// Estimates for one instance (inference mode).
  HeadOutput estimate(const Trace& tr) const;
  /// Mean estimate over the test split, RMSE_Y on the test split and reconstructions.
  RecoveryResult result() const;

  /// Mean batch loss and parameter gradients for one set of instances, without updating.
  double batch_loss(const std::vector<int>& ids, std::vector<Matrix>* grads, std::uint64_t dropout_seed) const;

  /// Parameters in a fixed order (cell, then head).
  std::vector<Eigen::Map<Matrix>> parameters();
  std::vector<Eigen::Map<const Matrix>> parameters() const;

  std::string checkpoint_json() const;
  void save_checkpoint(const std::string& path) const;
  /// Restores weights, optimiser state and progress; the batches and problem must match.
  void restore_checkpoint_json(const std::string& text);
  void load_checkpoint(const std::string& path);

 private:
  /// Loss horizon in samples for the current epoch.
  int horizon(int k) const;

  Arch arch_;
  Problem problem_;
  const BatchSet* batches_;
  TrainConfig cfg_;
  Model model_;
  std::vector<Matrix> adam_m_;
  std::vector<Matrix> adam_v_;
  long adam_t_ = 0;
  int epoch_ = 0;
  std::vector<double> history_;
  std::vector<Matrix> inputs_;  ///< normalised cell inputs per instance
};

RecoveryResult train(Arch arch, const Problem& problem, const BatchSet& batches, const TrainConfig& cfg);

/// make_batches followed by train; fills rmse_theta when `truth` is given.
RecoveryResult recover(const std::vector<Trace>& traces, const Problem& problem, Arch arch, const TrainConfig& cfg,
                       const std::optional<Vector>& truth = std::nullopt);

}  // namespace physrec

#endif  // PHYSREC_NEURALMR_HPP
