#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sorbfit/data_core.hpp"
#include "sorbfit/rng.hpp"

namespace sorbfit::pinn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
// Fixed base alignment keeps the vectorized kernels' summation order, and so
// the results, independent of where the allocator happens to place buffers.
using Params = std::vector<double, Eigen::aligned_allocator<double>>;

struct ArchSpec {
  int input_dim = 1;
  std::vector<int> scale_widths{64, 128, 256};
  std::vector<int> backbone_widths{256, 512, 256, 128};
  double dropout = 0.10;
  double width_mult = 1.0;  // applied to every hidden width
  std::uint64_t seed = 42;

  bool operator==(const ArchSpec&) const = default;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

struct DenseSlot {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;  // offsets into theta; W is out x in, column-major
};

struct BatchNormSlot {
  int width = 0;
  std::size_t gamma = 0, beta = 0;
};

/// Multi-scale pathways gated by (p, T), a batch-normalized Swish backbone
/// with skips between equal-width layers, and a Softplus output.
class Network {
 public:
  explicit Network(const ArchSpec& spec);  // Kaiming-normal hidden init, output Xavier-uniform x 0.1

  const ArchSpec& spec() const { return spec_; }
  std::size_t parameter_count() const { return theta.size(); }
  int concat_width() const { return concat_width_; }
  const std::vector<int>& backbone() const { return backbone_; }
  /// Backbone layer whose output is added to layer j's, or -1.
  int skip_source(std::size_t j) const { return skip_[j]; }

  Params theta;
  std::vector<Vector> running_mean, running_var;
  std::array<double, 2> gate_center{0.0, 0.0};  // raw (p, T) standardization
  std::array<double, 2> gate_scale{1.0, 1.0};

  std::vector<DenseSlot> scale;
  DenseSlot gate;
  std::vector<DenseSlot> dense;
  std::vector<BatchNormSlot> bn;
  DenseSlot out;

  Eigen::Map<Matrix> W(const DenseSlot& s) { return {theta.data() + s.w, s.out, s.in}; }
  Eigen::Map<const Matrix> W(const DenseSlot& s) const { return {theta.data() + s.w, s.out, s.in}; }
  Eigen::Map<Vector> b(const DenseSlot& s) { return {theta.data() + s.b, s.out}; }
  Eigen::Map<const Vector> b(const DenseSlot& s) const { return {theta.data() + s.b, s.out}; }

 private:
  ArchSpec spec_;
  std::vector<int> backbone_;
  std::vector<int> skip_;
  int concat_width_ = 0;
};

Network build_network(const ArchSpec& spec);

/// Everything the backward pass needs from one forward pass.
struct Tape {
  Matrix x, pt;  // pt: standardized (p, T)
  std::vector<Matrix> scale_z;
  Matrix ms, gate;
  std::vector<Matrix> in, z, xhat, u, mask, h;
  std::vector<Vector> mean, inv_std;
  bool batch_stats = false;
  Vector out_z, y;
};

struct ForwardOptions {
  bool train = false;
  Rng* dropout_rng = nullptr;   // required when train && dropout > 0 and no `reuse`
  const Tape* reuse = nullptr;  // take dropout masks and batch-norm statistics (as constants) from this tape
};

/// X: input_dim x B scaled features; PT: 2 x B raw pressure (bar) and
/// temperature (K). Throws DimensionMismatch.
Vector forward(const Network& net, const Matrix& X, const Matrix& PT, const ForwardOptions& opt = {}, Tape* tape = nullptr);

/// Accumulates dL/dtheta into grad (size parameter_count()). Optional input
/// gradients are with respect to X and the raw (p, T).
void backward(const Network& net, const Tape& tape, const Vector& dy, Params& grad, Matrix* dX = nullptr,
              Matrix* dPT = nullptr);

/// Folds the batch statistics of a train-mode tape into the running averages.
void update_running_stats(Network& net, const Tape& tape);

/// Eval-mode predictions in chunks.
Vector predict(const Network& net, const Matrix& X, const Matrix& PT);

/// dQ/dp by reverse mode: gradient w.r.t. inputs contracted with dX/dp
/// (input_dim x B) plus the direct gate path. Eval mode.
Vector dqdp_reverse(const Network& net, const Matrix& X, const Matrix& PT, const Matrix& dXdp);

/// dQ/dp by central differences between inputs evaluated at p + h and p - h.
Vector dqdp_central(const Network& net, const Matrix& X_plus, const Matrix& PT_plus, const Matrix& X_minus,
                    const Matrix& PT_minus, double h);

// ---------------------------------------------------------------- losses

inline constexpr double kWeightSharpness = 5.0;
inline constexpr double kWeightThreshold = 0.1;
inline constexpr double kPhysicsPressure = 50.0;  // bar
inline constexpr double kLowerBandFraction = 0.7;
inline constexpr double kLowerBandWeight = 0.1;
inline constexpr double kMonotonicitySlack = 1e-6;

/// w(y) = sigmoid(5 (y - 0.1)) + 0.5
double data_weight(double y);

struct LossBreakdown {
  double data = 0.0, physics = 0.0, bounds = 0.0, monotonicity = 0.0;
  std::array<double, 4> lambdas{1.0, 0.0, 0.0, 0.0};
  double total = 0.0;

  std::array<double, 4> terms() const { return {data, physics, bounds, monotonicity}; }
};

/// Term values; dqdp may be empty (monotonicity = 0).
LossBreakdown loss_terms(std::span<const double> preds, std::span<const double> targets, std::span<const double> pressures,
                         std::span<const data::Lithology> lithologies, const QmaxTable& qmax,
                         std::span<const double> dqdp, std::array<double, 4> lambdas = {1.0, 0.0, 0.0, 0.0});

/// Per-term derivatives: [0..2] with respect to the predictions, [3] with
/// respect to dq/dp.
std::array<Vector, 4> loss_gradients(std::span<const double> preds, std::span<const double> targets,
                                     std::span<const double> pressures, std::span<const double> qmax_rows,
                                     std::span<const double> dqdp);

struct EmaState {
  std::array<double, 4> g{0.0, 0.0, 0.0, 0.0};
  bool initialized = false;
};

inline constexpr double kLambdaEps = 1e-12;

/// EMA of per-term gradient norms, lambda_k = max(g) / (g_k + eps). Inactive
/// terms keep their average and get lambda 1.
std::array<double, 4> adaptive_lambdas(const std::array<double, 4>& grad_norms, EmaState& state, double alpha = 0.1,
                                       std::array<bool, 4> active = {true, true, true, true});

// ---------------------------------------------------------------- training

enum class Phase { Warmup = 1, Physics = 2, Full = 3 };

struct TrainSchedule {
  std::array<int, 3> epochs{50, 250, 100};
  double lr_phase1 = 1.2e-3;
  double lr2_max = 5e-4, lr2_min = 1e-6;
  double lr3_max = 1e-4, lr3_min = 1e-7;
  std::array<double, 4> phase3_weights{1.0, 1.0, 0.1, 0.05};
  int batch_size = 64;
  double weight_decay = 1e-5;
  double clip_norm = 1.0;
  int patience = 20;
  double tolerance = 1e-5;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  bool adaptive_in_phase2 = true;
  bool physics_enabled = true;  // false: every physics weight is zero (ablation baseline)
  double pressure_step = 1e-3;  // bar, for dQ/dp

  bool operator==(const TrainSchedule&) const = default;
};

/// Learning rate at epoch e (0-based) of a phase. Phases 2 and 3 anneal by
/// cosine over the nominal phase length.
double lr_at(Phase phase, int epoch, const TrainSchedule& s = {});

/// Schedule weights (before adaptive scaling) at epoch e of a phase.
std::array<double, 4> phase_weights(Phase phase, int epoch, const TrainSchedule& s = {});

/// Fixed weights the validation monitor uses within a phase.
std::array<double, 4> monitor_weights(Phase phase, const TrainSchedule& s = {});

struct Dataset {
  Matrix X, X_plus, X_minus;    // input_dim x n; features at p, p + h, p - h
  Matrix PT, PT_plus, PT_minus;  // 2 x n raw
  Vector y;
  std::vector<data::Lithology> lithology;
  double h = 1e-3;

  std::size_t size() const { return static_cast<std::size_t>(X.cols()); }
  Dataset subset(const std::vector<std::size_t>& cols) const;
};

struct EpochRecord {
  int phase = 1;
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown train;     // batch means
  double val_monitor = 0.0;
  std::array<double, 4> schedule_weights{};
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::array<int, 3> epochs_run{0, 0, 0};
  std::array<bool, 3> stopped_early{false, false, false};
  std::array<double, 3> best_val{0.0, 0.0, 0.0};
};

/// Standardizes the gate inputs from the training rows, then runs the three
/// phases. Throws DivergenceDetected on a non-finite loss.
TrainResult train(Network& net, const Dataset& train, const Dataset& val, const TrainSchedule& schedule,
                  const QmaxTable& qmax = {}, std::uint64_t seed = 42);

/// Weighted loss on one batch and its parameter gradient (accumulated into
/// grad). In train mode the dQ/dp passes reuse the main pass's batch-norm
/// statistics and dropout masks; they run only when lambdas[3] > 0.
LossBreakdown loss_and_gradient(const Network& net, const Dataset& batch, const std::array<double, 4>& lambdas,
                                const QmaxTable& qmax, const ForwardOptions& opt, Params& grad,
                                Tape* main_tape = nullptr);

/// Validation monitor value (eval mode).
double evaluate_loss(const Network& net, const Dataset& d, const std::array<double, 4>& weights, const QmaxTable& qmax,
                     LossBreakdown* breakdown = nullptr);

nlohmann::json to_json(const ArchSpec& a);
ArchSpec arch_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainSchedule& s);
TrainSchedule schedule_from_json(const nlohmann::json& j);  // strict
nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);
std::string history_csv(const TrainResult& r);

}  // namespace sorbfit::pinn
