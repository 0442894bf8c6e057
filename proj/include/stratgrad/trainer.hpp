#pragma once

#include "stratgrad/dataio.hpp"
#include "stratgrad/estimators.hpp"
#include "stratgrad/mlp.hpp"
#include "stratgrad/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stratgrad {

/// How the class-weighted MSSG direction is scaled before the step:
/// AlgorithmVerbatim scales the class-weighted direction by h / C,
/// WeightedMean by h alone.
enum class UpdateScale { AlgorithmVerbatim, WeightedMean };

std::string_view update_scale_name(UpdateScale s);
UpdateScale parse_update_scale(std::string_view name);

struct TrainConfig {
  double step_size = 0.1;
  std::size_t batch_size = 10;
  /// Pilot samples per class for the per-parameter mean/variance.
  std::size_t pilot_size = 8;
  std::size_t iterations = 1000;
  double lambda = 0.001;
  std::uint64_t seed = 1;
  UpdateScale update_scale = UpdateScale::AlgorithmVerbatim;
  std::size_t checkpoint_every = 1000;
  /// SGD performs iterations * sgd_multiplier single-sample steps.
  std::size_t sgd_multiplier = 1;

  /// Throws std::invalid_argument on h <= 0, B < 1, pilot_size < 2 or iterations < 1.
  void validate() const;
};

enum class Algorithm { Mssg, Sgd, Batch, StratifiedSt, FullGradient };

std::string_view algorithm_name(Algorithm a);
Algorithm parse_algorithm(std::string_view name);

struct AccuracyReport {
  std::size_t iterations = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::string algorithm;
  double h = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpParams params;
  std::vector<AccuracyReport> reports;
  FallbackCounts fallbacks;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t iteration, const std::string& what)
      : std::runtime_error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Fraction of rows whose argmax class (lowest index on ties) equals the label.
double accuracy(const MlpParams& params, const LabeledDataset& data);

/// Per-class memory for MSSG: G_j plus the previous pilot mean and variance.
struct ClassMemory {
  Eigen::ArrayXd g;
  Eigen::ArrayXd mean_prev;
  Eigen::ArrayXd var_prev;
};

/// Memory-type stochastic stratified gradient, applied per scalar parameter.
/// Each call to direction() runs one iteration of the class loop:
///   pilot moments (E_j, V_j) -> (p_j, q_j) against last iteration's moments
///   -> G_j <- p_j G_j + q_j (E_j - g(W, xi_j)),
/// and returns Σ_j (N_j / N)(G_j + E_j). The first iteration uses (0, 1).
class MssgDirection {
 public:
  MssgDirection(const LabeledDataset& data, const TrainConfig& config);

  Eigen::VectorXd direction(const MlpParams& params, Rng& rng);

  std::size_t iteration() const { return iteration_; }
  const FallbackCounts& fallbacks() const { return fallbacks_; }
  const ClassMemory& memory(std::size_t c) const { return memory_[c]; }

 private:
  const LabeledDataset& data_;
  std::size_t pilot_size_;
  double lambda_;
  std::vector<double> weights_;
  std::vector<ClassMemory> memory_;
  std::size_t iteration_ = 0;
  FallbackCounts fallbacks_;
};

/// Σ_j (N_j / N) g(W, ξ_j) with one uniform sample ξ_j per class.
Eigen::VectorXd stratified_direction(const MlpParams& params, const LabeledDataset& data, double lambda, Rng& rng);

/// MSSG training with accuracy checkpoints every config.checkpoint_every
/// iterations (and at the end).
TrainResult mssg_train(MlpParams params, const LabeledDataset& train, const LabeledDataset& test,
                       const TrainConfig& config);

enum class BaselineKind { Sgd, Batch, StratifiedSt };

/// Sgd: one pooled sample per step (iterations * sgd_multiplier steps).
/// Batch: batch_size pooled samples without replacement, reduced in row order.
/// StratifiedSt: one sample per class weighted by N_j / N, no memory.
TrainResult baseline_train(MlpParams params, const LabeledDataset& train, const LabeledDataset& test,
                           const TrainConfig& config, BaselineKind kind);

/// Full-batch gradient descent with the same checkpointing.
TrainResult full_gradient_fit(MlpParams params, const LabeledDataset& train, const LabeledDataset& test,
                              const TrainConfig& config);

/// Dispatches on the algorithm.
TrainResult train(Algorithm algorithm, MlpParams params, const LabeledDataset& train, const LabeledDataset& test,
                  const TrainConfig& config);

struct GridCell {
  double alpha = 0.0;
  double lambda = 0.0;
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
};

struct GridResult {
  GridCell best;
  std::vector<GridCell> table;
};

/// Trains one cell: (alpha, lambda, iterations) -> parameters.
using GridTrainFn = std::function<MlpParams(double alpha, double lambda, std::size_t iterations)>;

/// Evaluates every (alpha, lambda) cell; best is the highest eval accuracy,
/// ties to the smaller alpha, then the smaller lambda.
GridResult grid_search(const GridTrainFn& train_fn, std::span<const double> alphas, std::span<const double> lambdas,
                       std::size_t budget_iterations, const LabeledDataset& eval_data,
                       const LabeledDataset& train_data);

}  // namespace stratgrad
