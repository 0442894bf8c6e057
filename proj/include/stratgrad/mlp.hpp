#pragma once

#include "stratgrad/types.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace stratgrad {

enum class Activation { Sigmoid, Tanh };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

/// Layer widths from input to output; the last width is the class count.
struct MlpShape {
  std::vector<Eigen::Index> layer_sizes;
  Activation hidden = Activation::Sigmoid;

  /// Throws std::invalid_argument unless there are >= 2 sizes, all >= 1.
  void validate() const;
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  Eigen::Index num_inputs() const { return layer_sizes.front(); }
  Eigen::Index num_classes() const { return layer_sizes.back(); }
  Eigen::Index parameter_count() const;

  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

/// Weights and biases of every layer, stored in one flat vector so that
/// per-parameter arithmetic is plain array arithmetic. Layer l occupies a
/// fan_in x fan_out column-major weight block followed by its bias.
class MlpParams {
 public:
  MlpParams() = default;
  /// All-zero parameters.
  explicit MlpParams(MlpShape shape);

  const MlpShape& shape() const { return shape_; }
  std::size_t num_layers() const { return shape_.num_layers(); }

  Eigen::Map<Eigen::MatrixXd> weight(std::size_t layer);
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  Eigen::VectorXd& flat() { return data_; }
  const Eigen::VectorXd& flat() const { return data_; }

  /// 1 at weight entries, 0 at bias entries.
  Eigen::ArrayXd weight_mask() const;
  bool all_finite() const { return data_.allFinite(); }

 private:
  MlpShape shape_;
  Eigen::VectorXd data_;
  std::vector<Eigen::Index> offsets_;
};

/// Weights ~ N(0, 1 / fan_in) (LeCun normal), biases zero.
MlpParams init_params(const MlpShape& shape, std::uint64_t seed);

/// Class probabilities for one input.
Eigen::VectorXd forward(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& input);
/// Class probabilities, one row per input row.
Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs);

/// Argmax class per row, ties to the lowest index.
std::vector<int> predict(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs);

struct LossGrad {
  double loss;
  MlpParams grad;
};

/// Mean cross-entropy + (lambda / 2) Σ W^2 (weights only) and its exact
/// gradient. Samples are reduced in fixed-size chunks in row order.
LossGrad loss_and_grad(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs,
                       std::span<const int> labels, double lambda);

double loss(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs, std::span<const int> labels,
            double lambda);

/// Elementwise mean and sample variance (n - 1) of the per-sample gradients
/// J_i' + lambda W over a batch of n >= 2 samples.
struct GradientMoments {
  MlpParams mean;
  MlpParams variance;
};
GradientMoments per_sample_moments(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs,
                                   std::span<const int> labels, double lambda);

struct FullGradientRun {
  MlpParams params;
  /// losses[i] is the loss after i updates (steps + 1 entries).
  std::vector<double> losses;
};

/// Called with the step index and the parameters before that step's update.
using StepObserver = std::function<void(std::size_t, const MlpParams&)>;

/// `steps` full-batch updates W <- W - alpha grad. Throws on steps == 0.
FullGradientRun full_gradient_train(MlpParams params, const Eigen::Ref<const RowMatrixXd>& inputs,
                                    std::span<const int> labels, std::size_t steps, double alpha, double lambda,
                                    const StepObserver& observer = {});

/// A single weight W[layer](in_index, out_index).
struct TrackedWeight {
  std::size_t layer;
  Eigen::Index out_index;
  Eigen::Index in_index;
};

/// Weight between the first output unit and the first unit of the last hidden layer.
TrackedWeight output_tracked_weight(const MlpShape& shape);

/// Per-sample derivative of the sample loss (with the weight-decay term) with
/// respect to the tracked weight.
Eigen::VectorXd tracked_sample_gradients(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs,
                                         std::span<const int> labels, TrackedWeight tracked, double lambda);

/// samples x iterations matrix; column t comes from snapshot t.
Eigen::MatrixXd record_weight_gradient(std::span<const MlpParams> snapshots, const Eigen::Ref<const RowMatrixXd>& inputs,
                                       std::span<const int> labels, TrackedWeight tracked, double lambda);

/// Binary layout: "MLP1", u32 layer-size count, u32 sizes, then per layer the
/// row-major weights and the bias as f64. All little-endian.
void write_params(const MlpParams& params, const std::filesystem::path& path);
MlpParams read_params(const std::filesystem::path& path, Activation hidden = Activation::Sigmoid);

}  // namespace stratgrad
