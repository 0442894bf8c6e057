#include "stratgrad/trainer.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

namespace stratgrad {

namespace {

constexpr std::uint64_t kMssgStream = 0x6d737367;
constexpr std::uint64_t kBaselineStream = 0x62617365;

void check_classes(const LabeledDataset& data) {
  if (data.size() == 0) throw std::invalid_argument("trainer: empty training set");
  for (std::size_t c = 0; c < data.num_classes(); ++c)
    if (data.class_size(c) == 0) throw std::invalid_argument("trainer: class " + std::to_string(c) + " is empty");
}

std::vector<double> class_weights(const LabeledDataset& data) {
  std::vector<double> w;
  for (std::size_t c = 0; c < data.num_classes(); ++c)
    w.push_back(static_cast<double>(data.class_size(c)) / static_cast<double>(data.size()));
  return w;
}

Eigen::VectorXd sample_gradient(const MlpParams& params, const LabeledDataset& data, std::size_t row, double lambda) {
  const std::size_t rows[] = {row};
  const auto b = gather(data, rows);
  return std::move(loss_and_grad(params, b.features, b.labels, lambda).grad.flat());
}

class Checkpointer {
 public:
  Checkpointer(const LabeledDataset& train, const LabeledDataset& test, const TrainConfig& config, Algorithm algorithm)
      : train_(train), test_(test), config_(config), name_(algorithm_name(algorithm)) {}

  void at(std::size_t iteration, const MlpParams& params, std::vector<AccuracyReport>& out) const {
    if (iteration % config_.checkpoint_every != 0 && iteration != config_.iterations) return;
    out.push_back({iteration, accuracy(params, train_), accuracy(params, test_), std::string(name_), config_.step_size,
                   config_.lambda, config_.seed});
  }

 private:
  const LabeledDataset& train_;
  const LabeledDataset& test_;
  const TrainConfig& config_;
  std::string_view name_;
};

void apply_step(MlpParams& params, const Eigen::VectorXd& direction, double scale, std::size_t iteration) {
  params.flat() -= scale * direction;
  if (!params.all_finite()) throw TrainingError(iteration, "non-finite parameter update");
}

}  // namespace

std::string_view update_scale_name(UpdateScale s) {
  return s == UpdateScale::AlgorithmVerbatim ? "algorithm-verbatim" : "weighted-mean";
}

UpdateScale parse_update_scale(std::string_view name) {
  if (name == "algorithm-verbatim") return UpdateScale::AlgorithmVerbatim;
  if (name == "weighted-mean") return UpdateScale::WeightedMean;
  throw std::invalid_argument("unknown update scale '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(step_size > 0.0)) throw std::invalid_argument("TrainConfig: step size must be positive");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  if (pilot_size < 2) throw std::invalid_argument("TrainConfig: pilot size must be >= 2");
  if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
  if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint interval must be >= 1");
  if (sgd_multiplier < 1) throw std::invalid_argument("TrainConfig: SGD multiplier must be >= 1");
  if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be non-negative");
}

std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Mssg: return "mssg";
    case Algorithm::Sgd: return "sgd";
    case Algorithm::Batch: return "batch";
    case Algorithm::StratifiedSt: return "gst";
    case Algorithm::FullGradient: return "fullgrad";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  for (auto a : {Algorithm::Mssg, Algorithm::Sgd, Algorithm::Batch, Algorithm::StratifiedSt, Algorithm::FullGradient})
    if (algorithm_name(a) == name) return a;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) + "'");
}

double accuracy(const MlpParams& params, const LabeledDataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty data");
  const auto pred = predict(params, data.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

MssgDirection::MssgDirection(const LabeledDataset& data, const TrainConfig& config)
    : data_(data), pilot_size_(config.pilot_size), lambda_(config.lambda), weights_(class_weights(data)) {
  check_classes(data);
  memory_.resize(data.num_classes());
}

Eigen::VectorXd MssgDirection::direction(const MlpParams& params, Rng& rng) {
  ++iteration_;
  const Eigen::Index n_params = params.flat().size();
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(n_params);
  for (std::size_t c = 0; c < data_.num_classes(); ++c) {
    const auto& idx = data_.class_index[c];
    const std::size_t pilot = std::min(pilot_size_, idx.size());
    if (pilot < 2) throw TrainingError(iteration_, "class " + std::to_string(c) + " too small for a pilot batch");
    std::vector<std::size_t> rows;
    for (auto k : rng.sample_without_replacement(idx.size(), pilot)) rows.push_back(idx[k]);
    const auto batch = gather(data_, rows);
    const auto moments = per_sample_moments(params, batch.features, batch.labels, lambda_);
    const Eigen::ArrayXd mean = moments.mean.flat().array();
    const Eigen::ArrayXd var = moments.variance.flat().array();

    auto& mem = memory_[c];
    if (mem.g.size() == 0) mem.g = Eigen::ArrayXd::Zero(n_params);
    const Eigen::ArrayXd fresh = sample_gradient(params, data_, idx[rng.index(idx.size())], lambda_).array();
    if (mem.mean_prev.size() == 0) {
      // First iteration: no previous moments, (p, q) = (0, 1).
      mem.g = mean - fresh;
    } else {
      const auto coeff = stabilized_coefficients(mem.mean_prev, mem.var_prev, mean, var);
      fallbacks_.zero_over_zero += coeff.zero_over_zero;
      fallbacks_.guarded += coeff.guarded;
      fallbacks_.memory_reset += coeff.memory_reset;
      mem.g = coeff.p * mem.g + coeff.q * (mean - fresh);
    }
    mem.mean_prev = mean;
    mem.var_prev = var;
    dir.array() += weights_[c] * (mem.g + mean);
  }
  return dir;
}

Eigen::VectorXd stratified_direction(const MlpParams& params, const LabeledDataset& data, double lambda, Rng& rng) {
  const auto weights = class_weights(data);
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(params.flat().size());
  for (std::size_t c = 0; c < data.num_classes(); ++c) {
    const auto& idx = data.class_index[c];
    dir += weights[c] * sample_gradient(params, data, idx[rng.index(idx.size())], lambda);
  }
  return dir;
}

TrainResult mssg_train(MlpParams params, const LabeledDataset& train, const LabeledDataset& test,
                       const TrainConfig& config) {
  config.validate();
  check_classes(train);
  TrainResult result;
  const Checkpointer checkpoint(train, test, config, Algorithm::Mssg);
  MssgDirection mssg(train, config);
  Rng rng = Rng::stream(config.seed, {kMssgStream});
  const double scale = config.update_scale == UpdateScale::AlgorithmVerbatim
                           ? config.step_size / static_cast<double>(train.num_classes())
                           : config.step_size;
  for (std::size_t k = 1; k <= config.iterations; ++k) {
    apply_step(params, mssg.direction(params, rng), scale, k);
    checkpoint.at(k, params, result.reports);
  }
  result.fallbacks = mssg.fallbacks();
  result.params = std::move(params);
  return result;
}

TrainResult baseline_train(MlpParams params, const LabeledDataset& train, const LabeledDataset& test,
                           const TrainConfig& config, BaselineKind kind) {
  config.validate();
  if (kind == BaselineKind::StratifiedSt) check_classes(train);
  if (train.size() == 0) throw std::invalid_argument("baseline_train: empty training set");
  TrainResult result;
  const Algorithm algorithm = kind == BaselineKind::Sgd     ? Algorithm::Sgd
                              : kind == BaselineKind::Batch ? Algorithm::Batch
                                                            : Algorithm::StratifiedSt;
  const Checkpointer checkpoint(train, test, config, algorithm);
  Rng rng = Rng::stream(config.seed, {kBaselineStream, static_cast<std::uint64_t>(kind)});
  if (kind == BaselineKind::Batch && config.batch_size > train.size())
    throw std::invalid_argument("baseline_train: batch size exceeds training set");

  for (std::size_t k = 1; k <= config.iterations; ++k) {
    switch (kind) {
      case BaselineKind::Sgd:
        for (std::size_t s = 0; s < config.sgd_multiplier; ++s)
          apply_step(params, sample_gradient(params, train, rng.index(train.size()), config.lambda), config.step_size, k);
        break;
      case BaselineKind::Batch: {
        auto rows = rng.sample_without_replacement(train.size(), config.batch_size);
        std::sort(rows.begin(), rows.end());
        const auto b = gather(train, rows);
        apply_step(params, loss_and_grad(params, b.features, b.labels, config.lambda).grad.flat(), config.step_size, k);
        break;
      }
      case BaselineKind::StratifiedSt:
        apply_step(params, stratified_direction(params, train, config.lambda, rng), config.step_size, k);
        break;
    }
    checkpoint.at(k, params, result.reports);
  }
  result.params = std::move(params);
  return result;
}

TrainResult full_gradient_fit(MlpParams params, const LabeledDataset& train, const LabeledDataset& test,
                              const TrainConfig& config) {
  config.validate();
  TrainResult result;
  const Checkpointer checkpoint(train, test, config, Algorithm::FullGradient);
  for (std::size_t k = 1; k <= config.iterations; ++k) {
    apply_step(params, loss_and_grad(params, train.features, train.labels, config.lambda).grad.flat(),
               config.step_size, k);
    checkpoint.at(k, params, result.reports);
  }
  result.params = std::move(params);
  return result;
}

TrainResult train(Algorithm algorithm, MlpParams params, const LabeledDataset& train_data, const LabeledDataset& test,
                  const TrainConfig& config) {
  switch (algorithm) {
    case Algorithm::Mssg: return mssg_train(std::move(params), train_data, test, config);
    case Algorithm::Sgd: return baseline_train(std::move(params), train_data, test, config, BaselineKind::Sgd);
    case Algorithm::Batch: return baseline_train(std::move(params), train_data, test, config, BaselineKind::Batch);
    case Algorithm::StratifiedSt:
      return baseline_train(std::move(params), train_data, test, config, BaselineKind::StratifiedSt);
    case Algorithm::FullGradient: return full_gradient_fit(std::move(params), train_data, test, config);
  }
  throw std::invalid_argument("train: unknown algorithm");
}

GridResult grid_search(const GridTrainFn& train_fn, std::span<const double> alphas, std::span<const double> lambdas,
                       std::size_t budget_iterations, const LabeledDataset& eval_data,
                       const LabeledDataset& train_data) {
  if (alphas.empty() || lambdas.empty()) throw std::invalid_argument("grid_search: empty grid");
  GridResult result;
  bool have_best = false;
  for (double a : alphas)
    for (double l : lambdas) {
      const MlpParams params = train_fn(a, l, budget_iterations);
      const GridCell cell{a, l, accuracy(params, eval_data), accuracy(params, train_data)};
      result.table.push_back(cell);
      const auto key = [](const GridCell& g) { return std::make_tuple(-g.test_accuracy, g.alpha, g.lambda); };
      if (!have_best || key(cell) < key(result.best)) {
        result.best = cell;
        have_best = true;
      }
    }
  return result;
}

}  // namespace stratgrad
