#pragma once

// Experiment subcommands. Each run_* writes its CSV/SVG outputs and a run
// manifest into out_dir and returns the headline numbers so tests can call
// the same code path the command line does.

#include "stratgrad/estimators.hpp"
#include "stratgrad/mlp.hpp"
#include "stratgrad/trainer.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stratgrad::cli {

extern const char* const kVersion;

struct SyntheticOptions {
  /// A family name, or "all".
  std::string family = "uniform-dec";
  std::size_t seeds = 1000;
  std::uint64_t seed = 1;
  std::size_t rounds = 10;
  std::size_t n_per_round = 40;
  std::size_t strata = 4;
  std::size_t per_stratum = 1;
  std::size_t batch_size = 4;
  std::filesystem::path out_dir = ".";
  std::filesystem::path manifest_out;
};

struct FamilySummary {
  std::string family;
  std::array<DeviationSummary, 4> by_estimator;  // indexed by Estimator
};

std::vector<FamilySummary> run_synthetic(const SyntheticOptions& o);

struct VarianceOracleOptions {
  /// Flattened (e_prev, v_prev, e_curr, v_curr) per stratum; empty means
  /// `random_tuples` random strata.
  std::vector<double> stats;
  /// Stratum weights; empty means equal weights.
  std::vector<double> weights;
  std::size_t random_tuples = 10;
  std::size_t replications = 100000;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = ".";
  std::filesystem::path manifest_out;
};

struct OracleRow {
  std::string label;  // stratum index or "total"
  double predicted;
  double empirical;
  double std_error;
  double z;
};

std::vector<OracleRow> run_variance_oracle(const VarianceOracleOptions& o);

struct MnistScale {
  /// 0 keeps the full training set.
  std::size_t per_class = 200;
  std::vector<Eigen::Index> layers = {784, 50, 50, 20, 10};
  Activation activation = Activation::Tanh;
};

MnistScale desk_scale();
MnistScale full_scale();

struct GradmatrixOptions {
  std::filesystem::path data_dir;
  bool desk = true;
  /// 0 picks the scale's default: 10 at desk scale, 60 at full scale.
  std::size_t steps = 0;
  double alpha = 0.2;
  double lambda = 0.001;
  std::size_t replications = 10;
  std::size_t batch_size = 10;
  std::uint64_t seed = 1;
  bool write_matrix = true;
  std::filesystem::path out_dir = ".";
  std::filesystem::path manifest_out;
};

struct GradmatrixResult {
  Eigen::Index samples = 0;
  Eigen::Index iterations = 0;
  std::array<DeviationSummary, 4> by_estimator;
};

GradmatrixResult run_gradmatrix(const GradmatrixOptions& o);

struct TrainOptions {
  std::string algorithm = "mssg";
  std::filesystem::path data_dir;
  bool desk = true;
  TrainConfig config;
  std::filesystem::path save_params;
  std::filesystem::path out_dir = ".";
  std::filesystem::path manifest_out;
};

std::vector<AccuracyReport> run_train(const TrainOptions& o);

struct GridsearchOptions {
  std::string algorithm = "mssg";
  std::filesystem::path data_dir;
  bool desk = true;
  std::vector<double> alphas = {0.01, 1.0, 0.001};
  std::vector<double> lambdas = {0.001, 0.0001};
  TrainConfig config;  // iterations is the per-cell budget
  std::filesystem::path out_dir = ".";
  std::filesystem::path manifest_out;
};

GridResult run_gridsearch(const GridsearchOptions& o);

}  // namespace stratgrad::cli
