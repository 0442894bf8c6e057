#include "commands.hpp"

#include "stratgrad/dataio.hpp"
#include "stratgrad/population.hpp"
#include "stratgrad/rng.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace stratgrad::cli {

#ifndef STRATGRAD_VERSION
#define STRATGRAD_VERSION "dev"
#endif

const char* const kVersion = STRATGRAD_VERSION;

namespace fs = std::filesystem;

namespace {

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string str(std::size_t v) { return std::to_string(v); }
std::string str(double v) { return format_double(v); }

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_double(v[i]);
  return s;
}

std::string join(const std::vector<Eigen::Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

void finish(const std::string& subcommand, const fs::path& out_dir, const fs::path& manifest_out,
            std::vector<std::pair<std::string, std::string>> config, std::uint64_t seed,
            std::vector<fs::path> outputs, const Stopwatch& clock) {
  RunManifest m;
  m.subcommand = subcommand;
  m.config = std::move(config);
  m.seed = seed;
  m.version = kVersion;
  m.wall_seconds = clock.seconds();
  m.outputs = std::move(outputs);
  write_manifest(manifest_out.empty() ? out_dir / "manifest.txt" : manifest_out, m);
}

std::vector<std::string> summary_row(std::string_view name, const DeviationSummary& d) {
  return {std::string(name), format_double(d.mean_sq_dev), format_double(d.std_sq_dev), str(d.n_rounds),
          str(d.n_seeds)};
}

const std::vector<std::string> kTraceHeader = {"estimator", "seed", "round", "estimate", "truth", "sq_dev"};
const std::vector<std::string> kSummaryHeader = {"estimator", "mean_sq_dev", "std_sq_dev", "n_rounds", "n_seeds"};

void append_traces(std::vector<std::vector<std::string>>& rows, const TraceSet& set, std::uint64_t seed) {
  for (auto e : kEstimators)
    for (const auto& t : set[e])
      rows.push_back({std::string(estimator_name(e)), std::to_string(seed), str(t.iteration),
                      format_double(t.estimate), format_double(t.truth), format_double(t.sq_dev)});
}

fs::path resolve_data_dir(const fs::path& given) {
  fs::path dir = given.empty() ? default_mnist_dir() : given;
  if (dir.empty()) throw std::runtime_error("no MNIST directory: pass --data-dir or set MNIST_DIR");
  return dir;
}

MnistFiles load_scaled(const fs::path& data_dir, const MnistScale& scale, std::uint64_t seed) {
  MnistFiles files = load_mnist(resolve_data_dir(data_dir));
  if (scale.per_class > 0) files.train = subsample(files.train, scale.per_class, seed);
  return files;
}

MlpShape shape_of(const MnistScale& scale) { return MlpShape{scale.layers, scale.activation}; }

// Strata of a column-replay population: per class, the matrix entries of its rows.
PopulationRound column_rounds(const Eigen::MatrixXd& g, const LabeledDataset& data) {
  std::vector<StratifiedPopulation> rounds;
  for (Eigen::Index t = 0; t < g.cols(); ++t) {
    std::vector<Stratum> strata;
    for (std::size_t c = 0; c < data.num_classes(); ++c) {
      const auto& idx = data.class_index[c];
      Eigen::ArrayXd v(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) v[static_cast<Eigen::Index>(i)] = g(static_cast<Eigen::Index>(idx[i]), t);
      strata.push_back({std::move(v), static_cast<int>(c)});
    }
    rounds.emplace_back(std::move(strata));
  }
  return PopulationRound(std::move(rounds));
}

struct Moments {
  double variance;  // population convention
  double std_error;
};

// Variance of xs and the standard error of that estimate, sqrt((m4 - s^4) / n).
Moments variance_with_error(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d2 = (x - mean) * (x - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  return {m2, std::sqrt(std::max(0.0, m4 - m2 * m2) / n)};
}

}  // namespace

MnistScale desk_scale() { return {}; }

MnistScale full_scale() { return {0, {784, 500, 500, 200, 10}, Activation::Tanh}; }

std::vector<FamilySummary> run_synthetic(const SyntheticOptions& o) {
  Stopwatch clock;
  if (o.seeds < 1) throw std::invalid_argument("synthetic: need at least one seed");
  std::vector<Trend> families;
  if (o.family == "all")
    families = all_trends();
  else
    families.push_back(parse_trend(o.family));
  fs::create_directories(o.out_dir);

  std::vector<FamilySummary> result;
  std::vector<fs::path> outputs;
  for (Trend t : families) {
    const std::string name(trend_name(t));
    std::array<std::vector<std::vector<EstimateTrace>>, 4> runs;
    std::vector<std::vector<std::string>> trace_rows;
    std::vector<std::vector<std::string>> population_rows;
    for (std::size_t s = 0; s < o.seeds; ++s) {
      const std::uint64_t seed = o.seed + s;
      const PopulationRound rounds = gen_family(t, seed, o.rounds, o.n_per_round, o.strata);
      if (s == 0)
        for (std::size_t k = 0; k < rounds.size(); ++k)
          for (std::size_t j = 0; j < rounds[k].num_strata(); ++j)
            for (double v : rounds[k].stratum(j).values)
              population_rows.push_back({str(k + 1), std::to_string(rounds[k].stratum(j).label), format_double(v)});
      const TraceSet set = trace_estimators(rounds, o.per_stratum, o.batch_size, seed);
      append_traces(trace_rows, set, seed);
      for (auto e : kEstimators) runs[static_cast<std::size_t>(e)].push_back(set[e]);
    }

    FamilySummary fam{name, {}};
    std::vector<std::vector<std::string>> summary_rows;
    std::vector<Series> curves;
    for (auto e : kEstimators) {
      const auto& r = runs[static_cast<std::size_t>(e)];
      fam.by_estimator[static_cast<std::size_t>(e)] = summarize(r);
      summary_rows.push_back(summary_row(estimator_name(e), fam.by_estimator[static_cast<std::size_t>(e)]));
      Series curve{std::string(estimator_name(e)), std::vector<double>(o.rounds, 0.0)};
      for (const auto& trace : r)
        for (std::size_t k = 0; k < trace.size(); ++k) curve.values[k] += trace[k].sq_dev / static_cast<double>(r.size());
      curves.push_back(std::move(curve));
    }

    const fs::path traces = o.out_dir / (name + "_traces.csv");
    const fs::path summary = o.out_dir / (name + "_summary.csv");
    const fs::path population = o.out_dir / (name + "_population.csv");
    const fs::path svg = o.out_dir / (name + "_errors.svg");
    write_table(traces, kTraceHeader, trace_rows);
    write_table(summary, kSummaryHeader, summary_rows);
    write_table(population, {"round", "stratum", "value"}, population_rows);
    write_svg_lineplot(svg, curves, {name + ": mean squared deviation over " + str(o.seeds) + " seeds", "round", "sq_dev"});
    outputs.insert(outputs.end(), {traces, summary, population, svg});
    result.push_back(std::move(fam));
  }

  finish("synthetic", o.out_dir, o.manifest_out,
         {{"family", o.family},
          {"seeds", str(o.seeds)},
          {"rounds", str(o.rounds)},
          {"n_per_round", str(o.n_per_round)},
          {"strata", str(o.strata)},
          {"per_stratum", str(o.per_stratum)},
          {"batch_size", str(o.batch_size)},
          {"normal_schedules", "random: mu,sigma~U[1,20]; mean ramps 20<->2 sigma 5; sigma ramps 20<->2 mu 10"}},
         o.seed, outputs, clock);
  return result;
}

std::vector<OracleRow> run_variance_oracle(const VarianceOracleOptions& o) {
  Stopwatch clock;
  if (o.replications < 10000) throw std::invalid_argument("variance-oracle: need at least 10^4 replications");
  std::vector<double> stats = o.stats;
  if (stats.empty()) {
    if (o.random_tuples == 0) throw std::invalid_argument("variance-oracle: no statistics given");
    Rng rng = Rng::stream(o.seed, {0x7475706c});
    for (std::size_t i = 0; i < o.random_tuples; ++i) {
      const auto mean = [&] { return (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 5.0); };
      const double e_prev = mean(), v_prev = rng.uniform(0.1, 4.0);
      const double e_curr = mean(), v_curr = rng.uniform(0.1, 4.0);
      stats.insert(stats.end(), {e_prev, v_prev, e_curr, v_curr});
    }
  }
  if (stats.size() % 4 != 0) throw std::invalid_argument("variance-oracle: statistics come in groups of four");
  const std::size_t strata = stats.size() / 4;
  std::vector<StratumStats> prev(strata), curr(strata);
  for (std::size_t j = 0; j < strata; ++j) {
    prev[j] = {stats[4 * j], stats[4 * j + 1]};
    curr[j] = {stats[4 * j + 2], stats[4 * j + 3]};
    if (!(prev[j].variance >= 0.0) || !(curr[j].variance >= 0.0))
      throw std::invalid_argument("variance-oracle: negative variance in stratum " + str(j));
  }
  std::vector<double> weights = o.weights;
  if (weights.empty()) weights.assign(strata, 1.0 / static_cast<double>(strata));
  if (weights.size() != strata) throw std::invalid_argument("variance-oracle: one weight per stratum required");

  std::vector<Coefficients<double>> coeff(strata);
  for (std::size_t j = 0; j < strata; ++j)
    coeff[j] = optimal_coefficients(prev[j].mean, prev[j].variance, curr[j].mean, curr[j].variance);

  // The memory term and the fresh draw are independent normals with the
  // previous and current moments.
  std::vector<std::vector<double>> per_stratum(strata, std::vector<double>(o.replications));
  std::vector<double> total(o.replications, 0.0);
  Rng rng = Rng::stream(o.seed, {0x6d63});
  for (std::size_t r = 0; r < o.replications; ++r)
    for (std::size_t j = 0; j < strata; ++j) {
      const double memory = rng.normal(prev[j].mean, std::sqrt(prev[j].variance));
      const double fresh = rng.normal(curr[j].mean, std::sqrt(curr[j].variance));
      const double g = coeff[j].p * memory + coeff[j].q * fresh;
      per_stratum[j][r] = g;
      total[r] += weights[j] * g;
    }

  const auto row = [](std::string label, double predicted, const std::vector<double>& xs) {
    const Moments m = variance_with_error(xs);
    double z = 0.0;
    if (std::abs(m.variance - predicted) > 1e-12 * (1.0 + std::abs(predicted)))
      z = (m.variance - predicted) / m.std_error;
    return OracleRow{std::move(label), predicted, m.variance, m.std_error, z};
  };
  std::vector<OracleRow> rows;
  const std::vector<double> one = {1.0};
  for (std::size_t j = 0; j < strata; ++j)
    rows.push_back(row(str(j), predicted_variance_vsp(std::span(&prev[j], 1), std::span(&curr[j], 1), one),
                       per_stratum[j]));
  rows.push_back(row("total", predicted_variance_vsp(prev, curr, weights), total));

  fs::create_directories(o.out_dir);
  std::vector<std::vector<std::string>> table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (i < strata)
      table.push_back({r.label, format_double(prev[i].mean), format_double(prev[i].variance), format_double(curr[i].mean),
                       format_double(curr[i].variance), format_double(weights[i]), format_double(r.predicted),
                       format_double(r.empirical), format_double(r.std_error), format_double(r.z)});
    else
      table.push_back({r.label, "", "", "", "", "1", format_double(r.predicted), format_double(r.empirical),
                       format_double(r.std_error), format_double(r.z)});
  }
  const fs::path csv = o.out_dir / "variance_oracle.csv";
  write_table(csv,
              {"stratum", "e_prev", "v_prev", "e_curr", "v_curr", "weight", "predicted", "empirical", "std_error", "z"},
              table);
  finish("variance-oracle", o.out_dir, o.manifest_out,
         {{"stats", join(stats)}, {"weights", join(weights)}, {"replications", str(o.replications)}}, o.seed, {csv},
         clock);
  return rows;
}

GradmatrixResult run_gradmatrix(const GradmatrixOptions& o) {
  Stopwatch clock;
  if (o.replications < 1) throw std::invalid_argument("gradmatrix: need at least one replication");
  const MnistScale scale = o.desk ? desk_scale() : full_scale();
  const std::size_t steps = o.steps ? o.steps : (o.desk ? 10 : 60);
  const MnistFiles data = load_scaled(o.data_dir, scale, o.seed);
  const MlpShape shape = shape_of(scale);

  std::vector<MlpParams> snapshots;
  full_gradient_train(init_params(shape, o.seed), data.train.features, data.train.labels, steps, o.alpha, o.lambda,
                      [&](std::size_t, const MlpParams& p) { snapshots.push_back(p); });
  const TrackedWeight tracked = output_tracked_weight(shape);
  const Eigen::MatrixXd g = record_weight_gradient(snapshots, data.train.features, data.train.labels, tracked, o.lambda);
  const PopulationRound rounds = column_rounds(g, data.train);

  GradmatrixResult result{g.rows(), g.cols(), {}};
  std::array<std::vector<std::vector<EstimateTrace>>, 4> runs;
  std::vector<std::vector<std::string>> trace_rows;
  for (std::size_t r = 0; r < o.replications; ++r) {
    const std::uint64_t seed = Rng::stream(o.seed, {0x67726164, r}).next();
    const TraceSet set = trace_estimators(rounds, 1, o.batch_size, seed);
    append_traces(trace_rows, set, r + 1);
    for (auto e : kEstimators) runs[static_cast<std::size_t>(e)].push_back(set[e]);
  }

  fs::create_directories(o.out_dir);
  std::vector<fs::path> outputs;
  std::vector<std::vector<std::string>> summary_rows;
  for (auto e : kEstimators) {
    const auto i = static_cast<std::size_t>(e);
    result.by_estimator[i] = summarize(runs[i]);
    summary_rows.push_back(summary_row(estimator_name(e), result.by_estimator[i]));

    Series truth{"true", {}}, estimate{std::string(estimator_name(e)), {}};
    for (const auto& t : runs[i].front()) {
      truth.values.push_back(t.truth);
      estimate.values.push_back(t.estimate);
    }
    const fs::path svg = o.out_dir / ("tracking_" + estimate.name + ".svg");
    const std::vector<Series> series = {truth, estimate};
    write_svg_lineplot(svg, series, {estimate.name + " vs the true gradient of the tracked weight", "iteration", "gradient"});
    outputs.push_back(svg);
  }
  const fs::path summary = o.out_dir / "deviation_summary.csv";
  const fs::path traces = o.out_dir / "gradmatrix_traces.csv";
  write_table(summary, kSummaryHeader, summary_rows);
  write_table(traces, kTraceHeader, trace_rows);
  outputs.insert(outputs.end(), {summary, traces});
  if (o.write_matrix) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(static_cast<std::size_t>(g.size()));
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index t = 0; t < g.cols(); ++t) rows.push_back({std::to_string(i), std::to_string(t + 1), format_double(g(i, t))});
    const fs::path matrix = o.out_dir / "gradmatrix.csv";
    write_table(matrix, {"sample", "iteration", "grad"}, rows);
    outputs.push_back(matrix);
  }
  finish("gradmatrix", o.out_dir, o.manifest_out,
         {{"scale", o.desk ? "desk" : "full"},
          {"layers", join(scale.layers)},
          {"activation", std::string(activation_name(scale.activation))},
          {"per_class", str(scale.per_class)},
          {"steps", str(steps)},
          {"alpha", str(o.alpha)},
          {"lambda", str(o.lambda)},
          {"replications", str(o.replications)},
          {"batch_size", str(o.batch_size)},
          {"tracked_weight", "layer " + str(tracked.layer) + " in " + std::to_string(tracked.in_index) + " out " +
                                 std::to_string(tracked.out_index)}},
         o.seed, outputs, clock);
  return result;
}

namespace {

std::vector<std::pair<std::string, std::string>> config_echo(const std::string& algorithm, const MnistScale& scale,
                                                             const TrainConfig& c) {
  return {{"algorithm", algorithm},
          {"layers", join(scale.layers)},
          {"activation", std::string(activation_name(scale.activation))},
          {"per_class", str(scale.per_class)},
          {"h", str(c.step_size)},
          {"lambda", str(c.lambda)},
          {"batch_size", str(c.batch_size)},
          {"pilot_size", str(c.pilot_size)},
          {"iterations", str(c.iterations)},
          {"checkpoint_every", str(c.checkpoint_every)},
          {"sgd_multiplier", str(c.sgd_multiplier)},
          {"update_scale", std::string(update_scale_name(c.update_scale))}};
}

}  // namespace

std::vector<AccuracyReport> run_train(const TrainOptions& o) {
  Stopwatch clock;
  const Algorithm algorithm = parse_algorithm(o.algorithm);
  o.config.validate();
  const MnistScale scale = o.desk ? desk_scale() : full_scale();
  const MnistFiles data = load_scaled(o.data_dir, scale, o.config.seed);
  TrainResult result =
      train(algorithm, init_params(shape_of(scale), o.config.seed), data.train, data.test, o.config);

  fs::create_directories(o.out_dir);
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : result.reports)
    rows.push_back({format_double(static_cast<double>(r.iterations) / 1000.0), r.algorithm,
                    format_double(r.test_accuracy), format_double(r.train_accuracy), format_double(r.h),
                    format_double(r.lambda), std::to_string(r.seed)});
  const fs::path csv = o.out_dir / "accuracy.csv";
  write_table(csv, {"iterations_k", "algorithm", "test_accu", "train_accu", "h", "lambda", "seed"}, rows);
  std::vector<fs::path> outputs = {csv};
  if (!o.save_params.empty()) {
    write_params(result.params, o.save_params);
    outputs.push_back(o.save_params);
  }
  auto config = config_echo(o.algorithm, scale, o.config);
  config.push_back({"fallback_zero_over_zero", str(result.fallbacks.zero_over_zero)});
  config.push_back({"fallback_guarded", str(result.fallbacks.guarded)});
  config.push_back({"fallback_memory_reset", str(result.fallbacks.memory_reset)});
  finish("train", o.out_dir, o.manifest_out, std::move(config), o.config.seed, outputs, clock);
  return result.reports;
}

GridResult run_gridsearch(const GridsearchOptions& o) {
  Stopwatch clock;
  const Algorithm algorithm = parse_algorithm(o.algorithm);
  o.config.validate();
  const MnistScale scale = o.desk ? desk_scale() : full_scale();
  const MnistFiles data = load_scaled(o.data_dir, scale, o.config.seed);
  const MlpParams start = init_params(shape_of(scale), o.config.seed);
  const GridTrainFn fn = [&](double alpha, double lambda, std::size_t iterations) {
    TrainConfig c = o.config;
    c.step_size = alpha;
    c.lambda = lambda;
    c.iterations = iterations;
    c.checkpoint_every = iterations;
    return train(algorithm, start, data.train, data.test, c).params;
  };
  const GridResult grid = grid_search(fn, o.alphas, o.lambdas, o.config.iterations, data.test, data.train);

  fs::create_directories(o.out_dir);
  std::vector<std::vector<std::string>> rows;
  for (const auto& cell : grid.table) {
    const bool best = cell.alpha == grid.best.alpha && cell.lambda == grid.best.lambda;
    rows.push_back({format_double(cell.alpha), format_double(cell.lambda), format_double(cell.test_accuracy),
                    format_double(cell.train_accuracy), best ? "1" : "0"});
  }
  const fs::path csv = o.out_dir / "gridsearch.csv";
  write_table(csv, {"alpha", "lambda", "test_accu", "train_accu", "best"}, rows);
  auto config = config_echo(o.algorithm, scale, o.config);
  config.push_back({"alphas", join(o.alphas)});
  config.push_back({"lambdas", join(o.lambdas)});
  finish("gridsearch", o.out_dir, o.manifest_out, std::move(config), o.config.seed, {csv}, clock);
  return grid;
}

}  // namespace stratgrad::cli
