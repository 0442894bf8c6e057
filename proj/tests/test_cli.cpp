#include "oracles.hpp"

#include "commands.hpp"
#include "stratgrad/dataio.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

using namespace stratgrad;
using namespace stratgrad::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "stratgrad_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool have_mnist() {
  const auto d = default_mnist_dir();
  return !d.empty() && fs::exists(d);
}

}  // namespace

TEST_CASE("synthetic writes traces, summary, plot and manifest") {
  const auto dir = scratch("synthetic");
  SyntheticOptions o;
  o.seeds = 1;
  o.out_dir = dir / "a";
  const auto s = run_synthetic(o);
  REQUIRE(s.size() == 1);
  CHECK(s[0].family == "uniform-dec");
  for (const auto& d : s[0].by_estimator) {
    CHECK(d.n_seeds == 1);
    CHECK(d.n_rounds == 10);
    CHECK(std::isfinite(d.mean_sq_dev));
  }
  for (const char* f : {"uniform-dec_traces.csv", "uniform-dec_summary.csv", "uniform-dec_population.csv",
                        "uniform-dec_errors.svg", "manifest.txt"})
    CHECK(fs::exists(o.out_dir / f));

  const auto traces = oracle::slurp(o.out_dir / "uniform-dec_traces.csv");
  CHECK(traces.rfind("estimator,seed,round,estimate,truth,sq_dev\n", 0) == 0);
  CHECK(std::count(traces.begin(), traces.end(), '\n') == 1 + 4 * 10);

  const auto manifest = oracle::slurp(o.out_dir / "manifest.txt");
  CHECK(manifest.find("subcommand=synthetic") != std::string::npos);
  CHECK(manifest.find("output=uniform-dec_traces.csv") != std::string::npos);

  o.out_dir = dir / "b";
  o.manifest_out = dir / "elsewhere.txt";
  run_synthetic(o);
  CHECK(fs::exists(dir / "elsewhere.txt"));
  std::string why;
  CHECK(oracle::same_csv_outputs(dir / "a", dir / "b", &why));
  INFO(why);

  o.family = "nope";
  CHECK_THROWS_AS(run_synthetic(o), std::invalid_argument);
}

TEST_CASE("variance oracle on a hand-specified stratum") {
  const auto dir = scratch("oracle");
  VarianceOracleOptions o;
  o.stats = {2, 1, 1, 1};
  o.replications = 20000;
  o.out_dir = dir;
  const auto rows = run_variance_oracle(o);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].predicted == Catch::Approx(0.2).epsilon(1e-14));
  CHECK(std::abs(rows[0].z) < 3);
  CHECK(rows.back().label == "total");
  CHECK(fs::exists(dir / "variance_oracle.csv"));

  o.stats = {0, 0, 0, 0};
  const auto zero = run_variance_oracle(o);
  CHECK(zero[0].predicted == 0.0);
  CHECK(zero[0].empirical == 0.0);
  CHECK(zero[0].z == 0.0);

  o.stats = {1, 1, 1};
  CHECK_THROWS_AS(run_variance_oracle(o), std::invalid_argument);
  o.stats = {2, 1, 1, 1};
  o.replications = 9999;
  CHECK_THROWS_AS(run_variance_oracle(o), std::invalid_argument);
}

TEST_CASE("MNIST subcommands need a data directory") {
  if (have_mnist()) SKIP("MNIST_DIR is set");
  GradmatrixOptions g;
  g.out_dir = scratch("nodata");
  CHECK_THROWS(run_gradmatrix(g));
}

TEST_CASE("train and gridsearch at small scale") {
  if (!have_mnist()) SKIP("MNIST_DIR not set");
  const auto dir = scratch("train");
  TrainOptions t;
  t.config.iterations = 4;
  t.config.checkpoint_every = 2;
  t.config.step_size = 0.1;
  t.save_params = dir / "params.bin";
  t.out_dir = dir;
  const auto reports = run_train(t);
  REQUIRE(reports.size() == 2);
  CHECK(reports.back().iterations == 4);
  CHECK(reports.back().test_accuracy > 0.0);
  CHECK(fs::exists(dir / "accuracy.csv"));
  CHECK(read_params(dir / "params.bin", Activation::Tanh).shape() == MlpShape{{784, 50, 50, 20, 10}, Activation::Tanh});

  GridsearchOptions g;
  g.alphas = {0.1};
  g.lambdas = {0.001, 0.0001};
  g.config.iterations = 2;
  g.out_dir = dir / "grid";
  const auto r = run_gridsearch(g);
  CHECK(r.table.size() == 2);
  const auto csv = oracle::slurp(g.out_dir / "gridsearch.csv");
  CHECK(csv.rfind("alpha,lambda,test_accu,train_accu,best\n", 0) == 0);
}

TEST_CASE("gradmatrix at a reduced step count") {
  if (!have_mnist()) SKIP("MNIST_DIR not set");
  GradmatrixOptions g;
  g.steps = 2;
  g.replications = 2;
  g.out_dir = scratch("gradmatrix");
  const auto r = run_gradmatrix(g);
  CHECK(r.samples == 2000);
  CHECK(r.iterations == 2);
  for (const char* f : {"deviation_summary.csv", "gradmatrix_traces.csv", "gradmatrix.csv", "tracking_gmst.svg"})
    CHECK(fs::exists(g.out_dir / f));
}
