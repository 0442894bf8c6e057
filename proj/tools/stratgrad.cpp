// stratgrad: experiment harness for the memory-type stratified gradient estimator.

#include "commands.hpp"

#include "stratgrad/dataio.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>

namespace sg = stratgrad;
namespace cli = stratgrad::cli;

namespace {

void add_output_flags(CLI::App* cmd, std::filesystem::path& out_dir, std::filesystem::path& manifest_out) {
  cmd->add_option("--out-dir", out_dir, "Directory for CSV/SVG outputs")->capture_default_str();
  cmd->add_option("--manifest-out", manifest_out, "Run manifest path (default: <out-dir>/manifest.txt)");
}

void add_train_flags(CLI::App* cmd, sg::TrainConfig& c, std::string& update_scale) {
  cmd->add_option("--step-size", c.step_size, "Step size h")->capture_default_str();
  cmd->add_option("--lambda", c.lambda, "Weight-decay coefficient")->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size, "Mini-batch size B (batch trainer)")->capture_default_str();
  cmd->add_option("--pilot-size", c.pilot_size, "Pilot samples per class (mssg)")->capture_default_str();
  cmd->add_option("--iterations", c.iterations, "Training iterations")->capture_default_str();
  cmd->add_option("--checkpoint-every", c.checkpoint_every, "Accuracy checkpoint interval")->capture_default_str();
  cmd->add_option("--sgd-multiplier", c.sgd_multiplier, "SGD steps per iteration")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Seed for init, subsampling and sampling")->capture_default_str();
  cmd->add_option("--update-scale", update_scale, "mssg step scaling: algorithm-verbatim (h/C) or weighted-mean (h)")
      ->capture_default_str()
      ->check(CLI::IsMember({"algorithm-verbatim", "weighted-mean"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stratified gradient estimators: synthetic, variance, MNIST and training experiments"};
  app.set_version_flag("--version", std::string(cli::kVersion));
  app.require_subcommand(1);

  cli::SyntheticOptions syn;
  auto* synthetic = app.add_subcommand("synthetic", "Error curves of the four estimators on synthetic populations");
  synthetic->add_option("--family", syn.family,
                        "uniform-dec, uniform-inc, normal-random, normal-mean-dec, normal-mean-inc, normal-var-dec, "
                        "normal-var-inc or all")
      ->capture_default_str();
  synthetic->add_option("--seeds", syn.seeds, "Number of seeded repetitions")->capture_default_str();
  synthetic->add_option("--seed", syn.seed, "First seed")->capture_default_str();
  synthetic->add_option("--rounds", syn.rounds, "Rounds per population")->capture_default_str();
  synthetic->add_option("--n-per-round", syn.n_per_round, "Values per round")->capture_default_str();
  synthetic->add_option("--strata", syn.strata, "Contiguous strata per round")->capture_default_str();
  synthetic->add_option("--per-stratum", syn.per_stratum, "Draws per stratum (gst, gmst)")->capture_default_str();
  synthetic->add_option("--batch-size", syn.batch_size, "Pooled draws for batch")->capture_default_str();
  add_output_flags(synthetic, syn.out_dir, syn.manifest_out);

  cli::VarianceOracleOptions vo;
  auto* oracle = app.add_subcommand("variance-oracle", "Predicted minimal variance against Monte-Carlo");
  oracle->add_option("--stats", vo.stats, "e_prev v_prev e_curr v_curr per stratum (repeatable groups of four)")
      ->delimiter(',');
  oracle->add_option("--weights", vo.weights, "Stratum weights (default equal)")->delimiter(',');
  oracle->add_option("--random-tuples", vo.random_tuples, "Random strata when --stats is absent")->capture_default_str();
  oracle->add_option("--replications", vo.replications, "Monte-Carlo replications (>= 10000)")->capture_default_str();
  oracle->add_option("--seed", vo.seed, "Seed")->capture_default_str();
  add_output_flags(oracle, vo.out_dir, vo.manifest_out);

  cli::GradmatrixOptions gm;
  bool gm_full = false;
  auto* gradmatrix =
      app.add_subcommand("gradmatrix", "Per-sample gradient matrix of one output weight and estimator tracking");
  gradmatrix->add_option("--data-dir", gm.data_dir, "MNIST directory (default: $MNIST_DIR)");
  gradmatrix->add_flag("--full-scale", gm_full, "60,000 samples, [784,500,500,200,10], 60 steps (slow)");
  gradmatrix->add_option("--steps", gm.steps, "Full-gradient steps (0: 10 desk, 60 full)")->capture_default_str();
  gradmatrix->add_option("--alpha", gm.alpha, "Full-gradient step size")->capture_default_str();
  gradmatrix->add_option("--lambda", gm.lambda, "Weight-decay coefficient")->capture_default_str();
  gradmatrix->add_option("--replications", gm.replications, "Estimator replays over the matrix")->capture_default_str();
  gradmatrix->add_option("--batch-size", gm.batch_size, "Pooled draws for batch")->capture_default_str();
  gradmatrix->add_option("--seed", gm.seed, "Seed")->capture_default_str();
  gradmatrix->add_flag("!--no-matrix", gm.write_matrix, "Skip writing gradmatrix.csv");
  add_output_flags(gradmatrix, gm.out_dir, gm.manifest_out);

  cli::TrainOptions tr;
  bool tr_full = false;
  std::string tr_scale = "algorithm-verbatim";
  auto* train = app.add_subcommand("train", "Train on MNIST with checkpointed accuracy");
  train->add_option("--algorithm", tr.algorithm, "mssg, sgd, batch, gst or fullgrad")
      ->capture_default_str()
      ->check(CLI::IsMember({"mssg", "sgd", "batch", "gst", "fullgrad"}));
  train->add_option("--data-dir", tr.data_dir, "MNIST directory (default: $MNIST_DIR)");
  train->add_flag("--full-scale", tr_full, "Full training set and [784,500,500,200,10]");
  train->add_option("--save-params", tr.save_params, "Write final parameters (MLP1 binary)");
  add_train_flags(train, tr.config, tr_scale);
  add_output_flags(train, tr.out_dir, tr.manifest_out);

  cli::GridsearchOptions gs;
  bool gs_full = false;
  std::string gs_scale = "algorithm-verbatim";
  auto* grid = app.add_subcommand("gridsearch", "Grid over step size and weight decay");
  grid->add_option("--algorithm", gs.algorithm, "mssg, sgd, batch, gst or fullgrad")
      ->capture_default_str()
      ->check(CLI::IsMember({"mssg", "sgd", "batch", "gst", "fullgrad"}));
  grid->add_option("--data-dir", gs.data_dir, "MNIST directory (default: $MNIST_DIR)");
  grid->add_flag("--full-scale", gs_full, "Full training set and [784,500,500,200,10]");
  grid->add_option("--alphas", gs.alphas, "Step sizes")->delimiter(',')->capture_default_str();
  grid->add_option("--lambdas", gs.lambdas, "Weight-decay coefficients")->delimiter(',')->capture_default_str();
  add_train_flags(grid, gs.config, gs_scale);
  add_output_flags(grid, gs.out_dir, gs.manifest_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synthetic) {
      for (const auto& fam : cli::run_synthetic(syn)) {
        std::printf("%s\n", fam.family.c_str());
        for (auto e : sg::kEstimators) {
          const auto& d = fam.by_estimator[static_cast<std::size_t>(e)];
          std::printf("  %-6s mean %.6g  std %.6g\n", std::string(sg::estimator_name(e)).c_str(), d.mean_sq_dev,
                      d.std_sq_dev);
        }
      }
    } else if (*oracle) {
      for (const auto& r : cli::run_variance_oracle(vo))
        std::printf("%-6s predicted %.6g  empirical %.6g  z %+.3f\n", r.label.c_str(), r.predicted, r.empirical, r.z);
    } else if (*gradmatrix) {
      gm.desk = !gm_full;
      const auto res = cli::run_gradmatrix(gm);
      std::printf("matrix %lldx%lld\n", static_cast<long long>(res.samples), static_cast<long long>(res.iterations));
      for (auto e : sg::kEstimators) {
        const auto& d = res.by_estimator[static_cast<std::size_t>(e)];
        std::printf("  %-6s mean %.6g  std %.6g\n", std::string(sg::estimator_name(e)).c_str(), d.mean_sq_dev,
                    d.std_sq_dev);
      }
    } else if (*train) {
      tr.desk = !tr_full;
      tr.config.update_scale = sg::parse_update_scale(tr_scale);
      for (const auto& r : cli::run_train(tr))
        std::printf("%6zu %-8s test %.4f  train %.4f\n", r.iterations, r.algorithm.c_str(), r.test_accuracy,
                    r.train_accuracy);
    } else if (*grid) {
      gs.desk = !gs_full;
      gs.config.update_scale = sg::parse_update_scale(gs_scale);
      const auto res = cli::run_gridsearch(gs);
      for (const auto& c : res.table)
        std::printf("alpha %-8g lambda %-8g test %.4f  train %.4f\n", c.alpha, c.lambda, c.test_accuracy,
                    c.train_accuracy);
      std::printf("best alpha %g lambda %g\n", res.best.alpha, res.best.lambda);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stratgrad: %s\n", e.what());
    return 1;
  }
  return 0;
}
