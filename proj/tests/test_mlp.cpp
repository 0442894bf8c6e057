#include "oracles.hpp"

#include "stratgrad/mlp.hpp"
#include "stratgrad/rng.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace stratgrad;
using Catch::Approx;

namespace {

struct Toy {
  RowMatrixXd x;
  std::vector<int> y;
};

Toy toy_data(Eigen::Index n, Eigen::Index d, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Toy t{RowMatrixXd(n, d), {}};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) t.x(i, j) = rng.uniform();
    t.y.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(classes))));
  }
  return t;
}

double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-6}));
  return worst;
}

}  // namespace

TEST_CASE("shape validation and parameter layout") {
  CHECK_THROWS_AS(MlpShape{{3}}.validate(), std::invalid_argument);
  CHECK_THROWS_AS((MlpShape{{3, 0, 2}}.validate()), std::invalid_argument);
  const MlpShape s{{2, 2}};
  const auto p = init_params(s, 1);
  CHECK(p.num_layers() == 1);
  CHECK(p.weight(0).rows() == 2);
  CHECK(p.weight(0).cols() == 2);
  CHECK(p.bias(0).size() == 2);
  CHECK(p.bias(0).isZero());
  CHECK(MlpShape{{784, 500, 500, 200, 10}}.parameter_count() == 784 * 500 + 500 + 500 * 500 + 500 + 500 * 200 + 200 + 200 * 10 + 10);
  CHECK(p.weight_mask().sum() == 4);
}

TEST_CASE("init is seeded and scaled by fan-in") {
  const MlpShape s{{784, 500}};
  const auto a = init_params(s, 3), b = init_params(s, 3), c = init_params(s, 4);
  CHECK(a.flat() == b.flat());
  CHECK(a.flat() != c.flat());
  const auto w = a.weight(0);
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().mean());
  CHECK(std::abs(sd - 1.0 / std::sqrt(784.0)) < 0.1 / std::sqrt(784.0));
}

TEST_CASE("forward: symmetry, simplex and hand arithmetic") {
  const MlpParams zero(MlpShape{{5, 4, 3}});
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(5, -1, 1);
  CHECK(forward(zero, x).isApprox(Eigen::VectorXd::Constant(3, 1.0 / 3), 1e-15));

  const auto p = init_params(MlpShape{{6, 5, 4, 3}}, 9);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd in(6);
    for (auto& v : in) v = rng.normal(0, 20);
    const auto out = forward(p, in);
    CHECK((out.array() >= 0).all());
    CHECK(std::abs(out.sum() - 1) <= 1e-9);
  }

  // 2-2-2 network, sigmoid hidden layer.
  MlpParams h(MlpShape{{2, 2, 2}, Activation::Sigmoid});
  h.weight(0) << 0.5, -1.0,   // from input 0
                 2.0, 0.25;   // from input 1
  h.bias(0) << 0.1, -0.2;
  h.weight(1) << 1.0, -1.0, 0.5, 2.0;
  h.bias(1) << 0.0, 0.3;
  const Eigen::Vector2d in(1.0, 2.0);
  const double z0 = 0.5 * 1 + 2.0 * 2 + 0.1, z1 = -1.0 * 1 + 0.25 * 2 - 0.2;
  const double a0 = 1 / (1 + std::exp(-z0)), a1 = 1 / (1 + std::exp(-z1));
  const double o0 = 1.0 * a0 + 0.5 * a1, o1 = -1.0 * a0 + 2.0 * a1 + 0.3;
  const double p1 = 1 / (1 + std::exp(o0 - o1));
  const auto out = forward(h, in);
  CHECK(out[1] == Approx(p1).epsilon(1e-12));
  CHECK(out[0] == Approx(1 - p1).epsilon(1e-12));
  CHECK_THROWS_AS(forward(h, Eigen::Vector3d::Zero()), std::invalid_argument);
}

TEST_CASE("loss values") {
  const auto t = toy_data(7, 4, 3, 2);
  const MlpParams zero(MlpShape{{4, 3, 3}});
  CHECK(loss(zero, t.x, t.y, 0.1) == Approx(std::log(3.0)).epsilon(1e-14));

  const auto p = init_params(MlpShape{{4, 3, 3}}, 5);
  const auto probs = forward(p, t.x.row(0).transpose());
  const std::vector<int> y0 = {t.y[0]};
  CHECK(loss(p, t.x.topRows(1), y0, 0.0) == Approx(-std::log(probs[t.y[0]])).epsilon(1e-13));

  const double decay = 0.5 * 0.01 * (p.flat().array() * p.weight_mask()).square().sum();
  CHECK(loss(p, t.x, t.y, 0.01) == Approx(loss(p, t.x, t.y, 0.0) + decay).epsilon(1e-13));

  const std::vector<int> bad = {0, 1, 3, 0, 0, 0, 0};
  CHECK_THROWS_AS(loss_and_grad(p, t.x, bad, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(loss_and_grad(p, t.x.leftCols(3), t.y, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(loss_and_grad(p, t.x.topRows(0), std::span<const int>{}, 0.0), std::invalid_argument);
}

TEST_CASE("analytic gradient against central differences") {
  for (auto act : {Activation::Sigmoid, Activation::Tanh}) {
    for (const std::vector<Eigen::Index>& layers : {std::vector<Eigen::Index>{4, 3, 2}, {6, 5, 4, 3}}) {
      const MlpShape shape{layers, act};
      auto p = init_params(shape, 17);
      for (auto& b : p.flat()) b += 0.05;  // nonzero biases
      const auto t = toy_data(5, layers.front(), static_cast<int>(layers.back()), 3);
      const auto analytic = loss_and_grad(p, t.x, t.y, 0.01).grad.flat();
      const auto numeric = oracle::finite_difference_grad(p, t.x, t.y, 0.01);
      INFO(activation_name(act) << " " << layers.size() << " layers");
      CHECK(max_relative_error(analytic, numeric) < 1e-5);
    }
  }
}

TEST_CASE("chunked reduction matches per-row sums") {
  const auto t = toy_data(2500, 3, 4, 8);
  const auto p = init_params(MlpShape{{3, 5, 4}}, 2);
  const auto full = loss_and_grad(p, t.x, t.y, 0.0);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(p.flat().size());
  for (Eigen::Index i = 0; i < 2500; ++i) {
    const std::vector<int> yi = {t.y[static_cast<std::size_t>(i)]};
    sum += loss_and_grad(p, t.x.middleRows(i, 1), yi, 0.0).grad.flat();
  }
  CHECK(full.grad.flat().isApprox(sum / 2500.0, 1e-12));
  const Eigen::MatrixXd probs = forward_batch(p, t.x);
  CHECK(probs.row(2400).transpose().isApprox(forward(p, t.x.row(2400).transpose()), 1e-15));
}

TEST_CASE("per-sample moments") {
  const auto t = toy_data(9, 3, 3, 4);
  const auto p = init_params(MlpShape{{3, 4, 3}}, 6);
  const auto m = per_sample_moments(p, t.x, t.y, 0.02);
  CHECK(m.mean.flat().isApprox(loss_and_grad(p, t.x, t.y, 0.02).grad.flat(), 1e-12));
  std::vector<Eigen::VectorXd> g;
  for (Eigen::Index i = 0; i < 9; ++i) {
    const std::vector<int> yi = {t.y[static_cast<std::size_t>(i)]};
    g.push_back(loss_and_grad(p, t.x.middleRows(i, 1), yi, 0.02).grad.flat());
  }
  for (Eigen::Index k = 0; k < p.flat().size(); ++k) {
    std::vector<double> xs;
    for (const auto& v : g) xs.push_back(v[k]);
    CHECK(m.variance.flat()[k] == Approx(oracle::two_pass_variance(xs) * 9.0 / 8.0).epsilon(1e-10).margin(1e-18));
  }
  CHECK_THROWS_AS(per_sample_moments(p, t.x.topRows(1), std::span<const int>(t.y.data(), 1), 0.0), std::invalid_argument);
}

TEST_CASE("full-gradient training") {
  const auto t = toy_data(40, 4, 3, 5);
  const auto p = init_params(MlpShape{{4, 6, 3}}, 1);
  CHECK_THROWS_AS(full_gradient_train(p, t.x, t.y, 0, 0.1, 0.0), std::invalid_argument);

  const std::vector<int> same(40, 2);
  const auto one = full_gradient_train(p, t.x, same, 1, 0.5, 0.001);
  REQUIRE(one.losses.size() == 2);
  CHECK(one.losses[1] <= one.losses[0]);

  std::size_t calls = 0;
  const auto run = full_gradient_train(p, t.x, t.y, 5, 0.01, 0.001, [&](std::size_t k, const MlpParams&) { CHECK(k == calls++); });
  CHECK(calls == 5);
  for (std::size_t k = 1; k < run.losses.size(); ++k) {
    CHECK(std::isfinite(run.losses[k]));
    CHECK(run.losses[k] <= run.losses[k - 1]);
  }
}

TEST_CASE("tracked weight gradients") {
  const MlpShape shape{{4, 5, 3, 3}};
  const auto t = toy_data(30, 4, 3, 6);
  std::vector<MlpParams> snaps;
  full_gradient_train(init_params(shape, 2), t.x, t.y, 4, 0.3, 0.01, [&](std::size_t, const MlpParams& q) { snaps.push_back(q); });
  const auto tw = output_tracked_weight(shape);
  CHECK(tw.layer == 2);
  CHECK(tw.in_index == 0);
  CHECK(tw.out_index == 0);
  const Eigen::MatrixXd g = record_weight_gradient(snaps, t.x, t.y, tw, 0.01);
  REQUIRE(g.rows() == 30);
  REQUIRE(g.cols() == 4);
  for (Eigen::Index k = 0; k < 4; ++k) {
    const auto full = loss_and_grad(snaps[static_cast<std::size_t>(k)], t.x, t.y, 0.01);
    CHECK(std::abs(g.col(k).mean() - full.grad.weight(tw.layer)(tw.in_index, tw.out_index)) <= 1e-10);
  }

  const std::vector<int> y1 = {t.y[0]};
  const Eigen::MatrixXd single = record_weight_gradient(snaps, t.x.topRows(1), y1, tw, 0.01);
  for (Eigen::Index k = 0; k < 4; ++k)
    CHECK(single(0, k) == Approx(loss_and_grad(snaps[static_cast<std::size_t>(k)], t.x.topRows(1), y1, 0.01)
                                     .grad.weight(tw.layer)(tw.in_index, tw.out_index))
                              .epsilon(1e-12));
  CHECK_THROWS_AS(tracked_sample_gradients(snaps[0], t.x, t.y, TrackedWeight{3, 0, 0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(tracked_sample_gradients(snaps[0], t.x, t.y, TrackedWeight{2, 3, 0}, 0.0), std::invalid_argument);
}

TEST_CASE("parameter serialization") {
  const auto dir = std::filesystem::temp_directory_path() / "stratgrad_test_mlp";
  std::filesystem::create_directories(dir);
  const auto p = init_params(MlpShape{{5, 4, 3}, Activation::Tanh}, 8);
  write_params(p, dir / "p.bin");
  const auto q = read_params(dir / "p.bin", Activation::Tanh);
  CHECK(q.shape() == p.shape());
  CHECK(q.flat() == p.flat());
  CHECK(std::filesystem::file_size(dir / "p.bin") == 4 + 4 + 3 * 4 + 8 * static_cast<std::uintmax_t>(p.flat().size()));

  {
    std::ifstream is(dir / "p.bin", std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    CHECK(std::string(magic, 4) == "MLP1");
  }
  std::filesystem::resize_file(dir / "p.bin", 30);
  CHECK_THROWS(read_params(dir / "p.bin"));
  {
    std::ofstream os(dir / "bad.bin", std::ios::binary);
    os << "XXXX";
  }
  CHECK_THROWS(read_params(dir / "bad.bin"));
  std::filesystem::remove_all(dir);
}
