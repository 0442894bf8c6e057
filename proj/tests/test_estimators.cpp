#include "oracles.hpp"

#include "stratgrad/estimators.hpp"
#include "stratgrad/rng.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace stratgrad;
using Catch::Approx;

namespace {

double signed_mean(Rng& rng) { return (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 10.0); }

Stratum constant_stratum(double v, std::size_t n, int label) { return {Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(n), v), label}; }

}  // namespace

TEST_CASE("optimal coefficients: hand values") {
  auto c = optimal_coefficients(1.0, 3.0, 1.0, 3.0);
  CHECK(c.p == 0.5);
  CHECK(c.q == 0.5);
  CHECK(c.degenerate == Degeneracy::None);

  c = optimal_coefficients(2.0, 1.0, 1.0, 1.0);
  CHECK(c.p == Approx(0.4).epsilon(1e-15));
  CHECK(c.q == Approx(0.2).epsilon(1e-15));
  CHECK(c.p / (1 - c.q) == Approx(0.5).epsilon(1e-15));

  c = optimal_coefficients(0.0, 3.0, 0.0, 1.0);
  CHECK(c.p == 0.25);
  CHECK(c.q == 0.75);
  CHECK(c.degenerate == Degeneracy::ZeroOverZero);
}

TEST_CASE("optimal coefficients: degenerate and invalid input") {
  auto c = optimal_coefficients(1.0, 0.0, 1.0, 0.0);
  CHECK(c.p == 0.0);
  CHECK(c.q == 1.0);
  CHECK(c.degenerate == Degeneracy::GuardedDenominator);

  // Tiny but well-conditioned statistics are not guarded.
  c = optimal_coefficients(1e-9, 1e-18, 1e-9, 1e-18);
  CHECK(c.degenerate == Degeneracy::None);
  CHECK(c.p == Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(optimal_coefficients(1.0, -1.0, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(optimal_coefficients(1.0, 1.0, 1.0, -1e-300), std::invalid_argument);
}

TEST_CASE("optimal coefficients match the extended-precision closed form") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double ep = signed_mean(rng), vp = rng.uniform(0.01, 10), ec = signed_mean(rng), vc = rng.uniform(0.01, 10);
    const auto c = optimal_coefficients(ep, vp, ec, vc);
    const auto o = oracle::closed_form_pq(ep, vp, ec, vc);
    REQUIRE(c.degenerate == Degeneracy::None);
    CHECK(std::abs(c.p - static_cast<double>(o.p)) <= 1e-13 * (1 + std::abs(static_cast<double>(o.p))));
    CHECK(std::abs(c.q - static_cast<double>(o.q)) <= 1e-13);
    // q < 1 whenever v_curr > 0.
    CHECK(c.q < 1.0);
    CHECK(c.q >= 0.0);
  }
}

TEST_CASE("equal means keep p at or below one") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double e = signed_mean(rng), vp = rng.uniform(0, 5), vc = rng.uniform(0.01, 5);
    CHECK(optimal_coefficients(e, vp, e, vc).p <= 1.0);
    const auto z = optimal_coefficients(0.0, vp, 0.0, vc);
    CHECK(z.p <= 1.0);
    if (vp > 0) CHECK(z.p < 1.0);
  }
}

TEST_CASE("unbiasedness condition") {
  CHECK_FALSE(unbiased_condition_holds(Coefficients<double>{0.9, 0.5}, 1.0, 1.0, 1e-9));
  CHECK(unbiased_condition_holds(Coefficients<double>{0.5, 0.5}, 7.0, 7.0, 1e-9));
  CHECK_FALSE(unbiased_condition_holds(Coefficients<double>{0.0, 1.0}, 1.0, 1.0, 1e-9));
  CHECK_FALSE(unbiased_condition_holds(Coefficients<double>{0.5, 0.5}, 0.0, 1.0, 1e-9));
  CHECK(unbiased_condition_holds(optimal_coefficients(0.0, 3.0, 0.0, 1.0), 0.0, 0.0, 1e-12));
  CHECK(unbiased_condition_holds(optimal_coefficients(2.0, 1.0, 1.0, 1.0), 2.0, 1.0, 1e-12));
}

TEST_CASE("memory reset") {
  // p = 3 / 1.09 > 1.
  auto c = with_memory_reset(optimal_coefficients(1.0, 0.01, 3.0, 1.0), 1.0, 3.0);
  CHECK(c.p == 0.0);
  CHECK(c.q == 1.0);
  CHECK(c.degenerate == Degeneracy::MemoryReset);

  c = with_memory_reset(optimal_coefficients(0.0, 1.0, 1.0, 1.0), 0.0, 1.0);
  CHECK(c.degenerate == Degeneracy::MemoryReset);

  // Opposite signs with |p| < 1 keep the (negative) optimal weight.
  c = with_memory_reset(optimal_coefficients(2.0, 1.0, -1.0, 1.0), 2.0, -1.0);
  CHECK(c.degenerate == Degeneracy::None);
  CHECK(c.p == Approx(-0.4));
  CHECK(unbiased_condition_holds(c, 2.0, -1.0, 1e-12));
}

TEST_CASE("array coefficients agree with the scalar path") {
  Eigen::ArrayXd ep(5), vp(5), ec(5), vc(5);
  ep << 1, 0, 1, 2, 1;
  vp << 1, 3, 0, 1, 0.01;
  ec << 1, 0, 1, 1, 3;
  vc << 1, 1, 0, 1, 1;
  const auto a = stabilized_coefficients(ep, vp, ec, vc);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const auto s = with_memory_reset(optimal_coefficients(ep[i], vp[i], ec[i], vc[i]), ep[i], ec[i]);
    CHECK(a.p[i] == s.p);
    CHECK(a.q[i] == s.q);
  }
  CHECK(a.zero_over_zero == 1);
  CHECK(a.guarded == 1);
  CHECK(a.memory_reset == 1);
  CHECK_THROWS_AS(stabilized_coefficients(ep, vp, ec, vc.head(3)), std::invalid_argument);
}

TEST_CASE("simple estimators") {
  const std::vector<std::vector<double>> constant = {{1, 1}, {2}, {3, 3, 3}, {4}};
  const std::vector<double> w(4, 0.25);
  CHECK(gst_estimate(constant, w) == 2.5);
  const std::vector<std::vector<double>> single = {{1}, {5}};
  const std::vector<double> w2 = {0.3, 0.7};
  CHECK(gst_estimate(single, w2) == Approx(0.3 + 3.5));
  CHECK(sgd_estimate(3.7) == 3.7);
  const std::vector<double> b = {1, 3};
  CHECK(batch_estimate(b) == 2.0);
  CHECK_THROWS_AS(batch_estimate(std::span<const double>{}), std::invalid_argument);
  const std::vector<std::vector<double>> missing = {{1}, {}};
  CHECK_THROWS_AS(gst_estimate(missing, w2), std::invalid_argument);

  const auto pop = gen_family(Trend::UniformDec, 3)[0];
  std::vector<double> all;
  for (const auto& s : pop.strata()) all.insert(all.end(), s.values.begin(), s.values.end());
  CHECK(batch_estimate(all) == Approx(population_mean(pop)).epsilon(1e-14));
}

TEST_CASE("stratified estimator is unbiased") {
  const auto pop = gen_family(Trend::UniformDec, 5)[3];
  const auto& w = pop.weights();
  const std::size_t reps = 100000;
  std::vector<double> est(reps);
  Rng rng(77);
  for (std::size_t r = 0; r < reps; ++r) {
    std::vector<std::vector<double>> s(pop.num_strata());
    for (std::size_t j = 0; j < pop.num_strata(); ++j)
      s[j].push_back(pop.stratum(j).values[static_cast<Eigen::Index>(rng.index(pop.stratum(j).values.size()))]);
    est[r] = gst_estimate(s, w);
  }
  const double se = std::sqrt(oracle::two_pass_variance(est) / static_cast<double>(reps));
  CHECK(std::abs(oracle::plain_mean(est) - population_mean(pop)) <= 3 * se);
}

TEST_CASE("memory estimator initialization and fixed points") {
  const std::vector<double> first = {1.5, -2.0, 4.0};
  const std::vector<double> w = {0.2, 0.3, 0.5};
  const std::vector<StratumStats> stats = {{1, 1}, {-2, 1}, {4, 2}};
  const auto [state, est] = gmst_init(first, stats, w);
  const std::vector<std::vector<double>> as_sets = {{1.5}, {-2.0}, {4.0}};
  CHECK(est == gst_estimate(as_sets, w));
  CHECK(state.iteration == 1);

  // Constant strata: every step returns the constant.
  const StratifiedPopulation c({constant_stratum(3.0, 10, 1), constant_stratum(3.0, 5, 2)});
  const std::vector<double> fresh = {3.0, 3.0};
  auto [s, e] = gmst_init(fresh, c.stats(), c.weights());
  CHECK(e == Approx(3.0).epsilon(1e-15));
  for (int k = 0; k < 5; ++k) {
    std::tie(s, e) = gmst_step(std::move(s), fresh, c.stats(), c.weights());
    CHECK(e == Approx(3.0).epsilon(1e-15));
  }
  CHECK(s.fallbacks.guarded == 5 * 2);

  // Equal statistics across rounds: p = q = 1/2.
  const std::vector<double> w1 = {1.0};
  const std::vector<StratumStats> st = {{2.0, 1.5}};
  const std::vector<double> g0 = {1.0}, g1 = {5.0};
  auto [m, v] = gmst_init(g0, st, w1);
  std::tie(m, v) = gmst_step(std::move(m), g1, st, w1);
  CHECK(m.last_coefficients[0].p == 0.5);
  CHECK(m.last_coefficients[0].q == 0.5);
  CHECK(v == 3.0);
  CHECK_THROWS_AS(gmst_step(MemoryState{}, g1, st, w1), std::logic_error);
}

TEST_CASE("predicted variance") {
  const std::vector<double> w1 = {1.0};
  const std::vector<StratumStats> prev = {{2, 1}}, curr = {{1, 1}};
  CHECK(predicted_variance_vsp(prev, curr, w1) == Approx(0.2).epsilon(1e-15));

  const std::vector<double> w = {0.5, 0.5};
  const std::vector<StratumStats> zero_prev = {{1, 0}, {3, 0}}, any = {{1, 2}, {-1, 4}};
  CHECK(predicted_variance_vsp(zero_prev, any, w) == 0.0);

  const std::vector<StratumStats> bad_prev = {{0, 0}}, bad_curr = {{1, 1}};
  CHECK_THROWS_AS(predicted_variance_vsp(bad_prev, bad_curr, w1), std::domain_error);
}

TEST_CASE("design effect against the independent stratified variance") {
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t c = 1 + rng.index(8);
    std::vector<StratumStats> prev(c), curr(c);
    std::vector<double> w(c), v(c);
    double total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      prev[j] = {signed_mean(rng), rng.uniform(0.01, 10)};
      curr[j] = {signed_mean(rng), rng.uniform(0.01, 10)};
      w[j] = rng.uniform(0.1, 1);
      total += w[j];
      v[j] = curr[j].variance;
    }
    for (auto& x : w) x /= total;
    CHECK(predicted_variance_vsp(prev, curr, w) < oracle::stratified_variance(w, v));
    CHECK(stratified_variance(curr, w) == Approx(oracle::stratified_variance(w, v)).epsilon(1e-14));
  }
}

TEST_CASE("variance bound") {
  const std::vector<double> one = {2.0};
  CHECK(variance_bound(3.0, one, 0.5, 0.25) == Approx(0.25 * 3.0 + 0.0625 * 2.0));
  const std::vector<double> seq = {1.0, 2.0, 5.0};
  CHECK(variance_bound(3.0, seq, 1e-9, 0.5) == Approx(0.25 * 5.0).epsilon(1e-12));
  const double p = 0.6, q = 0.3;
  const double direct = std::pow(p, 6) * 3.0 + std::pow(p, 4) * q * q * 1.0 + p * p * q * q * 2.0 + q * q * 5.0;
  CHECK(variance_bound(3.0, seq, p, q) == Approx(direct).epsilon(1e-14));
  CHECK_THROWS_AS(variance_bound(1.0, seq, 1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(variance_bound(1.0, seq, 0.5, 0.0), std::invalid_argument);
}

TEST_CASE("trace_estimators") {
  const auto r = gen_family(Trend::UniformDec, 21);
  const auto t = trace_estimators(r, 1, 4, 5);
  for (auto e : kEstimators) {
    REQUIRE(t[e].size() == 10);
    for (std::size_t k = 0; k < 10; ++k) {
      const auto& x = t[e][k];
      CHECK(x.iteration == k + 1);
      CHECK(x.truth == population_mean(r[k]));
      CHECK(x.sq_dev == (x.estimate - x.truth) * (x.estimate - x.truth));
    }
  }
  CHECK(t[Estimator::Gmst][0].estimate == t[Estimator::Gst][0].estimate);

  const auto again = trace_estimators(r, 1, 4, 5);
  for (auto e : kEstimators)
    for (std::size_t k = 0; k < 10; ++k) CHECK(again[e][k].estimate == t[e][k].estimate);

  std::vector<StratifiedPopulation> rounds;
  for (int k = 0; k < 4; ++k)
    rounds.emplace_back(std::vector<Stratum>{constant_stratum(2.0, 10, 1), constant_stratum(2.0, 10, 2)});
  const auto flat = trace_estimators(PopulationRound(rounds), 2, 5, 1);
  for (auto e : kEstimators)
    for (const auto& x : flat[e]) CHECK(x.sq_dev == Approx(0.0).margin(1e-28));

  CHECK_THROWS_AS(trace_estimators(r, 1, 41, 1), std::invalid_argument);
}

TEST_CASE("summary statistics") {
  std::vector<std::vector<EstimateTrace>> runs = {{make_trace(1, 1, 0), make_trace(2, 3, 0)}, {make_trace(1, 0, 0), make_trace(2, 2, 0)}};
  const auto s = summarize(runs);
  // sq_dev values 1, 9, 0, 4.
  CHECK(s.mean_sq_dev == 3.5);
  CHECK(s.std_sq_dev == Approx(std::sqrt((6.25 + 30.25 + 12.25 + 0.25) / 4)));
  CHECK(s.n_rounds == 2);
  CHECK(s.n_seeds == 2);
}
