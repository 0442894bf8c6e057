#include "stratgrad/estimators.hpp"

#include "stratgrad/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>

namespace stratgrad {

namespace {

constexpr std::uint64_t kTraceStream = 0x7472;

void check_strata(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(want) + " strata, got " +
                                std::to_string(got));
}

}  // namespace

CoefficientArrays stabilized_coefficients(const Eigen::ArrayXd& e_prev, const Eigen::ArrayXd& v_prev,
                                          const Eigen::ArrayXd& e_curr, const Eigen::ArrayXd& v_curr) {
  const Eigen::Index n = e_curr.size();
  if (e_prev.size() != n || v_prev.size() != n || v_curr.size() != n)
    throw std::invalid_argument("stabilized_coefficients: size mismatch");
  CoefficientArrays out{Eigen::ArrayXd(n), Eigen::ArrayXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = with_memory_reset(optimal_coefficients(e_prev[i], v_prev[i], e_curr[i], v_curr[i]), e_prev[i],
                                     e_curr[i]);
    out.p[i] = c.p;
    out.q[i] = c.q;
    switch (c.degenerate) {
      case Degeneracy::ZeroOverZero: ++out.zero_over_zero; break;
      case Degeneracy::GuardedDenominator: ++out.guarded; break;
      case Degeneracy::MemoryReset: ++out.memory_reset; break;
      case Degeneracy::None: break;
    }
  }
  return out;
}

double gst_estimate(std::span<const std::vector<double>> samples, std::span<const double> weights) {
  check_strata(samples.size(), weights.size(), "gst_estimate");
  double acc = 0.0;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    if (samples[j].empty()) throw std::invalid_argument("gst_estimate: stratum " + std::to_string(j) + " has no sample");
    const double m = std::accumulate(samples[j].begin(), samples[j].end(), 0.0) / static_cast<double>(samples[j].size());
    acc += weights[j] * m;
  }
  return acc;
}

double sgd_estimate(double sample) { return sample; }

double batch_estimate(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("batch_estimate: empty batch");
  return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
}

void FallbackCounts::record(Degeneracy d) {
  switch (d) {
    case Degeneracy::ZeroOverZero: ++zero_over_zero; break;
    case Degeneracy::GuardedDenominator: ++guarded; break;
    case Degeneracy::MemoryReset: ++memory_reset; break;
    case Degeneracy::None: break;
  }
}

FallbackCounts& FallbackCounts::operator+=(const FallbackCounts& o) {
  zero_over_zero += o.zero_over_zero;
  guarded += o.guarded;
  memory_reset += o.memory_reset;
  return *this;
}

std::pair<MemoryState, double> gmst_init(std::span<const double> first_samples, std::span<const StratumStats> stats,
                                         std::span<const double> weights) {
  check_strata(first_samples.size(), weights.size(), "gmst_init");
  check_strata(stats.size(), weights.size(), "gmst_init");
  MemoryState state;
  state.g = Eigen::Map<const Eigen::ArrayXd>(first_samples.data(), static_cast<Eigen::Index>(first_samples.size()));
  state.prev_stats.assign(stats.begin(), stats.end());
  state.iteration = 1;
  double acc = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) acc += weights[j] * first_samples[j];
  return {std::move(state), acc};
}

std::pair<MemoryState, double> gmst_step(MemoryState state, std::span<const double> fresh,
                                         std::span<const StratumStats> stats, std::span<const double> weights) {
  if (state.iteration == 0) throw std::logic_error("gmst_step: state not initialized");
  check_strata(static_cast<std::size_t>(state.g.size()), weights.size(), "gmst_step");
  check_strata(fresh.size(), weights.size(), "gmst_step");
  check_strata(stats.size(), weights.size(), "gmst_step");
  state.last_coefficients.clear();
  double acc = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const auto& prev = state.prev_stats[j];
    const auto c = with_memory_reset(optimal_coefficients(prev.mean, prev.variance, stats[j].mean, stats[j].variance),
                                     prev.mean, stats[j].mean);
    state.fallbacks.record(c.degenerate);
    state.last_coefficients.push_back(c);
    const auto i = static_cast<Eigen::Index>(j);
    state.g[i] = c.p * state.g[i] + c.q * fresh[j];
    acc += weights[j] * state.g[i];
  }
  state.prev_stats.assign(stats.begin(), stats.end());
  ++state.iteration;
  return {std::move(state), acc};
}

double predicted_variance_vsp(std::span<const StratumStats> prev, std::span<const StratumStats> curr,
                              std::span<const double> weights) {
  check_strata(prev.size(), weights.size(), "predicted_variance_vsp");
  check_strata(curr.size(), weights.size(), "predicted_variance_vsp");
  double acc = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const double ep = prev[j].mean, vp = prev[j].variance;
    const double ec = curr[j].mean, vc = curr[j].variance;
    if (vp < 0.0 || vc < 0.0) throw std::invalid_argument("predicted_variance_vsp: negative variance");
    double term;
    if (vc == 0.0) {
      term = 0.0;
    } else if (ep == 0.0 && ec == 0.0) {
      term = vp * vc / (vp + vc);
    } else {
      const double den = ec * ec * vp + ep * ep * vc;
      if (den == 0.0)
        throw std::domain_error("predicted_variance_vsp: stratum " + std::to_string(j) +
                                " has a zero denominator without a finite limit");
      term = ec * ec * vp * vc / den;
    }
    acc += weights[j] * weights[j] * term;
  }
  return acc;
}

double stratified_variance(std::span<const StratumStats> stats, std::span<const double> weights) {
  check_strata(stats.size(), weights.size(), "stratified_variance");
  double acc = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) acc += weights[j] * weights[j] * stats[j].variance;
  return acc;
}

double variance_bound(double v_mst_k, std::span<const double> v_st_seq, double p, double q) {
  if (!(p > 0.0 && p < 1.0) || !(q > 0.0 && q < 1.0))
    throw std::invalid_argument("variance_bound: p and q must lie in (0, 1)");
  const double p2 = p * p;
  // Horner form of the recursion V_{t} <= p^2 V_{t-1} + q^2 v_st[t].
  double bound = v_mst_k;
  for (double v : v_st_seq) bound = p2 * bound + q * q * v;
  return bound;
}

std::string_view estimator_name(Estimator e) {
  switch (e) {
    case Estimator::Gmst: return "gmst";
    case Estimator::Gst: return "gst";
    case Estimator::Batch: return "batch";
    case Estimator::Sgd: return "sgd";
  }
  return "unknown";
}

EstimateTrace make_trace(std::size_t iteration, double estimate, double truth) {
  const double d = estimate - truth;
  return {iteration, estimate, truth, d * d};
}

TraceSet trace_estimators(const PopulationRound& rounds, std::size_t per_stratum, std::size_t batch_size,
                          std::uint64_t seed) {
  if (per_stratum == 0) throw std::invalid_argument("trace_estimators: per_stratum must be positive");
  if (batch_size == 0) throw std::invalid_argument("trace_estimators: batch_size must be positive");
  TraceSet out;
  for (auto& t : out.traces) t.reserve(rounds.size());
  MemoryState memory;
  const std::size_t num_strata = rounds[0].num_strata();

  for (std::size_t k = 0; k < rounds.size(); ++k) {
    const auto& round = rounds[k];
    const auto& weights = round.weights();
    const double truth = population_mean(round);
    const std::size_t iteration = k + 1;

    Rng rng = Rng::stream(seed, {kTraceStream, k});
    const auto draws = draw_stratified(round, per_stratum, rng.next());
    std::vector<std::vector<double>> by_stratum(num_strata);
    for (const auto& d : draws) by_stratum[d.stratum].push_back(d.value);
    std::vector<double> fresh(num_strata);
    for (std::size_t j = 0; j < num_strata; ++j)
      fresh[j] = std::accumulate(by_stratum[j].begin(), by_stratum[j].end(), 0.0) / static_cast<double>(per_stratum);

    // Variance of a per_stratum-draw mean without replacement.
    auto stats = round.stats();
    for (std::size_t j = 0; j < num_strata; ++j) {
      const double n_j = static_cast<double>(round.stratum(j).values.size());
      const double n = static_cast<double>(per_stratum);
      if (per_stratum > 1) stats[j].variance *= (n_j - n) / (n * (n_j - 1.0));
    }

    out[Estimator::Gst].push_back(make_trace(iteration, gst_estimate(by_stratum, weights), truth));

    double mst;
    if (k == 0) {
      std::tie(memory, mst) = gmst_init(fresh, stats, weights);
    } else {
      std::tie(memory, mst) = gmst_step(std::move(memory), fresh, stats, weights);
    }
    out[Estimator::Gmst].push_back(make_trace(iteration, mst, truth));

    if (batch_size > round.size())
      throw std::invalid_argument("trace_estimators: batch_size exceeds round size");
    std::vector<double> batch;
    batch.reserve(batch_size);
    for (auto i : rng.sample_without_replacement(round.size(), batch_size)) batch.push_back(round.pooled(i).second);
    out[Estimator::Batch].push_back(make_trace(iteration, batch_estimate(batch), truth));

    out[Estimator::Sgd].push_back(make_trace(iteration, sgd_estimate(round.pooled(rng.index(round.size())).second), truth));
  }
  out.fallbacks = memory.fallbacks;
  return out;
}

DeviationSummary summarize(std::span<const std::vector<EstimateTrace>> runs) {
  DeviationSummary s;
  s.n_seeds = runs.size();
  if (runs.empty()) return s;
  s.n_rounds = runs.front().size();
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& run : runs)
    for (const auto& t : run) {
      sum += t.sq_dev;
      ++count;
    }
  if (count == 0) return s;
  s.mean_sq_dev = sum / static_cast<double>(count);
  double ss = 0.0;
  for (const auto& run : runs)
    for (const auto& t : run) ss += (t.sq_dev - s.mean_sq_dev) * (t.sq_dev - s.mean_sq_dev);
  s.std_sq_dev = std::sqrt(ss / static_cast<double>(count));
  return s;
}

}  // namespace stratgrad
