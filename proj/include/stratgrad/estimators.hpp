#pragma once

#include "stratgrad/population.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

namespace stratgrad {

enum class Degeneracy {
  None,
  /// Both means zero: the 0/0 = 1 limit of the mixing weights.
  ZeroOverZero,
  /// Denominator vanished (relative to the input scale): fresh sample only.
  GuardedDenominator,
  /// Coefficients unusable for decay (|p| >= 1, or a zero previous mean with a
  /// nonzero current one): memory dropped, fresh sample only.
  MemoryReset,
};

/// Mixing weights for G_j <- p G_j + q g.
template <typename Scalar>
struct Coefficients {
  Scalar p;
  Scalar q;
  Degeneracy degenerate = Degeneracy::None;
};

/// Variance-minimizing weights subject to p / (1 - q) = e_curr / e_prev:
///
///   p = e_curr e_prev v_curr / D,   q = e_curr^2 v_prev / D,
///   D = e_curr^2 v_prev + e_prev^2 v_curr.
///
/// When both means are zero (and v_curr != 0) the ratio is taken as 1, giving
/// p = v_curr / (v_prev + v_curr), q = v_prev / (v_prev + v_curr). When D is
/// negligible against the homogeneous scale (e_curr^2 + e_prev^2)(v_prev + v_curr)
/// the result is (0, 1). Throws std::invalid_argument on a negative variance.
template <typename Scalar>
Coefficients<Scalar> optimal_coefficients(Scalar e_prev, Scalar v_prev, Scalar e_curr, Scalar v_curr) {
  if (v_prev < Scalar(0) || v_curr < Scalar(0) || std::isnan(v_prev) || std::isnan(v_curr))
    throw std::invalid_argument("optimal_coefficients: negative variance");
  if (e_prev == Scalar(0) && e_curr == Scalar(0) && v_curr != Scalar(0)) {
    const Scalar s = v_prev + v_curr;
    return {v_curr / s, v_prev / s, Degeneracy::ZeroOverZero};
  }
  const Scalar a = e_curr * e_curr * v_prev;
  const Scalar b = e_prev * e_prev * v_curr;
  const Scalar den = a + b;
  const Scalar scale = (e_curr * e_curr + e_prev * e_prev) * (v_prev + v_curr);
  if (!(den > Scalar(1e-12) * scale) || !std::isnormal(den)) return {Scalar(0), Scalar(1), Degeneracy::GuardedDenominator};
  return {e_curr * e_prev * v_curr / den, a / den, Degeneracy::None};
}

/// Applies the memory-reset policy: coefficients with |p| >= 1, or a zero
/// previous mean with a nonzero current mean, become (0, 1).
template <typename Scalar>
Coefficients<Scalar> with_memory_reset(Coefficients<Scalar> c, Scalar e_prev, Scalar e_curr) {
  if (c.degenerate == Degeneracy::GuardedDenominator) return c;
  if (std::abs(c.p) >= Scalar(1) || (e_prev == Scalar(0) && e_curr != Scalar(0)))
    return {Scalar(0), Scalar(1), Degeneracy::MemoryReset};
  return c;
}

/// Checks p / (1 - q) = e_curr / e_prev at relative tolerance `tol`, with the
/// ratio 0/0 read as 1. False when q == 1 or when e_prev == 0 != e_curr.
template <typename Scalar>
bool unbiased_condition_holds(const Coefficients<Scalar>& c, Scalar e_prev, Scalar e_curr, Scalar tol) {
  if (c.q == Scalar(1)) return false;
  Scalar ratio;
  if (e_prev == Scalar(0)) {
    if (e_curr != Scalar(0)) return false;
    ratio = Scalar(1);
  } else {
    ratio = e_curr / e_prev;
  }
  const Scalar lhs = c.p / (Scalar(1) - c.q);
  return std::abs(lhs - ratio) <= tol * std::max(std::abs(ratio), Scalar(1e-300)) ||
         (ratio == Scalar(0) && std::abs(lhs) <= tol);
}

/// Per-element coefficients for parameter-shaped statistics, memory reset applied.
struct CoefficientArrays {
  Eigen::ArrayXd p;
  Eigen::ArrayXd q;
  std::size_t zero_over_zero = 0;
  std::size_t guarded = 0;
  std::size_t memory_reset = 0;
};

CoefficientArrays stabilized_coefficients(const Eigen::ArrayXd& e_prev, const Eigen::ArrayXd& v_prev,
                                          const Eigen::ArrayXd& e_curr, const Eigen::ArrayXd& v_curr);

/// Σ_j w_j mean(samples_j).
double gst_estimate(std::span<const std::vector<double>> samples, std::span<const double> weights);
double sgd_estimate(double sample);
double batch_estimate(std::span<const double> samples);

struct FallbackCounts {
  std::size_t zero_over_zero = 0;
  std::size_t guarded = 0;
  std::size_t memory_reset = 0;

  std::size_t total() const { return zero_over_zero + guarded + memory_reset; }
  void record(Degeneracy d);
  FallbackCounts& operator+=(const FallbackCounts& o);
};

/// Memory of the memory-type stratified estimator.
struct MemoryState {
  Eigen::ArrayXd g;
  std::vector<StratumStats> prev_stats;
  std::size_t iteration = 0;
  FallbackCounts fallbacks;
  /// Coefficients used by the most recent step, one per stratum.
  std::vector<Coefficients<double>> last_coefficients;
};

/// Fills the memory with one draw per stratum; the estimate equals the
/// stratified estimate of the same draws.
std::pair<MemoryState, double> gmst_init(std::span<const double> first_samples, std::span<const StratumStats> stats,
                                         std::span<const double> weights);

/// One memory update with the optimal coefficients (after memory reset);
/// returns the new state and Σ_j w_j G_j.
std::pair<MemoryState, double> gmst_step(MemoryState state, std::span<const double> fresh,
                                         std::span<const StratumStats> stats, std::span<const double> weights);

/// Minimal variance of the memory estimator,
///   Σ_j w_j^2 e_curr^2 v_prev v_curr / (e_curr^2 v_prev + e_prev^2 v_curr),
/// with the 0/0 = 1 limit for zero means and 0 for v_curr == 0. Throws
/// std::domain_error when a stratum has e_prev == 0, v_prev == 0, e_curr != 0
/// and v_curr > 0 (no finite limit).
double predicted_variance_vsp(std::span<const StratumStats> prev, std::span<const StratumStats> curr,
                              std::span<const double> weights);

/// Σ_j w_j^2 V_j: variance of the one-draw-per-stratum estimator.
double stratified_variance(std::span<const StratumStats> stats, std::span<const double> weights);

/// p^{2t} v_mst_k + Σ_{i=1..t} p^{2(t-i)} q^2 v_st_seq[i], with t = v_st_seq.size().
/// Requires 0 < p, q < 1.
double variance_bound(double v_mst_k, std::span<const double> v_st_seq, double p, double q);

enum class Estimator { Gmst, Gst, Batch, Sgd };
inline constexpr std::array<Estimator, 4> kEstimators = {Estimator::Gmst, Estimator::Gst, Estimator::Batch,
                                                         Estimator::Sgd};
std::string_view estimator_name(Estimator e);

struct EstimateTrace {
  std::size_t iteration;
  double estimate;
  double truth;
  double sq_dev;
};

EstimateTrace make_trace(std::size_t iteration, double estimate, double truth);

struct TraceSet {
  /// Indexed by Estimator.
  std::array<std::vector<EstimateTrace>, 4> traces;
  FallbackCounts fallbacks;

  const std::vector<EstimateTrace>& operator[](Estimator e) const { return traces[static_cast<std::size_t>(e)]; }
  std::vector<EstimateTrace>& operator[](Estimator e) { return traces[static_cast<std::size_t>(e)]; }
};

/// Runs the four estimators over every round. The stratified estimators share
/// `per_stratum` draws per stratum; Batch takes `batch_size` pooled draws
/// without replacement; SGD one pooled draw. Coefficients use the exact
/// per-round stratum statistics.
TraceSet trace_estimators(const PopulationRound& rounds, std::size_t per_stratum, std::size_t batch_size,
                          std::uint64_t seed);

struct DeviationSummary {
  double mean_sq_dev = 0.0;
  double std_sq_dev = 0.0;
  std::size_t n_rounds = 0;
  std::size_t n_seeds = 0;
};

/// Mean and (population) standard deviation of sq_dev pooled over all traces.
DeviationSummary summarize(std::span<const std::vector<EstimateTrace>> runs);

}  // namespace stratgrad
