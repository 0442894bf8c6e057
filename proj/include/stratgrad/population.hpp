#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace stratgrad {

/// Exact moments of one finite sub-population. The variance divides by the
/// count (population convention).
struct StratumStats {
  double mean = 0.0;
  double variance = 0.0;
};

struct Stratum {
  Eigen::ArrayXd values;
  int label = 0;
};

StratumStats stratum_stats(const Stratum& s);

/// C strata with weights w_j = N_j / N.
class StratifiedPopulation {
 public:
  /// Throws std::invalid_argument on an empty stratum list, an empty stratum
  /// or a duplicated label.
  explicit StratifiedPopulation(std::vector<Stratum> strata);

  std::size_t num_strata() const { return strata_.size(); }
  std::size_t size() const { return total_; }
  const std::vector<Stratum>& strata() const { return strata_; }
  const Stratum& stratum(std::size_t j) const { return strata_[j]; }
  const std::vector<double>& weights() const { return weights_; }

  /// Element `i` of the pooled population (strata concatenated in order),
  /// returned as (stratum position, value).
  std::pair<std::size_t, double> pooled(std::size_t i) const;

  std::vector<StratumStats> stats() const;

 private:
  std::vector<Stratum> strata_;
  std::vector<double> weights_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

/// Σ_j w_j E_j.
double population_mean(const StratifiedPopulation& p);

enum class Trend {
  UniformDec,
  UniformInc,
  NormalRandom,
  NormalMeanDec,
  NormalMeanInc,
  NormalVarDec,
  NormalVarInc,
};

std::string_view trend_name(Trend t);
/// Inverse of trend_name; throws std::invalid_argument on an unknown name.
Trend parse_trend(std::string_view name);
const std::vector<Trend>& all_trends();

/// A sequence of rounds sharing the same stratum layout.
class PopulationRound {
 public:
  /// `trend` is empty for sequences that are not one of the synthetic families.
  explicit PopulationRound(std::vector<StratifiedPopulation> rounds, std::optional<Trend> trend = std::nullopt);

  std::size_t size() const { return rounds_.size(); }
  const StratifiedPopulation& operator[](std::size_t k) const { return rounds_[k]; }
  const std::vector<StratifiedPopulation>& rounds() const { return rounds_; }
  std::optional<Trend> trend() const { return trend_; }

 private:
  std::vector<StratifiedPopulation> rounds_;
  std::optional<Trend> trend_;
};

struct Interval {
  double lo;
  double hi;
};

struct NormalParams {
  double mu;
  double sigma;
};

/// Interval schedules of the two uniform families.
std::vector<Interval> uniform_intervals(Trend t);

/// (mu, sigma) schedule of a normal family. NormalRandom draws both from
/// U[1, 20] per round; the trend families are linear ramps: mean 20 -> 2
/// (or 2 -> 20) with sigma 5, and sigma 20 -> 2 (or 2 -> 20) with mean 10.
std::vector<NormalParams> normal_schedule(Trend t, std::size_t rounds, std::uint64_t seed);

/// One round per interval, `n_per_round` uniform draws each, split into
/// `num_strata` contiguous blocks. Intervals with lo == hi give constants.
PopulationRound gen_uniform_rounds(const std::vector<Interval>& intervals, std::size_t n_per_round,
                                   std::uint64_t seed, std::size_t num_strata = 4);

PopulationRound gen_normal_rounds(const std::vector<NormalParams>& params, std::size_t n_per_round,
                                  std::uint64_t seed, Trend family, std::size_t num_strata = 4);

/// Any of the seven synthetic families with its default schedule.
PopulationRound gen_family(Trend t, std::uint64_t seed, std::size_t rounds = 10,
                           std::size_t n_per_round = 40, std::size_t num_strata = 4);

struct StratifiedDraw {
  std::size_t stratum;
  double value;
};

/// `per_stratum` draws without replacement from every stratum, grouped by stratum.
std::vector<StratifiedDraw> draw_stratified(const StratifiedPopulation& p, std::size_t per_stratum,
                                            std::uint64_t seed);

}  // namespace stratgrad
