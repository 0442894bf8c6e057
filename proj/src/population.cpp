#include "stratgrad/population.hpp"

#include "stratgrad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace stratgrad {

namespace {

constexpr std::uint64_t kUniformStream = 0x75;
constexpr std::uint64_t kNormalStream = 0x6e;
constexpr std::uint64_t kScheduleStream = 0x73;
constexpr std::uint64_t kDrawStream = 0x64;

StratifiedPopulation split_round(const Eigen::ArrayXd& values, std::size_t num_strata) {
  const auto block = static_cast<Eigen::Index>(values.size() / static_cast<Eigen::Index>(num_strata));
  std::vector<Stratum> strata;
  strata.reserve(num_strata);
  for (std::size_t j = 0; j < num_strata; ++j)
    strata.push_back({values.segment(static_cast<Eigen::Index>(j) * block, block), static_cast<int>(j + 1)});
  return StratifiedPopulation(std::move(strata));
}

void check_round_shape(std::size_t rounds, std::size_t n_per_round, std::size_t num_strata) {
  if (rounds == 0) throw std::invalid_argument("population: empty round schedule");
  if (num_strata == 0 || n_per_round == 0 || n_per_round % num_strata != 0)
    throw std::invalid_argument("population: shape error, " + std::to_string(n_per_round) +
                                " values cannot form " + std::to_string(num_strata) + " equal strata");
}

}  // namespace

StratumStats stratum_stats(const Stratum& s) {
  const double mean = s.values.mean();
  return {mean, (s.values - mean).square().mean()};
}

StratifiedPopulation::StratifiedPopulation(std::vector<Stratum> strata) : strata_(std::move(strata)) {
  if (strata_.empty()) throw std::invalid_argument("StratifiedPopulation: no strata");
  std::set<int> labels;
  offsets_.reserve(strata_.size());
  for (const auto& s : strata_) {
    if (s.values.size() == 0) throw std::invalid_argument("StratifiedPopulation: empty stratum");
    if (!labels.insert(s.label).second)
      throw std::invalid_argument("StratifiedPopulation: duplicate label " + std::to_string(s.label));
    offsets_.push_back(total_);
    total_ += static_cast<std::size_t>(s.values.size());
  }
  weights_.reserve(strata_.size());
  for (const auto& s : strata_)
    weights_.push_back(static_cast<double>(s.values.size()) / static_cast<double>(total_));
}

std::pair<std::size_t, double> StratifiedPopulation::pooled(std::size_t i) const {
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), i);
  const auto j = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  return {j, strata_[j].values[static_cast<Eigen::Index>(i - offsets_[j])]};
}

std::vector<StratumStats> StratifiedPopulation::stats() const {
  std::vector<StratumStats> out;
  out.reserve(strata_.size());
  for (const auto& s : strata_) out.push_back(stratum_stats(s));
  return out;
}

double population_mean(const StratifiedPopulation& p) {
  double acc = 0.0;
  for (std::size_t j = 0; j < p.num_strata(); ++j) acc += p.weights()[j] * p.stratum(j).values.mean();
  return acc;
}

std::string_view trend_name(Trend t) {
  switch (t) {
    case Trend::UniformDec: return "uniform-dec";
    case Trend::UniformInc: return "uniform-inc";
    case Trend::NormalRandom: return "normal-random";
    case Trend::NormalMeanDec: return "normal-mean-dec";
    case Trend::NormalMeanInc: return "normal-mean-inc";
    case Trend::NormalVarDec: return "normal-var-dec";
    case Trend::NormalVarInc: return "normal-var-inc";
  }
  return "unknown";
}

const std::vector<Trend>& all_trends() {
  static const std::vector<Trend> trends = {Trend::UniformDec,    Trend::UniformInc,    Trend::NormalRandom,
                                            Trend::NormalMeanDec, Trend::NormalMeanInc, Trend::NormalVarDec,
                                            Trend::NormalVarInc};
  return trends;
}

Trend parse_trend(std::string_view name) {
  for (auto t : all_trends())
    if (trend_name(t) == name) return t;
  throw std::invalid_argument("unknown family '" + std::string(name) + "'");
}

PopulationRound::PopulationRound(std::vector<StratifiedPopulation> rounds, std::optional<Trend> trend)
    : rounds_(std::move(rounds)), trend_(trend) {
  if (rounds_.empty()) throw std::invalid_argument("PopulationRound: no rounds");
  const auto& w0 = rounds_.front().weights();
  for (const auto& r : rounds_)
    if (r.weights() != w0) throw std::invalid_argument("PopulationRound: rounds differ in stratum layout");
}

std::vector<Interval> uniform_intervals(Trend t) {
  std::vector<Interval> dec = {{8, 12}, {8, 10}, {6, 9}, {5, 8}, {4, 7}, {3, 6}, {3, 5}, {2, 4}, {2, 3}, {0, 3}};
  switch (t) {
    case Trend::UniformDec: return dec;
    case Trend::UniformInc: std::reverse(dec.begin(), dec.end()); return dec;
    default: throw std::invalid_argument("uniform_intervals: not a uniform family");
  }
}

std::vector<NormalParams> normal_schedule(Trend t, std::size_t rounds, std::uint64_t seed) {
  if (rounds == 0) throw std::invalid_argument("normal_schedule: zero rounds");
  std::vector<NormalParams> out;
  out.reserve(rounds);
  const auto ramp = [rounds](double from, double to, std::size_t k) {
    return rounds == 1 ? from : from + (to - from) * static_cast<double>(k) / static_cast<double>(rounds - 1);
  };
  Rng rng = Rng::stream(seed, {kScheduleStream});
  for (std::size_t k = 0; k < rounds; ++k) {
    switch (t) {
      case Trend::NormalRandom: {
        const double mu = rng.uniform(1.0, 20.0);
        out.push_back({mu, rng.uniform(1.0, 20.0)});
        break;
      }
      case Trend::NormalMeanDec: out.push_back({ramp(20.0, 2.0, k), 5.0}); break;
      case Trend::NormalMeanInc: out.push_back({ramp(2.0, 20.0, k), 5.0}); break;
      case Trend::NormalVarDec: out.push_back({10.0, ramp(20.0, 2.0, k)}); break;
      case Trend::NormalVarInc: out.push_back({10.0, ramp(2.0, 20.0, k)}); break;
      default: throw std::invalid_argument("normal_schedule: not a normal family");
    }
  }
  return out;
}

PopulationRound gen_uniform_rounds(const std::vector<Interval>& intervals, std::size_t n_per_round,
                                   std::uint64_t seed, std::size_t num_strata) {
  check_round_shape(intervals.size(), n_per_round, num_strata);
  std::vector<StratifiedPopulation> rounds;
  rounds.reserve(intervals.size());
  for (std::size_t k = 0; k < intervals.size(); ++k) {
    const auto [lo, hi] = intervals[k];
    if (!(lo <= hi)) throw std::invalid_argument("gen_uniform_rounds: interval with lo > hi");
    Rng rng = Rng::stream(seed, {kUniformStream, k});
    Eigen::ArrayXd values(static_cast<Eigen::Index>(n_per_round));
    for (auto& v : values) v = rng.uniform(lo, hi);
    rounds.push_back(split_round(values, num_strata));
  }
  const bool decreasing = intervals.front().lo + intervals.front().hi >= intervals.back().lo + intervals.back().hi;
  return PopulationRound(std::move(rounds), decreasing ? Trend::UniformDec : Trend::UniformInc);
}

PopulationRound gen_normal_rounds(const std::vector<NormalParams>& params, std::size_t n_per_round,
                                  std::uint64_t seed, Trend family, std::size_t num_strata) {
  check_round_shape(params.size(), n_per_round, num_strata);
  std::vector<StratifiedPopulation> rounds;
  rounds.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto [mu, sigma] = params[k];
    if (!(sigma > 0.0)) throw std::invalid_argument("gen_normal_rounds: sigma must be positive");
    Rng rng = Rng::stream(seed, {kNormalStream, k});
    Eigen::ArrayXd values(static_cast<Eigen::Index>(n_per_round));
    for (auto& v : values) v = rng.normal(mu, sigma);
    rounds.push_back(split_round(values, num_strata));
  }
  return PopulationRound(std::move(rounds), family);
}

PopulationRound gen_family(Trend t, std::uint64_t seed, std::size_t rounds, std::size_t n_per_round,
                           std::size_t num_strata) {
  if (t == Trend::UniformDec || t == Trend::UniformInc) {
    auto intervals = uniform_intervals(t);
    if (rounds != intervals.size())
      throw std::invalid_argument("gen_family: uniform families have exactly " + std::to_string(intervals.size()) +
                                  " rounds");
    return gen_uniform_rounds(intervals, n_per_round, seed, num_strata);
  }
  return gen_normal_rounds(normal_schedule(t, rounds, seed), n_per_round, seed, t, num_strata);
}

std::vector<StratifiedDraw> draw_stratified(const StratifiedPopulation& p, std::size_t per_stratum,
                                            std::uint64_t seed) {
  std::vector<StratifiedDraw> out;
  out.reserve(per_stratum * p.num_strata());
  for (std::size_t j = 0; j < p.num_strata(); ++j) {
    const auto& values = p.stratum(j).values;
    const auto n = static_cast<std::size_t>(values.size());
    if (per_stratum > n)
      throw std::invalid_argument("draw_stratified: per_stratum " + std::to_string(per_stratum) +
                                  " exceeds stratum size " + std::to_string(n));
    Rng rng = Rng::stream(seed, {kDrawStream, j});
    for (auto i : rng.sample_without_replacement(n, per_stratum))
      out.push_back({j, values[static_cast<Eigen::Index>(i)]});
  }
  return out;
}

}  // namespace stratgrad
