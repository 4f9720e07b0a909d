#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zico/error.hpp"
#include "zico/parallel.hpp"
#include "zico/proxy.hpp"

namespace zico {

using Objectives = std::vector<double>;

inline constexpr std::size_t kInfeasibleRank = std::numeric_limits<std::size_t>::max();
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// a dominates b: no worse in every (minimized) objective, strictly better in one.
inline bool dominates(const Objectives& a, const Objectives& b) {
  bool strictly = false;
  for (std::size_t m = 0; m < a.size(); ++m) {
    if (a[m] > b[m]) return false;
    if (a[m] < b[m]) strictly = true;
  }
  return strictly;
}

/// Fast non-dominated sort. Returns fronts of indices into `objs`; each front
/// is in ascending index order.
inline std::vector<std::vector<std::size_t>> non_dominated_sort(std::span<const Objectives> objs) {
  const std::size_t n = objs.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i && objs[i].size() != objs[0].size()) throw ValueError("non_dominated_sort: objective count mismatch");
    for (double v : objs[i])
      if (std::isnan(v)) throw ValueError("non_dominated_sort: NaN objective at individual " + std::to_string(i));
  }
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<std::size_t> count(n, 0);
  std::vector<std::vector<std::size_t>> fronts(1);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      if (dominates(objs[p], objs[q])) {
        dominated[p].push_back(q);
        ++count[q];
      } else if (dominates(objs[q], objs[p])) {
        dominated[q].push_back(p);
        ++count[p];
      }
    }
  }
  for (std::size_t p = 0; p < n; ++p)
    if (count[p] == 0) fronts[0].push_back(p);
  while (!fronts.back().empty()) {
    std::vector<std::size_t> next;
    for (std::size_t p : fronts.back())
      for (std::size_t q : dominated[p])
        if (--count[q] == 0) next.push_back(q);
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(next));
  }
  fronts.pop_back();
  return fronts;
}

/// Crowding distance of each member of one front. Boundary members of every
/// objective get +infinity; fronts of two or fewer are all +infinity.
inline std::vector<double> crowding_distance(std::span<const Objectives> front) {
  const std::size_t n = front.size();
  std::vector<double> d(n, 0.0);
  if (n <= 2) {
    std::fill(d.begin(), d.end(), kInfinity);
    return d;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t m = 0; m < front[0].size(); ++m) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return front[a][m] < front[b][m]; });
    const double lo = front[order.front()][m], hi = front[order.back()][m];
    d[order.front()] = d[order.back()] = kInfinity;
    if (!(hi > lo)) continue;
    for (std::size_t i = 1; i + 1 < n; ++i) d[order[i]] += (front[order[i + 1]][m] - front[order[i - 1]][m]) / (hi - lo);
  }
  return d;
}

enum class ObjectiveSet { proxy_and_latency, proxy_only };

struct SearchConfig {
  std::size_t population = 64;
  std::size_t generations = 100;
  double mutation_rate = 0.1;
  double crossover_rate = 0.9;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::optional<double> latency_ceiling_us;
  ObjectiveSet objectives = ObjectiveSet::proxy_and_latency;
};

inline void validate(const SearchConfig& c) {
  if (c.population < 4 || c.population % 2) throw ValueError("population: must be even and at least 4");
  if (c.generations < 1) throw ValueError("generations: must be at least 1");
  if (!(c.mutation_rate >= 0.0 && c.mutation_rate <= 1.0)) throw ValueError("mutation-rate: must lie in [0, 1]");
  if (!(c.crossover_rate >= 0.0 && c.crossover_rate <= 1.0)) throw ValueError("crossover-rate: must lie in [0, 1]");
  if (c.latency_ceiling_us && !(*c.latency_ceiling_us >= 0.0)) throw ValueError("latency-ceiling: must be non-negative");
}

/// An evaluator threw; carries the serialized genome.
class EvaluationError : public Error {
 public:
  EvaluationError(std::string genome_key, const std::string& what)
      : Error("evaluation failed for genome " + genome_key + ": " + what), genome_(std::move(genome_key)) {}
  const std::string& genome() const noexcept { return genome_; }

 private:
  std::string genome_;
};

template <class G>
struct Individual {
  G genome{};
  std::string key;
  ProxyScore score;
  double latency_us = 0.0;
  Objectives objectives;
  bool feasible = true;
  std::size_t rank = 0;
  double crowding = 0.0;
};

/// Every non-dominated feasible individual seen so far, unique by key.
template <class G>
class ParetoArchive {
 public:
  /// Returns true when the candidate entered the archive.
  bool insert(const Individual<G>& ind) {
    if (!ind.feasible || members_.count(ind.key)) return false;
    for (const auto& [_, m] : members_)
      if (dominates(m.objectives, ind.objectives)) return false;
    std::erase_if(members_, [&](const auto& kv) { return dominates(ind.objectives, kv.second.objectives); });
    members_.emplace(ind.key, ind);
    return true;
  }

  /// Members in key order.
  std::vector<Individual<G>> members() const {
    std::vector<Individual<G>> out;
    for (const auto& [_, m] : members_) out.push_back(m);
    return out;
  }

  std::size_t size() const noexcept { return members_.size(); }
  bool contains(const std::string& key) const { return members_.count(key) > 0; }

 private:
  std::map<std::string, Individual<G>> members_;
};

template <class G>
struct GenerationEntry {
  std::size_t generation = 0;
  Individual<G> individual;
};

template <class G>
struct SearchResult {
  ParetoArchive<G> archive;
  std::vector<GenerationEntry<G>> log;
  std::vector<Individual<G>> population;
  std::size_t evaluations = 0;  // unique genomes evaluated
};

template <class S>
concept SearchSpace = requires(const S& s, const typename S::genome_type& g, std::mt19937_64& rng, double rate) {
  { s.sample(rng) } -> std::convertible_to<typename S::genome_type>;
  { s.mutate(g, rate, rng) } -> std::convertible_to<typename S::genome_type>;
  { s.crossover(g, g, rng) } -> std::convertible_to<typename S::genome_type>;
  { s.key(g) } -> std::convertible_to<std::string>;
};

namespace detail {

/// Ranks and crowding within `pop`. Infeasible members get kInfeasibleRank.
template <class G>
void assign_rank_and_crowding(std::vector<Individual<G>>& pop) {
  std::vector<std::size_t> feasible;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (pop[i].feasible) {
      feasible.push_back(i);
    } else {
      pop[i].rank = kInfeasibleRank;
      pop[i].crowding = 0.0;
    }
  }
  std::vector<Objectives> objs;
  for (auto i : feasible) objs.push_back(pop[i].objectives);
  const auto fronts = non_dominated_sort(objs);
  for (std::size_t r = 0; r < fronts.size(); ++r) {
    std::vector<Objectives> fo;
    for (auto j : fronts[r]) fo.push_back(objs[j]);
    const auto cd = crowding_distance(fo);
    for (std::size_t k = 0; k < fronts[r].size(); ++k) {
      auto& ind = pop[feasible[fronts[r][k]]];
      ind.rank = r;
      ind.crowding = cd[k];
    }
  }
}

// Crowded-comparison order with deterministic tie-breaks. Infeasible
// members sort after every feasible one, by ascending latency.
template <class G>
bool better(const Individual<G>& a, const Individual<G>& b) {
  if (a.rank != b.rank) return a.rank < b.rank;
  if (a.rank == kInfeasibleRank && a.latency_us != b.latency_us) return a.latency_us < b.latency_us;
  if (a.crowding != b.crowding) return a.crowding > b.crowding;
  return a.key < b.key;
}

}  // namespace detail

/// NSGA-II: binary tournament on (rank, crowding), uniform crossover and
/// mutation from the space, elitist truncation of parents + offspring.
/// `proxy_fn(genome) -> ProxyScore` (zico_bc maximized) and
/// `latency_fn(genome) -> double` (minimized) must be pure; each distinct
/// genome is evaluated once. Results do not depend on `cfg.threads`.
///
/// Generation 0 is the initial random population; `generations` counts all
/// populations evaluated, including generation 0.
template <SearchSpace Space, class ProxyFn, class LatencyFn>
SearchResult<typename Space::genome_type> run_search(const Space& space, const SearchConfig& cfg, ProxyFn&& proxy_fn,
                                                     LatencyFn&& latency_fn) {
  using G = typename Space::genome_type;
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::map<std::string, std::pair<ProxyScore, double>> cache;
  SearchResult<G> result;

  auto evaluate = [&](std::vector<Individual<G>>& pop) {
    std::vector<std::size_t> todo;
    std::map<std::string, std::size_t> pending;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      pop[i].key = space.key(pop[i].genome);
      if (!cache.count(pop[i].key) && pending.emplace(pop[i].key, i).second) todo.push_back(i);
    }
    std::vector<std::pair<ProxyScore, double>> fresh(todo.size());
    parallel_for(todo.size(), cfg.threads, [&](std::size_t t) {
      const auto& ind = pop[todo[t]];
      try {
        fresh[t] = {proxy_fn(ind.genome), static_cast<double>(latency_fn(ind.genome))};
      } catch (const std::exception& e) {
        throw EvaluationError(ind.key, e.what());
      }
    });
    for (std::size_t t = 0; t < todo.size(); ++t) cache.emplace(pop[todo[t]].key, std::move(fresh[t]));
    result.evaluations += todo.size();
    for (auto& ind : pop) {
      const auto& [score, lat] = cache.at(ind.key);
      ind.score = score;
      ind.latency_us = lat;
      if (cfg.objectives == ObjectiveSet::proxy_and_latency)
        ind.objectives = {-score.zico_bc, lat};
      else
        ind.objectives = {-score.zico_bc};
      ind.feasible = !cfg.latency_ceiling_us || lat <= *cfg.latency_ceiling_us;
    }
  };

  auto record = [&](std::size_t gen, const std::vector<Individual<G>>& pop) {
    for (const auto& ind : pop) {
      result.archive.insert(ind);
      result.log.push_back({gen, ind});
    }
  };

  std::vector<Individual<G>> pop(cfg.population);
  for (auto& ind : pop) ind.genome = space.sample(rng);
  evaluate(pop);
  detail::assign_rank_and_crowding(pop);
  record(0, pop);

  std::uniform_int_distribution<std::size_t> pick(0, cfg.population - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto tournament = [&]() -> const Individual<G>& {
    const auto& a = pop[pick(rng)];
    const auto& b = pop[pick(rng)];
    return detail::better(b, a) ? b : a;
  };

  for (std::size_t gen = 1; gen < cfg.generations; ++gen) {
    std::vector<Individual<G>> offspring;
    offspring.reserve(cfg.population);
    while (offspring.size() < cfg.population) {
      const G p1 = tournament().genome;
      const G p2 = tournament().genome;
      G c1 = p1, c2 = p2;
      if (unit(rng) < cfg.crossover_rate) {
        c1 = space.crossover(p1, p2, rng);
        c2 = space.crossover(p2, p1, rng);
      }
      for (const G* c : {&c1, &c2}) {
        Individual<G> child;
        child.genome = space.mutate(*c, cfg.mutation_rate, rng);
        offspring.push_back(std::move(child));
      }
    }
    evaluate(offspring);

    std::vector<Individual<G>> merged = std::move(pop);
    merged.insert(merged.end(), std::make_move_iterator(offspring.begin()), std::make_move_iterator(offspring.end()));
    detail::assign_rank_and_crowding(merged);
    std::stable_sort(merged.begin(), merged.end(), [](const auto& a, const auto& b) { return detail::better(a, b); });
    merged.resize(cfg.population);
    pop = std::move(merged);
    detail::assign_rank_and_crowding(pop);
    record(gen, pop);
  }

  result.population = std::move(pop);
  return result;
}

}  // namespace zico
