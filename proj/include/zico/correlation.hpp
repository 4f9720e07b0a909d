#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "zico/error.hpp"
#include "zico/genome.hpp"
#include "zico/parallel.hpp"
#include "zico/proxy.hpp"

namespace zico {

namespace detail {

inline void check_pair(std::span<const double> x, std::span<const double> y, const char* who) {
  if (x.size() != y.size())
    throw ValueError(std::string(who) + ": length mismatch (" + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()) + ")");
  if (x.size() < 2) throw ValueError(std::string(who) + ": need at least 2 observations");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::isnan(x[i]) || std::isnan(y[i])) throw ValueError(std::string(who) + ": NaN input");
}

// Number of tied pairs: sum over runs of equal values of t(t-1)/2, on a
// sorted sequence.
template <class It, class Eq>
std::uint64_t tied_pairs(It first, It last, Eq eq) {
  std::uint64_t total = 0;
  while (first != last) {
    It run = first;
    std::uint64_t t = 0;
    while (run != last && eq(*run, *first)) ++run, ++t;
    total += t * (t - 1) / 2;
    first = run;
  }
  return total;
}

}  // namespace detail

/// Kendall's tau-b. O(n log n): sort by (x, y), count ties, then count
/// discordant pairs as merge-sort swaps on y.
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y, "kendall_tau");
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b]; });

  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t n1 = detail::tied_pairs(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] == x[b]; });
  const std::uint64_t n3 =
      detail::tied_pairs(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] == x[b] && y[a] == y[b]; });

  // Bottom-up merge sort on y counting inversions.
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (ys[j] < ys[i]) {
          swaps += mid - i;
          buf[k++] = ys[j++];
        } else {
          buf[k++] = ys[i++];
        }
      }
      while (i < mid) buf[k++] = ys[i++];
      while (j < hi) buf[k++] = ys[j++];
    }
    std::swap(ys, buf);
  }
  const std::uint64_t n2 = detail::tied_pairs(ys.begin(), ys.end(), [](double a, double b) { return a == b; });

  const double denom = std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
  if (denom == 0.0) throw ValueError("kendall_tau: undefined, one input has all values equal");
  // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
  const auto num = static_cast<double>(static_cast<std::int64_t>(n0 + n3) - static_cast<std::int64_t>(n1 + n2) -
                                       2 * static_cast<std::int64_t>(swaps));
  return num / denom;
}

/// 1-based ranks with ties given their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && v[idx[j]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = avg;
    i = j;
  }
  return r;
}

/// Spearman's rho: Pearson correlation of average ranks.
inline double spearman_rho(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y, "spearman_rho");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;  // ranks always average to (n + 1) / 2
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ValueError("spearman_rho: undefined, one input has all values equal");
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Benchmark harness.

struct BenchmarkRecord {
  std::string id;
  Genome genome;
  double test_accuracy = 0.0;
};

/// Parse one record per non-blank line: {"id", "genome", "test_accuracy"}.
/// Genomes that fail to parse are reported with the line number; ids must
/// be unique.
inline std::vector<BenchmarkRecord> parse_records(std::istream& in) {
  std::vector<BenchmarkRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("genome") || !j.contains("test_accuracy"))
      throw ParseError("record needs id, genome and test_accuracy", lineno);
    BenchmarkRecord r;
    r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    if (!j["test_accuracy"].is_number()) throw ParseError("test_accuracy: expected number", lineno);
    r.test_accuracy = j["test_accuracy"].get<double>();
    if (!(r.test_accuracy >= 0.0 && r.test_accuracy <= 100.0))
      throw ParseError("test_accuracy: must lie in [0, 100]", lineno);
    if (!ids.insert(r.id).second) throw ParseError("duplicate id '" + r.id + "'", lineno);
    try {
      r.genome = genome_from_json(j["genome"]);
    } catch (const ParseError& e) {
      throw ParseError(std::string("genome.") + e.what(), lineno);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<BenchmarkRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open records file '" + path + "'");
  try {
    return parse_records(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline nlohmann::json to_json(const BenchmarkRecord& r) {
  return {{"id", r.id}, {"genome", to_json(r.genome)}, {"test_accuracy", r.test_accuracy}};
}

struct RecordScore {
  std::string id;
  double test_accuracy = 0.0;
  double zico = 0.0;
  double penalty = 0.0;
  double zico_bc = 0.0;
};

struct RecordFailure {
  std::string id;
  std::string message;
};

struct CorrelationReport {
  double tau = 0.0;
  double rho = 0.0;
  std::size_t n = 0;
  std::vector<RecordScore> scores;  // sorted by id
  std::vector<RecordFailure> failures;  // sorted by id
  ProxyConfig proxy;
};

/// Score every record and correlate zico_bc with accuracy. Records that fail
/// to compile or score are reported and skipped. Output does not depend on
/// record order or thread count.
inline CorrelationReport run_correlation(std::span<const BenchmarkRecord> records, const ProxyConfig& cfg,
                                         std::size_t threads = 1) {
  validate(cfg);
  std::vector<std::optional<RecordScore>> scored(records.size());
  std::vector<std::string> errors(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const auto& r = records[i];
    try {
      const ProxyScore s = evaluate_genome(r.genome, cfg);
      scored[i] = RecordScore{r.id, r.test_accuracy, s.zico, s.penalty, s.zico_bc};
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  CorrelationReport rep;
  rep.proxy = cfg;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (scored[i])
      rep.scores.push_back(*scored[i]);
    else
      rep.failures.push_back({records[i].id, errors[i]});
  }
  auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  std::sort(rep.scores.begin(), rep.scores.end(), by_id);
  std::sort(rep.failures.begin(), rep.failures.end(), by_id);
  rep.n = rep.scores.size();
  if (rep.n < 2) throw ValueError("correlate: fewer than 2 records scored successfully");
  std::vector<double> proxy, acc;
  for (const auto& s : rep.scores) {
    proxy.push_back(s.zico_bc);
    acc.push_back(s.test_accuracy);
  }
  rep.tau = kendall_tau(proxy, acc);
  rep.rho = spearman_rho(proxy, acc);
  return rep;
}

inline nlohmann::ordered_json to_json(const CorrelationReport& r) {
  nlohmann::ordered_json scores = nlohmann::ordered_json::array();
  for (const auto& s : r.scores)
    scores.push_back({{"id", s.id},
                      {"test_accuracy", s.test_accuracy},
                      {"zico", s.zico},
                      {"penalty", s.penalty},
                      {"zico_bc", s.zico_bc}});
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  for (const auto& f : r.failures) failures.push_back({{"id", f.id}, {"error", f.message}});
  return {{"tau", r.tau},
          {"rho", r.rho},
          {"n", r.n},
          {"metadata",
           {{"proxy", to_json(r.proxy)},
            {"inputs", "seeded standard-Gaussian images, uniform random labels"},
            {"kendall", "tau-b"}}},
          {"scores", scores},
          {"failures", failures}};
}

}  // namespace zico
