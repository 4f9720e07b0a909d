#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "zico/error.hpp"
#include "zico/network.hpp"

namespace zico {

/// Lookup key of one layer configuration.
struct LatencyKey {
  std::string op;  // "conv" or "dense"
  std::size_t cin = 0, cout = 0, hout = 1, wout = 1, k = 1, groups = 1, stride = 1;

  auto operator<=>(const LatencyKey&) const = default;
};

inline LatencyKey latency_key(const ParamLayer& l) {
  return {to_string(l.kind), l.in_channels, l.out_channels, l.out_h, l.out_w, l.kernel, l.groups, l.stride};
}

inline std::string to_string(const LatencyKey& k) {
  std::ostringstream os;
  os << k.op << ',' << k.cin << ',' << k.cout << ',' << k.hout << ',' << k.wout << ',' << k.k << ',' << k.groups
     << ',' << k.stride;
  return os.str();
}

inline constexpr const char* kLatencyCsvHeader = "op,cin,cout,hout,wout,k,groups,stride,us";

/// Additive per-layer latency model. Keys absent from the table are priced at
/// `fallback_us_per_mac` times the layer's MACs.
class LatencyTable {
 public:
  LatencyTable() = default;
  explicit LatencyTable(double fallback_us_per_mac) { set_fallback(fallback_us_per_mac); }

  void insert(const LatencyKey& key, double us) {
    if (!(us >= 0.0) || !std::isfinite(us))
      throw ValueError("latency table: negative or non-finite latency " + std::to_string(us) + " for " + to_string(key));
    if (!entries_.emplace(key, us).second) throw ValueError("latency table: duplicate key " + to_string(key));
  }

  void set_fallback(double us_per_mac) {
    if (!(us_per_mac >= 0.0) || !std::isfinite(us_per_mac))
      throw ValueError("fallback-us-per-mac: must be finite and non-negative, got " + std::to_string(us_per_mac));
    fallback_ = us_per_mac;
  }

  const double* find(const LatencyKey& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  double fallback_us_per_mac() const noexcept { return fallback_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::map<LatencyKey, double>& entries() const noexcept { return entries_; }

  bool operator==(const LatencyTable&) const = default;

 private:
  std::map<LatencyKey, double> entries_;
  double fallback_ = 0.0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& field, const char* name, std::size_t line) {
  T v{};
  const auto* end = field.data() + field.size();
  auto [p, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc{} || p != end || field.empty())
    throw ParseError(std::string("column '") + name + "': cannot parse '" + field + "'", line);
  return v;
}

}  // namespace detail

/// Parse the CSV table format. The header row is mandatory.
inline LatencyTable parse_table(std::istream& in, double fallback_us_per_mac = 0.0) {
  LatencyTable t(fallback_us_per_mac);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  static constexpr const char* cols[] = {"op", "cin", "cout", "hout", "wout", "k", "groups", "stride", "us"};
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    if (!header) {
      if (detail::trim(line) != kLatencyCsvHeader)
        throw ParseError(std::string("expected header '") + kLatencyCsvHeader + "'", lineno);
      header = true;
      continue;
    }
    if (f.size() != 9)
      throw ParseError("expected 9 columns, got " + std::to_string(f.size()), lineno);
    if (f[0] != "conv" && f[0] != "dense") throw ParseError("column 'op': expected conv or dense, got '" + f[0] + "'", lineno);
    LatencyKey k;
    k.op = f[0];
    std::size_t* fields[] = {&k.cin, &k.cout, &k.hout, &k.wout, &k.k, &k.groups, &k.stride};
    for (std::size_t i = 0; i < 7; ++i) {
      *fields[i] = detail::parse_number<std::size_t>(f[i + 1], cols[i + 1], lineno);
      if (*fields[i] == 0) throw ParseError(std::string("column '") + cols[i + 1] + "': must be positive", lineno);
    }
    const double us = detail::parse_number<double>(f[8], "us", lineno);
    if (!(us >= 0.0) || !std::isfinite(us)) throw ParseError("negative latency " + f[8], lineno);
    if (t.find(k)) throw ParseError("duplicate key " + to_string(k), lineno);
    t.insert(k, us);
  }
  if (!header) throw ParseError("missing header row", lineno ? lineno : 1);
  return t;
}

inline LatencyTable load_table(const std::string& path, double fallback_us_per_mac = 0.0) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open latency table '" + path + "'");
  try {
    return parse_table(in, fallback_us_per_mac);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void save_table(const LatencyTable& t, std::ostream& out) {
  out << kLatencyCsvHeader << '\n';
  char buf[32];
  for (const auto& [k, us] : t.entries()) {
    std::snprintf(buf, sizeof buf, "%.17g", us);
    out << to_string(k) << ',' << buf << '\n';
  }
}

struct LayerLatency {
  std::size_t layer = 0;
  double us = 0.0;
  bool hit = false;
};

struct LatencyEstimate {
  double total_us = 0.0;
  std::vector<LayerLatency> per_layer;
  std::size_t misses = 0;
};

inline LatencyEstimate estimate(std::span<const ParamLayer> layers, const LatencyTable& table) {
  if (!layers.empty() && table.empty() && !(table.fallback_us_per_mac() > 0.0))
    throw ValueError("latency: table is empty and fallback-us-per-mac is zero, nothing to price layers with");
  LatencyEstimate e;
  for (const auto& l : layers) {
    LayerLatency ll{l.index, 0.0, false};
    if (const double* us = table.find(latency_key(l))) {
      ll.us = *us;
      ll.hit = true;
    } else {
      ll.us = table.fallback_us_per_mac() * static_cast<double>(l.macs());
      ++e.misses;
    }
    e.total_us += ll.us;
    e.per_layer.push_back(ll);
  }
  return e;
}

inline LatencyEstimate estimate(const LayerGraph& g, const LatencyTable& table) { return estimate(g.layers, table); }

}  // namespace zico
