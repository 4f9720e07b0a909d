#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "json.hpp"
#include "zico/genome.hpp"
#include "zico/nsga2.hpp"

namespace zico {

namespace detail {

// +infinity has no JSON spelling; it is emitted as null.
inline nlohmann::ordered_json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

/// Archive member: {genome, zico, penalty, zico_bc, latency_us}.
inline nlohmann::ordered_json archive_entry_json(const Individual<Genome>& ind) {
  return {{"genome", nlohmann::ordered_json::parse(serialize(ind.genome))},
          {"zico", ind.score.zico},
          {"penalty", ind.score.penalty},
          {"zico_bc", ind.score.zico_bc},
          {"latency_us", ind.latency_us}};
}

inline nlohmann::ordered_json archive_json(const ParetoArchive<Genome>& archive) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& m : archive.members()) arr.push_back(archive_entry_json(m));
  return arr;
}

/// One generation-log line. rank and crowding are null for +infinity.
inline nlohmann::ordered_json log_entry_json(const GenerationEntry<Genome>& e) {
  const auto& ind = e.individual;
  return {{"generation", e.generation},
          {"genome", nlohmann::ordered_json::parse(serialize(ind.genome))},
          {"zico", ind.score.zico},
          {"penalty", ind.score.penalty},
          {"zico_bc", ind.score.zico_bc},
          {"latency_us", ind.latency_us},
          {"rank", ind.rank == kInfeasibleRank ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(ind.rank)},
          {"crowding", detail::finite_or_null(ind.crowding)}};
}

inline void write_log(const SearchResult<Genome>& r, std::ostream& out) {
  for (const auto& e : r.log) out << log_entry_json(e).dump() << '\n';
}

struct ArchivePoint {
  Genome genome;
  double zico_bc = 0.0;
  double latency_us = 0.0;
};

inline std::vector<ArchivePoint> parse_archive(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("archive: ") + e.what());
  }
  if (!j.is_array()) throw ParseError("archive: expected a JSON array");
  std::vector<ArchivePoint> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const std::string at = "archive[" + std::to_string(i) + "]";
    if (!e.is_object() || !e.contains("genome") || !e.contains("zico_bc") || !e.contains("latency_us") ||
        !e["zico_bc"].is_number() || !e["latency_us"].is_number())
      throw ParseError(at + ": needs genome, zico_bc and latency_us");
    try {
      out.push_back({genome_from_json(e["genome"]), e["zico_bc"].get<double>(), e["latency_us"].get<double>()});
    } catch (const ParseError& err) {
      throw ParseError(at + ".genome." + err.what());
    }
  }
  return out;
}

/// CSV with columns depth,mean_width,score,latency; depth counts blocks.
inline void write_plotdata(const std::vector<ArchivePoint>& points, std::ostream& out) {
  out << "depth,mean_width,score,latency\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", total_blocks(p.genome), mean_width(p.genome), p.zico_bc,
                  p.latency_us);
    out << buf;
  }
}

}  // namespace zico
