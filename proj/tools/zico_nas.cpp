// zico-nas: zero-shot architecture scoring, latency estimation, NSGA-II
// search and proxy/accuracy rank correlation.
//
// Primary outputs go to stdout or --out files as JSON/CSV; progress and
// summaries go to stderr. Exit codes: 0 ok, 2 usage/validation, 3 runtime.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "zico/zico.hpp"

namespace {

using nlohmann::ordered_json;

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw zico::ParseError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string digest(const std::string& path) {
  const std::string bytes = read_file(path);
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                static_cast<unsigned long long>(zico::fnv1a64(
                    {reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()})));
  return buf;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw zico::ParseError("cannot write '" + path + "'");
  out << text;
}

std::pair<int, int> parse_resolution(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) {
      const int v = std::stoi(s);
      return {v, v};
    }
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw zico::ValueError("resolution: expected HxW, got '" + s + "'");
  }
}

std::vector<int> parse_int_list(const std::string& s, const char* flag) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw zico::ValueError(std::string(flag) + ": cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw zico::ValueError(std::string(flag) + ": empty list");
  return out;
}

double default_beta(zico::Family f) { return f == zico::Family::resnet_like ? 2.0 : 1.0; }

/// Written next to an output file as <out>.manifest.json.
void write_manifest(const std::string& out_path, const std::string& subcommand, const std::vector<std::string>& argv,
                    ordered_json config, const std::vector<std::string>& inputs) {
  if (out_path.empty() || out_path == "-") return;
  ordered_json digests = ordered_json::object();
  for (const auto& p : inputs) digests[p] = digest(p);
  const ordered_json m{{"subcommand", subcommand},
                       {"tool_version", zico::kVersion},
                       {"argv", argv},
                       {"config", std::move(config)},
                       {"inputs", digests}};
  write_output(out_path + ".manifest.json", m.dump(2) + "\n");
}

struct ProxyFlags {
  double beta = -1.0;  // < 0 means family default
  std::size_t batches = 8;
  std::size_t batch_size = 8;
  std::string numerator = "absolute";

  void add(CLI::App* app, const char* beta_help) {
    app->add_option("--beta", beta, beta_help);
    app->add_option("--batches", batches, "Batches B for gradient statistics")->capture_default_str();
    app->add_option("--batch-size", batch_size, "Images per batch")->capture_default_str();
    app->add_option("--numerator", numerator, "Ratio numerator: absolute (E|g|) or signed (E g)")
        ->check(CLI::IsMember({"absolute", "signed"}))
        ->capture_default_str();
  }

  zico::ProxyConfig resolve(zico::Family family, std::uint64_t seed, bool beta_given) const {
    zico::ProxyConfig c;
    c.beta = beta_given ? beta : default_beta(family);
    c.batches = batches;
    c.batch_size = batch_size;
    c.seed = seed;
    c.numerator = zico::parse_numerator(numerator);
    zico::validate(c);
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot NAS with bias-corrected gradient-statistics proxies"};
  app.require_subcommand(1);
  app.set_version_flag("--version", zico::kVersion);

  std::uint64_t seed = 0;
  std::size_t threads = zico::default_threads();
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Base seed (env ZICO_BC_SEED)")->envname("ZICO_BC_SEED")->capture_default_str();
    sub->add_option("--threads", threads, "Evaluator threads (default: available cores)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  };

  // score
  auto* score = app.add_subcommand("score", "Score one genome; prints ProxyScore JSON");
  std::string score_genome, score_out, score_resolution;
  ProxyFlags score_proxy;
  score->add_option("genome", score_genome, "Genome JSON file")->required();
  score_proxy.add(score, "Depth-width penalty weight (default: 1 effnet_like, 2 resnet_like)");
  score->add_option("--resolution", score_resolution, "Override input resolution HxW (default: genome's)");
  score->add_option("--out", score_out, "Also write JSON here, with a manifest alongside");
  add_common(score);

  // search
  auto* search = app.add_subcommand("search", "NSGA-II search over a micro-architecture space");
  std::string family = "resnet_like", strides = "1,2,2,2", resolution = "32x32", kernels, expansions = "1,2,4,6";
  int stem_channels = 32, num_classes = 10, min_repeats = 1, max_repeats = 4, min_channels = 16, max_channels = 128,
      channel_step = 16;
  bool no_group = false, allow_depthwise = false, proxy_only = false;
  zico::SearchConfig scfg;
  scfg.mutation_rate = 0.1;
  scfg.crossover_rate = 0.9;
  double latency_ceiling = -1.0;
  ProxyFlags search_proxy;
  std::string latency_table, archive_out, log_out;
  double fallback = 1e-4;
  search->add_option("--family", family, "effnet_like or resnet_like")
      ->check(CLI::IsMember({"effnet_like", "resnet_like"}))
      ->capture_default_str();
  search->add_option("--strides", strides, "Comma-separated stride per stage; stage count follows")
      ->capture_default_str();
  search->add_option("--resolution", resolution, "Input resolution HxW")->capture_default_str();
  search->add_option("--stem-channels", stem_channels, "Stem width")->capture_default_str();
  search->add_option("--num-classes", num_classes, "Classifier outputs")->capture_default_str();
  search->add_option("--min-repeats", min_repeats, "Minimum blocks per stage")->capture_default_str();
  search->add_option("--max-repeats", max_repeats, "Maximum blocks per stage")->capture_default_str();
  search->add_option("--min-channels", min_channels, "Minimum stage width")->capture_default_str();
  search->add_option("--max-channels", max_channels, "Maximum stage width")->capture_default_str();
  search->add_option("--channel-step", channel_step, "Stage width granularity (multiple of 8)")->capture_default_str();
  search->add_option("--kernels", kernels, "Kernel choices (default: 3 resnet_like, 3,5 effnet_like)");
  search->add_option("--expansions", expansions, "Expansion ratios, effnet_like only")->capture_default_str();
  search->add_flag("--no-group", no_group, "Disable group convolution");
  search->add_flag("--allow-depthwise", allow_depthwise, "Allow depthwise convolution");
  search->add_option("--population", scfg.population, "Population size (even, >= 4)")->capture_default_str();
  search->add_option("--generations", scfg.generations, "Populations evaluated, including the initial one")
      ->capture_default_str();
  search->add_option("--mutation-rate", scfg.mutation_rate, "Per-gene mutation probability")->capture_default_str();
  search->add_option("--crossover-rate", scfg.crossover_rate, "Crossover probability per pair")->capture_default_str();
  search->add_option("--latency-ceiling", latency_ceiling, "Hard latency limit in us (default: none)");
  search->add_flag("--proxy-only", proxy_only, "Single objective: ignore latency in dominance");
  search_proxy.add(search, "Depth-width penalty weight (default: 1 effnet_like, 2 resnet_like)");
  search->add_option("--latency-table", latency_table, "Latency CSV (default: none, fallback only)");
  search->add_option("--fallback-us-per-mac", fallback, "Latency of table misses, us per MAC")->capture_default_str();
  search->add_option("--archive", archive_out, "Archive JSON output (default: stdout)");
  search->add_option("--log", log_out, "Per-generation JSON-lines log (default: none)");
  add_common(search);

  // correlate
  auto* correlate = app.add_subcommand("correlate", "Rank-correlate proxy scores with recorded accuracies");
  std::string records_path, corr_out;
  ProxyFlags corr_proxy;
  correlate->add_option("--records", records_path, "Benchmark records, JSON lines")->required();
  corr_proxy.add(correlate, "Depth-width penalty weight (default: 1)");
  correlate->add_option("--out", corr_out, "Report JSON output (default: stdout)");
  add_common(correlate);

  // latency
  auto* latency = app.add_subcommand("latency", "Estimate a genome's latency from a lookup table");
  std::string lat_genome, lat_table, lat_out;
  double lat_fallback = 0.0;
  latency->add_option("genome", lat_genome, "Genome JSON file")->required();
  latency->add_option("--table", lat_table, "Latency CSV (default: none)");
  latency->add_option("--fallback-us-per-mac", lat_fallback, "Latency of table misses, us per MAC")
      ->capture_default_str();
  latency->add_option("--out", lat_out, "JSON output (default: stdout)");
  add_common(latency);

  // pareto-plotdata
  auto* plot = app.add_subcommand("pareto-plotdata", "CSV of archive depth/width/score/latency for plotting");
  std::string plot_archive, plot_out;
  plot->add_option("archive", plot_archive, "Archive JSON from search")->required();
  plot->add_option("--out", plot_out, "CSV output (default: stdout)");
  add_common(plot);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  std::vector<std::string> args(argv, argv + argc);
  // The manifest records the fully resolved seed so replays do not depend on
  // the environment.
  args.push_back("--seed");
  args.push_back(std::to_string(seed));

  try {
    if (score->parsed()) {
      zico::Genome g = zico::parse_genome(read_file(score_genome));
      if (!score_resolution.empty()) std::tie(g.input_height, g.input_width) = parse_resolution(score_resolution);
      zico::validate(g);
      const auto cfg = score_proxy.resolve(g.family, seed, score->count("--beta") > 0);
      const zico::ProxyScore s = zico::evaluate_genome(g, cfg);
      const std::string text = zico::to_json(s).dump() + "\n";
      std::cout << text;
      if (!score_out.empty()) {
        write_output(score_out, text);
        write_manifest(score_out, "score", args,
                       {{"genome", ordered_json::parse(zico::serialize(g))}, {"proxy", zico::to_json(cfg)}},
                       {score_genome});
      }
      std::cerr << "zico " << s.zico << "  penalty " << s.penalty << "  zico_bc " << s.zico_bc << '\n';
    } else if (search->parsed()) {
      zico::Genome base;
      base.family = zico::parse_family(family);
      std::tie(base.input_height, base.input_width) = parse_resolution(resolution);
      base.stem_channels = stem_channels;
      base.num_classes = num_classes;
      for (int s : parse_int_list(strides, "strides")) {
        zico::StageGene st;
        st.stride = s;
        st.repeats = min_repeats;
        st.channels = min_channels;
        base.stages.push_back(st);
      }
      zico::SpaceBounds bounds;
      bounds.min_repeats = min_repeats;
      bounds.max_repeats = max_repeats;
      bounds.min_channels = min_channels;
      bounds.max_channels = max_channels;
      bounds.channel_step = channel_step;
      bounds.kernels = kernels.empty() ? (base.family == zico::Family::resnet_like ? std::vector<int>{3}
                                                                                   : std::vector<int>{3, 5})
                                       : parse_int_list(kernels, "kernels");
      bounds.kernels.erase(std::unique(bounds.kernels.begin(), bounds.kernels.end()), bounds.kernels.end());
      for (auto& st : base.stages) st.kernel = bounds.kernels.front();
      bounds.allow_group = !no_group;
      bounds.allow_depthwise = allow_depthwise;
      bounds.expansions = base.family == zico::Family::effnet_like ? parse_int_list(expansions, "expansions")
                                                                   : std::vector<int>{zico::kDefaultExpansion};
      const zico::GenomeSpace space(base, bounds);

      scfg.seed = seed;
      scfg.threads = threads;
      if (search->count("--latency-ceiling")) scfg.latency_ceiling_us = latency_ceiling;
      scfg.objectives = proxy_only ? zico::ObjectiveSet::proxy_only : zico::ObjectiveSet::proxy_and_latency;
      zico::validate(scfg);
      const auto pcfg = search_proxy.resolve(base.family, zico::derive_seed(seed, 0x5eed), search->count("--beta") > 0);
      zico::LatencyTable table(fallback);
      if (!latency_table.empty()) table = zico::load_table(latency_table, fallback);
      if (table.empty() && !(table.fallback_us_per_mac() > 0.0))
        throw zico::ValueError("latency: table is empty and fallback-us-per-mac is zero");

      const auto result = zico::run_search(
          space, scfg, [&](const zico::Genome& g) { return zico::evaluate_genome(g, pcfg); },
          [&](const zico::Genome& g) { return zico::estimate(zico::compile(g, 0), table).total_us; });

      write_output(archive_out, zico::archive_json(result.archive).dump(2) + "\n");
      if (!log_out.empty()) {
        std::ostringstream os;
        zico::write_log(result, os);
        write_output(log_out, os.str());
      }
      std::vector<std::string> inputs;
      if (!latency_table.empty()) inputs.push_back(latency_table);
      ordered_json space_json{{"base", ordered_json::parse(zico::serialize(base))},
                              {"min_repeats", bounds.min_repeats},
                              {"max_repeats", bounds.max_repeats},
                              {"min_channels", bounds.min_channels},
                              {"max_channels", bounds.max_channels},
                              {"channel_step", bounds.channel_step},
                              {"kernels", bounds.kernels},
                              {"allow_group", bounds.allow_group},
                              {"allow_depthwise", bounds.allow_depthwise},
                              {"expansions", bounds.expansions}};
      ordered_json search_json{{"population", scfg.population},
                               {"generations", scfg.generations},
                               {"mutation_rate", scfg.mutation_rate},
                               {"crossover_rate", scfg.crossover_rate},
                               {"seed", scfg.seed},
                               {"threads", scfg.threads},
                               {"latency_ceiling_us", scfg.latency_ceiling_us ? ordered_json(*scfg.latency_ceiling_us)
                                                                              : ordered_json(nullptr)},
                               {"objectives", proxy_only ? "proxy_only" : "proxy_and_latency"}};
      write_manifest(archive_out, "search", args,
                     {{"space", space_json},
                      {"search", search_json},
                      {"proxy", zico::to_json(pcfg)},
                      {"latency", {{"table", latency_table}, {"fallback_us_per_mac", fallback}}}},
                     inputs);
      std::cerr << "search: " << result.evaluations << " unique genomes evaluated, archive size "
                << result.archive.size() << '\n';
    } else if (correlate->parsed()) {
      const auto records = zico::load_records(records_path);
      const auto cfg = corr_proxy.resolve(zico::Family::effnet_like, seed, correlate->count("--beta") > 0);
      const auto report = zico::run_correlation(records, cfg, threads);
      write_output(corr_out, zico::to_json(report).dump(2) + "\n");
      write_manifest(corr_out, "correlate", args, {{"proxy", zico::to_json(cfg)}}, {records_path});
      std::cerr << "correlate: n=" << report.n << " tau=" << report.tau << " rho=" << report.rho << " failures="
                << report.failures.size() << '\n';
    } else if (latency->parsed()) {
      const zico::Genome g = zico::parse_genome(read_file(lat_genome));
      zico::LatencyTable table(lat_fallback);
      if (!lat_table.empty()) table = zico::load_table(lat_table, lat_fallback);
      const zico::LayerGraph graph = zico::compile(g, seed);
      const auto est = zico::estimate(graph, table);
      ordered_json per = ordered_json::array();
      for (std::size_t i = 0; i < est.per_layer.size(); ++i) {
        const auto key = zico::latency_key(graph.layers[i]);
        per.push_back({{"layer", est.per_layer[i].layer},
                       {"key", zico::to_string(key)},
                       {"us", est.per_layer[i].us},
                       {"hit", est.per_layer[i].hit}});
      }
      const ordered_json out{{"total_us", est.total_us},
                             {"misses", est.misses},
                             {"macs", zico::count_macs(graph)},
                             {"params", zico::count_params(graph)},
                             {"per_layer", per}};
      write_output(lat_out, out.dump(2) + "\n");
      std::vector<std::string> inputs{lat_genome};
      if (!lat_table.empty()) inputs.push_back(lat_table);
      write_manifest(lat_out, "latency", args, {{"table", lat_table}, {"fallback_us_per_mac", lat_fallback}}, inputs);
    } else if (plot->parsed()) {
      std::ostringstream os;
      zico::write_plotdata(zico::parse_archive(read_file(plot_archive)), os);
      write_output(plot_out, os.str());
      write_manifest(plot_out, "pareto-plotdata", args, ordered_json::object(), {plot_archive});
    }
  } catch (const zico::EvaluationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const zico::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
