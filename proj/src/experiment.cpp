#include "halobit/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "halobit/codec.hpp"
#include "halobit/error.hpp"

namespace halobit {

namespace {

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> out;
  const bool has_dataset = !dataset.empty();
  const bool has_synthetic = !synthetic.empty();
  if (has_dataset == has_synthetic) {
    out.push_back("input: give exactly one of --dataset or --synthetic");
  }
  if (has_synthetic) {
    try {
      parse_sbm_spec(synthetic, seed);
    } catch (const ConfigError& e) {
      out.push_back(std::string("synthetic: ") + e.what());
    }
  }
  if (parts == 0) out.push_back("parts: must be at least 1");
  if (parts > 65535) out.push_back("parts: at most 65535 partitions");
  try {
    parse_partition_strategy(partition);
  } catch (const ConfigError& e) {
    out.push_back(std::string("partition: ") + e.what());
  }
  try {
    parse_model_kind(model);
  } catch (const ConfigError& e) {
    out.push_back(std::string("model: ") + e.what());
  }
  if (layers == 0) out.push_back("layers: must be at least 1");
  if (layers > 255) out.push_back("layers: at most 255");
  if (hidden == 0) out.push_back("hidden: must be positive");
  if (!QuantConfig::valid_bits(bits)) out.push_back("bits: must be 1..8, 16 or 32");
  if (mode != "sync" && mode != "async") out.push_back("mode: must be sync or async");
  if (staleness > 0 && mode == "sync") {
    out.push_back("staleness: only meaningful with --mode async");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) out.push_back("lr: must be a positive finite number");
  if (!(dropout >= 0.0 && dropout < 1.0)) out.push_back("dropout: must be in [0, 1)");
  return out;
}

void ExperimentConfig::validate() const {
  const auto p = problems();
  if (!p.empty()) throw ConfigError("invalid configuration: " + join(p, "; "));
}

Graph load_graph(const ExperimentConfig& cfg) {
  if (!cfg.dataset.empty()) return load_dataset(cfg.dataset);
  return generate_sbm(parse_sbm_spec(cfg.synthetic, cfg.seed));
}

TrainConfig make_train_config(const ExperimentConfig& cfg, const Graph& g) {
  TrainConfig tc;
  tc.model.kind = parse_model_kind(cfg.model);
  tc.model.widths.push_back(g.feature_dim());
  for (std::uint32_t l = 1; l < cfg.layers; ++l) tc.model.widths.push_back(cfg.hidden);
  tc.model.widths.push_back(g.num_classes);
  tc.model.dropout = cfg.dropout;
  tc.mode.variant = cfg.mode == "async" ? Variant::Async : Variant::Sync;
  tc.mode.staleness = cfg.staleness;
  tc.quant = QuantConfig(cfg.bits);
  tc.epochs = cfg.epochs;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.threads_per_worker = threads_per_worker(cfg.parts);
  return tc;
}

int threads_per_worker(std::uint32_t parts) {
  int cap = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("HALOBIT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) cap = static_cast<int>(v);
  }
  return std::max(1, cap / static_cast<int>(std::max<std::uint32_t>(parts, 1)));
}

std::string format_metrics_csv(const std::vector<EpochRecord>& epochs, bool wall_time) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& e : epochs) {
    os << e.epoch << ',' << to_string(e.mode) << ',' << fmt("%.10g", e.train_loss) << ','
       << fmt("%.6f", e.acc.train) << ',' << fmt("%.6f", e.acc.val) << ','
       << fmt("%.6f", e.acc.test) << ',' << e.traffic.main_bytes << ','
       << e.traffic.metadata_bytes << ',' << e.traffic.header_bytes << ','
       << e.traffic.allreduce_bytes << ',' << e.traffic.messages << ','
       << (wall_time ? fmt("%.3f", e.wall_ms) : std::string("0")) << '\n';
  }
  return os.str();
}

nlohmann::json make_summary(const ExperimentConfig& cfg, const TrainResult& result) {
  using nlohmann::json;
  json s;
  s["schema_version"] = kSummarySchemaVersion;
  s["halobit_version"] = kVersion;
  s["config"] = {
      {"dataset", cfg.dataset.string()},
      {"synthetic", cfg.synthetic},
      {"parts", cfg.parts},
      {"partition", cfg.partition},
      {"model", cfg.model},
      {"layers", cfg.layers},
      {"hidden", cfg.hidden},
      {"bits", cfg.bits},
      {"mode", cfg.mode},
      {"staleness", cfg.staleness},
      {"epochs", cfg.epochs},
      {"lr", cfg.lr},
      {"dropout", cfg.dropout},
      {"seed", cfg.seed},
      {"warmup", cfg.warmup},
      {"degree_with_self_loops", cfg.degree_with_self_loops},
  };
  const auto& epochs = result.epochs;
  s["epochs_run"] = epochs.size();
  if (epochs.empty()) {
    s["final"] = nullptr;
    s["best_val"] = nullptr;
    s["epochs_to_best_val"] = 0;
  } else {
    const auto& last = epochs.back();
    s["final"] = {{"epoch", last.epoch},
                  {"train_loss", last.train_loss},
                  {"train_acc", last.acc.train},
                  {"val_acc", last.acc.val},
                  {"test_acc", last.acc.test}};
    // First epoch reaching the maximum validation accuracy.
    const auto best = std::max_element(epochs.begin(), epochs.end(), [](const auto& a, const auto& b) {
      return a.acc.val < b.acc.val;
    });
    s["best_val"] = {{"epoch", best->epoch},
                     {"val_acc", best->acc.val},
                     {"test_acc", best->acc.test}};
    s["epochs_to_best_val"] = best->epoch;
  }
  const auto& t = result.totals;
  s["bytes"] = {{"main", t.main_bytes},
                {"metadata", t.metadata_bytes},
                {"header", t.header_bytes},
                {"allreduce", t.allreduce_bytes},
                {"messages", t.messages},
                {"rows", t.rows}};

  TrafficCounters after;
  double wall = 0.0;
  std::size_t counted = 0;
  for (const auto& e : epochs) {
    if (e.epoch <= cfg.warmup) continue;
    after += e.traffic;
    wall += e.wall_ms;
    ++counted;
  }
  const double div = counted ? static_cast<double>(counted) : 1.0;
  s["post_warmup_avg"] = {
      {"epochs", counted},
      {"main_bytes", static_cast<double>(after.main_bytes) / div},
      {"meta_bytes", static_cast<double>(after.metadata_bytes) / div},
      {"header_bytes", static_cast<double>(after.header_bytes) / div},
      {"allreduce_bytes", static_cast<double>(after.allreduce_bytes) / div},
      {"messages", static_cast<double>(after.messages) / div},
      {"wall_ms", cfg.record_wall_time ? wall / div : 0.0},
  };
  return s;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Graph g = load_graph(cfg);
  if (cfg.parts > g.num_nodes) {
    throw ConfigError("parts: " + std::to_string(cfg.parts) + " partitions for " +
                      std::to_string(g.num_nodes) + " nodes");
  }
  const TrainConfig tc = make_train_config(cfg, g);
  const CsrMatrix adj = model_adjacency(g, tc.model.kind, cfg.degree_with_self_loops);
  const PartitionPlan plan =
      partition_nodes(g, cfg.parts, parse_partition_strategy(cfg.partition), cfg.seed);
  const auto parts = build_partitions(g, adj, plan);

  ExperimentResult r;
  r.train = train(g, parts, tc, cfg.degree_with_self_loops);
  r.metrics_csv = format_metrics_csv(r.train.epochs, cfg.record_wall_time);
  r.summary = make_summary(cfg, r.train);

  if (!cfg.out.empty()) {
    std::filesystem::create_directories(cfg.out);
    auto write = [](const std::filesystem::path& p, const std::string& text) {
      std::ofstream f(p, std::ios::binary);
      f << text;
      if (!f) throw Error("cannot write " + p.string());
    };
    write(cfg.out / "metrics.csv", r.metrics_csv);
    write(cfg.out / "summary.json", r.summary.dump(2) + "\n");
  }
  return r;
}

std::vector<CompareRow> compare_summaries(const std::vector<nlohmann::json>& summaries,
                                          const std::vector<std::string>& names) {
  if (summaries.size() < 2) throw ConfigError("compare needs at least two summaries");
  if (names.size() != summaries.size()) throw ConfigError("compare: one name per summary");
  std::vector<CompareRow> rows;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto& s = summaries[i];
    const int version = s.value("schema_version", -1);
    if (version != kSummarySchemaVersion) {
      throw ConfigError(names[i] + ": summary schema version " + std::to_string(version) +
                        ", expected " + std::to_string(kSummarySchemaVersion));
    }
    try {
      CompareRow row;
      row.name = names[i];
      row.mode = s.at("config").at("mode").get<std::string>();
      row.bits = s.at("config").at("bits").get<unsigned>();
      row.staleness = s.at("config").at("staleness").get<std::uint32_t>();
      if (!s.at("final").is_null()) {
        row.final_test = s.at("final").at("test_acc").get<double>();
        row.best_val_test = s.at("best_val").at("test_acc").get<double>();
      }
      row.epochs_to_best_val = s.at("epochs_to_best_val").get<std::uint32_t>();
      row.main_bytes = s.at("bytes").at("main").get<std::uint64_t>();
      row.meta_bytes = s.at("bytes").at("metadata").get<std::uint64_t>();
      rows.push_back(row);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(names[i] + ": malformed summary: " + e.what());
    }
  }
  const CompareRow& base = rows.front();
  for (auto& row : rows) {
    row.delta_final_test = row.final_test - base.final_test;
    row.main_bytes_ratio = base.main_bytes
                               ? static_cast<double>(row.main_bytes) /
                                     static_cast<double>(base.main_bytes)
                               : (row.main_bytes ? 0.0 : 1.0);
  }
  return rows;
}

std::vector<CompareRow> compare_runs(const std::vector<std::filesystem::path>& paths) {
  std::vector<nlohmann::json> summaries;
  std::vector<std::string> names;
  for (const auto& p : paths) {
    std::ifstream f(p);
    if (!f) throw LoadError(p.string() + ": cannot open");
    try {
      summaries.push_back(nlohmann::json::parse(f));
    } catch (const nlohmann::json::parse_error& e) {
      throw LoadError(p.string() + ": " + e.what());
    }
    names.push_back(p.string());
  }
  return compare_summaries(summaries, names);
}

void print_compare_table(const std::vector<CompareRow>& rows, std::ostream& os) {
  std::size_t name_w = 3;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  os << std::left << std::setw(static_cast<int>(name_w)) << "run" << std::right
     << std::setw(7) << "mode" << std::setw(6) << "bits" << std::setw(7) << "stale"
     << std::setw(12) << "final_test" << std::setw(12) << "bestv_test" << std::setw(12)
     << "ep_best_val" << std::setw(14) << "main_bytes" << std::setw(12) << "meta_bytes"
     << std::setw(11) << "d_test" << std::setw(11) << "bytes_x" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << r.name << std::right
       << std::setw(7) << r.mode << std::setw(6) << r.bits << std::setw(7) << r.staleness
       << std::setw(12) << fmt("%.4f", r.final_test) << std::setw(12)
       << fmt("%.4f", r.best_val_test) << std::setw(12) << r.epochs_to_best_val
       << std::setw(14) << r.main_bytes << std::setw(12) << r.meta_bytes << std::setw(11)
       << fmt("%+.4f", r.delta_final_test) << std::setw(11) << fmt("%.3f", r.main_bytes_ratio)
       << '\n';
  }
}

void print_compare_csv(const std::vector<CompareRow>& rows, std::ostream& os) {
  os << "run,mode,bits,staleness,final_test,best_val_test,epochs_to_best_val,main_bytes,"
        "meta_bytes,delta_final_test,main_bytes_ratio\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.mode << ',' << r.bits << ',' << r.staleness << ','
       << fmt("%.6f", r.final_test) << ',' << fmt("%.6f", r.best_val_test) << ','
       << r.epochs_to_best_val << ',' << r.main_bytes << ',' << r.meta_bytes << ','
       << fmt("%.6f", r.delta_final_test) << ',' << fmt("%.6f", r.main_bytes_ratio) << '\n';
  }
}

SbmSpec reference_sbm_spec(std::uint64_t seed) {
  SbmSpec s;
  s.communities = 4;
  s.nodes_per_community = 500;
  s.p_in = 0.02;
  s.p_out = 0.005;
  s.feature_dim = 32;
  s.feature_noise = 3.0;
  s.seed = seed;
  return s;
}

ExperimentConfig reference_experiment(std::uint64_t seed) {
  const SbmSpec s = reference_sbm_spec(seed);
  ExperimentConfig cfg;
  cfg.synthetic = "sbm:k=" + std::to_string(s.communities) +
                  ",n=" + std::to_string(s.nodes_per_community) + ",p_in=" + fmt("%g", s.p_in) +
                  ",p_out=" + fmt("%g", s.p_out) + ",d=" + std::to_string(s.feature_dim) +
                  ",noise=" + fmt("%g", s.feature_noise);
  cfg.parts = 4;
  cfg.layers = 2;
  cfg.hidden = 32;
  cfg.lr = 0.01;
  cfg.epochs = 100;
  cfg.seed = seed;
  return cfg;
}

}  // namespace halobit
