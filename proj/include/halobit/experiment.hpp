#pragma once

// Experiment runner behind the CLI: config validation, graph loading or
// generation, training, and the metrics.csv / summary.json outputs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "halobit/dataset.hpp"
#include "halobit/graph.hpp"
#include "halobit/trainer.hpp"

namespace halobit {

inline constexpr int kSummarySchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kMetricsHeader =
    "epoch,mode,train_loss,train_acc,val_acc,test_acc,main_bytes,meta_bytes,header_bytes,"
    "allreduce_bytes,messages,wall_ms";

struct ExperimentConfig {
  std::filesystem::path dataset;  // exactly one of dataset / synthetic
  std::string synthetic;
  std::uint32_t parts = 1;
  std::string partition = "contiguous";
  std::string model = "gcn";
  std::uint32_t layers = 2;
  std::size_t hidden = 32;
  unsigned bits = 1;
  std::string mode = "sync";
  std::uint32_t staleness = 0;
  std::uint32_t epochs = 100;
  double lr = 0.01;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t warmup = 10;
  std::filesystem::path out;  // empty: write nothing
  bool degree_with_self_loops = true;
  // Off by default so metrics.csv is byte-identical across runs.
  bool record_wall_time = false;

  // Every problem found, one message per field. Empty when valid.
  std::vector<std::string> problems() const;
  // Throws ConfigError listing all problems.
  void validate() const;
};

Graph load_graph(const ExperimentConfig& cfg);
// Fills the model widths from the graph and the remaining training fields.
TrainConfig make_train_config(const ExperimentConfig& cfg, const Graph& g);

// Threads per worker from HALOBIT_THREADS (or the hardware) split across
// `parts` workers; at least 1.
int threads_per_worker(std::uint32_t parts);

struct ExperimentResult {
  TrainResult train;
  std::string metrics_csv;
  nlohmann::json summary;
};

// Validates, trains, and writes metrics.csv and summary.json under cfg.out
// (created if needed) when cfg.out is non-empty.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::string format_metrics_csv(const std::vector<EpochRecord>& epochs, bool wall_time);
nlohmann::json make_summary(const ExperimentConfig& cfg, const TrainResult& result);

struct CompareRow {
  std::string name;
  std::string mode;
  unsigned bits = 0;
  std::uint32_t staleness = 0;
  double final_test = 0.0;
  double best_val_test = 0.0;
  std::uint32_t epochs_to_best_val = 0;
  std::uint64_t main_bytes = 0;
  std::uint64_t meta_bytes = 0;
  // Relative to the first run.
  double delta_final_test = 0.0;
  double main_bytes_ratio = 0.0;
};

// Needs at least two summaries with the current schema version.
std::vector<CompareRow> compare_summaries(const std::vector<nlohmann::json>& summaries,
                                          const std::vector<std::string>& names);
std::vector<CompareRow> compare_runs(const std::vector<std::filesystem::path>& paths);
void print_compare_table(const std::vector<CompareRow>& rows, std::ostream& os);
void print_compare_csv(const std::vector<CompareRow>& rows, std::ostream& os);

// The desk-scale reference task: 4 communities of 500 nodes, 32-dim noisy
// one-hot features, 2-layer GCN with 32 hidden units, lr 0.01.
SbmSpec reference_sbm_spec(std::uint64_t seed);
ExperimentConfig reference_experiment(std::uint64_t seed);

}  // namespace halobit
