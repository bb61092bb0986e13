// halobit: run, compare and generate.
//
//   halobit run --synthetic sbm:k=4,n=125 --parts 4 --bits 1 --mode sync --epochs 100 --out runs/a
//   halobit compare runs/a/summary.json runs/b/summary.json [--csv]
//   halobit generate --synthetic sbm:k=4,n=125,seed=3 --out data/sbm
//
// Exit codes: 0 ok, 2 config error, 3 runtime error.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "halobit/dataset.hpp"
#include "halobit/error.hpp"
#include "halobit/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int report(const char* kind, const std::vector<std::string>& messages, int code) {
  nlohmann::json err = {{"error", kind}, {"messages", messages}};
  std::cerr << err.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace halobit;

  CLI::App app{"Distributed GNN training simulator with low-bit halo exchange"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  ExperimentConfig cfg;
  std::string dataset;
  auto* run = app.add_subcommand("run", "Train and write metrics.csv + summary.json");
  auto* input = run->add_option_group("input");
  input->add_option("--dataset", dataset, "Dataset directory");
  input->add_option("--synthetic", cfg.synthetic, "Synthetic spec, e.g. sbm:k=4,n=125");
  run->add_option("--parts", cfg.parts, "Number of partitions")->capture_default_str();
  run->add_option("--partition", cfg.partition, "contiguous|bfs|hash")->capture_default_str();
  run->add_option("--model", cfg.model, "gcn|sage")->capture_default_str();
  run->add_option("--layers", cfg.layers, "Number of layers")->capture_default_str();
  run->add_option("--hidden", cfg.hidden, "Hidden width")->capture_default_str();
  run->add_option("--bits", cfg.bits, "1..8|16|32")->capture_default_str();
  run->add_option("--mode", cfg.mode, "sync|async")->capture_default_str();
  run->add_option("--staleness", cfg.staleness, "Force a sync epoch every K epochs (async)")
      ->capture_default_str();
  run->add_option("--epochs", cfg.epochs, "Epochs")->capture_default_str();
  run->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  run->add_option("--dropout", cfg.dropout, "Dropout rate")->capture_default_str();
  run->add_option("--seed", cfg.seed, "Seed")->capture_default_str();
  run->add_option("--warmup", cfg.warmup, "Epochs excluded from averaged counters")
      ->capture_default_str();
  std::string out;
  run->add_option("--out", out, "Output directory")->required();
  run->add_flag("--degree-with-self-loops,!--no-degree-with-self-loops",
                cfg.degree_with_self_loops, "Count the self-loop in GCN degrees")
      ->capture_default_str();
  run->add_flag("--wall-time", cfg.record_wall_time, "Record wall_ms (breaks byte-identity)");

  std::vector<std::string> summaries;
  bool csv = false;
  auto* compare = app.add_subcommand("compare", "Compare summary.json files");
  compare->add_option("summaries", summaries, "summary.json files (first is the baseline)")
      ->required()
      ->expected(2, -1);
  compare->add_flag("--csv", csv, "Emit CSV instead of a table");

  std::string gen_spec;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset directory");
  generate->add_option("--synthetic", gen_spec, "Synthetic spec")->required();
  generate->add_option("--seed", gen_seed, "Seed when the spec has none")->capture_default_str();
  generate->add_option("--out", gen_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report("config", {e.what()}, kExitConfig);
  }

  try {
    if (*run) {
      cfg.dataset = dataset;
      cfg.out = out;
      const auto problems = cfg.problems();
      if (!problems.empty()) return report("config", problems, kExitConfig);
      const auto r = run_experiment(cfg);
      const auto& s = r.summary;
      std::cout << "epochs " << s["epochs_run"];
      if (!s["final"].is_null()) {
        std::cout << "  final test " << s["final"]["test_acc"] << "  best-val epoch "
                  << s["best_val"]["epoch"] << " (test " << s["best_val"]["test_acc"] << ")";
      }
      std::cout << "\nwrote " << (cfg.out / "metrics.csv").string() << " and "
                << (cfg.out / "summary.json").string() << "\n";
    } else if (*compare) {
      std::vector<std::filesystem::path> paths(summaries.begin(), summaries.end());
      const auto rows = compare_runs(paths);
      if (csv) {
        print_compare_csv(rows, std::cout);
      } else {
        print_compare_table(rows, std::cout);
      }
    } else if (*generate) {
      const Graph g = generate_sbm(parse_sbm_spec(gen_spec, gen_seed));
      save_dataset(g, gen_out);
      std::cout << "wrote " << g.num_nodes << " nodes, " << g.edges.size() / 2
                << " undirected edges to " << gen_out << "\n";
    }
  } catch (const ConfigError& e) {
    return report("config", {e.what()}, kExitConfig);
  } catch (const std::exception& e) {
    return report("runtime", {e.what()}, kExitRuntime);
  }
  return 0;
}
