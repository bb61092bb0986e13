#include "halobit/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <json.hpp>

#include "halobit/error.hpp"
#include "halobit/rng.hpp"

namespace halobit {

namespace fs = std::filesystem;

namespace {

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
std::vector<T> read_array(const fs::path& path, std::size_t expected_count) {
  const auto bytes = read_file(path);
  const std::size_t expected = expected_count * sizeof(T);
  if (bytes.size() != expected) {
    throw LoadError(path.string() + ": size " + std::to_string(bytes.size()) +
                    " bytes, expected " + std::to_string(expected) + " (mismatch at offset " +
                    std::to_string(std::min(bytes.size(), expected)) + ")");
  }
  std::vector<T> out(expected_count);
  if (expected) std::memcpy(out.data(), bytes.data(), expected);
  return out;
}

template <typename T>
void write_array(const fs::path& path, const std::vector<T>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError(path.string() + ": cannot create file");
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
}

std::uint64_t parse_uint(std::string_view tok, const fs::path& file, std::size_t line) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw LoadError(file.string() + ": line " + std::to_string(line) + ": '" + std::string(tok) +
                    "' is not a node id");
  }
  return v;
}

}  // namespace

Graph load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError(dir.string() + ": not a directory");
  Graph g;

  const fs::path meta_path = dir / "meta.json";
  nlohmann::json meta;
  std::size_t dim = 0;
  try {
    const auto text = read_file(meta_path);
    meta = nlohmann::json::parse(text.begin(), text.end());
    g.num_nodes = meta.at("num_nodes").get<std::uint32_t>();
    g.num_classes = meta.at("num_classes").get<std::uint32_t>();
    dim = meta.at("feature_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(meta_path.string() + ": " + e.what());
  }

  const fs::path edges_path = dir / "edges.tsv";
  {
    std::ifstream in(edges_path);
    if (!in) throw LoadError(edges_path.string() + ": cannot open file");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream fields(line);
      std::string a, b, extra;
      if (!(fields >> a >> b) || (fields >> extra)) {
        throw LoadError(edges_path.string() + ": line " + std::to_string(line_no) +
                        ": expected two integer columns");
      }
      const auto src = parse_uint(a, edges_path, line_no);
      const auto dst = parse_uint(b, edges_path, line_no);
      if (src >= g.num_nodes || dst >= g.num_nodes) {
        throw LoadError(edges_path.string() + ": line " + std::to_string(line_no) +
                        ": endpoint " + std::to_string(std::max(src, dst)) +
                        " >= num_nodes " + std::to_string(g.num_nodes));
      }
      g.edges.push_back({static_cast<NodeId>(src), static_cast<NodeId>(dst)});
    }
  }
  symmetrize(g);

  const auto feats = read_array<float>(dir / "features.f32", std::size_t{g.num_nodes} * dim);
  g.features = DenseMatrix(g.num_nodes, dim, std::vector<double>(feats.begin(), feats.end()));

  const fs::path labels_path = dir / "labels.u32";
  g.labels = read_array<std::uint32_t>(labels_path, g.num_nodes);
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    if (g.labels[i] >= g.num_classes) {
      throw LoadError(labels_path.string() + ": offset " + std::to_string(i * 4) + ": class " +
                      std::to_string(g.labels[i]) + " >= num_classes " +
                      std::to_string(g.num_classes));
    }
  }

  const fs::path masks_path = dir / "masks.u8";
  const auto masks = read_array<std::uint8_t>(masks_path, g.num_nodes);
  g.splits.resize(g.num_nodes);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i] > 3) {
      throw LoadError(masks_path.string() + ": offset " + std::to_string(i) + ": mask value " +
                      std::to_string(masks[i]) + " not in 0..3");
    }
    g.splits[i] = static_cast<NodeSplit>(masks[i]);
  }
  return g;
}

void save_dataset(const Graph& g, const fs::path& dir) {
  g.validate();
  fs::create_directories(dir);
  nlohmann::json meta = {{"num_nodes", g.num_nodes},
                         {"feature_dim", g.feature_dim()},
                         {"num_classes", g.num_classes},
                         {"format_version", 1}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
  {
    // Only one direction of each undirected pair is written; the loader
    // symmetrizes.
    std::ofstream out(dir / "edges.tsv");
    for (const Edge& e : g.edges) {
      if (e.src <= e.dst) out << e.src << '\t' << e.dst << '\n';
    }
  }
  std::vector<float> feats(g.features.values().begin(), g.features.values().end());
  write_array(dir / "features.f32", feats);
  write_array(dir / "labels.u32", g.labels);
  std::vector<std::uint8_t> masks(g.splits.size());
  for (std::size_t i = 0; i < masks.size(); ++i) masks[i] = static_cast<std::uint8_t>(g.splits[i]);
  write_array(dir / "masks.u8", masks);
}

void SbmSpec::validate() const {
  if (communities == 0 || nodes_per_community == 0) {
    throw ConfigError("sbm: k and n must be positive");
  }
  if (!(p_out >= 0.0 && p_out <= p_in && p_in <= 1.0)) {
    throw ConfigError("sbm: need 0 <= p_out <= p_in <= 1");
  }
  if (feature_dim == 0) throw ConfigError("sbm: feature dim must be positive");
  if (!(feature_noise >= 0.0)) throw ConfigError("sbm: noise must be >= 0");
}

SbmSpec parse_sbm_spec(std::string_view text, std::uint64_t default_seed) {
  constexpr std::string_view kPrefix = "sbm";
  if (text.substr(0, kPrefix.size()) != kPrefix) {
    throw ConfigError("synthetic spec must start with 'sbm', got '" + std::string(text) + "'");
  }
  text.remove_prefix(kPrefix.size());
  SbmSpec spec;
  spec.seed = default_seed;
  if (!text.empty()) {
    if (text.front() != ':') throw ConfigError("synthetic spec: expected ':' after 'sbm'");
    text.remove_prefix(1);
  }
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = text.substr(0, comma);
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("synthetic spec: '" + std::string(item) + "' is not key=value");
    }
    const std::string key(item.substr(0, eq));
    const std::string value(item.substr(eq + 1));
    try {
      if (key == "k") spec.communities = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "n") spec.nodes_per_community = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "p_in") spec.p_in = std::stod(value);
      else if (key == "p_out") spec.p_out = std::stod(value);
      else if (key == "d") spec.feature_dim = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "noise") spec.feature_noise = std::stod(value);
      else if (key == "seed") spec.seed = std::stoull(value);
      else throw ConfigError("synthetic spec: unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("synthetic spec: bad value for '" + key + "': '" + value + "'");
    }
  }
  spec.validate();
  return spec;
}

Graph generate_sbm(const SbmSpec& spec) {
  spec.validate();
  Graph g;
  const std::uint32_t n = spec.nodes_per_community * spec.communities;
  g.num_nodes = n;
  g.num_classes = spec.communities;
  g.labels.resize(n);
  for (NodeId i = 0; i < n; ++i) g.labels[i] = i / spec.nodes_per_community;

  const RngStream edge_rng(StreamKey{.seed = spec.seed, .domain = StreamDomain::GraphEdges});
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const double p = g.labels[u] == g.labels[v] ? spec.p_in : spec.p_out;
      if (edge_rng.at(std::uint64_t{u} * n + v) < p) {
        g.edges.push_back({u, v});
        g.edges.push_back({v, u});
      }
    }
  }

  // Box-Muller on the keyed stream; one pair of uniforms per element.
  const RngStream noise_rng(StreamKey{.seed = spec.seed, .domain = StreamDomain::FeatureNoise});
  const std::uint32_t d = spec.feature_dim;
  g.features = DenseMatrix(n, d);
  for (NodeId i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      const std::uint64_t idx = 2 * (std::uint64_t{i} * d + j);
      const double u1 = 1.0 - noise_rng.at(idx);  // (0, 1]
      const double u2 = noise_rng.at(idx + 1);
      const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      const double signal = (j % spec.communities) == g.labels[i] ? 1.0 : 0.0;
      g.features(i, j) = signal + spec.feature_noise * z;
    }
  }

  std::vector<NodeId> order(n);
  for (NodeId i = 0; i < n; ++i) order[i] = i;
  RngStream split_rng(StreamKey{.seed = spec.seed, .domain = StreamDomain::MaskSplit});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[split_rng.next_below(i)]);
  }
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;
  g.splits.assign(n, NodeSplit::Test);
  for (std::size_t i = 0; i < n_train; ++i) g.splits[order[i]] = NodeSplit::Train;
  for (std::size_t i = n_train; i < n_train + n_val; ++i) g.splits[order[i]] = NodeSplit::Val;
  return g;
}

}  // namespace halobit
