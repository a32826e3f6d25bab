#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "graphvalue/errors.hpp"
#include "graphvalue/grid_world.hpp"
#include "graphvalue/mdp.hpp"
#include "graphvalue/rng.hpp"
#include "graphvalue/tensor.hpp"

namespace graphvalue {

inline constexpr const char* kDatasetSchema = "graphvalue-v1";
inline constexpr int kNodeFeatures = 4;   // x/N, y/N, v0, is_query
inline constexpr int kEdgeSlots = 8;      // per action: reward value, reachability flag

// One supervised instance: a solved grid world viewed as a complete graph,
// with the value-rank bucket of a single query state as the label.
//
// Edge slot layout for ordered pair (i, j): slot 2a holds R[i][a][j] and
// slot 2a+1 holds 1.0 where T[i][a][j] > 0. Transition probabilities are
// deliberately absent: the network has to infer them.
struct GraphSample {
  int grid_size = 0;
  WorldKind kind = WorldKind::Plain;
  std::uint64_t world_seed = 0;
  std::uint64_t sample_seed = 0;
  double discount = 0.0;
  int query = 0;
  int label = 0;
  int bucket_count = 0;
  Tensor node_features;   // [n x kNodeFeatures]
  SparseEdgeTable edges;  // n nodes, kEdgeSlots slots
  Tensor action_rewards;  // [n x |A|]: expected immediate reward per state-action

  int n_nodes() const { return grid_size * grid_size; }

  bool operator==(const GraphSample& o) const {
    return grid_size == o.grid_size && kind == o.kind && world_seed == o.world_seed &&
           sample_seed == o.sample_seed && discount == o.discount && query == o.query && label == o.label &&
           bucket_count == o.bucket_count && node_features.data == o.node_features.data &&
           edges == o.edges && action_rewards.data == o.action_rewards.data;
  }
};

struct DatasetConfig {
  int grid_size = 8;
  WorldKind kind = WorldKind::Plain;
  int train_count = 2000;
  int test_count = 500;
  int bucket_count = 4;
  std::uint64_t master_seed = 0;
  GridWorldParams world;

  bool operator==(const DatasetConfig& o) const {
    return grid_size == o.grid_size && kind == o.kind && train_count == o.train_count &&
           test_count == o.test_count && bucket_count == o.bucket_count && master_seed == o.master_seed &&
           world == o.world;
  }
};

struct Dataset {
  DatasetConfig config;
  std::vector<GraphSample> train;
  std::vector<GraphSample> test;
};

// Builds the features and label for one solved world. Pure in its arguments;
// sample_seed drives only the v0 node feature.
inline GraphSample make_sample(const GridWorldSpec& spec, const Mdp& mdp, const ValueSolution& solution,
                               const RankLabeling& ranks, int query, std::uint64_t sample_seed,
                               WorldKind kind) {
  int n = spec.n_states();
  if (query < 0 || query >= n)
    throw ContractError("query state " + std::to_string(query) + " out of range [0, " + std::to_string(n) + ")");
  if (spec.cells[static_cast<std::size_t>(query)] == Cell::Obstacle)
    throw ContractError("query state " + std::to_string(query) + " is an obstacle cell");
  if (static_cast<int>(solution.values.size()) != n || static_cast<int>(ranks.buckets.size()) != n)
    throw ContractError("solution/ranking size does not match the world");

  GraphSample sample;
  sample.grid_size = spec.size;
  sample.kind = kind;
  sample.world_seed = spec.seed;
  sample.sample_seed = sample_seed;
  sample.discount = spec.discount;
  sample.query = query;
  sample.label = ranks.buckets[static_cast<std::size_t>(query)];
  sample.bucket_count = ranks.bucket_count;

  Rng rng(sample_seed);
  sample.node_features = Tensor::zeros(Shape::mat(n, kNodeFeatures));
  for (int s = 0; s < n; ++s) {
    int row = s / spec.size, col = s % spec.size;
    sample.node_features.at(s, 0) = static_cast<double>(col) / spec.size;
    sample.node_features.at(s, 1) = static_cast<double>(row) / spec.size;
    sample.node_features.at(s, 2) = rng.uniform();
    sample.node_features.at(s, 3) = s == query ? 1.0 : 0.0;
  }

  sample.edges.n_nodes = n;
  sample.edges.n_slots = kEdgeSlots;
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < kNumActions; ++a)
      for (int j = 0; j < n; ++j) {
        double reward = mdp.r(i, a, j);
        if (reward != 0.0) sample.edges.add(i, j, 2 * a, reward);
        if (mdp.t(i, a, j) > 0.0) sample.edges.add(i, j, 2 * a + 1, 1.0);
      }
  sample.edges.finalize();

  sample.action_rewards = Tensor::zeros(Shape::mat(n, kNumActions));
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < kNumActions; ++a) sample.action_rewards.at(s, a) = mdp.expected_reward(s, a);
  return sample;
}

namespace detail {

// World and feature seeds for the dataset's global sample index. Documented
// counter scheme: world seeds derive from (master, stream 1, index), feature
// seeds from (master, stream 2, index), query draws from (master, stream 3,
// index), with train samples occupying indices [0, train_count) and test
// samples [train_count, train_count + test_count). Distinct indices give
// distinct worlds, so the splits cannot share a world.
inline GraphSample build_one_sample(const DatasetConfig& config, int global_index) {
  std::uint64_t world_seed = derive_seed(config.master_seed, 1, static_cast<std::uint64_t>(global_index));
  std::uint64_t sample_seed = derive_seed(config.master_seed, 2, static_cast<std::uint64_t>(global_index));
  std::uint64_t query_seed = derive_seed(config.master_seed, 3, static_cast<std::uint64_t>(global_index));

  GridWorldSpec spec = generate_grid_world(world_seed, config.grid_size, config.kind, config.world);
  Mdp mdp = compile_mdp(spec);
  ValueSolution solution = value_iteration(mdp);
  if (!solution.converged)
    throw NumericFault("value iteration failed to converge for world seed " + std::to_string(world_seed));
  RankLabeling ranks = rank_states(solution, config.bucket_count);

  std::vector<int> valid;
  for (int s = 0; s < spec.n_states(); ++s)
    if (spec.cells[static_cast<std::size_t>(s)] != Cell::Obstacle) valid.push_back(s);
  Rng query_rng(query_seed);
  int query = valid[static_cast<std::size_t>(query_rng.uniform_int(static_cast<int>(valid.size())))];

  return make_sample(spec, mdp, solution, ranks, query, sample_seed, config.kind);
}

}  // namespace detail

// Fresh world per sample; splits are disjoint by construction of the seed
// counter scheme (verified anyway).
inline Dataset build_dataset(const DatasetConfig& config) {
  if (config.train_count < 1 || config.test_count < 0)
    throw ContractError("dataset sizes must be positive (train " + std::to_string(config.train_count) +
                        ", test " + std::to_string(config.test_count) + ")");
  Dataset dataset;
  dataset.config = config;
  for (int i = 0; i < config.train_count; ++i) dataset.train.push_back(detail::build_one_sample(config, i));
  for (int i = 0; i < config.test_count; ++i)
    dataset.test.push_back(detail::build_one_sample(config, config.train_count + i));

  std::set<std::uint64_t> train_worlds;
  for (const GraphSample& s : dataset.train) train_worlds.insert(s.world_seed);
  for (const GraphSample& s : dataset.test)
    if (train_worlds.count(s.world_seed))
      throw ContractError("world seed " + std::to_string(s.world_seed) + " appears in both splits");
  return dataset;
}

// ---- JSON (de)serialization -------------------------------------------------

inline nlohmann::json dataset_config_to_json(const DatasetConfig& c) {
  return nlohmann::json{{"grid_size", c.grid_size},
                        {"kind", to_string(c.kind)},
                        {"train_count", c.train_count},
                        {"test_count", c.test_count},
                        {"bucket_count", c.bucket_count},
                        {"master_seed", c.master_seed},
                        {"slip_prob", c.world.slip_prob},
                        {"discount", c.world.discount},
                        {"reward_goal", c.world.reward_goal},
                        {"reward_fire", c.world.reward_fire},
                        {"reward_step", c.world.reward_step},
                        {"obstacle_frac", c.world.obstacle_frac},
                        {"fire_frac", c.world.fire_frac}};
}

// Accepts partial documents: absent fields keep their defaults.
inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  try {
    c.grid_size = j.value("grid_size", c.grid_size);
    if (j.contains("kind")) c.kind = world_kind_from_string(j["kind"].get<std::string>());
    c.train_count = j.value("train_count", c.train_count);
    c.test_count = j.value("test_count", c.test_count);
    c.bucket_count = j.value("bucket_count", c.bucket_count);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.world.slip_prob = j.value("slip_prob", c.world.slip_prob);
    c.world.discount = j.value("discount", c.world.discount);
    c.world.reward_goal = j.value("reward_goal", c.world.reward_goal);
    c.world.reward_fire = j.value("reward_fire", c.world.reward_fire);
    c.world.reward_step = j.value("reward_step", c.world.reward_step);
    c.world.obstacle_frac = j.value("obstacle_frac", c.world.obstacle_frac);
    c.world.fire_frac = j.value("fire_frac", c.world.fire_frac);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed dataset config: ") + e.what());
  }
  return c;
}

inline nlohmann::json sample_to_json(const GraphSample& s, const char* split) {
  nlohmann::json edges = nlohmann::json::array();
  for (const SparseEdgeTable::Entry& e : s.edges.entries)
    edges.push_back(nlohmann::json::array({e.src, e.dst, e.slot, e.value}));
  return nlohmann::json{{"split", split},
                        {"world_seed", s.world_seed},
                        {"sample_seed", s.sample_seed},
                        {"query", s.query},
                        {"label", s.label},
                        {"nodes", s.node_features.data},
                        {"action_rewards", s.action_rewards.data},
                        {"edges", edges}};
}

inline GraphSample sample_from_json(const nlohmann::json& j, const DatasetConfig& config, int line_no) {
  auto fail = [line_no](const std::string& why) {
    throw ParseError("dataset line " + std::to_string(line_no) + ": " + why);
  };
  GraphSample s;
  s.grid_size = config.grid_size;
  s.kind = config.kind;
  s.discount = config.world.discount;
  s.bucket_count = config.bucket_count;
  int n = s.n_nodes();
  try {
    s.world_seed = j.at("world_seed").get<std::uint64_t>();
    s.sample_seed = j.at("sample_seed").get<std::uint64_t>();
    s.query = j.at("query").get<int>();
    s.label = j.at("label").get<int>();
    std::vector<double> nodes = j.at("nodes").get<std::vector<double>>();
    if (static_cast<int>(nodes.size()) != n * kNodeFeatures)
      fail("expected " + std::to_string(n * kNodeFeatures) + " node feature values, got " +
           std::to_string(nodes.size()));
    s.node_features = Tensor(Shape::mat(n, kNodeFeatures), std::move(nodes));
    std::vector<double> rewards = j.at("action_rewards").get<std::vector<double>>();
    if (static_cast<int>(rewards.size()) != n * kNumActions)
      fail("expected " + std::to_string(n * kNumActions) + " action reward values, got " +
           std::to_string(rewards.size()));
    s.action_rewards = Tensor(Shape::mat(n, kNumActions), std::move(rewards));
    s.edges.n_nodes = n;
    s.edges.n_slots = kEdgeSlots;
    for (const nlohmann::json& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 4) fail("edge entries must be [src, dst, slot, value]");
      int src = e[0].get<int>(), dst = e[1].get<int>(), slot = e[2].get<int>();
      if (src < 0 || src >= n || dst < 0 || dst >= n || slot < 0 || slot >= kEdgeSlots)
        fail("edge entry (" + std::to_string(src) + ", " + std::to_string(dst) + ", " + std::to_string(slot) +
             ") out of range");
      s.edges.add(src, dst, slot, e[3].get<double>());
    }
    s.edges.finalize();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed sample: ") + e.what());
  }
  if (s.label < 0 || s.label >= config.bucket_count)
    fail("label " + std::to_string(s.label) + " outside [0, " + std::to_string(config.bucket_count) + ")");
  if (s.query < 0 || s.query >= n) fail("query " + std::to_string(s.query) + " out of range");
  int flagged = 0;
  for (int node = 0; node < n; ++node)
    if (s.node_features.at(node, 3) == 1.0) ++flagged;
  if (flagged != 1 || s.node_features.at(s.query, 3) != 1.0)
    fail("query flag must be set on exactly the query node");
  return s;
}

// JSON-lines: header object first, then one sample per line.
inline void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open dataset file for writing: " + path);
  nlohmann::json header = dataset_config_to_json(dataset.config);
  header["schema"] = kDatasetSchema;
  out << header.dump() << "\n";
  for (const GraphSample& s : dataset.train) out << sample_to_json(s, "train").dump() << "\n";
  for (const GraphSample& s : dataset.test) out << sample_to_json(s, "test").dump() << "\n";
  if (!out) throw Error("failed writing dataset file: " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("dataset file is empty: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("dataset line 1: header is not valid JSON: " + std::string(e.what()));
  }
  if (!header.is_object() || !header.contains("schema") || !header["schema"].is_string())
    throw ParseError("dataset line 1: missing schema marker");
  if (header["schema"].get<std::string>() != kDatasetSchema)
    throw ParseError("unsupported dataset schema \"" + header["schema"].get<std::string>() + "\" (expected \"" +
                     kDatasetSchema + "\")");

  Dataset dataset;
  dataset.config = dataset_config_from_json(header);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": not valid JSON: " + e.what());
    }
    std::string split = j.value("split", "");
    GraphSample sample = sample_from_json(j, dataset.config, line_no);
    if (split == "train")
      dataset.train.push_back(std::move(sample));
    else if (split == "test")
      dataset.test.push_back(std::move(sample));
    else
      throw ParseError("dataset line " + std::to_string(line_no) + ": split must be \"train\" or \"test\"");
  }
  if (static_cast<int>(dataset.train.size()) != dataset.config.train_count ||
      static_cast<int>(dataset.test.size()) != dataset.config.test_count)
    throw ParseError("dataset sample counts (" + std::to_string(dataset.train.size()) + " train, " +
                     std::to_string(dataset.test.size()) + " test) do not match the header (" +
                     std::to_string(dataset.config.train_count) + ", " + std::to_string(dataset.config.test_count) +
                     ")");
  return dataset;
}

}  // namespace graphvalue
