#pragma once

#include <cmath>
#include <cstdint>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphvalue/errors.hpp"
#include "graphvalue/rng.hpp"

namespace graphvalue {

enum class Cell : char { Empty = '.', Obstacle = '#', Fire = 'F', Goal = 'G' };

enum class WorldKind { Plain, Traps };

inline std::string to_string(WorldKind k) { return k == WorldKind::Plain ? "plain" : "traps"; }
inline WorldKind world_kind_from_string(const std::string& s) {
  if (s == "plain") return WorldKind::Plain;
  if (s == "traps") return WorldKind::Traps;
  throw ParseError("unknown world kind \"" + s + "\" (expected \"plain\" or \"traps\")");
}

// Tunable world constants. Defaults: slip 0.8 with the remainder split
// between the two perpendicular directions, goal +1 / fire -1 / step 0,
// discount 0.9, and 10% obstacle / 10% fire density in the traps variant.
struct GridWorldParams {
  double slip_prob = 0.8;
  double discount = 0.9;
  double reward_goal = 1.0;
  double reward_fire = -1.0;
  double reward_step = 0.0;
  double obstacle_frac = 0.10;
  double fire_frac = 0.10;

  bool operator==(const GridWorldParams& o) const {
    return slip_prob == o.slip_prob && discount == o.discount && reward_goal == o.reward_goal &&
           reward_fire == o.reward_fire && reward_step == o.reward_step &&
           obstacle_frac == o.obstacle_frac && fire_frac == o.fire_frac;
  }
};

// Declarative description of one grid world. States are cells in row-major
// order; cell (r, c) has index r * size + c.
struct GridWorldSpec {
  std::uint64_t seed = 0;
  int size = 0;
  std::vector<Cell> cells;
  double slip_prob = 0.8;
  double discount = 0.9;
  double reward_goal = 1.0;
  double reward_fire = -1.0;
  double reward_step = 0.0;

  int n_states() const { return size * size; }
  int index(int row, int col) const { return row * size + col; }
  Cell cell(int row, int col) const { return cells[static_cast<std::size_t>(index(row, col))]; }

  int goal_index() const {
    for (int s = 0; s < n_states(); ++s)
      if (cells[static_cast<std::size_t>(s)] == Cell::Goal) return s;
    return -1;
  }

  int count(Cell kind) const {
    int n = 0;
    for (Cell c : cells)
      if (c == kind) n++;
    return n;
  }

  void validate() const;
  bool operator==(const GridWorldSpec& o) const {
    return seed == o.seed && size == o.size && cells == o.cells && slip_prob == o.slip_prob &&
           discount == o.discount && reward_goal == o.reward_goal && reward_fire == o.reward_fire &&
           reward_step == o.reward_step;
  }
};

// True iff every Empty cell can reach the Goal through non-Obstacle cells
// (4-neighborhood BFS from the goal).
inline bool goal_reaches_all_empty(const GridWorldSpec& spec) {
  int n = spec.n_states();
  int goal = spec.goal_index();
  if (goal < 0) return false;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::queue<int> frontier;
  seen[static_cast<std::size_t>(goal)] = 1;
  frontier.push(goal);
  while (!frontier.empty()) {
    int s = frontier.front();
    frontier.pop();
    int r = s / spec.size, c = s % spec.size;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= spec.size || nc < 0 || nc >= spec.size) continue;
      int t = spec.index(nr, nc);
      if (seen[static_cast<std::size_t>(t)] || spec.cells[static_cast<std::size_t>(t)] == Cell::Obstacle) continue;
      seen[static_cast<std::size_t>(t)] = 1;
      frontier.push(t);
    }
  }
  for (int s = 0; s < n; ++s)
    if (spec.cells[static_cast<std::size_t>(s)] == Cell::Empty && !seen[static_cast<std::size_t>(s)]) return false;
  return true;
}

inline void GridWorldSpec::validate() const {
  if (size < 2) throw ContractError("grid size must be >= 2, got " + std::to_string(size));
  if (static_cast<int>(cells.size()) != n_states())
    throw ContractError("cell grid has " + std::to_string(cells.size()) + " entries, expected " +
                        std::to_string(n_states()));
  if (count(Cell::Goal) != 1)
    throw ContractError("expected exactly one Goal cell, found " + std::to_string(count(Cell::Goal)));
  if (!(discount > 0.0 && discount < 1.0))
    throw ContractError("discount must lie in (0,1), got " + std::to_string(discount));
  if (!(slip_prob >= 0.0 && slip_prob <= 1.0))
    throw ContractError("slip_prob must lie in [0,1], got " + std::to_string(slip_prob));
  if (!goal_reaches_all_empty(*this))
    throw ContractError("grid world has Empty cells with no path to the Goal");
}

// Deterministic generator. Plain worlds are all Empty plus one Goal placed
// uniformly at random. Traps worlds additionally place round(obstacle_frac *
// N^2) obstacles and round(fire_frac * N^2) fire cells, rejecting layouts in
// which some Empty cell cannot reach the Goal. More than 1000 rejected
// layouts signals an over-constrained size/density combination.
inline GridWorldSpec generate_grid_world(std::uint64_t seed, int size, WorldKind kind,
                                         const GridWorldParams& params = GridWorldParams{}) {
  if (size < 2) throw ContractError("grid size must be >= 2, got " + std::to_string(size));

  GridWorldSpec spec;
  spec.seed = seed;
  spec.size = size;
  spec.slip_prob = params.slip_prob;
  spec.discount = params.discount;
  spec.reward_goal = params.reward_goal;
  spec.reward_fire = params.reward_fire;
  spec.reward_step = params.reward_step;

  int n = size * size;
  int n_obstacle = 0, n_fire = 0;
  if (kind == WorldKind::Traps) {
    n_obstacle = static_cast<int>(std::llround(params.obstacle_frac * n));
    n_fire = static_cast<int>(std::llround(params.fire_frac * n));
  }
  if (n_obstacle + n_fire + 1 > n)
    throw GenerationError("cannot place " + std::to_string(n_obstacle) + " obstacles and " +
                          std::to_string(n_fire) + " fire cells in a " + std::to_string(size) + "x" +
                          std::to_string(size) + " grid");

  Rng rng(seed);
  const int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    spec.cells.assign(static_cast<std::size_t>(n), Cell::Empty);
    int goal = rng.uniform_int(n);
    spec.cells[static_cast<std::size_t>(goal)] = Cell::Goal;

    if (kind == WorldKind::Traps) {
      std::vector<int> others;
      others.reserve(static_cast<std::size_t>(n) - 1);
      for (int s = 0; s < n; ++s)
        if (s != goal) others.push_back(s);
      rng.shuffle(others);
      for (int i = 0; i < n_obstacle; ++i) spec.cells[static_cast<std::size_t>(others[static_cast<std::size_t>(i)])] = Cell::Obstacle;
      for (int i = 0; i < n_fire; ++i)
        spec.cells[static_cast<std::size_t>(others[static_cast<std::size_t>(n_obstacle + i)])] = Cell::Fire;
    }

    if (goal_reaches_all_empty(spec)) return spec;
  }
  throw GenerationError("no connected layout found in " + std::to_string(kMaxAttempts) +
                        " attempts (size " + std::to_string(size) + ", obstacles " +
                        std::to_string(n_obstacle) + ", fire " + std::to_string(n_fire) + ")");
}

// JSON round-trip. Cells serialize as single-character codes in row-major
// order: "." empty, "#" obstacle, "F" fire, "G" goal.
inline nlohmann::json to_json(const GridWorldSpec& spec) {
  nlohmann::json cells = nlohmann::json::array();
  for (Cell c : spec.cells) cells.push_back(std::string(1, static_cast<char>(c)));
  return nlohmann::json{{"seed", spec.seed},
                        {"size", spec.size},
                        {"cells", cells},
                        {"slip_prob", spec.slip_prob},
                        {"discount", spec.discount},
                        {"reward_goal", spec.reward_goal},
                        {"reward_fire", spec.reward_fire},
                        {"reward_step", spec.reward_step}};
}

inline GridWorldSpec grid_world_from_json(const nlohmann::json& j) {
  GridWorldSpec spec;
  try {
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.size = j.at("size").get<int>();
    spec.slip_prob = j.at("slip_prob").get<double>();
    spec.discount = j.at("discount").get<double>();
    spec.reward_goal = j.at("reward_goal").get<double>();
    spec.reward_fire = j.at("reward_fire").get<double>();
    spec.reward_step = j.at("reward_step").get<double>();
    for (const auto& c : j.at("cells")) {
      std::string s = c.get<std::string>();
      if (s.size() != 1 || std::string(".#FG").find(s[0]) == std::string::npos)
        throw ParseError("invalid cell code \"" + s + "\"");
      spec.cells.push_back(static_cast<Cell>(s[0]));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed grid-world document: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace graphvalue
