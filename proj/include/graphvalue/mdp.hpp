#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "graphvalue/errors.hpp"
#include "graphvalue/grid_world.hpp"

namespace graphvalue {

// Grid actions. Up decreases the row index.
enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3 };
constexpr int kNumActions = 4;

// Tabular MDP with dense row-stochastic transitions T[s][a][s'] and landing
// rewards R[s][a][s']. Terminal states are absorbing with zero reward.
struct Mdp {
  int n_states = 0;
  int n_actions = kNumActions;
  double discount = 0.0;
  std::vector<double> transition;  // n_states * n_actions * n_states
  std::vector<double> reward;
  std::vector<std::uint8_t> terminal;

  std::size_t idx(int s, int a, int s2) const {
    return (static_cast<std::size_t>(s) * n_actions + a) * n_states + s2;
  }
  double t(int s, int a, int s2) const { return transition[idx(s, a, s2)]; }
  double r(int s, int a, int s2) const { return reward[idx(s, a, s2)]; }

  // Expected immediate reward of taking action a in state s.
  double expected_reward(int s, int a) const {
    const double* tp = &transition[idx(s, a, 0)];
    const double* rp = &reward[idx(s, a, 0)];
    double acc = 0.0;
    for (int s2 = 0; s2 < n_states; ++s2) acc += tp[s2] * rp[s2];
    return acc;
  }

  // Checks row-stochasticity, entry ranges, and the absorbing-terminal
  // convention. Violations are programming errors, so this throws.
  void validate(double tol = 1e-12) const {
    for (int s = 0; s < n_states; ++s) {
      for (int a = 0; a < n_actions; ++a) {
        double sum = 0.0;
        for (int s2 = 0; s2 < n_states; ++s2) {
          double p = t(s, a, s2);
          if (p < 0.0 || p > 1.0)
            throw ContractError("transition probability out of [0,1] at (s=" + std::to_string(s) +
                                ", a=" + std::to_string(a) + ", s'=" + std::to_string(s2) + ")");
          sum += p;
        }
        if (std::abs(sum - 1.0) > tol)
          throw ContractError("transition row (s=" + std::to_string(s) + ", a=" + std::to_string(a) +
                              ") sums to " + std::to_string(sum));
        if (terminal[static_cast<std::size_t>(s)]) {
          if (t(s, a, s) != 1.0 || r(s, a, s) != 0.0)
            throw ContractError("terminal state " + std::to_string(s) + " is not absorbing with zero reward");
        }
      }
    }
  }
};

// One application of the Bellman optimality backup to the value vector.
// Returns B(values); also fills q_out with the backed-up Q table when given.
inline std::vector<double> bellman_backup(const Mdp& mdp, const std::vector<double>& values,
                                          std::vector<double>* q_out = nullptr) {
  std::vector<double> out(static_cast<std::size_t>(mdp.n_states), 0.0);
  if (q_out) q_out->assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double* tp = &mdp.transition[mdp.idx(s, a, 0)];
      const double* rp = &mdp.reward[mdp.idx(s, a, 0)];
      double q = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) q += tp[s2] * (rp[s2] + mdp.discount * values[static_cast<std::size_t>(s2)]);
      if (q_out) (*q_out)[static_cast<std::size_t>(s) * mdp.n_actions + a] = q;
      best = std::max(best, q);
    }
    out[static_cast<std::size_t>(s)] = best;
  }
  return out;
}

// Compiles the slippery dynamics into tabular form. From a non-terminal,
// non-obstacle state, the intended direction is taken with probability
// slip_prob and each perpendicular direction with (1 - slip_prob) / 2; a move
// off-grid or into an obstacle leaves the agent in place. Landing on the goal
// or a fire cell pays reward_goal / reward_fire; every other move pays
// reward_step. Goal and Fire are absorbing terminals; obstacle cells are
// unreachable zero-reward self-loops.
inline Mdp compile_mdp(const GridWorldSpec& spec) {
  spec.validate();
  Mdp mdp;
  mdp.n_states = spec.n_states();
  mdp.discount = spec.discount;
  std::size_t total = static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states;
  mdp.transition.assign(total, 0.0);
  mdp.reward.assign(total, 0.0);
  mdp.terminal.assign(static_cast<std::size_t>(mdp.n_states), 0);

  const int dr[kNumActions] = {-1, 1, 0, 0};
  const int dc[kNumActions] = {0, 0, -1, 1};
  // Perpendicular directions of each action (Up/Down <-> Left/Right).
  const int perp[kNumActions][2] = {{2, 3}, {2, 3}, {0, 1}, {0, 1}};

  auto target_of = [&](int s, int dir) {
    int r = s / spec.size, c = s % spec.size;
    int nr = r + dr[dir], nc = c + dc[dir];
    if (nr < 0 || nr >= spec.size || nc < 0 || nc >= spec.size) return s;
    int t = spec.index(nr, nc);
    return spec.cells[static_cast<std::size_t>(t)] == Cell::Obstacle ? s : t;
  };
  auto landing_reward = [&](int s2) {
    Cell c = spec.cells[static_cast<std::size_t>(s2)];
    if (c == Cell::Goal) return spec.reward_goal;
    if (c == Cell::Fire) return spec.reward_fire;
    return spec.reward_step;
  };

  for (int s = 0; s < mdp.n_states; ++s) {
    Cell c = spec.cells[static_cast<std::size_t>(s)];
    if (c == Cell::Goal || c == Cell::Fire) mdp.terminal[static_cast<std::size_t>(s)] = 1;
    if (c == Cell::Goal || c == Cell::Fire || c == Cell::Obstacle) {
      for (int a = 0; a < kNumActions; ++a) mdp.transition[mdp.idx(s, a, s)] = 1.0;
      continue;  // absorbing, zero reward
    }
    for (int a = 0; a < kNumActions; ++a) {
      double p_side = (1.0 - spec.slip_prob) / 2.0;
      int dirs[3] = {a, perp[a][0], perp[a][1]};
      double probs[3] = {spec.slip_prob, p_side, p_side};
      for (int k = 0; k < 3; ++k) {
        if (probs[k] == 0.0) continue;
        int s2 = target_of(s, dirs[k]);
        mdp.transition[mdp.idx(s, a, s2)] += probs[k];
        mdp.reward[mdp.idx(s, a, s2)] = landing_reward(s2);
      }
    }
  }
  return mdp;
}

// Converged state and action values plus solver diagnostics.
struct ValueSolution {
  std::vector<double> values;    // V[s]
  std::vector<double> q_values;  // Q[s * n_actions + a]
  int n_actions = kNumActions;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;

  double q(int s, int a) const { return q_values[static_cast<std::size_t>(s) * n_actions + a]; }
};

// Value iteration from V = 0 until the sup-norm change drops to tol or
// max_iter is reached. The returned V and Q come from the same backup, so
// V[s] == max_a Q[s][a] holds exactly. Hitting max_iter is reported through
// converged = false rather than an exception.
inline ValueSolution value_iteration(const Mdp& mdp, double tol = 1e-8, int max_iter = 10000) {
  if (!(tol > 0.0)) throw ContractError("value-iteration tolerance must be positive");
  if (max_iter < 1) throw ContractError("value-iteration max_iter must be positive");

  ValueSolution sol;
  sol.n_actions = mdp.n_actions;
  std::vector<double> v(static_cast<std::size_t>(mdp.n_states), 0.0);
  for (int k = 1; k <= max_iter; ++k) {
    std::vector<double> next = bellman_backup(mdp, v, &sol.q_values);
    double residual = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
      residual = std::max(residual, std::abs(next[static_cast<std::size_t>(s)] - v[static_cast<std::size_t>(s)]));
    v = std::move(next);
    sol.iterations = k;
    sol.residual = residual;
    if (residual <= tol) {
      sol.converged = true;
      break;
    }
  }
  sol.values = std::move(v);
  return sol;
}

// Permutation rank of each state by descending value (rank 0 = highest V*),
// with ties broken by ascending state index, and the quantile bucket
// b = floor(rank * bucket_count / n_states).
struct RankLabeling {
  std::vector<int> ranks;
  std::vector<int> buckets;
  int bucket_count = 0;
};

inline RankLabeling rank_states(const ValueSolution& solution, int bucket_count) {
  int n = static_cast<int>(solution.values.size());
  if (bucket_count < 2 || bucket_count > n)
    throw ContractError("bucket_count must lie in [2, n_states], got " + std::to_string(bucket_count));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    double va = solution.values[static_cast<std::size_t>(a)], vb = solution.values[static_cast<std::size_t>(b)];
    if (va != vb) return va > vb;
    return a < b;
  });

  RankLabeling labeling;
  labeling.bucket_count = bucket_count;
  labeling.ranks.assign(static_cast<std::size_t>(n), 0);
  labeling.buckets.assign(static_cast<std::size_t>(n), 0);
  for (int pos = 0; pos < n; ++pos) labeling.ranks[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = pos;
  for (int s = 0; s < n; ++s)
    labeling.buckets[static_cast<std::size_t>(s)] =
        static_cast<int>((static_cast<long long>(labeling.ranks[static_cast<std::size_t>(s)]) * bucket_count) / n);
  return labeling;
}

}  // namespace graphvalue
