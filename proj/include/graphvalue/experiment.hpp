#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "graphvalue/csv.hpp"
#include "graphvalue/svg_plot.hpp"
#include "graphvalue/training.hpp"

namespace graphvalue {

enum class SweepKind { GridSize, TrainSize };

inline std::string sweep_kind_to_string(SweepKind k) {
  return k == SweepKind::GridSize ? "grid-size" : "train-size";
}

inline SweepKind sweep_kind_from_string(const std::string& s) {
  if (s == "grid-size") return SweepKind::GridSize;
  if (s == "train-size") return SweepKind::TrainSize;
  throw ParseError("unknown sweep kind '" + s + "' (expected 'grid-size' or 'train-size')");
}

// One sweep: train both models across grid sizes at a fixed training-set
// size, or across training-set sizes at a fixed grid size, repeating each
// cell with `reps` independent seeds. Both models always share the same
// datasets and the same training budget.
struct ExperimentConfig {
  SweepKind sweep = SweepKind::GridSize;
  std::vector<int> grid_sizes = {4, 6, 8};
  std::vector<int> train_sizes = {200, 500, 1000, 2000};
  int fixed_train_size = 2000;  // used by the grid-size sweep
  int fixed_grid_size = 8;      // used by the train-size sweep
  int test_count = 500;
  int reps = 3;
  std::vector<WorldKind> kinds = {WorldKind::Plain, WorldKind::Traps};
  std::uint64_t seed = 0;
  TrainConfig train;                     // model field is overridden per cell
  int embed_dim = 32;                    // DeepGV width
  std::vector<int> hidden = {256, 256};  // MLP widths
  GridWorldParams world;

  void validate() const {
    if (grid_sizes.empty() || train_sizes.empty() || kinds.empty())
      throw ContractError("sweep lists must be non-empty");
    for (int g : grid_sizes)
      if (g < 2) throw ContractError("grid sizes must be at least 2");
    if (fixed_grid_size < 2) throw ContractError("fixed_grid_size must be at least 2");
    for (int t : train_sizes)
      if (t < 1) throw ContractError("train sizes must be at least 1");
    if (fixed_train_size < 1) throw ContractError("fixed_train_size must be at least 1");
    if (test_count < 1) throw ContractError("test_count must be at least 1");
    if (reps < 1) throw ContractError("reps must be at least 1");
    train.validate();
    if (embed_dim < 1) throw ContractError("embed_dim must be positive");
    for (int h : hidden)
      if (h < 1) throw ContractError("hidden layer sizes must be positive");
  }
};

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  std::vector<std::string> kind_names;
  for (WorldKind k : c.kinds) kind_names.push_back(to_string(k));
  return nlohmann::json{{"sweep", sweep_kind_to_string(c.sweep)},
                        {"grid_sizes", c.grid_sizes},
                        {"train_sizes", c.train_sizes},
                        {"fixed_train_size", c.fixed_train_size},
                        {"fixed_grid_size", c.fixed_grid_size},
                        {"test_count", c.test_count},
                        {"reps", c.reps},
                        {"kinds", kind_names},
                        {"seed", c.seed},
                        {"train",
                         {{"epochs", c.train.epochs},
                          {"batch_size", c.train.batch_size},
                          {"learning_rate", c.train.learning_rate},
                          {"eval_every", c.train.eval_every},
                          {"patience", c.train.patience}}},
                        {"embed_dim", c.embed_dim},
                        {"hidden", c.hidden},
                        {"world",
                         {{"slip_prob", c.world.slip_prob},
                          {"discount", c.world.discount},
                          {"reward_goal", c.world.reward_goal},
                          {"reward_fire", c.world.reward_fire},
                          {"reward_step", c.world.reward_step},
                          {"obstacle_frac", c.world.obstacle_frac},
                          {"fire_frac", c.world.fire_frac}}}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("sweep")) c.sweep = sweep_kind_from_string(j.at("sweep").get<std::string>());
    c.grid_sizes = j.value("grid_sizes", c.grid_sizes);
    c.train_sizes = j.value("train_sizes", c.train_sizes);
    c.fixed_train_size = j.value("fixed_train_size", c.fixed_train_size);
    c.fixed_grid_size = j.value("fixed_grid_size", c.fixed_grid_size);
    c.test_count = j.value("test_count", c.test_count);
    c.reps = j.value("reps", c.reps);
    if (j.contains("kinds")) {
      c.kinds.clear();
      for (const auto& name : j.at("kinds")) c.kinds.push_back(world_kind_from_string(name.get<std::string>()));
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("train")) {
      const nlohmann::json& t = j.at("train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.eval_every = t.value("eval_every", c.train.eval_every);
      c.train.patience = t.value("patience", c.train.patience);
    }
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden = j.value("hidden", c.hidden);
    if (j.contains("world")) {
      const nlohmann::json& w = j.at("world");
      c.world.slip_prob = w.value("slip_prob", c.world.slip_prob);
      c.world.discount = w.value("discount", c.world.discount);
      c.world.reward_goal = w.value("reward_goal", c.world.reward_goal);
      c.world.reward_fire = w.value("reward_fire", c.world.reward_fire);
      c.world.reward_step = w.value("reward_step", c.world.reward_step);
      c.world.obstacle_frac = w.value("obstacle_frac", c.world.obstacle_frac);
      c.world.fire_frac = w.value("fire_frac", c.world.fire_frac);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment config malformed: ") + e.what());
  }
  c.validate();
  return c;
}

struct SweepCell {
  WorldKind kind = WorldKind::Plain;
  int grid_size = 8;
  int train_size = 2000;
  ModelKind model = ModelKind::DeepGV;
  int rep = 0;

  bool operator==(const SweepCell& o) const {
    return kind == o.kind && grid_size == o.grid_size && train_size == o.train_size && model == o.model &&
           rep == o.rep;
  }
};

struct CellResult {
  SweepCell cell;
  double test_accuracy = 0.0;
  int best_epoch = -1;
  double max_attention_row_dev = 0.0;  // worst |row sum - 1| seen while training
  std::string status = "ok";  // "ok" or "failed: <reason>"
};

inline std::vector<SweepCell> grid_size_cells(const ExperimentConfig& cfg) {
  std::vector<SweepCell> cells;
  for (WorldKind kind : cfg.kinds)
    for (int g : cfg.grid_sizes)
      for (ModelKind model : {ModelKind::DeepGV, ModelKind::Mlp})
        for (int rep = 0; rep < cfg.reps; ++rep)
          cells.push_back(SweepCell{kind, g, cfg.fixed_train_size, model, rep});
  return cells;
}

inline std::vector<SweepCell> train_size_cells(const ExperimentConfig& cfg) {
  std::vector<SweepCell> cells;
  for (WorldKind kind : cfg.kinds)
    for (int t : cfg.train_sizes)
      for (ModelKind model : {ModelKind::DeepGV, ModelKind::Mlp})
        for (int rep = 0; rep < cfg.reps; ++rep)
          cells.push_back(SweepCell{kind, cfg.fixed_grid_size, t, model, rep});
  return cells;
}

namespace detail {

// Datasets are shared between every cell with the same (kind, grid, rep):
// both models see identical data, and a smaller train size is served as a
// prefix of the pool's training split. Pool content depends only on the
// master seed and the pool key, never on which sweep requested it.
struct PoolKey {
  int kind_idx, grid_size, rep;
  bool operator<(const PoolKey& o) const {
    return std::tie(kind_idx, grid_size, rep) < std::tie(o.kind_idx, o.grid_size, o.rep);
  }
};

struct Pool {
  Dataset data;
  std::string error;  // non-empty when the build failed
};

inline int kind_index(WorldKind k) { return k == WorldKind::Plain ? 0 : 1; }

inline std::uint64_t pool_seed(const ExperimentConfig& cfg, const PoolKey& key) {
  std::uint64_t s = derive_seed(cfg.seed, 20, static_cast<std::uint64_t>(key.kind_idx));
  s = derive_seed(s, 21, static_cast<std::uint64_t>(key.grid_size));
  return derive_seed(s, 22, static_cast<std::uint64_t>(key.rep));
}

inline std::uint64_t cell_seed(const ExperimentConfig& cfg, const SweepCell& cell) {
  std::uint64_t s = derive_seed(cfg.seed, 30 + kind_index(cell.kind), static_cast<std::uint64_t>(cell.grid_size));
  s = derive_seed(s, cell.model == ModelKind::DeepGV ? 40 : 41, static_cast<std::uint64_t>(cell.train_size));
  return derive_seed(s, 50, static_cast<std::uint64_t>(cell.rep));
}

inline PoolKey pool_key_for(const SweepCell& cell) {
  return PoolKey{kind_index(cell.kind), cell.grid_size, cell.rep};
}

}  // namespace detail

inline CellResult run_cell(const SweepCell& cell, const ExperimentConfig& cfg, const Dataset& pool) {
  CellResult result;
  result.cell = cell;
  try {
    if (cell.train_size > static_cast<int>(pool.train.size()))
      throw ContractError("pool holds " + std::to_string(pool.train.size()) + " training samples, cell needs " +
                          std::to_string(cell.train_size));
    std::vector<GraphSample> train(pool.train.begin(), pool.train.begin() + cell.train_size);

    std::uint64_t seed = detail::cell_seed(cfg, cell);
    Model model;
    if (cell.model == ModelKind::DeepGV) {
      DeepGVConfig mc;
      mc.grid_size = cell.grid_size;
      mc.embed_dim = cfg.embed_dim;
      model = DeepGVModel::init(mc, derive_seed(seed, 1, 0));
    } else {
      MlpConfig mc;
      mc.grid_size = cell.grid_size;
      mc.hidden = cfg.hidden;
      model = MlpModel::init(mc, derive_seed(seed, 1, 0));
    }
    TrainConfig tc = cfg.train;
    tc.model = cell.model;
    tc.seed = derive_seed(seed, 2, 0);
    TrainResult tr = train_model(std::move(model), train, pool.test, tc);
    if (tr.metrics.aborted) {
      result.status = "failed: " + tr.metrics.fault;
      return result;
    }
    result.test_accuracy = tr.metrics.best_test_accuracy;
    result.best_epoch = tr.metrics.best_epoch;
    result.max_attention_row_dev = tr.metrics.max_attention_row_dev;
  } catch (const std::exception& e) {
    result.status = std::string("failed: ") + e.what();
  }
  return result;
}

// Runs every cell, up to `jobs` at a time. Output order always matches the
// input cell order; each cell's arithmetic is single-threaded and seeded, so
// results are identical regardless of jobs.
inline std::vector<CellResult> run_cells(const std::vector<SweepCell>& cells, const ExperimentConfig& cfg,
                                         int jobs = 1,
                                         const std::function<void(const CellResult&)>& progress = {}) {
  cfg.validate();
  if (jobs < 1) throw ContractError("jobs must be at least 1");

  // Build every needed dataset pool up front, sequentially and in key order.
  // A pool holds the largest training split any of its cells needs; smaller
  // cells take a prefix. Pool content depends only on the seed scheme and the
  // pool's size, so both sweep kinds produce identical pools whenever their
  // largest cells agree (as the defaults do).
  std::map<detail::PoolKey, int> pool_train;
  for (const SweepCell& cell : cells) {
    int& n = pool_train[detail::pool_key_for(cell)];
    n = std::max(n, cell.train_size);
  }
  std::map<detail::PoolKey, detail::Pool> pools;
  for (const auto& [key, train_count] : pool_train) {
    detail::Pool& pool = pools[key];
    DatasetConfig dc;
    dc.grid_size = key.grid_size;
    dc.kind = key.kind_idx == 0 ? WorldKind::Plain : WorldKind::Traps;
    dc.train_count = train_count;
    dc.test_count = cfg.test_count;
    dc.master_seed = detail::pool_seed(cfg, key);
    dc.world = cfg.world;
    try {
      pool.data = build_dataset(dc);
    } catch (const std::exception& e) {
      pool.error = e.what();
    }
  }

  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const detail::Pool& pool = pools.at(detail::pool_key_for(cells[i]));
      if (!pool.error.empty()) {
        results[i].cell = cells[i];
        results[i].status = "failed: dataset generation: " + pool.error;
      } else {
        results[i] = run_cell(cells[i], cfg, pool.data);
      }
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        progress(results[i]);
      }
    }
  };
  if (jobs == 1 || cells.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    int n_threads = std::min<int>(jobs, static_cast<int>(cells.size()));
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }
  return results;
}

// CSV schemas: the x column is grid_size for the grid-size sweep and
// train_size for the train-size sweep; `seed` is the repetition index.
inline csv::Table sweep_to_csv(SweepKind kind, const std::vector<CellResult>& results) {
  csv::Table table;
  std::string x_col = kind == SweepKind::GridSize ? "grid_size" : "train_size";
  table.header = {"world_kind", x_col, "model", "seed", "test_accuracy", "status"};
  for (const CellResult& r : results) {
    int x = kind == SweepKind::GridSize ? r.cell.grid_size : r.cell.train_size;
    table.rows.push_back({to_string(r.cell.kind), std::to_string(x),
                          model_kind_to_string(r.cell.model), std::to_string(r.cell.rep),
                          csv::format_double(r.test_accuracy), r.status});
  }
  return table;
}

// Rebuilds chart data purely from a sweep CSV, so a plot regenerated from
// the file is identical to the one produced with the sweep.
inline std::vector<plot::Panel> sweep_panels_from_csv(const csv::Table& table) {
  int x_col;
  std::string x_label;
  bool has_grid = false;
  for (const std::string& h : table.header) has_grid = has_grid || h == "grid_size";
  if (has_grid) {
    x_col = table.column("grid_size");
    x_label = "grid size";
  } else {
    x_col = table.column("train_size");
    x_label = "training samples";
  }
  int kind_col = table.column("world_kind");
  int model_col = table.column("model");
  int acc_col = table.column("test_accuracy");
  int status_col = table.column("status");

  std::vector<std::string> kind_order;
  std::map<std::string, std::map<std::string, std::map<double, std::vector<double>>>> by_kind;
  for (const auto& row : table.rows) {
    if (row[static_cast<std::size_t>(status_col)] != "ok") continue;
    const std::string& kind = row[static_cast<std::size_t>(kind_col)];
    if (std::find(kind_order.begin(), kind_order.end(), kind) == kind_order.end()) kind_order.push_back(kind);
    double x = csv::parse_double(row[static_cast<std::size_t>(x_col)]);
    double acc = csv::parse_double(row[static_cast<std::size_t>(acc_col)]);
    by_kind[kind][row[static_cast<std::size_t>(model_col)]][x].push_back(acc);
  }

  std::vector<plot::Panel> panels;
  for (const std::string& kind : kind_order) {
    plot::Panel panel;
    panel.title = kind == "traps" ? "worlds with traps" : kind + " worlds";
    panel.x_label = x_label;
    panel.y_label = "test accuracy";
    panel.chance_level = 0.25;  // sweeps always use 4 value-rank buckets
    for (const auto& [model, color] :
         std::vector<std::pair<std::string, std::string>>{{"deepgv", "#1f77b4"}, {"mlp", "#d62728"}}) {
      auto it = by_kind[kind].find(model);
      if (it == by_kind[kind].end()) continue;
      plot::Series series;
      series.label = model;
      series.color = color;
      for (const auto& [x, accs] : it->second) {
        double mean = 0.0, lo = accs[0], hi = accs[0];
        for (double a : accs) {
          mean += a;
          lo = std::min(lo, a);
          hi = std::max(hi, a);
        }
        series.x.push_back(x);
        series.mean.push_back(mean / static_cast<double>(accs.size()));
        series.lo.push_back(lo);
        series.hi.push_back(hi);
      }
      panel.series.push_back(std::move(series));
    }
    panels.push_back(std::move(panel));
  }
  if (panels.empty()) throw ParseError("sweep csv holds no successful rows to plot");
  return panels;
}

}  // namespace graphvalue
