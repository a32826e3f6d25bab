// End-to-end acceptance checks. Each criterion prints exactly one
// [PASS]/[FAIL] line with its evidence; the process exits nonzero if any
// criterion fails. Criteria 6 and 7 share one sweep over the union of their
// experiment cells (identical cells are seeded identically by construction,
// so running them once is sound); criterion 4 reads the attention row-sum
// deviations recorded during that same sweep's training runs.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "graphvalue/experiment.hpp"
#include "graphvalue/grad_check.hpp"
#include "graphvalue/training.hpp"

namespace fs = std::filesystem;
using namespace graphvalue;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int number, const char* name, bool ok, const std::string& evidence) {
  std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", number, name, evidence.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* pattern, ...) {
  va_list args;
  va_start(args, pattern);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

// ---------- criterion 1: exact solver against closed form + naive reimplementation ----------

// Straight-line value iteration written from the Bellman equation alone; no
// shared code with the library solver.
std::vector<double> naive_value_iteration(const Mdp& m, int sweeps) {
  std::vector<double> v(static_cast<std::size_t>(m.n_states), 0.0);
  for (int it = 0; it < sweeps; ++it) {
    std::vector<double> next(v.size(), 0.0);
    for (int s = 0; s < m.n_states; ++s) {
      double best = -1e300;
      for (int a = 0; a < m.n_actions; ++a) {
        double q = 0.0;
        for (int s2 = 0; s2 < m.n_states; ++s2)
          q += m.t(s, a, s2) * (m.r(s, a, s2) + m.discount * v[static_cast<std::size_t>(s2)]);
        if (q > best) best = q;
      }
      next[static_cast<std::size_t>(s)] = best;
    }
    v = std::move(next);
  }
  return v;
}

Mdp self_loop_mdp(double reward, double discount) {
  Mdp m;
  m.n_states = 1;
  m.discount = discount;
  m.transition.assign(static_cast<std::size_t>(kNumActions), 1.0);
  m.reward.assign(static_cast<std::size_t>(kNumActions), reward);
  m.terminal.assign(1, 0);
  return m;
}

void criterion_oracle() {
  Clock::time_point t0 = Clock::now();
  Mdp loop = self_loop_mdp(0.7, 0.9);
  ValueSolution sol = value_iteration(loop);
  double closed_err = std::fabs(sol.values[0] - 0.7 / (1.0 - 0.9));

  double worst = 0.0;
  Rng rng(2026);
  for (int trial = 0; trial < 50; ++trial) {
    int size = 2 + static_cast<int>(rng.next_u64() % 3);
    WorldKind kind = trial % 2 == 0 ? WorldKind::Plain : WorldKind::Traps;
    GridWorldSpec spec = generate_grid_world(rng.next_u64(), size, kind, GridWorldParams{});
    Mdp m = compile_mdp(spec);
    ValueSolution lib = value_iteration(m);
    std::vector<double> ref = naive_value_iteration(m, 4000);
    for (int s = 0; s < m.n_states; ++s)
      worst = std::max(worst, std::fabs(lib.values[static_cast<std::size_t>(s)] - ref[static_cast<std::size_t>(s)]));
  }
  bool ok = closed_err <= 1e-6 && worst <= 1e-6;
  report(1, "exact-solver-correctness", ok,
         fmt("closed-form err %.2e, worst dev from naive solver over 50 random worlds %.2e (%.2fs)",
             closed_err, worst, seconds_since(t0)));
}

// ---------- criterion 2: Bellman backup is a gamma-contraction ----------

void criterion_contraction() {
  Clock::time_point t0 = Clock::now();
  Rng rng(99);
  std::vector<Mdp> worlds;
  for (int w = 0; w < 10; ++w) {
    int size = 2 + static_cast<int>(rng.next_u64() % 3);
    WorldKind kind = w % 2 == 0 ? WorldKind::Plain : WorldKind::Traps;
    worlds.push_back(compile_mdp(generate_grid_world(rng.next_u64(), size, kind, GridWorldParams{})));
  }
  double worst_ratio = 0.0;
  int trials = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Mdp& m = worlds[static_cast<std::size_t>(trial) % worlds.size()];
    std::size_t n = static_cast<std::size_t>(m.n_states);
    std::vector<double> u(n), v(n);
    for (std::size_t s = 0; s < n; ++s) {
      u[s] = rng.uniform(-5.0, 5.0);
      v[s] = rng.uniform(-5.0, 5.0);
    }
    std::vector<double> bu = bellman_backup(m, u), bv = bellman_backup(m, v);
    double du = 0.0, dv = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      du = std::max(du, std::fabs(u[s] - v[s]));
      dv = std::max(dv, std::fabs(bu[s] - bv[s]));
    }
    if (du > 1e-12) {
      worst_ratio = std::max(worst_ratio, dv / du);
      ++trials;
    }
  }
  bool ok = trials >= 990 && worst_ratio <= GridWorldParams{}.discount + 1e-12;
  report(2, "bellman-backup-contraction", ok,
         fmt("worst contraction ratio %.6f over %d trials, bound %.1f (%.2fs)", worst_ratio, trials,
             GridWorldParams{}.discount, seconds_since(t0)));
}

// ---------- criterion 3: finite-difference check of the full model loss ----------

void criterion_gradients() {
  Clock::time_point t0 = Clock::now();
  DatasetConfig dc;
  dc.grid_size = 3;
  dc.kind = WorldKind::Traps;
  dc.train_count = 1;
  dc.test_count = 0;
  dc.master_seed = 17;
  Dataset data = build_dataset(dc);
  const GraphSample& sample = data.train[0];

  DeepGVConfig mc;
  mc.grid_size = 3;
  mc.embed_dim = 8;
  DeepGVModel model = DeepGVModel::init(mc, 5);

  auto loss_of = [&](const ParamStore& params) {
    DeepGVModel probe = model;
    probe.params = params;
    ad::Tape tape;
    ad::Value logits = deepgv_forward(tape, probe, sample);
    return cross_entropy_loss(tape.val(logits), sample.label);
  };

  ad::Tape tape;
  ad::Value logits = deepgv_forward(tape, model, sample);
  double base = cross_entropy_loss(tape.val(logits), sample.label);
  std::vector<Tensor> grads = tape.backward(ad::cross_entropy_with_logits(logits, sample.label));

  // The attention-logit output bias shifts every logit in a softmax row
  // equally, so the loss is exactly flat along it and a relative-error test
  // is meaningless there; prove the flatness directly instead.
  int flat_slot = model.params.find("theta.b2");
  double flat_grad = std::fabs(grads[static_cast<std::size_t>(flat_slot)].at(0));
  ParamStore shifted = model.params;
  shifted[flat_slot].at(0) += 0.5;
  double up = loss_of(shifted);
  shifted[flat_slot].at(0) -= 1.0;
  double down = loss_of(shifted);
  double flat_dev = std::max(std::fabs(up - base), std::fabs(down - base));

  Rng rng(123);
  std::vector<std::pair<int, int>> coords = grad_check_coords(model.params, 2, rng);
  std::erase_if(coords, [&](const std::pair<int, int>& c) { return c.first == flat_slot; });
  GradCheckReport rep = grad_check(loss_of, model.params, grads, coords);

  bool ok = static_cast<int>(coords.size()) >= 20 && rep.max_rel_err < 1e-4 && flat_grad < 1e-12 &&
            flat_dev < 1e-9;
  report(3, "finite-difference-gradients", ok,
         fmt("max rel err %.2e over %d coords; flat attention-bias direction: |grad| %.1e, "
             "loss shift %.1e at +/-0.5 (%.2fs)",
             rep.max_rel_err, static_cast<int>(coords.size()), flat_grad, flat_dev, seconds_since(t0)));
}

// ---------- criterion 5: permutation equivariance of the message-passing stack ----------

GraphSample permuted_sample(const GraphSample& s, const std::vector<int>& perm) {
  GraphSample out = s;
  int n = s.n_nodes();
  for (int i = 0; i < n; ++i)
    for (int f = 0; f < kNodeFeatures; ++f)
      out.node_features.at(perm[static_cast<std::size_t>(i)], f) = s.node_features.at(i, f);
  out.edges = SparseEdgeTable{};
  out.edges.n_nodes = n;
  out.edges.n_slots = s.edges.n_slots;
  for (const SparseEdgeTable::Entry& e : s.edges.entries)
    out.edges.add(perm[static_cast<std::size_t>(e.src)], perm[static_cast<std::size_t>(e.dst)], e.slot, e.value);
  out.edges.finalize();
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < kNumActions; ++a)
      out.action_rewards.at(perm[static_cast<std::size_t>(i)], a) = s.action_rewards.at(i, a);
  out.query = perm[static_cast<std::size_t>(s.query)];
  return out;
}

void criterion_equivariance() {
  Clock::time_point t0 = Clock::now();
  DatasetConfig dc;
  dc.grid_size = 3;
  dc.kind = WorldKind::Traps;
  dc.train_count = 10;
  dc.test_count = 0;
  dc.master_seed = 31;
  Dataset data = build_dataset(dc);

  DeepGVConfig mc;
  mc.grid_size = 3;
  mc.embed_dim = 16;
  DeepGVModel model = DeepGVModel::init(mc, 9);

  Rng rng(77);
  double worst = 0.0;
  int perms = 0;
  for (const GraphSample& sample : data.train) {
    ad::Tape tape;
    DeepGVTrace trace;
    deepgv_forward(tape, model, sample, &trace);
    Tensor base = tape.val(trace.embeddings.back());
    int n = sample.n_nodes();
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<int> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      GraphSample shuffled = permuted_sample(sample, perm);
      ad::Tape tape2;
      DeepGVTrace trace2;
      deepgv_forward(tape2, model, shuffled, &trace2);
      const Tensor& moved = tape2.val(trace2.embeddings.back());
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < mc.embed_dim; ++k)
          worst = std::max(worst,
                           std::fabs(moved.at(perm[static_cast<std::size_t>(i)], k) - base.at(i, k)));
      ++perms;
    }
  }
  bool ok = perms == 100 && worst <= 1e-9;
  report(5, "permutation-equivariance", ok,
         fmt("max deviation %.2e over %d permutations (%.2fs)", worst, perms, seconds_since(t0)));
}

// ---------- criterion 9: single-sample memorization ----------

void criterion_overfit() {
  Clock::time_point t0 = Clock::now();
  DatasetConfig dc;
  dc.grid_size = 3;
  dc.kind = WorldKind::Traps;
  dc.train_count = 1;
  dc.test_count = 1;
  dc.master_seed = 59;
  Dataset data = build_dataset(dc);

  DeepGVConfig mc;
  mc.grid_size = 3;
  mc.embed_dim = 8;
  TrainConfig tc;
  tc.model = ModelKind::DeepGV;
  tc.epochs = 200;
  tc.batch_size = 1;
  tc.patience = 200;
  tc.seed = 61;
  TrainResult result = train_model(Model{DeepGVModel::init(mc, 61)}, data.train, data.test, tc);

  int first_epoch = -1;
  for (const EvalRecord& rec : result.metrics.records)
    if (rec.train_accuracy == 1.0) {
      first_epoch = rec.epoch;
      break;
    }
  double elapsed = seconds_since(t0);
  bool ok = first_epoch > 0 && elapsed < 60.0;
  report(9, "single-sample-memorization", ok,
         first_epoch > 0 ? fmt("train accuracy 1.0 first reached at epoch %d (%.2fs)", first_epoch, elapsed)
                         : fmt("train accuracy never reached 1.0 in 200 epochs (%.2fs)", elapsed));
}

// ---------- criterion 8: byte-identical reruns through the command-line tool ----------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void criterion_determinism() {
  Clock::time_point t0 = Clock::now();
  fs::path dir = fs::temp_directory_path() / "graphvalue_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::path cfg = dir / "sweep.json";
  std::ofstream(cfg) << R"({"grid_sizes":[2],"train_sizes":[4,8],"fixed_train_size":8,"fixed_grid_size":3,)"
                     << R"("test_count":4,"reps":1,"kinds":["plain","traps"],)"
                     << R"("train":{"epochs":2,"batch_size":4},"embed_dim":4,"hidden":[8]})";
  std::string base = std::string(GRAPHVALUE_CLI_PATH) + " sweep-size --config " + cfg.string();
  std::string run1 = base + " --out " + (dir / "a").string() + " >/dev/null 2>&1";
  std::string run2 = base + " --out " + (dir / "b").string() + " >/dev/null 2>&1";
  int rc1 = std::system(run1.c_str());
  int rc2 = std::system(run2.c_str());
  std::string csv_a = slurp(dir / "a" / "grid_size_sweep.csv");
  std::string csv_b = slurp(dir / "b" / "grid_size_sweep.csv");
  std::string svg_a = slurp(dir / "a" / "grid_size_sweep.svg");
  std::string svg_b = slurp(dir / "b" / "grid_size_sweep.svg");
  bool ok = rc1 == 0 && rc2 == 0 && !csv_a.empty() && csv_a == csv_b && !svg_a.empty() && svg_a == svg_b;
  report(8, "byte-identical-reruns", ok,
         fmt("sweep rerun: csv %s (%zu bytes), svg %s (%zu bytes) (%.2fs)",
             csv_a == csv_b ? "identical" : "DIFFERS", csv_a.size(),
             svg_a == svg_b ? "identical" : "DIFFERS", svg_a.size(), seconds_since(t0)));
  fs::remove_all(dir);
}

// ---------- criteria 6, 7, 4: the two experiment sweeps at default settings ----------

struct CellKey {
  int kind;
  int grid;
  int train;
  int model;
  int rep;
  bool operator<(const CellKey& o) const {
    return std::tie(kind, grid, train, model, rep) < std::tie(o.kind, o.grid, o.train, o.model, o.rep);
  }
};

CellKey key_of(const SweepCell& c) {
  return CellKey{static_cast<int>(c.kind), c.grid_size, c.train_size, static_cast<int>(c.model), c.rep};
}

void criteria_sweeps() {
  Clock::time_point t0 = Clock::now();
  ExperimentConfig cfg;  // documented defaults throughout

  std::vector<SweepCell> cells = grid_size_cells(cfg);
  std::map<CellKey, bool> seen;
  for (const SweepCell& c : cells) seen[key_of(c)] = true;
  for (const SweepCell& c : train_size_cells(cfg))
    if (!seen.count(key_of(c))) {
      cells.push_back(c);
      seen[key_of(c)] = true;
    }

  int done = 0;
  std::map<CellKey, CellResult> results;
  std::vector<std::string> failures;
  auto progress = [&](const CellResult& r) {
    ++done;
    std::fprintf(stderr, "  [%d/%zu] %s grid=%d train=%d %s rep=%d -> %s%s (%.0fs)\n", done, cells.size(),
                 to_string(r.cell.kind).c_str(), r.cell.grid_size, r.cell.train_size,
                 model_kind_to_string(r.cell.model).c_str(), r.cell.rep,
                 r.status == "ok" ? fmt("acc %.3f", r.test_accuracy).c_str() : r.status.c_str(),
                 r.status == "ok" ? "" : " !", seconds_since(t0));
  };
  std::vector<CellResult> out = run_cells(cells, cfg, 1, progress);
  for (const CellResult& r : out) {
    results[key_of(r.cell)] = r;
    if (r.status != "ok")
      failures.push_back(fmt("%s grid=%d train=%d %s rep=%d: %s", to_string(r.cell.kind).c_str(),
                             r.cell.grid_size, r.cell.train_size, model_kind_to_string(r.cell.model).c_str(),
                             r.cell.rep, r.status.c_str()));
  }
  double sweep_minutes = seconds_since(t0) / 60.0;

  auto mean_acc = [&](WorldKind kind, int grid, int train, ModelKind model) {
    double sum = 0.0;
    int n = 0;
    for (int rep = 0; rep < cfg.reps; ++rep) {
      auto it = results.find(CellKey{static_cast<int>(kind), grid, train, static_cast<int>(model), rep});
      if (it != results.end() && it->second.status == "ok") {
        sum += it->second.test_accuracy;
        ++n;
      }
    }
    return n == cfg.reps ? sum / n : -1.0;  // -1 marks missing/failed cells
  };

  // criterion 6: large-grid gap at the full training-set size
  {
    bool ok = failures.empty();
    std::string evidence;
    for (WorldKind kind : cfg.kinds) {
      double gv = mean_acc(kind, cfg.fixed_grid_size, cfg.fixed_train_size, ModelKind::DeepGV);
      double mlp = mean_acc(kind, cfg.fixed_grid_size, cfg.fixed_train_size, ModelKind::Mlp);
      bool kind_ok = gv >= 0.0 && mlp >= 0.0 && gv - mlp >= 0.15 && gv >= 0.50;
      ok = ok && kind_ok;
      evidence += fmt("%s%s: net %.3f vs mlp %.3f (gap %+.3f)", evidence.empty() ? "" : "; ",
                      to_string(kind).c_str(), gv, mlp, gv - mlp);
    }
    if (!failures.empty()) evidence += fmt("; %zu failed cells, first: %s", failures.size(), failures[0].c_str());
    evidence += fmt(" [sweeps %.0fm]", sweep_minutes);
    report(6, "large-grid-accuracy-gap", ok, evidence);
  }

  // criterion 7: sample-efficiency at the large grid
  {
    bool ok = failures.empty();
    std::string evidence;
    for (WorldKind kind : cfg.kinds) {
      int gv_first = -1, mlp_first = -1;
      bool dominated = true;
      for (int size : cfg.train_sizes) {
        double gv = mean_acc(kind, cfg.fixed_grid_size, size, ModelKind::DeepGV);
        double mlp = mean_acc(kind, cfg.fixed_grid_size, size, ModelKind::Mlp);
        if (gv < 0.0 || mlp < 0.0) {
          dominated = false;
          continue;
        }
        if (gv + 1e-12 < mlp) dominated = false;
        if (gv >= 0.60 && gv_first < 0) gv_first = size;
        if (mlp >= 0.60 && mlp_first < 0) mlp_first = size;
      }
      bool reach_ok = gv_first > 0 ? (mlp_first < 0 || gv_first <= mlp_first) : mlp_first < 0;
      ok = ok && dominated && reach_ok;
      evidence += fmt("%s%s: dominated=%s, 60%% first at net=%s mlp=%s", evidence.empty() ? "" : "; ",
                      to_string(kind).c_str(), dominated ? "yes" : "NO",
                      gv_first > 0 ? std::to_string(gv_first).c_str() : "never",
                      mlp_first > 0 ? std::to_string(mlp_first).c_str() : "never");
    }
    report(7, "sample-efficiency", ok, evidence);
  }

  // criterion 4: attention rows stayed normalized through every training run
  {
    double worst = 0.0;
    int tracked = 0;
    for (const auto& [key, r] : results)
      if (r.cell.model == ModelKind::DeepGV && r.status == "ok") {
        worst = std::max(worst, r.max_attention_row_dev);
        ++tracked;
      }
    bool ok = tracked > 0 && worst <= 1e-9 && failures.empty();
    report(4, "attention-row-normalization", ok,
           fmt("worst |row sum - 1| = %.2e across %d training runs", worst, tracked));
  }
}

}  // namespace

int main() {
  std::printf("acceptance checks\n");
  criterion_oracle();
  criterion_contraction();
  criterion_gradients();
  criterion_equivariance();
  criterion_overfit();
  criterion_determinism();
  criteria_sweeps();
  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
