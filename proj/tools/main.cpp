#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "graphvalue/experiment.hpp"

namespace fs = std::filesystem;
using namespace graphvalue;

namespace {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config file '" + path + "' is not valid JSON: " + std::string(e.what()));
  }
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw ContractError("failed writing '" + path.string() + "'");
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ContractError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

// Loads a dataset from a path string, or builds one from an inline config
// object; `seed` (when supplied) overrides the config's master seed.
Dataset dataset_from_spec(const nlohmann::json& spec, std::optional<std::uint64_t> seed) {
  if (spec.is_string()) {
    auto loaded = load_dataset(spec.get<std::string>());
    return loaded;
  }
  if (!spec.is_object()) throw ParseError("'dataset' must be a file path or a config object");
  DatasetConfig config = dataset_config_from_json(spec);
  if (seed) config.master_seed = *seed;
  return build_dataset(config);
}

int cmd_gen(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
  if (config_path.empty()) throw ContractError("gen requires --config with a dataset config");
  DatasetConfig config = dataset_config_from_json(load_json_file(config_path));
  if (seed) config.master_seed = *seed;
  Dataset data = build_dataset(config);
  fs::path dir = prepare_out_dir(out);

  Dataset train_only;
  train_only.config = config;
  train_only.config.test_count = 0;
  train_only.train = data.train;
  save_dataset(train_only, (dir / "train.jsonl").string());

  Dataset test_only;
  test_only.config = config;
  test_only.config.train_count = 0;
  test_only.test = data.test;
  save_dataset(test_only, (dir / "test.jsonl").string());

  nlohmann::json provenance{{"config", dataset_config_to_json(config)},
                            {"files", {"train.jsonl", "test.jsonl"}},
                            {"schema", kDatasetSchema}};
  write_text(dir / "provenance.json", provenance.dump(2) + "\n");

  std::printf("wrote %d train / %d test samples to %s\n", static_cast<int>(data.train.size()),
              static_cast<int>(data.test.size()), dir.string().c_str());
  return 0;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig tc;
  tc.epochs = j.value("epochs", tc.epochs);
  tc.batch_size = j.value("batch_size", tc.batch_size);
  tc.learning_rate = j.value("learning_rate", tc.learning_rate);
  tc.eval_every = j.value("eval_every", tc.eval_every);
  tc.patience = j.value("patience", tc.patience);
  return tc;
}

int cmd_train(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed,
              bool timings) {
  if (config_path.empty()) throw ContractError("train requires --config");
  nlohmann::json j = load_json_file(config_path);
  if (!j.contains("dataset")) throw ParseError("train config needs a 'dataset' entry (path or config object)");
  Dataset data = dataset_from_spec(j.at("dataset"), seed ? std::optional(derive_seed(*seed, 60, 0)) : std::nullopt);

  ModelKind kind = model_kind_from_string(j.value("model", std::string("deepgv")));
  std::uint64_t base = seed.value_or(j.value("seed", std::uint64_t{0}));
  Model model;
  if (kind == ModelKind::DeepGV) {
    DeepGVConfig mc;
    mc.grid_size = data.config.grid_size;
    mc.bucket_count = data.config.bucket_count;
    mc.embed_dim = j.value("embed_dim", mc.embed_dim);
    mc.iterations = j.value("iterations", mc.iterations);
    model = DeepGVModel::init(mc, derive_seed(base, 61, 0));
  } else {
    MlpConfig mc;
    mc.grid_size = data.config.grid_size;
    mc.bucket_count = data.config.bucket_count;
    mc.hidden = j.value("hidden", mc.hidden);
    model = MlpModel::init(mc, derive_seed(base, 61, 0));
  }

  TrainConfig tc = j.contains("train") ? train_config_from_json(j.at("train")) : TrainConfig{};
  tc.model = kind;
  tc.seed = derive_seed(base, 62, 0);
  tc.record_timings = timings || j.value("record_timings", false);

  TrainResult result = train_model(std::move(model), data.train, data.test, tc);
  fs::path dir = prepare_out_dir(out);
  csv::save((dir / "metrics.csv").string(), metrics_to_csv(result.metrics));
  save_checkpoint((dir / "checkpoint.json").string(), model_params(result.best), model_hyper(result.best));

  if (result.metrics.aborted) {
    std::fprintf(stderr, "training aborted at batch %d: %s\n", result.metrics.faulted_batch,
                 result.metrics.fault.c_str());
    return 1;
  }
  std::printf("best test accuracy %s at epoch %d\n", csv::format_double(result.metrics.best_test_accuracy).c_str(),
              result.metrics.best_epoch);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path, const std::string& split) {
  Model model = model_from_checkpoint(load_checkpoint(checkpoint_path));
  Dataset data = load_dataset(dataset_path);
  const std::vector<GraphSample>& samples = split == "train" ? data.train : data.test;
  EvalResult r = evaluate_split(model, samples);
  std::printf("%s accuracy %s\n", split.c_str(), csv::format_double(r.accuracy).c_str());
  return 0;
}

int cmd_sweep(SweepKind kind, const std::string& config_path, const std::string& out,
              std::optional<std::uint64_t> seed, int jobs) {
  ExperimentConfig config;
  if (!config_path.empty()) config = experiment_config_from_json(load_json_file(config_path));
  config.sweep = kind;
  if (seed) config.seed = *seed;
  config.validate();

  std::vector<SweepCell> cells = kind == SweepKind::GridSize ? grid_size_cells(config) : train_size_cells(config);
  std::size_t done = 0;
  auto progress = [&](const CellResult& r) {
    ++done;
    std::fprintf(stderr, "[%zu/%zu] kind=%s %s=%d model=%s rep=%d %s\n", done, cells.size(),
                 to_string(r.cell.kind).c_str(), kind == SweepKind::GridSize ? "grid" : "train",
                 kind == SweepKind::GridSize ? r.cell.grid_size : r.cell.train_size,
                 model_kind_to_string(r.cell.model).c_str(), r.cell.rep,
                 r.status == "ok" ? ("acc=" + csv::format_double(r.test_accuracy)).c_str() : r.status.c_str());
  };
  std::vector<CellResult> results = run_cells(cells, config, jobs, progress);

  fs::path dir = prepare_out_dir(out);
  std::string stem = kind == SweepKind::GridSize ? "grid_size_sweep" : "train_size_sweep";
  fs::path csv_path = dir / (stem + ".csv");
  csv::save(csv_path.string(), sweep_to_csv(kind, results));

  // The chart is rendered from the file just written, never from memory, so
  // `plot` on the same CSV reproduces it byte for byte.
  fs::path svg_path = dir / (stem + ".svg");
  plot::save_svg(svg_path.string(), plot::render_panels(sweep_panels_from_csv(csv::load(csv_path.string()))));

  int failed = 0;
  for (const CellResult& r : results)
    if (r.status != "ok") ++failed;
  if (failed) std::fprintf(stderr, "%d of %zu cells failed; see the status column\n", failed, results.size());
  std::printf("wrote %s and %s\n", csv_path.string().c_str(), svg_path.string().c_str());
  return 0;
}

int cmd_plot(const std::string& csv_path, const std::string& out) {
  csv::Table table = csv::load(csv_path);
  fs::path dir = prepare_out_dir(out);
  fs::path svg_path = dir / (fs::path(csv_path).stem().string() + ".svg");
  plot::save_svg(svg_path.string(), plot::render_panels(sweep_panels_from_csv(table)));
  std::printf("wrote %s\n", svg_path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid-world value-ranking experiments: a message-passing network "
               "with learned attention versus a flat MLP baseline"};
  app.require_subcommand(1);
  app.fallthrough();  // let global flags appear after the subcommand name

  std::string config_path, out_dir, split = "test", checkpoint_path, dataset_path, csv_path;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool timings = false;
  app.add_option("--seed", seed, "master seed; overrides any seed in the config file");
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "output directory (default: current directory)");
  app.add_option("--jobs", jobs, "concurrent sweep cells")->check(CLI::PositiveNumber);

  CLI::App* gen = app.add_subcommand("gen", "generate a dataset and write train/test JSON-lines files");
  CLI::App* train = app.add_subcommand("train", "train one model on a dataset; writes metrics.csv and checkpoint.json");
  train->add_flag("--timings", timings, "record wall-clock times in metrics.csv (off by default for reproducible bytes)");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint JSON file")->required();
  eval->add_option("--dataset", dataset_path, "dataset JSON-lines file")->required();
  eval->add_option("--split", split, "split to evaluate: train or test")->check(CLI::IsMember({"train", "test"}));
  CLI::App* sweep_size = app.add_subcommand("sweep-size", "accuracy vs grid size for both models");
  CLI::App* sweep_samples = app.add_subcommand("sweep-samples", "accuracy vs training-set size for both models");
  CLI::App* plot_cmd = app.add_subcommand("plot", "re-render the chart for a sweep CSV");
  plot_cmd->add_option("csv", csv_path, "sweep CSV file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(config_path, out_dir, seed);
    if (train->parsed()) return cmd_train(config_path, out_dir, seed, timings);
    if (eval->parsed()) return cmd_eval(checkpoint_path, dataset_path, split);
    if (sweep_size->parsed()) return cmd_sweep(SweepKind::GridSize, config_path, out_dir, seed, jobs);
    if (sweep_samples->parsed()) return cmd_sweep(SweepKind::TrainSize, config_path, out_dir, seed, jobs);
    if (plot_cmd->parsed()) return cmd_plot(csv_path, out_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
