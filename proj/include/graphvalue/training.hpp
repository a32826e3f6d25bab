#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "graphvalue/csv.hpp"
#include "graphvalue/dataset.hpp"
#include "graphvalue/models.hpp"
#include "graphvalue/optimizer.hpp"

namespace graphvalue {

enum class ModelKind { DeepGV, Mlp };

inline std::string model_kind_to_string(ModelKind k) { return k == ModelKind::DeepGV ? "deepgv" : "mlp"; }

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "deepgv") return ModelKind::DeepGV;
  if (s == "mlp") return ModelKind::Mlp;
  throw ParseError("unknown model kind '" + s + "' (expected 'deepgv' or 'mlp')");
}

// Either network behind one interface: the training loop, evaluator, and CLI
// only need forward(), the parameter store, and checkpoint round-trips.
using Model = std::variant<DeepGVModel, MlpModel>;

inline ModelKind model_kind(const Model& m) {
  return std::holds_alternative<DeepGVModel>(m) ? ModelKind::DeepGV : ModelKind::Mlp;
}

inline ParamStore& model_params(Model& m) {
  return std::visit([](auto& v) -> ParamStore& { return v.params; }, m);
}

inline const ParamStore& model_params(const Model& m) {
  return std::visit([](const auto& v) -> const ParamStore& { return v.params; }, m);
}

inline int model_grid_size(const Model& m) {
  return std::visit([](const auto& v) { return v.cfg.grid_size; }, m);
}

inline nlohmann::json model_hyper(const Model& m) {
  return std::visit([](const auto& v) { return v.hyper(); }, m);
}

inline ad::Value model_forward(ad::Tape& tape, const Model& m, const GraphSample& sample) {
  if (const DeepGVModel* g = std::get_if<DeepGVModel>(&m)) return deepgv_forward(tape, *g, sample);
  return mlp_forward(tape, std::get<MlpModel>(m), sample);
}

inline Model model_from_checkpoint(const Checkpoint& ckpt) {
  std::string kind;
  try {
    kind = ckpt.hyper.at("model").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint does not name its model kind: ") + e.what());
  }
  if (kind == "deepgv") return DeepGVModel::from_checkpoint(ckpt);
  if (kind == "mlp") return MlpModel::from_checkpoint(ckpt);
  throw ParseError("unknown model kind '" + kind + "' in checkpoint");
}

// Numerically stable -log softmax(logits)[label] on a plain [1 x B] tensor,
// for evaluation paths that never need gradients.
inline double cross_entropy_loss(const Tensor& logits, int label) {
  if (logits.shape.rank != 2 || logits.shape.dims[0] != 1)
    throw DimensionError("expected a single logits row, got " + logits.shape.str());
  int b = logits.shape.dims[1];
  if (label < 0 || label >= b)
    throw ContractError("label " + std::to_string(label) + " outside 0.." + std::to_string(b - 1));
  double mx = logits.at(0, 0);
  for (int i = 1; i < b; ++i) mx = std::max(mx, logits.at(0, i));
  double denom = 0.0;
  for (int i = 0; i < b; ++i) denom += std::exp(logits.at(0, i) - mx);
  return std::log(denom) - (logits.at(0, label) - mx);
}

// Argmax class with ties broken toward the lowest index, for determinism.
inline int predict_class(const Tensor& logits) {
  if (logits.shape.rank != 2 || logits.shape.dims[0] != 1)
    throw DimensionError("expected a single logits row, got " + logits.shape.str());
  int best = 0;
  for (int i = 1; i < logits.shape.dims[1]; ++i)
    if (logits.at(0, i) > logits.at(0, best)) best = i;
  return best;
}

struct TrainConfig {
  ModelKind model = ModelKind::DeepGV;
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int eval_every = 1;    // epochs between test-set evaluations
  int patience = 20;     // evaluations without test-accuracy improvement before stopping
  std::uint64_t seed = 0;
  bool record_timings = false;  // wall_ms stays 0 unless enabled, so reruns are byte-identical

  void validate() const {
    if (epochs < 1) throw ContractError("epochs must be at least 1");
    if (batch_size < 1) throw ContractError("batch_size must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ContractError("learning_rate must be finite and non-negative");
    if (eval_every < 1) throw ContractError("eval_every must be at least 1");
    if (patience < 1) throw ContractError("patience must be at least 1");
  }
};

struct EvalRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  double wall_ms = 0.0;
};

struct Metrics {
  std::vector<EvalRecord> records;
  double best_test_accuracy = 0.0;
  int best_epoch = -1;
  bool aborted = false;          // a numeric fault stopped training early
  int faulted_batch = -1;        // global batch index of the fault
  std::string fault;             // the fault's message
  double max_attention_row_dev = 0.0;  // worst |row sum - 1| over every softmax in training
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean loss and argmax accuracy over one split against frozen parameters.
inline EvalResult evaluate_split(const Model& model, const std::vector<GraphSample>& split) {
  if (split.empty()) throw ContractError("cannot evaluate an empty split");
  ad::Tape tape;
  double loss_sum = 0.0;
  int correct = 0;
  for (const GraphSample& sample : split) {
    const Tensor& logits = tape.val(model_forward(tape, model, sample));
    loss_sum += cross_entropy_loss(logits, sample.label);
    if (predict_class(logits) == sample.label) ++correct;
    tape.reset();
  }
  return EvalResult{loss_sum / static_cast<double>(split.size()),
                    static_cast<double>(correct) / static_cast<double>(split.size())};
}

struct TrainResult {
  Model best;    // parameters at the best-test-accuracy evaluation
  Model final_;  // parameters when training stopped
  Metrics metrics;
};

// Mini-batch training with Adam: seeded shuffle each epoch, batch gradient =
// exact mean of per-sample gradients, periodic evaluation with a
// best-by-test-accuracy snapshot, early stop after `patience` evaluations
// without improvement. Deterministic for a given config.
inline TrainResult train_model(Model model, const std::vector<GraphSample>& train,
                               const std::vector<GraphSample>& test, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw ContractError("training split is empty");
  if (test.empty()) throw ContractError("test split is empty");
  if (model_kind(model) != cfg.model)
    throw ContractError("config names a " + model_kind_to_string(cfg.model) + " model but a " +
                        model_kind_to_string(model_kind(model)) + " was supplied");

  ParamStore& params = model_params(model);
  OptimizerState opt = OptimizerState::init(params);
  AdamConfig adam;
  adam.lr = cfg.learning_rate;
  Rng shuffle_rng(derive_seed(cfg.seed, 4, 0));
  ad::Tape tape;

  TrainResult result;
  result.best = model;
  Metrics& metrics = result.metrics;
  double best_acc = -1.0;
  int evals_without_improvement = 0;
  int global_batch = 0;
  auto started = std::chrono::steady_clock::now();

  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) order[i] = static_cast<int>(i);

  std::vector<Tensor> grad_sum;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    int epoch_correct = 0;

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      int batch_n = static_cast<int>(end - start);
      grad_sum.clear();
      for (const Tensor& t : params.tensors) grad_sum.push_back(Tensor::zeros(t.shape));
      try {
        for (std::size_t k = start; k < end; ++k) {
          const GraphSample& sample = train[static_cast<std::size_t>(order[k])];
          ad::Value logits = model_forward(tape, model, sample);
          const Tensor& row = tape.val(logits);
          epoch_loss += cross_entropy_loss(row, sample.label);
          if (predict_class(row) == sample.label) ++epoch_correct;
          std::vector<Tensor> grads = tape.backward(ad::cross_entropy_with_logits(logits, sample.label));
          for (std::size_t g = 0; g < grads.size(); ++g)
            for (std::size_t c = 0; c < grads[g].data.size(); ++c) grad_sum[g].data[c] += grads[g].data[c];
        }
        for (Tensor& g : grad_sum)
          for (double& v : g.data) v /= static_cast<double>(batch_n);
        adam_step(params, grad_sum, opt, adam);
      } catch (const NumericFault& e) {
        metrics.aborted = true;
        metrics.faulted_batch = global_batch;
        metrics.fault = e.what();
        metrics.max_attention_row_dev = tape.max_softmax_row_dev();
        result.final_ = model;
        return result;
      }
      ++global_batch;
    }

    bool last_epoch = epoch == cfg.epochs;
    if (epoch % cfg.eval_every != 0 && !last_epoch) continue;

    EvalResult test_eval = evaluate_split(model, test);
    EvalRecord record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / static_cast<double>(train.size());
    record.train_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(train.size());
    record.test_loss = test_eval.loss;
    record.test_accuracy = test_eval.accuracy;
    if (cfg.record_timings)
      record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    metrics.records.push_back(record);

    if (test_eval.accuracy > best_acc) {
      best_acc = test_eval.accuracy;
      metrics.best_test_accuracy = test_eval.accuracy;
      metrics.best_epoch = epoch;
      result.best = model;
      evals_without_improvement = 0;
    } else if (++evals_without_improvement >= cfg.patience) {
      break;
    }
  }

  metrics.max_attention_row_dev = tape.max_softmax_row_dev();
  result.final_ = model;
  return result;
}

// Canonical metrics layout: two rows per evaluation, one per split.
inline csv::Table metrics_to_csv(const Metrics& metrics) {
  csv::Table table;
  table.header = {"epoch", "split", "loss", "accuracy", "wall_ms"};
  for (const EvalRecord& r : metrics.records) {
    table.rows.push_back({std::to_string(r.epoch), "train", csv::format_double(r.train_loss),
                          csv::format_double(r.train_accuracy), csv::format_double(r.wall_ms)});
    table.rows.push_back({std::to_string(r.epoch), "test", csv::format_double(r.test_loss),
                          csv::format_double(r.test_accuracy), csv::format_double(r.wall_ms)});
  }
  return table;
}

}  // namespace graphvalue
