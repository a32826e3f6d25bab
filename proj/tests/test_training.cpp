#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "graphvalue/training.hpp"

using namespace graphvalue;

namespace {

Dataset tiny_dataset(int grid_size, int train_count, int test_count, std::uint64_t seed,
                     WorldKind kind = WorldKind::Plain) {
  DatasetConfig config;
  config.grid_size = grid_size;
  config.kind = kind;
  config.train_count = train_count;
  config.test_count = test_count;
  config.master_seed = seed;
  return build_dataset(config);
}

Model small_deepgv(int grid_size, std::uint64_t seed, int embed_dim = 16) {
  DeepGVConfig cfg;
  cfg.grid_size = grid_size;
  cfg.embed_dim = embed_dim;
  return Model{DeepGVModel::init(cfg, seed)};
}

Model small_mlp(int grid_size, std::uint64_t seed, std::vector<int> hidden = {32}) {
  MlpConfig cfg;
  cfg.grid_size = grid_size;
  cfg.hidden = std::move(hidden);
  return Model{MlpModel::init(cfg, seed)};
}

Tensor logits_row(std::vector<double> v) {
  Tensor t = Tensor::zeros(Shape::mat(1, static_cast<int>(v.size())));
  t.data = std::move(v);
  return t;
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLogOfClassCount) {
  Tensor logits = logits_row({0.7, 0.7, 0.7, 0.7});
  for (int label = 0; label < 4; ++label)
    EXPECT_NEAR(cross_entropy_loss(logits, label), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, ConfidentTrueClassDrivesLossToZero) {
  EXPECT_LT(cross_entropy_loss(logits_row({20.0, 0.0, 0.0, 0.0}), 0), 1e-8);
  EXPECT_GT(cross_entropy_loss(logits_row({20.0, 0.0, 0.0, 0.0}), 1), 19.0);
}

TEST(CrossEntropy, MatchesDirectFormulaOnRandomLogits) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(4);
    for (double& x : v) x = rng.uniform(-3.0, 3.0);
    int label = static_cast<int>(rng.uniform_int(4));
    double denom = 0.0;
    for (double x : v) denom += std::exp(x);
    double direct = -std::log(std::exp(v[static_cast<std::size_t>(label)]) / denom);
    EXPECT_NEAR(cross_entropy_loss(logits_row(v), label), direct, 1e-12);
  }
}

TEST(CrossEntropy, StableAtExtremeLogitsAndRejectsBadLabel) {
  EXPECT_TRUE(std::isfinite(cross_entropy_loss(logits_row({1000.0, -1000.0}), 1)));
  EXPECT_THROW(cross_entropy_loss(logits_row({0.0, 0.0}), 2), ContractError);
  EXPECT_THROW(cross_entropy_loss(logits_row({0.0, 0.0}), -1), ContractError);
}

TEST(PredictClass, ArgmaxWithLowestIndexTieBreak) {
  EXPECT_EQ(predict_class(logits_row({0.1, 0.9, 0.3, 0.9})), 1);
  EXPECT_EQ(predict_class(logits_row({2.0, 2.0, 2.0, 2.0})), 0);
  EXPECT_EQ(predict_class(logits_row({-5.0, -1.0, -3.0, -2.0})), 1);
}

TEST(PredictClass, OneHotLabelLogitsAreAlwaysCorrect) {
  for (int label = 0; label < 4; ++label) {
    std::vector<double> v(4, 0.0);
    v[static_cast<std::size_t>(label)] = 10.0;
    EXPECT_EQ(predict_class(logits_row(v)), label);
  }
}

TEST(Evaluate, EmptySplitIsAnError) {
  Model model = small_mlp(2, 1);
  EXPECT_THROW(evaluate_split(model, {}), ContractError);
}

TEST(Evaluate, ConstantLogitsScoreTheChanceFloor) {
  Dataset data = tiny_dataset(8, 500, 1, 11);
  Model model = small_mlp(8, 5, {16});
  ParamStore& params = model_params(model);
  for (const char* name : {"layer1.w", "layer1.b"}) {
    Tensor& t = params[params.find(name)];
    for (double& v : t.data) v = 0.0;
  }
  EvalResult r = evaluate_split(model, data.train);
  EXPECT_NEAR(r.accuracy, 0.25, 0.05);  // predicts bucket 0 always; labels near-uniform
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-9);
}

TEST(Evaluate, AccuracyEqualsBruteForceRecount) {
  Dataset data = tiny_dataset(3, 20, 1, 13);
  Model model = small_mlp(3, 7);
  EvalResult r = evaluate_split(model, data.train);
  ad::Tape tape;
  int correct = 0;
  double loss = 0.0;
  for (const GraphSample& s : data.train) {
    const Tensor& row = tape.val(model_forward(tape, model, s));
    if (predict_class(row) == s.label) ++correct;
    loss += cross_entropy_loss(row, s.label);
    tape.reset();
  }
  EXPECT_DOUBLE_EQ(r.accuracy, correct / 20.0);
  EXPECT_DOUBLE_EQ(r.loss, loss / 20.0);
}

TEST(Train, RecordedLossIsMeanOfPerSampleLosses) {
  Dataset data = tiny_dataset(3, 12, 2, 17);
  Model model = small_mlp(3, 9);
  TrainConfig cfg;
  cfg.model = ModelKind::Mlp;
  cfg.epochs = 1;
  cfg.batch_size = 12;
  cfg.learning_rate = 0.0;  // params frozen: the recorded loss is exactly the initial loss
  TrainResult result = train_model(model, data.train, data.test, cfg);
  ASSERT_EQ(result.metrics.records.size(), 1u);

  double mean = 0.0;
  ad::Tape tape;
  for (const GraphSample& s : data.train) {
    mean += cross_entropy_loss(tape.val(model_forward(tape, model, s)), s.label);
    tape.reset();
  }
  mean /= 12.0;
  EXPECT_NEAR(result.metrics.records[0].train_loss, mean, 1e-12);
}

TEST(Train, LossStrictlyDecreasesOverFirstTenFullBatchSteps) {
  Dataset data = tiny_dataset(4, 32, 2, 19, WorldKind::Traps);
  for (ModelKind kind : {ModelKind::DeepGV, ModelKind::Mlp}) {
    Model model = kind == ModelKind::DeepGV ? small_deepgv(4, 21) : small_mlp(4, 21, {64});
    TrainConfig cfg;
    cfg.model = kind;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.learning_rate = 1e-3;
    TrainResult result = train_model(model, data.train, data.test, cfg);
    ASSERT_EQ(result.metrics.records.size(), 10u);
    for (std::size_t i = 1; i < 10; ++i)
      EXPECT_LT(result.metrics.records[i].train_loss, result.metrics.records[i - 1].train_loss)
          << model_kind_to_string(kind) << " step " << i;
  }
}

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
  Dataset data = tiny_dataset(3, 8, 2, 23);
  Model model = small_deepgv(3, 25, 8);
  ParamStore before = model_params(model);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.0;
  TrainResult result = train_model(model, data.train, data.test, cfg);
  const ParamStore& after = model_params(result.final_);
  ASSERT_EQ(after.size(), before.size());
  for (int i = 0; i < before.size(); ++i) EXPECT_EQ(after[i].data, before[i].data);
  for (const EvalRecord& r : result.metrics.records)
    EXPECT_DOUBLE_EQ(r.test_accuracy, result.metrics.records[0].test_accuracy);
}

TEST(Train, DeterministicGivenSeedAndSensitiveToIt) {
  Dataset data = tiny_dataset(3, 16, 4, 29);
  TrainConfig cfg;
  cfg.model = ModelKind::Mlp;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.seed = 31;
  TrainResult a = train_model(small_mlp(3, 33), data.train, data.test, cfg);
  TrainResult b = train_model(small_mlp(3, 33), data.train, data.test, cfg);
  ASSERT_EQ(a.metrics.records.size(), b.metrics.records.size());
  for (std::size_t i = 0; i < a.metrics.records.size(); ++i) {
    EXPECT_EQ(a.metrics.records[i].train_loss, b.metrics.records[i].train_loss);
    EXPECT_EQ(a.metrics.records[i].test_accuracy, b.metrics.records[i].test_accuracy);
    EXPECT_EQ(a.metrics.records[i].wall_ms, 0.0);
  }
  const ParamStore& pa = model_params(a.final_);
  const ParamStore& pb = model_params(b.final_);
  for (int i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].data, pb[i].data);

  cfg.seed = 32;  // different shuffle stream → different trajectory
  TrainResult c = train_model(small_mlp(3, 33), data.train, data.test, cfg);
  EXPECT_NE(model_params(c.final_)[0].data, pa[0].data);
}

TEST(Train, EarlyStopsAfterPatienceEvaluationsWithoutImprovement) {
  Dataset data = tiny_dataset(3, 8, 2, 37);
  Model model = small_mlp(3, 39);
  TrainConfig cfg;
  cfg.model = ModelKind::Mlp;
  cfg.epochs = 100;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.0;  // accuracy can never improve after the first evaluation
  cfg.patience = 5;
  TrainResult result = train_model(model, data.train, data.test, cfg);
  EXPECT_EQ(result.metrics.records.size(), 6u);  // first eval sets the best, then 5 stale ones
  EXPECT_EQ(result.metrics.best_epoch, 1);
}

TEST(Train, BestSnapshotTracksBestTestAccuracy) {
  Dataset data = tiny_dataset(3, 24, 8, 41, WorldKind::Traps);
  Model model = small_deepgv(3, 43, 8);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 8;
  TrainResult result = train_model(model, data.train, data.test, cfg);
  double best = -1.0;
  int best_epoch = -1;
  for (const EvalRecord& r : result.metrics.records)
    if (r.test_accuracy > best) {
      best = r.test_accuracy;
      best_epoch = r.epoch;
    }
  EXPECT_DOUBLE_EQ(result.metrics.best_test_accuracy, best);
  EXPECT_EQ(result.metrics.best_epoch, best_epoch);
  EXPECT_NEAR(evaluate_split(result.best, data.test).accuracy, best, 1e-12);
}

TEST(Train, NumericFaultAbortsAndRecordsTheBatch) {
  Dataset data = tiny_dataset(3, 8, 2, 47);
  Model model = small_mlp(3, 49);
  ParamStore& params = model_params(model);
  Tensor& w = params[params.find("layer0.w")];
  for (double& v : w.data) v = 1e308;  // overflow on the first forward pass
  TrainConfig cfg;
  cfg.model = ModelKind::Mlp;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  TrainResult result = train_model(model, data.train, data.test, cfg);
  EXPECT_TRUE(result.metrics.aborted);
  EXPECT_EQ(result.metrics.faulted_batch, 0);
  EXPECT_FALSE(result.metrics.fault.empty());
  EXPECT_TRUE(result.metrics.records.empty());
}

TEST(Train, AttentionRowDeviationStaysTiny) {
  Dataset data = tiny_dataset(3, 12, 4, 53, WorldKind::Traps);
  Model model = small_deepgv(3, 55, 8);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  TrainResult result = train_model(model, data.train, data.test, cfg);
  EXPECT_GT(result.metrics.max_attention_row_dev, 0.0);  // softmaxes actually ran
  EXPECT_LE(result.metrics.max_attention_row_dev, 1e-9);
}

TEST(Train, OverfitsOneSampleWithinBudget) {
  Dataset data = tiny_dataset(3, 1, 1, 59, WorldKind::Traps);
  Model model = small_deepgv(3, 61, 8);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  cfg.patience = 200;  // a 1-sample test split plateaus immediately; don't stop early
  TrainResult result = train_model(model, data.train, data.test, cfg);
  bool memorized = false;
  for (const EvalRecord& r : result.metrics.records)
    if (r.train_accuracy == 1.0) memorized = true;
  EXPECT_TRUE(memorized);
}

TEST(Train, RejectsMismatchedKindAndEmptySplits) {
  Dataset data = tiny_dataset(3, 4, 2, 63);
  TrainConfig cfg;
  cfg.model = ModelKind::Mlp;
  EXPECT_THROW(train_model(small_deepgv(3, 1, 8), data.train, data.test, cfg), ContractError);
  cfg.model = ModelKind::DeepGV;
  EXPECT_THROW(train_model(small_deepgv(3, 1, 8), {}, data.test, cfg), ContractError);
  EXPECT_THROW(train_model(small_deepgv(3, 1, 8), data.train, {}, cfg), ContractError);
  cfg.epochs = 0;
  EXPECT_THROW(train_model(small_deepgv(3, 1, 8), data.train, data.test, cfg), ContractError);
  cfg.epochs = 1;
  cfg.learning_rate = -1.0;
  EXPECT_THROW(train_model(small_deepgv(3, 1, 8), data.train, data.test, cfg), ContractError);
}

TEST(MetricsCsv, LayoutAndRoundTrip) {
  Metrics metrics;
  EvalRecord r;
  r.epoch = 3;
  r.train_loss = 1.25;
  r.train_accuracy = 0.625;
  r.test_loss = 1.5;
  r.test_accuracy = 0.5;
  metrics.records.push_back(r);
  csv::Table table = metrics_to_csv(metrics);
  ASSERT_EQ(table.header, (std::vector<std::string>{"epoch", "split", "loss", "accuracy", "wall_ms"}));
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[0], (std::vector<std::string>{"3", "train", "1.25", "0.625", "0"}));
  EXPECT_EQ(table.rows[1], (std::vector<std::string>{"3", "test", "1.5", "0.5", "0"}));

  csv::Table back = csv::parse(csv::to_string(table));
  EXPECT_EQ(back, table);
}

TEST(Csv, DoubleFormattingRoundTripsExactly) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    double v = rng.uniform(-1e6, 1e6) * std::pow(10.0, rng.uniform(-12.0, 12.0));
    EXPECT_EQ(csv::parse_double(csv::format_double(v)), v);
  }
  EXPECT_EQ(csv::format_double(0.25), "0.25");
  EXPECT_EQ(csv::format_double(0.0), "0");
}

TEST(Csv, QuotedFieldsSurviveRoundTrip) {
  csv::Table table;
  table.header = {"name", "note"};
  table.rows.push_back({"cell,1", "said \"ok\""});
  csv::Table back = csv::parse(csv::to_string(table));
  ASSERT_EQ(back.rows.size(), 1u);
  EXPECT_EQ(back.rows[0][0], "cell,1");
  EXPECT_EQ(back.rows[0][1], "said \"ok\"");

  csv::Table bad;
  bad.header = {"a"};
  bad.rows.push_back({"line\nbreak"});
  EXPECT_THROW(csv::to_string(bad), ContractError);
}

TEST(Csv, RejectsRaggedRowsAndBadNumbers) {
  EXPECT_THROW(csv::parse("a,b\n1,2,3\n"), ParseError);
  EXPECT_THROW(csv::parse(""), ParseError);
  EXPECT_THROW(csv::parse_double("12x"), ParseError);
  csv::Table t = csv::parse("a,b\n1,2\n");
  EXPECT_THROW(t.column("c"), ParseError);
  EXPECT_EQ(t.column("b"), 1);
}

TEST(ModelKindDispatch, CheckpointRoundTripsThroughTheSharedLoader) {
  Model g = small_deepgv(3, 65, 8);
  Model m = small_mlp(3, 67);
  std::string path = "graphvalue_test_dispatch.ckpt.json";
  for (Model* model : {&g, &m}) {
    save_checkpoint(path, model_params(*model), model_hyper(*model));
    Model back = model_from_checkpoint(load_checkpoint(path));
    EXPECT_EQ(model_kind(back), model_kind(*model));
    const ParamStore& pa = model_params(*model);
    const ParamStore& pb = model_params(back);
    for (int i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].data, pb[i].data);
  }
  nlohmann::json j = checkpoint_to_json(model_params(g), model_hyper(g));
  j["hyper"]["model"] = "transformer";
  EXPECT_THROW(model_from_checkpoint(checkpoint_from_json(j)), ParseError);
  std::remove(path.c_str());
}

TEST(ModelKindDispatch, StringNamesRoundTrip) {
  EXPECT_EQ(model_kind_to_string(ModelKind::DeepGV), "deepgv");
  EXPECT_EQ(model_kind_from_string("mlp"), ModelKind::Mlp);
  EXPECT_THROW(model_kind_from_string("cnn"), ParseError);
}
