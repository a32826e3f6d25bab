#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphvalue/checkpoint.hpp"
#include "graphvalue/dataset.hpp"
#include "graphvalue/errors.hpp"
#include "graphvalue/rng.hpp"
#include "graphvalue/tape.hpp"
#include "graphvalue/tensor.hpp"

namespace graphvalue {

// ---- DeepGV -----------------------------------------------------------------

inline constexpr int kAutoIterations = -1;

struct DeepGVConfig {
  int grid_size = 8;
  int embed_dim = 32;
  int bucket_count = 4;
  int iterations = kAutoIterations;  // auto: twice the grid diameter in moves, 2*(N-1)

  int n_nodes() const { return grid_size * grid_size; }
  int resolved_iterations() const {
    if (iterations != kAutoIterations) return iterations;
    return std::max(1, 2 * (grid_size - 1));
  }
  void validate() const {
    if (grid_size < 1) throw ContractError("grid_size must be positive");
    if (embed_dim < 1) throw ContractError("embed_dim must be positive");
    if (bucket_count < 2) throw ContractError("bucket_count must be at least 2");
    if (iterations != kAutoIterations && iterations < 1)
      throw ContractError("iterations must be at least 1, got " + std::to_string(iterations));
  }
};

// Message-passing network that mimics value-iteration sweeps: per iteration,
// attention over each node's reachable neighborhood re-weights both the
// embedded edge rewards and the discounted neighbor embeddings, and a shared
// two-layer perceptron folds the per-action aggregates into the next node
// embedding. Weights are shared across iterations. The readout concatenates
// all final embeddings in canonical row-major node order, so it is bound to
// one grid size.
//
// The attention rows are normalized over N(i) = { j : some action moves i to
// j with positive probability }, the same support a transition-probability
// row has; pairs outside the neighborhood get a large negative logit, which
// drives their softmax weight to exactly zero.
struct DeepGVModel {
  DeepGVConfig cfg;
  ParamStore params;

  static DeepGVModel init(const DeepGVConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DeepGVModel model;
    model.cfg = cfg;
    Rng rng(seed);
    int d = cfg.embed_dim;
    int n = cfg.n_nodes();
    int b = cfg.bucket_count;
    auto weight = [&](const char* name, int rows, int cols) {
      model.params.add(name, glorot_uniform(Shape::mat(rows, cols), rows, cols, rng));
    };
    auto bias = [&](const char* name, int len) { model.params.add(name, Tensor::zeros(Shape::vec(len))); };
    weight("embed.w", kNodeFeatures, d);
    bias("embed.b", d);
    weight("theta.w1", 2 * d, d);
    bias("theta.b1", d);
    weight("theta.w2", d, 1);
    bias("theta.b2", 1);
    weight("edge.w", kEdgeSlots, kNumActions * d);
    bias("edge.b", kNumActions * d);
    weight("psi.w1", kNumActions * d, d);
    bias("psi.b1", d);
    weight("psi.w2", d, d);
    bias("psi.b2", d);
    weight("omega.w1", n * d, d);
    bias("omega.b1", d);
    weight("omega.w2", d, b);
    bias("omega.b2", b);
    return model;
  }

  nlohmann::json hyper() const {
    return nlohmann::json{{"model", "deepgv"},
                          {"grid_size", cfg.grid_size},
                          {"embed_dim", cfg.embed_dim},
                          {"bucket_count", cfg.bucket_count},
                          {"iterations", cfg.iterations}};
  }

  static DeepGVModel from_checkpoint(const Checkpoint& ckpt) {
    DeepGVModel model;
    try {
      if (ckpt.hyper.at("model").get<std::string>() != "deepgv")
        throw ParseError("checkpoint holds a '" + ckpt.hyper.at("model").get<std::string>() +
                         "' model, not 'deepgv'");
      model.cfg.grid_size = ckpt.hyper.at("grid_size").get<int>();
      model.cfg.embed_dim = ckpt.hyper.at("embed_dim").get<int>();
      model.cfg.bucket_count = ckpt.hyper.at("bucket_count").get<int>();
      model.cfg.iterations = ckpt.hyper.at("iterations").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("checkpoint hyperparameters malformed: ") + e.what());
    }
    model.cfg.validate();
    model.params = ckpt.params;
    DeepGVModel reference = DeepGVModel::init(model.cfg, 0);
    if (model.params.names != reference.params.names)
      throw ParseError("checkpoint parameter list does not match the deepgv layout");
    for (int i = 0; i < model.params.size(); ++i)
      if (model.params[i].shape != reference.params[i].shape)
        throw ParseError("checkpoint tensor '" + model.params.names[static_cast<std::size_t>(i)] + "' has shape " +
                         model.params[i].shape.str() + ", expected " + reference.params[i].shape.str());
    return model;
  }
};

// Optional probe into a forward pass; tests read attention rows and
// per-iteration embeddings through these handles before backward() clears
// the tape.
struct DeepGVTrace {
  std::vector<ad::Value> attention;   // one [n x n] matrix per iteration
  std::vector<ad::Value> embeddings;  // h^(0) .. h^(K)
};

// Full network as one tape program. The attention MLP's first layer is
// evaluated as two matmuls (source and destination halves of theta.w1) and a
// fused pairwise op, which is algebraically identical to running the
// perceptron on every concat(h_i, h_j) pair.
// Attention logits are kMaskedLogit outside the neighborhood (the pair is
// never evaluated there): exp(kMaskedLogit - row max) underflows to exactly
// 0.0, so masked pairs get zero attention and the row normalizes over the
// neighborhood alone.
constexpr double kMaskedLogit = -1e9;

inline Tensor neighborhood_mask(const GraphSample& sample) {
  int n = sample.n_nodes();
  Tensor mask = Tensor::full(Shape::mat(n, n), kMaskedLogit);
  for (const SparseEdgeTable::Entry& e : sample.edges.entries)
    if (e.slot % 2 == 1 && e.value > 0.0) mask.at(e.src, e.dst) = 0.0;
  for (int i = 0; i < n; ++i) {
    bool any = false;
    for (int j = 0; j < n && !any; ++j) any = mask.at(i, j) == 0.0;
    if (!any) throw ContractError("node " + std::to_string(i) + " has an empty neighborhood");
  }
  return mask;
}

inline ad::Value deepgv_forward(ad::Tape& tape, const DeepGVModel& model, const GraphSample& sample,
                                DeepGVTrace* trace = nullptr) {
  const DeepGVConfig& cfg = model.cfg;
  if (sample.grid_size != cfg.grid_size)
    throw ContractError("sample grid size " + std::to_string(sample.grid_size) + " does not match model size " +
                        std::to_string(cfg.grid_size));
  if (sample.bucket_count != cfg.bucket_count)
    throw ContractError("sample bucket count " + std::to_string(sample.bucket_count) +
                        " does not match model bucket count " + std::to_string(cfg.bucket_count));
  int d = cfg.embed_dim;
  int iterations = cfg.resolved_iterations();
  const ParamStore& p = model.params;
  auto bind = [&](const char* name) {
    int slot = p.find(name);
    return tape.param(p[slot], slot);
  };

  ad::Value embed_w = bind("embed.w"), embed_b = bind("embed.b");
  ad::Value theta_w1 = bind("theta.w1"), theta_b1 = bind("theta.b1");
  ad::Value theta_w2 = bind("theta.w2"), theta_b2 = bind("theta.b2");
  ad::Value edge_w = bind("edge.w"), edge_b = bind("edge.b");
  ad::Value psi_w1 = bind("psi.w1"), psi_b1 = bind("psi.b1");
  ad::Value psi_w2 = bind("psi.w2"), psi_b2 = bind("psi.b2");
  ad::Value omega_w1 = bind("omega.w1"), omega_b1 = bind("omega.b1");
  ad::Value omega_w2 = bind("omega.w2"), omega_b2 = bind("omega.b2");

  std::vector<int> src_rows(static_cast<std::size_t>(d)), dst_rows(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    src_rows[static_cast<std::size_t>(i)] = i;
    dst_rows[static_cast<std::size_t>(i)] = d + i;
  }
  ad::Value w_src = ad::gather_rows(theta_w1, src_rows);
  ad::Value w_dst = ad::gather_rows(theta_w1, dst_rows);
  ad::Value w2_vec = ad::reshape(theta_w2, Shape::vec(d));

  ad::Value x = tape.constant(sample.node_features);
  ad::Value mask = tape.constant(neighborhood_mask(sample));
  ad::Value h = ad::add_rowvec(ad::matmul(x, embed_w), embed_b);
  if (trace) trace->embeddings.push_back(h);

  for (int k = 0; k < iterations; ++k) {
    ad::Value scores =
        ad::masked_pairwise_scores(ad::matmul(h, w_src), ad::matmul(h, w_dst), theta_b1, w2_vec, theta_b2, mask);
    ad::Value attention = ad::softmax_rows(scores);
    if (trace) trace->attention.push_back(attention);

    // sum_j A[i][j] * edge_embed(features_ij) contracts through the linear
    // edge embedding; the row bias survives intact because rows of A sum to 1.
    ad::Value mixed = ad::edge_mix(attention, sample.edges);
    ad::Value rewards = ad::add_rowvec(ad::matmul(mixed, edge_w), edge_b);
    ad::Value moved = ad::scale(ad::matmul(attention, h), sample.discount);
    ad::Value messages = ad::add(rewards, ad::concat({moved, moved, moved, moved}, 1));
    ad::Value hidden = ad::relu(ad::add_rowvec(ad::matmul(messages, psi_w1), psi_b1));
    h = ad::add_rowvec(ad::matmul(hidden, psi_w2), psi_b2);
    if (trace) trace->embeddings.push_back(h);
  }

  ad::Value flat = ad::reshape(h, Shape::mat(1, cfg.n_nodes() * d));
  ad::Value hidden = ad::relu(ad::add_rowvec(ad::matmul(flat, omega_w1), omega_b1));
  return ad::add_rowvec(ad::matmul(hidden, omega_w2), omega_b2);
}

// ---- MLP baseline -------------------------------------------------------------

struct MlpConfig {
  int grid_size = 8;
  int bucket_count = 4;
  std::vector<int> hidden = {256, 256};

  int input_dim() const {
    int n = grid_size * grid_size;
    return n * kNodeFeatures + n * kNumActions + n;
  }
  void validate() const {
    if (grid_size < 1) throw ContractError("grid_size must be positive");
    if (bucket_count < 2) throw ContractError("bucket_count must be at least 2");
    for (int h : hidden)
      if (h < 1) throw ContractError("hidden layer sizes must be positive");
  }
};

// Flattened-input baseline over the same information DeepGV sees: all raw
// node features in row-major node order, then the per-state expected
// immediate reward table, then a one-hot query indicator.
inline Tensor mlp_input(const GraphSample& sample) {
  int n = sample.n_nodes();
  Tensor input = Tensor::zeros(Shape::mat(1, n * kNodeFeatures + n * kNumActions + n));
  int at = 0;
  for (double v : sample.node_features.data) input.at(0, at++) = v;
  for (double v : sample.action_rewards.data) input.at(0, at++) = v;
  input.at(0, at + sample.query) = 1.0;
  return input;
}

struct MlpModel {
  MlpConfig cfg;
  ParamStore params;

  static MlpModel init(const MlpConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    MlpModel model;
    model.cfg = cfg;
    Rng rng(seed);
    std::vector<int> sizes;
    sizes.push_back(cfg.input_dim());
    for (int h : cfg.hidden) sizes.push_back(h);
    sizes.push_back(cfg.bucket_count);
    for (std::size_t layer = 0; layer + 1 < sizes.size(); ++layer) {
      int fan_in = sizes[layer], fan_out = sizes[layer + 1];
      std::string tag = "layer" + std::to_string(layer);
      model.params.add(tag + ".w", glorot_uniform(Shape::mat(fan_in, fan_out), fan_in, fan_out, rng));
      model.params.add(tag + ".b", Tensor::zeros(Shape::vec(fan_out)));
    }
    return model;
  }

  int n_layers() const { return static_cast<int>(cfg.hidden.size()) + 1; }

  nlohmann::json hyper() const {
    return nlohmann::json{{"model", "mlp"},
                          {"grid_size", cfg.grid_size},
                          {"bucket_count", cfg.bucket_count},
                          {"hidden", cfg.hidden}};
  }

  static MlpModel from_checkpoint(const Checkpoint& ckpt) {
    MlpModel model;
    try {
      if (ckpt.hyper.at("model").get<std::string>() != "mlp")
        throw ParseError("checkpoint holds a '" + ckpt.hyper.at("model").get<std::string>() + "' model, not 'mlp'");
      model.cfg.grid_size = ckpt.hyper.at("grid_size").get<int>();
      model.cfg.bucket_count = ckpt.hyper.at("bucket_count").get<int>();
      model.cfg.hidden = ckpt.hyper.at("hidden").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("checkpoint hyperparameters malformed: ") + e.what());
    }
    model.cfg.validate();
    model.params = ckpt.params;
    MlpModel reference = MlpModel::init(model.cfg, 0);
    if (model.params.names != reference.params.names)
      throw ParseError("checkpoint parameter list does not match the mlp layout");
    for (int i = 0; i < model.params.size(); ++i)
      if (model.params[i].shape != reference.params[i].shape)
        throw ParseError("checkpoint tensor '" + model.params.names[static_cast<std::size_t>(i)] + "' has shape " +
                         model.params[i].shape.str() + ", expected " + reference.params[i].shape.str());
    return model;
  }
};

inline ad::Value mlp_forward(ad::Tape& tape, const MlpModel& model, const GraphSample& sample) {
  if (sample.grid_size != model.cfg.grid_size)
    throw ContractError("sample grid size " + std::to_string(sample.grid_size) + " does not match model size " +
                        std::to_string(model.cfg.grid_size));
  Tensor input = mlp_input(sample);
  if (input.shape.dims[1] != model.cfg.input_dim())
    throw DimensionError("flattened input " + input.shape.str() + " does not match model input dim " +
                         std::to_string(model.cfg.input_dim()));
  ad::Value h = tape.constant(std::move(input));
  int layers = model.n_layers();
  for (int layer = 0; layer < layers; ++layer) {
    std::string tag = "layer" + std::to_string(layer);
    int w = model.params.find(tag + ".w");
    int b = model.params.find(tag + ".b");
    h = ad::add_rowvec(ad::matmul(h, tape.param(model.params[w], w)), tape.param(model.params[b], b));
    if (layer + 1 < layers) h = ad::relu(h);
  }
  return h;
}

}  // namespace graphvalue
