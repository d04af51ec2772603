#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedgdve/graph.hpp"
#include "fedgdve/numerics.hpp"

namespace fedgdve {

/// Leaky-ReLU slope used by every propagation layer.
inline constexpr double kLeakySlope = 0.2;

struct LayerWeights {
  DenseMatrix w1;     // d x d, applied to self + neighbor aggregate
  DenseMatrix w2;     // d x d, applied to the elementwise interaction term
  DenseVector bias;   // d
};

/// Parameters of the NGCF-style model. Rows of the embedding tables are
/// nodes; the per-layer weights act on row vectors (x * W).
struct GcfParams {
  DenseMatrix user_emb;
  DenseMatrix item_emb;
  std::vector<LayerWeights> layers;

  Index num_users() const { return static_cast<Index>(user_emb.rows()); }
  Index num_items() const { return static_cast<Index>(item_emb.rows()); }
  int dim() const { return static_cast<int>(item_emb.cols()); }
  int num_layers() const { return static_cast<int>(layers.size()); }

  /// Xavier-uniform initialization of every block, biases zero.
  static GcfParams init(Index num_users, Index num_items, int dim, int num_layers, Rng& rng);
  static GcfParams zeros_like(const GcfParams& p);

  std::size_t size() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  double squared_norm() const;
  bool finite() const;
  /// this += alpha * other
  void axpy(double alpha, const GcfParams& other);
  bool same_shape(const GcfParams& other) const;

  friend bool operator==(const GcfParams& a, const GcfParams& b);
};

/// Embeddings of every layer; index 0 holds the initial tables.
struct LayerEmbeddings {
  std::vector<DenseMatrix> user;
  std::vector<DenseMatrix> item;
  int num_layers() const { return static_cast<int>(user.size()) - 1; }
};

/// Forward intermediates kept for the backward pass.
struct PropagationTrace {
  LayerEmbeddings layers;
  std::vector<DenseMatrix> user_agg, item_agg;  // per layer l >= 1 (stored at l - 1)
  std::vector<DenseMatrix> user_pre, item_pre;
};

LayerEmbeddings propagate(const GcfParams& params, const NormalizedAdjacency& adj, int num_layers);
PropagationTrace propagate_traced(const GcfParams& params, const NormalizedAdjacency& adj);

/// Accumulates into `grads` the parameter gradient given the gradient of the
/// objective with respect to every layer's embeddings.
void backpropagate(const GcfParams& params, const NormalizedAdjacency& adj, const PropagationTrace& trace,
                   LayerEmbeddings layer_grads, GcfParams& grads);

struct Representation {
  DenseMatrix user;  // P x (L+1)d
  DenseMatrix item;  // Q x (L+1)d
};

/// Layer-ascending concatenation of every layer's embeddings.
Representation final_representation(const LayerEmbeddings& layers);

double score(std::span<const double> user_row, std::span<const double> item_row);

struct BprTriple {
  Index user;
  Index pos;
  Index neg;
};

struct LossAndGrad {
  double loss = 0.0;
  GcfParams grads;
};

/// -sum ln sigmoid(y_um - y_un) + lambda * ||params||^2, with gradients taken
/// through the propagation recorded in `trace`.
LossAndGrad bpr_loss_and_grad(const GcfParams& params, const NormalizedAdjacency& adj, const PropagationTrace& trace,
                              std::span<const BprTriple> triples, double lambda);

struct StructureLoss {
  double loss = 0.0;
  LayerEmbeddings grads;  // gradient w.r.t. each layer's embeddings (item side zero)
};

/// Contrastive loss aligning each batch user's layer-0 embedding with its own
/// embeddings at the layers in `even_layers`, against the other batch users.
StructureLoss structure_loss_and_grad(const LayerEmbeddings& layers, std::span<const Index> batch_users, double tau,
                                      std::span<const int> even_layers);

/// Even-numbered propagation layers in [1, L].
std::vector<int> default_even_layers(int num_layers);

void sgd_step(GcfParams& params, const GcfParams& grads, double lr);

enum class LossSet { kBpr, kBprStruc };

enum class Optimizer { kSgd, kAdam };

/// First and second moment estimates for Adam; empty until the first step.
struct OptimizerState {
  GcfParams m;
  GcfParams v;
  std::int64_t steps = 0;
};

/// Bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8).
void adam_step(GcfParams& params, const GcfParams& grads, double lr, OptimizerState& state);

struct TrainOptions {
  LossSet losses = LossSet::kBpr;
  double lr = 0.004;
  double lambda = 1e-4;
  double tau = 0.1;
  double struc_weight = 1.0;
  std::vector<int> even_layers{2};
  std::size_t batch_size = 2048;
  Optimizer optimizer = Optimizer::kAdam;
};

struct EpochStats {
  double bpr_loss = 0.0;    // mean per triple
  double struc_loss = 0.0;  // mean per batch user
  std::size_t batches = 0;
  std::size_t triples = 0;
  std::size_t skipped = 0;  // positives whose user has no unobserved item
};

/// One shuffled pass over the observed edges of `graph`. Each mini-batch
/// samples one uniform negative per positive, propagates over the full graph
/// and takes one optimizer step on the batch objective divided by the number
/// of distinct users in the batch.
EpochStats train_epoch(GcfParams& params, const InteractionGraph& graph, const TrainOptions& opts, Rng& rng);

/// Same as train_epoch but reusing a precomputed normalization of `graph`.
EpochStats train_epoch(GcfParams& params, const InteractionGraph& graph, const NormalizedAdjacency& adj,
                       const TrainOptions& opts, Rng& rng);

/// Variant carrying optimizer moments across epochs. A fresh state is used
/// when `state` is null.
EpochStats train_epoch(GcfParams& params, const InteractionGraph& graph, const NormalizedAdjacency& adj,
                       const TrainOptions& opts, Rng& rng, OptimizerState* state);

/// Text serialization of a parameter set (one block per line group).
void write_params(std::ostream& os, const GcfParams& p);
GcfParams read_params(std::istream& is);

}  // namespace fedgdve
