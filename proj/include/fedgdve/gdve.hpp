#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "fedgdve/gcf_model.hpp"
#include "fedgdve/graph.hpp"
#include "fedgdve/numerics.hpp"

namespace fedgdve {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] so that both
/// log-likelihood terms stay finite.
inline constexpr double kProbClamp = 1e-6;

struct DenseLayer {
  DenseMatrix w;  // in x out
  DenseVector b;  // out
};

/// Two-stage selection network. Stage one maps an (encoder user || encoder
/// item) pair through three ReLU layers of width 50; stage two maps
/// (stage-one output || validity score) through a ReLU layer of width 30 to
/// a single logit squashed by the logistic function.
struct ProbEstimatorParams {
  std::vector<DenseLayer> stage1;
  std::vector<DenseLayer> stage2;

  static ProbEstimatorParams init(int pair_width, Rng& rng);
  static ProbEstimatorParams zeros_like(const ProbEstimatorParams& p);
  int pair_width() const { return static_cast<int>(stage1.front().w.rows()); }

  std::size_t size() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  void axpy(double alpha, const ProbEstimatorParams& other);
  bool finite() const;

  friend bool operator==(const ProbEstimatorParams& a, const ProbEstimatorParams& b);
};

/// Activations retained for backpropagation through the estimator.
struct EstimatorPass {
  std::vector<DenseMatrix> inputs;  // input of every layer, stage one then stage two
  std::vector<DenseMatrix> pre;     // pre-activation of every layer
  DenseVector logits;
  DenseVector probs;                // clamped
};

/// `pairs` holds one (user || item) row per candidate edge, `validity` the
/// matching validity score.
EstimatorPass estimator_forward(const ProbEstimatorParams& params, const DenseMatrix& pairs,
                                const DenseVector& validity);

/// Same network on the pairs (user_emb[e.user] || item_emb[e.item]) without
/// materializing them; inputs[0] of the pass stays empty.
EstimatorPass estimator_forward(const ProbEstimatorParams& params, const DenseMatrix& user_emb,
                                const DenseMatrix& item_emb, std::span<const Edge> candidates,
                                const DenseVector& validity);

/// Parameter gradient given d(objective)/d(logit) per candidate edge.
ProbEstimatorParams estimator_backward(const ProbEstimatorParams& params, const EstimatorPass& pass,
                                       const DenseVector& d_logits);
/// Counterpart for a pass produced by the factored forward.
ProbEstimatorParams estimator_backward(const ProbEstimatorParams& params, const EstimatorPass& pass,
                                       const DenseVector& d_logits, const DenseMatrix& user_emb,
                                       const DenseMatrix& item_emb, std::span<const Edge> candidates);

/// Validity scores of `batch_users` (global indices) against `items`.
/// The valid predictor propagates over the local graph extended with the
/// batch users' global edges; the batch users enter with zero layer-0 rows.
DenseMatrix validity_scores(const GcfParams& valid_params, const InteractionGraph& local_graph,
                            const InteractionGraph& global_graph, std::span<const Index> batch_users,
                            std::span<const Index> items);

/// Validity score of each candidate edge (same rule as validity_scores,
/// evaluated only on the candidate pairs).
DenseVector candidate_validity(const GcfParams& valid_params, const InteractionGraph& local_graph,
                               const InteractionGraph& global_graph, std::span<const Index> batch_users,
                               std::span<const Edge> candidates);

/// Rows (user embedding || item embedding) for each candidate edge.
DenseMatrix pair_features(const DenseMatrix& user_emb, const DenseMatrix& item_emb, std::span<const Edge> candidates);

DenseVector selection_probabilities(const ProbEstimatorParams& params, const DenseMatrix& enc_user_emb,
                                    const DenseMatrix& enc_item_emb, const DenseVector& validity,
                                    std::span<const Edge> candidates);

std::vector<std::uint8_t> sample_mask(const DenseVector& probs, Rng& rng);

/// Everything one policy step needs, captured at sampling time. Pair rows
/// come either materialized in `pairs` or as the encoder tables `enc_user`
/// and `enc_item` indexed by the candidate edges.
struct SelectionBatch {
  std::vector<Index> batch_users;     // global user indices
  std::vector<Edge> candidate_edges;  // observed global edges of the batch users
  DenseMatrix pairs;
  DenseMatrix enc_user;
  DenseMatrix enc_item;
  DenseVector validity;
  DenseVector probs;
  std::vector<std::uint8_t> mask;
  // Forward pass at sampling time and the parameters it used.
  std::shared_ptr<const EstimatorPass> pass;
  ProbEstimatorParams drawn_with;
};

/// (1/|B|) sum over candidate edges of S log P + (1 - S) log(1 - P), and its
/// gradient with respect to the estimator parameters.
struct Surrogate {
  double value = 0.0;
  ProbEstimatorParams grads;
};
Surrogate surrogate_log_likelihood(const ProbEstimatorParams& params, const DenseMatrix& pairs,
                                   const DenseVector& validity, std::span<const std::uint8_t> mask,
                                   std::size_t num_batch_users);

/// Factored-pair variant; reuses `pass` when given (it must come from
/// `params` on the same candidates).
Surrogate surrogate_log_likelihood(const ProbEstimatorParams& params, const DenseMatrix& user_emb,
                                   const DenseMatrix& item_emb, std::span<const Edge> candidates,
                                   const DenseVector& validity, std::span<const std::uint8_t> mask,
                                   std::size_t num_batch_users, const EstimatorPass* pass = nullptr);

/// Reward-weighted log-likelihood ascent: params + gamma * r * grad.
ProbEstimatorParams policy_gradient_update(const ProbEstimatorParams& params, const SelectionBatch& batch, double r,
                                           double gamma);

struct RewardResult {
  double raw = 0.0;
  double r = 0.0;
  double new_baseline = 0.0;
};

/// raw = Recall@k of `repr` on the validation edges; r = raw - baseline;
/// new_baseline = decay * baseline + (1 - decay) * raw.
RewardResult reward(const Representation& repr, const InteractionGraph& train_graph,
                    std::span<const Edge> validation_edges, std::size_t k, double baseline, double decay);

struct GdveConfig {
  int dim = 64;
  int num_layers = 3;
  std::vector<int> even_layers{2};
  double eta = 0.004;
  double gamma = 0.007;
  double lambda = 1e-4;
  double tau = 0.1;
  double struc_weight = 1.0;
  Optimizer optimizer = Optimizer::kAdam;
  std::size_t user_batch = 1024;    // beta, global users per GDVE step
  std::size_t train_batch = 2048;   // edges per task-predictor mini-batch
  int pretrain_epochs = 10;
  std::size_t max_batches = 500;
  std::size_t plateau_window = 20;
  double plateau_tol = 1e-4;
  double ema_decay = 0.9;
  std::size_t reward_k = 100;

  TrainOptions train_options(LossSet losses) const;
};

/// Per-client estimator. The encoder and valid predictor are frozen after
/// pretraining; only the estimator, the task predictor and the baseline move.
struct GdveState {
  GcfParams encoder;
  GcfParams valid;
  GcfParams task;
  ProbEstimatorParams prob;
  OptimizerState task_optimizer;
  double ema_baseline = 0.0;
  std::size_t batches_run = 0;
  std::vector<double> raw_rewards;
  Rng rng;

  /// Final-layer encoder embeddings; recomputed from `encoder` on demand.
  DenseMatrix enc_user;
  DenseMatrix enc_item;
};

GcfParams pretrain_encoder(const InteractionGraph& global_graph, const GdveConfig& cfg, Rng& rng);
GcfParams pretrain_valid_predictor(const InteractionGraph& local_graph, const GdveConfig& cfg, Rng& rng);

/// Fresh state around already pretrained encoder / valid predictor.
GdveState make_gdve_state(GcfParams encoder, GcfParams valid, const InteractionGraph& global_graph,
                          const InteractionGraph& local_graph, const GdveConfig& cfg, Rng rng);

/// Recomputes the cached encoder embeddings over the global graph.
void refresh_encoder_cache(GdveState& state, const InteractionGraph& global_graph);

/// One epoch of the task predictor on local + selected edges with BPR and
/// structure losses. Selected edges carry global user indices.
EpochStats train_task_predictor(GcfParams& task_params, std::span<const Edge> selected_edges,
                                const InteractionGraph& local_graph, Index num_global_users, const GdveConfig& cfg,
                                Rng& rng, OptimizerState* optimizer = nullptr);

/// Builds the selection batch for the given global users: candidates,
/// validity, probabilities and a sampled mask.
SelectionBatch draw_selection(const GdveState& state, const InteractionGraph& global_graph,
                              const InteractionGraph& local_graph, std::span<const Index> batch_users, Rng& rng);

struct GdveStep {
  double raw_reward = 0.0;
  double advantage = 0.0;
  std::size_t selected = 0;
  std::size_t candidates = 0;
};

/// One iteration of the estimator training loop.
GdveStep gdve_step(GdveState& state, const InteractionGraph& global_graph, const InteractionGraph& local_graph,
                   std::span<const Edge> validation_edges, const GdveConfig& cfg);

/// Iterates gdve_step until the EMA reward gains less than plateau_tol over
/// plateau_window batches or max_batches is reached.
void run_gdve_training(GdveState& state, const InteractionGraph& global_graph, const InteractionGraph& local_graph,
                       std::span<const Edge> validation_edges, const GdveConfig& cfg);

struct Augmentation {
  std::vector<Edge> edges;  // global user indices
  double selected_ratio = 0.0;
};

/// Samples one mask over every global user's edges, in user batches.
Augmentation select_augmentation(const GdveState& state, const InteractionGraph& global_graph,
                                 const InteractionGraph& local_graph, std::size_t user_batch, Rng& rng);

/// Text checkpoint of every parameter block, the baseline and the RNG.
void write_gdve_checkpoint(std::ostream& os, const GdveState& state);
GdveState read_gdve_checkpoint(std::istream& is);

}  // namespace fedgdve
