#include "fedgdve/gdve.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>

#include "fedgdve/evaluation.hpp"
#include "fedgdve/serialize.hpp"

namespace fedgdve {

namespace {

constexpr int kStage1Width = 50;
constexpr int kStage1Depth = 3;
constexpr int kStage2Width = 30;

DenseLayer make_layer(int in, int out, Rng& rng) {
  // He-uniform for ReLU inputs.
  DenseLayer l{DenseMatrix(in, out), DenseVector::Zero(out)};
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  for (Eigen::Index k = 0; k < l.w.size(); ++k) l.w.data()[k] = (2.0 * rng.uniform() - 1.0) * bound;
  return l;
}

template <class F>
void for_each_block(ProbEstimatorParams& p, F&& f) {
  for (auto& l : p.stage1) {
    f(l.w.data(), l.w.size());
    f(l.b.data(), l.b.size());
  }
  for (auto& l : p.stage2) {
    f(l.w.data(), l.w.size());
    f(l.b.data(), l.b.size());
  }
}

DenseMatrix relu(const DenseMatrix& x) { return x.cwiseMax(0.0); }

DenseMatrix relu_mask(const DenseMatrix& x) {
  return x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

std::vector<DenseLayer*> all_layers(ProbEstimatorParams& p) {
  std::vector<DenseLayer*> out;
  for (auto& l : p.stage1) out.push_back(&l);
  for (auto& l : p.stage2) out.push_back(&l);
  return out;
}

std::vector<const DenseLayer*> all_layers(const ProbEstimatorParams& p) {
  std::vector<const DenseLayer*> out;
  for (const auto& l : p.stage1) out.push_back(&l);
  for (const auto& l : p.stage2) out.push_back(&l);
  return out;
}

/// Local graph extended with the batch users' global edges; batch user at
/// position b becomes user local.num_users() + b.
InteractionGraph validity_graph(const InteractionGraph& local_graph, const InteractionGraph& global_graph,
                                std::span<const Index> batch_users) {
  std::vector<Edge> extra;
  for (std::size_t b = 0; b < batch_users.size(); ++b) {
    for (Index i : global_graph.items_of(batch_users[b])) extra.push_back({static_cast<Index>(b), i});
  }
  return merge(local_graph, extra, static_cast<Index>(batch_users.size()));
}

Representation validity_representation(const GcfParams& valid_params, const InteractionGraph& graph) {
  GcfParams extended = valid_params;
  extended.user_emb = DenseMatrix::Zero(graph.num_users(), valid_params.dim());
  extended.user_emb.topRows(valid_params.num_users()) = valid_params.user_emb;
  return final_representation(propagate(extended, normalize(graph), extended.num_layers()));
}

void check_local_shapes(const GcfParams& valid_params, const InteractionGraph& local_graph,
                        const InteractionGraph& global_graph) {
  if (valid_params.num_users() != local_graph.num_users() || valid_params.num_items() != local_graph.num_items()) {
    throw NumericError("validity: valid predictor does not match the local graph");
  }
  if (global_graph.num_items() != local_graph.num_items()) {
    throw NumericError("validity: global and local graphs use different item catalogs");
  }
}

std::vector<Index> sample_users(Index num_users, std::size_t batch, Rng& rng) {
  std::vector<Index> users(static_cast<std::size_t>(num_users));
  for (Index u = 0; u < num_users; ++u) users[u] = u;
  if (batch < users.size()) {
    rng.shuffle(users.begin(), users.end());
    users.resize(batch);
    std::sort(users.begin(), users.end());
  }
  return users;
}

}  // namespace

ProbEstimatorParams ProbEstimatorParams::init(int pair_width, Rng& rng) {
  ProbEstimatorParams p;
  int in = pair_width;
  for (int k = 0; k < kStage1Depth; ++k) {
    p.stage1.push_back(make_layer(in, kStage1Width, rng));
    in = kStage1Width;
  }
  p.stage2.push_back(make_layer(kStage1Width + 1, kStage2Width, rng));
  p.stage2.push_back(make_layer(kStage2Width, 1, rng));
  return p;
}

ProbEstimatorParams ProbEstimatorParams::zeros_like(const ProbEstimatorParams& p) {
  ProbEstimatorParams z = p;
  for_each_block(z, [](double* d, Eigen::Index n) { std::fill(d, d + n, 0.0); });
  return z;
}

std::size_t ProbEstimatorParams::size() const {
  std::size_t n = 0;
  for (const auto* l : all_layers(*this)) n += static_cast<std::size_t>(l->w.size() + l->b.size());
  return n;
}

std::vector<double> ProbEstimatorParams::flatten() const {
  std::vector<double> out;
  auto& self = const_cast<ProbEstimatorParams&>(*this);
  for_each_block(self, [&](double* d, Eigen::Index n) { out.insert(out.end(), d, d + n); });
  return out;
}

void ProbEstimatorParams::unflatten(std::span<const double> flat) {
  if (flat.size() != size()) throw NumericError("ProbEstimatorParams::unflatten: size mismatch");
  std::size_t pos = 0;
  for_each_block(*this, [&](double* d, Eigen::Index n) {
    std::copy_n(flat.data() + pos, n, d);
    pos += static_cast<std::size_t>(n);
  });
}

void ProbEstimatorParams::axpy(double alpha, const ProbEstimatorParams& other) {
  auto mine = all_layers(*this);
  auto theirs = all_layers(other);
  for (std::size_t k = 0; k < mine.size(); ++k) {
    mine[k]->w += alpha * theirs[k]->w;
    mine[k]->b += alpha * theirs[k]->b;
  }
}

bool ProbEstimatorParams::finite() const {
  for (const auto* l : all_layers(*this)) {
    if (!l->w.allFinite() || !l->b.allFinite()) return false;
  }
  return true;
}

bool operator==(const ProbEstimatorParams& a, const ProbEstimatorParams& b) {
  auto la = all_layers(a);
  auto lb = all_layers(b);
  if (la.size() != lb.size()) return false;
  for (std::size_t k = 0; k < la.size(); ++k) {
    if (la[k]->w.rows() != lb[k]->w.rows() || la[k]->w.cols() != lb[k]->w.cols()) return false;
    if (la[k]->w != lb[k]->w || la[k]->b != lb[k]->b) return false;
  }
  return true;
}

namespace {

void check_validity(const DenseVector& validity, Eigen::Index rows) {
  if (validity.size() != rows) throw NumericError("estimator: one validity score per candidate edge required");
}

// Layers after the first, given the first layer's pre-activation.
EstimatorPass forward_from(const ProbEstimatorParams& params, DenseMatrix first_pre, const DenseVector& validity) {
  EstimatorPass pass;
  pass.inputs.emplace_back();  // filled by the caller when materialized
  DenseMatrix x = relu(first_pre);
  pass.pre.push_back(std::move(first_pre));
  for (std::size_t k = 1; k < params.stage1.size(); ++k) {
    const auto& l = params.stage1[k];
    DenseMatrix pre = x * l.w;
    pre.rowwise() += l.b.transpose();
    pass.inputs.push_back(std::move(x));
    x = relu(pre);
    pass.pre.push_back(std::move(pre));
  }
  DenseMatrix joined(x.rows(), x.cols() + 1);
  joined.leftCols(x.cols()) = x;
  joined.col(x.cols()) = validity;
  x = std::move(joined);
  for (std::size_t k = 0; k < params.stage2.size(); ++k) {
    const auto& l = params.stage2[k];
    DenseMatrix pre = x * l.w;
    pre.rowwise() += l.b.transpose();
    pass.inputs.push_back(std::move(x));
    x = k + 1 < params.stage2.size() ? relu(pre) : pre;
    pass.pre.push_back(std::move(pre));
  }
  pass.logits = x.col(0);
  pass.probs = pass.logits.unaryExpr([](double z) { return clamp_prob(sigmoid(z)); });
  return pass;
}

// Gradients of every layer but the first weight matrix, which needs the
// (possibly factored) input. Returns d(objective)/d(first pre-activation).
DenseMatrix backward_to_first(const ProbEstimatorParams& params, const EstimatorPass& pass, const DenseVector& d_logits,
                              ProbEstimatorParams& g) {
  auto layers = all_layers(params);
  auto grads = all_layers(g);
  const auto n_layers = static_cast<int>(layers.size());
  const auto n_stage1 = static_cast<int>(params.stage1.size());
  DenseMatrix d_pre = d_logits;  // n x 1
  for (int k = n_layers - 1; k > 0; --k) {
    grads[k]->w.noalias() = pass.inputs[k].transpose() * d_pre;
    grads[k]->b = d_pre.colwise().sum().transpose();
    DenseMatrix d_in = d_pre * layers[k]->w.transpose();
    if (k == n_stage1) {
      // Drop the validity column: it is an input, not a parameter path.
      d_in.conservativeResize(Eigen::NoChange, d_in.cols() - 1);
    }
    d_pre = d_in.cwiseProduct(relu_mask(pass.pre[k - 1]));
  }
  grads[0]->b = d_pre.colwise().sum().transpose();
  return d_pre;
}

void check_factored(const ProbEstimatorParams& params, const DenseMatrix& user_emb, const DenseMatrix& item_emb) {
  if (user_emb.cols() + item_emb.cols() != params.pair_width()) {
    throw NumericError("estimator: pair width " + std::to_string(user_emb.cols() + item_emb.cols()) + ", expected " +
                       std::to_string(params.pair_width()));
  }
}

}  // namespace

EstimatorPass estimator_forward(const ProbEstimatorParams& params, const DenseMatrix& pairs,
                                const DenseVector& validity) {
  if (pairs.cols() != params.pair_width()) {
    throw NumericError("estimator: pair width " + std::to_string(pairs.cols()) + ", expected " +
                       std::to_string(params.pair_width()));
  }
  check_validity(validity, pairs.rows());
  const auto& l = params.stage1.front();
  DenseMatrix pre = pairs * l.w;
  pre.rowwise() += l.b.transpose();
  EstimatorPass pass = forward_from(params, std::move(pre), validity);
  pass.inputs.front() = pairs;
  return pass;
}

// [u || i] W = u W_top + i W_bottom: project each user and item once, then
// gather per candidate instead of materializing the pair rows.
EstimatorPass estimator_forward(const ProbEstimatorParams& params, const DenseMatrix& user_emb,
                                const DenseMatrix& item_emb, std::span<const Edge> candidates,
                                const DenseVector& validity) {
  check_factored(params, user_emb, item_emb);
  check_validity(validity, static_cast<Eigen::Index>(candidates.size()));
  const auto& l = params.stage1.front();
  const DenseMatrix pu = user_emb * l.w.topRows(user_emb.cols());
  const DenseMatrix pi = item_emb * l.w.bottomRows(item_emb.cols());
  DenseMatrix pre(static_cast<Eigen::Index>(candidates.size()), l.w.cols());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    pre.row(static_cast<Eigen::Index>(k)) = pu.row(candidates[k].user) + pi.row(candidates[k].item) + l.b.transpose();
  }
  return forward_from(params, std::move(pre), validity);
}

ProbEstimatorParams estimator_backward(const ProbEstimatorParams& params, const EstimatorPass& pass,
                                       const DenseVector& d_logits) {
  if (pass.inputs.front().size() == 0) throw NumericError("estimator_backward: pass has no materialized pair rows");
  ProbEstimatorParams g = ProbEstimatorParams::zeros_like(params);
  const DenseMatrix d_pre = backward_to_first(params, pass, d_logits, g);
  g.stage1.front().w.noalias() = pass.inputs.front().transpose() * d_pre;
  return g;
}

ProbEstimatorParams estimator_backward(const ProbEstimatorParams& params, const EstimatorPass& pass,
                                       const DenseVector& d_logits, const DenseMatrix& user_emb,
                                       const DenseMatrix& item_emb, std::span<const Edge> candidates) {
  check_factored(params, user_emb, item_emb);
  ProbEstimatorParams g = ProbEstimatorParams::zeros_like(params);
  const DenseMatrix d_pre = backward_to_first(params, pass, d_logits, g);
  // Scatter the row gradients onto users and items, then one small product each.
  DenseMatrix du = DenseMatrix::Zero(user_emb.rows(), d_pre.cols());
  DenseMatrix di = DenseMatrix::Zero(item_emb.rows(), d_pre.cols());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    du.row(candidates[k].user) += d_pre.row(static_cast<Eigen::Index>(k));
    di.row(candidates[k].item) += d_pre.row(static_cast<Eigen::Index>(k));
  }
  auto& w = g.stage1.front().w;
  w.topRows(user_emb.cols()).noalias() = user_emb.transpose() * du;
  w.bottomRows(item_emb.cols()).noalias() = item_emb.transpose() * di;
  return g;
}

DenseMatrix validity_scores(const GcfParams& valid_params, const InteractionGraph& local_graph,
                            const InteractionGraph& global_graph, std::span<const Index> batch_users,
                            std::span<const Index> items) {
  check_local_shapes(valid_params, local_graph, global_graph);
  const InteractionGraph g = validity_graph(local_graph, global_graph, batch_users);
  const Representation rep = validity_representation(valid_params, g);
  DenseMatrix out(static_cast<Eigen::Index>(batch_users.size()), static_cast<Eigen::Index>(items.size()));
  for (std::size_t b = 0; b < batch_users.size(); ++b) {
    const auto urow = rep.user.row(local_graph.num_users() + static_cast<Index>(b));
    for (std::size_t j = 0; j < items.size(); ++j) out(b, j) = urow.dot(rep.item.row(items[j]));
  }
  return out;
}

DenseVector candidate_validity(const GcfParams& valid_params, const InteractionGraph& local_graph,
                               const InteractionGraph& global_graph, std::span<const Index> batch_users,
                               std::span<const Edge> candidates) {
  check_local_shapes(valid_params, local_graph, global_graph);
  const InteractionGraph g = validity_graph(local_graph, global_graph, batch_users);
  const Representation rep = validity_representation(valid_params, g);
  DenseVector out(static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto pos = std::lower_bound(batch_users.begin(), batch_users.end(), candidates[k].user);
    if (pos == batch_users.end() || *pos != candidates[k].user) {
      throw NumericError("candidate_validity: candidate user outside the batch");
    }
    const auto b = static_cast<Index>(pos - batch_users.begin());
    out[static_cast<Eigen::Index>(k)] = rep.user.row(local_graph.num_users() + b).dot(rep.item.row(candidates[k].item));
  }
  return out;
}

DenseMatrix pair_features(const DenseMatrix& user_emb, const DenseMatrix& item_emb, std::span<const Edge> candidates) {
  const auto du = user_emb.cols();
  const auto di = item_emb.cols();
  DenseMatrix out(static_cast<Eigen::Index>(candidates.size()), du + di);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    out.row(r).head(du) = user_emb.row(candidates[k].user);
    out.row(r).tail(di) = item_emb.row(candidates[k].item);
  }
  return out;
}

DenseVector selection_probabilities(const ProbEstimatorParams& params, const DenseMatrix& enc_user_emb,
                                    const DenseMatrix& enc_item_emb, const DenseVector& validity,
                                    std::span<const Edge> candidates) {
  return estimator_forward(params, enc_user_emb, enc_item_emb, candidates, validity).probs;
}

std::vector<std::uint8_t> sample_mask(const DenseVector& probs, Rng& rng) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(probs.size()));
  for (Eigen::Index k = 0; k < probs.size(); ++k) mask[static_cast<std::size_t>(k)] = rng.bernoulli(probs[k]) ? 1 : 0;
  return mask;
}

namespace {

// Value and d(value)/d(logit) of the surrogate for a finished forward pass.
double surrogate_terms(const EstimatorPass& pass, std::span<const std::uint8_t> mask, std::size_t num_batch_users,
                       DenseVector& d_logits) {
  if (static_cast<Eigen::Index>(mask.size()) != pass.logits.size()) {
    throw NumericError("surrogate: mask length differs from candidate count");
  }
  if (num_batch_users == 0) throw NumericError("surrogate: empty user batch");
  const double inv_b = 1.0 / static_cast<double>(num_batch_users);
  double value = 0.0;
  d_logits.resize(pass.logits.size());
  for (Eigen::Index k = 0; k < pass.logits.size(); ++k) {
    const double p = pass.probs[k];
    const bool s = mask[static_cast<std::size_t>(k)] != 0;
    value += inv_b * (s ? std::log(p) : std::log(1.0 - p));
    const double raw = sigmoid(pass.logits[k]);
    const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
    d_logits[k] = clamped ? 0.0 : inv_b * ((s ? 1.0 : 0.0) - raw);
  }
  return value;
}

}  // namespace

Surrogate surrogate_log_likelihood(const ProbEstimatorParams& params, const DenseMatrix& pairs,
                                   const DenseVector& validity, std::span<const std::uint8_t> mask,
                                   std::size_t num_batch_users) {
  if (static_cast<Eigen::Index>(mask.size()) != pairs.rows()) {
    throw NumericError("surrogate: mask length differs from candidate count");
  }
  const EstimatorPass pass = estimator_forward(params, pairs, validity);
  Surrogate out;
  DenseVector d_logits;
  out.value = surrogate_terms(pass, mask, num_batch_users, d_logits);
  out.grads = estimator_backward(params, pass, d_logits);
  return out;
}

Surrogate surrogate_log_likelihood(const ProbEstimatorParams& params, const DenseMatrix& user_emb,
                                   const DenseMatrix& item_emb, std::span<const Edge> candidates,
                                   const DenseVector& validity, std::span<const std::uint8_t> mask,
                                   std::size_t num_batch_users, const EstimatorPass* pass) {
  std::optional<EstimatorPass> fresh;
  if (pass == nullptr) pass = &fresh.emplace(estimator_forward(params, user_emb, item_emb, candidates, validity));
  Surrogate out;
  DenseVector d_logits;
  out.value = surrogate_terms(*pass, mask, num_batch_users, d_logits);
  out.grads = estimator_backward(params, *pass, d_logits, user_emb, item_emb, candidates);
  return out;
}

ProbEstimatorParams policy_gradient_update(const ProbEstimatorParams& params, const SelectionBatch& batch, double r,
                                           double gamma) {
  if (r == 0.0 || gamma == 0.0 || batch.candidate_edges.empty()) return params;
  Surrogate s;
  if (batch.pairs.size() > 0) {
    s = surrogate_log_likelihood(params, batch.pairs, batch.validity, batch.mask, batch.batch_users.size());
  } else {
    // The sampling-time pass is only valid for the parameters that produced it.
    const EstimatorPass* pass = batch.pass && batch.drawn_with == params ? batch.pass.get() : nullptr;
    s = surrogate_log_likelihood(params, batch.enc_user, batch.enc_item, batch.candidate_edges, batch.validity,
                                 batch.mask, batch.batch_users.size(), pass);
  }
  ProbEstimatorParams out = params;
  out.axpy(gamma * r, s.grads);
  if (!out.finite()) throw NumericError("policy_gradient_update: non-finite parameters");
  return out;
}

RewardResult reward(const Representation& repr, const InteractionGraph& train_graph,
                    std::span<const Edge> validation_edges, std::size_t k, double baseline, double decay) {
  if (validation_edges.empty()) throw EvaluationError("reward: empty validation split");
  const EvalResult eval = evaluate(repr, train_graph, validation_edges, k);
  RewardResult out;
  out.raw = eval.recall;
  out.r = out.raw - baseline;
  out.new_baseline = decay * baseline + (1.0 - decay) * out.raw;
  return out;
}

TrainOptions GdveConfig::train_options(LossSet losses) const {
  TrainOptions o;
  o.losses = losses;
  o.lr = eta;
  o.lambda = lambda;
  o.tau = tau;
  o.struc_weight = struc_weight;
  o.even_layers = even_layers;
  o.batch_size = train_batch;
  o.optimizer = optimizer;
  return o;
}

namespace {

GcfParams pretrain(const InteractionGraph& graph, const GdveConfig& cfg, Rng& rng, const char* what) {
  if (graph.empty()) throw NumericError(std::string(what) + ": empty training graph");
  Rng init = child(rng, Stream::kInit);
  GcfParams p = GcfParams::init(graph.num_users(), graph.num_items(), cfg.dim, cfg.num_layers, init);
  const NormalizedAdjacency adj = normalize(graph);
  const TrainOptions opts = cfg.train_options(LossSet::kBpr);
  OptimizerState state;
  for (int e = 0; e < cfg.pretrain_epochs; ++e) train_epoch(p, graph, adj, opts, rng, &state);
  return p;
}

}  // namespace

GcfParams pretrain_encoder(const InteractionGraph& global_graph, const GdveConfig& cfg, Rng& rng) {
  return pretrain(global_graph, cfg, rng, "pretrain_encoder");
}

GcfParams pretrain_valid_predictor(const InteractionGraph& local_graph, const GdveConfig& cfg, Rng& rng) {
  return pretrain(local_graph, cfg, rng, "pretrain_valid_predictor");
}

void refresh_encoder_cache(GdveState& state, const InteractionGraph& global_graph) {
  const LayerEmbeddings layers = propagate(state.encoder, normalize(global_graph), state.encoder.num_layers());
  state.enc_user = layers.user.back();
  state.enc_item = layers.item.back();
}

GdveState make_gdve_state(GcfParams encoder, GcfParams valid, const InteractionGraph& global_graph,
                          const InteractionGraph& local_graph, const GdveConfig& cfg, Rng rng) {
  if (encoder.num_users() != global_graph.num_users() || encoder.num_items() != global_graph.num_items()) {
    throw NumericError("make_gdve_state: encoder does not match the global graph");
  }
  if (valid.num_users() != local_graph.num_users() || valid.num_items() != local_graph.num_items()) {
    throw NumericError("make_gdve_state: valid predictor does not match the local graph");
  }
  GdveState s;
  s.encoder = std::move(encoder);
  s.valid = std::move(valid);
  Rng init = child(rng, Stream::kInit);
  s.task = GcfParams::init(local_graph.num_users() + global_graph.num_users(), local_graph.num_items(), cfg.dim,
                           cfg.num_layers, init);
  s.prob = ProbEstimatorParams::init(2 * s.encoder.dim(), init);
  s.rng = std::move(rng);
  refresh_encoder_cache(s, global_graph);
  return s;
}

EpochStats train_task_predictor(GcfParams& task_params, std::span<const Edge> selected_edges,
                                const InteractionGraph& local_graph, Index num_global_users, const GdveConfig& cfg,
                                Rng& rng, OptimizerState* optimizer) {
  const InteractionGraph merged = merge(local_graph, selected_edges, num_global_users);
  return train_epoch(task_params, merged, normalize(merged), cfg.train_options(LossSet::kBprStruc), rng, optimizer);
}

SelectionBatch draw_selection(const GdveState& state, const InteractionGraph& global_graph,
                              const InteractionGraph& local_graph, std::span<const Index> batch_users, Rng& rng) {
  SelectionBatch batch;
  batch.batch_users.assign(batch_users.begin(), batch_users.end());
  std::sort(batch.batch_users.begin(), batch.batch_users.end());
  for (Index u : batch.batch_users) {
    for (Index i : global_graph.items_of(u)) batch.candidate_edges.push_back({u, i});
  }
  batch.validity = candidate_validity(state.valid, local_graph, global_graph, batch.batch_users, batch.candidate_edges);
  batch.enc_user = state.enc_user;
  batch.enc_item = state.enc_item;
  auto pass = std::make_shared<EstimatorPass>(
      estimator_forward(state.prob, batch.enc_user, batch.enc_item, batch.candidate_edges, batch.validity));
  batch.probs = pass->probs;
  batch.pass = std::move(pass);
  batch.drawn_with = state.prob;
  batch.mask = sample_mask(batch.probs, rng);
  return batch;
}

GdveStep gdve_step(GdveState& state, const InteractionGraph& global_graph, const InteractionGraph& local_graph,
                   std::span<const Edge> validation_edges, const GdveConfig& cfg) {
  const auto users = sample_users(global_graph.num_users(), cfg.user_batch, state.rng);
  const SelectionBatch batch = draw_selection(state, global_graph, local_graph, users, state.rng);
  std::vector<Edge> selected;
  for (std::size_t k = 0; k < batch.mask.size(); ++k) {
    if (batch.mask[k]) selected.push_back(batch.candidate_edges[k]);
  }
  const InteractionGraph merged = merge(local_graph, selected, global_graph.num_users());
  const NormalizedAdjacency adj = normalize(merged);
  train_epoch(state.task, merged, adj, cfg.train_options(LossSet::kBprStruc), state.rng, &state.task_optimizer);

  const Representation rep = final_representation(propagate(state.task, adj, state.task.num_layers()));
  const RewardResult rr = reward(rep, merged, validation_edges, cfg.reward_k, state.ema_baseline, cfg.ema_decay);
  state.prob = policy_gradient_update(state.prob, batch, rr.r, cfg.gamma);
  state.ema_baseline = rr.new_baseline;
  state.raw_rewards.push_back(rr.raw);
  ++state.batches_run;
  return {rr.raw, rr.r, selected.size(), batch.candidate_edges.size()};
}

void run_gdve_training(GdveState& state, const InteractionGraph& global_graph, const InteractionGraph& local_graph,
                       std::span<const Edge> validation_edges, const GdveConfig& cfg) {
  if (validation_edges.empty()) throw EvaluationError("run_gdve_training: client has no validation edges");
  std::vector<double> ema;
  for (std::size_t t = 0; t < cfg.max_batches; ++t) {
    gdve_step(state, global_graph, local_graph, validation_edges, cfg);
    ema.push_back(state.ema_baseline);
    if (cfg.plateau_window > 0 && ema.size() > cfg.plateau_window) {
      const double gain = ema.back() - ema[ema.size() - 1 - cfg.plateau_window];
      if (gain < cfg.plateau_tol) break;
    }
  }
}

Augmentation select_augmentation(const GdveState& state, const InteractionGraph& global_graph,
                                 const InteractionGraph& local_graph, std::size_t user_batch, Rng& rng) {
  Augmentation out;
  if (user_batch == 0) throw NumericError("select_augmentation: user batch must be positive");
  std::vector<Index> users;
  for (Index start = 0; start < global_graph.num_users(); start += static_cast<Index>(user_batch)) {
    users.clear();
    const Index stop = std::min<Index>(global_graph.num_users(), start + static_cast<Index>(user_batch));
    for (Index u = start; u < stop; ++u) users.push_back(u);
    const SelectionBatch b = draw_selection(state, global_graph, local_graph, users, rng);
    for (std::size_t k = 0; k < b.mask.size(); ++k) {
      if (b.mask[k]) out.edges.push_back(b.candidate_edges[k]);
    }
  }
  out.selected_ratio = global_graph.num_edges() == 0
                           ? 0.0
                           : static_cast<double>(out.edges.size()) / static_cast<double>(global_graph.num_edges());
  return out;
}

void write_gdve_checkpoint(std::ostream& os, const GdveState& state) {
  os << "fedgdve_gdve_checkpoint 1\n";
  os << "ema_baseline " << hex_double(state.ema_baseline) << '\n';
  os << "batches_run " << state.batches_run << '\n';
  os << "raw_rewards " << state.raw_rewards.size();
  for (double r : state.raw_rewards) os << ' ' << hex_double(r);
  os << '\n';
  os << "rng " << state.rng.serialize() << '\n';
  write_params(os, state.encoder);
  write_params(os, state.valid);
  write_params(os, state.task);
  os << "prob_estimator " << state.prob.stage1.size() << ' ' << state.prob.stage2.size() << '\n';
  for (const auto& l : state.prob.stage1) {
    write_matrix(os, "w", l.w);
    write_vector(os, "b", l.b);
  }
  for (const auto& l : state.prob.stage2) {
    write_matrix(os, "w", l.w);
    write_vector(os, "b", l.b);
  }
  os << "task_optimizer " << state.task_optimizer.steps << '\n';
  if (state.task_optimizer.steps > 0) {
    write_params(os, state.task_optimizer.m);
    write_params(os, state.task_optimizer.v);
  }
}

GdveState read_gdve_checkpoint(std::istream& is) {
  auto expect = [&](const std::string& tag) {
    std::string t;
    if (!(is >> t) || t != tag) throw NumericError("gdve checkpoint: expected '" + tag + "'");
  };
  int version = 0;
  expect("fedgdve_gdve_checkpoint");
  if (!(is >> version) || version != 1) throw NumericError("gdve checkpoint: unsupported version");
  GdveState s;
  std::string tok;
  expect("ema_baseline");
  is >> tok;
  s.ema_baseline = parse_double(tok);
  expect("batches_run");
  is >> s.batches_run;
  expect("raw_rewards");
  std::size_t n = 0;
  is >> n;
  for (std::size_t k = 0; k < n; ++k) {
    is >> tok;
    s.raw_rewards.push_back(parse_double(tok));
  }
  expect("rng");
  std::string rng_line;
  std::getline(is, rng_line);
  s.rng = Rng::deserialize(rng_line);
  s.encoder = read_params(is);
  s.valid = read_params(is);
  s.task = read_params(is);
  expect("prob_estimator");
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  is >> n1 >> n2;
  for (std::size_t k = 0; k < n1 + n2; ++k) {
    DenseLayer l{read_matrix(is, "w"), read_vector(is, "b")};
    (k < n1 ? s.prob.stage1 : s.prob.stage2).push_back(std::move(l));
  }
  expect("task_optimizer");
  is >> s.task_optimizer.steps;
  if (s.task_optimizer.steps > 0) {
    s.task_optimizer.m = read_params(is);
    s.task_optimizer.v = read_params(is);
  }
  if (!is) throw NumericError("gdve checkpoint: truncated");
  return s;
}

}  // namespace fedgdve
