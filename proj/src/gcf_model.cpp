#include "fedgdve/gcf_model.hpp"
#include "fedgdve/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace fedgdve {

namespace {

void xavier(DenseMatrix& m, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    m.data()[k] = (2.0 * rng.uniform() - 1.0) * bound;
  }
}

template <class F>
void for_each_block(GcfParams& p, F&& f) {
  f(p.user_emb.data(), p.user_emb.size());
  f(p.item_emb.data(), p.item_emb.size());
  for (auto& l : p.layers) {
    f(l.w1.data(), l.w1.size());
    f(l.w2.data(), l.w2.size());
    f(l.bias.data(), l.bias.size());
  }
}

template <class F>
void for_each_block(const GcfParams& p, F&& f) {
  for_each_block(const_cast<GcfParams&>(p), [&](double* d, Eigen::Index n) { f(static_cast<const double*>(d), n); });
}

DenseMatrix leaky(const DenseMatrix& pre) {
  return pre.unaryExpr([](double x) { return leaky_relu(x, kLeakySlope); });
}

DenseMatrix leaky_grad(const DenseMatrix& pre) {
  return pre.unaryExpr([](double x) { return leaky_relu_grad(x, kLeakySlope); });
}

LayerEmbeddings zero_layer_grads(const LayerEmbeddings& layers) {
  LayerEmbeddings g;
  for (const auto& m : layers.user) g.user.push_back(DenseMatrix::Zero(m.rows(), m.cols()));
  for (const auto& m : layers.item) g.item.push_back(DenseMatrix::Zero(m.rows(), m.cols()));
  return g;
}

void add_layer_grads(LayerEmbeddings& acc, const LayerEmbeddings& g, double scale) {
  for (std::size_t l = 0; l < acc.user.size(); ++l) {
    acc.user[l] += scale * g.user[l];
    acc.item[l] += scale * g.item[l];
  }
}

/// Sum of -ln sigmoid(y_um - y_un) and its gradient w.r.t. every layer.
double bpr_layer_grads(const LayerEmbeddings& layers, std::span<const BprTriple> triples, LayerEmbeddings& grads) {
  const int L = layers.num_layers();
  double loss = 0.0;
  for (const auto& t : triples) {
    double diff = 0.0;
    for (int l = 0; l <= L; ++l) {
      diff += layers.user[l].row(t.user).dot(layers.item[l].row(t.pos) - layers.item[l].row(t.neg));
    }
    loss -= log_sigmoid(diff);
    const double c = sigmoid(diff) - 1.0;  // d(-ln sigmoid(x))/dx
    for (int l = 0; l <= L; ++l) {
      grads.user[l].row(t.user) += c * (layers.item[l].row(t.pos) - layers.item[l].row(t.neg));
      grads.item[l].row(t.pos) += c * layers.user[l].row(t.user);
      grads.item[l].row(t.neg) -= c * layers.user[l].row(t.user);
    }
  }
  return loss;
}

void add_regularization(const GcfParams& params, double lambda, GcfParams& grads) {
  if (lambda != 0.0) grads.axpy(2.0 * lambda, params);
}

}  // namespace

GcfParams GcfParams::init(Index num_users, Index num_items, int dim, int num_layers, Rng& rng) {
  GcfParams p;
  p.user_emb.resize(num_users, dim);
  p.item_emb.resize(num_items, dim);
  xavier(p.user_emb, rng);
  xavier(p.item_emb, rng);
  for (int l = 0; l < num_layers; ++l) {
    LayerWeights lw{DenseMatrix(dim, dim), DenseMatrix(dim, dim), DenseVector::Zero(dim)};
    xavier(lw.w1, rng);
    xavier(lw.w2, rng);
    p.layers.push_back(std::move(lw));
  }
  return p;
}

GcfParams GcfParams::zeros_like(const GcfParams& p) {
  GcfParams z;
  z.user_emb = DenseMatrix::Zero(p.user_emb.rows(), p.user_emb.cols());
  z.item_emb = DenseMatrix::Zero(p.item_emb.rows(), p.item_emb.cols());
  for (const auto& l : p.layers) {
    z.layers.push_back({DenseMatrix::Zero(l.w1.rows(), l.w1.cols()), DenseMatrix::Zero(l.w2.rows(), l.w2.cols()),
                        DenseVector::Zero(l.bias.size())});
  }
  return z;
}

std::size_t GcfParams::size() const {
  std::size_t n = 0;
  for_each_block(*this, [&](const double*, Eigen::Index k) { n += static_cast<std::size_t>(k); });
  return n;
}

std::vector<double> GcfParams::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for_each_block(*this, [&](const double* d, Eigen::Index k) { out.insert(out.end(), d, d + k); });
  return out;
}

void GcfParams::unflatten(std::span<const double> flat) {
  if (flat.size() != size()) {
    throw NumericError("GcfParams::unflatten: size mismatch");
  }
  std::size_t pos = 0;
  for_each_block(*this, [&](double* d, Eigen::Index k) {
    std::copy_n(flat.data() + pos, k, d);
    pos += static_cast<std::size_t>(k);
  });
}

double GcfParams::squared_norm() const {
  double s = 0.0;
  for_each_block(*this, [&](const double* d, Eigen::Index k) {
    for (Eigen::Index i = 0; i < k; ++i) s += d[i] * d[i];
  });
  return s;
}

bool GcfParams::finite() const {
  bool ok = true;
  for_each_block(*this, [&](const double* d, Eigen::Index k) {
    for (Eigen::Index i = 0; i < k && ok; ++i) ok = std::isfinite(d[i]);
  });
  return ok;
}

void GcfParams::axpy(double alpha, const GcfParams& other) {
  user_emb += alpha * other.user_emb;
  item_emb += alpha * other.item_emb;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].w1 += alpha * other.layers[l].w1;
    layers[l].w2 += alpha * other.layers[l].w2;
    layers[l].bias += alpha * other.layers[l].bias;
  }
}

bool GcfParams::same_shape(const GcfParams& o) const {
  if (user_emb.rows() != o.user_emb.rows() || user_emb.cols() != o.user_emb.cols() ||
      item_emb.rows() != o.item_emb.rows() || item_emb.cols() != o.item_emb.cols() || layers.size() != o.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].w1.rows() != o.layers[l].w1.rows() || layers[l].w1.cols() != o.layers[l].w1.cols() ||
        layers[l].w2.rows() != o.layers[l].w2.rows() || layers[l].bias.size() != o.layers[l].bias.size()) {
      return false;
    }
  }
  return true;
}

bool operator==(const GcfParams& a, const GcfParams& b) {
  if (!a.same_shape(b)) return false;
  if (a.user_emb != b.user_emb || a.item_emb != b.item_emb) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].w1 != b.layers[l].w1 || a.layers[l].w2 != b.layers[l].w2 || a.layers[l].bias != b.layers[l].bias) {
      return false;
    }
  }
  return true;
}

PropagationTrace propagate_traced(const GcfParams& params, const NormalizedAdjacency& adj) {
  if (adj.user_item.rows() != params.user_emb.rows() || adj.user_item.cols() != params.item_emb.rows()) {
    throw NumericError("propagate: adjacency " + std::to_string(adj.user_item.rows()) + "x" +
                       std::to_string(adj.user_item.cols()) + " does not match parameters " +
                       std::to_string(params.user_emb.rows()) + "x" + std::to_string(params.item_emb.rows()));
  }
  PropagationTrace t;
  t.layers.user.push_back(params.user_emb);
  t.layers.item.push_back(params.item_emb);
  for (const auto& lw : params.layers) {
    const DenseMatrix& u = t.layers.user.back();
    const DenseMatrix& i = t.layers.item.back();
    DenseMatrix au = adj.user_item * i;
    DenseMatrix ai = adj.item_user * u;
    DenseMatrix pre_u = (u + au) * lw.w1 + u.cwiseProduct(au) * lw.w2;
    pre_u.rowwise() += lw.bias.transpose();
    DenseMatrix pre_i = (i + ai) * lw.w1 + i.cwiseProduct(ai) * lw.w2;
    pre_i.rowwise() += lw.bias.transpose();
    DenseMatrix next_u = leaky(pre_u);
    DenseMatrix next_i = leaky(pre_i);
    t.user_agg.push_back(std::move(au));
    t.item_agg.push_back(std::move(ai));
    t.user_pre.push_back(std::move(pre_u));
    t.item_pre.push_back(std::move(pre_i));
    t.layers.user.push_back(std::move(next_u));
    t.layers.item.push_back(std::move(next_i));
  }
  return t;
}

LayerEmbeddings propagate(const GcfParams& params, const NormalizedAdjacency& adj, int num_layers) {
  if (num_layers < 0) {
    throw NumericError("propagate: negative layer count");
  }
  if (num_layers > params.num_layers()) {
    throw NumericError("propagate: " + std::to_string(num_layers) + " layers requested, parameters hold " +
                       std::to_string(params.num_layers()));
  }
  GcfParams view;
  if (num_layers == params.num_layers()) {
    return propagate_traced(params, adj).layers;
  }
  view.user_emb = params.user_emb;
  view.item_emb = params.item_emb;
  view.layers.assign(params.layers.begin(), params.layers.begin() + num_layers);
  return propagate_traced(view, adj).layers;
}

void backpropagate(const GcfParams& params, const NormalizedAdjacency& adj, const PropagationTrace& trace,
                   LayerEmbeddings g, GcfParams& grads) {
  for (int l = params.num_layers(); l >= 1; --l) {
    const auto& lw = params.layers[l - 1];
    auto& gw = grads.layers[l - 1];
    const DenseMatrix& u = trace.layers.user[l - 1];
    const DenseMatrix& i = trace.layers.item[l - 1];
    const DenseMatrix& au = trace.user_agg[l - 1];
    const DenseMatrix& ai = trace.item_agg[l - 1];

    DenseMatrix du = g.user[l].cwiseProduct(leaky_grad(trace.user_pre[l - 1]));
    DenseMatrix di = g.item[l].cwiseProduct(leaky_grad(trace.item_pre[l - 1]));

    gw.w1.noalias() += (u + au).transpose() * du;
    gw.w1.noalias() += (i + ai).transpose() * di;
    gw.w2.noalias() += u.cwiseProduct(au).transpose() * du;
    gw.w2.noalias() += i.cwiseProduct(ai).transpose() * di;
    gw.bias += du.colwise().sum().transpose() + di.colwise().sum().transpose();

    DenseMatrix tu1 = du * lw.w1.transpose();
    DenseMatrix tu2 = du * lw.w2.transpose();
    DenseMatrix ti1 = di * lw.w1.transpose();
    DenseMatrix ti2 = di * lw.w2.transpose();

    DenseMatrix d_au = tu1 + tu2.cwiseProduct(u);
    DenseMatrix d_ai = ti1 + ti2.cwiseProduct(i);
    g.user[l - 1] += tu1 + tu2.cwiseProduct(au);
    g.item[l - 1] += ti1 + ti2.cwiseProduct(ai);
    g.item[l - 1] += adj.item_user * d_au;
    g.user[l - 1] += adj.user_item * d_ai;
  }
  grads.user_emb += g.user[0];
  grads.item_emb += g.item[0];
}

Representation final_representation(const LayerEmbeddings& layers) {
  Representation r;
  if (layers.user.empty()) return r;
  const auto d = layers.user[0].cols();
  const auto n = static_cast<Eigen::Index>(layers.user.size());
  r.user.resize(layers.user[0].rows(), d * n);
  r.item.resize(layers.item[0].rows(), d * n);
  for (Eigen::Index l = 0; l < n; ++l) {
    r.user.middleCols(l * d, d) = layers.user[l];
    r.item.middleCols(l * d, d) = layers.item[l];
  }
  return r;
}

double score(std::span<const double> user_row, std::span<const double> item_row) {
  if (user_row.size() != item_row.size()) {
    throw NumericError("score: width mismatch");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < user_row.size(); ++k) s += user_row[k] * item_row[k];
  return s;
}

LossAndGrad bpr_loss_and_grad(const GcfParams& params, const NormalizedAdjacency& adj, const PropagationTrace& trace,
                              std::span<const BprTriple> triples, double lambda) {
  if (triples.empty()) {
    throw NumericError("bpr_loss_and_grad: empty batch");
  }
  LossAndGrad out;
  out.grads = GcfParams::zeros_like(params);
  LayerEmbeddings g = zero_layer_grads(trace.layers);
  out.loss = bpr_layer_grads(trace.layers, triples, g);
  backpropagate(params, adj, trace, std::move(g), out.grads);
  out.loss += lambda * params.squared_norm();
  add_regularization(params, lambda, out.grads);
  return out;
}

StructureLoss structure_loss_and_grad(const LayerEmbeddings& layers, std::span<const Index> batch_users, double tau,
                                      std::span<const int> even_layers) {
  if (batch_users.empty()) {
    throw NumericError("structure_loss: empty user batch");
  }
  if (even_layers.empty()) {
    throw NumericError("structure_loss: no contrast layers given");
  }
  if (!(tau > 0.0)) {
    throw NumericError("structure_loss: temperature must be positive");
  }
  for (int l : even_layers) {
    if (l < 1 || l > layers.num_layers()) {
      throw NumericError("structure_loss: contrast layer " + std::to_string(l) + " outside [1, " +
                         std::to_string(layers.num_layers()) + "]");
    }
  }
  const auto b = static_cast<Eigen::Index>(batch_users.size());
  const auto d = layers.user[0].cols();
  const std::size_t ne = even_layers.size();

  DenseMatrix e0(b, d);
  std::vector<DenseMatrix> el(ne, DenseMatrix(b, d));
  for (Eigen::Index r = 0; r < b; ++r) {
    e0.row(r) = layers.user[0].row(batch_users[r]);
    for (std::size_t k = 0; k < ne; ++k) el[k].row(r) = layers.user[even_layers[k]].row(batch_users[r]);
  }
  // logits[k](i, j) = <e0_i, e^l_j> / tau
  std::vector<DenseMatrix> logits(ne);
  for (std::size_t k = 0; k < ne; ++k) logits[k] = (e0 * el[k].transpose()) / tau;

  StructureLoss out;
  out.grads = zero_layer_grads(layers);
  std::vector<DenseMatrix> coef(ne, DenseMatrix::Zero(b, b));
  for (Eigen::Index i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ne; ++k) mx = std::max(mx, logits[k].row(i).maxCoeff());
    double den = 0.0;
    double num = 0.0;
    for (std::size_t k = 0; k < ne; ++k) {
      den += (logits[k].row(i).array() - mx).exp().sum();
      num += std::exp(logits[k](i, i) - mx);
    }
    out.loss += std::log(den) - std::log(num);
    for (std::size_t k = 0; k < ne; ++k) {
      coef[k].row(i) = (logits[k].row(i).array() - mx).exp() / den;
      coef[k](i, i) -= std::exp(logits[k](i, i) - mx) / num;
    }
  }
  DenseMatrix g0 = DenseMatrix::Zero(b, d);
  for (std::size_t k = 0; k < ne; ++k) {
    g0 += coef[k] * el[k] / tau;
    DenseMatrix gl = coef[k].transpose() * e0 / tau;
    for (Eigen::Index r = 0; r < b; ++r) out.grads.user[even_layers[k]].row(batch_users[r]) += gl.row(r);
  }
  for (Eigen::Index r = 0; r < b; ++r) out.grads.user[0].row(batch_users[r]) += g0.row(r);
  return out;
}

std::vector<int> default_even_layers(int num_layers) {
  std::vector<int> out;
  for (int l = 2; l <= num_layers; l += 2) out.push_back(l);
  return out;
}

void sgd_step(GcfParams& params, const GcfParams& grads, double lr) {
  if (!params.same_shape(grads)) {
    throw NumericError("sgd_step: gradient shape mismatch");
  }
  if (!grads.finite()) {
    throw NumericError("sgd_step: non-finite gradient (training diverged)");
  }
  params.axpy(-lr, grads);
}

EpochStats train_epoch(GcfParams& params, const InteractionGraph& graph, const TrainOptions& opts, Rng& rng) {
  return train_epoch(params, graph, normalize(graph), opts, rng);
}

void adam_step(GcfParams& params, const GcfParams& grads, double lr, OptimizerState& state) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (!params.same_shape(grads)) {
    throw NumericError("adam_step: gradient shape mismatch");
  }
  if (!grads.finite()) {
    throw NumericError("adam_step: non-finite gradient (training diverged)");
  }
  if (state.steps == 0 || !state.m.same_shape(params)) {
    state.m = GcfParams::zeros_like(params);
    state.v = GcfParams::zeros_like(params);
    state.steps = 0;
  }
  ++state.steps;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.steps));
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
  };
  update(params.user_emb, state.m.user_emb, state.v.user_emb, grads.user_emb);
  update(params.item_emb, state.m.item_emb, state.v.item_emb, grads.item_emb);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].w1, state.m.layers[l].w1, state.v.layers[l].w1, grads.layers[l].w1);
    update(params.layers[l].w2, state.m.layers[l].w2, state.v.layers[l].w2, grads.layers[l].w2);
    update(params.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias, grads.layers[l].bias);
  }
}

EpochStats train_epoch(GcfParams& params, const InteractionGraph& graph, const NormalizedAdjacency& adj,
                       const TrainOptions& opts, Rng& rng) {
  return train_epoch(params, graph, adj, opts, rng, nullptr);
}

EpochStats train_epoch(GcfParams& params, const InteractionGraph& graph, const NormalizedAdjacency& adj,
                       const TrainOptions& opts, Rng& rng, OptimizerState* state) {
  OptimizerState local_state;
  if (state == nullptr) state = &local_state;
  if (graph.empty()) {
    throw NumericError("train_epoch: empty training graph");
  }
  if (params.num_users() != graph.num_users() || params.num_items() != graph.num_items()) {
    throw NumericError("train_epoch: parameters do not match the graph shape");
  }
  if (opts.batch_size == 0) {
    throw NumericError("train_epoch: batch size must be positive");
  }
  EpochStats stats;
  std::vector<Edge> order = graph.edges();
  rng.shuffle(order.begin(), order.end());
  const auto num_items = static_cast<std::uint64_t>(graph.num_items());

  std::vector<BprTriple> triples;
  std::vector<Index> users;
  std::vector<char> in_batch(static_cast<std::size_t>(graph.num_users()), 0);
  double struc_sum = 0.0;
  std::size_t struc_users = 0;

  for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
    const std::size_t stop = std::min(order.size(), start + opts.batch_size);
    triples.clear();
    users.clear();
    for (std::size_t k = start; k < stop; ++k) {
      const Edge& e = order[k];
      if (graph.user_degree(e.user) >= static_cast<std::size_t>(num_items)) {
        ++stats.skipped;
        continue;
      }
      Index neg;
      do {
        neg = static_cast<Index>(rng.uniform_index(num_items));
      } while (graph.has_edge(e.user, neg));
      triples.push_back({e.user, e.item, neg});
      if (!in_batch[e.user]) {
        in_batch[e.user] = 1;
        users.push_back(e.user);
      }
    }
    for (Index u : users) in_batch[u] = 0;
    if (triples.empty()) continue;

    const PropagationTrace trace = propagate_traced(params, adj);
    LayerEmbeddings g = zero_layer_grads(trace.layers);
    const double bpr = bpr_layer_grads(trace.layers, triples, g);
    const double scale = 1.0 / static_cast<double>(users.size());
    stats.bpr_loss += bpr;
    stats.triples += triples.size();
    if (opts.losses == LossSet::kBprStruc && opts.struc_weight != 0.0) {
      std::sort(users.begin(), users.end());
      StructureLoss s = structure_loss_and_grad(trace.layers, users, opts.tau, opts.even_layers);
      add_layer_grads(g, s.grads, opts.struc_weight);
      struc_sum += s.loss;
      struc_users += users.size();
    }
    for (auto& m : g.user) m *= scale;
    for (auto& m : g.item) m *= scale;
    GcfParams grads = GcfParams::zeros_like(params);
    backpropagate(params, adj, trace, std::move(g), grads);
    add_regularization(params, opts.lambda * scale, grads);
    if (opts.optimizer == Optimizer::kAdam) {
      adam_step(params, grads, opts.lr, *state);
    } else {
      sgd_step(params, grads, opts.lr);
    }
    ++stats.batches;
  }
  if (stats.triples > 0) stats.bpr_loss /= static_cast<double>(stats.triples);
  if (struc_users > 0) stats.struc_loss = struc_sum / static_cast<double>(struc_users);
  return stats;
}

void write_params(std::ostream& os, const GcfParams& p) {
  os << "gcf_params " << p.num_layers() << '\n';
  write_matrix(os, "user_emb", p.user_emb);
  write_matrix(os, "item_emb", p.item_emb);
  for (const auto& l : p.layers) {
    write_matrix(os, "w1", l.w1);
    write_matrix(os, "w2", l.w2);
    write_vector(os, "bias", l.bias);
  }
}

GcfParams read_params(std::istream& is) {
  std::string tag;
  int nl = 0;
  if (!(is >> tag >> nl) || tag != "gcf_params" || nl < 0) {
    throw NumericError("read_params: missing gcf_params header");
  }
  GcfParams p;
  p.user_emb = read_matrix(is, "user_emb");
  p.item_emb = read_matrix(is, "item_emb");
  for (int l = 0; l < nl; ++l) {
    LayerWeights lw;
    lw.w1 = read_matrix(is, "w1");
    lw.w2 = read_matrix(is, "w2");
    lw.bias = read_vector(is, "bias");
    p.layers.push_back(std::move(lw));
  }
  return p;
}

}  // namespace fedgdve
