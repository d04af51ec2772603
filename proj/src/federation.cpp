#include "fedgdve/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include "fedgdve/evaluation.hpp"

namespace fedgdve {

namespace {

// Stream ids below Stream::kClientBase are per-purpose; each client owns
// kClientBase + k and derives its purposes from that.
constexpr std::uint64_t kSharedEncoderStream = 900;
constexpr std::uint64_t kGdveStream = 77;
constexpr std::uint64_t kPretrainStream = 78;
constexpr std::uint64_t kModelStream = 79;

template <class F>
void for_each_block(SharedParams& p, F&& f) {
  f(p.item_emb.data(), p.item_emb.size());
  for (auto& l : p.layers) {
    f(l.w1.data(), l.w1.size());
    f(l.w2.data(), l.w2.size());
    f(l.bias.data(), l.bias.size());
  }
}

// Pairwise sum of a[k] * flat[k][j] over k in [lo, hi).
double pairwise(const std::vector<std::vector<double>>& flat, const std::vector<double>& a, std::size_t j,
                std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return a[lo] * flat[lo][j];
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise(flat, a, j, lo, mid) + pairwise(flat, a, j, mid, hi);
}

double pairwise_sum(std::span<const double> v) {
  if (v.empty()) return 0.0;
  if (v.size() == 1) return v[0];
  const std::size_t mid = v.size() / 2;
  return pairwise_sum(v.subspan(0, mid)) + pairwise_sum(v.subspan(mid));
}

std::string client_tag(std::size_t round, std::size_t client) {
  return "round " + std::to_string(round) + " client " + std::to_string(client) + ": ";
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kFedNgcf:
      return "fedngcf";
    case Method::kFedGdve:
      return "fedgdve";
    case Method::kFedGdveNoSl:
      return "fedgdve_no_sl";
    case Method::kFedGdveNoGdve:
      return "fedgdve_no_gdve";
    case Method::kCentralizedNgcf:
      return "centralized_ngcf";
  }
  return "unknown";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::kFedNgcf, Method::kFedGdve, Method::kFedGdveNoSl, Method::kFedGdveNoGdve,
                   Method::kCentralizedNgcf}) {
    if (to_string(m) == text) return m;
  }
  throw FederationError("unknown method '" + text + "'");
}

bool uses_gdve(Method m) { return m == Method::kFedGdve || m == Method::kFedGdveNoSl; }

LossSet losses_for(Method m) {
  return m == Method::kFedGdve || m == Method::kFedGdveNoGdve ? LossSet::kBprStruc : LossSet::kBpr;
}

std::size_t SharedParams::size() const {
  std::size_t n = static_cast<std::size_t>(item_emb.size());
  for (const auto& l : layers) n += static_cast<std::size_t>(l.w1.size() + l.w2.size() + l.bias.size());
  return n;
}

std::vector<double> SharedParams::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  auto& self = const_cast<SharedParams&>(*this);
  for_each_block(self, [&](double* d, Eigen::Index n) { out.insert(out.end(), d, d + n); });
  return out;
}

void SharedParams::unflatten(std::span<const double> flat) {
  if (flat.size() != size()) throw FederationError("SharedParams::unflatten: size mismatch");
  std::size_t pos = 0;
  for_each_block(*this, [&](double* d, Eigen::Index n) {
    std::copy_n(flat.data() + pos, n, d);
    pos += static_cast<std::size_t>(n);
  });
}

bool SharedParams::same_shape(const SharedParams& other) const {
  if (item_emb.rows() != other.item_emb.rows() || item_emb.cols() != other.item_emb.cols()) return false;
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].w1.rows() != other.layers[l].w1.rows() || layers[l].w1.cols() != other.layers[l].w1.cols() ||
        layers[l].w2.rows() != other.layers[l].w2.rows() || layers[l].w2.cols() != other.layers[l].w2.cols() ||
        layers[l].bias.size() != other.layers[l].bias.size()) {
      return false;
    }
  }
  return true;
}

bool SharedParams::finite() const {
  if (!item_emb.allFinite()) return false;
  for (const auto& l : layers) {
    if (!l.w1.allFinite() || !l.w2.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

bool operator==(const SharedParams& a, const SharedParams& b) {
  return a.same_shape(b) && a.flatten() == b.flatten();
}

SharedParams extract_shared(const GcfParams& params) { return {params.item_emb, params.layers}; }

void install_shared(GcfParams& params, const SharedParams& shared) {
  if (!extract_shared(params).same_shape(shared)) throw FederationError("install_shared: shape mismatch");
  params.item_emb = shared.item_emb;
  params.layers = shared.layers;
}

SharedParams aggregate(std::span<const WeightedUpdate> updates) {
  if (updates.empty()) throw FederationError("aggregate: no updates");
  std::vector<double> w;
  for (const auto& u : updates) {
    if (!(u.weight > 0.0) || !std::isfinite(u.weight)) throw FederationError("aggregate: weights must be positive");
    if (!u.params.same_shape(updates.front().params)) throw FederationError("aggregate: shape mismatch");
    w.push_back(u.weight);
  }
  const double total = pairwise_sum(w);
  if (!(total > 0.0) || !std::isfinite(total)) throw FederationError("aggregate: zero total weight");
  std::vector<double> a;
  for (double x : w) a.push_back(x / total);

  std::vector<std::vector<double>> flat;
  for (const auto& u : updates) flat.push_back(u.params.flatten());
  std::vector<double> out(flat.front().size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    double lo = flat[0][j];
    double hi = flat[0][j];
    for (const auto& f : flat) {
      lo = std::min(lo, f[j]);
      hi = std::max(hi, f[j]);
    }
    // The exact mean lies in [lo, hi]; clamping only removes rounding drift.
    out[j] = std::clamp(pairwise(flat, a, j, 0, flat.size()), lo, hi);
  }
  SharedParams result = updates.front().params;
  result.unflatten(out);
  return result;
}

void summarize_round(RoundReport& report) {
  report.precision = report.recall = report.ndcg = report.selected_ratio = 0.0;
  double w = 0.0;
  for (const auto& m : report.clients) {
    const auto tw = static_cast<double>(m.test_edges);
    report.precision += tw * m.precision;
    report.recall += tw * m.recall;
    report.ndcg += tw * m.ndcg;
    report.selected_ratio += m.selected_ratio;
    w += tw;
  }
  if (w > 0.0) {
    report.precision /= w;
    report.recall /= w;
    report.ndcg /= w;
  }
  if (!report.clients.empty()) report.selected_ratio /= static_cast<double>(report.clients.size());
}

ClientState init_client(ClientData data, std::size_t id, const InteractionGraph& global_graph,
                        const FederationConfig& cfg) {
  const Index pg = global_graph.num_users();
  ClientState c;
  c.id = id;
  c.data = std::move(data);
  if (pg > 0 && c.data.train.num_items() != global_graph.num_items()) {
    throw FederationError("item catalog differs from the global graph");
  }
  c.rng = Rng(cfg.seed).child(static_cast<std::uint64_t>(Stream::kClientBase) + id);
  c.weight = static_cast<double>(c.data.train.num_edges());
  std::vector<Edge> known(c.data.train.edges().begin(), c.data.train.edges().end());
  known.insert(known.end(), c.data.valid.begin(), c.data.valid.end());
  c.exclude = InteractionGraph(c.data.train.num_users(), c.data.train.num_items(), known);
  Rng init = c.rng.child(kModelStream);
  c.model = GcfParams::init(c.data.train.num_users() + pg, c.data.train.num_items(), cfg.gdve.dim,
                            cfg.gdve.num_layers, init);
  return c;
}

std::vector<ClientState> setup_clients(std::vector<ClientData> data, const InteractionGraph& global_graph,
                                       const FederationConfig& cfg) {
  const Rng root(cfg.seed);
  const Index pg = global_graph.num_users();
  const bool gdve = uses_gdve(cfg.method);

  std::optional<GcfParams> shared_encoder;
  if (gdve && cfg.shared_encoder) {
    Rng r = root.child(kSharedEncoderStream);
    shared_encoder = pretrain_encoder(global_graph, cfg.gdve, r);
  }

  std::vector<ClientState> clients(data.size());
  parallel_for(data.size(), cfg.workers, [&](std::size_t k) {
    try {
      clients[k] = init_client(std::move(data[k]), k, global_graph, cfg);
      ClientState& c = clients[k];
      if (!gdve) return;
      if (c.data.valid.empty()) throw FederationError("no validation edges for the GDVE reward");
      Rng pre = c.rng.child(kPretrainStream);
      GcfParams encoder = shared_encoder ? *shared_encoder : pretrain_encoder(global_graph, cfg.gdve, pre);
      GcfParams valid = pretrain_valid_predictor(c.data.train, cfg.gdve, pre);
      c.gdve = make_gdve_state(std::move(encoder), std::move(valid), global_graph, c.data.train, cfg.gdve,
                               c.rng.child(kGdveStream));
      run_gdve_training(*c.gdve, global_graph, c.data.train, c.data.valid, cfg.gdve);
      // Global users' private rows start from the encoder's user table.
      c.model.user_emb.bottomRows(pg) = c.gdve->encoder.user_emb;
    } catch (const std::exception& e) {
      throw FederationError("setup client " + std::to_string(k) + ": " + e.what());
    }
  });
  return clients;
}

void refresh_selection(ClientState& client, const InteractionGraph& global_graph, const FederationConfig& cfg) {
  if (!client.gdve) return;
  client.selection = select_augmentation(*client.gdve, global_graph, client.data.train, cfg.gdve.user_batch,
                                         client.rng);
}

InteractionGraph round_graph(const ClientState& client, const InteractionGraph& global_graph, Method method) {
  const Index pg = global_graph.num_users();
  switch (method) {
    case Method::kFedNgcf:
    case Method::kFedGdveNoGdve:
      return merge(client.data.train, global_graph.edges(), pg);
    case Method::kFedGdve:
    case Method::kFedGdveNoSl:
      return merge(client.data.train, client.selection.edges, pg);
    case Method::kCentralizedNgcf:
      return merge(client.data.train, {}, pg);
  }
  throw FederationError("round_graph: unknown method");
}

LocalRoundResult local_round(ClientState& client, const SharedParams& shared, const InteractionGraph& global_graph,
                             const FederationConfig& cfg) {
  install_shared(client.model, shared);
  LocalRoundResult out;
  if (cfg.epochs_per_round > 0) {
    const InteractionGraph g = round_graph(client, global_graph, cfg.method);
    const NormalizedAdjacency adj = normalize(g);
    const TrainOptions opts = cfg.gdve.train_options(losses_for(cfg.method));
    for (int e = 0; e < cfg.epochs_per_round; ++e) {
      out.stats = train_epoch(client.model, g, adj, opts, client.rng, &client.optimizer);
    }
  }
  out.update = {extract_shared(client.model), client.weight};
  return out;
}

ClientRoundMetrics evaluate_client(const ClientState& client, const InteractionGraph& global_graph,
                                   const FederationConfig& cfg) {
  ClientRoundMetrics m;
  m.client = client.id;
  m.test_edges = client.data.test.size();
  m.selected_ratio = client.gdve ? client.selection.selected_ratio
                                 : (cfg.method == Method::kFedNgcf || cfg.method == Method::kFedGdveNoGdve) &&
                                           global_graph.num_edges() > 0
                                       ? 1.0
                                       : 0.0;
  if (client.data.test.empty()) return m;
  const InteractionGraph g = round_graph(client, global_graph, cfg.method);
  const Representation rep = final_representation(propagate(client.model, normalize(g), client.model.num_layers()));
  const Representation local{rep.user.topRows(client.data.train.num_users()), rep.item};
  const EvalResult r = evaluate(local, client.exclude, client.data.test, cfg.eval_k);
  m.precision = r.precision;
  m.recall = r.recall;
  m.ndcg = r.ndcg;
  return m;
}

std::vector<RoundReport> run_rounds(std::vector<ClientState>& clients, const InteractionGraph& global_graph,
                                    const FederationConfig& cfg, const RoundCallback& on_round) {
  std::vector<RoundReport> reports;
  if (cfg.rounds == 0) return reports;
  if (clients.empty()) throw FederationError("run_rounds: no clients");
  // Server initialization: client 0's freshly initialized shared blocks.
  SharedParams shared = extract_shared(clients.front().model);

  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<WeightedUpdate> updates(clients.size());
    std::vector<ClientRoundMetrics> metrics(clients.size());
    parallel_for(clients.size(), cfg.workers, [&](std::size_t k) {
      try {
        refresh_selection(clients[k], global_graph, cfg);
        LocalRoundResult r = local_round(clients[k], shared, global_graph, cfg);
        updates[k] = std::move(r.update);
        metrics[k].bpr_loss = r.stats.bpr_loss;
        metrics[k].struc_loss = r.stats.struc_loss;
      } catch (const std::exception& e) {
        throw FederationError(client_tag(round, k) + e.what());
      }
    });
    shared = aggregate(updates);
    if (!shared.finite()) throw FederationError("round " + std::to_string(round) + ": aggregate is not finite");

    RoundReport rep;
    rep.round = round;
    rep.clients.resize(clients.size());
    parallel_for(clients.size(), cfg.workers, [&](std::size_t k) {
      try {
        install_shared(clients[k].model, shared);
        ClientRoundMetrics m = evaluate_client(clients[k], global_graph, cfg);
        m.bpr_loss = metrics[k].bpr_loss;
        m.struc_loss = metrics[k].struc_loss;
        rep.clients[k] = m;
      } catch (const std::exception& e) {
        throw FederationError(client_tag(round, k) + e.what());
      }
    });
    summarize_round(rep);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_round) on_round(rep, clients);
    reports.push_back(std::move(rep));
  }
  return reports;
}

std::vector<RoundReport> run_federation(std::vector<ClientData> data, const InteractionGraph& global_graph,
                                        const FederationConfig& cfg, const RoundCallback& on_round) {
  if (cfg.rounds == 0) return {};
  std::vector<ClientState> clients = setup_clients(std::move(data), global_graph, cfg);
  return run_rounds(clients, global_graph, cfg, on_round);
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min(n, std::max<std::size_t>(workers, 1));
  if (threads <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < n; k = next++) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

void write_federation_checkpoint(std::ostream& os, std::size_t round, std::span<const ClientState> clients) {
  os << "fedgdve_federation_checkpoint 1\n";
  os << "round " << round << " clients " << clients.size() << '\n';
  for (const auto& c : clients) {
    write_params(os, c.model);
    os << "selection " << c.selection.edges.size() << '\n';
    for (const Edge& e : c.selection.edges) os << e.user << ' ' << e.item << '\n';
  }
}

FederationCheckpoint read_federation_checkpoint(std::istream& is) {
  std::string tag, key1, key2;
  int version = 0;
  std::size_t n = 0;
  FederationCheckpoint ck;
  if (!(is >> tag >> version) || tag != "fedgdve_federation_checkpoint" || version != 1) {
    throw FederationError("checkpoint: unrecognized header");
  }
  if (!(is >> key1 >> ck.round >> key2 >> n) || key1 != "round" || key2 != "clients") {
    throw FederationError("checkpoint: malformed round line");
  }
  for (std::size_t k = 0; k < n; ++k) {
    ck.models.push_back(read_params(is));
    std::string sel;
    std::size_t m = 0;
    if (!(is >> sel >> m) || sel != "selection") throw FederationError("checkpoint: missing selection block");
    std::vector<Edge> edges(m);
    for (auto& e : edges) {
      if (!(is >> e.user >> e.item)) throw FederationError("checkpoint: truncated selection block");
    }
    ck.selections.push_back(std::move(edges));
  }
  return ck;
}

}  // namespace fedgdve
