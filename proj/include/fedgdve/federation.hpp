#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedgdve/gcf_model.hpp"
#include "fedgdve/gdve.hpp"
#include "fedgdve/graph.hpp"
#include "fedgdve/numerics.hpp"

namespace fedgdve {

class FederationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method { kFedNgcf, kFedGdve, kFedGdveNoSl, kFedGdveNoGdve, kCentralizedNgcf };

std::string to_string(Method m);
Method parse_method(const std::string& text);
bool uses_gdve(Method m);
LossSet losses_for(Method m);

/// The blocks a client uploads: item table and propagation weights. User
/// rows never leave the client.
struct SharedParams {
  DenseMatrix item_emb;
  std::vector<LayerWeights> layers;

  std::size_t size() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  bool same_shape(const SharedParams& other) const;
  bool finite() const;

  friend bool operator==(const SharedParams& a, const SharedParams& b);
};

SharedParams extract_shared(const GcfParams& params);
void install_shared(GcfParams& params, const SharedParams& shared);

struct WeightedUpdate {
  SharedParams params;
  double weight = 0.0;
};

/// sum_k w_k p_k / sum_k w_k, summed pairwise per coordinate.
SharedParams aggregate(std::span<const WeightedUpdate> updates);

/// One client's data: train graph over its own users (shared catalog) and
/// held-out validation / test edges on the same user indices.
struct ClientData {
  InteractionGraph train;
  std::vector<Edge> valid;
  std::vector<Edge> test;
};

struct FederationConfig {
  Method method = Method::kFedGdve;
  std::size_t rounds = 30;
  int epochs_per_round = 2;
  std::size_t eval_k = 100;
  std::size_t workers = 1;
  /// One encoder pretrained on the global graph reused by every client.
  bool shared_encoder = false;
  std::uint64_t seed = 0;
  GdveConfig gdve;
};

struct ClientState {
  std::size_t id = 0;
  ClientData data;
  InteractionGraph exclude;  // train + valid, removed from test ranking
  std::optional<GdveState> gdve;
  GcfParams model;  // P_local + P_global user rows when a global pool exists
  OptimizerState optimizer;
  Rng rng;
  double weight = 0.0;  // local train edge count
  Augmentation selection;
};

struct ClientRoundMetrics {
  std::size_t client = 0;
  double precision = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t test_edges = 0;
  double selected_ratio = 0.0;
  double bpr_loss = 0.0;
  double struc_loss = 0.0;
};

struct RoundReport {
  std::size_t round = 0;  // 1-based
  std::vector<ClientRoundMetrics> clients;
  double precision = 0.0;  // test-edge-weighted means over clients
  double recall = 0.0;
  double ndcg = 0.0;
  double selected_ratio = 0.0;  // mean over clients
  double seconds = 0.0;
};

/// Fills the aggregate fields of a report from its per-client rows.
void summarize_round(RoundReport& report);

/// Client without GDVE state: RNG stream, exclusion graph, weight and a
/// freshly initialized model.
ClientState init_client(ClientData data, std::size_t id, const InteractionGraph& global_graph,
                        const FederationConfig& cfg);

/// Builds client states: model init, and for GDVE methods encoder / valid
/// predictor pretraining followed by run_gdve_training.
std::vector<ClientState> setup_clients(std::vector<ClientData> data, const InteractionGraph& global_graph,
                                       const FederationConfig& cfg);

/// Samples a fresh augmentation for a GDVE client; no-op otherwise.
void refresh_selection(ClientState& client, const InteractionGraph& global_graph, const FederationConfig& cfg);

/// The client's training graph for this round under `method`.
InteractionGraph round_graph(const ClientState& client, const InteractionGraph& global_graph, Method method);

struct LocalRoundResult {
  WeightedUpdate update;
  EpochStats stats;
};

/// Installs `shared`, trains epochs_per_round epochs on the round graph and
/// returns the client's shared blocks with its edge-count weight.
LocalRoundResult local_round(ClientState& client, const SharedParams& shared, const InteractionGraph& global_graph,
                             const FederationConfig& cfg);

ClientRoundMetrics evaluate_client(const ClientState& client, const InteractionGraph& global_graph,
                                   const FederationConfig& cfg);

using RoundCallback = std::function<void(const RoundReport&, const std::vector<ClientState>&)>;

/// Full loop: setup, then per round refresh selections, local rounds
/// (optionally parallel), aggregation, redistribution and evaluation.
std::vector<RoundReport> run_federation(std::vector<ClientData> data, const InteractionGraph& global_graph,
                                        const FederationConfig& cfg, const RoundCallback& on_round = {});

/// Same loop over already prepared clients.
std::vector<RoundReport> run_rounds(std::vector<ClientState>& clients, const InteractionGraph& global_graph,
                                    const FederationConfig& cfg, const RoundCallback& on_round = {});

/// Runs fn(k) for k in [0, n) on up to `workers` threads. The first
/// exception thrown is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Per-client checkpoint: round index, every client's parameters and its
/// current selection (needed to rebuild the round graph for evaluation).
void write_federation_checkpoint(std::ostream& os, std::size_t round, std::span<const ClientState> clients);
struct FederationCheckpoint {
  std::size_t round = 0;
  std::vector<GcfParams> models;
  std::vector<std::vector<Edge>> selections;
};
FederationCheckpoint read_federation_checkpoint(std::istream& is);

}  // namespace fedgdve
