#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedgdve/federation.hpp"
#include "fedgdve/graph.hpp"
#include "fedgdve/partitioning.hpp"

namespace fedgdve {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetFormat { kMovieLens, kEdgeList };

/// Every knob of a run. Defaults follow the reference setup (d=64, L=3,
/// tau=0.1, beta=1024, eta=0.004, gamma=0.007, 10 clients, half the edges
/// global, 30 rounds, K=100).
struct ExperimentConfig {
  std::string dataset;
  DatasetFormat format = DatasetFormat::kMovieLens;
  Method method = Method::kFedGdve;
  std::size_t clients = 10;
  double global_edge_frac = 0.5;
  PartitionMode partition = PartitionMode::kUniform;
  double concentration = 0.5;
  std::string manifest;  // optional plan to reuse instead of partitioning

  int dim = 64;
  int layers = 3;
  std::vector<int> even_layers{2};
  double tau = 0.1;
  double lambda = 1e-4;
  double eta = 0.004;
  double gamma = 0.007;
  double struc_weight = 1.0;
  Optimizer optimizer = Optimizer::kAdam;
  std::size_t user_batch = 1024;
  std::size_t train_batch = 2048;
  int epochs_per_round = 2;
  std::size_t rounds = 30;
  std::size_t eval_k = 100;

  double train_frac = 0.8;
  double valid_frac = 0.1;
  double test_frac = 0.1;

  int pretrain_epochs = 10;
  std::size_t max_batches = 500;
  std::size_t plateau_window = 20;
  double plateau_tol = 1e-4;
  double ema_decay = 0.9;
  std::size_t reward_k = 100;
  bool shared_encoder = false;

  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  std::string run_id;  // derived from method/seed/clients when empty
  std::size_t workers = 1;
  bool timing = false;             // write wall-clock seconds into the CSV
  std::size_t checkpoint_every = 0;  // rounds between checkpoints, 0 = off

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
  std::string resolved_run_id() const;
  FederationConfig federation() const;
  GdveConfig gdve() const;
};

/// Applies one key=value assignment.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Flat "key = value" text, '#' comments, blank lines ignored. Later keys
/// override earlier ones; overrides are applied after the file.
ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Resolved config as ordered key/value pairs (the inverse of parse_config).
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);

struct LoadedGraph {
  InteractionGraph graph;
  GraphIds ids;
  std::size_t rows = 0;  // data rows read, before deduplication
};

/// Tab-separated user, item, rating, timestamp rows; ratings ignored,
/// repeated pairs collapsed.
LoadedGraph load_movielens(const std::string& path);
/// Whitespace-separated "user item" rows; '#' starts a comment.
LoadedGraph load_edge_list(const std::string& path);
LoadedGraph load_dataset(const ExperimentConfig& cfg);

struct HoldoutSplit {
  std::vector<Edge> train;
  std::vector<Edge> valid;
  std::vector<Edge> test;
};

/// Per-user split of shuffled edges. Users with fewer than three edges keep
/// everything in train; otherwise validation and test get
/// max(1, round(frac * n)) edges each (when the fraction is positive) and
/// train keeps the rest.
HoldoutSplit split_holdout(const InteractionGraph& graph, double train_frac, double valid_frac, double test_frac,
                           Rng& rng);

struct PreparedData {
  LoadedGraph source;
  Partition partition;
  std::vector<ClientData> clients;
};

/// Load, partition (or apply cfg.manifest) and split every client.
PreparedData prepare_data(const ExperimentConfig& cfg);

inline constexpr const char* kMetricsHeader = "run_id,method,seed,round,scope,metric,value,seconds";

struct ExperimentResult {
  std::string run_dir;
  std::vector<RoundReport> reports;
};

/// Writes metrics.csv, manifest.txt and run.json under
/// <output_dir>/<run_id>/; FEDGDVE_OUTPUT_DIR overrides output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Output directory after applying the environment override.
std::string resolve_output_dir(const ExperimentConfig& cfg);

/// Metrics CSV rows for one round report.
std::vector<std::string> metrics_rows(const ExperimentConfig& cfg, const RoundReport& report);

/// Evaluates a saved federation checkpoint against the config's test data.
RoundReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path);

/// Build identifier recorded in run metadata.
std::string code_version();

}  // namespace fedgdve
