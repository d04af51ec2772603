#pragma once

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedgdve/graph.hpp"
#include "fedgdve/numerics.hpp"

namespace fedgdve {

class PartitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PartitionMode { kUniform, kDirichlet };

std::string to_string(PartitionMode mode);
PartitionMode parse_partition_mode(const std::string& text);

/// User placement: a global pool plus K pairwise-disjoint client sets, all as
/// indices into the source graph.
struct PartitionPlan {
  std::vector<Index> global_users;
  std::vector<std::vector<Index>> client_users;
  std::uint64_t seed = 0;
  PartitionMode mode = PartitionMode::kUniform;
  double concentration = 0.5;

  std::size_t num_clients() const { return client_users.size(); }
};

struct Partition {
  Subgraph global;
  std::vector<Subgraph> clients;
  PartitionPlan plan;
};

/// Moves shuffled users into the global pool until its edge mass first
/// reaches `global_edge_frac` of all edges, then spreads the rest over K
/// clients. Uniform mode deals a degree-sorted shuffle round-robin; Dirichlet
/// mode splits each degree-decile bucket by proportions drawn from a
/// symmetric Dirichlet(concentration). A client left empty by the draw takes
/// one user from the largest client.
Partition global_local_split(const InteractionGraph& graph, double global_edge_frac, std::size_t num_clients,
                             PartitionMode mode, double concentration, Rng& rng);

/// Rebuilds the holders' graphs from a plan (e.g. one read from a manifest).
Partition apply_plan(const InteractionGraph& graph, PartitionPlan plan);

/// Tie-aware decile bucket: floor(10 * #{values < v} / n).
std::vector<int> degree_deciles(std::span<const std::size_t> degrees);

/// Adjusted mutual information with the hypergeometric expected-MI model and
/// arithmetic-mean normalization. A single cluster on either side scores 0.
double adjusted_mutual_information(std::span<const int> labels_a, std::span<const int> labels_b);

/// Heterogeneity of a plan: AMI between each client user's degree decile over
/// all client users and its degree decile within its own client. Clients that
/// mirror the overall degree profile score high.
double heterogeneity_score(const PartitionPlan& plan, std::span<const std::size_t> user_degrees);

/// Text manifest: '#'-prefixed metadata lines, a "user,assignment" header,
/// then one "user_index,global|<client>" line per placed user.
void write_manifest(std::ostream& os, const PartitionPlan& plan);
PartitionPlan read_manifest(std::istream& is);

}  // namespace fedgdve
