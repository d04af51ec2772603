#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

namespace fedgdve {

using Index = std::int32_t;

struct Edge {
  Index user;
  Index item;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable bipartite user-item graph. Edges are kept sorted by
/// (user, item); both adjacency directions are stored as compressed rows.
class InteractionGraph {
 public:
  InteractionGraph() = default;
  /// Builds from dense indices. Duplicate edges are collapsed; an index out
  /// of [0, num_users) x [0, num_items) throws GraphError.
  InteractionGraph(Index num_users, Index num_items, std::vector<Edge> edges);

  Index num_users() const { return num_users_; }
  Index num_items() const { return num_items_; }
  std::size_t num_edges() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }

  const std::vector<Edge>& edges() const { return edges_; }

  std::span<const Index> items_of(Index user) const {
    return {user_adj_.data() + user_offsets_[user], user_offsets_[user + 1] - user_offsets_[user]};
  }
  std::span<const Index> users_of(Index item) const {
    return {item_adj_.data() + item_offsets_[item], item_offsets_[item + 1] - item_offsets_[item]};
  }
  std::size_t user_degree(Index user) const { return user_offsets_[user + 1] - user_offsets_[user]; }
  std::size_t item_degree(Index item) const { return item_offsets_[item + 1] - item_offsets_[item]; }
  std::vector<std::size_t> user_degrees() const;
  std::vector<std::size_t> item_degrees() const;

  bool has_edge(Index user, Index item) const;

 private:
  Index num_users_ = 0;
  Index num_items_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> user_offsets_{0};
  std::vector<Index> user_adj_;
  std::vector<std::size_t> item_offsets_{0};
  std::vector<Index> item_adj_;
};

/// Bijection between raw external ids and dense indices, one side at a time.
class IdMap {
 public:
  Index intern(const std::string& raw);
  Index index_of(const std::string& raw) const;
  bool contains(const std::string& raw) const { return to_index_.count(raw) != 0; }
  const std::string& raw_of(Index idx) const { return to_raw_.at(static_cast<std::size_t>(idx)); }
  Index size() const { return static_cast<Index>(to_raw_.size()); }

 private:
  std::unordered_map<std::string, Index> to_index_;
  std::vector<std::string> to_raw_;
};

struct GraphIds {
  IdMap users;
  IdMap items;
};

struct RawEdge {
  std::string user;
  std::string item;
};

/// Densifies raw ids in order of first appearance. With dedup off, a repeated
/// pair throws; the graph itself never holds duplicates.
std::pair<InteractionGraph, GraphIds> build_graph(const std::vector<RawEdge>& raw_edges, bool dedup = true);

/// Sparse symmetric normalization weight(u,i) = 1/sqrt(deg(u) deg(i)).
struct NormalizedAdjacency {
  using Sparse = Eigen::SparseMatrix<double, Eigen::RowMajor, std::int64_t>;
  Sparse user_item;  // P x Q
  Sparse item_user;  // Q x P, transpose of user_item
  double weight(Index user, Index item) const { return user_item.coeff(user, item); }
};

NormalizedAdjacency normalize(const InteractionGraph& graph);

enum class CatalogMode { kShared, kDense };

struct Subgraph {
  InteractionGraph graph;
  std::vector<Index> user_origin;  // local user index -> parent user index
  std::vector<Index> item_origin;  // local item index -> parent item index
};

/// Induced graph on a user subset. Users are re-indexed in the order given.
/// In shared-catalog mode the item index space is kept as is.
Subgraph subgraph(const InteractionGraph& graph, std::span<const Index> users,
                  CatalogMode mode = CatalogMode::kShared);

/// Union of a local graph and tagged global edges. Global user g is placed at
/// index local.num_users() + g; the result has local.num_users() +
/// num_global_users users and the shared item catalog.
InteractionGraph merge(const InteractionGraph& local, std::span<const Edge> global_edges, Index num_global_users);

}  // namespace fedgdve
