#include "fedgdve/graph.hpp"

#include <algorithm>
#include <cmath>

namespace fedgdve {

InteractionGraph::InteractionGraph(Index num_users, Index num_items, std::vector<Edge> edges)
    : num_users_(num_users), num_items_(num_items), edges_(std::move(edges)) {
  if (num_users < 0 || num_items < 0) {
    throw GraphError("graph: negative node count");
  }
  for (const auto& e : edges_) {
    if (e.user < 0 || e.user >= num_users || e.item < 0 || e.item >= num_items) {
      throw GraphError("graph: edge (" + std::to_string(e.user) + ", " + std::to_string(e.item) +
                       ") outside " + std::to_string(num_users) + " x " + std::to_string(num_items));
    }
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

  user_offsets_.assign(static_cast<std::size_t>(num_users) + 1, 0);
  item_offsets_.assign(static_cast<std::size_t>(num_items) + 1, 0);
  for (const auto& e : edges_) {
    ++user_offsets_[e.user + 1];
    ++item_offsets_[e.item + 1];
  }
  for (std::size_t i = 1; i < user_offsets_.size(); ++i) user_offsets_[i] += user_offsets_[i - 1];
  for (std::size_t i = 1; i < item_offsets_.size(); ++i) item_offsets_[i] += item_offsets_[i - 1];

  user_adj_.resize(edges_.size());
  item_adj_.resize(edges_.size());
  std::vector<std::size_t> ucur(user_offsets_.begin(), user_offsets_.end() - 1);
  std::vector<std::size_t> icur(item_offsets_.begin(), item_offsets_.end() - 1);
  // Edges are sorted by (user, item), so both neighbor lists come out sorted.
  for (const auto& e : edges_) {
    user_adj_[ucur[e.user]++] = e.item;
    item_adj_[icur[e.item]++] = e.user;
  }
}

std::vector<std::size_t> InteractionGraph::user_degrees() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(num_users_));
  for (Index u = 0; u < num_users_; ++u) out[u] = user_degree(u);
  return out;
}

std::vector<std::size_t> InteractionGraph::item_degrees() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(num_items_));
  for (Index i = 0; i < num_items_; ++i) out[i] = item_degree(i);
  return out;
}

bool InteractionGraph::has_edge(Index user, Index item) const {
  if (user < 0 || user >= num_users_) return false;
  auto items = items_of(user);
  return std::binary_search(items.begin(), items.end(), item);
}

Index IdMap::intern(const std::string& raw) {
  auto [it, inserted] = to_index_.try_emplace(raw, static_cast<Index>(to_raw_.size()));
  if (inserted) {
    to_raw_.push_back(raw);
  }
  return it->second;
}

Index IdMap::index_of(const std::string& raw) const {
  auto it = to_index_.find(raw);
  if (it == to_index_.end()) {
    throw GraphError("unknown id '" + raw + "'");
  }
  return it->second;
}

std::pair<InteractionGraph, GraphIds> build_graph(const std::vector<RawEdge>& raw_edges, bool dedup) {
  GraphIds ids;
  std::vector<Edge> edges;
  edges.reserve(raw_edges.size());
  for (std::size_t n = 0; n < raw_edges.size(); ++n) {
    const auto& r = raw_edges[n];
    if (r.user.empty() || r.item.empty()) {
      throw GraphError("build_graph: empty id in edge " + std::to_string(n));
    }
    edges.push_back({ids.users.intern(r.user), ids.items.intern(r.item)});
  }
  if (!dedup) {
    auto sorted = edges;
    std::sort(sorted.begin(), sorted.end());
    auto dup = std::adjacent_find(sorted.begin(), sorted.end());
    if (dup != sorted.end()) {
      throw GraphError("build_graph: duplicate interaction (" + ids.users.raw_of(dup->user) + ", " +
                       ids.items.raw_of(dup->item) + ") with dedup disabled");
    }
  }
  InteractionGraph g(ids.users.size(), ids.items.size(), std::move(edges));
  return {std::move(g), std::move(ids)};
}

NormalizedAdjacency normalize(const InteractionGraph& graph) {
  using Triplet = Eigen::Triplet<double, std::int64_t>;
  std::vector<Triplet> ui;
  std::vector<Triplet> iu;
  ui.reserve(graph.num_edges());
  iu.reserve(graph.num_edges());
  for (const auto& e : graph.edges()) {
    const double w = 1.0 / std::sqrt(static_cast<double>(graph.user_degree(e.user)) *
                                     static_cast<double>(graph.item_degree(e.item)));
    ui.emplace_back(e.user, e.item, w);
    iu.emplace_back(e.item, e.user, w);
  }
  NormalizedAdjacency adj;
  adj.user_item.resize(graph.num_users(), graph.num_items());
  adj.item_user.resize(graph.num_items(), graph.num_users());
  adj.user_item.setFromTriplets(ui.begin(), ui.end());
  adj.item_user.setFromTriplets(iu.begin(), iu.end());
  adj.user_item.makeCompressed();
  adj.item_user.makeCompressed();
  return adj;
}

Subgraph subgraph(const InteractionGraph& graph, std::span<const Index> users, CatalogMode mode) {
  Subgraph out;
  std::vector<Index> local_of(static_cast<std::size_t>(graph.num_users()), -1);
  for (Index u : users) {
    if (u < 0 || u >= graph.num_users()) {
      throw GraphError("subgraph: user index " + std::to_string(u) + " out of range");
    }
    if (local_of[u] >= 0) {
      throw GraphError("subgraph: user index " + std::to_string(u) + " listed twice");
    }
    local_of[u] = static_cast<Index>(out.user_origin.size());
    out.user_origin.push_back(u);
  }
  std::vector<Edge> edges;
  for (Index u : users) {
    for (Index i : graph.items_of(u)) {
      edges.push_back({local_of[u], i});
    }
  }
  Index num_items = graph.num_items();
  if (mode == CatalogMode::kDense) {
    std::vector<Index> item_local(static_cast<std::size_t>(graph.num_items()), -1);
    std::vector<Index> seen;
    for (const auto& e : edges) seen.push_back(e.item);
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (std::size_t k = 0; k < seen.size(); ++k) item_local[seen[k]] = static_cast<Index>(k);
    for (auto& e : edges) e.item = item_local[e.item];
    out.item_origin = std::move(seen);
    num_items = static_cast<Index>(out.item_origin.size());
  } else {
    out.item_origin.resize(static_cast<std::size_t>(graph.num_items()));
    for (Index i = 0; i < graph.num_items(); ++i) out.item_origin[i] = i;
  }
  out.graph = InteractionGraph(static_cast<Index>(out.user_origin.size()), num_items, std::move(edges));
  return out;
}

InteractionGraph merge(const InteractionGraph& local, std::span<const Edge> global_edges, Index num_global_users) {
  std::vector<Edge> edges = local.edges();
  edges.reserve(edges.size() + global_edges.size());
  for (const auto& e : global_edges) {
    if (e.item < 0 || e.item >= local.num_items()) {
      throw GraphError("merge: item " + std::to_string(e.item) + " outside the shared catalog");
    }
    if (e.user < 0 || e.user >= num_global_users) {
      throw GraphError("merge: global user " + std::to_string(e.user) + " out of range");
    }
    edges.push_back({local.num_users() + e.user, e.item});
  }
  return InteractionGraph(local.num_users() + num_global_users, local.num_items(), std::move(edges));
}

}  // namespace fedgdve
