#include "fedgdve/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace fedgdve {

namespace {

std::size_t hits_at(const RankedList& ranked, std::span<const Index> relevant, std::size_t k) {
  std::size_t hits = 0;
  const std::size_t n = std::min(k, ranked.items.size());
  for (std::size_t p = 0; p < n; ++p) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranked.items[p])) ++hits;
  }
  return hits;
}

void require_relevant(std::span<const Index> relevant) {
  if (relevant.empty()) throw EvaluationError("metric: empty relevant set");
}

}  // namespace

RankedList rank_items(Index user, std::span<const double> user_row, const DenseMatrix& item_repr,
                      std::span<const Index> exclude, std::size_t k) {
  if (static_cast<Eigen::Index>(user_row.size()) != item_repr.cols()) {
    throw EvaluationError("rank_items: representation width mismatch");
  }
  Eigen::Map<const DenseVector> u(user_row.data(), static_cast<Eigen::Index>(user_row.size()));
  DenseVector scores = item_repr * u;
  std::vector<Index> cand;
  cand.reserve(static_cast<std::size_t>(item_repr.rows()));
  for (Index i = 0; i < static_cast<Index>(item_repr.rows()); ++i) {
    if (!std::binary_search(exclude.begin(), exclude.end(), i)) cand.push_back(i);
  }
  const std::size_t n = std::min(k, cand.size());
  auto better = [&](Index a, Index b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end(), better);
  RankedList out;
  out.user = user;
  out.items.assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n));
  for (Index i : out.items) out.scores.push_back(scores[i]);
  return out;
}

double precision_at_k(const RankedList& ranked, std::span<const Index> relevant, std::size_t k) {
  require_relevant(relevant);
  if (k == 0) throw EvaluationError("precision_at_k: K must be positive");
  return static_cast<double>(hits_at(ranked, relevant, k)) / static_cast<double>(k);
}

double recall_at_k(const RankedList& ranked, std::span<const Index> relevant, std::size_t k) {
  require_relevant(relevant);
  return static_cast<double>(hits_at(ranked, relevant, k)) / static_cast<double>(relevant.size());
}

double ndcg_at_k(const RankedList& ranked, std::span<const Index> relevant, std::size_t k) {
  require_relevant(relevant);
  double dcg = 0.0;
  const std::size_t n = std::min(k, ranked.items.size());
  for (std::size_t p = 0; p < n; ++p) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranked.items[p])) {
      dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    }
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, relevant.size());
  for (std::size_t p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

EvalResult evaluate(const Representation& repr, const InteractionGraph& exclude, std::span<const Edge> test_edges,
                    std::size_t k, std::span<const Index> only_users) {
  std::map<Index, std::vector<Index>> relevant;
  for (const auto& e : test_edges) {
    if (e.user < 0 || e.user >= static_cast<Index>(repr.user.rows())) {
      throw EvaluationError("evaluate: test user " + std::to_string(e.user) + " has no representation");
    }
    if (!only_users.empty() && !std::binary_search(only_users.begin(), only_users.end(), e.user)) continue;
    relevant[e.user].push_back(e.item);
  }
  EvalResult out;
  for (auto& [user, items] : relevant) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    if (user >= exclude.num_users() || exclude.user_degree(user) == 0) {
      ++out.skipped;
      continue;
    }
    const auto row = repr.user.row(user);
    RankedList ranked = rank_items(user, {row.data(), static_cast<std::size_t>(row.size())}, repr.item,
                                   exclude.items_of(user), k);
    UserMetrics m{user, precision_at_k(ranked, items, k), recall_at_k(ranked, items, k), ndcg_at_k(ranked, items, k)};
    out.precision += m.precision;
    out.recall += m.recall;
    out.ndcg += m.ndcg;
    out.per_user.push_back(m);
  }
  if (out.per_user.empty()) {
    throw EvaluationError("evaluate: no evaluable users");
  }
  const auto n = static_cast<double>(out.per_user.size());
  out.precision /= n;
  out.recall /= n;
  out.ndcg /= n;
  return out;
}

}  // namespace fedgdve
