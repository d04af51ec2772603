#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "fedgdve/gcf_model.hpp"
#include "fedgdve/graph.hpp"

namespace fedgdve {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RankedList {
  Index user = 0;
  std::vector<Index> items;   // best first
  std::vector<double> scores;
};

/// Top-K items for `user_row` over the catalog rows of `item_repr`, skipping
/// `exclude` (sorted). Ties are broken by ascending item index; K beyond the
/// candidate count returns every candidate.
RankedList rank_items(Index user, std::span<const double> user_row, const DenseMatrix& item_repr,
                      std::span<const Index> exclude, std::size_t k);

/// `relevant` must be sorted.
double precision_at_k(const RankedList& ranked, std::span<const Index> relevant, std::size_t k);
double recall_at_k(const RankedList& ranked, std::span<const Index> relevant, std::size_t k);
double ndcg_at_k(const RankedList& ranked, std::span<const Index> relevant, std::size_t k);

struct UserMetrics {
  Index user = 0;
  double precision = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct EvalResult {
  double precision = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
  std::vector<UserMetrics> per_user;
  std::size_t skipped = 0;  // users with test items but no training items
  std::size_t num_users() const { return per_user.size(); }
};

/// Unweighted per-user means over users with at least one test edge.
/// `exclude` lists the known interactions removed from ranking; a user with
/// no edge in `exclude` is skipped. Throws when no user is evaluable.
EvalResult evaluate(const Representation& repr, const InteractionGraph& exclude, std::span<const Edge> test_edges,
                    std::size_t k, std::span<const Index> only_users = {});

}  // namespace fedgdve
