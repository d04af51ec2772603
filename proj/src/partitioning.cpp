#include "fedgdve/partitioning.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace fedgdve {

std::string to_string(PartitionMode mode) { return mode == PartitionMode::kUniform ? "uniform" : "dirichlet"; }

PartitionMode parse_partition_mode(const std::string& text) {
  if (text == "uniform" || text == "iid") return PartitionMode::kUniform;
  if (text == "dirichlet" || text == "non_iid") return PartitionMode::kDirichlet;
  throw PartitionError("unknown partition mode '" + text + "'");
}

std::vector<int> degree_deciles(std::span<const std::size_t> degrees) {
  std::vector<std::size_t> sorted(degrees.begin(), degrees.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(degrees.size());
  std::vector<int> out;
  out.reserve(degrees.size());
  for (std::size_t d : degrees) {
    const auto below = static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), d) - sorted.begin());
    out.push_back(std::min(9, static_cast<int>(std::floor(10.0 * below / n))));
  }
  return out;
}

namespace {

Partition build_partition(const InteractionGraph& graph, PartitionPlan plan) {
  Partition p;
  p.global = subgraph(graph, plan.global_users);
  for (const auto& users : plan.client_users) p.clients.push_back(subgraph(graph, users));
  p.plan = std::move(plan);
  return p;
}

void assign_uniform(const InteractionGraph& graph, std::vector<Index> rest, std::size_t k, PartitionPlan& plan) {
  std::stable_sort(rest.begin(), rest.end(),
                   [&](Index a, Index b) { return graph.user_degree(a) > graph.user_degree(b); });
  for (std::size_t n = 0; n < rest.size(); ++n) plan.client_users[n % k].push_back(rest[n]);
}

void assign_dirichlet(const InteractionGraph& graph, const std::vector<Index>& rest, std::size_t k,
                      double concentration, Rng& rng, PartitionPlan& plan) {
  std::vector<std::size_t> deg;
  for (Index u : rest) deg.push_back(graph.user_degree(u));
  const auto bucket = degree_deciles(deg);
  for (int b = 0; b < 10; ++b) {
    std::vector<Index> members;
    for (std::size_t n = 0; n < rest.size(); ++n) {
      if (bucket[n] == b) members.push_back(rest[n]);
    }
    std::vector<double> w(k);
    double total = 0.0;
    for (auto& x : w) {
      x = rng.gamma(concentration);
      total += x;
    }
    if (members.empty()) continue;
    // Cut the (already shuffled) bucket at the cumulative proportions.
    double acc = 0.0;
    std::size_t start = 0;
    for (std::size_t c = 0; c < k; ++c) {
      acc += w[c] / total;
      const std::size_t stop =
          c + 1 == k ? members.size()
                     : std::min(members.size(), static_cast<std::size_t>(std::llround(acc * members.size())));
      for (std::size_t n = start; n < stop; ++n) plan.client_users[c].push_back(members[n]);
      start = std::max(start, stop);
    }
  }
  for (auto& users : plan.client_users) {
    if (!users.empty()) continue;
    auto largest = std::max_element(plan.client_users.begin(), plan.client_users.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    users.push_back(largest->back());
    largest->pop_back();
  }
}

}  // namespace

Partition global_local_split(const InteractionGraph& graph, double global_edge_frac, std::size_t num_clients,
                             PartitionMode mode, double concentration, Rng& rng) {
  if (!(global_edge_frac >= 0.0 && global_edge_frac < 1.0)) {
    throw PartitionError("global_edge_frac must lie in [0, 1)");
  }
  if (num_clients == 0) {
    throw PartitionError("at least one client is required");
  }
  if (mode == PartitionMode::kDirichlet && !(concentration > 0.0)) {
    throw PartitionError("Dirichlet concentration must be positive");
  }
  PartitionPlan plan;
  plan.seed = rng.seed();
  plan.mode = mode;
  plan.concentration = concentration;
  plan.client_users.resize(num_clients);

  std::vector<Index> order;
  for (Index u = 0; u < graph.num_users(); ++u) {
    if (graph.user_degree(u) > 0) order.push_back(u);
  }
  rng.shuffle(order.begin(), order.end());

  const double target = global_edge_frac * static_cast<double>(graph.num_edges());
  std::size_t mass = 0;
  std::size_t cut = 0;
  while (cut < order.size() && static_cast<double>(mass) < target) {
    mass += graph.user_degree(order[cut]);
    plan.global_users.push_back(order[cut]);
    ++cut;
  }
  std::vector<Index> rest(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  if (num_clients > rest.size()) {
    throw PartitionError(std::to_string(num_clients) + " clients requested but only " + std::to_string(rest.size()) +
                         " users remain after the global split");
  }
  if (mode == PartitionMode::kUniform) {
    assign_uniform(graph, std::move(rest), num_clients, plan);
  } else {
    assign_dirichlet(graph, rest, num_clients, concentration, rng, plan);
  }
  return build_partition(graph, std::move(plan));
}

Partition apply_plan(const InteractionGraph& graph, PartitionPlan plan) {
  std::vector<char> seen(static_cast<std::size_t>(graph.num_users()), 0);
  auto claim = [&](Index u) {
    if (u < 0 || u >= graph.num_users()) throw PartitionError("plan user " + std::to_string(u) + " out of range");
    if (seen[u]) throw PartitionError("plan places user " + std::to_string(u) + " twice");
    seen[u] = 1;
  };
  for (Index u : plan.global_users) claim(u);
  for (const auto& c : plan.client_users) {
    for (Index u : c) claim(u);
  }
  if (plan.client_users.empty()) throw PartitionError("plan has no clients");
  return build_partition(graph, std::move(plan));
}

double adjusted_mutual_information(std::span<const int> labels_a, std::span<const int> labels_b) {
  if (labels_a.size() != labels_b.size()) {
    throw PartitionError("AMI: labelings differ in length");
  }
  const std::size_t n = labels_a.size();
  if (n == 0) return 0.0;
  std::map<int, std::size_t> ia;
  std::map<int, std::size_t> ib;
  for (int a : labels_a) ia.try_emplace(a, ia.size());
  for (int b : labels_b) ib.try_emplace(b, ib.size());
  if (ia.size() < 2 || ib.size() < 2) return 0.0;
  const std::size_t r = ia.size();
  const std::size_t c = ib.size();
  std::vector<double> table(r * c, 0.0);
  std::vector<double> rows(r, 0.0);
  std::vector<double> cols(c, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = ia[labels_a[k]];
    const auto j = ib[labels_b[k]];
    table[i * c + j] += 1.0;
    rows[i] += 1.0;
    cols[j] += 1.0;
  }
  const auto nn = static_cast<double>(n);
  double mi = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double nij = table[i * c + j];
      if (nij > 0.0) mi += nij / nn * std::log(nn * nij / (rows[i] * cols[j]));
    }
  }
  auto entropy = [&](const std::vector<double>& counts) {
    double h = 0.0;
    for (double x : counts) {
      if (x > 0.0) h -= x / nn * std::log(x / nn);
    }
    return h;
  };
  const double ha = entropy(rows);
  const double hb = entropy(cols);

  // Expected MI under the permutation (hypergeometric) model.
  const double lg_n = std::lgamma(nn + 1.0);
  double emi = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const double a = rows[i];
    for (std::size_t j = 0; j < c; ++j) {
      const double b = cols[j];
      const double lo = std::max(1.0, a + b - nn);
      const double hi = std::min(a, b);
      const double common = std::lgamma(a + 1.0) + std::lgamma(b + 1.0) + std::lgamma(nn - a + 1.0) +
                            std::lgamma(nn - b + 1.0) - lg_n;
      for (double nij = lo; nij <= hi; nij += 1.0) {
        const double logp = common - std::lgamma(nij + 1.0) - std::lgamma(a - nij + 1.0) -
                            std::lgamma(b - nij + 1.0) - std::lgamma(nn - a - b + nij + 1.0);
        emi += nij / nn * std::log(nn * nij / (a * b)) * std::exp(logp);
      }
    }
  }
  double denom = 0.5 * (ha + hb) - emi;
  const double tiny = std::numeric_limits<double>::epsilon();
  if (std::abs(denom) < tiny) denom = denom < 0.0 ? -tiny : tiny;
  return (mi - emi) / denom;
}

double heterogeneity_score(const PartitionPlan& plan, std::span<const std::size_t> user_degrees) {
  std::vector<std::size_t> all_deg;
  std::vector<int> within;
  for (const auto& users : plan.client_users) {
    std::vector<std::size_t> deg;
    for (Index u : users) {
      if (u < 0 || static_cast<std::size_t>(u) >= user_degrees.size()) {
        throw PartitionError("heterogeneity_score: user " + std::to_string(u) + " has no degree");
      }
      deg.push_back(user_degrees[u]);
    }
    const auto local = degree_deciles(deg);
    within.insert(within.end(), local.begin(), local.end());
    all_deg.insert(all_deg.end(), deg.begin(), deg.end());
  }
  const auto overall = degree_deciles(all_deg);
  return adjusted_mutual_information(overall, within);
}

void write_manifest(std::ostream& os, const PartitionPlan& plan) {
  os << "# fedgdve partition manifest\n";
  os << "# mode=" << to_string(plan.mode) << " seed=" << plan.seed << " concentration=" << plan.concentration
     << " clients=" << plan.num_clients() << '\n';
  os << "user,assignment\n";
  std::vector<std::pair<Index, long>> rows;
  for (Index u : plan.global_users) rows.emplace_back(u, -1);
  for (std::size_t k = 0; k < plan.client_users.size(); ++k) {
    for (Index u : plan.client_users[k]) rows.emplace_back(u, static_cast<long>(k));
  }
  // Preserve in-client order: it determines the local user indices.
  for (const auto& [u, a] : rows) {
    os << u << ',';
    if (a < 0) {
      os << "global";
    } else {
      os << a;
    }
    os << '\n';
  }
}

PartitionPlan read_manifest(std::istream& is) {
  PartitionPlan plan;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::size_t clients = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string tok;
      while (meta >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const auto key = tok.substr(0, eq);
        const auto val = tok.substr(eq + 1);
        if (key == "mode") plan.mode = parse_partition_mode(val);
        if (key == "seed") plan.seed = std::stoull(val);
        if (key == "concentration") plan.concentration = std::stod(val);
        if (key == "clients") clients = std::stoul(val);
      }
      continue;
    }
    if (!header) {
      if (line != "user,assignment") throw PartitionError("manifest line " + std::to_string(lineno) + ": bad header");
      header = true;
      plan.client_users.resize(clients);
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw PartitionError("manifest line " + std::to_string(lineno) + ": expected user,assignment");
    }
    try {
      const auto user = static_cast<Index>(std::stol(line.substr(0, comma)));
      const auto what = line.substr(comma + 1);
      if (what == "global") {
        plan.global_users.push_back(user);
      } else {
        const auto k = std::stoul(what);
        if (k >= plan.client_users.size()) plan.client_users.resize(k + 1);
        plan.client_users[k].push_back(user);
      }
    } catch (const std::logic_error&) {
      throw PartitionError("manifest line " + std::to_string(lineno) + ": malformed entry '" + line + "'");
    }
  }
  if (!header) throw PartitionError("manifest: missing header");
  return plan;
}

}  // namespace fedgdve
