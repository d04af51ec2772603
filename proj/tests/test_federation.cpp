#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedgdve/federation.hpp"
#include "test_support.hpp"

using namespace fedgdve;
using fedgdve::testing::random_graph;

namespace {

SharedParams vector_params(std::vector<double> values) {
  SharedParams p;
  p.item_emb = DenseMatrix(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t k = 0; k < values.size(); ++k) p.item_emb(0, static_cast<Eigen::Index>(k)) = values[k];
  return p;
}

SharedParams random_shared(Rng& rng, double scale = 1.0) {
  Rng init(1);
  SharedParams p = extract_shared(GcfParams::init(1, 5, 3, 2, init));
  std::vector<double> flat = p.flatten();
  for (double& x : flat) x = scale * rng.normal();
  p.unflatten(flat);
  return p;
}

// Client data over a shared catalog: train graph plus one held-out valid and test edge per user.
ClientData client_data(Index users, Index items, Rng& rng) {
  const InteractionGraph g = random_graph(users, items, 0.35, rng);
  std::vector<Edge> train, valid, test;
  for (Index u = 0; u < users; ++u) {
    const auto its = g.items_of(u);
    for (std::size_t k = 0; k < its.size(); ++k) {
      const Edge e{u, its[k]};
      if (its.size() >= 3 && k == 0) {
        valid.push_back(e);
      } else if (its.size() >= 3 && k == 1) {
        test.push_back(e);
      } else {
        train.push_back(e);
      }
    }
  }
  return {InteractionGraph(users, items, train), valid, test};
}

FederationConfig small_config(Method m) {
  FederationConfig cfg;
  cfg.method = m;
  cfg.rounds = 3;
  cfg.epochs_per_round = 1;
  cfg.eval_k = 5;
  cfg.seed = 3;
  cfg.gdve.dim = 4;
  cfg.gdve.num_layers = 2;
  cfg.gdve.user_batch = 4;
  cfg.gdve.train_batch = 16;
  cfg.gdve.pretrain_epochs = 1;
  cfg.gdve.max_batches = 3;
  cfg.gdve.reward_k = 5;
  return cfg;
}

struct Setup {
  std::vector<ClientData> data;
  InteractionGraph global;
};

Setup small_setup(std::uint64_t seed, std::size_t clients = 3) {
  Rng rng(seed);
  Setup s;
  for (std::size_t k = 0; k < clients; ++k) s.data.push_back(client_data(6, 12, rng));
  s.global = random_graph(8, 12, 0.3, rng);
  return s;
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("aggregate examples") {
  const SharedParams a = vector_params({1.0, 3.0});
  const SharedParams b = vector_params({4.0, 0.0});
  const std::vector<WeightedUpdate> one{{a, 5.0}};
  CHECK(aggregate(one) == a);

  const std::vector<WeightedUpdate> two{{a, 2.0}, {b, 1.0}};
  const SharedParams m = aggregate(two);
  CHECK(std::abs(m.item_emb(0, 0) - 2.0) < 1e-12);
  CHECK(std::abs(m.item_emb(0, 1) - 2.0) < 1e-12);

  Rng rng(1);
  for (double c : {1e-3, 0.5, 7.0, 1e6}) {
    const std::vector<WeightedUpdate> scaled{{a, 2.0 * c}, {b, 1.0 * c}};
    const SharedParams s = aggregate(scaled);
    CHECK((s.item_emb - m.item_emb).cwiseAbs().maxCoeff() < 1e-12);
  }

  CHECK_THROWS_AS(aggregate({}), FederationError);
  const std::vector<WeightedUpdate> zero{{a, 0.0}, {b, 0.0}};
  CHECK_THROWS_AS(aggregate(zero), FederationError);
  const std::vector<WeightedUpdate> mismatch{{a, 1.0}, {vector_params({1.0}), 1.0}};
  CHECK_THROWS_AS(aggregate(mismatch), FederationError);
}

TEST_CASE("aggregate is a convex combination and order free") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(7);
    std::vector<WeightedUpdate> ups;
    for (std::size_t k = 0; k < n; ++k) ups.push_back({random_shared(rng, 10.0), 0.1 + 100.0 * rng.uniform()});
    const auto out = aggregate(ups).flatten();
    double wsum = 0.0;
    for (const auto& u : ups) wsum += u.weight;
    std::vector<std::vector<double>> flat;
    for (const auto& u : ups) flat.push_back(u.params.flatten());
    for (std::size_t j = 0; j < out.size(); ++j) {
      double lo = flat[0][j], hi = flat[0][j], mean = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        lo = std::min(lo, flat[k][j]);
        hi = std::max(hi, flat[k][j]);
        mean += ups[k].weight * flat[k][j] / wsum;
      }
      CHECK(out[j] >= lo);
      CHECK(out[j] <= hi);
      CHECK(std::abs(out[j] - mean) < 1e-12 * std::max(1.0, std::abs(mean)) * 10.0);
    }
    std::vector<WeightedUpdate> perm = ups;
    rng.shuffle(perm.begin(), perm.end());
    const auto again = aggregate(perm).flatten();
    for (std::size_t j = 0; j < out.size(); ++j) CHECK(std::abs(again[j] - out[j]) < 1e-12 * 10.0);
  }
}

TEST_CASE("shared blocks carry no user rows") {
  Rng rng(3);
  GcfParams p = GcfParams::init(7, 5, 3, 2, rng);
  const SharedParams s = extract_shared(p);
  CHECK(s.size() == p.size() - static_cast<std::size_t>(p.user_emb.size()));
  GcfParams q = GcfParams::init(9, 5, 3, 2, rng);
  install_shared(q, s);
  CHECK(q.item_emb == p.item_emb);
  GcfParams wrong = GcfParams::init(7, 6, 3, 2, rng);
  CHECK_THROWS_AS(install_shared(wrong, s), FederationError);
}

TEST_CASE("methods") {
  for (Method m : {Method::kFedNgcf, Method::kFedGdve, Method::kFedGdveNoSl, Method::kFedGdveNoGdve,
                   Method::kCentralizedNgcf}) {
    CHECK(parse_method(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("fedavg"), FederationError);
  CHECK(losses_for(Method::kFedGdve) == LossSet::kBprStruc);
  CHECK(losses_for(Method::kFedGdveNoGdve) == LossSet::kBprStruc);
  CHECK(losses_for(Method::kFedGdveNoSl) == LossSet::kBpr);
  CHECK(losses_for(Method::kFedNgcf) == LossSet::kBpr);
  CHECK(uses_gdve(Method::kFedGdveNoSl));
  CHECK(!uses_gdve(Method::kFedGdveNoGdve));
}

TEST_CASE("round graphs") {
  const Setup s = small_setup(4, 1);
  FederationConfig cfg = small_config(Method::kFedNgcf);
  ClientState c = init_client(s.data[0], 0, s.global, cfg);
  const Index pl = c.data.train.num_users();
  CHECK(round_graph(c, s.global, Method::kFedNgcf).num_edges() == c.data.train.num_edges() + s.global.num_edges());
  CHECK(round_graph(c, s.global, Method::kFedGdveNoGdve).num_edges() ==
        c.data.train.num_edges() + s.global.num_edges());
  CHECK(round_graph(c, s.global, Method::kFedGdve).num_edges() == c.data.train.num_edges());
  c.selection.edges = {s.global.edges()[0], s.global.edges()[3]};
  const InteractionGraph g = round_graph(c, s.global, Method::kFedGdveNoSl);
  CHECK(g.num_edges() == c.data.train.num_edges() + 2);
  CHECK(g.num_users() == pl + s.global.num_users());
  // Held-out edges never enter a training graph.
  for (Method m : {Method::kFedNgcf, Method::kFedGdve}) {
    const InteractionGraph rg = round_graph(c, s.global, m);
    for (const Edge& e : c.data.test) CHECK(!rg.has_edge(e.user, e.item));
    for (const Edge& e : c.data.valid) CHECK(!rg.has_edge(e.user, e.item));
  }
}

TEST_CASE("local_round") {
  const Setup s = small_setup(5, 1);
  SUBCASE("zero epochs returns the incoming blocks") {
    FederationConfig cfg = small_config(Method::kFedNgcf);
    cfg.epochs_per_round = 0;
    ClientState c = init_client(s.data[0], 0, s.global, cfg);
    Rng rng(1);
    SharedParams incoming = extract_shared(GcfParams::init(c.model.num_users(), 12, 4, 2, rng));
    const LocalRoundResult r = local_round(c, incoming, s.global, cfg);
    CHECK(r.update.params == incoming);
    CHECK(r.update.weight == static_cast<double>(s.data[0].train.num_edges()));
  }
  SUBCASE("empty selection trains on local data alone") {
    FederationConfig cfg = small_config(Method::kFedGdve);
    ClientState a = init_client(s.data[0], 0, s.global, cfg);
    GcfParams b = a.model;
    Rng rb = a.rng;
    OptimizerState sb;
    const SharedParams start = extract_shared(a.model);
    local_round(a, start, s.global, cfg);
    const InteractionGraph local_only = merge(s.data[0].train, {}, s.global.num_users());
    train_epoch(b, local_only, normalize(local_only), cfg.gdve.train_options(LossSet::kBprStruc), rb, &sb);
    CHECK(a.model == b);
  }
  SUBCASE("fedngcf and the no-GDVE variant differ only through the structure term") {
    FederationConfig f = small_config(Method::kFedNgcf);
    FederationConfig g = small_config(Method::kFedGdveNoGdve);
    g.gdve.struc_weight = 0.0;
    ClientState a = init_client(s.data[0], 0, s.global, f);
    ClientState b = init_client(s.data[0], 0, s.global, g);
    const SharedParams start = extract_shared(a.model);
    local_round(a, start, s.global, f);
    local_round(b, start, s.global, g);
    CHECK(a.model == b.model);

    g.gdve.struc_weight = 1.0;
    ClientState c = init_client(s.data[0], 0, s.global, g);
    local_round(c, start, s.global, g);
    CHECK(!(c.model == a.model));
  }
}

TEST_CASE("single client without global data is plain training") {
  const Setup s = small_setup(6, 1);
  FederationConfig cfg = small_config(Method::kFedNgcf);
  cfg.rounds = 3;
  cfg.epochs_per_round = 2;
  const InteractionGraph none(0, 12, {});
  std::vector<ClientState> clients{init_client(s.data[0], 0, none, cfg)};
  GcfParams plain = clients[0].model;
  Rng rng = clients[0].rng;
  run_rounds(clients, none, cfg);

  OptimizerState st;
  const InteractionGraph& g = s.data[0].train;
  for (int e = 0; e < 6; ++e) train_epoch(plain, g, normalize(g), cfg.gdve.train_options(LossSet::kBpr), rng, &st);
  CHECK(clients[0].model == plain);
}

TEST_CASE("run_federation") {
  const Setup s = small_setup(7);
  SUBCASE("zero rounds") {
    FederationConfig cfg = small_config(Method::kFedGdve);
    cfg.rounds = 0;
    CHECK(run_federation(s.data, s.global, cfg).empty());
  }
  SUBCASE("deterministic reports in range") {
    for (Method m : {Method::kFedGdve, Method::kFedNgcf, Method::kFedGdveNoSl}) {
      const FederationConfig cfg = small_config(m);
      const auto a = run_federation(s.data, s.global, cfg);
      const auto b = run_federation(s.data, s.global, cfg);
      REQUIRE(a.size() == 3);
      for (std::size_t r = 0; r < a.size(); ++r) {
        CHECK(a[r].round == r + 1);
        CHECK(a[r].recall == b[r].recall);
        CHECK(a[r].ndcg == b[r].ndcg);
        CHECK(a[r].selected_ratio == b[r].selected_ratio);
        for (const auto& c : a[r].clients) {
          for (double v : {c.precision, c.recall, c.ndcg, c.selected_ratio}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
          }
        }
      }
    }
  }
  SUBCASE("workers do not change results") {
    FederationConfig cfg = small_config(Method::kFedGdve);
    const auto a = run_federation(s.data, s.global, cfg);
    cfg.workers = 3;
    const auto b = run_federation(s.data, s.global, cfg);
    for (std::size_t r = 0; r < a.size(); ++r) CHECK(a[r].recall == b[r].recall);
  }
  SUBCASE("failures name the client") {
    FederationConfig cfg = small_config(Method::kFedGdve);
    std::vector<ClientData> data = s.data;
    data[1].valid.clear();
    try {
      run_federation(data, s.global, cfg);
      FAIL("expected an error");
    } catch (const FederationError& e) {
      CHECK(std::string(e.what()).find("client 1") != std::string::npos);
    }
  }
}

TEST_CASE("summarize_round weights by test edges") {
  RoundReport r;
  r.clients = {{0, 0.1, 0.2, 0.3, 1, 0.5, 0, 0}, {1, 0.4, 0.8, 0.6, 3, 0.1, 0, 0}};
  summarize_round(r);
  CHECK(r.recall == doctest::Approx((0.2 + 3 * 0.8) / 4));
  CHECK(r.precision == doctest::Approx((0.1 + 3 * 0.4) / 4));
  CHECK(r.selected_ratio == doctest::Approx(0.3));
}

TEST_CASE("federation checkpoint round trip") {
  const Setup s = small_setup(8);
  FederationConfig cfg = small_config(Method::kFedGdve);
  cfg.rounds = 1;
  std::stringstream ss;
  run_federation(s.data, s.global, cfg, [&](const RoundReport& rep, const std::vector<ClientState>& clients) {
    write_federation_checkpoint(ss, rep.round, clients);
  });
  const FederationCheckpoint ck = read_federation_checkpoint(ss);
  CHECK(ck.round == 1);
  CHECK(ck.models.size() == 3);
  CHECK(ck.selections.size() == 3);
  std::stringstream bad("something else");
  CHECK_THROWS_AS(read_federation_checkpoint(bad), FederationError);
}

TEST_CASE("parallel_for") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t k) { hits[k] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t k) {
                    if (k == 5) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

}  // TEST_SUITE
