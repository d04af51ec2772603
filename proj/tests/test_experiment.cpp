#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unistd.h>

#include "fedgdve/experiment.hpp"
#include "test_support.hpp"

using namespace fedgdve;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("fedgdve_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name, const std::string& text) const {
    std::ofstream(path / name) << text;
    return (path / name).string();
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tab-separated rating rows over `users` x `items` with a few block preferences.
std::string synthetic_ratings(int users, int items, std::uint64_t seed) {
  Rng rng(seed);
  std::ostringstream out;
  for (int u = 1; u <= users; ++u) {
    const int base = (u % 4) * (items / 4);
    for (int k = 0; k < 8 + static_cast<int>(rng.uniform_index(6)); ++k) {
      const int item = 1 + (rng.uniform() < 0.8 ? base + static_cast<int>(rng.uniform_index(items / 4))
                                                 : static_cast<int>(rng.uniform_index(items)));
      out << u << '\t' << item << '\t' << 1 + rng.uniform_index(5) << '\t' << 880000000 + k << '\n';
    }
  }
  return out.str();
}

ExperimentConfig small_run(const std::string& dataset, const std::string& out_dir) {
  ExperimentConfig cfg = parse_config("dataset = " + dataset + "\noutput_dir = " + out_dir + "\n");
  cfg.method = Method::kFedNgcf;
  cfg.clients = 3;
  cfg.dim = 4;
  cfg.layers = 2;
  cfg.even_layers = {2};
  cfg.rounds = 2;
  cfg.epochs_per_round = 1;
  cfg.eval_k = 10;
  cfg.train_batch = 64;
  cfg.user_batch = 16;
  cfg.pretrain_epochs = 1;
  cfg.max_batches = 2;
  cfg.reward_k = 10;
  return cfg;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config defaults and parsing") {
  const ExperimentConfig d = parse_config("dataset = x.data\n");
  CHECK(d.dim == 64);
  CHECK(d.layers == 3);
  CHECK(d.even_layers == std::vector<int>{2});
  CHECK(d.tau == 0.1);
  CHECK(d.eta == 0.004);
  CHECK(d.gamma == 0.007);
  CHECK(d.user_batch == 1024);
  CHECK(d.clients == 10);
  CHECK(d.global_edge_frac == 0.5);
  CHECK(d.rounds == 30);
  CHECK(d.eval_k == 100);
  CHECK(d.method == Method::kFedGdve);

  const ExperimentConfig c = parse_config(
      "# comment\n\ndataset = a.txt  # trailing\nformat = edge_list\nmethod = fedngcf\nclients = 5\n"
      "even_layers = 1,2\nshared_encoder = true\nclients = 7\n",
      {"rounds=4", "partition = dirichlet"});
  CHECK(c.format == DatasetFormat::kEdgeList);
  CHECK(c.method == Method::kFedNgcf);
  CHECK(c.clients == 7);
  CHECK(c.even_layers == std::vector<int>{1, 2});
  CHECK(c.shared_encoder);
  CHECK(c.rounds == 4);
  CHECK(c.partition == PartitionMode::kDirichlet);
  CHECK(c.resolved_run_id() == "fedngcf-k7-dirichlet-s0");

  // Entries parse back to the same config.
  std::string text;
  for (const auto& [k, v] : config_entries(c)) text += k + " = " + v + "\n";
  CHECK(config_entries(parse_config(text)) == config_entries(c));
}

TEST_CASE("config errors name the key") {
  auto key_of = [](const std::string& text, const std::vector<std::string>& ov = {}) -> std::string {
    try {
      parse_config(text, ov);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return "";
  };
  CHECK(key_of("dataset = a\nbogus = 1\n") == "bogus");
  CHECK(key_of("dataset = a\nclients = many\n") == "clients");
  CHECK(key_of("dataset = a\nmethod = fedavg\n") == "method");
  CHECK(key_of("dataset = a\nnot a pair\n") == "not a pair");
  CHECK(key_of("dataset = a", {"shared_encoder=maybe"}) == "shared_encoder");

  auto invalid = [](const std::vector<std::string>& ov) -> std::string {
    ExperimentConfig c = parse_config("dataset = a\n", ov);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return "";
  };
  CHECK(invalid({}).empty());
  CHECK(invalid({"train_frac=0.7"}) == "train_frac");
  CHECK(invalid({"eval_k=0"}) == "eval_k");
  CHECK(invalid({"tau=0"}) == "tau");
  CHECK(invalid({"eta=-1"}) == "eta");
  CHECK(invalid({"gamma=0"}) == "gamma");
  CHECK(invalid({"global_edge_frac=1"}) == "global_edge_frac");
  CHECK(invalid({"clients=0"}) == "clients");
  CHECK(invalid({"even_layers=4"}) == "even_layers");
  CHECK(invalid({"ema_decay=1"}) == "ema_decay");
  CHECK(invalid({"run_id=a/b"}) == "run_id");
  CHECK(invalid({"dataset="}) == "dataset");

  try {
    load_config("/nonexistent/config.conf");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("cannot open") != std::string::npos);
  }
}

TEST_CASE("shipped configs parse and validate") {
  for (const char* name : {"ml100k_fedgdve.conf", "ml100k_centralized.conf", "ml100k_dirichlet.conf", "gowalla.conf",
                           "yelp2018.conf"}) {
    const ExperimentConfig c = load_config(std::string(FEDGDVE_SOURCE_DIR) + "/configs/" + name);
    CHECK_NOTHROW(c.validate());
  }
  CHECK(load_config(std::string(FEDGDVE_SOURCE_DIR) + "/configs/gowalla.conf").format == DatasetFormat::kEdgeList);
}

TEST_CASE("movielens loader") {
  TempDir tmp;
  const auto three = tmp.file("three.data", "1\t10\t5\t881250949\n2\t10\t3\t881250950\n1\t20\t4.5\t881250951\n");
  const LoadedGraph g = load_movielens(three);
  CHECK(g.graph.num_edges() == 3);
  CHECK(g.graph.num_users() == 2);
  CHECK(g.graph.num_items() == 2);
  CHECK(g.rows == 3);

  const auto dup = tmp.file("dup.data", "1\t10\t5\t1\n1\t10\t2\t2\n");
  CHECK(load_movielens(dup).graph.num_edges() == 1);

  const auto bad = tmp.file("bad.data", "1\t10\t5\t1\n1\tx\t5\t1\n");
  try {
    load_movielens(bad);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  const auto short_row = tmp.file("short.data", "1\t10\t5\n");
  CHECK_THROWS_AS(load_movielens(short_row), DataError);
  CHECK_THROWS_AS(load_movielens((tmp.path / "missing").string()), DataError);
}

TEST_CASE("ml-100k ingest") {
  if (!fs::exists(testing::ml100k_path())) {
    MESSAGE("ml-100k not found, skipped");
    return;
  }
  const LoadedGraph g = load_movielens(testing::ml100k_path());
  CHECK(g.graph.num_users() == 943);
  CHECK(g.graph.num_items() == 1682);
  CHECK((g.graph.num_edges() == 100000 || g.graph.num_edges() == 99975));
}

TEST_CASE("edge list loader") {
  TempDir tmp;
  CHECK(load_edge_list(tmp.file("one.txt", "7 9\n")).graph.num_edges() == 1);
  const LoadedGraph empty = load_edge_list(tmp.file("c.txt", "# nothing\n# here\n\n"));
  CHECK(empty.graph.num_edges() == 0);
  const LoadedGraph multi = load_edge_list(tmp.file("m.txt", "0 1 2 3\n1 2\n"));
  CHECK(multi.graph.num_edges() == 4);
  CHECK(multi.graph.num_users() == 2);
  CHECK_THROWS_AS(load_edge_list(tmp.file("b.txt", "0 1\n5\n")), DataError);
  CHECK_THROWS_AS(load_edge_list(tmp.file("b2.txt", "0 q\n")), DataError);
}

TEST_CASE("edge list ingestion survives shuffling") {
  // Gowalla / Yelp2018 style files, one pair per line and one user per line.
  Rng rng(5);
  const InteractionGraph src = testing::random_graph(60, 80, 0.08, rng);
  std::vector<std::string> pair_lines, user_lines;
  for (const Edge& e : src.edges()) pair_lines.push_back(std::to_string(e.user * 3 + 11) + " " + std::to_string(e.item * 7));
  for (Index u = 0; u < src.num_users(); ++u) {
    std::string line = std::to_string(u);
    for (Index i : src.items_of(u)) line += " " + std::to_string(i);
    user_lines.push_back(line);
  }
  TempDir tmp;
  for (auto* lines : {&pair_lines, &user_lines}) {
    std::string a, b;
    for (const auto& l : *lines) a += l + "\n";
    rng.shuffle(lines->begin(), lines->end());
    for (const auto& l : *lines) b += l + "\n";
    const LoadedGraph ga = load_edge_list(tmp.file("a.txt", a));
    const LoadedGraph gb = load_edge_list(tmp.file("b.txt", b));
    CHECK(ga.graph.num_edges() == src.num_edges());
    CHECK(gb.graph.num_edges() == src.num_edges());
    CHECK(sorted(ga.graph.user_degrees()) == sorted(gb.graph.user_degrees()));
    CHECK(sorted(ga.graph.item_degrees()) == sorted(gb.graph.item_degrees()));
    CHECK(sorted(gb.graph.user_degrees()) == sorted(src.user_degrees()));
    // Raw ids map back to the same edge set.
    std::vector<std::pair<std::string, std::string>> ea, eb;
    for (const Edge& e : ga.graph.edges()) ea.push_back({ga.ids.users.raw_of(e.user), ga.ids.items.raw_of(e.item)});
    for (const Edge& e : gb.graph.edges()) eb.push_back({gb.ids.users.raw_of(e.user), gb.ids.items.raw_of(e.item)});
    std::sort(ea.begin(), ea.end());
    std::sort(eb.begin(), eb.end());
    CHECK(ea == eb);
  }
}

TEST_CASE("split_holdout") {
  std::vector<Edge> edges;
  for (Index i = 0; i < 10; ++i) edges.push_back({0, i});
  edges.push_back({1, 0});
  edges.push_back({1, 1});
  for (Index i = 0; i < 5; ++i) edges.push_back({2, i});
  const InteractionGraph g(3, 10, edges);
  Rng rng(1);
  const HoldoutSplit s = split_holdout(g, 0.8, 0.1, 0.1, rng);
  auto count = [](const std::vector<Edge>& v, Index u) { return std::count_if(v.begin(), v.end(), [&](const Edge& e) { return e.user == u; }); };
  CHECK(count(s.train, 0) == 8);
  CHECK(count(s.valid, 0) == 1);
  CHECK(count(s.test, 0) == 1);
  CHECK(count(s.train, 1) == 2);
  CHECK(count(s.valid, 1) == 0);
  CHECK(count(s.test, 1) == 0);
  CHECK(count(s.train, 2) >= 1);

  std::vector<Edge> all = s.train;
  all.insert(all.end(), s.valid.begin(), s.valid.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  CHECK(all == g.edges());

  Rng bad(1);
  CHECK_THROWS_AS(split_holdout(g, 0.5, 0.1, 0.1, bad), ConfigError);
}

TEST_CASE("run_experiment outputs") {
  TempDir tmp;
  const std::string data = tmp.file("ratings.data", synthetic_ratings(80, 40, 3));
  ExperimentConfig cfg = small_run(data, (tmp.path / "runs").string());
  cfg.checkpoint_every = 2;

  const ExperimentResult a = run_experiment(cfg);
  const fs::path dir = a.run_dir;
  const std::string csv = slurp(dir / "metrics.csv");
  CHECK(csv.substr(0, csv.find('\n')) == kMetricsHeader);
  CHECK(csv.find(",summary,recall@10,") != std::string::npos);
  CHECK(csv.find(",client2,ndcg@10,") != std::string::npos);
  CHECK(a.reports.size() == 2);

  // Same seed, byte-identical CSV.
  ExperimentConfig twin = cfg;
  twin.output_dir = (tmp.path / "twin").string();
  const ExperimentResult b = run_experiment(twin);
  CHECK(slurp(fs::path(b.run_dir) / "metrics.csv") == csv);

  const auto meta = nlohmann::json::parse(slurp(dir / "run.json"));
  CHECK(meta["config"]["method"] == "fedngcf");
  CHECK(meta.contains("code_version"));
  CHECK(meta["deviations"]["optimizer_adam"] == true);
  CHECK(meta["final"]["round"] == 2);

  // The checkpoint reproduces the final round's metrics.
  const RoundReport again = evaluate_checkpoint(cfg, (dir / "checkpoint_round2.txt").string());
  CHECK(again.recall == doctest::Approx(a.reports.back().recall).epsilon(1e-12));
  CHECK(again.ndcg == doctest::Approx(a.reports.back().ndcg).epsilon(1e-12));

  // Re-running from the manifest reproduces the client graphs.
  ExperimentConfig from_manifest = cfg;
  from_manifest.manifest = (dir / "manifest.txt").string();
  from_manifest.seed = cfg.seed;
  const PreparedData p1 = prepare_data(cfg);
  const PreparedData p2 = prepare_data(from_manifest);
  REQUIRE(p1.clients.size() == p2.clients.size());
  for (std::size_t k = 0; k < p1.clients.size(); ++k) {
    CHECK(p1.clients[k].train.edges() == p2.clients[k].train.edges());
    CHECK(p1.clients[k].test == p2.clients[k].test);
  }
  CHECK(p1.partition.global.graph.edges() == p2.partition.global.graph.edges());
}

TEST_CASE("output directory override") {
  TempDir tmp;
  const std::string data = tmp.file("ratings.data", synthetic_ratings(40, 20, 4));
  ExperimentConfig cfg = small_run(data, (tmp.path / "ignored").string());
  cfg.rounds = 1;
  const std::string env = (tmp.path / "env").string();
  ::setenv("FEDGDVE_OUTPUT_DIR", env.c_str(), 1);
  const ExperimentResult r = run_experiment(cfg);
  ::unsetenv("FEDGDVE_OUTPUT_DIR");
  CHECK(fs::exists(fs::path(env) / cfg.resolved_run_id() / "metrics.csv"));
  CHECK(!fs::exists(tmp.path / "ignored"));
  (void)r;
}

TEST_CASE("client sweep emits one summary block per run") {
  TempDir tmp;
  const std::string data = tmp.file("ratings.data", synthetic_ratings(240, 40, 5));
  for (std::size_t k : {5, 10, 20, 50}) {
    ExperimentConfig cfg = small_run(data, (tmp.path / "runs").string());
    cfg.clients = k;
    cfg.rounds = 1;
    const ExperimentResult r = run_experiment(cfg);
    const std::string csv = slurp(fs::path(r.run_dir) / "metrics.csv");
    std::size_t summaries = 0;
    for (std::size_t p = csv.find(",summary,"); p != std::string::npos; p = csv.find(",summary,", p + 1)) ++summaries;
    CHECK(summaries == 4);
    CHECK(csv.find(",client" + std::to_string(k - 1) + ",") != std::string::npos);
  }
}

TEST_CASE("gdve methods run end to end") {
  TempDir tmp;
  const std::string data = tmp.file("ratings.data", synthetic_ratings(60, 30, 6));
  for (Method m : {Method::kFedGdve, Method::kFedGdveNoSl, Method::kFedGdveNoGdve, Method::kCentralizedNgcf}) {
    ExperimentConfig cfg = small_run(data, (tmp.path / "runs").string());
    cfg.method = m;
    const ExperimentResult r = run_experiment(cfg);
    REQUIRE(r.reports.size() == 2);
    const double ratio = r.reports.back().selected_ratio;
    CHECK(ratio >= 0.0);
    CHECK(ratio <= 1.0);
    if (m == Method::kCentralizedNgcf) CHECK(r.reports.back().clients.size() == 1);
  }
}

}  // TEST_SUITE
