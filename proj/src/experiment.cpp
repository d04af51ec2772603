#include "fedgdve/experiment.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "fedgdve/evaluation.hpp"

#ifndef FEDGDVE_VERSION
#define FEDGDVE_VERSION "dev"
#endif

namespace fedgdve {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_real(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x)) throw ConfigError(key, "'" + v + "' is not a real number");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key, "'" + v + "' is not an integer");
  return x;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < 0) throw ConfigError(key, "must be non-negative");
  return static_cast<std::size_t>(x);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  if (v.empty() || v[0] == '-') throw ConfigError(key, "'" + v + "' is not an unsigned integer");
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) throw ConfigError(key, "'" + v + "' is not an unsigned integer");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "'" + v + "' is not a boolean");
}

std::string fmt_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_value(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define REAL_FIELD(name) \
  {#name, {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.name = to_real(k, v); }, \
           [](const ExperimentConfig& c) { return fmt_real(c.name); }}}
#define COUNT_FIELD(name) \
  {#name, {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.name = to_count(k, v); }, \
           [](const ExperimentConfig& c) { return std::to_string(c.name); }}}
#define INT_FIELD(name) \
  {#name, {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.name = static_cast<int>(to_int(k, v)); }, \
           [](const ExperimentConfig& c) { return std::to_string(c.name); }}}
#define BOOL_FIELD(name) \
  {#name, {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.name = to_bool(k, v); }, \
           [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); }}}
#define STRING_FIELD(name) \
  {#name, {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.name = v; }, \
           [](const ExperimentConfig& c) { return c.name; }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      STRING_FIELD(dataset),
      {"format",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "movielens") c.format = DatasetFormat::kMovieLens;
          else if (v == "edge_list") c.format = DatasetFormat::kEdgeList;
          else throw ConfigError(k, "expected movielens or edge_list, got '" + v + "'");
        },
        [](const ExperimentConfig& c) {
          return std::string(c.format == DatasetFormat::kMovieLens ? "movielens" : "edge_list");
        }}},
      {"method",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          try {
            c.method = parse_method(v);
          } catch (const FederationError& e) {
            throw ConfigError(k, e.what());
          }
        },
        [](const ExperimentConfig& c) { return to_string(c.method); }}},
      COUNT_FIELD(clients),
      REAL_FIELD(global_edge_frac),
      {"partition",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          try {
            c.partition = parse_partition_mode(v);
          } catch (const PartitionError& e) {
            throw ConfigError(k, e.what());
          }
        },
        [](const ExperimentConfig& c) { return to_string(c.partition); }}},
      REAL_FIELD(concentration),
      STRING_FIELD(manifest),
      INT_FIELD(dim),
      INT_FIELD(layers),
      {"even_layers",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.even_layers.clear();
          std::stringstream ss(v);
          std::string tok;
          while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (!tok.empty()) c.even_layers.push_back(static_cast<int>(to_int(k, tok)));
          }
        },
        [](const ExperimentConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.even_layers.size(); ++i) s += (i ? "," : "") + std::to_string(c.even_layers[i]);
          return s;
        }}},
      REAL_FIELD(tau),
      REAL_FIELD(lambda),
      REAL_FIELD(eta),
      REAL_FIELD(gamma),
      REAL_FIELD(struc_weight),
      {"optimizer",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "adam") c.optimizer = Optimizer::kAdam;
          else if (v == "sgd") c.optimizer = Optimizer::kSgd;
          else throw ConfigError(k, "expected adam or sgd, got '" + v + "'");
        },
        [](const ExperimentConfig& c) { return std::string(c.optimizer == Optimizer::kAdam ? "adam" : "sgd"); }}},
      COUNT_FIELD(user_batch),
      COUNT_FIELD(train_batch),
      INT_FIELD(epochs_per_round),
      COUNT_FIELD(rounds),
      COUNT_FIELD(eval_k),
      REAL_FIELD(train_frac),
      REAL_FIELD(valid_frac),
      REAL_FIELD(test_frac),
      INT_FIELD(pretrain_epochs),
      COUNT_FIELD(max_batches),
      COUNT_FIELD(plateau_window),
      REAL_FIELD(plateau_tol),
      REAL_FIELD(ema_decay),
      COUNT_FIELD(reward_k),
      BOOL_FIELD(shared_encoder),
      {"seed",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
        [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
      STRING_FIELD(output_dir),
      STRING_FIELD(run_id),
      COUNT_FIELD(workers),
      BOOL_FIELD(timing),
      COUNT_FIELD(checkpoint_every),
  };
  return table;
}

#undef REAL_FIELD
#undef COUNT_FIELD
#undef INT_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

void apply_line(ExperimentConfig& cfg, const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(trim(line), where + "expected key = value");
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError("", where + "missing key");
  set_config_value(cfg, key, value);
}

bool is_unsigned_integer(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s) {
    if (ch < '0' || ch > '9') return false;
  }
  return true;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  return in;
}

LoadedGraph finish(std::vector<RawEdge>& raw, std::size_t rows) {
  LoadedGraph out;
  auto [g, ids] = build_graph(raw, true);
  out.graph = std::move(g);
  out.ids = std::move(ids);
  out.rows = rows;
  return out;
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError(key, "unknown key");
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, f] : fields()) out.emplace_back(name, f.get(cfg));
  return out;
}

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    apply_line(cfg, line, "line " + std::to_string(lineno) + ": ");
  }
  for (const auto& o : overrides) apply_line(cfg, o, "override: ");
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

void ExperimentConfig::validate() const {
  auto unit_open = [](const char* key, double x) {
    if (!(x > 0.0 && x < 1.0)) throw ConfigError(key, "must lie in (0, 1)");
  };
  auto positive = [](const char* key, double x) {
    if (!(x > 0.0)) throw ConfigError(key, "must be positive");
  };
  if (dataset.empty()) throw ConfigError("dataset", "path is required");
  if (clients < 1) throw ConfigError("clients", "must be at least 1");
  if (!(global_edge_frac >= 0.0 && global_edge_frac < 1.0)) throw ConfigError("global_edge_frac", "must lie in [0, 1)");
  positive("concentration", concentration);
  if (dim < 1) throw ConfigError("dim", "must be at least 1");
  if (layers < 0) throw ConfigError("layers", "must be non-negative");
  for (int l : even_layers) {
    if (l < 1 || l > layers) throw ConfigError("even_layers", "layer " + std::to_string(l) + " outside [1, layers]");
  }
  const bool needs_struc = losses_for(method) == LossSet::kBprStruc || uses_gdve(method);
  if (needs_struc && even_layers.empty()) throw ConfigError("even_layers", "must be non-empty for this method");
  positive("tau", tau);
  if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be non-negative");
  positive("eta", eta);
  positive("gamma", gamma);
  if (!(struc_weight >= 0.0)) throw ConfigError("struc_weight", "must be non-negative");
  if (user_batch < 1) throw ConfigError("user_batch", "must be at least 1");
  if (train_batch < 1) throw ConfigError("train_batch", "must be at least 1");
  if (epochs_per_round < 0) throw ConfigError("epochs_per_round", "must be non-negative");
  if (eval_k < 1) throw ConfigError("eval_k", "must be at least 1");
  if (reward_k < 1) throw ConfigError("reward_k", "must be at least 1");
  unit_open("train_frac", train_frac);
  unit_open("valid_frac", valid_frac);
  unit_open("test_frac", test_frac);
  if (std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9) {
    throw ConfigError("train_frac", "train_frac + valid_frac + test_frac must equal 1");
  }
  if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs", "must be non-negative");
  if (!(plateau_tol >= 0.0)) throw ConfigError("plateau_tol", "must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay", "must lie in [0, 1)");
  if (workers < 1) throw ConfigError("workers", "must be at least 1");
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  for (char ch : run_id) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) {
      throw ConfigError("run_id", "only letters, digits, '-', '_' and '.' are allowed");
    }
  }
}

std::string ExperimentConfig::resolved_run_id() const {
  if (!run_id.empty()) return run_id;
  return to_string(method) + "-k" + std::to_string(clients) + "-" + to_string(partition) + "-s" + std::to_string(seed);
}

GdveConfig ExperimentConfig::gdve() const {
  GdveConfig g;
  g.dim = dim;
  g.num_layers = layers;
  g.even_layers = even_layers;
  g.eta = eta;
  g.gamma = gamma;
  g.lambda = lambda;
  g.tau = tau;
  g.struc_weight = struc_weight;
  g.optimizer = optimizer;
  g.user_batch = user_batch;
  g.train_batch = train_batch;
  g.pretrain_epochs = pretrain_epochs;
  g.max_batches = max_batches;
  g.plateau_window = plateau_window;
  g.plateau_tol = plateau_tol;
  g.ema_decay = ema_decay;
  g.reward_k = reward_k;
  return g;
}

FederationConfig ExperimentConfig::federation() const {
  FederationConfig f;
  f.method = method;
  f.rounds = rounds;
  f.epochs_per_round = epochs_per_round;
  f.eval_k = eval_k;
  f.workers = workers;
  f.shared_encoder = shared_encoder;
  f.seed = seed;
  f.gdve = gdve();
  return f;
}

LoadedGraph load_movielens(const std::string& path) {
  std::ifstream in = open_input(path);
  std::vector<RawEdge> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) cols.push_back(tok);
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (cols.size() != 4) {
      throw DataError(where + "expected 4 tab-separated fields, got " + std::to_string(cols.size()));
    }
    if (!is_unsigned_integer(cols[0])) throw DataError(where + "user id '" + cols[0] + "' is not an integer");
    if (!is_unsigned_integer(cols[1])) throw DataError(where + "item id '" + cols[1] + "' is not an integer");
    char* end = nullptr;
    std::strtod(cols[2].c_str(), &end);
    if (cols[2].empty() || *end != '\0') throw DataError(where + "rating '" + cols[2] + "' is not a number");
    if (!is_unsigned_integer(cols[3])) throw DataError(where + "timestamp '" + cols[3] + "' is not an integer");
    raw.push_back({cols[0], cols[1]});
  }
  return finish(raw, raw.size());
}

LoadedGraph load_edge_list(const std::string& path) {
  std::ifstream in = open_input(path);
  std::vector<RawEdge> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::stringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    // "user item" rows; longer rows list several items of one user.
    if (tok.size() < 2) throw DataError(where + "expected a user followed by at least one item");
    for (const auto& t : tok) {
      if (!is_unsigned_integer(t)) throw DataError(where + "id '" + t + "' is not an integer");
    }
    for (std::size_t k = 1; k < tok.size(); ++k) raw.push_back({tok[0], tok[k]});
  }
  return finish(raw, raw.size());
}

LoadedGraph load_dataset(const ExperimentConfig& cfg) {
  return cfg.format == DatasetFormat::kMovieLens ? load_movielens(cfg.dataset) : load_edge_list(cfg.dataset);
}

HoldoutSplit split_holdout(const InteractionGraph& graph, double train_frac, double valid_frac, double test_frac,
                           Rng& rng) {
  if (train_frac <= 0.0 || valid_frac < 0.0 || test_frac < 0.0 ||
      std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9) {
    throw ConfigError("train_frac", "holdout fractions must be non-negative, train positive, summing to 1");
  }
  HoldoutSplit out;
  auto take = [](double frac, std::size_t n) -> std::size_t {
    if (frac <= 0.0) return 0;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))));
  };
  for (Index u = 0; u < graph.num_users(); ++u) {
    auto items = graph.items_of(u);
    std::vector<Index> order(items.begin(), items.end());
    if (order.size() < 3) {
      for (Index i : order) out.train.push_back({u, i});
      continue;
    }
    rng.shuffle(order.begin(), order.end());
    const std::size_t n = order.size();
    std::size_t nv = take(valid_frac, n);
    std::size_t nt = take(test_frac, n);
    while (nv + nt > n - 1) {
      if (nt >= nv && nt > 0) --nt;
      else --nv;
    }
    std::size_t k = 0;
    for (; k < nv; ++k) out.valid.push_back({u, order[k]});
    for (; k < nv + nt; ++k) out.test.push_back({u, order[k]});
    for (; k < n; ++k) out.train.push_back({u, order[k]});
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.valid.begin(), out.valid.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData d;
  d.source = load_dataset(cfg);
  const Rng root(cfg.seed);
  if (!cfg.manifest.empty()) {
    std::ifstream in(cfg.manifest);
    if (!in) throw DataError(cfg.manifest + ": cannot open manifest");
    d.partition = apply_plan(d.source.graph, read_manifest(in));
  } else {
    Rng prng = child(root, Stream::kPartition);
    if (cfg.method == Method::kCentralizedNgcf) {
      d.partition = global_local_split(d.source.graph, 0.0, 1, PartitionMode::kUniform, cfg.concentration, prng);
    } else {
      d.partition = global_local_split(d.source.graph, cfg.global_edge_frac, cfg.clients, cfg.partition,
                                       cfg.concentration, prng);
    }
    d.partition.plan.seed = cfg.seed;
  }
  const Rng holdout = child(root, Stream::kHoldout);
  for (std::size_t k = 0; k < d.partition.clients.size(); ++k) {
    const InteractionGraph& g = d.partition.clients[k].graph;
    Rng r = holdout.child(k);
    HoldoutSplit s = split_holdout(g, cfg.train_frac, cfg.valid_frac, cfg.test_frac, r);
    d.clients.push_back({InteractionGraph(g.num_users(), g.num_items(), s.train), std::move(s.valid),
                         std::move(s.test)});
  }
  return d;
}

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("FEDGDVE_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return cfg.output_dir;
}

std::vector<std::string> metrics_rows(const ExperimentConfig& cfg, const RoundReport& report) {
  std::vector<std::string> rows;
  const std::string k = std::to_string(cfg.eval_k);
  const std::string prefix =
      cfg.resolved_run_id() + "," + to_string(cfg.method) + "," + std::to_string(cfg.seed) + "," +
      std::to_string(report.round) + ",";
  const std::string secs = cfg.timing ? fmt_value(report.seconds) : "0";
  auto row = [&](const std::string& scope, const std::string& metric, double v) {
    rows.push_back(prefix + scope + "," + metric + "," + fmt_value(v) + "," + secs);
  };
  for (const auto& c : report.clients) {
    const std::string scope = "client" + std::to_string(c.client);
    row(scope, "precision@" + k, c.precision);
    row(scope, "recall@" + k, c.recall);
    row(scope, "ndcg@" + k, c.ndcg);
    row(scope, "selected_ratio", c.selected_ratio);
    row(scope, "bpr_loss", c.bpr_loss);
    row(scope, "struc_loss", c.struc_loss);
  }
  row("aggregate", "precision@" + k, report.precision);
  row("aggregate", "recall@" + k, report.recall);
  row("aggregate", "ndcg@" + k, report.ndcg);
  row("aggregate", "selected_ratio", report.selected_ratio);
  return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedData data = prepare_data(cfg);
  const FederationConfig fcfg = cfg.federation();

  ExperimentResult result;
  const fs::path dir = fs::path(resolve_output_dir(cfg)) / cfg.resolved_run_id();
  fs::create_directories(dir);
  result.run_dir = dir.string();
  {
    std::ofstream m(dir / "manifest.txt");
    write_manifest(m, data.partition.plan);
  }

  std::ofstream csv(dir / "metrics.csv");
  if (!csv) throw DataError((dir / "metrics.csv").string() + ": cannot write");
  csv << kMetricsHeader << '\n';
  auto on_round = [&](const RoundReport& r, const std::vector<ClientState>& clients) {
    for (const auto& line : metrics_rows(cfg, r)) csv << line << '\n';
    csv.flush();
    if (cfg.checkpoint_every > 0 && r.round % cfg.checkpoint_every == 0) {
      std::ofstream ck(dir / ("checkpoint_round" + std::to_string(r.round) + ".txt"));
      write_federation_checkpoint(ck, r.round, clients);
    }
  };
  result.reports = run_federation(std::move(data.clients), data.partition.global.graph, fcfg, on_round);

  if (!result.reports.empty()) {
    RoundReport summary = result.reports.back();
    summary.clients.clear();
    const std::string k = std::to_string(cfg.eval_k);
    const std::string prefix = cfg.resolved_run_id() + "," + to_string(cfg.method) + "," +
                               std::to_string(cfg.seed) + "," + std::to_string(summary.round) + ",summary,";
    double total = 0.0;
    for (const auto& r : result.reports) total += r.seconds;
    const std::string secs = cfg.timing ? fmt_value(total) : "0";
    csv << prefix << "precision@" << k << ',' << fmt_value(summary.precision) << ',' << secs << '\n';
    csv << prefix << "recall@" << k << ',' << fmt_value(summary.recall) << ',' << secs << '\n';
    csv << prefix << "ndcg@" << k << ',' << fmt_value(summary.ndcg) << ',' << secs << '\n';
    csv << prefix << "selected_ratio," << fmt_value(summary.selected_ratio) << ',' << secs << '\n';
  }

  nlohmann::ordered_json meta;
  meta["run_id"] = cfg.resolved_run_id();
  meta["code_version"] = code_version();
  nlohmann::ordered_json conf;
  for (const auto& [key, value] : config_entries(cfg)) conf[key] = value;
  meta["config"] = conf;
  meta["dataset"] = {{"rows", data.source.rows},
                     {"users", data.source.graph.num_users()},
                     {"items", data.source.graph.num_items()},
                     {"edges", data.source.graph.num_edges()}};
  meta["partition"] = {{"global_users", data.partition.plan.global_users.size()},
                       {"global_edges", data.partition.global.graph.num_edges()},
                       {"heterogeneity",
                        heterogeneity_score(data.partition.plan, data.source.graph.user_degrees())}};
  meta["deviations"] = {
      {"optimizer_adam", cfg.optimizer == Optimizer::kAdam},
      {"shared_encoder", cfg.shared_encoder},
      {"candidates_observed_edges_only", true},
      {"user_rows_not_aggregated", true},
      {"holdout_after_partition", true},
  };
  if (!result.reports.empty()) {
    const RoundReport& last = result.reports.back();
    meta["final"] = {{"round", last.round},
                     {"precision", last.precision},
                     {"recall", last.recall},
                     {"ndcg", last.ndcg},
                     {"selected_ratio", last.selected_ratio}};
  }
  std::ofstream(dir / "run.json") << meta.dump(2) << '\n';
  return result;
}

RoundReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  PreparedData data = prepare_data(cfg);
  const FederationConfig fcfg = cfg.federation();
  std::ifstream in(checkpoint_path);
  if (!in) throw DataError(checkpoint_path + ": cannot open checkpoint");
  const FederationCheckpoint ck = read_federation_checkpoint(in);
  if (ck.models.size() != data.clients.size()) {
    throw DataError(checkpoint_path + ": checkpoint holds " + std::to_string(ck.models.size()) +
                    " clients, config yields " + std::to_string(data.clients.size()));
  }
  const InteractionGraph& global = data.partition.global.graph;
  RoundReport rep;
  rep.round = ck.round;
  for (std::size_t k = 0; k < data.clients.size(); ++k) {
    ClientState c = init_client(std::move(data.clients[k]), k, global, fcfg);
    if (!ck.models[k].same_shape(c.model)) {
      throw DataError(checkpoint_path + ": client " + std::to_string(k) + " parameters do not match the config");
    }
    c.model = ck.models[k];
    c.selection.edges = ck.selections[k];
    ClientRoundMetrics m = evaluate_client(c, global, fcfg);
    if (uses_gdve(cfg.method) && global.num_edges() > 0) {
      m.selected_ratio = static_cast<double>(c.selection.edges.size()) / static_cast<double>(global.num_edges());
    }
    rep.clients.push_back(m);
  }
  summarize_round(rep);
  return rep;
}

std::string code_version() { return FEDGDVE_VERSION; }

}  // namespace fedgdve
