// Command-line driver: run / partition / eval.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedgdve/experiment.hpp"

namespace {

using namespace fedgdve;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::size_t workers = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--set", c.sets, "Override a config key (key=value), repeatable");
  sub->add_option("--workers", c.workers, "Cap on parallel client workers")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config, c.sets);
  if (c.workers > 0) cfg.workers = c.workers;
  cfg.validate();
  return cfg;
}

int cmd_run(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const ExperimentResult r = run_experiment(cfg);
  if (!r.reports.empty()) {
    const RoundReport& last = r.reports.back();
    std::printf("%s round %zu  P@%zu %.4f  R@%zu %.4f  N@%zu %.4f  selected %.4f\n", to_string(cfg.method).c_str(),
                last.round, cfg.eval_k, last.precision, cfg.eval_k, last.recall, cfg.eval_k, last.ndcg,
                last.selected_ratio);
  }
  std::printf("wrote %s\n", r.run_dir.c_str());
  return 0;
}

int cmd_partition(const Common& c, const std::string& out) {
  const ExperimentConfig cfg = resolve(c);
  const PreparedData d = prepare_data(cfg);
  std::filesystem::path path = out;
  if (path.empty()) {
    path = std::filesystem::path(resolve_output_dir(cfg)) / cfg.resolved_run_id() / "manifest.txt";
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError(path.string() + ": cannot write");
  write_manifest(os, d.partition.plan);

  const auto total = static_cast<double>(d.source.graph.num_edges());
  std::printf("users %d items %d edges %zu\n", d.source.graph.num_users(), d.source.graph.num_items(),
              d.source.graph.num_edges());
  std::printf("global users %zu edges %zu (%.4f)\n", d.partition.plan.global_users.size(),
              d.partition.global.graph.num_edges(), d.partition.global.graph.num_edges() / total);
  for (std::size_t k = 0; k < d.partition.clients.size(); ++k) {
    const auto& g = d.partition.clients[k].graph;
    std::printf("client %zu users %d edges %zu (%.4f)\n", k, g.num_users(), g.num_edges(), g.num_edges() / total);
  }
  std::printf("heterogeneity %.4f\n", heterogeneity_score(d.partition.plan, d.source.graph.user_degrees()));
  std::printf("wrote %s\n", path.string().c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  const ExperimentConfig cfg = resolve(c);
  const RoundReport r = evaluate_checkpoint(cfg, checkpoint);
  std::cout << kMetricsHeader << '\n';
  for (const auto& line : metrics_rows(cfg, r)) std::cout << line << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated graph recommendation with GDVE data selection"};
  app.require_subcommand(1);

  Common run_opts, part_opts, eval_opts;
  std::string manifest_out, checkpoint;

  auto* run = app.add_subcommand("run", "Run an experiment and write metrics.csv, manifest.txt, run.json");
  run->add_option("config", run_opts.config, "Config file")->required()->check(CLI::ExistingFile);
  add_common(run, run_opts);

  auto* part = app.add_subcommand("partition", "Emit the partition manifest only");
  part->add_option("config", part_opts.config, "Config file")->required()->check(CLI::ExistingFile);
  part->add_option("--out", manifest_out, "Manifest path (default <output_dir>/<run_id>/manifest.txt)");
  add_common(part, part_opts);

  auto* ev = app.add_subcommand("eval", "Evaluate a federation checkpoint on the config's test split");
  ev->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("config", eval_opts.config, "Config file")->required()->check(CLI::ExistingFile);
  add_common(ev, eval_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts);
    if (*part) return cmd_partition(part_opts, manifest_out);
    if (*ev) return cmd_eval(eval_opts, checkpoint);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: run: %s\n", e.what());
    return 1;
  }
  return 0;
}
