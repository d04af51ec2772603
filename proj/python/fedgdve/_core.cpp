// Python bindings. Dense matrices cross the boundary as float64 numpy
// arrays; edge lists as (n, 2) integer arrays of (user, item).

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>

#include "fedgdve/evaluation.hpp"
#include "fedgdve/experiment.hpp"
#include "fedgdve/federation.hpp"
#include "fedgdve/gcf_model.hpp"
#include "fedgdve/partitioning.hpp"

namespace py = pybind11;
using namespace fedgdve;

namespace {

using IndexArray = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 2, Eigen::RowMajor>;

std::vector<Edge> to_edges(const IndexArray& a) {
  std::vector<Edge> out;
  out.reserve(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index r = 0; r < a.rows(); ++r) out.push_back({static_cast<Index>(a(r, 0)), static_cast<Index>(a(r, 1))});
  return out;
}

IndexArray from_edges(const std::vector<Edge>& edges) {
  IndexArray a(static_cast<Eigen::Index>(edges.size()), 2);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    a(static_cast<Eigen::Index>(k), 0) = edges[k].user;
    a(static_cast<Eigen::Index>(k), 1) = edges[k].item;
  }
  return a;
}

py::dict report_dict(const RoundReport& r) {
  py::list clients;
  for (const auto& c : r.clients) {
    py::dict d;
    d["client"] = c.client;
    d["precision"] = c.precision;
    d["recall"] = c.recall;
    d["ndcg"] = c.ndcg;
    d["test_edges"] = c.test_edges;
    d["selected_ratio"] = c.selected_ratio;
    d["bpr_loss"] = c.bpr_loss;
    d["struc_loss"] = c.struc_loss;
    clients.append(d);
  }
  py::dict d;
  d["round"] = r.round;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["ndcg"] = r.ndcg;
  d["selected_ratio"] = r.selected_ratio;
  d["clients"] = clients;
  return d;
}

std::vector<std::string> overrides_of(const std::map<std::string, std::string>& values) {
  std::vector<std::string> out;
  for (const auto& [k, v] : values) out.push_back(k + "=" + v);
  return out;
}

RankedList ranked(const std::vector<Index>& items) {
  RankedList r;
  r.items = items;
  return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated graph recommendation with learned data selection";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<EvaluationError>(m, "EvaluationError", PyExc_ValueError);
  py::register_exception<PartitionError>(m, "PartitionError", PyExc_ValueError);

  m.def("code_version", &code_version);

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def("set", &set_config_value, py::arg("key"), py::arg("value"))
      .def("entries",
           [](const ExperimentConfig& c) {
             py::dict d;
             for (const auto& [k, v] : config_entries(c)) d[py::str(k)] = v;
             return d;
           })
      .def("validate", &ExperimentConfig::validate)
      .def_property_readonly("run_id", &ExperimentConfig::resolved_run_id)
      .def("__repr__", [](const ExperimentConfig& c) { return "<Config " + c.resolved_run_id() + ">"; });

  m.def(
      "parse_config",
      [](const std::string& text, const std::map<std::string, std::string>& overrides) {
        return parse_config(text, overrides_of(overrides));
      },
      py::arg("text"), py::arg("overrides") = std::map<std::string, std::string>{});
  m.def(
      "load_config",
      [](const std::string& path, const std::map<std::string, std::string>& overrides) {
        return load_config(path, overrides_of(overrides));
      },
      py::arg("path"), py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "run_experiment",
      [](const ExperimentConfig& cfg) {
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg);
        }
        py::list reports;
        for (const auto& rep : r.reports) reports.append(report_dict(rep));
        py::dict d;
        d["run_dir"] = r.run_dir;
        d["rounds"] = reports;
        return d;
      },
      py::arg("config"), "Runs every round and writes the run directory; returns the per-round metrics.");

  m.def(
      "load_dataset",
      [](const std::string& path, const std::string& format) {
        const LoadedGraph g = format == "edge_list" ? load_edge_list(path) : load_movielens(path);
        py::dict d;
        d["num_users"] = g.graph.num_users();
        d["num_items"] = g.graph.num_items();
        d["edges"] = from_edges(g.graph.edges());
        d["rows"] = g.rows;
        return d;
      },
      py::arg("path"), py::arg("format") = "movielens");

  m.def(
      "evaluate",
      [](const DenseMatrix& user_repr, const DenseMatrix& item_repr, Index num_users, Index num_items,
         const IndexArray& train_edges, const IndexArray& test_edges, std::size_t k) {
        const InteractionGraph train(num_users, num_items, to_edges(train_edges));
        const EvalResult r = evaluate(Representation{user_repr, item_repr}, train, to_edges(test_edges), k);
        py::dict d;
        d["precision"] = r.precision;
        d["recall"] = r.recall;
        d["ndcg"] = r.ndcg;
        d["users"] = r.num_users();
        d["skipped"] = r.skipped;
        return d;
      },
      py::arg("user_repr"), py::arg("item_repr"), py::arg("num_users"), py::arg("num_items"), py::arg("train_edges"),
      py::arg("test_edges"), py::arg("k"));

  m.def(
      "precision_at_k",
      [](const std::vector<Index>& items, const std::vector<Index>& relevant, std::size_t k) {
        return precision_at_k(ranked(items), relevant, k);
      },
      py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def(
      "recall_at_k",
      [](const std::vector<Index>& items, const std::vector<Index>& relevant, std::size_t k) {
        return recall_at_k(ranked(items), relevant, k);
      },
      py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def(
      "ndcg_at_k",
      [](const std::vector<Index>& items, const std::vector<Index>& relevant, std::size_t k) {
        return ndcg_at_k(ranked(items), relevant, k);
      },
      py::arg("ranked"), py::arg("relevant"), py::arg("k"));

  m.def(
      "aggregate",
      [](const std::vector<DenseMatrix>& tables, const std::vector<double>& weights) {
        if (tables.size() != weights.size()) throw ConfigError("weights", "one weight per table required");
        std::vector<WeightedUpdate> ups;
        for (std::size_t k = 0; k < tables.size(); ++k) ups.push_back({SharedParams{tables[k], {}}, weights[k]});
        return aggregate(ups).item_emb;
      },
      py::arg("tables"), py::arg("weights"), "Weighted mean of equally shaped item tables.");

  m.def(
      "propagate",
      [](Index num_users, Index num_items, const IndexArray& edges, int dim, int layers, std::uint64_t seed) {
        Rng rng(seed);
        const GcfParams p = GcfParams::init(num_users, num_items, dim, layers, rng);
        const InteractionGraph g(num_users, num_items, to_edges(edges));
        const Representation r = final_representation(propagate(p, normalize(g), layers));
        return py::make_tuple(r.user, r.item);
      },
      py::arg("num_users"), py::arg("num_items"), py::arg("edges"), py::arg("dim"), py::arg("layers"),
      py::arg("seed") = 0, "Final (layer-concatenated) representations of a freshly initialized model.");

  m.def("adjusted_mutual_information", [](const std::vector<int>& a, const std::vector<int>& b) {
    return adjusted_mutual_information(a, b);
  });

  m.def(
      "partition",
      [](Index num_users, Index num_items, const IndexArray& edges, double global_edge_frac, std::size_t clients,
         const std::string& mode, double concentration, std::uint64_t seed) {
        const InteractionGraph g(num_users, num_items, to_edges(edges));
        Rng rng(seed);
        const Partition p = global_local_split(g, global_edge_frac, clients, parse_partition_mode(mode), concentration, rng);
        py::dict d;
        d["global_users"] = p.plan.global_users;
        d["client_users"] = p.plan.client_users;
        d["heterogeneity"] = heterogeneity_score(p.plan, g.user_degrees());
        return d;
      },
      py::arg("num_users"), py::arg("num_items"), py::arg("edges"), py::arg("global_edge_frac") = 0.5,
      py::arg("clients") = 10, py::arg("mode") = "uniform", py::arg("concentration") = 0.5, py::arg("seed") = 0);
}
