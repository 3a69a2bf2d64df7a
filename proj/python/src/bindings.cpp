#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "replay/combiner.hpp"
#include "replay/error.hpp"
#include "replay/harness.hpp"
#include "replay/memory.hpp"
#include "replay/mlp.hpp"
#include "replay/strategy.hpp"
#include "replay/streams.hpp"

namespace py = pybind11;
using namespace replay;

namespace {

py::object to_py(const nlohmann::json& doc) {
  return py::module_::import("json").attr("loads")(doc.dump());
}

nlohmann::json from_py(const py::object& obj) {
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

std::vector<Example> make_examples(const Eigen::MatrixXd& features, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw InvalidInput("features has " + std::to_string(features.rows()) + " rows but " +
                       std::to_string(labels.size()) + " labels were given");
  }
  std::vector<Example> out;
  out.reserve(labels.size());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out.push_back({i, features.row(i).transpose(), labels[static_cast<std::size_t>(i)]});
  }
  return out;
}

py::dict cell_dict(const CellResult& c) {
  py::dict d;
  d["dataset"] = c.dataset;
  d["strategy"] = c.strategy;
  d["mem_sz"] = c.mem_sz;
  d["seed"] = c.seed;
  d["lambda"] = c.lambda;
  d["accuracy"] = c.accuracy;
  d["avg_acc"] = c.avg_acc;
  d["forgetting"] = c.forgetting;
  return d;
}

}  // namespace

PYBIND11_MODULE(replaykit, m) {
  m.doc() = "Replay-based task-free online continual learning";

  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);

  py::class_<MlpModel>(m, "MlpModel")
      .def(py::init([](std::vector<int> sizes, std::uint64_t seed) {
             Rng rng(seed);
             return MlpModel::initialized(std::move(sizes), rng);
           }),
           py::arg("layer_sizes"), py::arg("seed") = 0)
      .def_static("from_params", &MlpModel::from_params, py::arg("layer_sizes"), py::arg("params"))
      .def_property_readonly("layer_sizes", &MlpModel::layer_sizes)
      .def_property_readonly("param_count", &MlpModel::param_count)
      .def_property_readonly("params", &MlpModel::params)
      .def("loss_and_grad",
           [](const MlpModel& model, const Eigen::MatrixXd& x, const std::vector<int>& y) {
             const auto r = loss_and_grad(model, make_examples(x, y));
             return py::make_tuple(r.loss, r.grad);
           },
           py::arg("features"), py::arg("labels"))
      .def("predict_proba",
           [](const MlpModel& model, const Eigen::MatrixXd& x) {
             return Eigen::MatrixXd(
                 forward_batch(model, make_examples(x, std::vector<int>(x.rows(), 0))).transpose());
           },
           py::arg("features"))
      .def("margins",
           [](const MlpModel& model, const Eigen::MatrixXd& x, const std::vector<int>& y) {
             return margins(model, make_examples(x, y));
           },
           py::arg("features"), py::arg("labels"))
      .def("accuracy",
           [](const MlpModel& model, const Eigen::MatrixXd& x, const std::vector<int>& y) {
             return accuracy(model, make_examples(x, y));
           },
           py::arg("features"), py::arg("labels"));

  m.def("softmax", &softmax, py::arg("logits"));
  m.def("sigmoid", &sigmoid, py::arg("x"));

  py::class_<CombinerConfig>(m, "CombinerConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &CombinerConfig::lambda)
      .def_readwrite("epsilon", &CombinerConfig::epsilon)
      .def_readwrite("steps", &CombinerConfig::steps)
      .def_readwrite("groups", &CombinerConfig::groups)
      .def_readwrite("alpha", &CombinerConfig::alpha)
      .def_readwrite("beta", &CombinerConfig::beta);

  m.def("er_combine", &er_combine, py::arg("g"), py::arg("g_ref"));
  m.def("principal_objective",
        [](const ParamVector& w, const std::vector<ParamVector>& grads, double eps) {
          return principal_objective(w, grads, eps);
        },
        py::arg("w"), py::arg("grads"), py::arg("epsilon") = 1e-8);
  m.def("pgd_grad_f",
        [](const ParamVector& w, const std::vector<ParamVector>& grads, double eps) {
          return pgd_grad_f(w, grads, eps);
        },
        py::arg("w"), py::arg("grads"), py::arg("epsilon") = 1e-8);
  m.def("pgd_combine",
        [](const ParamVector& g, const std::vector<ParamVector>& grads, const CombinerConfig& cfg) {
          return pgd_combine(g, grads, cfg);
        },
        py::arg("g"), py::arg("grads"), py::arg("config") = CombinerConfig{});

  py::class_<Buffer>(m, "Buffer")
      .def(py::init([](std::size_t capacity, const std::string& policy, double c) {
             return Buffer(capacity, parse_storage_policy(policy), c);
           }),
           py::arg("capacity"), py::arg("policy") = "reservoir", py::arg("c") = 1.0)
      .def("__len__", &Buffer::size)
      .def_property_readonly("capacity", &Buffer::capacity)
      .def_property_readonly("seen", &Buffer::seen)
      .def("scores", &Buffer::scores)
      .def("offer",
           [](Buffer& buf, std::int64_t id, const Eigen::VectorXd& x, int y, Rng& rng, double mi) {
             return buf.offer(Example{id, x, y}, rng, mi);
           },
           py::arg("id"), py::arg("features"), py::arg("label"), py::arg("rng"),
           py::arg("mi") = 0.0)
      .def("snapshot", [](const Buffer& buf) { return to_py(buf.snapshot()); });

  py::class_<Rng>(m, "Rng").def(py::init<std::uint64_t>(), py::arg("seed"));

  m.def("sample_proportional",
        [](const std::vector<double>& scores, Rng& rng) { return sample_proportional(scores, rng); },
        py::arg("scores"), py::arg("rng"));
  m.def("argmax_score", [](const std::vector<double>& scores) { return argmax_score(scores); },
        py::arg("scores"));

  m.def("average_accuracy", &average_accuracy, py::arg("matrix"));
  m.def("forgetting", &forgetting, py::arg("matrix"));

  m.def("run",
        [](const py::dict& config, int jobs) {
          const RunConfig cfg = parse_run_config(from_py(config));
          const DataSource data = load_data(cfg);
          py::list out;
          for (const auto& cell : run_grid(cfg, data, jobs)) out.append(cell_dict(cell));
          return out;
        },
        py::arg("config"), py::arg("jobs") = 1,
        "Runs every (strategy, seed) cell of a config dict and returns one dict per cell.");

  m.def("resolve_config", [](const py::dict& config) { return to_py(to_json(parse_run_config(from_py(config)))); },
        py::arg("config"));

  m.def("buffer_sim",
        [](std::int64_t trials, std::int64_t stream_len, std::size_t mem_sz,
           const std::string& policy, std::uint64_t seed) {
          BufferSimOptions opts;
          opts.trials = trials;
          opts.stream_len = stream_len;
          opts.mem_sz = mem_sz;
          opts.policy = parse_storage_policy(policy);
          opts.seed = seed;
          return to_py(buffer_sim(opts).stats);
        },
        py::arg("trials"), py::arg("stream_len"), py::arg("mem_sz"),
        py::arg("policy") = "reservoir", py::arg("seed") = 11);

  m.def("gradcheck",
        [](int cases) {
          GradcheckOptions opts;
          opts.cases = cases;
          std::ostringstream out;
          const int code = cmd_gradcheck(opts, out);
          return py::make_tuple(code == kExitOk, out.str());
        },
        py::arg("cases") = 20);
}
