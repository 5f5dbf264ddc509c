#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "halprobe/corpus.hpp"
#include "halprobe/dump.hpp"
#include "halprobe/error.hpp"
#include "halprobe/evalengine.hpp"
#include "halprobe/metrics.hpp"
#include "halprobe/probes.hpp"
#include "halprobe/redeep.hpp"
#include "halprobe/synth.hpp"

namespace py = pybind11;
using namespace halprobe;
using nlohmann::json;

namespace {

ScoredLabels scored(std::vector<double> scores, std::vector<int> labels) {
  ScoredLabels d{std::move(scores), std::move(labels)};
  d.check();
  return d;
}

// Datasets given as {name: (corpus_path, dump_path or None)}.
DatasetRegistry load_registry(const std::map<std::string, std::pair<std::string, std::optional<std::string>>>& paths) {
  DatasetRegistry reg;
  for (const auto& [name, p] : paths) {
    Dataset ds{read_corpus(p.first), nullptr};
    if (p.second) ds.dump = std::make_shared<const ActivationDump>(read_dump(*p.second));
    reg[name] = std::move(ds);
  }
  return reg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "halprobe native core";
  static py::exception<Error> error(m, "HalprobeError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def("version", [] { return std::string(HALPROBE_VERSION); });
  m.def("auc", [](std::vector<double> s, std::vector<int> y) { return auc(scored(std::move(s), std::move(y))); },
        py::arg("scores"), py::arg("labels"));
  m.def("pcc", [](std::vector<double> s, std::vector<int> y) { return pcc(scored(std::move(s), std::move(y))); },
        py::arg("scores"), py::arg("labels"));
  m.def(
      "select_threshold",
      [](std::vector<double> s, std::vector<int> y) {
        return select_threshold(scored(std::move(s), std::move(y)), ThresholdObjective::f1());
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "jsd", [](const std::vector<double>& p, const std::vector<double>& q) { return jsd(p, q); }, py::arg("p"),
      py::arg("q"));
  m.def(
      "naive_predict", [](const std::string& task) { return naive_predict(parse_task(task)); }, py::arg("task"));

  m.def(
      "bayes_auc",
      [](const std::string& spec_json) {
        const BayesAuc b = bayes_auc(synthetic_spec_from_json(json::parse(spec_json)));
        json j;
        j["optimal_per_task"] = b.optimal_per_task;
        j["optimal_overall"] = b.optimal_overall ? json(*b.optimal_overall) : json(nullptr);
        j["naive_overall"] = b.naive_overall ? json(*b.naive_overall) : json(nullptr);
        j["positives"] = b.positives;
        return j.dump();
      },
      py::arg("spec_json"));
  m.def(
      "run_synthetic",
      [](const std::string& spec_json, const std::string& protocol_json) {
        const SyntheticSpec spec = synthetic_spec_from_json(json::parse(spec_json));
        json pj = json::parse(protocol_json);
        if (!pj.contains("train_corpus")) pj["train_corpus"] = spec.name;
        const ProtocolSpec p = protocol_spec_from_json(pj);
        EvalReport r;
        {
          py::gil_scoped_release release;
          auto [c, d] = generate(spec);
          DatasetRegistry reg;
          reg[spec.name] = Dataset{std::move(c), std::make_shared<const ActivationDump>(std::move(d))};
          r = run_protocol(p, reg);
        }
        return to_json(r).dump();
      },
      py::arg("spec_json"), py::arg("protocol_json"));
  m.def(
      "run_protocol",
      [](const std::string& protocol_json,
         const std::map<std::string, std::pair<std::string, std::optional<std::string>>>& datasets) {
        const ProtocolSpec p = protocol_spec_from_json(json::parse(protocol_json));
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = run_protocol(p, load_registry(datasets));
        }
        return to_json(r).dump();
      },
      py::arg("protocol_json"), py::arg("datasets"));
}
