#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "prefpipe/bon.hpp"
#include "prefpipe/errors.hpp"
#include "prefpipe/funnel.hpp"
#include "prefpipe/labeling.hpp"
#include "prefpipe/pair_filter.hpp"
#include "prefpipe/pipeline.hpp"
#include "prefpipe/prompt_filter.hpp"
#include "prefpipe/reward_model.hpp"

namespace py = pybind11;
using namespace prefpipe;

namespace {

py::dict report_to_dict(const FunnelReport& r) {
  py::list stages;
  for (const auto& s : r.stages) {
    py::dict d;
    d["stage_name"] = s.stage_name;
    d["count_in"] = s.count_in;
    d["count_out"] = s.count_out;
    d["pending"] = s.pending;
    d["retention"] = s.retention();
    stages.append(d);
  }
  py::dict out;
  out["stages"] = stages;
  out["overall_retention"] =
      r.overall_retention ? py::cast(*r.overall_retention) : py::object(py::none());
  return out;
}

std::vector<FeaturePair> to_pairs(const std::vector<std::vector<double>>& chosen,
                                  const std::vector<std::vector<double>>& rejected) {
  if (chosen.size() != rejected.size()) {
    throw ValidationError("rejected", "needs as many rows as chosen");
  }
  std::vector<FeaturePair> pairs;
  for (std::size_t i = 0; i < chosen.size(); ++i) pairs.push_back({chosen[i], rejected[i]});
  return pairs;
}

}  // namespace

PYBIND11_MODULE(_prefpipe, m) {
  m.doc() = "Preference-data pipeline: filters, reward model, best-of-n, funnel.";

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("keep_prompt", &keep_prompt, py::arg("score_strong"), py::arg("score_sft"),
        py::arg("epsilon"), "True when the strong response beats the SFT one by more than epsilon.");

  m.def(
      "filter_keep",
      [](int a, int b) { return FilterMatrix::default_matrix().keep(a, b); }, py::arg("score_a"),
      py::arg("score_b"), "Whether the default judge-score matrix keeps the pair.");

  m.def("neg_log_sigmoid", &neg_log_sigmoid, py::arg("margin"),
        "Pairwise loss -log sigmoid(margin), stable for large |margin|.");

  m.def(
      "bon_select", [](const std::vector<double>& r) { return bon_select(r); }, py::arg("rewards"),
      "Index of the highest reward; the lowest index wins ties.");
  m.def("bon_gain", &bon_gain, py::arg("n"), "log(n) - (n - 1) / n.");

  m.def(
      "train_pairs",
      [](const std::vector<std::vector<double>>& chosen,
         const std::vector<std::vector<double>>& rejected, double learning_rate,
         std::size_t epochs, std::size_t batch_size, std::uint64_t seed, std::size_t hidden) {
        const auto pairs = to_pairs(chosen, rejected);
        if (pairs.empty()) throw ValidationError("chosen", "empty dataset");
        TrainConfig cfg;
        cfg.learning_rate = learning_rate;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        cfg.hidden = hidden;
        const TrainResult r = train(pairs, pairs[0].chosen.size(), cfg);
        py::dict out;
        out["params"] = r.params.flatten();
        out["accuracy"] = eval_pairwise_accuracy(r.params, pairs);
        out["epoch_loss"] = r.epoch_loss;
        return out;
      },
      py::arg("chosen"), py::arg("rejected"), py::arg("learning_rate") = 0.1,
      py::arg("epochs") = 10, py::arg("batch_size") = 32, py::arg("seed") = 0,
      py::arg("hidden") = 0,
      "Train on feature pairs; returns flattened params, training accuracy and per-epoch loss.");

  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config, std::optional<std::filesystem::path> store,
         std::optional<std::filesystem::path> prompts) {
        PipelineConfig cfg = load_config(config);
        if (store) cfg.store_path = *store;
        if (prompts) cfg.prompts_path = *prompts;
        if (!cfg.prompts_path) throw ConfigError("prompts path is required");
        const auto source = read_prompts(*cfg.prompts_path);
        py::gil_scoped_release release;
        std::optional<RecordStore> file_store;
        RecordStore memory(cfg.seed);
        RecordStore* target = &memory;
        if (cfg.store_path) target = &file_store.emplace(*cfg.store_path, cfg.seed);
        const PipelineRun run = run_pipeline(source, cfg, *target);
        py::gil_scoped_acquire acquire;
        py::dict out = report_to_dict(run.report);
        out["partial"] = run.partial();
        return out;
      },
      py::arg("config"), py::arg("store") = py::none(), py::arg("prompts") = py::none(),
      "Run steps 1-3 from a JSON config; returns the funnel report.");

  m.def(
      "funnel",
      [](const std::filesystem::path& store) {
        RecordStore s(store);
        return report_to_dict(report_funnel(s));
      },
      py::arg("store"), "Funnel report for a store file.");
}
