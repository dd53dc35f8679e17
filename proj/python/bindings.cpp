#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fairpipe/cda.hpp"
#include "fairpipe/classifiers.hpp"
#include "fairpipe/dataset.hpp"
#include "fairpipe/encode.hpp"
#include "fairpipe/linear.hpp"
#include "fairpipe/metrics.hpp"
#include "fairpipe/pipeline.hpp"
#include "fairpipe/serializer.hpp"
#include "fairpipe/toy_lm.hpp"
#include "fairpipe/unlearning.hpp"
#include "json.hpp"

namespace py = pybind11;
using namespace fairpipe;

namespace {

GroupedOutcomes outcomes_of(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                            const std::vector<int>& group) {
  return GroupedOutcomes{y_true, y_pred, group};
}

py::dict fairness_dict(const FairnessReport& r) {
  py::dict d;
  d["acc"] = r.acc;
  d["accp"] = r.accp;
  d["dp"] = r.dp;
  d["eqodds"] = r.eqodds;
  d["eqodds_convention"] = r.convention == EqOddsConvention::kSum ? "sum" : "mean";
  d["n"] = r.n;
  return d;
}

py::dict intrinsic_dict(const IntrinsicReport& r) {
  auto ctx = [](const ContextIntrinsic& c) {
    py::dict d;
    d["antistereotype"] = c.mean_anti;
    d["stereotype"] = c.mean_stereo;
    d["gap"] = c.gap;
    d["pairs"] = c.n_pairs;
    return d;
  };
  py::dict d;
  d["poverty"] = ctx(r.poverty);
  d["wealth"] = ctx(r.wealth);
  d["perplexity"] = r.perplexity;
  return d;
}

UnlearnRunConfig unlearn_config_of(const py::dict& d) {
  UnlearnRunConfig cfg;
  if (d.contains("weights")) {
    py::sequence w = d["weights"];
    cfg.weights = {w[0].cast<double>(), w[1].cast<double>(), w[2].cast<double>(),
                   w[3].cast<double>()};
  }
  if (d.contains("learning_rate")) cfg.learning_rate = d["learning_rate"].cast<double>();
  if (d.contains("epochs")) cfg.epochs = d["epochs"].cast<int>();
  if (d.contains("batch_size")) cfg.batch_size = d["batch_size"].cast<int>();
  if (d.contains("neutral_batch_size")) {
    cfg.neutral_batch_size = d["neutral_batch_size"].cast<int>();
  }
  if (d.contains("seed")) cfg.seed = d["seed"].cast<uint64_t>();
  if (d.contains("validation_fraction")) {
    cfg.validation_fraction = d["validation_fraction"].cast<double>();
  }
  if (d.contains("gap_mode")) {
    cfg.gap_mode =
        d["gap_mode"].cast<std::string>() == "raw" ? GapMode::kRaw : GapMode::kNormalized;
  }
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bias-mitigation pipeline core: serialization, CDA, unlearning, fairness";

  // ---- fairness metrics ----
  m.def("accuracy", [](const std::vector<int>& yt, const std::vector<int>& yp,
                       const std::vector<int>& g) { return accuracy(outcomes_of(yt, yp, g)); });
  m.def("accuracy_parity", [](const std::vector<int>& yt, const std::vector<int>& yp,
                              const std::vector<int>& g) {
    return accuracy_parity(outcomes_of(yt, yp, g));
  });
  m.def("demographic_parity", [](const std::vector<int>& yt, const std::vector<int>& yp,
                                 const std::vector<int>& g) {
    return demographic_parity(outcomes_of(yt, yp, g));
  });
  m.def(
      "equality_of_odds",
      [](const std::vector<int>& yt, const std::vector<int>& yp, const std::vector<int>& g,
         const std::string& convention) {
        return equality_of_odds(
            outcomes_of(yt, yp, g),
            convention == "mean" ? EqOddsConvention::kMean : EqOddsConvention::kSum);
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("group"),
      py::arg("convention") = "sum");
  m.def("fairness_report", [](const std::vector<int>& yt, const std::vector<int>& yp,
                              const std::vector<int>& g) {
    return fairness_dict(fairness_report(outcomes_of(yt, yp, g)));
  });
  m.def("brute_force_fairness", [](const std::vector<int>& yt, const std::vector<int>& yp,
                                   const std::vector<int>& g) {
    return fairness_dict(brute_force_fairness(outcomes_of(yt, yp, g)));
  });

  // ---- datasets and CDA ----
  py::class_<TabularDataset>(m, "Dataset")
      .def_property_readonly("name", [](const TabularDataset& d) { return d.name; })
      .def("__len__", [](const TabularDataset& d) { return d.size(); })
      .def("labels", &TabularDataset::labels)
      .def("groups", &TabularDataset::groups)
      .def("to_csv", [](const TabularDataset& d) { return to_csv(d); });
  m.def("load_dataset", [](const std::string& csv, const std::string& schema) {
    return load_dataset(csv, load_schema(schema));
  });
  m.def(
      "split",
      [](const TabularDataset& data, uint64_t seed, double train_fraction, int n_repeats,
         int repeat) {
        return split(data, SplitSpec{seed, train_fraction, n_repeats}, repeat);
      },
      py::arg("data"), py::arg("seed") = 0, py::arg("train_fraction") = 0.8,
      py::arg("n_repeats") = 3, py::arg("repeat") = 0);
  m.def("augment", [](const TabularDataset& train) {
    return augment(train, flip_spec_from(train));
  });

  // ---- toy model and probes ----
  py::class_<ToyLm>(m, "ToyModel")
      .def_property_readonly("vocab_size", &ToyLm::vocab_size)
      .def_property_readonly("hidden_width", &ToyLm::hidden_width)
      .def_property_readonly("param_count", &ToyLm::param_count)
      .def("sequence_log_prob",
           [](const ToyLm& lm, const std::string& prompt, const std::string& answer) {
             return sequence_log_prob(lm, prompt, answer);
           })
      .def("pair_probabilities",
           [](const ToyLm& lm, const std::string& prompt, const std::string& stereo,
              const std::string& anti) {
             QAPair pair{prompt, stereo, anti, QAContext::kPoverty};
             return pair_probabilities(lm, pair);
           })
      .def("perplexity",
           [](const ToyLm& lm, const std::vector<std::string>& corpus) {
             return perplexity(lm, corpus);
           })
      .def("embed",
           [](const ToyLm& lm, const std::string& text) { return embed(lm, text); })
      .def("save", &ToyLm::save);
  m.def("make_toy_model", [](const std::string& config_json) {
    return make_toy_model(toy_config_from_json(config_json));
  });
  m.def("load_toy_model", [](const std::string& path) { return ToyLm::load(path); });

  // ---- unlearning ----
  m.def(
      "train_unlearn",
      [](const ToyLm& model, const std::string& qa_path, const std::string& neutral_path,
         const py::dict& config) {
        std::vector<QAPair> qa = load_qa_dataset(qa_path);
        std::vector<std::string> neutral = neutral_texts(load_neutral_corpus(neutral_path));
        UnlearnResult run = train_unlearn(model, qa, neutral, unlearn_config_of(config));
        py::dict out;
        std::unique_ptr<ToyLm> trained(dynamic_cast<ToyLm*>(run.model.release()));
        out["model"] = py::cast(std::move(trained));
        out["best_epoch"] = run.best_epoch;
        out["aborted"] = run.aborted;
        py::list log;
        for (const auto& e : run.log) {
          py::dict entry;
          entry["epoch"] = e.epoch;
          entry["L_unlearn"] = e.l_unlearn;
          entry["L_learn"] = e.l_learn;
          entry["L_gap"] = e.l_gap;
          entry["L_norm"] = e.l_norm;
          entry["total"] = e.total;
          entry["gap_poverty"] = e.gap_poverty;
          entry["gap_wealth"] = e.gap_wealth;
          entry["perplexity"] = e.perplexity;
          log.append(entry);
        }
        out["log"] = log;
        return out;
      },
      py::arg("model"), py::arg("qa_path"), py::arg("neutral_path"), py::arg("config"));
  m.def("intrinsic_report", [](const ToyLm& model, const std::string& qa_path,
                               const std::string& neutral_path) {
    std::vector<QAPair> qa = load_qa_dataset(qa_path);
    std::vector<std::string> neutral;
    if (!neutral_path.empty()) neutral = neutral_texts(load_neutral_corpus(neutral_path));
    return intrinsic_dict(intrinsic_gap_report(model, qa, neutral));
  });

  // ---- pipeline ----
  m.def("run_stage", [](const std::string& config_path) {
    StageReport report = run_stage(load_experiment_config(config_path));
    return py::module_::import("json").attr("loads")(stage_report_json(report));
  });
  m.def("run_intrinsic_eval", [](const std::string& config_path) {
    return intrinsic_dict(run_intrinsic_eval(load_experiment_config(config_path)));
  });
  m.def("serialize_row_text",
        [](const std::vector<std::pair<std::string, std::string>>& fields) {
          Record record;
          FeatureOrder order;
          for (const auto& [name, value] : fields) {
            record.push_back({name, false, value, 0.0});
            order.ranked.push_back(name);
            order.scores[name] = 0.0;
          }
          return serialize_record(record, order);
        });
}
