#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sar/bench.hpp"
#include "sar/errors.hpp"
#include "sar/gradcheck.hpp"
#include "sar/simdist.hpp"
#include "sar/tuner.hpp"

namespace py = pybind11;
using namespace sar;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor::matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

EmbeddingSet to_set(const Array& vectors, std::vector<std::string> names) {
  if (names.empty()) {
    for (py::ssize_t i = 0; i < vectors.shape(0); ++i) names.push_back("c" + std::to_string(i));
  }
  return EmbeddingSet::make(std::move(names), to_tensor(vectors), Provenance::external);
}

IndexFamily to_family(const std::vector<std::vector<std::size_t>>& rows) {
  IndexFamily f{rows.size(), rows.empty() ? 0 : rows[0].size(), rows};
  f.validate(rows.size());
  return f;
}

py::dict train_synthetic(std::uint64_t seed, double lambda, std::size_t epochs, std::size_t num_novel, std::size_t k,
                         bool use_sar) {
  TaskOptions o;
  o.seed = seed;
  const auto task = generate_task(o);
  const auto world = make_world(task);
  TrainConfig c;
  c.seed = seed;
  c.lambda = lambda;
  c.epochs = epochs;
  c.num_novel = num_novel;
  c.k = k;
  c.use_sar = use_sar;
  c.ensemble_templates = task.templates;
  const auto report = train(c, training_vocabulary(task), training_set(task, world), *world.text);
  const auto eval = evaluate(report.final_prompts, task, world, c.tau);
  py::dict d;
  d["base_acc"] = eval.base_acc;
  d["new_acc"] = eval.new_acc;
  d["harmonic_mean"] = eval.harmonic_mean;
  d["final_sar"] = report.final_sar;
  d["report_json"] = report.to_json().dump();
  d["prompts"] = to_array(report.final_prompts.vectors);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("cosine_matrix", [](const Array& v) { return to_array(cosine_matrix(to_set(v, {})).values); },
        py::arg("vectors"));
  m.def("full_distribution",
        [](const Array& v, double tau) { return to_array(full_distribution(to_set(v, {}), tau).dense()); },
        py::arg("vectors"), py::arg("tau") = kDefaultTemperature,
        "Dense [M x M] similarity distribution with a zero diagonal.");
  m.def("sample_index_family",
        [](std::size_t mm, std::size_t k, std::uint64_t seed) { return sample_index_family(mm, k, seed).rows; },
        py::arg("m"), py::arg("k"), py::arg("seed"));
  m.def("sampled_distribution",
        [](const Array& v, const std::vector<std::vector<std::size_t>>& family, double tau) {
          return to_array(sampled_distribution(to_set(v, {}), to_family(family), tau).rows);
        },
        py::arg("vectors"), py::arg("family"), py::arg("tau") = kDefaultTemperature);
  m.def("kl_rows",
        [](const Array& p, const Array& q) {
          const Tensor tp = to_tensor(p), tq = to_tensor(q);
          std::vector<std::vector<std::size_t>> rows(tp.rows());
          for (auto& r : rows) {
            r.resize(tp.cols());
            for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
          }
          // Row-stochastic inputs only; the index family is nominal.
          IndexFamily f{tp.rows(), tp.cols(), rows};
          return kl_rows(SimilarityDistribution{tp, f, 1.0}, SimilarityDistribution{tq, f, 1.0});
        },
        py::arg("p"), py::arg("q"), "Mean over rows of KL(p_i || q_i) for two row-stochastic arrays.");
  m.def("rank_disagreements",
        [](const Array& learned, const Array& hand) { return rank_disagreements(to_tensor(learned), to_tensor(hand)); },
        py::arg("learned_cosines"), py::arg("hand_cosines"));
  m.def("harmonic_mean", &harmonic_mean, py::arg("base_acc"), py::arg("new_acc"));
  m.def("gradcheck",
        [](std::uint64_t seed) {
          py::dict d;
          for (const auto& r : run_gradcheck(default_gradcheck_cases(seed))) d[py::str(r.name)] = r.max_relative_error;
          return d;
        },
        py::arg("seed") = 1, "Max relative error per differentiable op and pipeline.");
  m.def("analyze",
        [](const std::string& learned, const std::string& hand, double tau) {
          return disruption_report(load_embedding_set(learned), load_embedding_set(hand), tau).to_json().dump();
        },
        py::arg("learned_path"), py::arg("hand_path"), py::arg("tau") = kDefaultTemperature,
        "Disruption report of two embedding files, as a JSON string.");
  m.def("train_synthetic", &train_synthetic, py::arg("seed") = 1, py::arg("lam") = 1.0, py::arg("epochs") = 100,
        py::arg("num_novel") = 200, py::arg("k") = 64, py::arg("use_sar") = true,
        "Train on the default synthetic task and evaluate on its base and new classes.");
}
