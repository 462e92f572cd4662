// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Arrays cross the boundary as numpy arrays; configs as
// str -> str dicts using the same keys as the config file.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <torch/torch.h>

#include "tbigan/config.hpp"
#include "tbigan/error.hpp"
#include "tbigan/eval.hpp"
#include "tbigan/experiment.hpp"
#include "tbigan/losses.hpp"

namespace py = pybind11;
using namespace tbigan;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const F64Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

py::array_t<float> to_numpy(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat32).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), sizeof(float) * c.numel());
  return out;
}

EmbeddingSet to_set(const F32Array& rows, std::vector<int64_t> labels) {
  if (rows.ndim() != 2) throw ContractError("embeddings must be a 2-D array");
  if (rows.shape(0) != static_cast<py::ssize_t>(labels.size())) {
    throw ContractError("embedding rows and labels differ in length");
  }
  EmbeddingSet s;
  s.m = rows.shape(1);
  s.vectors.assign(rows.data(), rows.data() + rows.size());
  s.labels = std::move(labels);
  return s;
}

py::tuple embedding_arrays(const EmbeddingSet& s) {
  py::array_t<float> v({static_cast<py::ssize_t>(s.count()), static_cast<py::ssize_t>(s.m)});
  std::copy(s.vectors.begin(), s.vectors.end(), v.mutable_data());
  return py::make_tuple(v, py::array_t<int64_t>(s.labels.size(), s.labels.data()));
}

py::dict report_dict(const EvalReport& r) {
  nlohmann::json j = r;
  return py::module_::import("json").attr("loads")(j.dump());
}

py::dict record_dict(const EpochRecord& r) {
  return py::module_::import("json").attr("loads")(metrics_line(r));
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Triplet BiGAN core";

  auto base = py::register_exception<Error>(mod, "TbiganError", PyExc_RuntimeError);
  auto usage = py::register_exception<UsageError>(mod, "UsageError", base.ptr());
  py::register_exception<ContractError>(mod, "ContractError", usage.ptr());
  auto data = py::register_exception<DataError>(mod, "DataError", base.ptr());
  py::register_exception<CheckpointError>(mod, "CheckpointError", data.ptr());
  py::register_exception<NumericalError>(mod, "NumericalError", base.ptr());

  mod.def("triplet_probability",
          py::overload_cast<double, double>(&triplet_probability), py::arg("d_plus"),
          py::arg("d_minus"));
  mod.def(
      "triplet_loss",
      [](const F64Array& a, const F64Array& p, const F64Array& n) {
        return triplet_loss(to_tensor(a), to_tensor(p), to_tensor(n)).item<double>();
      },
      py::arg("anchor"), py::arg("positive"), py::arg("negative"));
  mod.def(
      "discriminator_loss",
      [](const F64Array& real, const F64Array& fake) {
        return discriminator_loss(to_tensor(real), to_tensor(fake)).item<double>();
      },
      py::arg("d_real"), py::arg("d_fake"));
  mod.def(
      "encoder_generator_loss",
      [](const F64Array& real, const F64Array& fake) {
        return encoder_generator_loss(to_tensor(real), to_tensor(fake)).item<double>();
      },
      py::arg("d_real"), py::arg("d_fake"));
  mod.def("combined_loss", py::overload_cast<double, double, double>(&combined_loss),
          py::arg("l_eg"), py::arg("l_t"), py::arg("lam"));

  mod.def(
      "knn_classify",
      [](const F32Array& db, std::vector<int64_t> db_labels, const F32Array& queries, int64_t k,
         const std::string& weighting) {
        const auto q_count = static_cast<size_t>(queries.ndim() == 2 ? queries.shape(0) : 0);
        return knn_classify(to_set(db, std::move(db_labels)),
                            to_set(queries, std::vector<int64_t>(q_count, 0)), k,
                            parse_knn_weighting(weighting));
      },
      py::arg("db"), py::arg("db_labels"), py::arg("queries"), py::arg("k") = 9,
      py::arg("weighting") = "inverse-distance");
  mod.def(
      "average_precision",
      [](const std::vector<uint8_t>& relevance) { return average_precision(relevance); },
      py::arg("relevance"));
  mod.def(
      "retrieval_map",
      [](const F32Array& db, std::vector<int64_t> db_labels, const F32Array& queries,
         std::vector<int64_t> q_labels) {
        const auto r = retrieval_map(to_set(db, std::move(db_labels)),
                                     to_set(queries, std::move(q_labels)));
        py::dict out;
        out["map"] = r.map;
        out["per_class_ap"] = r.per_class_ap;
        out["queries_without_relevant"] = r.queries_without_relevant;
        return out;
      },
      py::arg("db"), py::arg("db_labels"), py::arg("queries"), py::arg("query_labels"));

  mod.def(
      "synthetic_shapes",
      [](int64_t class_count, int64_t per_class, int64_t image_size, uint64_t seed,
         int64_t test_per_class) {
        const auto split =
            synthetic_shapes(class_count, per_class, image_size, seed, test_per_class);
        py::dict out;
        for (const auto& [name, part] : {std::pair{"train", &split.train},
                                         std::pair{"validation", &split.validation},
                                         std::pair{"test", &split.test}}) {
          out[name] = py::make_tuple(to_numpy(part->all()), part->labels);
        }
        return out;
      },
      py::arg("class_count") = 3, py::arg("per_class") = 200, py::arg("image_size") = 16,
      py::arg("seed") = 7, py::arg("test_per_class") = 100);

  mod.def(
      "resolve_config",
      [](const KeyValues& kv) { return to_key_values(resolve_config(kv)); },
      py::arg("values") = KeyValues{});
  mod.def(
      "render_config", [](const KeyValues& kv) { return render_config(resolve_config(kv)); },
      py::arg("values") = KeyValues{});

  mod.def(
      "train",
      [](const KeyValues& kv) {
        const auto config = resolve_config(kv);
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = run_train(config);
        }
        py::list records;
        for (const auto& r : result.history) records.append(record_dict(r));
        return records;
      },
      py::arg("values"), "Trains into values['out'] and returns the epoch records.");
  mod.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, std::optional<int64_t> k) {
        EvalOverrides o;
        o.k = k;
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = run_eval(checkpoint, o);
        }
        return report_dict(r);
      },
      py::arg("checkpoint"), py::arg("k") = py::none());
  mod.def(
      "embed",
      [](const std::filesystem::path& checkpoint, const std::string& source) {
        const auto path = resolve_checkpoint(checkpoint);
        const auto config = checkpoint_config(path);
        const auto split = load_split(config);
        auto trainer = Trainer::resume(path, split);
        const auto which = parse_embedding_source(source);
        const auto flat = trainer.index().flat();
        const auto& images = which == EmbeddingSource::test         ? split.test
                             : which == EmbeddingSource::validation ? split.validation
                                                                    : split.train;
        const auto set = which == EmbeddingSource::train_labeled
                             ? embed(trainer.params(), split.train.subset(flat),
                                     config.eval.batch_size, which)
                             : embed(trainer.params(), images, config.eval.batch_size, which);
        return embedding_arrays(set);
      },
      py::arg("checkpoint"), py::arg("source") = "test");
}
