#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "memeface/checkpoint.hpp"
#include "memeface/damsm.hpp"
#include "memeface/image.hpp"
#include "memeface/ops.hpp"
#include "memeface/pipeline.hpp"
#include "memeface/service.hpp"
#include "memeface/synthetic.hpp"
#include "memeface/text_encoder.hpp"
#include "memeface/trainer.hpp"

namespace py = pybind11;
using namespace memeface;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

// JSON crosses the boundary as text; the Python package parses it.
std::string dump(const nlohmann::json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "memeface native core";

  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);

  m.def("tokenize", [](const std::string& text) { return tokenize(text); });

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def_static("build", [](const std::vector<std::string>& corpus, int min_count) {
        return Vocabulary::build(corpus, min_count);
      }, py::arg("corpus"), py::arg("min_count") = 1)
      .def_static("load", &Vocabulary::load)
      .def("save", &Vocabulary::save)
      .def("__len__", &Vocabulary::size)
      .def("id", &Vocabulary::id)
      .def("token", &Vocabulary::token)
      .def("encode", &Vocabulary::encode);

  m.def("kl_regularizer", [](const std::vector<double>& mu, const std::vector<double>& logvar) {
    return kl_regularizer(mu, logvar);
  }, py::arg("mu"), py::arg("logvar"));

  m.def("batch_matching_loss", [](const Array& scores, double gamma) {
    const auto r = batch_matching_loss(constant(from_numpy(scores)), gamma);
    return py::make_tuple(r.loss.item(), to_numpy(r.image_to_caption), to_numpy(r.caption_to_image));
  }, py::arg("scores"), py::arg("gamma"));

  m.def("aggregate_annotations", [](const std::vector<std::vector<int>>& labels) {
    std::vector<AnnotationRecord> records;
    for (std::size_t i = 0; i < labels.size(); ++i) records.push_back({std::to_string(i), labels[i]});
    const auto s = aggregate_annotations(records);
    py::dict d;
    d["total"] = s.total;
    d["counts"] = s.counts;
    d["percent"] = s.percent;
    d["at_least_one_percent"] = s.at_least_one_percent;
    return d;
  }, py::arg("labels"));

  m.def("load_png", [](const std::filesystem::path& p) { return to_numpy(image::load_png(p)); });
  m.def("save_png", [](const Array& img, const std::filesystem::path& p) { image::save_png(from_numpy(img), p); });
  m.def("decode_png", [](const py::bytes& b) {
    const std::string s = b;
    return to_numpy(image::decode_png(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
  });

  m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); });
  m.def("file_sha256", &file_sha256);
  m.def("read_checkpoint_header", [](const std::filesystem::path& p) {
    const auto h = read_checkpoint_header(p);
    py::dict d;
    d["version"] = h.version;
    d["epoch"] = h.epoch;
    d["kind"] = h.kind;
    return d;
  });

  m.def("write_toy_corpus", [](const std::filesystem::path& dir, int images, int templates, int resolution,
                               double band_fraction, std::uint64_t seed) {
    synthetic::write_toy_corpus(dir, {images, templates, resolution, band_fraction, seed});
  }, py::arg("dir"), py::arg("images") = 64, py::arg("templates") = 4, py::arg("resolution") = 80,
        py::arg("band_fraction") = 0.2, py::arg("seed") = 0);

  m.def("run_pipeline", [](const std::filesystem::path& input_dir, const std::filesystem::path& out_dir,
                           std::optional<std::filesystem::path> captions_tsv, int k, int resolution,
                           std::uint64_t seed) {
    pipeline::PipelineConfig config;
    config.k = k;
    config.resolution = resolution;
    config.seed = seed;
    std::optional<pipeline::TsvCaptionSource> captions;
    if (captions_tsv) captions.emplace(*captions_tsv);
    const pipeline::PixelGridExtractor grid(8);
    pipeline::PipelineReport r;
    {
      py::gil_scoped_release release;
      r = pipeline::run_pipeline(input_dir, captions ? &*captions : nullptr, grid, config, out_dir);
    }
    py::dict d;
    d["ingested"] = r.ingested;
    d["after_text_filters"] = r.after_text_filters;
    d["after_crop"] = r.after_crop;
    d["after_outliers"] = r.after_outliers;
    d["clusters"] = r.clusters;
    d["train"] = r.train;
    d["test"] = r.test;
    d["inertia_history"] = r.inertia_history;
    return d;
  }, py::arg("input_dir"), py::arg("out_dir"), py::arg("captions_tsv") = py::none(), py::arg("k") = 40,
        py::arg("resolution") = 64, py::arg("seed") = 0);

  py::class_<service::DemoService>(m, "DemoService")
      .def(py::init([](const std::filesystem::path& checkpoint_dir, const std::filesystem::path& vocab_path,
                       const std::filesystem::path& template_dir, std::size_t cache_size, int output_resolution) {
             service::ServiceConfig c;
             c.checkpoint_dir = checkpoint_dir;
             c.vocab_path = vocab_path;
             c.template_dir = template_dir;
             c.cache_size = cache_size;
             c.output_resolution = output_resolution;
             return std::make_unique<service::DemoService>(c);
           }),
           py::arg("checkpoint_dir"), py::arg("vocab_path"), py::arg("template_dir"), py::arg("cache_size") = 4,
           py::arg("output_resolution") = 0)
      .def("health_json", [](const service::DemoService& s) { return dump(s.health()); })
      .def("templates_json", [](const service::DemoService& s) { return dump(s.templates()); })
      .def("generate_json", [](service::DemoService& s, const std::string& text, std::optional<int> template_id,
                               std::optional<std::uint64_t> seed) {
        service::GenerateRequest req{text, template_id, seed, false};
        try {
          py::gil_scoped_release release;
          return dump(service::to_json(s.generate(req)));
        } catch (const service::ServiceError& e) {
          throw py::value_error(std::to_string(e.status()) + ": " + e.what());
        }
      }, py::arg("text"), py::arg("template_id") = py::none(), py::arg("seed") = py::none());
}
