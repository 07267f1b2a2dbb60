#include "affect/config.hpp"
#include "affect/ensemble.hpp"
#include "affect/harness.hpp"
#include "affect/io.hpp"
#include "affect/metrics.hpp"
#include "affect/postprocess.hpp"
#include "affect/types.hpp"

#include <pybind11/eigen.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace affect;

namespace {

config::RunConfig configure(const std::vector<std::string>& overrides) {
  return config::resolve(std::nullopt, overrides);
}

}  // namespace

PYBIND11_MODULE(_affect, m) {
  m.doc() = "Multimodal affect recognition: metrics, post-processing, ensembles and the experiment harness.";

  static py::exception<io::FormatError> format_error(m, "FormatError", PyExc_ValueError);
  static py::exception<config::ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<DegenerateInput> degenerate(m, "DegenerateInput", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const io::FormatError& e) {
      py::set_error(format_error, e.what());
    } catch (const config::ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const DegenerateInput& e) {
      py::set_error(degenerate, e.what());
    } catch (const InvalidInput& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::enum_<Track>(m, "Track")
      .value("VA", Track::VA)
      .value("EXPR", Track::EXPR)
      .value("AU", Track::AU)
      .value("CE", Track::CE)
      .value("EMI", Track::EMI);
  m.def("parse_track", [](const std::string& s) { return parse_track(s); });
  m.def("track_name", [](Track t) { return std::string(track_name(t)); });
  m.def("class_count", &class_count);
  m.def("class_names", &class_names);

  py::class_<FeatureBundle>(m, "FeatureBundle")
      .def(py::init<>())
      .def_readwrite("video_id", &FeatureBundle::video_id)
      .def_readwrite("clip_length", &FeatureBundle::clip_length)
      .def_readwrite("visual", &FeatureBundle::visual)
      .def_readwrite("audio", &FeatureBundle::audio)
      .def_readwrite("text", &FeatureBundle::text)
      .def_readwrite("face_present", &FeatureBundle::face_present)
      .def_readwrite("background", &FeatureBundle::background)
      .def_property_readonly("frame_count", &FeatureBundle::frame_count)
      .def_property_readonly("clip_count", &FeatureBundle::clip_count)
      .def("validate", &FeatureBundle::validate)
      .def(py::self == py::self);

  py::class_<LabelTrack>(m, "LabelTrack")
      .def(py::init([](Track t, std::string id, Matrix v) { return LabelTrack{t, std::move(id), std::move(v)}; }),
           py::arg("track"), py::arg("video_id"), py::arg("values"))
      .def_readwrite("track", &LabelTrack::track)
      .def_readwrite("video_id", &LabelTrack::video_id)
      .def_readwrite("values", &LabelTrack::values)
      .def("validate", &LabelTrack::validate)
      .def(py::self == py::self);

  py::class_<PredictionTrack>(m, "PredictionTrack")
      .def(py::init(&make_prediction), py::arg("track"), py::arg("video_id"), py::arg("scores"))
      .def_readonly("track", &PredictionTrack::track)
      .def_readonly("video_id", &PredictionTrack::video_id)
      .def_readonly("scores", &PredictionTrack::scores)
      .def_readonly("decisions", &PredictionTrack::decisions)
      .def("validate", &PredictionTrack::validate)
      .def(py::self == py::self);

  // metrics
  py::class_<metrics::MetricReport>(m, "MetricReport")
      .def_readonly("track", &metrics::MetricReport::track)
      .def_readonly("per_class", &metrics::MetricReport::per_class)
      .def_readonly("performance", &metrics::MetricReport::performance)
      .def_readonly("n_evaluated", &metrics::MetricReport::n_evaluated);
  m.def("ccc", [](std::vector<double> x, std::vector<double> y) { return metrics::ccc(x, y); }, py::arg("x"),
        py::arg("x_hat"));
  m.def("pearson", [](std::vector<double> x, std::vector<double> y) { return metrics::pearson(x, y); });
  m.def("evaluate", &metrics::evaluate_track, py::arg("predictions"), py::arg("labels"));
  m.def(
      "evaluate_many",
      [](const std::vector<PredictionTrack>& p, const std::vector<LabelTrack>& l) {
        return metrics::evaluate_tracks(p, l);
      },
      py::arg("predictions"), py::arg("labels"));

  // post-processing
  m.def(
      "gaussian_smooth",
      [](std::vector<double> series, double sigma, std::optional<int> radius) {
        return postprocess::gaussian_smooth(series, {sigma, radius});
      },
      py::arg("series"), py::arg("sigma"), py::arg("radius") = std::nullopt);
  m.def(
      "smooth_track",
      [](const PredictionTrack& t, double sigma, std::optional<int> radius) {
        return postprocess::smooth_track(t, {sigma, radius});
      },
      py::arg("track"), py::arg("sigma"), py::arg("radius") = std::nullopt);
  m.def(
      "replace_missing_faces",
      [](const PredictionTrack& t, std::vector<std::uint8_t> face) { return postprocess::replace_missing_faces(t, face); },
      py::arg("track"), py::arg("face_present"));

  // ensemble
  m.def(
      "vote",
      [](const std::vector<std::pair<int, double>>& ballots) {
        std::vector<ensemble::Vote> v;
        for (const auto& [label, conf] : ballots) v.push_back({label, conf});
        return ensemble::vote(v);
      },
      py::arg("ballots"), "Ballots are (label, confidence) pairs.");
  m.def(
      "fuse",
      [](const std::vector<PredictionTrack>& p) { return ensemble::fuse_predictions(p); }, py::arg("predictions"));
  m.def(
      "partition_backgrounds",
      [](const std::vector<std::string>& ids, const Matrix& descriptors, int subsets, std::uint64_t seed) {
        const auto a = ensemble::partition_backgrounds(ids, descriptors, subsets, seed);
        py::dict out;
        for (std::size_t i = 0; i < a.video_ids.size(); ++i) out[py::str(a.video_ids[i])] = a.subset[i];
        return out;
      },
      py::arg("video_ids"), py::arg("descriptors"), py::arg("subsets"), py::arg("seed") = 0,
      "Maps each video id to its subset.");

  // io
  m.def("read_bundle", &io::read_bundle);
  m.def("write_bundle", &io::write_bundle);
  m.def("read_labels", &io::read_labels, py::arg("path"), py::arg("track") = std::nullopt);
  m.def("write_labels", &io::write_labels);
  m.def("read_predictions", &io::read_predictions, py::arg("path"), py::arg("track") = std::nullopt);
  m.def("write_predictions", &io::write_predictions);
  m.def("format_real", &io::format_real);

  // harness
  py::class_<harness::Corpus>(m, "Corpus")
      .def_readonly("track", &harness::Corpus::track)
      .def_readonly("bundles", &harness::Corpus::bundles)
      .def_readonly("labels", &harness::Corpus::labels)
      .def("video_ids", &harness::Corpus::video_ids)
      .def("__len__", [](const harness::Corpus& c) { return c.bundles.size(); });
  m.def("read_corpus", &io::read_corpus, py::arg("manifest"));
  m.def("write_corpus", &io::write_corpus, py::arg("corpus"), py::arg("dir"));
  m.def(
      "synthetic_corpus",
      [](const std::vector<std::string>& overrides) { return harness::make_synthetic_corpus(configure(overrides).synth); },
      py::arg("overrides") = std::vector<std::string>{}, "Overrides are key=value config assignments.");
  m.def(
      "resolved_config", [](const std::vector<std::string>& overrides) { return config::to_json(configure(overrides)); },
      py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "split_folds",
      [](const std::vector<std::string>& ids, int k, std::uint64_t seed) {
        std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> out;
        for (auto& f : harness::split_folds(ids, k, seed)) out.emplace_back(f.train_video_ids, f.val_video_ids);
        return out;
      },
      py::arg("video_ids"), py::arg("k"), py::arg("seed") = 0, "Returns (train, val) id lists per fold.");
  m.def(
      "run_experiment",
      [](const harness::Corpus& corpus, const std::vector<std::string>& overrides, bool as_json) {
        auto cfg = configure(overrides).experiment;
        if (cfg.track != corpus.track) {
          throw config::ConfigError("corpus track '" + std::string(track_name(corpus.track)) +
                                    "' does not match configured track '" + std::string(track_name(cfg.track)) + "'");
        }
        harness::ExperimentResult result;
        {
          py::gil_scoped_release release;
          result = harness::run_experiment(cfg, corpus);
        }
        const auto rows = harness::report_rows(result);
        return as_json ? harness::render_report_json(cfg.track, rows) : harness::render_report_text(cfg.track, rows);
      },
      py::arg("corpus"), py::arg("overrides") = std::vector<std::string>{}, py::arg("json") = false,
      "Cross-validates on the corpus and returns the rendered report.");
}
