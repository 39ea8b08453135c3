#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "mvb/parallel.hpp"
#include "mvb/rng.hpp"
#include "mvb/scenario.hpp"

namespace py = pybind11;

namespace {

py::dict row_dict(const mvb::ResultRow& r) {
  py::dict d;
  d["scenario"] = r.scenario;
  d["method"] = r.method;
  d["value"] = r.value;
  d["std_error"] = r.std_error;
  d["n_samples"] = r.n_samples;
  d["dt"] = r.dt;
  d["N"] = r.n_particles;
  d["seed"] = r.seed;
  d["wall_time_seconds"] = r.wall_time_seconds;
  return d;
}

py::list rows_list(const std::vector<mvb::ResultRow>& rows) {
  py::list out;
  for (const auto& r : rows) out.append(row_dict(r));
  return out;
}

}  // namespace

PYBIND11_MODULE(mvbismut, m) {
  m.doc() = "monte carlo measure-derivative estimators for mckean-vlasov dynamics";
  m.attr("__version__") = "0.1.0";

  m.def(
      "philox_raw",
      [](std::uint64_t seed, std::uint64_t stream, std::uint64_t particle, std::uint64_t block) {
        mvb::rng::Block b = mvb::rng::raw_block(seed, stream, particle, block);
        return py::make_tuple(b[0], b[1], b[2], b[3]);
      },
      py::arg("seed"), py::arg("stream"), py::arg("particle"), py::arg("block"),
      "raw counter block: key=(seed, stream), counter=(particle, block, 0, 0)");

  m.def(
      "normals",
      [](std::uint64_t seed, std::uint64_t stream, std::size_t particle, std::uint64_t count) {
        std::vector<double> out(count);
        mvb::rng::fill_normals(seed, stream, particle, particle + 1, 0, count, out.data());
        return out;
      },
      py::arg("seed"), py::arg("stream"), py::arg("particle"), py::arg("count"),
      "the normal draw sequence of one particle");

  m.def("set_max_threads", &mvb::set_max_threads, py::arg("n"),
        "worker cap; results never depend on it");
  m.def("model_registry", &mvb::model_registry);
  m.def("default_config_json",
        []() { return mvb::serialize_config(mvb::ScenarioConfig{}); });

  m.def(
      "run_scenario_json",
      [](const std::string& text) {
        mvb::ScenarioRun run = mvb::run_scenario(mvb::parse_config(text));
        py::dict d;
        d["rows"] = rows_list(run.rows);
        d["agreement"] = run.agreement;
        d["csv"] = mvb::to_csv(run.rows);
        return d;
      },
      py::arg("config_json"), "run every method requested by a json config");

  m.def(
      "tv_comparison_json",
      [](const std::string& text) {
        std::vector<mvb::ResultRow> rows = mvb::run_tv_comparison(mvb::parse_config(text));
        py::dict d;
        d["rows"] = rows_list(rows);
        d["csv"] = mvb::to_csv(rows);
        return d;
      },
      py::arg("config_json"), "terminal-law histogram distance next to its bound");
}
