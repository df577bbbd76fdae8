#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "riskprobe/agent_sim.hpp"
#include "riskprobe/analysis.hpp"
#include "riskprobe/errors.hpp"
#include "riskprobe/estimator.hpp"
#include "riskprobe/gateway.hpp"
#include "riskprobe/mpl_series.hpp"
#include "riskprobe/persona.hpp"
#include "riskprobe/tcn_model.hpp"

namespace py = pybind11;
using namespace riskprobe;

namespace {

// Round-trips through the Python json module; these are small documents.
py::object to_python(const nlohmann::json& doc) {
  return py::module_::import("json").attr("loads")(doc.dump());
}

LambdaPropagation propagation_from(const std::string& name) {
  if (name == "midpoint") return LambdaPropagation::Midpoint;
  if (name == "corners") return LambdaPropagation::IntervalCorners;
  throw py::value_error("lambda_propagation must be 'midpoint' or 'corners'");
}

const LotterySeries& series_at(int series) {
  if (series < 1 || series > 3) throw py::value_error("series must be 1, 2 or 3");
  return builtin_series(static_cast<SeriesId>(series - 1));
}

py::dict interval(const Interval& iv) {
  py::dict d;
  d["lo"] = iv.lo;
  d["hi"] = iv.hi;
  return d;
}

py::dict estimate_dict(const Estimate& e) {
  py::dict d;
  d["sigma"] = e.point.sigma;
  d["alpha"] = e.point.alpha;
  d["lambda"] = e.point.lambda;
  d["sigma_interval"] = interval(e.intervals.sigma);
  d["alpha_interval"] = interval(e.intervals.alpha);
  d["lambda_interval"] = interval(e.intervals.lambda);
  d["feasible_count"] = e.intervals.feasible_count;
  d["warnings"] = e.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Prospect-theory risk elicitation: model, lottery series, estimator, synthetic cohorts, OLS.";

  static py::exception<DomainError> domain_error(m, "DomainError", PyExc_ValueError);
  static py::exception<InfeasibleError> infeasible_error(m, "InfeasibleError", PyExc_RuntimeError);
  static py::exception<RankDeficientError> rank_error(m, "RankDeficientError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DomainError& e) {
      domain_error(e.what());
    } catch (const InfeasibleError& e) {
      infeasible_error(e.what());
    } catch (const RankDeficientError& e) {
      rank_error(e.what());
    } catch (const InvariantError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ParseError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::class_<BehaviorParams>(m, "BehaviorParams")
      .def(py::init([](double sigma, double alpha, double lam) {
             BehaviorParams p{sigma, alpha, lam};
             p.validate();
             return p;
           }),
           py::arg("sigma") = 0.0, py::arg("alpha") = 1.0, py::arg("lam") = 1.0)
      .def_readwrite("sigma", &BehaviorParams::sigma)
      .def_readwrite("alpha", &BehaviorParams::alpha)
      .def_readwrite("lam", &BehaviorParams::lambda)
      .def("__eq__", [](const BehaviorParams& a, const BehaviorParams& b) { return a == b; })
      .def("__repr__", [](const BehaviorParams& p) {
        return "BehaviorParams(sigma=" + std::to_string(p.sigma) + ", alpha=" + std::to_string(p.alpha) +
               ", lam=" + std::to_string(p.lambda) + ")";
      });

  m.def("value", &value, py::arg("x"), py::arg("params"));
  m.def("weight", &weight, py::arg("p"), py::arg("params"));
  m.def(
      "utility",
      [](std::array<double, 2> outcomes, std::array<double, 2> probs, const BehaviorParams& params) {
        return utility(LotteryOption{outcomes, probs}, params);
      },
      py::arg("outcomes"), py::arg("probs"), py::arg("params"));

  py::class_<SwitchProfile>(m, "SwitchProfile")
      .def(py::init([](int s1, int s2, int s3) {
             SwitchProfile p{s1, s2, s3, {}};
             p.validate();
             return p;
           }),
           py::arg("s1"), py::arg("s2"), py::arg("s3"))
      .def_readonly("s1", &SwitchProfile::s1)
      .def_readonly("s2", &SwitchProfile::s2)
      .def_readonly("s3", &SwitchProfile::s3)
      .def_property_readonly("clamped", [](const SwitchProfile& p) { return clamped_flags(p); })
      .def("as_tuple", [](const SwitchProfile& p) { return py::make_tuple(p.s1, p.s2, p.s3); })
      .def("__eq__", [](const SwitchProfile& a, const SwitchProfile& b) { return a == b; })
      .def("__repr__", [](const SwitchProfile& p) {
        return "SwitchProfile(" + std::to_string(p.s1) + ", " + std::to_string(p.s2) + ", " +
               std::to_string(p.s3) + ")";
      });

  m.def("play_profile", py::overload_cast<const BehaviorParams&>(&play_profile), py::arg("params"),
        "Switch points of a noise-free agent on the three built-in series.");

  m.def(
      "series_table",
      [](int series) { return table_text(series_at(series)); },
      py::arg("series"));
  m.def(
      "series_prompt",
      [](int series) { return series_prompt(series_at(series)); },
      py::arg("series"));
  m.def(
      "series_json", [](int series) { return to_python(to_json(series_at(series))); },
      py::arg("series"));

  m.def(
      "lambda_interval",
      [](int s3, double sigma) {
        return lambda_interval(builtin_series(SeriesId::Series3), s3, sigma, 1.0);
      },
      py::arg("s3"), py::arg("sigma"));

  m.def(
      "estimate",
      [](const SwitchProfile& profile, const std::string& lambda_propagation) {
        EstimateConfig cfg;
        cfg.lambda_propagation = propagation_from(lambda_propagation);
        return estimate_dict(estimate(profile, cfg));
      },
      py::arg("profile"), py::arg("lambda_propagation") = "midpoint");

  m.def(
      "synthetic_cohort",
      [](const BehaviorParams& params, int n, std::uint64_t seed, double epsilon, const std::string& regime) {
        ProviderProfile p;
        p.name = "synthetic";
        p.kind = ResponderKind::Synthetic;
        p.params = params;
        p.epsilon = epsilon;
        p.rate_limit = std::numeric_limits<double>::infinity();
        SyntheticResponder responder(p);
        Gateway gw(p, responder);
        CohortConfig cfg;
        cfg.regime = regime_from_string(regime);
        cfg.n_trials = n;
        cfg.seed = seed;
        py::list out;
        for (const auto& t : gw.run_cohort(cfg).transcripts) {
          py::dict row;
          row["trial_id"] = t.trial_id;
          row["profile"] = t.all_valid() ? py::cast(t.profile()) : py::none();
          row["persona"] = t.persona ? to_python(to_json(*t.persona)) : py::none();
          row["persona_dummies"] = t.persona ? py::cast(encode(*t.persona).values) : py::none();
          out.append(row);
        }
        return out;
      },
      py::arg("params"), py::arg("n"), py::arg("seed") = 0, py::arg("epsilon") = 0.0,
      py::arg("regime") = "context-free");

  m.def("foundational_dummy_names", &foundational_dummy_names);

  m.def(
      "regress",
      [](const std::vector<double>& y, const std::vector<std::vector<double>>& x,
         const std::vector<std::string>& names) {
        const auto r = regress(y, x, names);
        py::dict d;
        d["terms"] = r.terms;
        d["coefficients"] = r.coefficients;
        d["std_errors"] = r.std_errors;
        d["t_stats"] = r.t_stats;
        d["p_values"] = r.p_values;
        std::vector<std::string> stars;
        for (auto s : r.stars) stars.emplace_back(to_string(s));
        d["stars"] = stars;
        d["n_obs"] = r.n_obs;
        d["r_squared"] = r.r_squared;
        return d;
      },
      py::arg("y"), py::arg("x"), py::arg("names"));
}
