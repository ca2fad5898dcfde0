#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "scfm/clustering.hpp"
#include "scfm/em.hpp"
#include "scfm/error.hpp"
#include "scfm/eval.hpp"
#include "scfm/generator.hpp"
#include "scfm/io.hpp"
#include "scfm/recovery.hpp"
#include "scfm/rng.hpp"

namespace scfm {

enum class SweepVariable { Sigma2, L, T };

inline std::string to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::Sigma2: return "sigma2";
    case SweepVariable::L: return "L";
    case SweepVariable::T: return "T";
  }
  return "?";
}

struct BenchmarkConfig {
  SweepVariable sweep_variable = SweepVariable::Sigma2;
  std::vector<double> sweep_values;
  /// Values held fixed while another variable is swept.
  int L = 50;
  Index T = 200;
  double sigma2 = 0.5;
  int M = 3;
  int K = 2;
  double dictionary_variance = 10.0;
  int trials = 50;
  std::vector<std::string> methods{"proposed", "em"};
  std::uint64_t seed_base = 1;
  std::string output_dir = "bench_out";
  int cluster_restarts = 20;
  int em_restarts = 10;
  int em_max_iters = 200;
  double em_rel_tol = 1e-6;
  double em_init_perturbation = 0.1;
  bool svg = true;
  /// Worker cap; 0 means hardware concurrency (further capped by SCFM_THREADS).
  int threads = 0;

  void validate() const {
    detail::require(!sweep_values.empty(), ErrorCode::InvalidArgument, "sweep_values must be nonempty");
    detail::require(trials >= 1, ErrorCode::InvalidArgument, "trials must be >= 1");
    detail::require(!methods.empty(), ErrorCode::InvalidArgument, "methods must be nonempty");
    for (const auto& m : methods)
      detail::require(m == "proposed" || m == "em", ErrorCode::InvalidArgument, "unknown method '" + m + "'");
    for (double v : sweep_values) {
      if (sweep_variable == SweepVariable::Sigma2)
        detail::require(v >= 0.0, ErrorCode::InvalidArgument, "sigma2 sweep values must be >= 0");
      else
        detail::require(v >= 1.0 && v == std::floor(v), ErrorCode::InvalidArgument,
                        to_string(sweep_variable) + " sweep values must be positive integers");
    }
    ModelShape{L, M, K}.validate();
  }
};

struct TrialResult {
  std::string method;
  double sweep_value = 0.0;
  int trial = 0;
  double dict_error = 0.0;
  double dict_error_norm = 0.0;
  double runtime_seconds = 0.0;
  bool failed = false;
  json diagnostics = json::object();
};

struct AggregateRow {
  std::string method;
  double sweep_value = 0.0;
  int n_ok = 0;
  int n_failed = 0;
  double error_mean = 0.0, error_se = 0.0;
  double norm_mean = 0.0, norm_se = 0.0;
  double runtime_mean = 0.0, runtime_se = 0.0;
  double failure_rate() const { return static_cast<double>(n_failed) / std::max(1, n_ok + n_failed); }
};

struct BenchmarkResults {
  std::vector<TrialResult> trials;
  std::vector<AggregateRow> aggregates;
};

inline std::uint64_t method_id(const std::string& m) { return m == "proposed" ? 1 : 2; }

/// Seed for the data of one (sweep value, trial); shared by all methods.
inline std::uint64_t data_seed(std::uint64_t seed_base, double sweep_value, int trial) {
  return seed_base ^ splitmix64(hash_double(sweep_value) ^ splitmix64(static_cast<std::uint64_t>(trial)));
}

/// Seed for a method's own randomness in one (sweep value, trial).
inline std::uint64_t method_seed(std::uint64_t seed_base, double sweep_value, int trial, const std::string& m) {
  return seed_base ^ splitmix64(hash_double(sweep_value) ^ splitmix64(static_cast<std::uint64_t>(trial)) ^
                                splitmix64(method_id(m) << 32));
}

inline GeneratorConfig trial_generator_config(const BenchmarkConfig& cfg, double sweep_value, int trial) {
  GeneratorConfig g;
  g.shape = {cfg.L, cfg.M, cfg.K};
  g.T = cfg.T;
  g.noise_variance = cfg.sigma2;
  switch (cfg.sweep_variable) {
    case SweepVariable::Sigma2: g.noise_variance = sweep_value; break;
    case SweepVariable::L: g.shape.L = static_cast<int>(sweep_value); break;
    case SweepVariable::T: g.T = static_cast<Index>(sweep_value); break;
  }
  g.dictionary_variance = cfg.dictionary_variance;
  g.seed = data_seed(cfg.seed_base, sweep_value, trial);
  return g;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline TrialResult run_method(const BenchmarkConfig& cfg, const std::string& method, double sweep_value, int trial,
                              const SyntheticData& data) {
  TrialResult r;
  r.method = method;
  r.sweep_value = sweep_value;
  r.trial = trial;
  const ModelShape shape = data.emission.shape();
  const std::uint64_t seed = method_seed(cfg.seed_base, sweep_value, trial, method);
  const double scale = data.emission.full().norm();
  try {
    if (method == "proposed") {
      ClusterOptions co;
      co.restarts = cfg.cluster_restarts;
      co.seed = seed;
      co.concentration_c.clear();
      const auto t0 = std::chrono::steady_clock::now();
      ClusteredCombinations clusters;
      try {
        clusters = estimate_combinations(data.observations, shape, co);
        if (clusters.degenerate())
          throw Error(ErrorCode::DegenerateClusters, std::to_string(clusters.missing_count) + " combinations missing");
      } catch (const Error& e) {
        throw e.with_stage("clustering");
      }
      RecoveredDictionary dict;
      try {
        dict = learn_emissions(clusters.centers, shape);
      } catch (const Error& e) {
        throw e.with_stage("recovery");
      }
      r.runtime_seconds = seconds_since(t0);
      r.dict_error = dictionary_error(dict.O_hat, data.emission);
      r.diagnostics = {{"i_star", dict.i_star},
                       {"tie_margin", dict.tie_margin},
                       {"b1_gap", dict.b1_gap},
                       {"separation_ratio", clusters.quality.separation_ratio},
                       {"concentration_ok", clusters.quality.concentration_ok},
                       {"warnings", dict.warnings.size()}};
    } else {
      EMConfig ec;
      ec.restarts = cfg.em_restarts;
      ec.max_iters = cfg.em_max_iters;
      ec.rel_tol = cfg.em_rel_tol;
      ec.init_perturbation = cfg.em_init_perturbation;
      ec.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = em_fit(data.observations, shape, ec);
      r.runtime_seconds = seconds_since(t0);
      r.dict_error = dictionary_error(res.params.emission, data.emission);
      int violations = 0, singular = 0, converged = 0;
      for (const auto& t : res.restarts) {
        violations += t.monotone_violations;
        singular += t.singular_msteps;
        converged += t.converged;
      }
      r.diagnostics = {{"best_restart", res.best_restart},
                       {"final_loglik", res.loglik_trace.back()},
                       {"monotone_violations", violations},
                       {"singular_msteps", singular},
                       {"converged_restarts", converged}};
    }
    r.dict_error_norm = scale > 0.0 ? r.dict_error / scale : 0.0;
    r.diagnostics["dictionary_retries"] = data.dictionary_retries;
  } catch (const Error& e) {
    r.failed = true;
    r.dict_error = r.dict_error_norm = 0.0;
    r.diagnostics = {{"error", std::string(to_string(e.code()))}, {"stage", e.stage()}, {"detail", e.detail()}};
  }
  return r;
}

inline int worker_count(const BenchmarkConfig& cfg, std::size_t jobs) {
  int n = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("SCFM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return std::max(1, std::min<int>(n, static_cast<int>(jobs)));
}

inline void mean_se(const std::vector<double>& v, double& mean, double& se) {
  mean = se = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

}  // namespace detail

/// Aggregates per (method, sweep value) over successful trials.
inline std::vector<AggregateRow> aggregate(const BenchmarkConfig& cfg, const std::vector<TrialResult>& trials) {
  std::vector<AggregateRow> out;
  for (const auto& m : cfg.methods)
    for (double v : cfg.sweep_values) {
      AggregateRow a;
      a.method = m;
      a.sweep_value = v;
      std::vector<double> err, norm, rt;
      for (const auto& t : trials) {
        if (t.method != m || t.sweep_value != v) continue;
        if (t.failed) {
          ++a.n_failed;
          continue;
        }
        ++a.n_ok;
        err.push_back(t.dict_error);
        norm.push_back(t.dict_error_norm);
        rt.push_back(t.runtime_seconds);
      }
      detail::mean_se(err, a.error_mean, a.error_se);
      detail::mean_se(norm, a.norm_mean, a.norm_se);
      detail::mean_se(rt, a.runtime_mean, a.runtime_se);
      out.push_back(a);
    }
  return out;
}

/// Runs every (sweep value, trial, method) on freshly generated data. Trial
/// failures become failed rows; the sweep never aborts. Results are ordered
/// by sweep value, trial, method regardless of scheduling.
inline BenchmarkResults run_benchmark(const BenchmarkConfig& cfg) {
  cfg.validate();
  const std::size_t nv = cfg.sweep_values.size(), nt = static_cast<std::size_t>(cfg.trials),
                    nm = cfg.methods.size();
  std::vector<TrialResult> slots(nv * nt * nm);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t job = next++; job < nv * nt; job = next++) {
      const std::size_t vi = job / nt;
      const int trial = static_cast<int>(job % nt);
      const double value = cfg.sweep_values[vi];
      std::optional<SyntheticData> data;
      std::optional<Error> gen_error;
      try {
        data = generate(trial_generator_config(cfg, value, trial));
      } catch (const Error& e) {
        gen_error = e.with_stage("generation");
      }
      for (std::size_t mi = 0; mi < nm; ++mi) {
        auto& slot = slots[job * nm + mi];
        if (data) {
          slot = detail::run_method(cfg, cfg.methods[mi], value, trial, *data);
        } else {
          slot.method = cfg.methods[mi];
          slot.sweep_value = value;
          slot.trial = trial;
          slot.failed = true;
          slot.diagnostics = {{"error", std::string(to_string(gen_error->code()))},
                              {"stage", gen_error->stage()},
                              {"detail", gen_error->detail()}};
        }
      }
    }
  };
  const int workers = detail::worker_count(cfg, nv * nt);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  BenchmarkResults res;
  res.trials = std::move(slots);
  res.aggregates = aggregate(cfg, res.trials);
  return res;
}

namespace detail {

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string fmt_value(double v) { return format_double(v); }

}  // namespace detail

inline constexpr const char* kResultsHeader =
    "method,sweep_var,sweep_value,trial,dict_error,dict_error_norm,runtime_s,failed,diag_json";

inline std::string results_csv(const BenchmarkConfig& cfg, const BenchmarkResults& res) {
  std::string out = std::string(kResultsHeader) + "\n";
  const std::string var = to_string(cfg.sweep_variable);
  for (const auto& t : res.trials) {
    out += t.method + "," + var + "," + detail::fmt_value(t.sweep_value) + "," + std::to_string(t.trial) + "," +
           detail::fmt_value(t.dict_error) + "," + detail::fmt_value(t.dict_error_norm) + "," +
           detail::fmt_value(t.runtime_seconds) + "," + (t.failed ? "1" : "0") + "," +
           detail::csv_quote(t.diagnostics.dump()) + "\n";
  }
  // Aggregate rows: `failed` holds the failure rate; means exclude failed trials.
  for (const auto& a : res.aggregates) {
    json diag{{"n", a.n_ok},
              {"n_failed", a.n_failed},
              {"dict_error_se", a.error_se},
              {"dict_error_norm_se", a.norm_se},
              {"note", "means and standard errors exclude failed trials"}};
    out += a.method + "," + var + "," + detail::fmt_value(a.sweep_value) + ",aggregate," +
           detail::fmt_value(a.error_mean) + "," + detail::fmt_value(a.norm_mean) + "," +
           detail::fmt_value(a.runtime_mean) + "," + detail::fmt_value(a.failure_rate()) + "," +
           detail::csv_quote(diag.dump()) + "\n";
  }
  return out;
}

inline std::string plot_csv(const BenchmarkConfig& cfg, const BenchmarkResults& res) {
  std::string out = "x";
  for (const auto& m : cfg.methods)
    for (const char* f : {"_error_mean", "_error_se", "_error_norm_mean", "_error_norm_se", "_runtime_mean",
                          "_runtime_se", "_failure_rate"})
      out += "," + m + f;
  out += "\n";
  for (double v : cfg.sweep_values) {
    out += detail::fmt_value(v);
    for (const auto& m : cfg.methods)
      for (const auto& a : res.aggregates)
        if (a.method == m && a.sweep_value == v)
          for (double f : {a.error_mean, a.error_se, a.norm_mean, a.norm_se, a.runtime_mean, a.runtime_se,
                           a.failure_rate()})
            out += "," + detail::fmt_value(f);
    out += "\n";
  }
  return out;
}

/// Line plot with error bars of one aggregate field per method.
inline std::string plot_svg(const BenchmarkConfig& cfg, const BenchmarkResults& res, bool runtime) {
  const double W = 640, H = 420, ml = 70, mr = 120, mt = 30, mb = 50;
  double xmin = *std::min_element(cfg.sweep_values.begin(), cfg.sweep_values.end());
  double xmax = *std::max_element(cfg.sweep_values.begin(), cfg.sweep_values.end());
  if (xmax == xmin) xmax = xmin + 1.0;
  double ymax = 0.0;
  for (const auto& a : res.aggregates)
    ymax = std::max(ymax, runtime ? a.runtime_mean + a.runtime_se : a.error_mean + a.error_se);
  if (!(ymax > 0.0)) ymax = 1.0;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - y / ymax * (H - mt - mb); };
  auto f = [](double v) { return format_double(std::round(v * 100.0) / 100.0); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f(W) + "\" height=\"" + f(H) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<line x1=\"" + f(ml) + "\" y1=\"" + f(H - mb) + "\" x2=\"" + f(W - mr) + "\" y2=\"" + f(H - mb) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + f(ml) + "\" y1=\"" + f(mt) + "\" x2=\"" + f(ml) + "\" y2=\"" + f(H - mb) +
       "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + f((W - mr + ml) / 2) + "\" y=\"" + f(H - 10) + "\" text-anchor=\"middle\">" +
       to_string(cfg.sweep_variable) + "</text>\n";
  s += "<text x=\"15\" y=\"" + f(H / 2) + "\" transform=\"rotate(-90 15 " + f(H / 2) + ")\" text-anchor=\"middle\">" +
       (runtime ? "runtime (s)" : "dictionary error") + "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymax * i / 4.0;
    s += "<text x=\"" + f(ml - 5) + "\" y=\"" + f(py(yv) + 4) + "\" text-anchor=\"end\" font-size=\"10\">" +
         format_double(std::round(yv * 1000.0) / 1000.0) + "</text>\n";
  }
  for (double v : cfg.sweep_values)
    s += "<text x=\"" + f(px(v)) + "\" y=\"" + f(H - mb + 15) + "\" text-anchor=\"middle\" font-size=\"10\">" +
         format_double(v) + "</text>\n";
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const char* col = colors[mi % 4];
    std::string pts;
    for (double v : cfg.sweep_values)
      for (const auto& a : res.aggregates) {
        if (a.method != cfg.methods[mi] || a.sweep_value != v || a.n_ok == 0) continue;
        const double y = runtime ? a.runtime_mean : a.error_mean;
        const double e = runtime ? a.runtime_se : a.error_se;
        pts += f(px(v)) + "," + f(py(y)) + " ";
        s += "<line x1=\"" + f(px(v)) + "\" y1=\"" + f(py(y - e)) + "\" x2=\"" + f(px(v)) + "\" y2=\"" +
             f(py(y + e)) + "\" stroke=\"" + col + "\"/>\n";
        s += "<circle cx=\"" + f(px(v)) + "\" cy=\"" + f(py(y)) + "\" r=\"3\" fill=\"" + col + "\"/>\n";
      }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" points=\"" + pts + "\"/>\n";
    s += "<text x=\"" + f(W - mr + 10) + "\" y=\"" + f(mt + 20 * static_cast<double>(mi)) + "\" fill=\"" + col +
         "\">" + cfg.methods[mi] + "</text>\n";
  }
  return s + "</svg>\n";
}

inline BenchmarkConfig bench_config_from_json(const json& j) {
  BenchmarkConfig c;
  try {
    const std::string var = j.at("sweep_variable").get<std::string>();
    if (var == "sigma2")
      c.sweep_variable = SweepVariable::Sigma2;
    else if (var == "L")
      c.sweep_variable = SweepVariable::L;
    else if (var == "T")
      c.sweep_variable = SweepVariable::T;
    else
      throw Error(ErrorCode::InvalidArgument, "sweep_variable must be sigma2, L or T");
    c.sweep_values = j.at("sweep_values").get<std::vector<double>>();
    if (j.contains("fixed")) {
      const auto& f = j.at("fixed");
      c.L = f.value("L", c.L);
      c.T = f.value("T", c.T);
      c.sigma2 = f.value("sigma2", c.sigma2);
    }
    c.M = j.value("M", c.M);
    c.K = j.value("K", c.K);
    c.dictionary_variance = j.value("dictionary_variance", c.dictionary_variance);
    c.trials = j.value("trials", c.trials);
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    c.seed_base = j.value("seed_base", c.seed_base);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.cluster_restarts = j.value("cluster_restarts", c.cluster_restarts);
    if (j.contains("em")) {
      const auto& e = j.at("em");
      c.em_restarts = e.value("restarts", c.em_restarts);
      c.em_max_iters = e.value("max_iters", c.em_max_iters);
      c.em_rel_tol = e.value("rel_tol", c.em_rel_tol);
      c.em_init_perturbation = e.value("init_perturbation", c.em_init_perturbation);
    }
    c.svg = j.value("svg", c.svg);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bench config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Writes results.csv, plot_<var>.csv and (optionally) plot_<var>.svg.
inline void write_benchmark(const BenchmarkConfig& cfg, const BenchmarkResults& res) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  auto put = [](const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
    out << text;
  };
  const std::string var = to_string(cfg.sweep_variable);
  put(dir / "results.csv", results_csv(cfg, res));
  put(dir / ("plot_" + var + ".csv"), plot_csv(cfg, res));
  if (cfg.svg) {
    put(dir / ("plot_" + var + ".svg"), plot_svg(cfg, res, false));
    if (cfg.sweep_variable == SweepVariable::T) put(dir / "plot_T_runtime.svg", plot_svg(cfg, res, true));
  }
}

}  // namespace scfm
