#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "scfm/scfm.hpp"

namespace fs = std::filesystem;
using namespace scfm;

namespace {

// "auto" or a nonnegative number.
std::optional<double> parse_lambda(const std::string& s) {
  if (s == "auto") return std::nullopt;
  double v = 0.0;
  try {
    std::size_t used = 0;
    v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "--lambda must be 'auto' or a number, got '" + s + "'");
  }
  detail::require(v >= 0.0, ErrorCode::InvalidArgument, "--lambda must be >= 0");
  return v;
}

EmissionMatrix read_emission(const std::string& path, const ModelShape& shape) {
  const MatrixXd full = read_csv(path);
  detail::require(full.rows() == shape.L && full.cols() == shape.standard_rows(), ErrorCode::ShapeMismatch,
                  path + ": expected " + std::to_string(shape.L) + "x" + std::to_string(shape.standard_rows()));
  return EmissionMatrix::from_full(shape, full, 1e-9 * std::max(1.0, full.cwiseAbs().maxCoeff()));
}

void write_trace(const std::string& path, const EMResult& res) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << "restart,iteration,loglik\n";
  for (std::size_t r = 0; r < res.restarts.size(); ++r)
    for (std::size_t i = 0; i < res.restarts[r].loglik.size(); ++i)
      out << r << ',' << i << ',' << format_double(res.restarts[r].loglik[i]) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter learning for shared-component factorial models"};
  app.require_subcommand(1);

  std::string config, out_dir, in, out, diag, report, x_path, o_path, r_path, mode = "iid", trace, lambda = "auto";
  int M = 3, K = 2, restarts = 20, em_restarts = 10, max_iters = 200;
  std::uint64_t seed = 1;
  double threshold = 0.5;
  bool force = false;

  auto* gen = app.add_subcommand("generate", "Sample a synthetic dataset");
  gen->add_option("--config", config, "Generator config JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* cl = app.add_subcommand("cluster", "Estimate the combination means by k-means");
  cl->add_option("--in", in, "Observations CSV (L x T)")->required()->check(CLI::ExistingFile);
  cl->add_option("--M", M)->required()->check(CLI::PositiveNumber);
  cl->add_option("--K", K)->required()->check(CLI::PositiveNumber);
  cl->add_option("--restarts", restarts)->capture_default_str();
  cl->add_option("--seed", seed)->capture_default_str();
  cl->add_option("--out", out, "Centers CSV (L x M^K)")->required();
  cl->add_option("--diag", diag, "Diagnostics JSON");

  auto* le = app.add_subcommand("learn", "Recover the emission matrix from combination means");
  le->add_option("--xc", in, "Combination means CSV (L x M^K)")->required()->check(CLI::ExistingFile);
  le->add_option("--M", M)->required()->check(CLI::PositiveNumber);
  le->add_option("--K", K)->required()->check(CLI::PositiveNumber);
  le->add_option("--lambda", lambda, "'auto' or a value")->capture_default_str();
  le->add_option("--out", out, "Emission CSV (L x KM)")->required();
  le->add_option("--report", report, "Report JSON");

  auto* inf = app.add_subcommand("infer-assignments", "Sparse-code observations against an emission matrix");
  inf->add_option("--o", o_path, "Emission CSV (L x KM)")->required()->check(CLI::ExistingFile);
  inf->add_option("--x", x_path, "Observations CSV (L x T)")->required()->check(CLI::ExistingFile);
  inf->add_option("--M", M)->required()->check(CLI::PositiveNumber);
  inf->add_option("--K", K)->required()->check(CLI::PositiveNumber);
  inf->add_option("--lambda", lambda, "'auto' or a value")->capture_default_str();
  inf->add_option("--threshold", threshold)->capture_default_str();
  inf->add_option("--out", out, "Assignments CSV (KM x T, standard encoding)")->required();
  inf->add_option("--report", report, "Report JSON");

  auto* est = app.add_subcommand("estimate", "Priors or transitions plus noise covariance");
  est->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
  est->add_option("--o", o_path)->required()->check(CLI::ExistingFile);
  est->add_option("--r", r_path, "Assignments CSV (KM x T, standard encoding)")->required()->check(CLI::ExistingFile);
  est->add_option("--mode", mode)->check(CLI::IsMember({"iid", "markov"}))->capture_default_str();
  est->add_option("--out", out, "Parameters JSON")->required();

  auto* em = app.add_subcommand("em", "Exact EM baseline");
  em->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
  em->add_option("--M", M)->required()->check(CLI::PositiveNumber);
  em->add_option("--K", K)->required()->check(CLI::PositiveNumber);
  em->add_option("--restarts", em_restarts)->capture_default_str();
  em->add_option("--max-iters", max_iters)->capture_default_str();
  em->add_option("--seed", seed)->capture_default_str();
  em->add_option("--out", out, "Emission CSV (L x KM)")->required();
  em->add_option("--trace", trace, "Log-likelihood trace CSV");

  auto* run = app.add_subcommand("run", "Full pipeline: cluster, learn, infer, estimate");
  run->add_option("--x", x_path)->required()->check(CLI::ExistingFile);
  run->add_option("--M", M)->required()->check(CLI::PositiveNumber);
  run->add_option("--K", K)->required()->check(CLI::PositiveNumber);
  run->add_option("--restarts", restarts)->capture_default_str();
  run->add_option("--seed", seed)->capture_default_str();
  run->add_option("--mode", mode)->check(CLI::IsMember({"iid", "markov"}))->capture_default_str();
  run->add_option("--out-dir", out_dir)->required();
  run->add_flag("--force", force, "Continue past missing combinations");

  auto* id = app.add_subcommand("identify", "Rank analysis of the combination matrices");
  id->add_option("--M", M)->required()->check(CLI::PositiveNumber);
  id->add_option("--K", K)->required()->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "Synthetic benchmark sweep");
  bench->add_option("--config", config, "Benchmark config JSON")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = generator_config_from_json(read_json(config));
      const auto data = generate(cfg);
      fs::create_directories(out_dir);
      const fs::path d(out_dir);
      write_csv((d / "X.csv").string(), data.observations);
      write_csv((d / "O_true.csv").string(), data.emission.full());
      write_csv((d / "R_true.csv").string(), data.assignments.as(Form::Standard).encoded());
      json p{{"config", to_json(cfg)}, {"dictionary_retries", data.dictionary_retries}, {"priors", json::array()},
             {"transitions", json::array()}, {"shared", to_json(data.emission.shared())}};
      for (const auto& v : data.priors) p["priors"].push_back(to_json(v));
      for (const auto& a : data.transitions) p["transitions"].push_back(to_json(a));
      write_json((d / "params.json").string(), p);
    } else if (*cl) {
      const ModelShape shape{1, M, K};
      const MatrixXd x = read_csv(in);
      ClusterOptions opts;
      opts.restarts = restarts;
      opts.seed = seed;
      const auto res = estimate_combinations(x, {static_cast<int>(x.rows()), shape.M, shape.K}, opts);
      write_csv(out, res.centers);
      if (!diag.empty()) write_json(diag, to_json(res));
      if (res.degenerate())
        std::cerr << "warning: " << res.missing_count << " combinations missing; recovery will be unreliable\n";
    } else if (*le) {
      const MatrixXd xc = read_csv(in);
      const ModelShape shape{static_cast<int>(xc.rows()), M, K};
      LearnOptions opts;
      opts.coding.lambda = parse_lambda(lambda);
      const auto res = learn_emissions(xc, shape, opts);
      write_csv(out, res.O_hat.full());
      if (!report.empty()) write_json(report, to_json(res));
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
    } else if (*inf) {
      const MatrixXd x = read_csv(x_path);
      const ModelShape shape{static_cast<int>(x.rows()), M, K};
      const auto o = read_emission(o_path, shape);
      CodingOptions opts;
      opts.lambda = parse_lambda(lambda);
      const auto res = infer_assignments(o, x, opts, threshold);
      write_csv(out, res.assignments.as(Form::Standard).encoded());
      if (!report.empty())
        write_json(report, {{"rejection_rate", res.rejection_rate},
                            {"high_rejection", res.high_rejection},
                            {"nonconverged_columns", res.nonconverged_columns}});
      if (res.high_rejection) std::cerr << "warning: rejection rate " << res.rejection_rate << '\n';
    } else if (*est) {
      const MatrixXd x = read_csv(x_path);
      const MatrixXd r = read_csv(r_path);
      detail::require(r.cols() == x.cols() && r.cols() >= 1, ErrorCode::ShapeMismatch,
                      "R must have one column per observation");
      const int k = static_cast<int>(std::lround(r.col(0).sum()));
      detail::require(k >= 1 && r.rows() % k == 0, ErrorCode::ShapeMismatch, "cannot derive K and M from R");
      const ModelShape shape{static_cast<int>(x.rows()), static_cast<int>(r.rows()) / k, k};
      const auto o = read_emission(o_path, shape);
      const auto assign = AssignmentMatrix::from_encoded(shape, Form::Standard, r);
      json outj{{"shape", to_json(shape)}, {"priors", json::array()}};
      for (const auto& p : estimate_priors(assign)) outj["priors"].push_back(to_json(p));
      if (mode == "markov") outj["transitions"] = to_json(estimate_transitions(assign));
      outj["covariance"] = to_json(estimate_covariance(x, o, assign));
      write_json(out, outj);
    } else if (*em) {
      const MatrixXd x = read_csv(x_path);
      EMConfig cfg;
      cfg.restarts = em_restarts;
      cfg.max_iters = max_iters;
      cfg.seed = seed;
      const auto res = em_fit(x, {static_cast<int>(x.rows()), M, K}, cfg);
      write_csv(out, res.params.emission.full());
      if (!trace.empty()) write_trace(trace, res);
      int violations = 0;
      for (const auto& t : res.restarts) violations += t.monotone_violations;
      if (violations) std::cerr << "warning: " << violations << " log-likelihood decreases\n";
    } else if (*run) {
      const MatrixXd x = read_csv(x_path);
      const ModelShape shape{static_cast<int>(x.rows()), M, K};
      PipelineOptions opts;
      opts.cluster.restarts = restarts;
      opts.cluster.seed = seed;
      opts.mode = mode == "markov" ? ChainType::Markov : ChainType::IID;
      opts.force = force;
      const auto res = run_pipeline(x, shape, opts);
      fs::create_directories(out_dir);
      const fs::path d(out_dir);
      write_csv((d / "Xc.csv").string(), res.clusters.centers);
      write_csv((d / "O_hat.csv").string(), res.dictionary.O_hat.full());
      write_csv((d / "R_hat.csv").string(), res.assignments.assignments.as(Form::Standard).encoded());
      json p{{"priors", json::array()},
             {"covariance", to_json(res.params.covariance)},
             {"clustering", to_json(res.clusters)},
             {"recovery", to_json(res.dictionary)},
             {"rejection_rate", res.assignments.rejection_rate},
             {"timings",
              {{"clustering", res.timings.clustering},
               {"recovery", res.timings.recovery},
               {"inference", res.timings.inference},
               {"estimation", res.timings.estimation}}}};
      for (const auto& v : res.params.priors) p["priors"].push_back(to_json(v));
      if (res.params.transitions) p["transitions"] = to_json(*res.params.transitions);
      write_json((d / "params.json").string(), p);
    } else if (*id) {
      const ModelShape shape{1, M, K};
      json j = to_json(verify_identifiability(shape));
      j["standard"] = to_json(numerical_rank(build_combination_matrix(shape, Form::Standard).matrix.cast<double>()));
      j["shared"] = to_json(numerical_rank(build_combination_matrix(shape, Form::SharedComponent).matrix.cast<double>()));
      std::cout << j.dump(2) << '\n';
    } else if (*bench) {
      const auto cfg = bench_config_from_json(read_json(config));
      const auto res = run_benchmark(cfg);
      write_benchmark(cfg, res);
      int failed = 0;
      for (const auto& t : res.trials) failed += t.failed;
      std::cerr << res.trials.size() << " trial rows (" << failed << " failed) written to " << cfg.output_dir << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    const bool config_error = e.code() == ErrorCode::InvalidArgument || e.code() == ErrorCode::IoError;
    return config_error ? 2 : 1;
  }
  return 0;
}
