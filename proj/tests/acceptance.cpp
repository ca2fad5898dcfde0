// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "scfm/scfm.hpp"

namespace fs = std::filesystem;
using namespace scfm;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("%s [%d] %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const std::vector<ModelShape> kRankShapes = [] {
  std::vector<ModelShape> v;
  for (int M : {2, 3, 4})
    for (int K : {1, 2, 3}) v.push_back({1, M, K});
  return v;
}();

void criterion_ranks() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string bad;
  for (const auto& sh : kRankShapes) {
    const int expected = sh.K * sh.M - (sh.K - 1);
    for (Form f : {Form::Standard, Form::SharedComponent}) {
      const MatrixXi c = build_combination_matrix(sh, f).matrix;
      const int r = numerical_rank(c.cast<double>()).numerical_rank;
      if (r != expected || oracle::bareiss_rank(c) != expected) {
        ok = false;
        bad += fmt(" (M=%d,K=%d,%s rank %d)", sh.M, sh.K, f == Form::Standard ? "std" : "shared", r);
      }
    }
  }
  const double t = since(t0);
  report(1, ok && t < 1.0, fmt("ranks equal KM-(K-1) for 9 shapes, both forms; %.3f s (limit 1 s)%s", t, bad.c_str()));
}

void criterion_witness() {
  const auto t0 = Clock::now();
  bool ok = true;
  int cases = 0;
  for (const auto& sh : kRankShapes) {
    if (sh.K < 2) continue;
    ++cases;
    const VectorXi a = nullspace_witness(sh);
    const MatrixXi c = build_combination_matrix(sh, Form::Standard).matrix;
    const bool zero = (a.transpose() * c).cwiseAbs().maxCoeff() == 0 && a.cwiseAbs().maxCoeff() > 0;
    ok = ok && zero;
  }
  const double t = since(t0);
  report(2, ok && t < 1.0, fmt("nonzero integer witness with exact zero product in %d/6 cases; %.3f s (limit 1 s)", cases, t));
}

// Criteria 3 and 4 share the same 100 draws.
void criteria_recovery() {
  const ModelShape sh{50, 3, 2};
  const Index q = 4;
  const Index all_shared = build_combination_matrix(sh, Form::SharedComponent).all_shared_index();
  const auto b1_truth = oracle::combinations_with_shared_count(3, 2, 1);
  const auto bk_truth = oracle::combinations_with_shared_count(3, 2, 0);
  int recovered = 0, positions_ok = 0;
  double worst = 0.0, recovery_time = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GeneratorConfig g;
    g.shape = sh;
    g.seed = seed;
    const auto o = sample_dictionary(g).emission;
    const MatrixXd xc = oracle::noiseless_xc(o);

    const auto t0 = Clock::now();
    bool this_ok = false;
    RecoveredDictionary res;
    try {
      res = learn_emissions(xc, sh);
      const double err = dictionary_error(res.O_hat, o) / o.full().norm();
      worst = std::max(worst, err);
      this_ok = err <= 1e-6;
    } catch (const Error& e) {
      std::printf("  seed %llu: %s\n", static_cast<unsigned long long>(seed), e.what());
      worst = std::numeric_limits<double>::infinity();
    }
    recovery_time += since(t0);
    recovered += this_ok;
    if (!this_ok) continue;

    // Brute force: sort the i* row of the Gram matrix and read which
    // combination sits at every position l'.
    const MatrixXd gram = oracle::brute_gram(xc);
    const Index i_star = oracle::brute_shared_index(xc, q);
    std::vector<Index> order(static_cast<std::size_t>(xc.cols()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return gram(i_star, a) < gram(i_star, b); });
    const Index cols = xc.cols();
    std::set<Index> at_b1, at_bk;
    for (Index l = cols - 1 - 4; l <= cols - 2; ++l) at_b1.insert(order[static_cast<std::size_t>(l)]);
    for (Index l = 0; l < q; ++l) at_bk.insert(order[static_cast<std::size_t>(l)]);
    std::vector<Index> want_b1_pos(4), want_bk_pos(4);
    std::iota(want_b1_pos.begin(), want_b1_pos.end(), cols - 1 - 4);
    std::iota(want_bk_pos.begin(), want_bk_pos.end(), Index{0});
    const bool ok = i_star == all_shared && res.i_star == all_shared && at_b1 == b1_truth && at_bk == bk_truth &&
                    std::set<Index>(res.B1.begin(), res.B1.end()) == b1_truth &&
                    std::set<Index>(res.BK.begin(), res.BK.end()) == bk_truth && res.B1_positions == want_b1_pos &&
                    res.BK_positions == want_bk_pos && order.back() == all_shared;
    positions_ok += ok;
  }
  report(3, recovered == 100 && recovery_time < 10.0,
         fmt("exact recovery %d/100, worst relative error %.2e (limit 1e-6); %.2f s (limit 10 s)", recovered, worst,
             recovery_time));
  report(4, positions_ok == 100,
         fmt("i* = all-shared column, B1 at sorted positions 4-7 and BK at 0-%d in %d/100 trials",
             static_cast<int>(q) - 1, positions_ok));
}

const AggregateRow& row(const BenchmarkResults& r, const std::string& m, double v) {
  for (const auto& a : r.aggregates)
    if (a.method == m && a.sweep_value == v) return a;
  throw std::runtime_error("missing aggregate row");
}

BenchmarkConfig fixed_settings(SweepVariable var, std::vector<double> values) {
  BenchmarkConfig cfg;
  cfg.sweep_variable = var;
  cfg.sweep_values = std::move(values);
  cfg.L = 50;
  cfg.T = 200;
  cfg.sigma2 = 0.5;
  cfg.M = 3;
  cfg.K = 2;
  cfg.trials = 20;
  cfg.seed_base = 2024;
  cfg.svg = false;
  return cfg;
}

// Criterion 7 reuses these runs; its line is printed after criterion 6.
std::function<void()> deferred_em_check;

void criteria_synthetic() {
  const auto t0 = Clock::now();
  const auto cfg = fixed_settings(SweepVariable::L, {20, 50, 100, 200});
  const auto res = run_benchmark(cfg);
  const double t = since(t0);

  const auto& p50 = row(res, "proposed", 50);
  const auto& e50 = row(res, "em", 50);
  const bool better = p50.n_ok >= 20 && e50.n_ok >= 20 && p50.error_mean < e50.error_mean;
  report(5, better && t < 600.0,
         fmt("(a) L=50,T=200,sigma2=0.5, %d/%d trials: proposed %.4g +- %.2g < EM %.4g +- %.2g; %.1f s (limit 600 s)",
             p50.n_ok, e50.n_ok, p50.error_mean, p50.error_se, e50.error_mean, e50.error_se, t));

  bool monotone = true;
  std::string raw, norm;
  for (std::size_t i = 0; i < cfg.sweep_values.size(); ++i) {
    const auto& a = row(res, "proposed", cfg.sweep_values[i]);
    raw += fmt(" L=%g:%.3g+-%.2g", cfg.sweep_values[i], a.error_mean, a.error_se);
    norm += fmt(" L=%g:%.4g+-%.2g", cfg.sweep_values[i], a.norm_mean, a.norm_se);
    if (i == 0) continue;
    const auto& prev = row(res, "proposed", cfg.sweep_values[i - 1]);
    if (a.error_mean - prev.error_mean > std::hypot(a.error_se, prev.error_se)) monotone = false;
  }
  report(5, monotone, "(b) proposed error vs L non-increasing within one SE:" + raw);
  std::printf("     info: error normalised by ||O||_F:%s\n", norm.c_str());

  int violations = 0, restarts = 0;
  for (const auto& tr : res.trials) {
    if (tr.method != "em" || tr.failed) continue;
    violations += tr.diagnostics.value("monotone_violations", 0);
    restarts += cfg.em_restarts;
  }
  deferred_em_check = [=] {
    report(7, violations == 0 && restarts > 0,
         fmt("EM log-likelihood nondecreasing (1e-9 relative slack): %d violations over %d restarts", violations,
             restarts));
  };
}

void criterion_runtime() {
  const auto cfg = fixed_settings(SweepVariable::T, {100, 200, 400, 800});
  const auto res = run_benchmark(cfg);
  const auto& p_lo = row(res, "proposed", 100);
  const auto& p_hi = row(res, "proposed", 800);
  const auto& e_lo = row(res, "em", 100);
  const auto& e_hi = row(res, "em", 800);
  std::string line;
  for (double v : cfg.sweep_values)
    line += fmt(" T=%g:%.2f/%.2fms", v, 1e3 * row(res, "proposed", v).runtime_mean, 1e3 * row(res, "em", v).runtime_mean);
  const double p_growth = p_hi.runtime_mean - p_lo.runtime_mean;
  const double e_growth = e_hi.runtime_mean - e_lo.runtime_mean;
  report(6, p_growth < e_growth && p_hi.runtime_mean < e_hi.runtime_mean,
         fmt("runtime growth T=100->800 proposed %.2f ms < EM %.2f ms, lower at T=800;", 1e3 * p_growth,
             1e3 * e_growth) +
             line);
}

void criterion_round_trip() {
  const auto t0 = Clock::now();
  const double sigma2 = 0.5;
  GeneratorConfig g;
  g.T = 100000;
  g.noise_variance = sigma2;
  g.random_chain_parameters = true;
  g.seed = 11;
  const auto iid = generate(g);
  g.chain_type = ChainType::Markov;
  g.seed = 12;
  const auto markov = generate(g);

  double prior_err = 0.0, trans_err = 0.0;
  const auto pi = estimate_priors(iid.assignments);
  for (std::size_t k = 0; k < pi.size(); ++k)
    prior_err = std::max(prior_err, (pi[k] - iid.priors[k]).cwiseAbs().maxCoeff());
  const auto a = estimate_transitions(markov.assignments);
  for (std::size_t k = 0; k < a.normalized.size(); ++k)
    trans_err = std::max(trans_err, (a.normalized[k] - markov.transitions[k]).cwiseAbs().maxCoeff());
  const MatrixXd s = estimate_covariance(markov.observations, markov.emission, markov.assignments);
  const double diag_err = (s.diagonal().array() - sigma2).abs().maxCoeff() / sigma2;
  MatrixXd off = s;
  off.diagonal().setZero();
  const double off_max = off.cwiseAbs().maxCoeff() / sigma2;
  const double t = since(t0);
  report(8, prior_err <= 0.01 && trans_err <= 0.02 && diag_err <= 0.10 && off_max <= 0.05 && t < 30.0,
         fmt("T=1e5: |pi err|inf %.4f (<=0.01), max|A err| %.4f (<=0.02), diag rel %.3f (<=0.10), "
             "offdiag/sigma2 %.3f (<=0.05); %.2f s (limit 30 s)",
             prior_err, trans_err, diag_err, off_max, t));
}

void criterion_solver() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.05, 2.0);
  double worst = 0.0, worst_kkt_ratio = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const Index L = 20, cols = 1 + inst % 8;
    MatrixXd g(L, cols);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
    const MatrixXd w = Eigen::HouseholderQR<MatrixXd>(g).householderQ() * MatrixXd::Identity(L, cols);
    VectorXd y(L);
    for (Index i = 0; i < L; ++i) y(i) = n(rng);
    LassoOptions opts{u(rng), 1000, 1e-10, inst % 2 == 0};
    const auto r = lasso_column(y, w, opts);
    VectorXd closed = (w.transpose() * y).unaryExpr([&](double v) { return soft_threshold(v, opts.lambda / 2.0); });
    if (opts.nonnegative) closed = closed.cwiseMax(0.0);
    worst = std::max(worst, (r.h - closed).cwiseAbs().maxCoeff());
    worst_kkt_ratio =
        std::max(worst_kkt_ratio, lasso_kkt_residual(y, w, r.h, opts.lambda, opts.nonnegative) / opts.tol);
  }
  report(9, worst <= 1e-6 && worst_kkt_ratio <= 10.0,
         fmt("50 orthonormal designs: max |h - closed form| %.2e (<=1e-6), max KKT/tol %.3f (<=10)", worst,
             worst_kkt_ratio));
}

std::string results_without_runtime(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    // runtime_s is the seventh field; everything before diag_json is unquoted.
    std::size_t start = 0;
    for (int i = 0; i < 6; ++i) start = line.find(',', start) + 1;
    const std::size_t end = line.find(',', start);
    out << line.substr(0, start) << line.substr(end) << '\n';
  }
  return out.str();
}

void criterion_determinism(const fs::path& work) {
  const json base = {{"sweep_variable", "T"},
                     {"sweep_values", {100, 200}},
                     {"fixed", {{"L", 30}, {"sigma2", 0.5}}},
                     {"trials", 4},
                     {"methods", {"proposed", "em"}},
                     {"seed_base", 77},
                     {"em", {{"restarts", 3}}},
                     {"threads", 4}};
  std::string outputs[2];
  bool ran = true;
  for (int i = 0; i < 2; ++i) {
    json cfg = base;
    const fs::path dir = work / ("bench_run" + std::to_string(i));
    fs::remove_all(dir);
    cfg["output_dir"] = dir.string();
    const fs::path cfg_path = work / ("bench_config" + std::to_string(i) + ".json");
    std::ofstream(cfg_path) << cfg.dump(2);
    const std::string cmd = std::string(SCFM_CLI_PATH) + " bench --config " + cfg_path.string() + " > /dev/null 2>&1";
    ran = ran && std::system(cmd.c_str()) == 0 && fs::exists(dir / "results.csv");
    if (ran) outputs[i] = results_without_runtime(dir / "results.csv");
  }
  const bool same = ran && !outputs[0].empty() && outputs[0] == outputs[1];
  report(10, same,
         fmt("two `scfm bench` runs with the same config: results.csv identical outside runtime_s (%zu bytes)",
             outputs[0].size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scfm acceptance run"};
  std::string work = (fs::temp_directory_path() / "scfm_acceptance").string();
  app.add_option("--work-dir", work, "Scratch directory for CLI runs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  criterion_ranks();
  criterion_witness();
  criteria_recovery();
  criteria_synthetic();
  criterion_runtime();
  deferred_em_check();
  criterion_round_trip();
  criterion_solver();
  criterion_determinism(work);

  std::printf("%d criterion check(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
