#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "scfm/bench.hpp"
#include "scfm/eval.hpp"

using namespace scfm;

namespace {

// Same dictionary with blocks reversed and columns reversed within blocks.
EmissionMatrix shuffled(const EmissionMatrix& o) {
  const auto& sh = o.shape();
  const int per = sh.M - 1;
  MatrixXd w(sh.L, sh.nonshared_columns());
  for (int k = 0; k < sh.K; ++k)
    for (int m = 0; m < per; ++m) w.col(k * per + m) = o.column(sh.K - 1 - k, per - 1 - m);
  return {sh, w, o.shared()};
}

}  // namespace

TEST(DictionaryError, PermutedCopyIsZero) {
  const auto o = oracle::random_emission({10, 4, 3}, 1);
  EXPECT_LT(dictionary_error(shuffled(o), o), 1e-12);
  const auto al = align_dictionaries(shuffled(o), o);
  EXPECT_EQ(al.block_perm, (std::vector<int>{2, 1, 0}));
}

TEST(DictionaryError, SmallPerturbation) {
  const auto o = oracle::random_emission({10, 3, 2}, 2, 5.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1e-3);
  MatrixXd e(10, 4);
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = n(rng);
  const EmissionMatrix p(o.shape(), o.nonshared() + e, o.shared());
  EXPECT_NEAR(dictionary_error(p, o), e.norm(), 1e-12);
}

TEST(DictionaryError, MatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ModelShape sh{10, 3, 2};
    const auto a = oracle::random_emission(sh, 2 * seed), b = oracle::random_emission(sh, 2 * seed + 1);
    EXPECT_NEAR(dictionary_error(a, b), oracle::brute_dictionary_error(a, b), 1e-10);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelShape sh{6, 4, 3};
    const auto a = oracle::random_emission(sh, 500 + seed), b = oracle::random_emission(sh, 900 + seed);
    EXPECT_NEAR(dictionary_error(a, b), oracle::brute_dictionary_error(a, b), 1e-10);
  }
}

TEST(DictionaryError, Pseudometric) {
  const ModelShape sh{8, 3, 2};
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto a = oracle::random_emission(sh, seed), b = oracle::random_emission(sh, seed + 100),
               c = oracle::random_emission(sh, seed + 200);
    EXPECT_NEAR(dictionary_error(a, b), dictionary_error(b, a), 1e-10);
    EXPECT_EQ(dictionary_error(a, a), 0.0);
    EXPECT_LE(dictionary_error(a, c), dictionary_error(a, b) + dictionary_error(b, c) + 1e-10);
  }
}

TEST(DictionaryError, Guards) {
  try {
    dictionary_error(oracle::random_emission({3, 2, 5}, 1), oracle::random_emission({3, 2, 5}, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::KTooLarge);
  }
  try {
    dictionary_error(oracle::random_emission({3, 3, 2}, 1), oracle::random_emission({4, 3, 2}, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(RunPipeline, NoiselessGoldenPath) {
  GeneratorConfig g;
  g.seed = 14;
  g.noise_variance = 0.0;
  const auto d = generate(g);
  const auto res = run_pipeline(d.observations, g.shape);
  EXPECT_LE(dictionary_error(res.dictionary.O_hat, d.emission), 1e-6 * d.emission.full().norm());
  // Recovered chains may be relabelled; compare through the reconstruction.
  const MatrixXd recon = res.dictionary.O_hat.reduced() * res.assignments.assignments.encoded();
  EXPECT_LT((recon - d.observations).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(res.params.covariance.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(res.params.priors.size(), 2u);
  EXPECT_FALSE(res.params.transitions.has_value());
  EXPECT_GE(res.timings.clustering, 0.0);
  EXPECT_GE(res.timings.learning(), res.timings.recovery);
}

TEST(RunPipeline, MarkovModeAndStatesUpToRelabelling) {
  GeneratorConfig g;
  g.seed = 15;
  g.noise_variance = 0.0;
  g.chain_type = ChainType::Markov;
  g.random_chain_parameters = true;
  const auto d = generate(g);
  PipelineOptions opts;
  opts.mode = ChainType::Markov;
  const auto res = run_pipeline(d.observations, g.shape, opts);
  ASSERT_TRUE(res.params.transitions.has_value());
  const auto al = align_dictionaries(res.dictionary.O_hat, d.emission);
  for (int k = 0; k < 2; ++k)
    for (Index t = 0; t < g.T; ++t) {
      const int s = res.assignments.assignments.state(k, t);
      const int tk = al.block_perm[static_cast<std::size_t>(k)];
      const int mapped = s == 2 ? 2 : al.column_perm[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
      EXPECT_EQ(mapped, d.assignments.state(tk, t));
    }
}

TEST(RunPipeline, StageAttribution) {
  GeneratorConfig g;
  g.seed = 16;
  g.noise_variance = 0.0;
  const auto d = generate(g);
  // Drop every observation of one combination.
  std::vector<Index> keep;
  for (Index t = 0; t < g.T; ++t)
    if (!(d.assignments.state(0, t) == 0 && d.assignments.state(1, t) == 0)) keep.push_back(t);
  MatrixXd x(50, static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) x.col(static_cast<Index>(i)) = d.observations.col(keep[i]);
  try {
    run_pipeline(x, g.shape);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateClusters);
    EXPECT_EQ(e.stage(), "clustering");
  }

  GeneratorConfig g2;
  g2.shape = {20, 2, 2};
  g2.seed = 3;
  g2.filter_incoherence = false;
  const auto d2 = generate(g2);
  try {
    run_pipeline(d2.observations, g2.shape);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedM2);
    EXPECT_EQ(e.stage(), "recovery");
  }
}

namespace {

BenchmarkConfig small_bench(const std::string& dir) {
  BenchmarkConfig c;
  c.sweep_variable = SweepVariable::Sigma2;
  c.sweep_values = {0.1, 0.5};
  c.trials = 3;
  c.em_restarts = 2;
  c.output_dir = dir;
  return c;
}

}  // namespace

TEST(Benchmark, RowCountsAndAggregates) {
  const auto cfg = small_bench((std::filesystem::temp_directory_path() / "scfm_bench_rows").string());
  const auto res = run_benchmark(cfg);
  EXPECT_EQ(res.trials.size(), 2u * 2u * 3u);
  EXPECT_EQ(res.aggregates.size(), 4u);
  for (const auto& a : res.aggregates) {
    double sum = 0.0;
    int n = 0;
    for (const auto& t : res.trials)
      if (t.method == a.method && t.sweep_value == a.sweep_value && !t.failed) {
        sum += t.dict_error;
        ++n;
      }
    EXPECT_EQ(a.n_ok, n);
    EXPECT_NEAR(a.error_mean, sum / n, 1e-12);
  }
  const std::string csv = results_csv(cfg, res);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 12 + 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kResultsHeader);
}

TEST(Benchmark, SingleTrialAggregateEqualsRow) {
  auto cfg = small_bench((std::filesystem::temp_directory_path() / "scfm_bench_single").string());
  cfg.sweep_values = {0.5};
  cfg.trials = 1;
  cfg.methods = {"proposed"};
  const auto res = run_benchmark(cfg);
  ASSERT_EQ(res.trials.size(), 1u);
  ASSERT_EQ(res.aggregates.size(), 1u);
  EXPECT_EQ(res.aggregates[0].error_mean, res.trials[0].dict_error);
  EXPECT_EQ(res.aggregates[0].norm_mean, res.trials[0].dict_error_norm);
  EXPECT_EQ(res.aggregates[0].error_se, 0.0);
}

TEST(Benchmark, ThreadCountDoesNotChangeResults) {
  auto cfg = small_bench((std::filesystem::temp_directory_path() / "scfm_bench_threads").string());
  cfg.threads = 1;
  const auto a = run_benchmark(cfg);
  cfg.threads = 4;
  const auto b = run_benchmark(cfg);
  ASSERT_EQ(a.trials.size(), b.trials.size());
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    EXPECT_EQ(a.trials[i].dict_error, b.trials[i].dict_error);
    EXPECT_EQ(a.trials[i].diagnostics, b.trials[i].diagnostics);
  }
}

TEST(Benchmark, FailedTrialsAreRecorded) {
  auto cfg = small_bench((std::filesystem::temp_directory_path() / "scfm_bench_fail").string());
  cfg.sweep_values = {0.5};
  cfg.methods = {"proposed"};
  cfg.T = 5;  // fewer observations than combinations
  const auto res = run_benchmark(cfg);
  ASSERT_EQ(res.trials.size(), 3u);
  for (const auto& t : res.trials) {
    EXPECT_TRUE(t.failed);
    EXPECT_EQ(t.diagnostics["error"], "InsufficientData");
    EXPECT_EQ(t.diagnostics["stage"], "clustering");
  }
  EXPECT_EQ(res.aggregates[0].failure_rate(), 1.0);
}

TEST(Benchmark, SharedDataAcrossMethods) {
  EXPECT_EQ(data_seed(1, 0.5, 3), data_seed(1, 0.5, 3));
  EXPECT_NE(data_seed(1, 0.5, 3), data_seed(1, 0.5, 4));
  EXPECT_NE(data_seed(1, 0.5, 3), data_seed(1, 1.0, 3));
  EXPECT_NE(method_seed(1, 0.5, 3, "proposed"), method_seed(1, 0.5, 3, "em"));
}

TEST(Benchmark, WritesFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "scfm_bench_files";
  std::filesystem::remove_all(dir);
  auto cfg = small_bench(dir.string());
  cfg.sweep_variable = SweepVariable::T;
  cfg.sweep_values = {50, 100};
  cfg.trials = 2;
  write_benchmark(cfg, run_benchmark(cfg));
  for (const char* f : {"results.csv", "plot_T.csv", "plot_T.svg", "plot_T_runtime.svg"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const std::string plot = read_file((dir / "plot_T.csv").string());
  EXPECT_EQ(plot.substr(0, plot.find('\n')),
            "x,proposed_error_mean,proposed_error_se,proposed_error_norm_mean,proposed_error_norm_se,"
            "proposed_runtime_mean,proposed_runtime_se,proposed_failure_rate,em_error_mean,em_error_se,"
            "em_error_norm_mean,em_error_norm_se,em_runtime_mean,em_runtime_se,em_failure_rate");
}

TEST(Benchmark, ConfigParsing) {
  const auto cfg = bench_config_from_json(json::parse(R"({
    "sweep_variable": "L", "sweep_values": [20, 50], "trials": 4,
    "fixed": {"T": 300, "sigma2": 1.0}, "methods": ["em"], "seed_base": 9,
    "em": {"restarts": 3}, "svg": false})"));
  EXPECT_EQ(cfg.sweep_variable, SweepVariable::L);
  EXPECT_EQ(cfg.T, 300);
  EXPECT_EQ(cfg.sigma2, 1.0);
  EXPECT_EQ(cfg.em_restarts, 3);
  EXPECT_EQ(cfg.methods, (std::vector<std::string>{"em"}));
  EXPECT_THROW(bench_config_from_json(json::parse(R"({"sweep_variable": "Q", "sweep_values": [1]})")), Error);
  EXPECT_THROW(bench_config_from_json(json::parse(R"({"sweep_variable": "L", "sweep_values": []})")), Error);
  EXPECT_THROW(bench_config_from_json(json::parse(R"({"sweep_variable": "L", "sweep_values": [2.5]})")), Error);
  EXPECT_THROW(bench_config_from_json(json::parse(R"({"sweep_variable": "T", "sweep_values": [10], "methods": ["x"]})")),
               Error);
}
