// Generate a small synthetic problem, learn the dictionary from clustered
// combination means, and compare against the truth and against EM.
#include <cstdio>

#include "scfm/scfm.hpp"

int main() {
  scfm::GeneratorConfig cfg;
  cfg.shape = {50, 3, 2};
  cfg.T = 200;
  cfg.noise_variance = 0.5;
  cfg.seed = 7;
  const auto data = scfm::generate(cfg);

  scfm::PipelineOptions opts;
  opts.cluster.seed = 11;
  const auto res = scfm::run_pipeline(data.observations, cfg.shape, opts);
  std::printf("shared column found at cluster %d\n", static_cast<int>(res.dictionary.i_star));
  std::printf("dictionary error (proposed): %.4f\n", scfm::dictionary_error(res.dictionary.O_hat, data.emission));
  std::printf("assignment rejection rate: %.3f\n", res.assignments.rejection_rate);

  scfm::EMConfig em;
  em.seed = 11;
  const auto fit = scfm::em_fit(data.observations, cfg.shape, em);
  std::printf("dictionary error (EM):       %.4f\n", scfm::dictionary_error(fit.params.emission, data.emission));
  std::printf("learning time: %.4fs\n", res.timings.learning());
}
