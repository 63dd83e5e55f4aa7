// Minimal end-to-end use of the library without config files: train a small
// classifier on synthetic blobs, compress it as quantization + a handful of
// sparse corrections, and print the accounting.

#include <iostream>

#include "addlc/addlc.hpp"

int main() {
  using namespace addlc;

  // data: 3 Gaussian blobs in 8 dimensions
  const DataSplit split = make_blobs_split(3, 8, 600, 300, /*seed=*/7);

  // model: logistic regression 8 -> 3
  ModelSpec spec;
  spec.layers.push_back({8, 3, Activation::softmax});
  spec.loss = LossKind::cross_entropy;
  validate_model(spec);

  WeightStore w = make_weight_store(spec, /*compress_biases=*/false);
  init_weights(w, spec, /*seed=*/1);
  SupervisedProblem problem(spec, w, split.train);

  SgdConfig train;
  train.lr = 0.05;
  train.epochs = 40;
  train.batch_size = 32;
  train.seed = 2;
  sgd_nesterov(problem, w.values, train);
  std::cout << "reference test error: " << evaluate_error(spec, w, split.test) << "\n";

  // combo: 2-entry adaptive codebook over all weights, plus 4 corrections
  SchemeSpec quant;
  quant.kind = SchemeKind::quant_adaptive;
  quant.codebook_size = 2;
  quant.shared_codebook = true;
  SchemeSpec prune;
  prune.kind = SchemeKind::prune;
  prune.budget = 4;

  LcConfig cfg;
  cfg.schedule = {1e-3, 1.2, 40};
  cfg.lstep_opt = train;
  cfg.lstep_opt.epochs = 10;

  const LcState st = run_lc(problem, w, {quant, prune}, cfg, [&](const WeightStore& ww) {
    return evaluate_error(spec, ww, split.test);
  });

  const WeightStore feasible = feasible_weights(st.best_w, st.best_combo);
  const MetricsReport rep = build_metrics_report(feasible, spec, st.best_combo);
  std::cout << "compressed test error: " << evaluate_error(spec, feasible, split.test) << "\n"
            << "storage: " << rep.storage.bits_compressed << " of " << rep.storage.bits_ref
            << " bits (rho_s = " << rep.storage.rho_s << ")\n"
            << "flops: x" << rep.rho_mul << " fewer multiplies\n";

  save_compressed_model("quickstart_model.alc", spec, feasible, st.best_combo);
  const LoadedModel back = load_compressed_model("quickstart_model.alc");
  std::cout << "round-trip test error: " << evaluate_error(back.spec, back.store, split.test)
            << "\n";
  return 0;
}
