#pragma once

// Experiment runner: dataset plumbing, reference training, a full
// compression run (history CSV + metrics report + serialized model), budget
// sweeps, and the error/compression tradeoff table. Single-threaded runs are
// byte-deterministic for a fixed config and seed; the ADDLC_THREADS
// environment variable caps how many sweep entries run concurrently
// (default 1).

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "addlc/config.hpp"
#include "addlc/container.hpp"
#include "addlc/dataset.hpp"
#include "addlc/lc.hpp"
#include "addlc/metrics.hpp"
#include "addlc/model.hpp"

namespace addlc {

namespace detail {

inline std::string fmt_g(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string sanitize_token(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += c;
    else if (c == '%')
      out += "pct";
    else
      out += '_';
  }
  return out.empty() ? "_" : out;
}

inline std::size_t thread_cap() {
  const char* env = std::getenv("ADDLC_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (end == env || *end != '\0' || v == 0)
    throw ConfigError("ADDLC_THREADS must be a positive integer");
  return v;
}

}  // namespace detail

// ------------------------------------------------------------------- data ---

inline DataSplit load_dataset(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  if (d.source == "synthetic-blobs")
    return make_blobs_split(d.classes, d.dim, d.n_train, d.n_test, cfg.data_seed(), d.spread);
  if (d.source == "csv") {
    Dataset all = load_csv(d.path);
    const std::size_t n = all.count();
    const std::size_t n_test =
        static_cast<std::size_t>(std::llround(d.test_fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.data_seed());
    rng.shuffle(order);
    DataSplit s;
    auto take = [&](Dataset& dst, std::size_t begin, std::size_t count) {
      dst.inputs = Matrix(count, all.inputs.cols);
      dst.labels.resize(count);
      dst.targets = Matrix(count, all.targets.cols);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[begin + i];
        for (std::size_t j = 0; j < all.inputs.cols; ++j)
          dst.inputs(i, j) = all.inputs(src, j);
        for (std::size_t j = 0; j < all.targets.cols; ++j)
          dst.targets(i, j) = all.targets(src, j);
        dst.labels[i] = all.labels[src];
      }
    };
    take(s.train, 0, n - n_test);
    take(s.test, n - n_test, n_test);
    return s;
  }
  if (d.source == "cifar10-binary") return load_cifar10(d.dir);
  throw ConfigError("config: unknown data source '" + d.source + "'");
}

inline void validate_data_model(const ExperimentConfig& cfg, const ModelSpec& spec,
                                const DataSplit& split) {
  if (split.train.inputs.cols != spec.layers.front().in)
    throw ConfigError("config: data dimension " + std::to_string(split.train.inputs.cols) +
                      " does not match model input " + std::to_string(spec.layers.front().in));
  if (spec.loss == LossKind::cross_entropy) {
    const std::size_t k = spec.layers.back().out;
    for (const Dataset* d : {&split.train, &split.test})
      for (int label : d->labels)
        if (label < 0 || static_cast<std::size_t>(label) >= k)
          throw ConfigError("config: label out of range for " + std::to_string(k) + " classes");
  } else if (split.train.targets.cols != spec.layers.back().out) {
    throw ConfigError("config: target width does not match model output");
  }
}

// -------------------------------------------------------------- reference ---

inline WeightStore train_reference(const ExperimentConfig& cfg, const ModelSpec& spec,
                                   const Dataset& train) {
  WeightStore w = make_weight_store(spec, cfg.compress_biases);
  init_weights(w, spec, cfg.init_seed());
  SupervisedProblem problem(spec, w, train);
  SgdConfig opt = cfg.ref_opt;
  opt.seed = cfg.train_seed();
  sgd_nesterov(problem, w.values, opt);
  return w;
}

// Load the configured reference container, or train one from scratch.
inline WeightStore get_reference(const ExperimentConfig& cfg, const ModelSpec& spec,
                                 const Dataset& train) {
  if (cfg.ref_model.empty()) return train_reference(cfg, spec, train);
  LoadedModel m = load_compressed_model(cfg.ref_model);
  if (m.spec.layers.size() != spec.layers.size())
    throw ConfigError("reference model architecture does not match config");
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (m.spec.layers[i].in != spec.layers[i].in || m.spec.layers[i].out != spec.layers[i].out)
      throw ConfigError("reference model layer " + std::to_string(i) + " does not match config");
  if (m.store.layers.size() != make_weight_store(spec, cfg.compress_biases).layers.size())
    throw ConfigError("reference model store layout does not match config");
  WeightStore w = make_weight_store(spec, cfg.compress_biases);
  w.values = m.store.values;
  return w;
}

// ---------------------------------------------------------------- reports ---

inline void write_history_csv(const std::string& path, const std::vector<LcRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "step,mu,loss,test_error,residual\n";
  for (const LcRecord& r : history)
    out << r.step << ',' << detail::fmt_g(r.mu) << ',' << detail::fmt_g(r.loss) << ','
        << detail::fmt_g(r.test_error) << ',' << detail::fmt_g(r.residual) << '\n';
}

struct RunSummary {
  double ref_test_error = std::numeric_limits<double>::quiet_NaN();
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double final_test_error = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double residual = std::numeric_limits<double>::quiet_NaN();
};

inline std::string metrics_text(const MetricsReport& m, const RunSummary& s,
                                const std::vector<std::string>& warnings) {
  std::string t;
  auto line = [&](const std::string& k, const std::string& v) { t += k + " = " + v + "\n"; };
  line("params", std::to_string(m.storage.params));
  line("bits_reference", std::to_string(m.storage.bits_ref));
  line("bits_compressed", std::to_string(m.storage.bits_compressed));
  line("bits_quant_codebooks", std::to_string(m.storage.quant_codebook_bits));
  line("bits_quant_indices", std::to_string(m.storage.quant_index_bits));
  line("bits_sparse", std::to_string(m.storage.sparse_bits));
  line("bits_lowrank", std::to_string(m.storage.lowrank_bits));
  line("bits_uncompressed", std::to_string(m.storage.uncompressed_bits));
  line("sparse_pairs", std::to_string(m.storage.sparse_pairs));
  line("sparse_dummy_pairs", std::to_string(m.storage.sparse_dummy_pairs));
  line("rho_storage", detail::fmt_g(m.storage.rho_s));
  line("flops_reference_adds", std::to_string(m.ref_flops.adds));
  line("flops_reference_mults", std::to_string(m.ref_flops.mults));
  line("flops_compressed_adds", std::to_string(m.comp_flops.adds));
  line("flops_compressed_mults", std::to_string(m.comp_flops.mults));
  line("rho_adds", detail::fmt_g(m.rho_add));
  line("rho_muls", detail::fmt_g(m.rho_mul));
  line("corrected_biases", std::to_string(m.bias_corrections) + " out of " +
                               std::to_string(m.bias_count));
  line("ref_test_error", detail::fmt_g(s.ref_test_error));
  line("final_loss", detail::fmt_g(s.final_loss));
  line("final_test_error", detail::fmt_g(s.final_test_error));
  line("lc_steps", std::to_string(s.steps));
  line("best_step", std::to_string(s.best_step));
  line("residual", detail::fmt_g(s.residual));
  for (const std::string& w : warnings) t += "warning = " + w + "\n";
  return t;
}

// ------------------------------------------------------------ compression ---

struct RunResult {
  LcState lc;
  MetricsReport metrics;
  RunSummary summary;
  std::string label;    // combo shape, e.g. "quant-adaptive(K=2)+prune(100)"
  std::string budgets;  // semicolon-separated budget list
  std::string out_dir;
};

namespace detail {

inline std::string part_label(const SchemeSpec& s) {
  switch (s.kind) {
    case SchemeKind::quant_adaptive:
      return "quant-adaptive(K=" + std::to_string(s.codebook_size) + ")";
    case SchemeKind::quant_fixed:
      return "quant-fixed(K=" + std::to_string(s.fixed_codebook.size()) + ")";
    case SchemeKind::prune:
      return "prune(" + std::to_string(s.budget) + ")";
    case SchemeKind::low_rank:
      return "low-rank(r=" + std::to_string(s.rank) + ")";
  }
  return "?";
}

inline std::string part_budget(const SchemeSpec& s) {
  switch (s.kind) {
    case SchemeKind::quant_adaptive:
      return "K=" + std::to_string(s.codebook_size);
    case SchemeKind::quant_fixed:
      return "K=" + std::to_string(s.fixed_codebook.size());
    case SchemeKind::prune:
      return "kappa=" + std::to_string(s.budget);
    case SchemeKind::low_rank:
      return "r=" + std::to_string(s.rank);
  }
  return "?";
}

}  // namespace detail

// Full LC compression run: writes history.csv, metrics.txt, and model.alc
// under out_dir and returns the in-memory results.
inline RunResult run_compress(const ExperimentConfig& cfg, const ModelSpec& spec,
                              const DataSplit& split, const WeightStore& reference,
                              const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::size_t compressed_total = 0;
  for (const LayerInfo& l : reference.layers)
    if (l.compress) compressed_total += l.count();
  if (compressed_total == 0) throw ConfigError("config: no compressible parameters");
  const std::vector<SchemeSpec> specs = resolve_parts(cfg, compressed_total);
  if (specs.empty()) throw ConfigError("config: combo has no parts");

  SupervisedProblem problem(spec, reference, split.train);
  LcConfig lc_cfg = cfg.lc;
  lc_cfg.lstep_opt.seed = cfg.lc_seed();
  auto test_eval = [&](const WeightStore& w) { return evaluate_error(spec, w, split.test); };

  RunResult r;
  r.lc = run_lc(problem, reference, specs, lc_cfg, test_eval);
  r.out_dir = out_dir;

  const WeightStore feasible = feasible_weights(r.lc.best_w, r.lc.best_combo);
  r.metrics = build_metrics_report(feasible, spec, r.lc.best_combo, cfg.storage);

  r.summary.ref_test_error = evaluate_error(spec, reference, split.test);
  const LcRecord& best = r.lc.history.at(r.lc.best_step < r.lc.history.size()
                                             ? r.lc.best_step
                                             : r.lc.history.size() - 1);
  r.summary.final_loss = best.loss;
  r.summary.final_test_error = evaluate_error(spec, feasible, split.test);
  r.summary.steps = r.lc.step;
  r.summary.best_step = r.lc.best_step;
  r.summary.residual = best.residual;

  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i) {
      r.label += "+";
      r.budgets += ";";
    }
    r.label += detail::part_label(r.lc.best_combo.parts[i].spec);
    r.budgets += detail::part_budget(r.lc.best_combo.parts[i].spec);
  }

  write_history_csv(out_dir + "/history.csv", r.lc.history);
  save_compressed_model(out_dir + "/model.alc", spec, feasible, r.lc.best_combo, cfg.storage);
  std::ofstream mt(out_dir + "/metrics.txt", std::ios::trunc);
  if (!mt) throw ConfigError("cannot write '" + out_dir + "/metrics.txt'");
  mt << metrics_text(r.metrics, r.summary, r.lc.warnings);
  return r;
}

// ------------------------------------------------------------------ sweep ---

struct TradeoffRow {
  std::string label;
  std::string budgets;
  double loss = 0.0;
  double test_error = 0.0;
  double rho_s = 0.0;
  double rho_add = 0.0;
  double rho_mul = 0.0;
};

inline TradeoffRow tradeoff_row(const RunResult& r) {
  return {r.label,
          r.budgets,
          r.summary.final_loss,
          r.summary.final_test_error,
          r.metrics.storage.rho_s,
          r.metrics.rho_add,
          r.metrics.rho_mul};
}

// One row per run, sorted by storage ratio, largest (most compressed) first.
inline void emit_tradeoff_table(std::vector<TradeoffRow> rows, const std::string& path) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const TradeoffRow& a, const TradeoffRow& b) { return a.rho_s > b.rho_s; });
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "combo,budgets,loss,test_error,rho_storage,rho_adds,rho_muls\n";
  for (const TradeoffRow& r : rows)
    out << r.label << ',' << r.budgets << ',' << detail::fmt_g(r.loss) << ','
        << detail::fmt_g(r.test_error) << ',' << detail::fmt_g(r.rho_s) << ','
        << detail::fmt_g(r.rho_add) << ',' << detail::fmt_g(r.rho_mul) << '\n';
}

inline ExperimentConfig with_sweep_value(const ExperimentConfig& base, const std::string& value) {
  ExperimentConfig cfg = base;
  for (PartConfig& pc : cfg.parts) {
    if (pc.name != cfg.sweep.part) continue;
    if (cfg.sweep.key == "budget") {
      pc.budget_text = value;
    } else {
      ConfigMap tmp;
      tmp.insert("", "v", value);
      if (cfg.sweep.key == "K")
        pc.spec.codebook_size = tmp.get_u64("v", 0);
      else
        pc.spec.rank = tmp.get_u64("v", 0);
    }
    return cfg;
  }
  throw ConfigError("config: sweep part '" + cfg.sweep.part + "' not found");
}

// Run every sweep value (reference is shared across entries), emit
// tradeoff.csv, and return the per-entry results in config order.
inline std::vector<RunResult> run_sweep(const ExperimentConfig& cfg, const ModelSpec& spec,
                                        const DataSplit& split, const WeightStore& reference) {
  if (cfg.sweep.part.empty()) throw ConfigError("config: [sweep] section is missing");
  std::filesystem::create_directories(cfg.out_dir);

  const std::size_t n = cfg.sweep.values.size();
  std::vector<RunResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        const std::string& value = cfg.sweep.values[i];
        const ExperimentConfig entry = with_sweep_value(cfg, value);
        const std::string dir = cfg.out_dir + "/sweep_" + detail::sanitize_token(value);
        results[i] = run_compress(entry, spec, split, reference, dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::min(detail::thread_cap(), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<TradeoffRow> rows;
  for (const RunResult& r : results) rows.push_back(tradeoff_row(r));
  emit_tradeoff_table(std::move(rows), cfg.out_dir + "/tradeoff.csv");
  return results;
}

}  // namespace addlc
