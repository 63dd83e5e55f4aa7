// addlc: configuration-driven LC compression experiments.
//
//   addlc train-ref --config exp.ini [--seed N] [--out DIR]
//   addlc compress  --config exp.ini [--seed N] [--out DIR] [--variant al|qp]
//   addlc sweep     --config exp.ini [--seed N] [--out DIR] [--variant al|qp]
//   addlc report    --model model.alc
//   addlc eval      --config exp.ini --model model.alc
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "addlc/addlc.hpp"

namespace {

struct Cli {
  std::string config;
  std::string out;
  std::string variant;
  std::string model;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool out_given = false;
  bool variant_given = false;
};

addlc::ExperimentConfig load_with_overrides(const Cli& cli) {
  addlc::ExperimentConfig cfg = addlc::load_experiment(cli.config);
  if (cli.seed_given) cfg.seed = cli.seed;
  if (cli.out_given) cfg.out_dir = cli.out;
  if (cli.variant_given)
    cfg.lc.variant = cli.variant == "qp" ? addlc::LcVariant::quadratic_penalty
                                         : addlc::LcVariant::augmented_lagrangian;
  return cfg;
}

int cmd_train_ref(const Cli& cli) {
  const addlc::ExperimentConfig cfg = load_with_overrides(cli);
  const addlc::ModelSpec spec = addlc::model_spec_from(cfg);
  const addlc::DataSplit split = addlc::load_dataset(cfg);
  addlc::validate_data_model(cfg, spec, split);

  const addlc::WeightStore w = addlc::train_reference(cfg, spec, split.train);
  std::filesystem::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/reference.alc";
  addlc::AdditiveCombo none;
  none.weight_dim = w.size();
  addlc::save_compressed_model(path, spec, w, none, cfg.storage);

  std::cout << "reference trained: " << path << "\n"
            << "train_loss = " << addlc::full_loss(spec, w, split.train) << "\n"
            << "test_error = " << addlc::evaluate_error(spec, w, split.test) << "\n";
  return 0;
}

int cmd_compress(const Cli& cli) {
  const addlc::ExperimentConfig cfg = load_with_overrides(cli);
  const addlc::ModelSpec spec = addlc::model_spec_from(cfg);
  const addlc::DataSplit split = addlc::load_dataset(cfg);
  addlc::validate_data_model(cfg, spec, split);

  const addlc::WeightStore reference = addlc::get_reference(cfg, spec, split.train);
  const addlc::RunResult r = addlc::run_compress(cfg, spec, split, reference, cfg.out_dir);

  std::cout << "combo = " << r.label << "\n"
            << "ref_test_error = " << r.summary.ref_test_error << "\n"
            << "final_test_error = " << r.summary.final_test_error << "\n"
            << "rho_storage = " << r.metrics.storage.rho_s << "\n"
            << "lc_steps = " << r.summary.steps << "\n"
            << "outputs: " << cfg.out_dir << "/history.csv, metrics.txt, model.alc\n";
  for (const std::string& w : r.lc.warnings) std::cout << "warning: " << w << "\n";
  return 0;
}

int cmd_sweep(const Cli& cli) {
  const addlc::ExperimentConfig cfg = load_with_overrides(cli);
  const addlc::ModelSpec spec = addlc::model_spec_from(cfg);
  const addlc::DataSplit split = addlc::load_dataset(cfg);
  addlc::validate_data_model(cfg, spec, split);

  const addlc::WeightStore reference = addlc::get_reference(cfg, spec, split.train);
  const std::vector<addlc::RunResult> results =
      addlc::run_sweep(cfg, spec, split, reference);

  std::cout << "sweep entries: " << results.size() << "\n";
  for (const addlc::RunResult& r : results)
    std::cout << "  " << r.label << ": test_error = " << r.summary.final_test_error
              << ", rho_storage = " << r.metrics.storage.rho_s << "\n";
  std::cout << "table: " << cfg.out_dir << "/tradeoff.csv\n";
  return 0;
}

int cmd_report(const Cli& cli) {
  const addlc::LoadedModel m = addlc::load_compressed_model(cli.model);
  const addlc::MetricsReport rep =
      addlc::build_metrics_report(m.store, m.spec, m.combo, m.storage);

  std::cout << "file = " << cli.model << "\n"
            << "header_bytes = " << m.header_bytes << "\n"
            << "payload_bits = " << m.payload_bits << "\n"
            << "params = " << rep.storage.params << "\n"
            << "bits_reference = " << rep.storage.bits_ref << "\n"
            << "bits_compressed = " << rep.storage.bits_compressed << "\n"
            << "  quant_codebooks = " << rep.storage.quant_codebook_bits << "\n"
            << "  quant_indices = " << rep.storage.quant_index_bits << "\n"
            << "  sparse = " << rep.storage.sparse_bits << " (" << rep.storage.sparse_pairs
            << " pairs, " << rep.storage.sparse_dummy_pairs << " dummy)\n"
            << "  low_rank = " << rep.storage.lowrank_bits << "\n"
            << "  uncompressed = " << rep.storage.uncompressed_bits << "\n"
            << "rho_storage = " << rep.storage.rho_s << "\n"
            << "flops_reference = " << rep.ref_flops.adds << " adds, " << rep.ref_flops.mults
            << " mults\n"
            << "flops_compressed = " << rep.comp_flops.adds << " adds, " << rep.comp_flops.mults
            << " mults\n"
            << "rho_adds = " << rep.rho_add << "\n"
            << "rho_muls = " << rep.rho_mul << "\n"
            << "corrected_biases = " << rep.bias_corrections << " out of " << rep.bias_count
            << "\n";
  return 0;
}

int cmd_eval(const Cli& cli) {
  const addlc::ExperimentConfig cfg = load_with_overrides(cli);
  const addlc::ModelSpec spec = addlc::model_spec_from(cfg);
  const addlc::DataSplit split = addlc::load_dataset(cfg);
  addlc::validate_data_model(cfg, spec, split);

  const addlc::LoadedModel m = addlc::load_compressed_model(cli.model);
  if (m.spec.layers.size() != spec.layers.size())
    throw addlc::ConfigError("eval: model architecture does not match config");
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (m.spec.layers[i].in != spec.layers[i].in || m.spec.layers[i].out != spec.layers[i].out)
      throw addlc::ConfigError("eval: model layer " + std::to_string(i) +
                               " does not match config");

  std::cout << "train_loss = " << addlc::full_loss(m.spec, m.store, split.train) << "\n"
            << "test_error = " << addlc::evaluate_error(m.spec, m.store, split.test) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"additive-combination compression of small trainable models"};
  app.require_subcommand(1);
  Cli cli;

  auto add_config_opts = [&](CLI::App* sub, bool with_variant) {
    sub->add_option("--config", cli.config, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", cli.seed, "override experiment.seed")
        ->each([&](const std::string&) { cli.seed_given = true; });
    sub->add_option("--out", cli.out, "override experiment.out")
        ->each([&](const std::string&) { cli.out_given = true; });
    if (with_variant)
      sub->add_option("--variant", cli.variant, "LC variant")
          ->check(CLI::IsMember({"al", "qp"}))
          ->each([&](const std::string&) { cli.variant_given = true; });
  };

  CLI::App* train_ref = app.add_subcommand("train-ref", "train and save a reference model");
  add_config_opts(train_ref, false);
  CLI::App* compress = app.add_subcommand("compress", "run LC compression");
  add_config_opts(compress, true);
  CLI::App* sweep = app.add_subcommand("sweep", "run a budget sweep and emit the tradeoff table");
  add_config_opts(sweep, true);
  CLI::App* report = app.add_subcommand("report", "print storage/FLOP accounting of a model file");
  report->add_option("--model", cli.model, "compressed model file")
      ->required()
      ->check(CLI::ExistingFile);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a model file on the configured dataset");
  add_config_opts(eval, false);
  eval->add_option("--model", cli.model, "compressed model file")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(train_ref)) return cmd_train_ref(cli);
    if (app.got_subcommand(compress)) return cmd_compress(cli);
    if (app.got_subcommand(sweep)) return cmd_sweep(cli);
    if (app.got_subcommand(report)) return cmd_report(cli);
    if (app.got_subcommand(eval)) return cmd_eval(cli);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are configuration errors
  } catch (const addlc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const addlc::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
