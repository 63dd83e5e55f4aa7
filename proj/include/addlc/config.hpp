#pragma once

// Declarative experiment configuration. The on-disk format is a small
// INI/TOML-subset:
//
//   # comment            ; comment
//   [section]            # dotted section names allowed: [part.s]
//   key = value
//
// Values are scalars or comma-separated lists; budgets may be absolute
// ("budget = 100") or a percentage of the compressed coordinate count
// ("budget = 1%"). Unknown sections or keys are configuration errors, as is
// a missing seed. The full schema is documented in the README.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "addlc/combo.hpp"
#include "addlc/core.hpp"
#include "addlc/lc.hpp"
#include "addlc/metrics.hpp"
#include "addlc/model.hpp"
#include "addlc/sgd.hpp"

namespace addlc {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

// Parsed key/value view with consumption tracking, so a typo in a key name
// is reported instead of silently ignored.
class ConfigMap {
 public:
  void insert(const std::string& section, const std::string& key, const std::string& value) {
    const std::string full = section.empty() ? key : section + "." + key;
    if (values_.count(full)) throw ConfigError("config: duplicate key '" + full + "'");
    values_[full] = value;
  }

  bool has(const std::string& full) const { return values_.count(full) != 0; }

  std::string get(const std::string& full, const std::string& fallback) const {
    auto it = values_.find(full);
    if (it == values_.end()) return fallback;
    consumed_.insert(full);
    return it->second;
  }
  std::string require(const std::string& full) const {
    auto it = values_.find(full);
    if (it == values_.end()) throw ConfigError("config: missing required key '" + full + "'");
    consumed_.insert(full);
    return it->second;
  }

  double get_double(const std::string& full, double fallback) const {
    return has(full) ? parse_double(full, get(full, "")) : fallback;
  }
  std::uint64_t get_u64(const std::string& full, std::uint64_t fallback) const {
    return has(full) ? parse_u64(full, get(full, "")) : fallback;
  }
  bool get_bool(const std::string& full, bool fallback) const {
    if (!has(full)) return fallback;
    const std::string v = get(full, "");
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw ConfigError("config: '" + full + "' must be a boolean, got '" + v + "'");
  }

  double parse_double(const std::string& full, const std::string& v) const {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config: '" + full + "' must be a number, got '" + v + "'");
    }
  }
  std::uint64_t parse_u64(const std::string& full, const std::string& v) const {
    try {
      // stoull would wrap a negative value around instead of rejecting it
      if (v.empty() || !std::isdigit(static_cast<unsigned char>(v[0])))
        throw std::invalid_argument(v);
      std::size_t used = 0;
      const unsigned long long u = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return u;
    } catch (const std::exception&) {
      throw ConfigError("config: '" + full + "' must be a non-negative integer, got '" + v + "'");
    }
  }

  void ensure_consumed() const {
    for (const auto& [k, v] : values_)
      if (!consumed_.count(k)) throw ConfigError("config: unknown key '" + k + "'");
  }

  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::stringstream ss(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section at line " + std::to_string(lineno));
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config: empty section name at line " + std::to_string(lineno));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected 'key = value' at line " + std::to_string(lineno));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(lineno));
    map.insert(section, key, value);
  }
  return map;
}

inline ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------- schema ----

// A part's budget may be percentage-valued, which can only be resolved once
// the compressed coordinate count is known; keep the raw text around.
struct PartConfig {
  std::string name;
  SchemeSpec spec;
  std::string budget_text;  // empty, "100", or "1%"
};

struct DataConfig {
  std::string source;  // synthetic-blobs | csv | cifar10-binary
  std::size_t classes = 2;
  std::size_t dim = 4;
  std::size_t n_train = 200;
  std::size_t n_test = 200;
  double spread = 1.0;
  std::string path;  // csv
  std::string dir;   // cifar10-binary
  double test_fraction = 0.25;
};

struct SweepConfig {
  std::string part;  // part name whose knob sweeps
  std::string key;   // budget | K | rank
  std::vector<std::string> values;
};

struct ExperimentConfig {
  std::vector<std::size_t> layer_dims;  // d0 x d1 x ... x dk
  Activation hidden_act = Activation::relu;
  LossKind loss = LossKind::cross_entropy;
  double weight_decay = 0.0;
  bool compress_biases = false;

  DataConfig data;
  std::vector<PartConfig> parts;
  LcConfig lc;
  SgdConfig ref_opt;  // reference training
  StorageConfig storage;

  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::string ref_model;  // optional: load this container instead of training

  SweepConfig sweep;

  // deterministic per-stage seed streams
  std::uint64_t data_seed() const { return seed; }
  std::uint64_t init_seed() const { return seed + 1; }
  std::uint64_t train_seed() const { return seed + 2; }
  std::uint64_t lc_seed() const { return seed + 3; }
};

namespace detail {

inline std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::string cur;
  for (char c : text + "x") {
    if (c == 'x' || c == 'X') {
      cur = trim(cur);
      if (cur.empty()) throw ConfigError("config: malformed model.layers '" + text + "'");
      dims.push_back(std::stoull(cur));
      cur.clear();
    } else if (std::isdigit(static_cast<unsigned char>(c)) || std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    } else {
      throw ConfigError("config: malformed model.layers '" + text + "'");
    }
  }
  if (dims.size() < 2) throw ConfigError("config: model.layers needs at least input x output");
  return dims;
}

inline SchemeKind parse_kind(const std::string& v) {
  if (v == "quant" || v == "quant-adaptive") return SchemeKind::quant_adaptive;
  if (v == "quant-fixed") return SchemeKind::quant_fixed;
  if (v == "prune") return SchemeKind::prune;
  if (v == "low-rank" || v == "lowrank") return SchemeKind::low_rank;
  throw ConfigError("config: unknown part kind '" + v + "'");
}

}  // namespace detail

inline ExperimentConfig parse_experiment(const ConfigMap& map) {
  ExperimentConfig cfg;

  if (!map.has("experiment.seed")) throw ConfigError("config: experiment.seed is mandatory");
  cfg.seed = map.get_u64("experiment.seed", 0);
  cfg.out_dir = map.get("experiment.out", cfg.out_dir);
  cfg.ref_model = map.get("experiment.ref_model", "");

  cfg.layer_dims = detail::parse_dims(map.require("model.layers"));
  const std::string act = map.get("model.activation", "relu");
  if (act == "relu")
    cfg.hidden_act = Activation::relu;
  else if (act == "identity")
    cfg.hidden_act = Activation::identity;
  else
    throw ConfigError("config: model.activation must be relu or identity, got '" + act + "'");
  const std::string loss = map.get("model.loss", "cross-entropy");
  if (loss == "cross-entropy")
    cfg.loss = LossKind::cross_entropy;
  else if (loss == "squared-error")
    cfg.loss = LossKind::squared_error;
  else
    throw ConfigError("config: model.loss must be cross-entropy or squared-error");
  cfg.weight_decay = map.get_double("model.weight_decay", 0.0);
  if (cfg.weight_decay < 0) throw ConfigError("config: model.weight_decay must be >= 0");
  cfg.compress_biases = map.get_bool("model.compress_biases", false);

  cfg.data.source = map.require("data.source");
  if (cfg.data.source == "synthetic-blobs") {
    cfg.data.classes = map.get_u64("data.classes", cfg.data.classes);
    cfg.data.dim = map.get_u64("data.dim", cfg.data.dim);
    cfg.data.n_train = map.get_u64("data.train", cfg.data.n_train);
    cfg.data.n_test = map.get_u64("data.test", cfg.data.n_test);
    cfg.data.spread = map.get_double("data.spread", cfg.data.spread);
  } else if (cfg.data.source == "csv") {
    cfg.data.path = map.require("data.path");
    cfg.data.test_fraction = map.get_double("data.test_fraction", cfg.data.test_fraction);
    if (cfg.data.test_fraction < 0 || cfg.data.test_fraction >= 1)
      throw ConfigError("config: data.test_fraction must be in [0,1)");
  } else if (cfg.data.source == "cifar10-binary") {
    cfg.data.dir = map.require("data.dir");
  } else {
    throw ConfigError("config: data.source must be synthetic-blobs, csv, or cifar10-binary");
  }

  for (const std::string& name : detail::split_list(map.get("combo.parts", ""))) {
    PartConfig pc;
    pc.name = name;
    const std::string base = "part." + name + ".";
    pc.spec.kind = detail::parse_kind(map.require(base + "kind"));
    pc.spec.codebook_size = map.get_u64(base + "K", 2);
    pc.spec.rank = map.get_u64(base + "rank", 1);
    pc.spec.shared_codebook = map.get_bool(base + "shared", false);
    for (const std::string& v : detail::split_list(map.get(base + "codebook", "")))
      pc.spec.fixed_codebook.push_back(map.parse_double(base + "codebook", v));
    if (pc.spec.kind == SchemeKind::quant_fixed && pc.spec.fixed_codebook.empty())
      throw ConfigError("config: part '" + name + "' is quant-fixed but has no codebook");
    pc.budget_text = map.get(base + "budget", "");
    if (pc.spec.kind == SchemeKind::prune && pc.budget_text.empty())
      throw ConfigError("config: part '" + name + "' is prune but has no budget");
    cfg.parts.push_back(std::move(pc));
  }

  const std::string variant = map.get("lc.variant", "al");
  if (variant == "al")
    cfg.lc.variant = LcVariant::augmented_lagrangian;
  else if (variant == "qp")
    cfg.lc.variant = LcVariant::quadratic_penalty;
  else
    throw ConfigError("config: lc.variant must be al or qp");
  cfg.lc.schedule.mu0 = map.get_double("lc.mu0", cfg.lc.schedule.mu0);
  cfg.lc.schedule.growth = map.get_double("lc.growth", cfg.lc.schedule.growth);
  cfg.lc.schedule.max_steps = map.get_u64("lc.steps", cfg.lc.schedule.max_steps);
  validate_schedule(cfg.lc.schedule);
  cfg.lc.alternations = map.get_u64("lc.alternations", cfg.lc.alternations);
  cfg.lc.stop_rel_tol = map.get_double("lc.stop_tol", cfg.lc.stop_rel_tol);
  cfg.lc.scale_lr_with_penalty = map.get_bool("lc.scale_lr_with_penalty", false);

  auto fill_opt = [&](const std::string& sec, SgdConfig base) {
    SgdConfig o = base;
    o.lr = map.get_double(sec + ".lr", base.lr);
    o.lr_decay = map.get_double(sec + ".lr_decay", base.lr_decay);
    o.momentum = map.get_double(sec + ".momentum", base.momentum);
    o.epochs = map.get_u64(sec + ".epochs", base.epochs);
    o.batch_size = map.get_u64(sec + ".batch", base.batch_size);
    if (o.lr <= 0) throw ConfigError("config: " + sec + ".lr must be > 0");
    if (o.momentum < 0 || o.momentum >= 1)
      throw ConfigError("config: " + sec + ".momentum must be in [0,1)");
    if (o.lr_decay <= 0 || o.lr_decay > 1)
      throw ConfigError("config: " + sec + ".lr_decay must be in (0,1]");
    if (o.batch_size == 0) throw ConfigError("config: " + sec + ".batch must be > 0");
    return o;
  };
  cfg.ref_opt = fill_opt("optimizer", SgdConfig{});
  cfg.lc.lstep_opt = fill_opt("lstep", cfg.ref_opt);  // defaults inherit [optimizer]

  cfg.storage.index_delta_bits =
      static_cast<std::uint32_t>(map.get_u64("storage.index_delta_bits", 8));
  if (cfg.storage.index_delta_bits < 1 || cfg.storage.index_delta_bits > 32)
    throw ConfigError("config: storage.index_delta_bits must be in [1,32]");

  cfg.sweep.part = map.get("sweep.part", "");
  cfg.sweep.key = map.get("sweep.key", "budget");
  cfg.sweep.values = detail::split_list(map.get("sweep.values", ""));
  if (!cfg.sweep.part.empty()) {
    bool found = false;
    for (const PartConfig& p : cfg.parts) found = found || p.name == cfg.sweep.part;
    if (!found) throw ConfigError("config: sweep.part '" + cfg.sweep.part + "' is not a part");
    if (cfg.sweep.key != "budget" && cfg.sweep.key != "K" && cfg.sweep.key != "rank")
      throw ConfigError("config: sweep.key must be budget, K, or rank");
    if (cfg.sweep.values.empty()) throw ConfigError("config: sweep.values is empty");
  }

  map.ensure_consumed();
  return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  return parse_experiment(parse_config_file(path));
}

// ------------------------------------------------------- derived builders ---

inline ModelSpec model_spec_from(const ExperimentConfig& cfg) {
  ModelSpec spec;
  spec.loss = cfg.loss;
  spec.weight_decay = cfg.weight_decay;
  for (std::size_t i = 0; i + 1 < cfg.layer_dims.size(); ++i) {
    const bool last = i + 2 == cfg.layer_dims.size();
    DenseLayerSpec l;
    l.in = cfg.layer_dims[i];
    l.out = cfg.layer_dims[i + 1];
    l.act = last ? (cfg.loss == LossKind::cross_entropy ? Activation::softmax
                                                        : Activation::identity)
                 : cfg.hidden_act;
    spec.layers.push_back(l);
  }
  validate_model(spec);
  return spec;
}

// Budget strings: "100" = absolute count, "2.5%" = percentage of the
// compressed coordinate count, rounded to nearest.
inline std::size_t resolve_budget(const std::string& text, std::size_t compressed_total) {
  if (text.empty()) return 0;
  if (text.back() == '%') {
    const std::string num = text.substr(0, text.size() - 1);
    try {
      std::size_t used = 0;
      const double pct = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
      if (pct < 0 || pct > 100) throw std::invalid_argument(num);
      return static_cast<std::size_t>(std::llround(pct / 100.0 * static_cast<double>(compressed_total)));
    } catch (const std::exception&) {
      throw ConfigError("config: bad percentage budget '" + text + "'");
    }
  }
  try {
    if (!std::isdigit(static_cast<unsigned char>(text[0]))) throw std::invalid_argument(text);
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad budget '" + text + "'");
  }
}

inline std::vector<SchemeSpec> resolve_parts(const ExperimentConfig& cfg,
                                             std::size_t compressed_total) {
  std::vector<SchemeSpec> specs;
  for (const PartConfig& pc : cfg.parts) {
    SchemeSpec s = pc.spec;
    s.budget = resolve_budget(pc.budget_text, compressed_total);
    if (s.kind == SchemeKind::prune) {
      if (s.budget == 0) throw ConfigError("config: part '" + pc.name + "' budget resolves to 0");
      if (s.budget > compressed_total)
        throw ConfigError("config: part '" + pc.name + "' budget exceeds compressed size");
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace addlc
