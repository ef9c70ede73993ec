#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "friendly/common.hpp"
#include "friendly/data.hpp"
#include "friendly/engines.hpp"
#include "friendly/models.hpp"

namespace friendly {

struct DataConfig {
  std::string kind = "two_moons";  // two_moons | blobs | amat
  std::size_t n = 300;
  double noise_std = 0.1;
  std::size_t d = 2;
  int classes = 2;
  double separation = 10.0;
  double label_noise = 0.0;
  std::uint64_t seed = 7;
  std::string train_path, valid_path, test_path;
  std::size_t features = 784;
  double subsample = 1.0;
  double val_fraction = 1.0 / 6.0;
  double test_fraction = 0.2;
};

struct GridConfig {
  std::vector<double> eta_max;
  std::vector<double> gamma_max_simp_frac;
  std::vector<double> beta;
  std::vector<std::uint64_t> seeds;

  bool defined() const { return !eta_max.empty(); }

  void validate() const {
    if (eta_max.empty() || gamma_max_simp_frac.empty() || beta.empty() || seeds.empty())
      throw Error("grid: all axes (eta_max, gamma_max_simp_frac, beta) and seeds must be non-empty");
    for (double f : gamma_max_simp_frac)
      if (f <= 0.0 || f >= 1.0)
        throw Error("grid: gamma_max_simp_frac values must be in (0,1)");
  }
};

struct ExperimentConfig {
  DataConfig data;
  ClassifierSpec model;
  AuxNetSpec aux;
  RunConfig run;
  GridConfig grid;
  std::string out_dir = "out";
  std::vector<int> export_gammas;
  std::string precision = "f64";

  std::string canonical_text() const;
  std::string config_hash() const { return hex64(fnv1a64(canonical_text())); }
};

namespace detail {

struct RawConfig {
  // (section, key) -> value, with consumption tracking for unknown-key errors
  std::map<std::pair<std::string, std::string>, std::string> kv;
  mutable std::set<std::pair<std::string, std::string>> used;

  bool has(const std::string& sec, const std::string& key) const {
    return kv.count({sec, key}) != 0;
  }
  std::string get(const std::string& sec, const std::string& key,
                  const std::string& fallback) const {
    auto it = kv.find({sec, key});
    if (it == kv.end()) return fallback;
    used.insert(it->first);
    return it->second;
  }
  double get_num(const std::string& sec, const std::string& key, double fallback) const {
    const std::string v = get(sec, key, "");
    if (v.empty()) return fallback;
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size())
      throw Error("config: " + sec + "." + key + " is not a number: " + v);
    return out;
  }
  bool get_bool(const std::string& sec, const std::string& key, bool fallback) const {
    const std::string v = get(sec, key, fallback ? "true" : "false");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error("config: " + sec + "." + key + " must be true/false, got " + v);
  }
  std::vector<double> get_list(const std::string& sec, const std::string& key) const {
    const std::string v = get(sec, key, "");
    std::vector<double> out;
    if (v.empty()) return out;
    std::istringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      out.push_back(std::stod(tok));
    }
    return out;
  }

  void check_all_used() const {
    for (const auto& [k, v] : kv)
      if (!used.count(k))
        throw Error("config: unknown key " + k.first + "." + k.second);
  }
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline RawConfig parse_raw(std::istream& in) {
  RawConfig raw;
  static const std::set<std::string> known_sections = {
      "data", "model", "aux", "training", "schedule", "grid", "output"};
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw Error("config: malformed section at line " + std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (!known_sections.count(section))
        throw Error("config: unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || section.empty())
      throw Error("config: expected key = value at line " + std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error("config: empty key at line " + std::to_string(line_no));
    if (raw.kv.count({section, key}))
      throw Error("config: duplicate key " + section + "." + key);
    raw.kv[{section, key}] = value;
  }
  return raw;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  const auto raw = detail::parse_raw(in);
  ExperimentConfig cfg;

  // [data]
  cfg.data.kind = raw.get("data", "kind", cfg.data.kind);
  if (cfg.data.kind != "two_moons" && cfg.data.kind != "blobs" && cfg.data.kind != "amat")
    throw Error("config: data.kind must be two_moons|blobs|amat");
  cfg.data.n = static_cast<std::size_t>(raw.get_num("data", "n", static_cast<double>(cfg.data.n)));
  cfg.data.noise_std = raw.get_num("data", "noise_std", cfg.data.noise_std);
  cfg.data.d = static_cast<std::size_t>(raw.get_num("data", "d", static_cast<double>(cfg.data.d)));
  cfg.data.classes = static_cast<int>(raw.get_num("data", "classes", cfg.data.classes));
  cfg.data.separation = raw.get_num("data", "separation", cfg.data.separation);
  cfg.data.label_noise = raw.get_num("data", "label_noise", cfg.data.label_noise);
  cfg.data.seed = static_cast<std::uint64_t>(raw.get_num("data", "seed", static_cast<double>(cfg.data.seed)));
  cfg.data.train_path = raw.get("data", "train_path", "");
  cfg.data.valid_path = raw.get("data", "valid_path", "");
  cfg.data.test_path = raw.get("data", "test_path", "");
  cfg.data.features = static_cast<std::size_t>(raw.get_num("data", "features", static_cast<double>(cfg.data.features)));
  cfg.data.subsample = raw.get_num("data", "subsample", cfg.data.subsample);
  cfg.data.val_fraction = raw.get_num("data", "val_fraction", cfg.data.val_fraction);
  cfg.data.test_fraction = raw.get_num("data", "test_fraction", cfg.data.test_fraction);

  // [model]
  cfg.model.kind = classifier_kind_from(raw.get("model", "kind", "toy_2d"));
  cfg.model.sigma = raw.get_num("model", "sigma", 1.0);
  cfg.model.channels = static_cast<std::size_t>(raw.get_num("model", "channels", 1));
  cfg.model.height = static_cast<std::size_t>(raw.get_num("model", "height", 0));
  cfg.model.width = static_cast<std::size_t>(raw.get_num("model", "width", 0));
  for (double h : raw.get_list("model", "hidden"))
    cfg.model.hidden.push_back(static_cast<std::size_t>(h));

  // [aux]
  cfg.aux.kind = aux_kind_from(raw.get("aux", "kind", "fc_residual"));
  cfg.aux.hidden = static_cast<std::size_t>(raw.get_num("aux", "hidden", 256));
  cfg.aux.n_f = static_cast<std::size_t>(raw.get_num("aux", "n_f", 64));
  cfg.aux.nu = static_cast<int>(raw.get_num("aux", "nu", 1));
  cfg.aux.residual = raw.get_bool("aux", "residual", true);
  cfg.aux.sigma = raw.get_num("aux", "sigma", 1.0);

  // [training]
  cfg.run.regime = regime_from(raw.get("training", "regime", "ct"));
  cfg.run.batch_size = static_cast<std::size_t>(raw.get_num("training", "batch_size", 32));
  cfg.run.alpha = raw.get_num("training", "alpha", 1e-3);
  cfg.run.beta = raw.get_num("training", "beta", 1e-4);
  cfg.run.seed = static_cast<std::uint64_t>(raw.get_num("training", "seed", 1));
  cfg.run.ft_tau_max = static_cast<int>(raw.get_num("training", "ft_tau_max", 10));
  cfg.run.ft_step = raw.get_num("training", "ft_step", 0.1);
  cfg.run.ft_eps_stop = raw.get_num("training", "ft_eps_stop", 0.01);
  cfg.run.eef_p0 = raw.get_num("training", "eef_p0", 0.5);
  cfg.run.eval_every = static_cast<int>(raw.get_num("training", "eval_every", 1));
  cfg.run.reset_adam_on_drop = raw.get_bool("training", "reset_adam_on_drop", false);
  cfg.precision = raw.get("training", "precision", "f64");
  if (cfg.precision != "f64" && cfg.precision != "f32")
    throw Error("config: training.precision must be f64 or f32");

  // [schedule]
  cfg.run.plan.gamma_max = static_cast<int>(raw.get_num("schedule", "gamma_max", 50));
  cfg.run.plan.gamma_max_simp =
      static_cast<int>(raw.get_num("schedule", "gamma_max_simp", 30));
  cfg.run.plan.eta_max = raw.get_num("schedule", "eta_max", 1000.0);

  // [grid]
  cfg.grid.eta_max = raw.get_list("grid", "eta_max");
  cfg.grid.gamma_max_simp_frac = raw.get_list("grid", "gamma_max_simp_frac");
  cfg.grid.beta = raw.get_list("grid", "beta");
  for (double s : raw.get_list("grid", "seeds"))
    cfg.grid.seeds.push_back(static_cast<std::uint64_t>(s));

  // [output]
  cfg.out_dir = raw.get("output", "dir", cfg.out_dir);
  for (double g : raw.get_list("output", "export_gammas"))
    cfg.export_gammas.push_back(static_cast<int>(g));

  raw.check_all_used();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  return parse_config(in);
}

inline std::string ExperimentConfig::canonical_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "aux.hidden=" << aux.hidden << "\n";
  os << "aux.kind=" << aux_kind_name(aux.kind) << "\n";
  os << "aux.n_f=" << aux.n_f << "\n";
  os << "aux.nu=" << aux.nu << "\n";
  os << "aux.residual=" << (aux.residual ? 1 : 0) << "\n";
  os << "aux.sigma=" << aux.sigma << "\n";
  os << "data.classes=" << data.classes << "\n";
  os << "data.d=" << data.d << "\n";
  os << "data.features=" << data.features << "\n";
  os << "data.kind=" << data.kind << "\n";
  os << "data.label_noise=" << data.label_noise << "\n";
  os << "data.n=" << data.n << "\n";
  os << "data.noise_std=" << data.noise_std << "\n";
  os << "data.seed=" << data.seed << "\n";
  os << "data.separation=" << data.separation << "\n";
  os << "data.subsample=" << data.subsample << "\n";
  os << "data.test_fraction=" << data.test_fraction << "\n";
  os << "data.test_path=" << data.test_path << "\n";
  os << "data.train_path=" << data.train_path << "\n";
  os << "data.val_fraction=" << data.val_fraction << "\n";
  os << "data.valid_path=" << data.valid_path << "\n";
  os << "grid.beta=";
  for (std::size_t i = 0; i < grid.beta.size(); ++i) os << (i ? "," : "") << grid.beta[i];
  os << "\n";
  os << "grid.eta_max=";
  for (std::size_t i = 0; i < grid.eta_max.size(); ++i) os << (i ? "," : "") << grid.eta_max[i];
  os << "\n";
  os << "grid.gamma_max_simp_frac=";
  for (std::size_t i = 0; i < grid.gamma_max_simp_frac.size(); ++i)
    os << (i ? "," : "") << grid.gamma_max_simp_frac[i];
  os << "\n";
  os << "grid.seeds=";
  for (std::size_t i = 0; i < grid.seeds.size(); ++i) os << (i ? "," : "") << grid.seeds[i];
  os << "\n";
  os << "model.channels=" << model.channels << "\n";
  os << "model.height=" << model.height << "\n";
  os << "model.hidden=";
  for (std::size_t i = 0; i < model.hidden.size(); ++i) os << (i ? "," : "") << model.hidden[i];
  os << "\n";
  os << "model.kind=" << classifier_kind_name(model.kind) << "\n";
  os << "model.sigma=" << model.sigma << "\n";
  os << "model.width=" << model.width << "\n";
  os << "output.export_gammas=";
  for (std::size_t i = 0; i < export_gammas.size(); ++i) os << (i ? "," : "") << export_gammas[i];
  os << "\n";
  os << "schedule.eta_max=" << run.plan.eta_max << "\n";
  os << "schedule.gamma_max=" << run.plan.gamma_max << "\n";
  os << "schedule.gamma_max_simp=" << run.plan.gamma_max_simp << "\n";
  os << "training.alpha=" << run.alpha << "\n";
  os << "training.batch_size=" << run.batch_size << "\n";
  os << "training.beta=" << run.beta << "\n";
  os << "training.eef_p0=" << run.eef_p0 << "\n";
  os << "training.eval_every=" << run.eval_every << "\n";
  os << "training.ft_eps_stop=" << run.ft_eps_stop << "\n";
  os << "training.ft_step=" << run.ft_step << "\n";
  os << "training.ft_tau_max=" << run.ft_tau_max << "\n";
  os << "training.precision=" << precision << "\n";
  os << "training.regime=" << regime_name(run.regime) << "\n";
  os << "training.reset_adam_on_drop=" << (run.reset_adam_on_drop ? 1 : 0) << "\n";
  os << "training.seed=" << run.seed << "\n";
  return os.str();
}

/// Materialize the dataset a config describes: generate or load, subsample,
/// inject label noise into the train split, and assign missing splits.
template <class Real>
Dataset<Real> make_dataset(const ExperimentConfig& cfg) {
  Dataset<Real> ds;
  if (cfg.data.kind == "two_moons") {
    ds = gen_two_moons<Real>(cfg.data.n, cfg.data.noise_std, cfg.data.seed);
    assign_splits(ds, cfg.data.val_fraction, cfg.data.test_fraction, cfg.data.seed);
  } else if (cfg.data.kind == "blobs") {
    ds = gen_blobs<Real>(cfg.data.n, cfg.data.d, cfg.data.classes, cfg.data.separation,
                         cfg.data.noise_std, cfg.data.seed);
    assign_splits(ds, cfg.data.val_fraction, cfg.data.test_fraction, cfg.data.seed);
  } else {
    if (cfg.data.train_path.empty())
      throw Error("config: data.kind=amat requires data.train_path");
    ds = load_amat<Real>(cfg.data.train_path, cfg.data.features);
    if (!cfg.data.valid_path.empty()) {
      // fixed splits shipped as separate files: concatenate with tags
      Dataset<Real> val = load_amat<Real>(cfg.data.valid_path, cfg.data.features);
      Dataset<Real> test;
      const bool has_test = !cfg.data.test_path.empty();
      if (has_test) test = load_amat<Real>(cfg.data.test_path, cfg.data.features);
      const std::size_t d = ds.dim();
      auto append = [&](const Dataset<Real>& part, Split tag) {
        for (std::size_t i = 0; i < part.size(); ++i) {
          for (std::size_t j = 0; j < d; ++j)
            ds.X.data.push_back(part.X.at2(i, j));
          ds.y.push_back(part.y[i]);
          ds.split.push_back(tag);
        }
        ds.X.shape[0] = ds.y.size();
        ds.class_count = std::max(ds.class_count, part.class_count);
      };
      append(val, Split::val);
      if (has_test) append(test, Split::test);
    } else {
      assign_splits(ds, cfg.data.val_fraction, cfg.data.test_fraction, cfg.data.seed);
    }
  }
  if (cfg.data.subsample < 1.0) {
    if (cfg.data.subsample <= 0.0) throw Error("config: data.subsample must be in (0,1]");
    Dataset<Real> sub;
    sub.class_count = ds.class_count;
    sub.provenance = ds.provenance + "+subsample(" + std::to_string(cfg.data.subsample) + ")";
    const std::size_t d = ds.dim();
    Rng rng = stream(cfg.data.seed, {stream_tag::kData, 0x5u});
    for (Split tag : {Split::train, Split::val, Split::test}) {
      auto idx = ds.indices(tag);
      if (idx.empty()) continue;
      const auto perm = rng.permutation(idx.size());
      std::size_t keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(cfg.data.subsample * static_cast<double>(idx.size()))));
      std::vector<std::size_t> kept;
      for (std::size_t i = 0; i < keep; ++i) kept.push_back(idx[perm[i]]);
      std::sort(kept.begin(), kept.end());
      for (std::size_t i : kept) {
        for (std::size_t j = 0; j < d; ++j) sub.X.data.push_back(ds.X.at2(i, j));
        sub.y.push_back(ds.y[i]);
        sub.split.push_back(tag);
      }
    }
    sub.X.shape = {sub.y.size(), d};
    ds = std::move(sub);
  }
  if (cfg.data.label_noise > 0.0)
    ds = inject_label_noise(std::move(ds), cfg.data.label_noise, cfg.data.seed);
  return ds;
}

/// Fill the parts of the model/aux specs that depend on the dataset.
template <class Real>
ClassifierSpec resolve_model_spec(const ExperimentConfig& cfg, const Dataset<Real>& ds) {
  ClassifierSpec spec = cfg.model;
  spec.class_count = ds.class_count;
  if (spec.kind == ClassifierKind::cnn_a) {
    if (spec.height == 0 || spec.width == 0) {
      const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(ds.dim() / spec.channels))));
      if (side * side * spec.channels != ds.dim())
        throw Error("config: cnn_a needs explicit model.height/model.width for non-square data");
      spec.height = spec.width = side;
    }
    spec.input_dim = spec.channels * spec.height * spec.width;
  } else {
    spec.input_dim = ds.dim();
  }
  return spec;
}

template <class Real>
AuxNetSpec resolve_aux_spec(const ExperimentConfig& cfg, const ClassifierSpec& model_spec) {
  AuxNetSpec spec = cfg.aux;
  spec.input_dim = model_spec.flat_dim();
  if (spec.kind == AuxKind::conv_bottleneck) {
    spec.channels = model_spec.channels;
    spec.height = model_spec.height;
    spec.width = model_spec.width;
    if (spec.height == 0)
      throw Error("config: conv_bottleneck auxiliary requires image-shaped data");
  }
  return spec;
}

/// One grid cell: the overridden hyperparameters plus the run seed.
struct GridCell {
  double eta_max = 0.0;
  double gamma_max_simp_frac = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::size_t cell_index = 0;  // index ignoring the seed axis
};

/// Lexicographic expansion over (eta_max, gamma_max_simp_frac, beta, seed).
inline std::vector<GridCell> expand_grid(const GridConfig& grid) {
  grid.validate();
  std::vector<GridCell> cells;
  std::size_t cell = 0;
  for (double e : grid.eta_max)
    for (double f : grid.gamma_max_simp_frac)
      for (double b : grid.beta) {
        for (std::uint64_t s : grid.seeds) {
          GridCell c;
          c.eta_max = e;
          c.gamma_max_simp_frac = f;
          c.beta = b;
          c.seed = s;
          c.cell_index = cell;
          cells.push_back(c);
        }
        ++cell;
      }
  return cells;
}

/// gamma_max_simp fractions are applied as round(frac * gamma_max), clamped
/// into the valid [2, gamma_max-1] band.
inline ExperimentConfig apply_cell(const ExperimentConfig& base, const GridCell& cell) {
  ExperimentConfig cfg = base;
  cfg.run.plan.eta_max = cell.eta_max;
  int gms = static_cast<int>(std::lround(cell.gamma_max_simp_frac * base.run.plan.gamma_max));
  gms = std::max(2, std::min(gms, base.run.plan.gamma_max - 1));
  cfg.run.plan.gamma_max_simp = gms;
  cfg.run.beta = cell.beta;
  cfg.run.seed = cell.seed;
  return cfg;
}

}  // namespace friendly
