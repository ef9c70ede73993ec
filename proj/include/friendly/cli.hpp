#pragma once

#include <atomic>
#include <filesystem>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "friendly/checkpoint.hpp"
#include "friendly/config.hpp"
#include "friendly/engines.hpp"
#include "friendly/exports.hpp"
#include "friendly/gradcheck.hpp"

namespace friendly {

namespace cli_detail {

template <class Real>
TrainResult<Real> dispatch_regime(const ExperimentConfig& cfg, const Dataset<Real>& ds,
                                  Classifier<Real>& model, Auxiliary<Real>* aux,
                                  const TrainHooks<Real>* hooks) {
  switch (cfg.run.regime) {
    case Regime::ct: return train_ct(ds, model, cfg.run, hooks);
    case Regime::ft: return train_ft(ds, model, cfg.run, hooks);
    case Regime::eef: return train_eef(ds, model, cfg.run, hooks);
    case Regime::nft:
      if (aux == nullptr) throw Error("nft requires an auxiliary network");
      return train_nft(ds, model, *aux, cfg.run, hooks);
  }
  throw Error("unreachable regime");
}

/// One full run: train, stream NDJSON, write summary/checkpoints and any
/// requested per-epoch boundary frames.
template <class Real>
TrainResult<Real> run_one(const ExperimentConfig& cfg, const Dataset<Real>& ds,
                          const std::filesystem::path& out_dir,
                          const std::string& file_stem) {
  const std::string hash = cfg.config_hash();
  std::filesystem::create_directories(out_dir);
  Classifier<Real> model(resolve_model_spec(cfg, ds), cfg.run.seed);
  std::unique_ptr<Auxiliary<Real>> aux;
  if (cfg.run.regime == Regime::nft)
    aux = std::make_unique<Auxiliary<Real>>(resolve_aux_spec<Real>(cfg, model.spec()),
                                            cfg.run.seed);

  NdjsonWriter ndjson((out_dir / (file_stem + ".ndjson")).string(), hash);
  const std::set<int> frames(cfg.export_gammas.begin(), cfg.export_gammas.end());
  if (!frames.empty() && ds.dim() != 2)
    throw Error("output.export_gammas requires 2-d data");

  TrainHooks<Real> hooks;
  hooks.on_epoch_end = [&](int gamma, const EpochRecord& rec, Classifier<Real>& m,
                           Auxiliary<Real>* active_aux) {
    ndjson.write(rec);
    if (frames.count(gamma)) {
      export_boundary_csv((out_dir / (file_stem + "_boundary_g" + std::to_string(gamma) + ".csv")).string(),
                          hash, m, 64, -2.0, 3.0, -2.0, 2.0);
      export_points_csv((out_dir / (file_stem + "_points_g" + std::to_string(gamma) + ".csv")).string(),
                        hash, active_aux, ds);
    }
  };

  TrainResult<Real> result = dispatch_regime<Real>(cfg, ds, model, aux.get(), &hooks);

  write_run_summary_csv((out_dir / (file_stem + "_summary.csv")).string(), hash, cfg.run,
                        result);
  if (!result.records.empty()) {
    Classifier<Real> best(model.spec(), cfg.run.seed);
    best.params() = result.best_params;
    save_classifier_checkpoint((out_dir / (file_stem + "_best.ckpt")).string(), best, hash);
    if (aux && result.best_aux_params.size() > 0) {
      Auxiliary<Real> best_aux(aux->spec(), cfg.run.seed);
      best_aux.params() = result.best_aux_params;
      save_aux_checkpoint((out_dir / (file_stem + "_best_aux.ckpt")).string(), best_aux, hash);
    }
  }
  return result;
}

}  // namespace cli_detail

/// `train`: run the configured regime once. Exit 0 on success; a diverged
/// run leaves partial logs behind and reports exit code 3 via exception.
inline int cmd_train(const ExperimentConfig& cfg) {
  const std::filesystem::path out_dir(cfg.out_dir);
  try {
    if (cfg.precision == "f32") {
      const auto ds = make_dataset<float>(cfg);
      cli_detail::run_one<float>(cfg, ds, out_dir, "epochs");
    } else {
      const auto ds = make_dataset<double>(cfg);
      cli_detail::run_one<double>(cfg, ds, out_dir, "epochs");
    }
  } catch (const Diverged& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

/// `grid`: one run per (cell x seed), lexicographic over
/// (eta_max, gamma_max_simp_frac, beta, seed). Cell failures are recorded
/// and the grid continues. Cells may run in parallel; aggregation order is
/// deterministic either way.
inline int cmd_grid(const ExperimentConfig& base, int jobs = 1) {
  base.grid.validate();
  const auto cells = expand_grid(base.grid);
  const std::filesystem::path out_dir(base.out_dir);
  std::filesystem::create_directories(out_dir);

  struct CellResult {
    double val = 0.0, test = 0.0;
    bool failed = false;
    std::string note;
  };
  std::vector<CellResult> results(cells.size());

  const auto ds64 = make_dataset<double>(base);

  auto run_cell = [&](std::size_t i) {
    const ExperimentConfig cfg = apply_cell(base, cells[i]);
    const std::string stem =
        "cell" + std::to_string(cells[i].cell_index) + "_seed" + std::to_string(cells[i].seed);
    try {
      const auto res = cli_detail::run_one<double>(cfg, ds64, out_dir, stem);
      results[i] = {res.best_val_error, res.best_test_error, false, ""};
    } catch (const std::exception& e) {
      results[i] = {0.0, 0.0, true, e.what()};
    }
  };

  if (jobs <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int n_threads = std::min<int>(jobs, static_cast<int>(cells.size()));
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
          run_cell(i);
      });
    for (auto& th : pool) th.join();
  }

  // aggregate per cell in config order
  std::vector<GridRow> rows;
  for (std::size_t i = 0; i < cells.size();) {
    const std::size_t cell = cells[i].cell_index;
    GridRow row;
    const ExperimentConfig cfg = apply_cell(base, cells[i]);
    row.eta_max = cells[i].eta_max;
    row.gamma_max_simp = cfg.run.plan.gamma_max_simp;
    row.beta = cells[i].beta;
    for (; i < cells.size() && cells[i].cell_index == cell; ++i) {
      if (results[i].failed) {
        row.failed = true;
        row.note = results[i].note;
      } else {
        row.val_errors.push_back(results[i].val);
        row.test_errors.push_back(results[i].test);
      }
    }
    rows.push_back(std::move(row));
  }
  write_grid_summary_csv((out_dir / "grid_summary.csv").string(), base.config_hash(), rows);

  // winning cell: lowest mean validation error among complete cells
  std::size_t best = rows.size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].failed || rows[r].val_errors.empty()) continue;
    if (best == rows.size() || mean_of(rows[r].val_errors) < mean_of(rows[best].val_errors))
      best = r;
  }
  if (best < rows.size()) {
    std::cout << "winner: eta_max=" << rows[best].eta_max
              << " gamma_max_simp=" << rows[best].gamma_max_simp
              << " beta=" << rows[best].beta
              << " mean_val_error=" << mean_of(rows[best].val_errors)
              << " mean_test_error=" << mean_of(rows[best].test_errors) << "\n";
  }
  bool any_failed = false;
  for (const auto& r : rows) any_failed = any_failed || r.failed;
  return any_failed ? 1 : 0;
}

inline int cmd_export_boundary(const std::string& checkpoint_path,
                               const std::string& aux_checkpoint_path,
                               std::size_t grid_res, double x_lo, double x_hi,
                               double y_lo, double y_hi, const std::string& out_path,
                               const ExperimentConfig* data_cfg = nullptr) {
  Classifier<double> model = load_classifier_checkpoint<double>(checkpoint_path);
  export_boundary_csv(out_path, "-", model, grid_res, x_lo, x_hi, y_lo, y_hi);
  if (data_cfg != nullptr) {
    std::unique_ptr<Auxiliary<double>> aux;
    if (!aux_checkpoint_path.empty())
      aux = std::make_unique<Auxiliary<double>>(load_aux_checkpoint<double>(aux_checkpoint_path));
    const auto ds = make_dataset<double>(*data_cfg);
    std::filesystem::path p(out_path);
    p.replace_extension("");
    export_points_csv(p.string() + "_points.csv", "-", aux.get(), ds);
  }
  return 0;
}

inline int cmd_export_perturbations(const std::string& aux_checkpoint_path,
                                    const ExperimentConfig& data_cfg, std::size_t k,
                                    std::uint64_t seed, const std::string& out_path) {
  Auxiliary<double> aux = load_aux_checkpoint<double>(aux_checkpoint_path);
  const auto ds = make_dataset<double>(data_cfg);
  bool clamped = false;
  export_perturbations_csv(out_path, "-", aux, ds, k, seed, &clamped);
  if (clamped)
    std::cerr << "warning: k exceeds the training set size, clamped to "
              << ds.indices(Split::train).size() << "\n";
  return 0;
}

/// `gradcheck`: worst relative error per primitive; nonzero exit on breach.
inline int cmd_gradcheck(std::uint64_t seed, std::ostream& out = std::cout) {
  const GradCheckReport report = run_gradcheck(seed);
  for (const auto& e : report.entries)
    out << e.name << " " << e.worst_rel_err
        << (e.worst_rel_err < report.threshold ? " ok" : " FAIL") << "\n";
  out << (report.ok() ? "gradcheck passed" : "gradcheck FAILED") << " (threshold "
      << report.threshold << ")\n";
  return report.ok() ? 0 : 1;
}

inline int cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_path) {
  const auto ds = make_dataset<double>(cfg);
  save_amat(ds, out_path);
  std::cout << "wrote " << ds.size() << " examples (" << ds.dim() << " features, "
            << ds.class_count << " classes) to " << out_path << "\n";
  return 0;
}

}  // namespace friendly
