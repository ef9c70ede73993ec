#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "friendly/cli.hpp"

namespace {

friendly::ExperimentConfig load_with_overrides(const std::string& config_path,
                                               const std::string& out_dir,
                                               std::uint64_t seed, bool seed_set) {
  friendly::ExperimentConfig cfg = friendly::load_config(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (seed_set) cfg.run.seed = seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"friendly: developmental data-simplification training experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, out_path;
  std::uint64_t seed = 0;
  int jobs = 1;

  auto* train = app.add_subcommand("train", "run one training experiment");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out", out_dir, "output directory (overrides config)");
  auto* train_seed = train->add_option("--seed", seed, "run seed (overrides config)");

  auto* grid = app.add_subcommand("grid", "run a hyperparameter grid");
  grid->add_option("--config", config_path, "config file")->required();
  grid->add_option("--out", out_dir, "output directory (overrides config)");
  grid->add_option("--jobs", jobs, "parallel grid workers")->check(CLI::PositiveNumber);

  std::string checkpoint_path, aux_checkpoint_path;
  std::size_t grid_res = 64;
  std::vector<double> bounds = {-2.0, 3.0, -2.0, 2.0};
  auto* expb = app.add_subcommand("export-boundary", "class map of a 2-d checkpoint");
  expb->add_option("--checkpoint", checkpoint_path, "classifier checkpoint")->required();
  expb->add_option("--aux-checkpoint", aux_checkpoint_path, "auxiliary checkpoint");
  expb->add_option("--grid-res", grid_res, "lattice resolution");
  expb->add_option("--bounds", bounds, "x_lo x_hi y_lo y_hi")->expected(4);
  expb->add_option("--config", config_path, "config providing the dataset (adds points export)");
  expb->add_option("--out", out_path, "output csv path")->required();

  std::size_t k = 16;
  auto* expp = app.add_subcommand("export-perturbations", "x, delta and simplified examples");
  expp->add_option("--aux-checkpoint", aux_checkpoint_path, "auxiliary checkpoint")->required();
  expp->add_option("--config", config_path, "config providing the dataset")->required();
  expp->add_option("--k", k, "number of sampled examples");
  auto* expp_seed = expp->add_option("--seed", seed, "sampling seed");
  expp->add_option("--out", out_path, "output csv path")->required();

  auto* gradc = app.add_subcommand("gradcheck", "finite-difference audit of all primitives");
  auto* gradc_seed = gradc->add_option("--seed", seed, "random seed");

  auto* gend = app.add_subcommand("gen-data", "write the configured dataset as .amat");
  gend->add_option("--config", config_path, "config file")->required();
  gend->add_option("--out", out_path, "output .amat path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return friendly::cmd_train(
          load_with_overrides(config_path, out_dir, seed, train_seed->count() > 0));
    if (grid->parsed())
      return friendly::cmd_grid(load_with_overrides(config_path, out_dir, 0, false), jobs);
    if (expb->parsed()) {
      friendly::ExperimentConfig cfg;
      const bool have_cfg = !config_path.empty();
      if (have_cfg) cfg = friendly::load_config(config_path);
      return friendly::cmd_export_boundary(checkpoint_path, aux_checkpoint_path, grid_res,
                                           bounds[0], bounds[1], bounds[2], bounds[3],
                                           out_path, have_cfg ? &cfg : nullptr);
    }
    if (expp->parsed())
      return friendly::cmd_export_perturbations(
          aux_checkpoint_path, friendly::load_config(config_path), k,
          expp_seed->count() > 0 ? seed : 0, out_path);
    if (gradc->parsed())
      return friendly::cmd_gradcheck(gradc_seed->count() > 0 ? seed : 1);
    if (gend->parsed())
      return friendly::cmd_gen_data(friendly::load_config(config_path), out_path);
  } catch (const friendly::Diverged& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
