#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "friendly/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("/tmp") / ("friendly_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

friendly::ExperimentConfig small_config(const std::string& regime, const fs::path& out) {
  std::string text = R"(
[data]
kind = two_moons
n = 90
noise_std = 0.1
val_fraction = 0.2
test_fraction = 0.2

[model]
kind = toy_2d

[training]
regime = )" + regime + R"(
batch_size = 16
alpha = 0.01
beta = 0.005
seed = 4

[schedule]
gamma_max = 6
gamma_max_simp = 4
eta_max = 200
)";
  std::istringstream in(text);
  auto cfg = friendly::parse_config(in);
  cfg.out_dir = out.string();
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// NDJSON content with wall-clock fields removed.
std::string ndjson_without_wall(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_ms");
    out << j.dump() << "\n";
  }
  return out.str();
}

}  // namespace

TEST_CASE("cmd_train writes logs, summary and checkpoint") {
  TempDir dir("train");
  const auto cfg = small_config("ct", dir.path);
  CHECK(friendly::cmd_train(cfg) == 0);
  CHECK(fs::exists(dir.path / "epochs.ndjson"));
  CHECK(fs::exists(dir.path / "epochs_summary.csv"));
  CHECK(fs::exists(dir.path / "epochs_best.ckpt"));
  std::ifstream in(dir.path / "epochs.ndjson");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 7);  // header + 6 epochs
}

TEST_CASE("identical train invocations are byte-identical modulo wall_ms") {
  TempDir d1("det1"), d2("det2");
  auto c1 = small_config("nft", d1.path);
  auto c2 = small_config("nft", d2.path);
  REQUIRE(friendly::cmd_train(c1) == 0);
  REQUIRE(friendly::cmd_train(c2) == 0);
  CHECK(ndjson_without_wall(d1.path / "epochs.ndjson") ==
        ndjson_without_wall(d2.path / "epochs.ndjson"));
  CHECK(read_file(d1.path / "epochs_summary.csv") == read_file(d2.path / "epochs_summary.csv"));
  CHECK(read_file(d1.path / "epochs_best.ckpt") == read_file(d2.path / "epochs_best.ckpt"));
}

TEST_CASE("ct and nft-with-identity-aux produce matching train-loss columns") {
  TempDir d1("ct"), d2("nfti");
  auto ct = small_config("ct", d1.path);
  auto nft = small_config("nft", d2.path);
  nft.aux.kind = friendly::AuxKind::identity;
  REQUIRE(friendly::cmd_train(ct) == 0);
  REQUIRE(friendly::cmd_train(nft) == 0);
  std::ifstream a(d1.path / "epochs.ndjson"), b(d2.path / "epochs.ndjson");
  std::string la, lb;
  std::getline(a, la);
  std::getline(b, lb);  // headers differ (config hash)
  while (std::getline(a, la) && std::getline(b, lb)) {
    const auto ja = nlohmann::json::parse(la), jb = nlohmann::json::parse(lb);
    CHECK(std::fabs(ja["train_loss"].get<double>() - jb["train_loss"].get<double>()) <= 1e-9);
  }
}

TEST_CASE("grid of one cell and one seed reduces to a single train run") {
  TempDir dir("grid1");
  auto cfg = small_config("nft", dir.path);
  cfg.grid.eta_max = {200};
  cfg.grid.gamma_max_simp_frac = {0.5};
  cfg.grid.beta = {0.005};
  cfg.grid.seeds = {4};
  CHECK(friendly::cmd_grid(cfg, 1) == 0);
  CHECK(fs::exists(dir.path / "grid_summary.csv"));
  CHECK(fs::exists(dir.path / "cell0_seed4.ndjson"));
  std::ifstream in(dir.path / "grid_summary.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line.find("std=population") != std::string::npos);
  std::getline(in, line);  // column header
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 1);
}

TEST_CASE("grid summaries hold one row per cell and the winner is the argmin") {
  TempDir dir("grid2");
  auto cfg = small_config("nft", dir.path);
  cfg.run.plan.gamma_max = 4;
  cfg.grid.eta_max = {100, 500};
  cfg.grid.gamma_max_simp_frac = {0.5};
  cfg.grid.beta = {0.001, 0.01};
  cfg.grid.seeds = {1, 2};
  CHECK(friendly::cmd_grid(cfg, 2) == 0);
  std::ifstream in(dir.path / "grid_summary.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::vector<double> means;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    for (int i = 0; i < 5; ++i) std::getline(ls, tok, ',');
    means.push_back(std::stod(tok));
  }
  REQUIRE(means.size() == 4);  // 2 x 1 x 2 cells
  const double best = *std::min_element(means.begin(), means.end());
  for (double m : means) CHECK(best <= m);
}

TEST_CASE("gradcheck command reports every primitive exactly once and passes") {
  std::ostringstream out;
  CHECK(friendly::cmd_gradcheck(1, out) == 0);
  std::istringstream in(out.str());
  std::string line;
  std::multiset<std::string> names;
  while (std::getline(in, line)) {
    const auto sp = line.find(' ');
    if (line.rfind("gradcheck", 0) == 0) continue;
    names.insert(line.substr(0, sp));
    CHECK(line.find(" ok") != std::string::npos);
  }
  for (const char* prim :
       {"matmul", "add", "sub", "scale", "tanh", "relu", "softmax", "conv2d", "maxpool2d",
        "pad2d", "upsample2d", "batchnorm1d", "dropout", "square", "sum", "mean", "concat",
        "reshape", "cross_entropy", "ct_loss", "nft_loss", "nft_penalty"})
    CHECK(names.count(prim) == 1);
}

TEST_CASE("gen-data writes a loadable amat file") {
  TempDir dir("gendata");
  auto cfg = small_config("ct", dir.path);
  const auto out = (dir.path / "moons.amat").string();
  CHECK(friendly::cmd_gen_data(cfg, out) == 0);
  const auto back = friendly::load_amat<double>(out, 2);
  CHECK(back.size() == 90);
  CHECK(back.class_count == 2);
}

TEST_CASE("boundary frames are exported at the configured gammas") {
  TempDir dir("frames");
  auto cfg = small_config("nft", dir.path);
  cfg.export_gammas = {1, 3, 6};
  REQUIRE(friendly::cmd_train(cfg) == 0);
  for (int g : {1, 3, 6}) {
    CHECK(fs::exists(dir.path / ("epochs_boundary_g" + std::to_string(g) + ".csv")));
    CHECK(fs::exists(dir.path / ("epochs_points_g" + std::to_string(g) + ".csv")));
  }
  CHECK_FALSE(fs::exists(dir.path / "epochs_boundary_g2.csv"));
}

TEST_CASE("export subcommands run from checkpoints") {
  TempDir dir("exports");
  auto cfg = small_config("nft", dir.path);
  REQUIRE(friendly::cmd_train(cfg) == 0);
  const auto model_ckpt = (dir.path / "epochs_best.ckpt").string();
  const auto aux_ckpt = (dir.path / "epochs_best_aux.ckpt").string();
  REQUIRE(fs::exists(model_ckpt));
  REQUIRE(fs::exists(aux_ckpt));

  const auto bpath = (dir.path / "map.csv").string();
  CHECK(friendly::cmd_export_boundary(model_ckpt, aux_ckpt, 5, -2, 3, -2, 2, bpath, &cfg) == 0);
  CHECK(fs::exists(bpath));
  CHECK(fs::exists(dir.path / "map_points.csv"));

  const auto ppath = (dir.path / "pert.csv").string();
  CHECK(friendly::cmd_export_perturbations(aux_ckpt, cfg, 8, 1, ppath) == 0);
  CHECK(fs::exists(ppath));
}

TEST_CASE("float precision runs end to end") {
  TempDir dir("f32");
  auto cfg = small_config("nft", dir.path);
  cfg.precision = "f32";
  cfg.run.plan.gamma_max = 3;
  cfg.run.plan.gamma_max_simp = 2;
  CHECK(friendly::cmd_train(cfg) == 0);
  CHECK(fs::exists(dir.path / "epochs.ndjson"));
}
