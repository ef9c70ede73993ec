#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "friendly/checkpoint.hpp"
#include "friendly/cli.hpp"
#include "friendly/config.hpp"
#include "friendly/exports.hpp"

using friendly::Auxiliary;
using friendly::AuxKind;
using friendly::AuxNetSpec;
using friendly::Classifier;
using friendly::ClassifierKind;
using friendly::ClassifierSpec;
using friendly::Tensor;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/friendly_io_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

const char* kSampleConfig = R"(
# a full experiment description
[data]
kind = two_moons
n = 120
noise_std = 0.1
val_fraction = 0.2
test_fraction = 0.2

[model]
kind = toy_2d
hidden = 16

[aux]
kind = fc_residual
hidden = 64

[training]
regime = nft
batch_size = 16
alpha = 0.01
beta = 0.001
seed = 3

[schedule]
gamma_max = 12
gamma_max_simp = 8
eta_max = 500

[output]
dir = /tmp/friendly_io_outdir
)";

}  // namespace

TEST_CASE("config parses a full file with defaults for the rest") {
  std::istringstream in(kSampleConfig);
  const auto cfg = friendly::parse_config(in);
  CHECK(cfg.data.kind == "two_moons");
  CHECK(cfg.data.n == 120);
  CHECK(cfg.model.kind == ClassifierKind::toy_2d);
  CHECK(cfg.model.hidden == std::vector<std::size_t>{16});
  CHECK(cfg.aux.hidden == 64);
  CHECK(cfg.run.regime == friendly::Regime::nft);
  CHECK(cfg.run.plan.gamma_max == 12);
  CHECK(cfg.run.plan.gamma_max_simp == 8);
  CHECK(cfg.run.plan.eta_max == 500.0);
  CHECK(cfg.run.ft_tau_max == 10);  // untouched default
  CHECK(cfg.precision == "f64");
}

TEST_CASE("unknown keys and sections are hard errors") {
  {
    std::istringstream in("[training]\nregime = ct\nalhpa = 0.1\n");
    CHECK_THROWS_WITH(friendly::parse_config(in),
                      Catch::Matchers::ContainsSubstring("training.alhpa"));
  }
  {
    std::istringstream in("[trainer]\nalpha = 0.1\n");
    CHECK_THROWS_AS(friendly::parse_config(in), friendly::Error);
  }
  {
    std::istringstream in("[training]\nalpha = 0.1\nalpha = 0.2\n");
    CHECK_THROWS_AS(friendly::parse_config(in), friendly::Error);
  }
}

TEST_CASE("config hash ignores formatting but tracks values") {
  std::istringstream a(kSampleConfig);
  const auto cfg_a = friendly::parse_config(a);
  std::string reordered = std::string("[schedule]\ngamma_max = 12\ngamma_max_simp = 8\n") +
                          "eta_max = 500\n[data]\nkind = two_moons\nn = 120\n" +
                          "noise_std = 0.1\nval_fraction = 0.2\ntest_fraction = 0.2\n" +
                          "[model]\nkind = toy_2d\nhidden = 16\n[aux]\nkind = fc_residual\n" +
                          "hidden = 64\n[training]\nregime = nft\nbatch_size = 16\n" +
                          "alpha = 0.01\nbeta = 0.001\nseed = 3\n[output]\n" +
                          "dir = /tmp/friendly_io_outdir\n";
  std::istringstream b(reordered);
  const auto cfg_b = friendly::parse_config(b);
  CHECK(cfg_a.config_hash() == cfg_b.config_hash());

  auto cfg_c = cfg_a;
  cfg_c.run.alpha = 0.02;
  CHECK(cfg_a.config_hash() != cfg_c.config_hash());
}

TEST_CASE("grid cells expand lexicographically with seeds innermost") {
  friendly::GridConfig grid;
  grid.eta_max = {500, 1000};
  grid.gamma_max_simp_frac = {0.25, 0.5};
  grid.beta = {1e-4};
  grid.seeds = {1, 2};
  const auto cells = friendly::expand_grid(grid);
  REQUIRE(cells.size() == 8);
  CHECK(cells[0].eta_max == 500);
  CHECK(cells[0].gamma_max_simp_frac == 0.25);
  CHECK(cells[0].seed == 1);
  CHECK(cells[1].seed == 2);
  CHECK(cells[1].cell_index == cells[0].cell_index);
  CHECK(cells[2].gamma_max_simp_frac == 0.5);
  CHECK(cells[4].eta_max == 1000);
  CHECK(cells.back().cell_index == 3);
}

TEST_CASE("grid fractions apply as rounded gamma_max multiples") {
  std::istringstream in(kSampleConfig);
  auto base = friendly::parse_config(in);
  friendly::GridCell cell;
  cell.eta_max = 2000;
  cell.gamma_max_simp_frac = 0.5;
  cell.beta = 5e-4;
  cell.seed = 9;
  const auto cfg = friendly::apply_cell(base, cell);
  CHECK(cfg.run.plan.gamma_max_simp == 6);  // round(0.5 * 12)
  CHECK(cfg.run.plan.eta_max == 2000);
  CHECK(cfg.run.beta == 5e-4);
  CHECK(cfg.run.seed == 9);
}

TEST_CASE("classifier checkpoints round-trip value-exactly") {
  ClassifierSpec spec;
  spec.kind = ClassifierKind::fc_b;
  spec.input_dim = 6;
  spec.class_count = 3;
  spec.sigma = 0.01;
  Classifier<double> model(spec, 77);
  // dirty the running stats so frozen state is exercised too
  model.params().get("fc1.bn.run_mean")[0] = 0.123456789123456789;

  TempFile f("model.ckpt");
  friendly::save_classifier_checkpoint(f.path, model, "deadbeef");
  auto loaded = friendly::load_classifier_checkpoint<double>(f.path);
  CHECK(loaded.spec().kind == spec.kind);
  CHECK(loaded.params().checksum() == model.params().checksum());
}

TEST_CASE("aux checkpoints round-trip and reject precision mismatches") {
  AuxNetSpec spec;
  spec.kind = AuxKind::fc_residual;
  spec.input_dim = 2;
  spec.hidden = 8;
  spec.residual = false;
  Auxiliary<double> aux(spec, 5);
  TempFile f("aux.ckpt");
  friendly::save_aux_checkpoint(f.path, aux, "-");
  auto loaded = friendly::load_aux_checkpoint<double>(f.path);
  CHECK(loaded.params().checksum() == aux.params().checksum());
  CHECK(loaded.spec().residual == false);
  CHECK_THROWS_AS(friendly::load_aux_checkpoint<float>(f.path), friendly::Error);
}

TEST_CASE("float models save and load under the f32 tag") {
  ClassifierSpec spec;
  spec.kind = ClassifierKind::toy_2d;
  spec.input_dim = 2;
  Classifier<float> model(spec, 3);
  TempFile f("model32.ckpt");
  friendly::save_classifier_checkpoint(f.path, model, "-");
  auto loaded = friendly::load_classifier_checkpoint<float>(f.path);
  CHECK(loaded.params().checksum() == model.params().checksum());
}

TEST_CASE("ndjson begins with a header and uses the record keys") {
  TempFile f("log.ndjson");
  {
    friendly::NdjsonWriter w(f.path, "cafe0123");
    friendly::EpochRecord rec;
    rec.gamma = 2;
    rec.eta = 1.5;
    rec.train_loss = 0.25;
    w.write(rec);
  }
  std::ifstream in(f.path);
  std::string header, line;
  REQUIRE(std::getline(in, header));
  REQUIRE(std::getline(in, line));
  const auto hj = nlohmann::json::parse(header);
  CHECK(hj["config_hash"] == "cafe0123");
  CHECK(hj["version"] == friendly::kVersion);
  const auto rj = nlohmann::json::parse(line);
  for (const char* key : {"gamma", "eta", "train_loss", "train_error", "val_error",
                          "test_error", "mean_delta_sq", "wall_ms"})
    CHECK(rj.contains(key));
  CHECK(rj["gamma"] == 2);
  CHECK(rj["eta"] == 1.5);
}

TEST_CASE("boundary export emits the exact lattice coordinates") {
  ClassifierSpec spec;
  spec.kind = ClassifierKind::toy_2d;
  spec.input_dim = 2;
  Classifier<double> model(spec, 9);
  TempFile f("boundary.csv");
  friendly::export_boundary_csv(f.path, "-", model, 3, -1.0, 1.0, -1.0, 1.0);
  std::ifstream in(f.path);
  std::string line;
  std::getline(in, line);  // hash header
  CHECK(line.rfind("# config_hash=", 0) == 0);
  std::getline(in, line);  // column header
  std::vector<std::pair<double, double>> pts;
  while (std::getline(in, line)) {
    double x1, x2;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf", &x1, &x2) == 2);
    pts.emplace_back(x1, x2);
  }
  REQUIRE(pts.size() == 9);
  CHECK(pts[0] == std::pair{-1.0, -1.0});
  CHECK(pts[4] == std::pair{0.0, 0.0});
  CHECK(pts[8] == std::pair{1.0, 1.0});
}

TEST_CASE("boundary export rejects non-2d models") {
  ClassifierSpec spec;
  spec.kind = ClassifierKind::fc_a;
  spec.input_dim = 5;
  Classifier<double> model(spec, 9);
  TempFile f("bad.csv");
  CHECK_THROWS_AS(friendly::export_boundary_csv(f.path, "-", model, 3, -1, 1, -1, 1),
                  friendly::Error);
}

TEST_CASE("points export with identity aux repeats the originals") {
  auto ds = friendly::gen_two_moons<double>(20, 0.1, 3);
  TempFile f("points.csv");
  friendly::export_points_csv<double>(f.path, "-", nullptr, ds);
  std::ifstream in(f.path);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    double o1, o2, d1, d2, s1, s2;
    int label;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%d", &o1, &o2, &d1, &d2,
                        &s1, &s2, &label) == 7);
    CHECK(d1 == 0.0);
    CHECK(d2 == 0.0);
    CHECK(s1 == o1);
    CHECK(s2 == o2);
    ++rows;
  }
  CHECK(rows == 20);
}

TEST_CASE("points export satisfies x plus delta equals x_tilde after parsing") {
  auto ds = friendly::gen_two_moons<double>(25, 0.1, 3);
  AuxNetSpec spec;
  spec.kind = AuxKind::fc_residual;
  spec.input_dim = 2;
  spec.residual = false;
  Auxiliary<double> aux(spec, 5);
  TempFile f("points2.csv");
  friendly::export_points_csv(f.path, "-", &aux, ds);
  std::ifstream in(f.path);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::size_t rows = 0;
  bool any_nonzero = false;
  while (std::getline(in, line)) {
    double o1, o2, d1, d2, s1, s2;
    int label;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%d", &o1, &o2, &d1, &d2,
                        &s1, &s2, &label) == 7);
    CHECK(o1 + d1 == s1);
    CHECK(o2 + d2 == s2);
    any_nonzero = any_nonzero || d1 != 0.0 || d2 != 0.0;
    ++rows;
  }
  CHECK(rows == 25);
  CHECK(any_nonzero);
}

TEST_CASE("perturbation export: exact identity, normalized range, k handling") {
  auto ds = friendly::gen_two_moons<double>(12, 0.1, 3);
  AuxNetSpec spec;
  spec.kind = AuxKind::fc_residual;
  spec.input_dim = 2;
  spec.residual = false;
  Auxiliary<double> aux(spec, 5);

  TempFile f("pert.csv");
  bool clamped = false;
  friendly::export_perturbations_csv(f.path, "-", aux, ds, 100, 1, &clamped);
  CHECK(clamped);  // k > n was clamped

  std::ifstream in(f.path);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::map<std::string, std::vector<std::vector<double>>> rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    std::getline(ls, tok, ',');
    std::getline(ls, tok, ',');
    std::string tag;
    std::getline(ls, tag, ',');
    std::vector<double> vals;
    while (std::getline(ls, tok, ',')) vals.push_back(std::stod(tok));
    rows[tag].push_back(vals);
  }
  REQUIRE(rows["x"].size() == 12);
  REQUIRE(rows["delta"].size() == 12);
  REQUIRE(rows["xtilde"].size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(rows["x"][i][j] + rows["delta"][i][j] == rows["xtilde"][i][j]);
      CHECK(rows["delta_norm"][i][j] >= 0.0);
      CHECK(rows["delta_norm"][i][j] <= 1.0);
    }
  }

  TempFile f0("pert0.csv");
  friendly::export_perturbations_csv(f0.path, "-", aux, ds, 0, 1);
  std::ifstream in0(f0.path);
  std::size_t lines = 0;
  while (std::getline(in0, line)) ++lines;
  CHECK(lines == 2);  // hash header + column header only
}
