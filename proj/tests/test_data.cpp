#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "friendly/data.hpp"

using friendly::Dataset;
using friendly::Split;
using friendly::Tensor;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/friendly_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("noiseless two moons lie exactly on the two arcs") {
  const auto ds = friendly::gen_two_moons<double>(4, 0.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = ds.X.at2(i, 0), y = ds.X.at2(i, 1);
    if (ds.y[i] == 0) {
      CHECK(std::fabs(std::hypot(x, y) - 1.0) < 1e-12);
      CHECK(y >= -1e-12);
    } else {
      CHECK(std::fabs(std::hypot(x - 1.0, y - 0.5) - 1.0) < 1e-12);
      CHECK(y <= 0.5 + 1e-12);
    }
  }
}

TEST_CASE("two moons are balanced at n=300") {
  const auto ds = friendly::gen_two_moons<double>(300, 0.1, 5);
  std::size_t c0 = 0;
  for (int y : ds.y) c0 += y == 0;
  CHECK(c0 == 150);
  CHECK(ds.size() - c0 == 150);
}

TEST_CASE("two moons are seed-deterministic") {
  const auto a = friendly::gen_two_moons<double>(50, 0.2, 42);
  const auto b = friendly::gen_two_moons<double>(50, 0.2, 42);
  const auto c = friendly::gen_two_moons<double>(50, 0.2, 43);
  CHECK(bit_equal(a.X, b.X));
  CHECK_FALSE(bit_equal(a.X, c.X));
}

TEST_CASE("two moons reject degenerate sizes") {
  CHECK_THROWS_AS(friendly::gen_two_moons<double>(1, 0.1, 1), friendly::Error);
  CHECK_THROWS_AS(friendly::gen_two_moons<double>(10, -0.1, 1), friendly::Error);
}

TEST_CASE("well-separated blobs are solved by the nearest-centre oracle") {
  const double noise = 0.5, separation = 10.0;  // ratio 20
  const auto ds = friendly::gen_blobs<double>(1000, 5, 3, separation, noise, 9);
  // nearest-centre oracle: estimate centres as per-class means
  std::vector<std::vector<double>> centers(3, std::vector<double>(5, 0.0));
  std::vector<std::size_t> counts(3, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) centers[ds.y[i]][j] += ds.X.at2(i, j);
    ++counts[ds.y[i]];
  }
  for (int c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 5; ++j) centers[c][j] /= static_cast<double>(counts[c]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 3; ++c) {
      double d = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double diff = ds.X.at2(i, j) - centers[c][j];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == ds.y[i];
  }
  CHECK(correct == ds.size());
}

TEST_CASE("blobs with zero noise have zero intra-cluster variance") {
  const auto ds = friendly::gen_blobs<double>(40, 3, 4, 5.0, 0.0, 3);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t k = 0; k < ds.size(); ++k)
      if (ds.y[i] == ds.y[k])
        for (std::size_t j = 0; j < 3; ++j) CHECK(ds.X.at2(i, j) == ds.X.at2(k, j));
}

TEST_CASE("blobs are seed-deterministic and validate input") {
  const auto a = friendly::gen_blobs<double>(60, 4, 2, 6.0, 1.0, 7);
  const auto b = friendly::gen_blobs<double>(60, 4, 2, 6.0, 1.0, 7);
  CHECK(bit_equal(a.X, b.X));
  CHECK_THROWS_AS(friendly::gen_blobs<double>(60, 4, 1, 6.0, 1.0, 7), friendly::Error);
  CHECK_THROWS_AS(friendly::gen_blobs<double>(60, 4, 2, -1.0, 1.0, 7), friendly::Error);
}

TEST_CASE("label noise p=0 changes nothing") {
  const auto ds = friendly::gen_two_moons<double>(100, 0.1, 1);
  const auto noisy = friendly::inject_label_noise(ds, 0.0, 2);
  CHECK(noisy.y == ds.y);
  CHECK(noisy.noise_log.empty());
}

TEST_CASE("label noise p=1 with two classes flips every train label") {
  auto ds = friendly::gen_two_moons<double>(50, 0.1, 1);
  const auto orig = ds.y;
  const auto noisy = friendly::inject_label_noise(std::move(ds), 1.0, 2);
  for (std::size_t i = 0; i < noisy.size(); ++i) CHECK(noisy.y[i] == 1 - orig[i]);
}

TEST_CASE("label noise flips exactly round(p*n_train) labels") {
  auto ds = friendly::gen_blobs<double>(1000, 3, 4, 8.0, 1.0, 4);
  const auto orig = ds.y;
  const auto noisy = friendly::inject_label_noise(std::move(ds), 0.1, 5);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) diff += noisy.y[i] != orig[i];
  CHECK(diff == 100);
  CHECK(noisy.noise_log.size() == 100);
}

TEST_CASE("label noise never touches val or test and is recoverable") {
  auto ds = friendly::gen_blobs<double>(300, 3, 3, 8.0, 1.0, 4);
  friendly::assign_splits(ds, 0.2, 0.2, 9);
  const auto orig = ds.y;
  auto noisy = friendly::inject_label_noise(std::move(ds), 0.5, 5);
  for (std::size_t i = 0; i < noisy.size(); ++i)
    if (noisy.split[i] != Split::train) CHECK(noisy.y[i] == orig[i]);
  // pristine labels recoverable from the noise log
  for (const auto& [idx, old] : noisy.noise_log) {
    CHECK(noisy.split[idx] == Split::train);
    CHECK(noisy.y[idx] != old);
    noisy.y[idx] = old;
  }
  CHECK(noisy.y == orig);
}

TEST_CASE("amat round-trips a two-line synthetic file exactly") {
  TempFile f("roundtrip.amat");
  {
    std::ofstream out(f.path);
    out << "0.5 0.25 1\n";
    out << "0.125 1.0 0\n";
  }
  const auto ds = friendly::load_amat<double>(f.path, 2);
  REQUIRE(ds.size() == 2);
  CHECK(ds.X.at2(0, 0) == 0.5);
  CHECK(ds.X.at2(0, 1) == 0.25);
  CHECK(ds.y[0] == 1);
  CHECK(ds.X.at2(1, 0) == 0.125);
  CHECK(ds.y[1] == 0);
}

TEST_CASE("amat save then load is value-exact") {
  const auto ds = friendly::gen_two_moons<double>(30, 0.3, 17);
  TempFile f("save.amat");
  friendly::save_amat(ds, f.path);
  const auto back = friendly::load_amat<double>(f.path, 2);
  std::size_t warn = 0;
  (void)warn;
  REQUIRE(back.size() == ds.size());
  CHECK(bit_equal(back.X, ds.X));
  CHECK(back.y == ds.y);
}

TEST_CASE("amat rejects empty files and bad field counts") {
  TempFile empty("empty.amat");
  { std::ofstream out(empty.path); }
  CHECK_THROWS_AS(friendly::load_amat<double>(empty.path, 784), friendly::Error);

  TempFile short784("short.amat");
  {
    std::ofstream out(short784.path);
    for (int i = 0; i < 784; ++i) out << "0.1 ";
    out << "\n";
  }
  try {
    friendly::load_amat<double>(short784.path, 784);
    FAIL("expected a field-count error");
  } catch (const friendly::Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 1") != std::string::npos);
    CHECK(msg.find("784") != std::string::npos);
  }
}

TEST_CASE("amat counts out-of-range feature values") {
  TempFile f("range.amat");
  {
    std::ofstream out(f.path);
    out << "0.5 1.5 0\n";
    out << "-0.25 0.5 1\n";
  }
  std::size_t warn = 0;
  const auto ds = friendly::load_amat<double>(f.path, 2, &warn);
  CHECK(ds.size() == 2);
  CHECK(warn == 2);
}

TEST_CASE("batch plan of 10 with size 3 gives sizes 3,3,3,1") {
  std::vector<std::size_t> pool(10);
  for (std::size_t i = 0; i < 10; ++i) pool[i] = i;
  const auto plan = friendly::make_batch_plan(pool, 3, 1, 1, 2);
  REQUIRE(plan.n_batches() == 4);
  CHECK(plan.batch(0).size() == 3);
  CHECK(plan.batch(1).size() == 3);
  CHECK(plan.batch(2).size() == 3);
  CHECK(plan.batch(3).size() == 1);
}

TEST_CASE("batches partition the index pool") {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < 103; ++i) pool.push_back(i * 2);
  const auto plan = friendly::make_batch_plan(pool, 8, 3, 5, 2);
  std::set<std::size_t> seen;
  for (std::size_t b = 0; b < plan.n_batches(); ++b)
    for (std::size_t i : plan.batch(b)) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 103);
}

TEST_CASE("batch permutation is keyed by seed, epoch and phase") {
  std::vector<std::size_t> pool(64);
  for (std::size_t i = 0; i < 64; ++i) pool[i] = i;
  const auto a = friendly::make_batch_plan(pool, 8, 1, 3, 2);
  const auto b = friendly::make_batch_plan(pool, 8, 1, 3, 2);
  const auto c = friendly::make_batch_plan(pool, 8, 1, 4, 2);
  const auto d = friendly::make_batch_plan(pool, 8, 1, 3, 1);
  CHECK(a.perm == b.perm);
  CHECK(a.perm != c.perm);
  CHECK(a.perm != d.perm);
}

TEST_CASE("oversized batch size degrades to a single batch") {
  std::vector<std::size_t> pool = {0, 1, 2};
  const auto plan = friendly::make_batch_plan(pool, 100, 1, 1, 2);
  CHECK(plan.n_batches() == 1);
  CHECK(plan.batch(0).size() == 3);
}

TEST_CASE("split_and_batch assigns a stable validation split") {
  auto ds = friendly::gen_two_moons<double>(120, 0.1, 1);
  const auto p1 = friendly::split_and_batch(ds, 0.25, 16, 1, 99);
  const auto val1 = ds.indices(Split::val);
  CHECK(val1.size() == 30);
  const auto p2 = friendly::split_and_batch(ds, 0.25, 16, 2, 99);
  CHECK(ds.indices(Split::val) == val1);  // split does not move across epochs
  CHECK(p1.perm != p2.perm);
  std::size_t covered = 0;
  for (std::size_t b = 0; b < p1.n_batches(); ++b) covered += p1.batch(b).size();
  CHECK(covered == 90);
}

TEST_CASE("assign_splits validates fractions") {
  auto ds = friendly::gen_two_moons<double>(20, 0.1, 1);
  CHECK_THROWS_AS(friendly::assign_splits(ds, 0.7, 0.5, 1), friendly::Error);
  CHECK_THROWS_AS(friendly::assign_splits(ds, -0.1, 0.0, 1), friendly::Error);
}
