#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "friendly/models.hpp"
#include "friendly/rng.hpp"
#include "friendly/tape.hpp"

namespace friendly {

struct GradCheckEntry {
  std::string name;
  double worst_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double threshold = 1e-4;

  bool ok() const {
    for (const auto& e : entries)
      if (!(e.worst_rel_err < threshold)) return false;
    return true;
  }
};

namespace gradcheck_detail {

using Builder = std::function<int(Tape<double>&, const std::vector<int>&)>;

inline double rel_err(double a, double b) {
  const double denom = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

/// Central finite differences against the tape gradient for one graph.
/// `build` receives leaves (all trainable) and must return a scalar root.
inline double check_graph(std::vector<Tensor<double>> inputs, const Builder& build,
                          double h = 1e-5) {
  Tape<double> tape;
  std::vector<int> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, /*requires_grad=*/true));
  const int root = build(tape, leaves);
  tape.backward(root);
  std::vector<Tensor<double>> analytic;
  for (int l : leaves) analytic.push_back(tape.grad(l));

  auto eval = [&](const std::vector<Tensor<double>>& in) {
    Tape<double> t2;
    std::vector<int> ls;
    for (const auto& t : in) ls.push_back(t2.leaf(t));
    return t2.value(build(t2, ls)).item();
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double keep = inputs[k][i];
      inputs[k][i] = keep + h;
      const double fp = eval(inputs);
      inputs[k][i] = keep - h;
      const double fm = eval(inputs);
      inputs[k][i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(fd, analytic[k][i]));
    }
  }
  return worst;
}

inline Tensor<double> rand_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Values with pairwise gaps well above the FD step, for kinked ops.
inline Tensor<double> spaced_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  auto perm = rng.permutation(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = 0.05 + 0.11 * static_cast<double>(perm[i]) + 0.001 * rng.uniform01();
  return t;
}

/// Values bounded away from the relu kink at zero.
inline Tensor<double> offzero_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.uniform01() < 0.5 ? -mag : mag;
  }
  return t;
}

}  // namespace gradcheck_detail

/// Finite-difference audit of every autodiff primitive plus both loss forms
/// (classification risk and the augmented simplification criterion). Each
/// primitive appears exactly once in the report.
inline GradCheckReport run_gradcheck(std::uint64_t seed, double threshold = 1e-4) {
  using namespace gradcheck_detail;
  GradCheckReport report;
  report.threshold = threshold;
  Rng rng = stream(seed, {0x6c});

  auto add = [&](const std::string& name, double err) {
    report.entries.push_back({name, err});
  };

  // reduce through sum-of-squares so upstream gradients are nontrivial
  auto ssq = [](Tape<double>& t, int v) { return t.sum(t.square(v)); };

  add("matmul", check_graph({rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)},
                            [&](Tape<double>& t, const std::vector<int>& l) {
                              return ssq(t, t.matmul(l[0], l[1]));
                            }));
  add("add", std::max(check_graph({rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)},
                                  [&](Tape<double>& t, const std::vector<int>& l) {
                                    return ssq(t, t.add(l[0], l[1]));
                                  }),
                      check_graph({rand_tensor({3, 4}, rng), rand_tensor({4}, rng)},
                                  [&](Tape<double>& t, const std::vector<int>& l) {
                                    return ssq(t, t.add(l[0], l[1]));
                                  })));
  add("sub", check_graph({rand_tensor({2, 5}, rng), rand_tensor({2, 5}, rng)},
                         [&](Tape<double>& t, const std::vector<int>& l) {
                           return ssq(t, t.sub(l[0], l[1]));
                         }));
  add("scale", check_graph({rand_tensor({2, 3}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& l) {
                             return ssq(t, t.scale(l[0], 2.75));
                           }));
  add("tanh", check_graph({rand_tensor({2, 4}, rng)},
                          [&](Tape<double>& t, const std::vector<int>& l) {
                            return ssq(t, t.tanh_fn(l[0]));
                          }));
  add("relu", check_graph({offzero_tensor({3, 4}, rng)},
                          [&](Tape<double>& t, const std::vector<int>& l) {
                            return ssq(t, t.relu(l[0]));
                          }));
  add("softmax", check_graph({rand_tensor({3, 5}, rng)},
                             [&](Tape<double>& t, const std::vector<int>& l) {
                               return ssq(t, t.softmax(l[0]));
                             }));
  add("conv2d", check_graph({rand_tensor({2, 2, 5, 5}, rng), rand_tensor({3, 2, 2, 2}, rng)},
                            [&](Tape<double>& t, const std::vector<int>& l) {
                              return ssq(t, t.conv2d(l[0], l[1]));
                            }));
  add("maxpool2d", check_graph({spaced_tensor({1, 2, 4, 4}, rng)},
                               [&](Tape<double>& t, const std::vector<int>& l) {
                                 return ssq(t, t.maxpool2d(l[0]));
                               }));
  add("pad2d", check_graph({rand_tensor({1, 2, 3, 3}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& l) {
                             return ssq(t, t.pad2d(l[0], 1));
                           }));
  add("upsample2d", check_graph({rand_tensor({1, 2, 3, 3}, rng)},
                                [&](Tape<double>& t, const std::vector<int>& l) {
                                  return ssq(t, t.upsample2d(l[0]));
                                }));
  {
    Tensor<double> rm({4}), rv = Tensor<double>::full({4}, 1.0);
    const double bn_train =
        check_graph({rand_tensor({6, 4}, rng), rand_tensor({4}, rng, 0.5, 1.5),
                     rand_tensor({4}, rng)},
                    [&](Tape<double>& t, const std::vector<int>& l) {
                      return ssq(t, t.batchnorm1d(l[0], l[1], l[2], &rm, &rv, true, false));
                    });
    Tensor<double> rm2 = rand_tensor({4}, rng);
    Tensor<double> rv2 = rand_tensor({4}, rng, 0.5, 2.0);
    const double bn_eval =
        check_graph({rand_tensor({6, 4}, rng), rand_tensor({4}, rng, 0.5, 1.5),
                     rand_tensor({4}, rng)},
                    [&](Tape<double>& t, const std::vector<int>& l) {
                      return ssq(t, t.batchnorm1d(l[0], l[1], l[2], &rm2, &rv2, false, false));
                    });
    add("batchnorm1d", std::max(bn_train, bn_eval));
  }
  add("dropout", check_graph({rand_tensor({4, 5}, rng)},
                             [&](Tape<double>& t, const std::vector<int>& l) {
                               return ssq(t, t.dropout(l[0], 0.4, true, 0xd20u));
                             }));
  add("square", check_graph({rand_tensor({3, 3}, rng)},
                            [&](Tape<double>& t, const std::vector<int>& l) {
                              return t.sum(t.square(l[0]));
                            }));
  add("sum", check_graph({rand_tensor({2, 3}, rng)},
                         [&](Tape<double>& t, const std::vector<int>& l) {
                           return t.sum(t.tanh_fn(l[0]));
                         }));
  add("mean", check_graph({rand_tensor({2, 3}, rng)},
                          [&](Tape<double>& t, const std::vector<int>& l) {
                            return t.mean(t.square(l[0]));
                          }));
  add("concat", check_graph({rand_tensor({2, 3}, rng), rand_tensor({2, 2}, rng)},
                            [&](Tape<double>& t, const std::vector<int>& l) {
                              return ssq(t, t.concat(l[0], l[1]));
                            }));
  add("reshape", check_graph({rand_tensor({2, 6}, rng)},
                             [&](Tape<double>& t, const std::vector<int>& l) {
                               return ssq(t, t.reshape(l[0], {3, 4}));
                             }));
  {
    const std::vector<int> labels = {1, 0, 2};
    add("cross_entropy", check_graph({rand_tensor({3, 3}, rng)},
                                     [&](Tape<double>& t, const std::vector<int>& l) {
                                       return t.cross_entropy(l[0], labels);
                                     }));
  }

  // Eq. 1 over a tiny tanh network, gradients with respect to all weights.
  {
    const Tensor<double> x = rand_tensor({4, 3}, rng);
    const std::vector<int> labels = {0, 1, 1, 0};
    add("ct_loss",
        check_graph({rand_tensor({3, 5}, rng), rand_tensor({5}, rng),
                     rand_tensor({5, 2}, rng), rand_tensor({2}, rng)},
                    [&](Tape<double>& t, const std::vector<int>& l) {
                      const int xv = t.leaf(x);
                      const int h = t.tanh_fn(t.add(t.matmul(xv, l[0]), l[1]));
                      const int logits = t.add(t.matmul(h, l[2]), l[3]);
                      return t.cross_entropy(logits, labels);
                    }));
  }

  // Eq. 4 with a residual auxiliary, gradients with respect to theta and w.
  {
    const Tensor<double> x = rand_tensor({4, 3}, rng);
    const std::vector<int> labels = {0, 1, 1, 0};
    const double eta = 3.0;
    auto nft_graph = [&, eta](Tape<double>& t, const std::vector<int>& l, bool penalty_only) {
      const int xv = t.leaf(x);
      const int ah = t.tanh_fn(t.add(t.matmul(xv, l[0]), l[1]));
      const int xt = t.add(t.add(t.matmul(ah, l[2]), l[3]), xv);
      const int h = t.tanh_fn(t.add(t.matmul(xt, l[4]), l[5]));
      const int logits = t.add(t.matmul(h, l[6]), l[7]);
      const int ce = t.cross_entropy(logits, labels);
      const int delta = t.sub(xt, xv);
      const int pen = t.scale(t.sum(t.square(delta)), eta / 4.0);
      return penalty_only ? pen : t.add(ce, pen);
    };
    std::vector<Tensor<double>> params = {
        rand_tensor({3, 6}, rng),  rand_tensor({6}, rng), rand_tensor({6, 3}, rng),
        rand_tensor({3}, rng),     rand_tensor({3, 5}, rng), rand_tensor({5}, rng),
        rand_tensor({5, 2}, rng),  rand_tensor({2}, rng)};
    add("nft_loss", check_graph(params, [&](Tape<double>& t, const std::vector<int>& l) {
          return nft_graph(t, l, false);
        }));
    add("nft_penalty", check_graph(params, [&](Tape<double>& t, const std::vector<int>& l) {
          return nft_graph(t, l, true);
        }));
  }

  return report;
}

}  // namespace friendly
