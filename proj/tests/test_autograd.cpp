#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "mednca/nca.hpp"
#include "mednca/pipeline.hpp"
#include "mednca/rng.hpp"
#include "mednca/tape.hpp"

using namespace mednca;

namespace {

Tensor<double> randn(std::vector<i64> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (i64 i = 0; i < t.size(); ++i) t[i] = scale * rng.gaussian();
  return t;
}

Tensor<double> rand_binary(std::vector<i64> shape, std::uint64_t seed) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (i64 i = 0; i < t.size(); ++i) t[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

// Registers the leaves as tape parameters, builds the graph, returns the loss
// value; optionally also the analytic gradients.
using GraphBuilder = std::function<int(Tape<double>&, const std::vector<int>&)>;

double eval_graph(const std::vector<Tensor<double>>& leaves, const GraphBuilder& build,
                  std::vector<Tensor<double>>* grads = nullptr) {
  Tape<double> tape;
  std::vector<int> ids;
  ids.reserve(leaves.size());
  for (const auto& t : leaves) ids.push_back(tape.parameter(t));
  const int loss = build(tape, ids);
  const double v = tape.value(loss)[0];
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (int id : ids) {
      const Tensor<double>& g = tape.grad(id);
      grads->push_back(g.empty() ? Tensor<double>(tape.value(id).shape(), 0.0) : g);
    }
  }
  return v;
}

// Central finite differences against the analytic gradient, every element.
void gradcheck(std::vector<Tensor<double>> leaves, const GraphBuilder& build,
               double eps = 1e-5, double tol = 1e-6) {
  std::vector<Tensor<double>> grads;
  eval_graph(leaves, build, &grads);
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    for (i64 j = 0; j < leaves[p].size(); ++j) {
      const double orig = leaves[p][j];
      leaves[p][j] = orig + eps;
      const double fp = eval_graph(leaves, build);
      leaves[p][j] = orig - eps;
      const double fm = eval_graph(leaves, build);
      leaves[p][j] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double g = grads[p][j];
      const double scale = std::max({1.0, std::abs(fd), std::abs(g)});
      INFO("leaf " << p << " elem " << j << " fd=" << fd << " analytic=" << g);
      REQUIRE(std::abs(fd - g) <= tol * scale);
    }
  }
}

}  // namespace

TEST_CASE("sum gradient is all ones") {
  Tape<double> tape;
  int x = tape.parameter(randn({2, 3, 4}, 1));
  int s = tape.sum(x);
  tape.backward(s);
  const Tensor<double>& g = tape.grad(x);
  REQUIRE(g.size() == 24);
  for (i64 i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("sum-of-squares gradient is exactly 2x") {
  Tape<double> tape;
  Tensor<double> xv = randn({1, 2, 5}, 2);
  int x = tape.parameter(xv);
  int s = tape.sum(tape.mul(x, x));
  tape.backward(s);
  const Tensor<double>& g = tape.grad(x);
  for (i64 i = 0; i < g.size(); ++i) CHECK(g[i] == Catch::Approx(2.0 * xv[i]).margin(1e-14));
}

TEST_CASE("gradcheck: conv3x3_reflect wrt input, weight and bias") {
  std::vector<Tensor<double>> leaves = {
      randn({2, 4, 5}, 10, 0.5),        // input
      randn({3, 2, 3, 3}, 11, 0.5),     // weight
      randn({3}, 12, 0.5),              // bias
  };
  gradcheck(leaves, [](Tape<double>& t, const std::vector<int>& ids) {
    int y = t.conv3x3_reflect(ids[0], ids[1], ids[2]);
    return t.sum(t.mul(y, y));
  });
}

TEST_CASE("gradcheck: dense_per_cell with and without bias") {
  std::vector<Tensor<double>> leaves = {
      randn({3, 3, 4}, 20, 0.5),
      randn({4, 3}, 21, 0.5),
      randn({4}, 22, 0.5),
  };
  gradcheck(leaves, [](Tape<double>& t, const std::vector<int>& ids) {
    int y = t.dense_per_cell(ids[0], ids[1], ids[2]);
    return t.sum(t.mul(y, y));
  });
  gradcheck(leaves, [](Tape<double>& t, const std::vector<int>& ids) {
    int y = t.dense_per_cell(ids[0], ids[1], Tape<double>::kNoId);
    return t.sum(t.mul(y, y));
  });
}

TEST_CASE("gradcheck: relu away from the kink") {
  Tensor<double> x = randn({2, 3, 3}, 30);
  for (i64 i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) < 0.1) x[i] = x[i] < 0 ? -0.1 : 0.1;
  gradcheck({x}, [](Tape<double>& t, const std::vector<int>& ids) {
    int y = t.relu(ids[0]);
    return t.sum(t.mul(y, y));
  });
}

TEST_CASE("gradcheck: sigmoid, dice and bce losses") {
  Tensor<double> logits = randn({1, 3, 4}, 40);
  Tensor<double> target = rand_binary({1, 3, 4}, 41);
  gradcheck({logits}, [&](Tape<double>& t, const std::vector<int>& ids) {
    return t.dice_loss(t.sigmoid(ids[0]), target);
  });
  gradcheck({logits}, [&](Tape<double>& t, const std::vector<int>& ids) {
    return t.bce_loss(t.sigmoid(ids[0]), target);
  });
  // combined, as used in training
  gradcheck({logits}, [&](Tape<double>& t, const std::vector<int>& ids) {
    int p = t.sigmoid(ids[0]);
    return t.add(t.dice_loss(p, target), t.bce_loss(p, target));
  });
}

TEST_CASE("gradcheck: fire mask, add and concat") {
  std::vector<Tensor<double>> leaves = {randn({2, 4, 4}, 50), randn({2, 4, 4}, 51)};
  gradcheck(leaves, [](Tape<double>& t, const std::vector<int>& ids) {
    int m = t.mul_fire_mask(ids[0], 99, 3, 0.5);
    int s = t.add(ids[1], m);
    int z = t.concat_channels({s, m});
    return t.sum(t.mul(z, z));
  });
}

TEST_CASE("gradcheck: resampling, crop, channel ops") {
  Tensor<double> state = randn({3, 4, 4}, 60, 0.5);
  Tensor<double> image = randn({1, 8, 8}, 61, 0.3);
  Tensor<double> target = rand_binary({1, 3, 3}, 62);
  gradcheck({state}, [&](Tape<double>& t, const std::vector<int>& ids) {
    int up = t.resample_nearest(ids[0], 8, 8);
    up = t.set_channel0(up, image);
    int patch = t.crop(up, 2, 3, 3, 3);
    int logit = t.slice_channel(patch, 1);
    return t.bce_loss(t.sigmoid(logit), target);
  });
  gradcheck({randn({2, 4, 6}, 63)}, [](Tape<double>& t, const std::vector<int>& ids) {
    int lo = t.resample_average_area(ids[0], 2, 3);
    return t.sum(t.mul(lo, lo));
  });
}

TEST_CASE("gradcheck: one full NCA step wrt all parameters and the state") {
  NcaConfig cfg;
  cfg.n = 3;
  cfg.h = 5;
  cfg.steps = 1;
  Tensor<double> target = rand_binary({1, 4, 4}, 70);
  std::vector<Tensor<double>> leaves = {
      randn({3, 4, 4}, 71, 0.5),      // state
      randn({3, 3, 3, 3}, 72, 0.3),   // conv1_w
      randn({3}, 73, 0.3),            // conv1_b
      randn({3, 3, 3, 3}, 74, 0.3),   // conv2_w
      randn({3}, 75, 0.3),            // conv2_b
      randn({5, 9}, 76, 0.3),         // dense1_w
      randn({5}, 77, 0.3),            // dense1_b
      randn({3, 5}, 78, 0.3),         // dense2_w
  };
  gradcheck(leaves, [&](Tape<double>& t, const std::vector<int>& ids) {
    BackboneIds p{ids[1], ids[2], ids[3], ids[4], ids[5], ids[6], ids[7]};
    int s = nca_step_tape(t, ids[0], p, cfg, 5, 0);
    int prob = t.sigmoid(t.slice_channel(s, 1));
    return t.add(t.dice_loss(prob, target), t.bce_loss(prob, target));
  });
}

TEST_CASE("gradcheck: full two-stage train_step against finite differences") {
  NcaConfig cfg;
  cfg.n = 4;
  cfg.h = 8;
  cfg.steps = 2;
  MedNcaModel<double> model = make_model<double>(cfg, 4, 7).cast<double>();
  // untrained dense2 is zero; nudge every parameter so all paths carry signal
  Rng nudge(123);
  model.for_each_param([&](Tensor<double>& t) {
    for (i64 i = 0; i < t.size(); ++i) t[i] += 0.05 * nudge.gaussian();
  });

  std::vector<TrainSample<double>> batch;
  for (int k = 0; k < 2; ++k) {
    TrainSample<double> s;
    s.image = Tensor<double>({1, 8, 8});
    Rng rng(500 + k);
    for (i64 i = 0; i < s.image.size(); ++i) s.image[i] = rng.uniform(0.0, 1.0);
    s.mask = rand_binary({1, 8, 8}, 600 + k);
    batch.push_back(std::move(s));
  }
  const std::uint64_t seed = 42;
  auto [loss, grads] = train_step(model, batch, seed);
  REQUIRE(std::isfinite(loss));

  std::vector<Tensor<double>*> params, analytic;
  model.for_each_param([&](Tensor<double>& t) { params.push_back(&t); });
  grads.for_each([&](Tensor<double>& t) { analytic.push_back(&t); });
  REQUIRE(params.size() == 14);

  const double eps = 1e-5;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& t = *params[p];
    // probe first, middle and last element of every parameter tensor
    for (i64 j : {i64(0), t.size() / 2, t.size() - 1}) {
      const double orig = t[j];
      t[j] = orig + eps;
      const double fp = train_step(model, batch, seed).first;
      t[j] = orig - eps;
      const double fm = train_step(model, batch, seed).first;
      t[j] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double g = (*analytic[p])[j];
      INFO("param " << p << " elem " << j << " fd=" << fd << " analytic=" << g);
      REQUIRE(std::abs(fd - g) <= 1e-6 * std::max({1.0, std::abs(fd), std::abs(g)}));
    }
  }
}

TEST_CASE("backward rejects non-scalar and off-tape losses") {
  Tape<double> tape;
  int x = tape.parameter(randn({1, 2, 2}, 80));
  CHECK_THROWS(tape.backward(x));        // not a scalar
  CHECK_THROWS(tape.backward(999));      // not on the tape
  CHECK_THROWS(tape.backward(-1));
}

TEST_CASE("gradients are zero for parameters the loss does not depend on") {
  Tape<double> tape;
  int x = tape.parameter(randn({1, 2, 2}, 81));
  int unused = tape.parameter(randn({1, 2, 2}, 82));
  int s = tape.sum(tape.mul(x, x));
  tape.backward(s);
  CHECK(tape.grad(unused).empty());
  CHECK_FALSE(tape.grad(x).empty());
}

TEST_CASE("bce gradient is zero inside the clamp region") {
  // a huge logit saturates sigmoid past the clamp; its gradient must vanish
  Tape<double> tape;
  int x = tape.parameter(Tensor<double>({1, 1, 2}, {40.0, 0.3}));
  Tensor<double> target({1, 1, 2}, {0.0, 1.0});
  int loss = tape.bce_loss(tape.sigmoid(x), target);
  tape.backward(loss);
  const Tensor<double>& g = tape.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] != 0.0);
}
