// Copyright 2026 The CPR Sandbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "doctest.h"

#include "cpr/error.h"
#include "cpr/nn/checkpoint.h"
#include "cpr/nn/layers.h"
#include "cpr/nn/optim.h"
#include "cpr/nn/tape.h"
#include "cpr/rng.h"
#include "gradcheck.h"

using namespace cpr;
using namespace cpr::nn;
using namespace cpr::testing;

namespace {

void expect_ok(const NamedCheck& c) {
  INFO(c.name << " rel error " << c.check.rel_error << " over " << c.check.coordinates << " coordinates");
  CHECK(c.check.coordinates > 0);
  CHECK(c.check.rel_error < c.tolerance);
}

void expect_ok(const char* name, const GradCheck& g, double tol = 1e-4) { expect_ok(NamedCheck{name, g, tol}); }

}  // namespace

TEST_CASE("finite differences for every op") {
  const auto checks = op_gradient_suite();
  CHECK(checks.size() >= 36);
  for (const auto& c : checks) expect_ok(c);
}

TEST_CASE("stop_gradient blocks the backward pass") {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(2, 2, 3.0));
  const Var y = sum(square(stop_gradient(x)) + x);
  tape.backward(y);
  CHECK(tape.grad(x).isApprox(Matrix::Ones(2, 2)));
  CHECK(y.scalar() == doctest::Approx(48.0));
}

TEST_CASE("softmax rows") {
  Rng rng(3);
  Tape tape(false);
  const Var s = softmax_rows(tape.constant(random_matrix(50, 7, rng, -30, 30)));
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    CHECK(std::abs(s.value().row(r).sum() - 1.0) < 1e-12);
    CHECK(s.value().row(r).minCoeff() > 0.0);
  }
}

TEST_CASE("cross entropy closed forms") {
  Tape tape;
  const std::vector<int> targets{4, 7};
  const std::vector<double> mask{1.0, 1.0};
  const Var uniform = cross_entropy(tape.constant(Matrix::Zero(2, 10)), targets, mask);
  CHECK(std::abs(uniform.scalar() - std::log(10.0)) < 1e-12);

  Matrix dominant = Matrix::Zero(2, 10);
  dominant(0, 4) = 60.0;
  dominant(1, 7) = 60.0;
  CHECK(cross_entropy(tape.constant(dominant), targets, mask).scalar() < 1e-20);

  const std::vector<double> none{0.0, 0.0};
  CHECK(cross_entropy(tape.constant(Matrix::Zero(2, 10)), targets, none).scalar() == 0.0);
}

TEST_CASE("dense layer") {
  Rng rng(5);
  ParamTree params;
  params.add("d/w", Matrix::Identity(3, 3));
  params.add("d/b", Matrix::Zero(1, 3));
  Tape tape(false);
  tape.bind(params);
  const Matrix x = random_matrix(4, 3, rng);
  CHECK(Dense{"d", 3, 3}(tape, tape.constant(x)).value() == x);

  ParamTree random;
  Dense{"t", 3, 5, Activation::kTanh}.init(random, rng);
  Tape t2(false);
  t2.bind(random);
  const Matrix y = Dense{"t", 3, 5, Activation::kTanh}(t2, t2.constant(random_matrix(8, 3, rng, -3, 3))).value();
  CHECK(y.maxCoeff() < 1.0);
  CHECK(y.minCoeff() > -1.0);

  for (Activation act : {Activation::kIdentity, Activation::kTanh}) {
    const Dense layer{"t", 3, 5, act};
    expect_ok("dense", check_gradients([&](Tape& t, const auto& v) { return layer(t, v[0]); },
                                       {random_matrix(4, 3, rng)}, random));
  }
}

TEST_CASE("gru with zero parameters halves the state") {
  Rng rng(6);
  const GruCell cell{"g", 3, 5};
  ParamTree params;
  cell.init(params, rng);
  for (auto& [name, value] : params) value.setZero();
  Tape tape(false);
  tape.bind(params);
  const Matrix h = random_matrix(4, 5, rng);
  const Var next = cell(tape, tape.constant(random_matrix(4, 3, rng)), tape.constant(h));
  CHECK(next.rows() == 4);
  CHECK(next.cols() == 5);
  CHECK((next.value() - 0.5 * h).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gru bptt over five steps") { expect_ok(gru_bptt_check()); }

TEST_CASE("graph block") {
  Rng rng(8);
  const int p = 4;
  GraphBlock block;
  block.name = "gb";
  block.edge_in = 0;
  block.node_in = 3;
  block.global_in = 1;
  block.edge_sizes = {8, 8};
  block.node_sizes = {8, 4};
  block.global_sizes = {8, 2};
  block.node_memory = 6;
  block.linear_node_head = true;
  ParamTree params;
  block.init(params, rng);
  const auto index = GraphIndex::fully_connected(1, p);
  CHECK(index.num_edges() == p * (p - 1));

  const auto run = [&](const Matrix& nodes, const Matrix& globals, const Matrix& hidden) {
    Tape tape(false);
    tape.bind(params);
    GraphBatch g{tape.constant(nodes), Var{}, tape.constant(globals)};
    const auto out = block(tape, g, index, tape.constant(hidden));
    return std::make_tuple(Matrix(out.graph.nodes.value()), Matrix(out.graph.globals.value()),
                           Matrix(out.node_hidden.value()));
  };

  SUBCASE("identical nodes stay identical") {
    const Matrix nodes = Matrix::Constant(p, 3, 0.3);
    const auto [v, u, h] = run(nodes, Matrix::Constant(1, 1, 0.7), Matrix::Zero(p, 6));
    for (int i = 1; i < p; ++i) CHECK((v.row(i) - v.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("permutation equivariance") {
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix nodes = random_matrix(p, 3, rng);
      const Matrix hidden = random_matrix(p, 6, rng);
      const Matrix globals = random_matrix(1, 1, rng);
      std::vector<int> perm{0, 1, 2, 3};
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      Matrix pn(p, 3), ph(p, 6);
      for (int i = 0; i < p; ++i) {
        pn.row(i) = nodes.row(perm[i]);
        ph.row(i) = hidden.row(perm[i]);
      }
      const auto [v, u, h] = run(nodes, globals, hidden);
      const auto [pv, pu, phh] = run(pn, globals, ph);
      for (int i = 0; i < p; ++i) {
        CHECK((pv.row(i) - v.row(perm[i])).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((phh.row(i) - h.row(perm[i])).cwiseAbs().maxCoeff() < 1e-6);
      }
      CHECK((pu - u).cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  SUBCASE("single node graph feeds zeros to the node update") {
    const auto single = GraphIndex::fully_connected(1, 1);
    CHECK(single.num_edges() == 0);
    Tape tape(false);
    tape.bind(params);
    const Matrix nodes = random_matrix(1, 3, rng);
    GraphBatch g{tape.constant(nodes), Var{}, tape.constant(Matrix::Constant(1, 1, 0.5))};
    const auto out = block(tape, g, single);
    // Reference: GRU then node MLP on [0 (edge sum), v, u].
    Tape ref(false);
    ref.bind(params);
    Matrix input(1, 8 + 3 + 1);
    input << Matrix::Zero(1, 8), nodes, Matrix::Constant(1, 1, 0.5);
    const Var h = GruCell{"gb/node_gru", 12, 6}(ref, ref.constant(input), ref.constant(Matrix::Zero(1, 6)));
    const Var v = Mlp{"gb/node", 6, {8, 4}, Activation::kRelu, Activation::kIdentity}(ref, h);
    CHECK((out.graph.nodes.value() - v.value()).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("gradients") {
    const auto fn = [&](Tape& tape, const std::vector<Var>& v) {
      GraphBatch g{v[0], Var{}, v[1]};
      const auto out = block(tape, g, index, v[2]);
      return concat_cols({reshape(out.graph.nodes, 1, p * 4), out.graph.globals});
    };
    expect_ok("graph block",
              check_gradients(fn, {random_matrix(p, 3, rng), random_matrix(1, 1, rng), random_matrix(p, 6, rng)},
                              params, 1e-6, 600));
  }
}

TEST_CASE("mlp gradients") {
  Rng rng(9);
  const Mlp mlp{"m", 4, {6, 5, 3}, Activation::kTanh, Activation::kIdentity};
  ParamTree params;
  mlp.init(params, rng);
  CHECK(mlp.out() == 3);
  expect_ok("mlp", check_gradients([&](Tape& t, const auto& v) { return mlp(t, v[0]); },
                                   {random_matrix(5, 4, rng)}, params));
}

TEST_CASE("adam") {
  SUBCASE("schedule") {
    const LrSchedule s{5e-4, 5e-6, 0.05, 1000};
    CHECK(s.at(0) == 5e-4);
    CHECK(std::abs(s.at(1000) - 5e-4 * 0.95) < 1e-15);
    CHECK(std::abs(s.at(500) - 5e-4 * std::pow(0.95, 0.5)) < 1e-15);
    CHECK(s.at(10000000) == 5e-6);
    CHECK(LrSchedule::Constant(1e-5).at(123456) == 1e-5);
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    ParamTree params;
    params.add("x", Matrix::Constant(2, 3, 1.5));
    const ParamTree before = params;
    auto opt = OptimizerState::For(params, LrSchedule{});
    for (int i = 0; i < 10; ++i) adam_step(opt, params, params.zeros_like());
    CHECK(params == before);
    CHECK(opt.step == 10);
  }
  SUBCASE("non-finite gradient") {
    ParamTree params;
    params.add("x", Matrix::Constant(1, 1, 1.0));
    ParamTree grads = params.zeros_like();
    grads.at("x")(0, 0) = std::nan("");
    auto opt = OptimizerState::For(params, LrSchedule{});
    const ParamTree before = params;
    try {
      adam_step(opt, params, grads);
      FAIL("expected NonFiniteGradient");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNonFiniteGradient);
    }
    CHECK(params == before);
    CHECK(opt.step == 0);
  }
  SUBCASE("quadratic bowl") {
    ParamTree params;
    params.add("theta", Matrix::Constant(1, 1, 1.0));
    auto opt = OptimizerState::For(params, LrSchedule::Constant(1e-2));
    std::vector<double> trace;
    for (int i = 0; i < 500; ++i) {
      ParamTree grads = params.zeros_like();
      grads.at("theta")(0, 0) = 2.0 * params.at("theta")(0, 0);
      adam_step(opt, params, grads);
      trace.push_back(std::abs(params.at("theta")(0, 0)));
    }
    // Monotone until the iterate reaches the step-size scale around the minimum.
    size_t k = 0;
    while (k + 1 < trace.size() && trace[k] > 0.05) {
      CHECK(trace[k + 1] < trace[k]);
      ++k;
    }
    CHECK(k > 10);
    CHECK(trace.back() < 0.05);
  }
  SUBCASE("clipping") {
    ParamTree g;
    g.add("a", Matrix::Constant(1, 1, 3.0));
    g.add("b", Matrix::Constant(1, 1, 4.0));
    CHECK(global_norm(g) == doctest::Approx(5.0));
    CHECK(clip_by_global_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(global_norm(g) == doctest::Approx(1.0));
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(10);
  Checkpoint ckpt;
  ckpt.descriptor = {{"kind", "test"}, {"width", 3}};
  ckpt.step = 1234;
  ckpt.params.add("a", random_matrix(3, 4, rng, -1e6, 1e6));
  ckpt.params.add("b", random_matrix(1, 7, rng, -1e-300, 1e-300));
  ckpt.params.at("a")(0, 0) = 0.1;
  ckpt.optimizer = OptimizerState::For(ckpt.params, LrSchedule{});
  ckpt.optimizer->step = 9;
  ckpt.optimizer->m.at("a")(1, 1) = 0.25;

  const std::string bytes = serialize_checkpoint(ckpt);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.step == 1234);
  CHECK(back.descriptor == ckpt.descriptor);
  CHECK(back.params == ckpt.params);
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->step == 9);
  CHECK(back.optimizer->m == ckpt.optimizer->m);
  CHECK(serialize_checkpoint(back) == bytes);

  CHECK_NOTHROW(validate_shapes(ckpt.params, back.params));
  ParamTree other;
  other.add("a", Matrix::Zero(3, 4));
  other.add("b", Matrix::Zero(1, 6));
  try {
    validate_shapes(ckpt.params, other);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
  try {
    deserialize_checkpoint("garbage\n");
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMalformedRecord);
  }
}

TEST_CASE("forward passes are deterministic") {
  Rng a(11), b(11);
  ParamTree pa, pb;
  const GruCell cell{"g", 2, 4};
  cell.init(pa, a);
  cell.init(pb, b);
  CHECK(pa == pb);
  Tape t1(false), t2(false);
  t1.bind(pa);
  t2.bind(pb);
  const Matrix x = Matrix::Constant(3, 2, 0.4);
  const Matrix h = Matrix::Constant(3, 4, -0.1);
  CHECK(cell(t1, t1.constant(x), t1.constant(h)).value() == cell(t2, t2.constant(x), t2.constant(h)).value());
}
