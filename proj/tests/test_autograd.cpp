#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ladiff/autograd.hpp"
#include "ladiff/error.hpp"
#include "ladiff/nn.hpp"
#include "ladiff/optim.hpp"
#include "support.hpp"

#include <cmath>
#include <vector>

using namespace ladiff;
using ag::Matrix;
using ag::ParameterStore;
using ag::Tape;
using ag::Var;
using testing::GradProbe;
using testing::gradient_check;
using testing::max_error;
using testing::random_matrix;

namespace {

struct Fixture {
  ParameterStore<double> store;
  Rng rng{42};
  ag::Parameter<double>* a;
  ag::Parameter<double>* b;
  ag::Parameter<double>* row;

  Fixture() {
    a = &store.create("a", 3, 4);
    b = &store.create("b", 3, 4);
    row = &store.create("row", 1, 4);
    a->value = random_matrix(3, 4, rng);
    b->value = random_matrix(3, 4, rng);
    row->value = random_matrix(1, 4, rng);
  }

  // Projects an op output onto a fixed random direction so every entry of
  // the gradient is exercised.
  Var project(Tape<double>& t, Var x) {
    Rng r(7);
    const auto& v = t.value(x);
    return t.sum(t.mul(x, t.constant(random_matrix(v.rows(), v.cols(), r))));
  }

  void check(const std::function<Var(Tape<double>&, Var, Var, Var)>& op, double tol = 1e-6) {
    auto probes = gradient_check(
        store, [&](Tape<double>& t) { return project(t, op(t, t.param(*a), t.param(*b), t.param(*row))); }, 0, rng);
    CHECK(max_error(probes) < tol);
  }
};

}  // namespace

TEST_CASE("elementwise and broadcast ops have correct gradients") {
  Fixture f;
  f.check([](Tape<double>& t, Var a, Var b, Var) { return t.add(a, b); });
  f.check([](Tape<double>& t, Var a, Var b, Var) { return t.sub(a, b); });
  f.check([](Tape<double>& t, Var a, Var b, Var) { return t.mul(a, b); });
  f.check([](Tape<double>& t, Var a, Var, Var r) { return t.add_row(a, r); });
  f.check([](Tape<double>& t, Var a, Var, Var r) { return t.mul_row(a, r); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.scale(a, 0.3); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.add_scalar(a, 2.0); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.exp(a); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.square(a); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.gelu(a); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.silu(a); });
  f.check([](Tape<double>& t, Var, Var, Var r) { return t.broadcast_rows(r, 5); });
}

TEST_CASE("matrix products and shape ops have correct gradients") {
  Fixture f;
  f.check([](Tape<double>& t, Var a, Var b, Var) { return t.matmul(a, t.transpose(b)); });
  f.check([](Tape<double>& t, Var a, Var b, Var) { return t.matmul_nt(a, b); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.slice_rows(a, 1, 2); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.slice_cols(a, 1, 2); });
  f.check([](Tape<double>& t, Var a, Var b, Var) {
    const Var parts[] = {a, b};
    return t.concat_rows(parts);
  });
  f.check([](Tape<double>& t, Var a, Var b, Var) {
    const Var parts[] = {a, b};
    return t.concat_cols(parts);
  });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.mean_rows(a); });
}

TEST_CASE("normalizations, softmax and losses have correct gradients") {
  Fixture f;
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.softmax_rows(a); });
  f.check([](Tape<double>& t, Var a, Var, Var r) { return t.layer_norm(a, r, t.scale(r, 0.5)); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.normalize_rows(a); });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.clamp(a, -0.5, 0.5); });
  f.check([](Tape<double>& t, Var a, Var b, Var) { return t.mse(a, b); });
  f.check([](Tape<double>& t, Var a, Var, Var) {
    const int targets[] = {0, 3, 1};
    return t.cross_entropy_rows(a, targets);
  });
  f.check([](Tape<double>& t, Var a, Var, Var) { return t.mean(a); });
}

TEST_CASE("transformer blocks have correct gradients") {
  ParameterStore<double> store;
  Rng rng(3);
  auto enc = nn::make_encoder_layer(store, "enc", 8, 2, rng);
  auto dec = nn::make_decoder_layer(store, "dec", 8, 2, rng);
  const Matrix<double> x = random_matrix(5, 8, rng);
  const Matrix<double> mem = random_matrix(3, 8, rng);
  auto probes = gradient_check(
      store,
      [&](Tape<double>& t) {
        Var h = enc(t, t.constant(x));
        return t.mean(t.square(dec(t, h, t.constant(mem))));
      },
      0, rng);
  // Softmax ignores a shift shared by all keys of a query, so key biases get
  // a zero gradient and their central difference is pure round-off.
  std::vector<GradProbe> rest;
  int key_bias = 0;
  for (const auto& p : probes) {
    if (p.name.ends_with(".k.bias")) {
      ++key_bias;
      CHECK(std::abs(p.analytic) < 1e-12);
      CHECK(std::abs(p.numeric) < 1e-9);
    } else {
      rest.push_back(p);
    }
  }
  CHECK(key_bias == 3 * 8);
  CHECK(max_error(rest) < 1e-5);
}

TEST_CASE("values of basic ops match direct computation") {
  Tape<double> t;
  Matrix<double> a(2, 2);
  a << 1, 2, 3, 4;
  Var v = t.constant(a);
  CHECK(t.value(t.softmax_rows(v)).row(0).sum() == doctest::Approx(1.0));
  CHECK(t.scalar(t.sum(v)) == doctest::Approx(10.0));
  CHECK(t.scalar(t.mse(v, t.constant(Matrix<double>::Zero(2, 2)))) == doctest::Approx(7.5));
  CHECK(t.value(t.transpose(v))(0, 1) == 3.0);
  const auto ln = t.value(t.layer_norm(v, t.constant(Matrix<double>::Ones(1, 2)),
                                       t.constant(Matrix<double>::Zero(1, 2))));
  CHECK(ln.row(0).sum() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("parameter store rejects duplicates and checksums values") {
  ParameterStore<float> store;
  auto& p = store.create("w", 2, 2);
  CHECK_THROWS_AS(store.create("w", 1, 1), Error);
  const auto before = store.checksum();
  p.value(0, 0) = 1.0f;
  CHECK(store.checksum() != before);
  CHECK(store.scalar_count() == 4);
}

TEST_CASE("attention rejects a dimension not divisible by the head count") {
  ParameterStore<float> store;
  Rng rng(1);
  CHECK_THROWS_AS(nn::make_attention(store, "a", 10, 4, rng), Error);
}

TEST_CASE("attention weights are a distribution over memory rows") {
  ParameterStore<double> store;
  Rng rng(5);
  auto attn = nn::make_attention(store, "a", 8, 4, rng);
  Tape<double> t(false);
  Matrix<double> w;
  attn(t, t.constant(random_matrix(6, 8, rng)), t.constant(random_matrix(3, 8, rng)), &w);
  REQUIRE(w.rows() == 6);
  REQUIRE(w.cols() == 3);
  for (ag::Index r = 0; r < w.rows(); ++r) CHECK(w.row(r).sum() == doctest::Approx(1.0));
  CHECK(w.minCoeff() >= 0.0);
}

TEST_CASE("AdamW minimizes a quadratic") {
  ParameterStore<float> store;
  auto& p = store.create("x", 1, 3);
  p.value << 3.0f, -2.0f, 1.0f;
  AdamWSettings s;
  s.lr = 0.05;
  s.weight_decay = 0.0;
  AdamW<float> opt(store, s);
  for (int i = 0; i < 500; ++i) {
    store.zero_grad();
    Tape<float> t;
    t.backward(t.sum(t.square(t.param(p))));
    opt.step();
  }
  CHECK(p.value.norm() < 0.05f);
  CHECK(opt.steps_taken() == 500);
}

TEST_CASE("positional features distinguish frames and lengths") {
  const auto a = nn::frame_positional_features<double>(10, 16);
  const auto b = nn::frame_positional_features<double>(20, 16);
  CHECK(a.rows() == 10);
  CHECK((a.row(0) - a.row(1)).norm() > 1e-3);
  // Same absolute index, different relative phase.
  CHECK((a.row(5) - b.row(5)).norm() > 1e-3);
  const auto t1 = nn::timestep_embedding<double>(1, 16);
  const auto t2 = nn::timestep_embedding<double>(500, 16);
  CHECK((t1 - t2).norm() > 1e-3);
}
