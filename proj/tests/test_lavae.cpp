#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ladiff/error.hpp"
#include "ladiff/lavae.hpp"
#include "support.hpp"

#include <cmath>
#include <vector>

using namespace ladiff;
using namespace ladiff::vae;
using testing::random_frames;
using testing::random_matrix;

namespace {

const Matrix<double>* const kNoLatent = nullptr;

LaVaeConfig tiny_config() {
  LaVaeConfig c;
  c.channels = 6;
  c.max_frames = 40;
  c.frames_per_slot = 8;
  c.dim = 8;
  c.layers = 1;
  c.heads = 2;
  return c;
}

}  // namespace

TEST_CASE("activation count is the ceiling of f / r") {
  CHECK(activation_count(48, 48) == 1);
  CHECK(activation_count(49, 48) == 2);
  CHECK(activation_count(200, 48) == 5);
  CHECK(activation_count(1, 48) == 1);
  CHECK(activation_count(200, 48, 3) == 3);
  for (int f = 1; f < 200; ++f) CHECK(activation_count(f + 1, 48) >= activation_count(f, 48));
  CHECK_THROWS_AS(activation_count(0, 48), DomainError);
  CHECK_THROWS_AS(activation_count(10, 0), DomainError);
}

TEST_CASE("max slots and slots_for respect length awareness") {
  auto c = tiny_config();
  CHECK(c.max_slots() == 5);
  LaVaeModel<float> aware(c, 1);
  CHECK(aware.slots_for(8) == 1);
  CHECK(aware.slots_for(9) == 2);
  CHECK_THROWS_AS(aware.slots_for(41), LengthError);
  CHECK_THROWS_AS(aware.slots_for(0), LengthError);
  c.length_aware = false;
  LaVaeModel<float> fixed(c, 1);
  CHECK(fixed.slots_for(8) == 5);
}

TEST_CASE("invalid VAE configs are rejected") {
  auto c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = tiny_config();
  c.dvae_fraction = 1.5;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = tiny_config();
  c.frames_per_slot = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("encode yields k posteriors and decode yields f frames") {
  LaVaeModel<float> m(tiny_config(), 3);
  Rng rng(4);
  for (int f : {1, 8, 9, 23, 40}) {
    const auto post = m.encode(random_frames(f, 6, rng));
    CHECK(post.slots() == m.slots_for(f));
    CHECK(post.mu.cols() == 8);
    const auto out = m.decode(LatentCode<float>{post.mu}, f);
    CHECK(out.rows() == f);
    CHECK(out.cols() == 6);
  }
  CHECK_THROWS_AS(m.encode(random_frames(10, 5, rng)), ShapeError);
  CHECK_THROWS_AS(m.encode(random_frames(41, 6, rng)), LengthError);
}

TEST_CASE("decode rejects a slot count that does not match the length") {
  LaVaeModel<float> m(tiny_config(), 3);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int f = 1 + static_cast<int>(rng.index(40));
    const int k = 1 + static_cast<int>(rng.index(5));
    LatentCode<float> z{random_matrix(k, 8, rng).cast<float>()};
    if (k == m.slots_for(f)) {
      CHECK_NOTHROW(m.decode(z, f));
    } else {
      CHECK_THROWS_AS(m.decode(z, f), ShapeError);
    }
  }
  CHECK_THROWS_AS(m.decode(LatentCode<float>{Matrix<float>::Zero(1, 7)}, 5), ShapeError);
  CHECK_THROWS_AS(m.decode(LatentCode<float>{Matrix<float>::Zero(1, 8)}, 0), LengthError);
}

TEST_CASE("decode is bit-identical across calls and initialization is seeded") {
  LaVaeModel<float> a(tiny_config(), 9);
  LaVaeModel<float> b(tiny_config(), 9);
  LaVaeModel<float> c(tiny_config(), 10);
  CHECK(a.parameters().checksum() == b.parameters().checksum());
  CHECK(a.parameters().checksum() != c.parameters().checksum());
  Rng rng(1);
  LatentCode<float> z{random_matrix(3, 8, rng).cast<float>()};
  const auto first = a.decode(z, 20);
  CHECK(first == a.decode(z, 20));
  CHECK(first == b.decode(z, 20));
}

TEST_CASE("cross-attention maps are reported per layer with k columns") {
  auto cfg = tiny_config();
  cfg.layers = 2;
  LaVaeModel<float> m(cfg, 2);
  Rng rng(3);
  std::vector<Matrix<float>> maps;
  m.decode(LatentCode<float>{random_matrix(3, 8, rng).cast<float>()}, 20, &maps);
  REQUIRE(maps.size() == 2);
  for (const auto& w : maps) {
    CHECK(w.rows() == 20);
    CHECK(w.cols() == 3);
    for (Index r = 0; r < w.rows(); ++r) CHECK(w.row(r).sum() == doctest::Approx(1.0f).epsilon(1e-4));
  }
}

TEST_CASE("reparameterization scales noise by variance or standard deviation") {
  SubspacePosterior<double> post;
  post.mu = Matrix<double>::Constant(1, 20000, 0.5);
  post.log_var = Matrix<double>::Constant(1, 20000, std::log(0.25));
  Rng a(7);
  const auto zv = reparameterize(post, a, NoiseScale::variance);
  const double mean = zv.slots.mean();
  const double sd = std::sqrt((zv.slots.array() - mean).square().mean());
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sd == doctest::Approx(0.25).epsilon(0.03));
  Rng b(7);
  const auto zs = reparameterize(post, b, NoiseScale::std_dev);
  const double sd2 = std::sqrt((zs.slots.array() - zs.slots.mean()).square().mean());
  CHECK(sd2 == doctest::Approx(0.5).epsilon(0.03));
  post.log_var = Matrix<double>::Constant(1, 20000, -1000.0);
  Rng c(7);
  CHECK((reparameterize(post, c).slots.array() - 0.5).abs().maxCoeff() < 1e-6);
}

TEST_CASE("frame perturbation touches exactly floor(fraction F) frames") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int f = 1 + static_cast<int>(rng.index(200));
    const auto x = random_frames(f, 6, rng);
    CHECK(perturb_frames(x, 0.0, 0.5, rng) == x);
    CHECK(perturb_frames(x, 0.33, 0.0, rng) == x);
    const auto y = perturb_frames(x, 0.33, 0.5, rng);
    int changed = 0;
    for (Index r = 0; r < f; ++r) changed += (y.row(r) != x.row(r)) ? 1 : 0;
    CHECK(changed == static_cast<int>(std::floor(0.33 * f)));
  }
  const auto x = random_frames(10, 6, rng);
  CHECK(perturb_frames(x, 1.0, 0.5, rng).rows() == 10);
  CHECK_THROWS_AS(perturb_frames(x, -0.1, 0.5, rng), DomainError);
  CHECK_THROWS_AS(perturb_frames(x, 0.5, -1.0, rng), DomainError);
}

TEST_CASE("latent perturbation touches exactly floor(fraction k D) coordinates") {
  Rng rng(2);
  const Matrix<double> z = random_matrix(3, 8, rng);
  const auto y = perturb_latent(z, 0.5, 1.0, rng);
  CHECK(((y.array() != z.array()).count()) == 12);
  CHECK(perturb_latent(z, 0.0, 1.0, rng) == z);
}

TEST_CASE("KL term matches the closed form and vanishes at the prior") {
  Tape<double> t;
  Matrix<double> mu(1, 2), lv(1, 2);
  mu << 1.0, -2.0;
  lv << 0.0, std::log(4.0);
  // 0.5 * [(1 + 1 - 0 - 1) + (4 + 4 - ln 4 - 1)]
  const double expected = 0.5 * (1.0 + 7.0 - std::log(4.0));
  CHECK(t.scalar(kl_divergence(t, t.constant(mu), t.constant(lv))) == doctest::Approx(expected));
  CHECK(t.scalar(kl_divergence(t, t.constant(Matrix<double>::Zero(2, 3)), t.constant(Matrix<double>::Zero(2, 3)))) ==
        doctest::Approx(0.0));
}

TEST_CASE("value-form loss combines reconstruction and weighted KL") {
  corpus::Frames a = corpus::Frames::Zero(4, 2);
  corpus::Frames b = corpus::Frames::Constant(4, 2, 0.5f);
  SubspacePosterior<float> post{Matrix<float>::Constant(1, 2, 1.0f), Matrix<float>::Zero(1, 2)};
  const auto l = vae_loss(a, b, post, 0.1);
  CHECK(l.recon == doctest::Approx(0.25));
  CHECK(l.kl == doctest::Approx(1.0));
  CHECK(l.total == doctest::Approx(0.35));
  CHECK_THROWS_AS(vae_loss(a, corpus::Frames::Zero(3, 2), post, 0.1), ShapeError);
}

TEST_CASE("graph loss and decode agree with the value forms") {
  LaVaeModel<double> m(tiny_config(), 4);
  Rng rng(6);
  const Matrix<double> x = random_matrix(17, 6, rng);
  const int k = m.slots_for(17);
  const Matrix<double> noise = Matrix<double>::Zero(k, 8);
  Tape<double> t;
  const auto l = vae_loss(t, m, x, x, noise, kNoLatent, 0.01);
  const auto post = m.encode(x.cast<float>());
  const auto rec = m.decode(LatentCode<double>{post.mu}, 17);
  const auto ref = vae_loss(x.cast<float>(), rec, post, 0.01);
  CHECK(t.scalar(l.recon) == doctest::Approx(ref.recon).epsilon(1e-5));
  CHECK(t.scalar(l.kl) == doctest::Approx(ref.kl).epsilon(1e-5));
}

TEST_CASE("VAE loss gradients match finite differences") {
  LaVaeModel<double> m(tiny_config(), 12);
  Rng rng(13);
  const Matrix<double> x = random_matrix(19, 6, rng);
  const Matrix<double> input = perturb_frames(x.cast<float>(), 0.33, 0.1, rng).cast<double>();
  const Matrix<double> noise = random_matrix(m.slots_for(19), 8, rng);
  auto probes = testing::gradient_check(
      m.parameters(), [&](Tape<double>& t) { return vae_loss(t, m, x, input, noise, kNoLatent, 0.01).total; }, 100,
      rng);
  CHECK(probes.size() == 100);
  CHECK(testing::max_error(probes) < 1e-4);
}

TEST_CASE("training reduces the reconstruction loss") {
  auto cfg = tiny_config();
  cfg.dim = 16;
  cfg.dvae_fraction = 0.0;
  LaVaeModel<float> m(cfg, 5);
  Rng rng(8);
  std::vector<corpus::Frames> data;
  for (int i = 0; i < 24; ++i) {
    const int f = 5 + static_cast<int>(rng.index(35));
    corpus::Frames x(f, 6);
    const double phase = rng.uniform();
    for (int r = 0; r < f; ++r) {
      for (int c = 0; c < 6; ++c) x(r, c) = static_cast<float>(std::sin(0.3 * r + phase + c));
    }
    data.push_back(x);
  }
  TrainSettings s;
  s.epochs = 15;
  s.batch_size = 8;
  s.optimizer.lr = 3e-3;
  const auto log = train_vae(m, data, s, 21);
  REQUIRE(log.size() == 15);
  CHECK(log.back().recon < 0.5 * log.front().recon);
  CHECK_THROWS_AS(train_vae(m, std::span<const corpus::Frames>{}, s, 1), InsufficientDataError);
}

TEST_CASE("training stops at the step budget") {
  LaVaeModel<float> m(tiny_config(), 5);
  Rng rng(8);
  std::vector<corpus::Frames> data;
  for (int i = 0; i < 10; ++i) data.push_back(random_frames(12, 6, rng));
  TrainSettings s;
  s.epochs = 50;
  s.batch_size = 4;
  s.max_steps = 5;
  const auto log = train_vae(m, data, s, 3);
  CHECK(log.size() == 2);
}

TEST_CASE("epoch records format as whitespace-separated fields") {
  EpochRecord r{3, 0.5, 2.0, 0.6, 1.25};
  CHECK(format_epoch(r) == "3 0.5 2 0.6 1.250");
}
