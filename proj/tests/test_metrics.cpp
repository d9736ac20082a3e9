#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ladiff/error.hpp"
#include "ladiff/metrics.hpp"

#include <Eigen/QR>

#include <cmath>
#include <limits>
#include <vector>

using namespace ladiff;
using namespace ladiff::eval;

namespace {

Features gaussian(Eigen::Index n, Eigen::Index d, double offset, Rng& rng) {
  Features f(n, d);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
  f.col(0).array() += offset;
  return f;
}

corpus::MotionSequence root_trajectory(const std::vector<double>& x, int fps) {
  corpus::MotionSequence m;
  m.fps = fps;
  m.frames = corpus::Frames::Zero(static_cast<Eigen::Index>(x.size()), corpus::kChannels);
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.frames(static_cast<Eigen::Index>(i), corpus::position_channel(corpus::kRoot, 0)) = static_cast<float>(x[i]);
  }
  return m;
}

}  // namespace

TEST_CASE("mm_dist is the mean matched Euclidean distance") {
  Features m(2, 2), t(2, 2);
  m << 0, 0, 3, 4;
  t << 3, 4, 3, 4;
  CHECK(mm_dist(m, t) == doctest::Approx(2.5));
  Features a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  CHECK(mm_dist(a, b) == doctest::Approx(5.0));
  CHECK_THROWS_AS(mm_dist(a, t), ShapeError);
}

TEST_CASE("fid of a set with itself is zero") {
  Rng rng(1);
  const Features a = gaussian(500, 8, 0.0, rng);
  CHECK(fid(a, a) < 1e-6);
  const Features small = gaussian(6, 8, 0.0, rng);
  CHECK(fid(small, small) < 1e-6);
}

TEST_CASE("fid of one-dimensional sets matches the scalar closed form") {
  Rng rng(2);
  const Features a = gaussian(300, 1, 0.5, rng) * 2.0;
  const Features b = gaussian(400, 1, -1.0, rng) * 0.7;
  auto moments = [](const Features& x) {
    const double m = x.mean();
    const double v = (x.array() - m).square().sum() / static_cast<double>(x.rows() - 1);
    return std::pair{m, std::sqrt(v)};
  };
  const auto [ma, sa] = moments(a);
  const auto [mb, sb] = moments(b);
  CHECK(fid(a, b) == doctest::Approx((ma - mb) * (ma - mb) + (sa - sb) * (sa - sb)).epsilon(1e-9));
}

TEST_CASE("fid of unit Gaussians offset by two is four") {
  Rng rng(3);
  const Features a = gaussian(10000, 4, 0.0, rng);
  const Features b = gaussian(10000, 4, 2.0, rng);
  CHECK(fid(a, b) == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("fid is symmetric and invariant to rotations and translations") {
  Rng rng(4);
  const Features a = gaussian(200, 5, 0.0, rng);
  Features b = gaussian(300, 5, 1.0, rng);
  b.col(2) *= 3.0;
  const double ab = fid(a, b);
  CHECK(fid(b, a) == doctest::Approx(ab).epsilon(1e-8));
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(5, 5, 0.0, rng)).householderQ();
  const Eigen::RowVectorXd shift = Eigen::RowVectorXd::Constant(5, 7.0);
  const Features ra = (a * q).rowwise() + shift;
  const Features rb = (b * q).rowwise() + shift;
  CHECK(fid(ra, rb) == doctest::Approx(ab).epsilon(1e-8));
  CHECK(fid(a * 2.0, b * 2.0) == doctest::Approx(4.0 * ab).epsilon(1e-8));
  CHECK_THROWS_AS(fid(a, gaussian(10, 4, 0.0, rng)), ShapeError);
  CHECK_THROWS_AS(fid(a.topRows(1), b), InsufficientDataError);
}

TEST_CASE("r_precision of random features is at chance") {
  Rng rng(5);
  const Features m = gaussian(10000, 8, 0.0, rng);
  const Features t = gaussian(10000, 8, 0.0, rng);
  const auto r = r_precision(m, t, rng);
  const double n = 312.0 * 32.0;
  const double expected[3] = {1.0 / 32, 2.0 / 32, 3.0 / 32};
  const double got[3] = {r.top1, r.top2, r.top3};
  for (int k = 0; k < 3; ++k) {
    const double sigma = std::sqrt(expected[k] * (1.0 - expected[k]) / n);
    CHECK(std::abs(got[k] - expected[k]) < 3.0 * sigma);
  }
}

TEST_CASE("r_precision is perfect for identical features and counts ties for the match") {
  Rng rng(6);
  const Features m = gaussian(64, 4, 0.0, rng);
  const auto r = r_precision(m, m, rng);
  CHECK(r.top1 == 1.0);
  const Features same = Features::Ones(64, 4);
  const auto tied = r_precision(same, same, rng);
  CHECK(tied.top1 == 1.0);
  CHECK_THROWS_AS(r_precision(m.topRows(31), m.topRows(31), rng), InsufficientDataError);
}

TEST_CASE("r_precision drops the trailing partial batch") {
  Rng rng(7);
  // 40 pairs: one batch of 32 is scored, 8 are dropped, so every score is a multiple of 1/32.
  const Features m = gaussian(40, 3, 0.0, rng);
  const Features t = gaussian(40, 3, 0.0, rng);
  const auto r = r_precision(m, t, rng);
  CHECK(std::abs(r.top3 * 32.0 - std::round(r.top3 * 32.0)) < 1e-12);
}

TEST_CASE("diversity pairs two disjoint random subsets") {
  Features f(4, 1);
  f << 0, 1, 3, 7;
  // With all four rows drawn, the result is the mean distance of one of the
  // three perfect matchings.
  const double matchings[3] = {(1.0 + 4.0) / 2.0, (3.0 + 6.0) / 2.0, (7.0 + 2.0) / 2.0};
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const double d = diversity(f, 2, rng);
    bool found = false;
    for (double m : matchings) found = found || std::abs(d - m) < 1e-12;
    CHECK(found);
  }
  const Features dup = Features::Constant(50, 3, 1.5);
  CHECK(diversity(dup, 25, rng) == 0.0);
  CHECK_THROWS_AS(diversity(f, 3, rng), InsufficientDataError);
}

TEST_CASE("paired distance averages row distances") {
  Features f(3, 2);
  f << 0, 0, 3, 4, 6, 8;
  const std::size_t a[] = {0, 1};
  const std::size_t b[] = {1, 2};
  CHECK(paired_distance(f, a, b) == doctest::Approx(5.0));
}

TEST_CASE("mmodality averages within-text diversity") {
  std::vector<Features> per_text;
  per_text.push_back(Features::Zero(10, 2));
  per_text.push_back(Features::Zero(10, 2));
  Rng rng(9);
  CHECK(mmodality(per_text, 2, 5, rng) == 0.0);
  Features spread(4, 1);
  spread << 0, 2, 4, 6;
  // Every perfect matching of {0, 2, 4, 6} has mean distance 2, 3 or 4.
  const std::vector<Features> one{spread};
  const double v = mmodality(one, 1, 2, rng);
  CHECK(v >= 2.0);
  CHECK(v <= 4.0);
  CHECK_THROWS_AS(mmodality(one, 2, 2, rng), InsufficientDataError);
}

TEST_CASE("dynamics of a constant-velocity root") {
  std::vector<double> x;
  for (int i = 0; i < 30; ++i) x.push_back(0.05 * i);
  const auto s = dynamics_stats(root_trajectory(x, 20));
  CHECK(s.avg_vel == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(s.avg_acc < 1e-3);
  CHECK(s.max_acc < 1e-3);
}

TEST_CASE("dynamics of a constant-acceleration root") {
  std::vector<double> x;
  const double dt = 0.1;
  for (int i = 0; i < 21; ++i) x.push_back(0.5 * 2.0 * (i * dt) * (i * dt));
  const auto s = dynamics_stats(root_trajectory(x, 10));
  CHECK(s.avg_acc == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(s.max_acc == doctest::Approx(2.0).epsilon(1e-3));
  // Mean of |x_i - x_{i-1}| / dt = 2 * dt * (i - 1/2) over i = 1..20.
  CHECK(s.avg_vel == doctest::Approx(2.0 * dt * 10.0).epsilon(1e-3));
  CHECK_THROWS_AS(dynamics_stats(root_trajectory({0.0, 1.0}, 10)), InsufficientDataError);
}

TEST_CASE("ci95 is 1.96 sd over root n") {
  const double v[] = {1.0, 2.0, 3.0, 4.0};
  const double sd = std::sqrt(5.0 / 3.0);
  CHECK(ci95(v) == doctest::Approx(1.96 * sd / 2.0));
  CHECK(mean(v) == doctest::Approx(2.5));
  const double one[] = {3.0};
  CHECK(std::isnan(ci95(one)));
}
