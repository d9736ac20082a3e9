#include "ladiff/metrics.hpp"

#include "ladiff/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace ladiff::eval {

namespace {

void require_pairs(const Features& a, const Features& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(fmt::format("{}: feature sets {}x{} and {}x{} differ", what, a.rows(), a.cols(), b.rows(),
                                 b.cols()));
  }
}

Eigen::MatrixXd covariance(const Features& x, const Eigen::RowVectorXd& mu) {
  const Eigen::MatrixXd centered = x.rowwise() - mu;
  return (centered.transpose() * centered) / static_cast<double>(std::max<Eigen::Index>(x.rows() - 1, 1));
}

void shrink(Eigen::MatrixXd& cov) {
  const double avg = cov.trace() / static_cast<double>(cov.rows());
  cov *= 1.0 - kFidShrinkage;
  cov.diagonal().array() += kFidShrinkage * avg;
}

// Eigenvalues of a symmetric PSD matrix; tiny negatives from round-off are
// clipped, anything clearly negative is reported.
Eigen::VectorXd psd_eigenvalues(const Eigen::MatrixXd& m, Eigen::MatrixXd* vectors, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError(fmt::format("fid: eigendecomposition of {} failed", what));
  Eigen::VectorXd ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (lo < -1e-6) {
    throw NumericalError(fmt::format("fid: {} has eigenvalue {:.3e} (largest {:.3e}, condition {:.3e})", what, lo, hi,
                                     hi / std::max(std::abs(lo), 1e-300)));
  }
  ev = ev.cwiseMax(0.0);
  if (vectors) *vectors = es.eigenvectors();
  return ev;
}

}  // namespace

TopK r_precision(const Features& motion, const Features& text, Rng& rng, int batch_size) {
  require_pairs(motion, text, "r_precision");
  if (batch_size < 1) throw DomainError("r_precision: batch size must be positive");
  const auto n = static_cast<std::size_t>(motion.rows());
  const auto b = static_cast<std::size_t>(batch_size);
  if (n < b) throw InsufficientDataError(fmt::format("r_precision: {} pairs, need at least {}", n, batch_size));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());

  const std::size_t batches = n / b;
  std::array<std::size_t, 3> hits{};
  for (std::size_t batch = 0; batch < batches; ++batch) {
    const std::size_t* idx = order.data() + batch * b;
    for (std::size_t i = 0; i < b; ++i) {
      const auto ti = static_cast<Eigen::Index>(idx[i]);
      const double own = (motion.row(ti) - text.row(ti)).squaredNorm();
      std::size_t closer = 0;
      for (std::size_t j = 0; j < b; ++j) {
        if (j == i) continue;
        if ((motion.row(static_cast<Eigen::Index>(idx[j])) - text.row(ti)).squaredNorm() < own) ++closer;
      }
      for (std::size_t k = 0; k < 3; ++k) {
        if (closer <= k) ++hits[k];
      }
    }
  }
  const double total = static_cast<double>(batches * b);
  return {hits[0] / total, hits[1] / total, hits[2] / total};
}

double mm_dist(const Features& motion, const Features& text) {
  require_pairs(motion, text, "mm_dist");
  if (motion.rows() == 0) throw DomainError("mm_dist: empty input");
  return (motion - text).rowwise().norm().mean();
}

double fid(const Features& real, const Features& generated) {
  if (real.cols() != generated.cols()) throw ShapeError("fid: feature dimensions differ");
  if (real.rows() < 2 || generated.rows() < 2) throw InsufficientDataError("fid: need at least two rows per set");
  const Eigen::RowVectorXd mu_r = real.colwise().mean();
  const Eigen::RowVectorXd mu_g = generated.colwise().mean();
  Eigen::MatrixXd cov_r = covariance(real, mu_r);
  Eigen::MatrixXd cov_g = covariance(generated, mu_g);
  if (real.rows() <= real.cols() || generated.rows() <= generated.cols()) {
    shrink(cov_r);
    shrink(cov_g);
  }
  // Tr((S_r S_g)^{1/2}) = Tr((A S_g A)^{1/2}) with A = S_r^{1/2} symmetric.
  Eigen::MatrixXd vecs;
  const Eigen::VectorXd ev_r = psd_eigenvalues(cov_r, &vecs, "real covariance");
  const Eigen::MatrixXd root_r = vecs * ev_r.cwiseSqrt().asDiagonal() * vecs.transpose();
  Eigen::MatrixXd inner = root_r * cov_g * root_r;
  inner = 0.5 * (inner + inner.transpose());
  const Eigen::VectorXd ev = psd_eigenvalues(inner, nullptr, "covariance product");
  const double trace_root = ev.cwiseSqrt().sum();
  const double value = (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() - 2.0 * trace_root;
  if (!std::isfinite(value)) throw NumericalError("fid: non-finite result");
  return std::max(value, 0.0);
}

double paired_distance(const Features& feats, std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size() || a.empty()) throw DomainError("paired_distance: index lists must be equal and nonempty");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += (feats.row(static_cast<Eigen::Index>(a[i])) - feats.row(static_cast<Eigen::Index>(b[i]))).norm();
  }
  return sum / static_cast<double>(a.size());
}

double diversity(const Features& feats, int subset_size, Rng& rng) {
  if (subset_size < 1) throw DomainError("diversity: subset size must be positive");
  const auto need = 2 * static_cast<std::size_t>(subset_size);
  if (static_cast<std::size_t>(feats.rows()) < need) {
    throw InsufficientDataError(
        fmt::format("diversity: {} samples, need {} for two disjoint subsets", feats.rows(), need));
  }
  const auto picked = rng.choose(static_cast<std::size_t>(feats.rows()), need);
  const std::span<const std::size_t> all(picked);
  return paired_distance(feats, all.first(static_cast<std::size_t>(subset_size)),
                         all.last(static_cast<std::size_t>(subset_size)));
}

double mmodality(std::span<const Features> per_text, int text_count, int subset_size, Rng& rng) {
  if (text_count < 1) throw DomainError("mmodality: text count must be positive");
  if (per_text.size() < static_cast<std::size_t>(text_count)) {
    throw InsufficientDataError(fmt::format("mmodality: {} texts, need {}", per_text.size(), text_count));
  }
  const auto texts = rng.choose(per_text.size(), static_cast<std::size_t>(text_count));
  double sum = 0.0;
  for (std::size_t t : texts) sum += diversity(per_text[t], subset_size, rng);
  return sum / static_cast<double>(text_count);
}

DynamicsStats dynamics_stats(const corpus::MotionSequence& motion) {
  if (motion.length() < 3) {
    throw InsufficientDataError(fmt::format("dynamics_stats: {} frames, need at least 3", motion.length()));
  }
  const Eigen::MatrixXd p = corpus::world_positions(motion);
  const Eigen::Index frames = p.rows();
  const Eigen::Index joints = p.cols() / 3;
  const double fps = motion.fps;
  DynamicsStats s;
  double vel_sum = 0.0;
  double acc_sum = 0.0;
  for (Eigen::Index j = 0; j < joints; ++j) {
    for (Eigen::Index i = 1; i < frames; ++i) {
      vel_sum += (p.block(i, 3 * j, 1, 3) - p.block(i - 1, 3 * j, 1, 3)).norm() * fps;
    }
    for (Eigen::Index i = 1; i + 1 < frames; ++i) {
      const double a =
          (p.block(i + 1, 3 * j, 1, 3) - 2.0 * p.block(i, 3 * j, 1, 3) + p.block(i - 1, 3 * j, 1, 3)).norm() * fps *
          fps;
      acc_sum += a;
      s.max_acc = std::max(s.max_acc, a);
    }
  }
  s.avg_vel = vel_sum / static_cast<double>(joints * (frames - 1));
  s.avg_acc = acc_sum / static_cast<double>(joints * (frames - 2));
  return s;
}

double mean(std::span<const double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double ci95(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(n));
}

}  // namespace ladiff::eval
