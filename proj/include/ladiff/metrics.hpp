#pragma once

// Feature-space metrics for generated motion and joint-dynamics statistics.
// Feature sets are matrices with one item per row.

#include "ladiff/corpus.hpp"
#include "ladiff/rng.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace ladiff::eval {

using Features = Eigen::MatrixXd;

struct TopK {
  double top1 = 0.0;
  double top2 = 0.0;
  double top3 = 0.0;
};

/// Shuffles the pairs, splits them into batches of `batch_size` (a trailing
/// partial batch is dropped) and, per text, ranks the batch's motions by
/// Euclidean distance. A true match ranks ahead of distractors at equal
/// distance. InsufficientDataError when fewer than batch_size pairs.
TopK r_precision(const Features& motion, const Features& text, Rng& rng, int batch_size = 32);

/// Mean Euclidean distance over matched rows.
double mm_dist(const Features& motion, const Features& text);

/// Ridge applied to both covariances when a set has no more rows than
/// columns, as a fraction of the mean eigenvalue.
inline constexpr double kFidShrinkage = 0.1;

/// Frechet distance between Gaussian fits of the two sets.
double fid(const Features& real, const Features& generated);

/// Mean distance between rows a[i] and b[i].
double paired_distance(const Features& feats, std::span<const std::size_t> a, std::span<const std::size_t> b);

/// Draws 2 * subset_size distinct rows; the first half is paired with the
/// second half.
double diversity(const Features& feats, int subset_size, Rng& rng);

/// `per_text[i]` holds repeated generations for one text. Picks
/// `text_count` texts and averages the within-text diversity.
double mmodality(std::span<const Features> per_text, int text_count, int subset_size, Rng& rng);

struct DynamicsStats {
  double avg_vel = 0.0;
  double avg_acc = 0.0;
  double max_acc = 0.0;
};

/// Joint speeds and acceleration magnitudes from finite differences of the
/// world joint positions; averaged over joints and frames.
DynamicsStats dynamics_stats(const corpus::MotionSequence& motion);

/// 1.96 * sample std / sqrt(n); NaN when fewer than two values.
double ci95(std::span<const double> values);
double mean(std::span<const double> values);

}  // namespace ladiff::eval
