#pragma once

// Replicated evaluation of a text-to-motion generator against a test split.

#include "ladiff/corpus.hpp"
#include "ladiff/extractors.hpp"
#include "ladiff/metrics.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>

namespace ladiff::eval {

/// Published real-data retrieval accuracy on the large-scale benchmark the
/// method was designed for. Kept for reference next to desk-scale numbers;
/// not expected to be reproduced on the synthetic corpus.
inline constexpr TopK kReferenceRealRPrecision{0.511, 0.703, 0.797};

struct EvalSettings {
  int replicates = 20;
  int batch_size = 32;
  int diversity_subset = 50;  // X_d
  int mm_texts = 20;          // T_d
  int mm_subset = 5;          // X_d for mmodality
};

void validate(const EvalSettings& settings);

struct MetricReport {
  double r_precision_top1 = 0.0;
  double r_precision_top2 = 0.0;
  double r_precision_top3 = 0.0;
  double fid = 0.0;
  double mm_dist = 0.0;
  double diversity = 0.0;
  double mmodality = 0.0;

  // 95% half-widths over replicates; NaN when replicates == 1.
  double r_precision_top1_ci95 = 0.0;
  double r_precision_top2_ci95 = 0.0;
  double r_precision_top3_ci95 = 0.0;
  double fid_ci95 = 0.0;
  double mm_dist_ci95 = 0.0;
  double diversity_ci95 = 0.0;
  double mmodality_ci95 = 0.0;

  int replicates = 0;
};

/// Flat "key = value" lines in a fixed key order; NaN is written as "n/a".
void write_report(std::ostream& out, const MetricReport& report);
std::string format_report(const MetricReport& report);

struct GenerationRequest {
  std::string text;
  int frames = 0;
  std::size_t item = 0;  // index into the evaluated set
};

/// Must be safe to call concurrently; all randomness comes from `rng`.
using Generator = std::function<corpus::MotionSequence(const GenerationRequest& request, Rng& rng)>;

/// Generates one motion per test item at its ground-truth length for each
/// replicate, plus 2 * mm_subset generations for each of mm_texts distinct
/// test texts drawn per replicate, and reports the replicate mean and 95%
/// half-width of each metric. Generated motions are normalized with `normalizer` before feature
/// extraction. Replicate r uses streams derived from (seed, r) only.
MetricReport evaluate(const Generator& generate, std::span<const corpus::CorpusSample* const> test,
                      const FeatureExtractors& extractors, const corpus::Normalizer& normalizer,
                      const EvalSettings& settings, std::uint64_t seed);

}  // namespace ladiff::eval
