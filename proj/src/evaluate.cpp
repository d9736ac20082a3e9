#include "ladiff/evaluate.hpp"

#include "ladiff/error.hpp"
#include "ladiff/parallel.hpp"

#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace ladiff::eval {

void validate(const EvalSettings& s) {
  if (s.replicates < 1) throw ConfigError("eval: replicates must be positive");
  if (s.batch_size < 2) throw ConfigError("eval: batch size must be at least 2");
  if (s.diversity_subset < 1 || s.mm_texts < 1 || s.mm_subset < 1) {
    throw ConfigError("eval: subset sizes must be positive");
  }
}

namespace {

std::string format_value(double v) { return std::isnan(v) ? std::string("n/a") : fmt::format("{:.6f}", v); }

struct Replicate {
  TopK r;
  double fid = 0.0;
  double mm_dist = 0.0;
  double diversity = 0.0;
  double mmodality = 0.0;
};

}  // namespace

void write_report(std::ostream& out, const MetricReport& m) {
  const std::pair<const char*, double> rows[] = {
      {"r_precision_top1", m.r_precision_top1},
      {"r_precision_top2", m.r_precision_top2},
      {"r_precision_top3", m.r_precision_top3},
      {"fid", m.fid},
      {"mm_dist", m.mm_dist},
      {"diversity", m.diversity},
      {"mmodality", m.mmodality},
      {"r_precision_top1_ci95", m.r_precision_top1_ci95},
      {"r_precision_top2_ci95", m.r_precision_top2_ci95},
      {"r_precision_top3_ci95", m.r_precision_top3_ci95},
      {"fid_ci95", m.fid_ci95},
      {"mm_dist_ci95", m.mm_dist_ci95},
      {"diversity_ci95", m.diversity_ci95},
      {"mmodality_ci95", m.mmodality_ci95},
  };
  for (const auto& [key, value] : rows) out << key << " = " << format_value(value) << '\n';
  out << "replicates = " << m.replicates << '\n';
}

std::string format_report(const MetricReport& report) {
  std::ostringstream s;
  write_report(s, report);
  return s.str();
}

MetricReport evaluate(const Generator& generate, std::span<const corpus::CorpusSample* const> test,
                      const FeatureExtractors& extractors, const corpus::Normalizer& normalizer,
                      const EvalSettings& settings, std::uint64_t seed) {
  validate(settings);
  if (test.size() < static_cast<std::size_t>(settings.batch_size)) {
    throw InsufficientDataError(
        fmt::format("evaluate: {} test items, need at least {}", test.size(), settings.batch_size));
  }

  std::vector<std::string> texts;
  std::vector<corpus::Frames> real;
  std::map<std::string, std::size_t> first_use;
  std::vector<std::size_t> distinct;  // first test item of each distinct text
  for (std::size_t i = 0; i < test.size(); ++i) {
    texts.push_back(test[i]->descriptor.text);
    real.push_back(normalizer.normalize(test[i]->motion.frames));
    if (first_use.emplace(texts.back(), i).second) distinct.push_back(i);
  }
  if (distinct.size() < static_cast<std::size_t>(settings.mm_texts)) {
    throw InsufficientDataError(
        fmt::format("evaluate: {} distinct test texts, mmodality needs {}", distinct.size(), settings.mm_texts));
  }
  const Features text_feats = extractors.text_features(texts);
  const Features real_feats = extractors.motion_features(real);

  const auto reps = static_cast<std::size_t>(settings.replicates);
  const auto mm_count = static_cast<std::size_t>(2 * settings.mm_subset);
  std::vector<Replicate> results(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    const std::uint64_t rep_seed = derive_seed(seed, r);
    std::vector<corpus::Frames> generated(test.size());
    parallel_for(test.size(), [&](std::size_t i) {
      Rng rng(derive_seed(rep_seed, i));
      const auto motion = generate({texts[i], test[i]->motion.length(), i}, rng);
      generated[i] = normalizer.normalize(motion.frames);
    });
    const Features gen_feats = extractors.motion_features(generated);

    Rng metric_rng(derive_seed(rep_seed, 1ULL << 32));
    Replicate& out = results[r];
    out.r = r_precision(gen_feats, text_feats, metric_rng, settings.batch_size);
    out.fid = fid(real_feats, gen_feats);
    out.mm_dist = mm_dist(gen_feats, text_feats);
    out.diversity = diversity(gen_feats, settings.diversity_subset, metric_rng);

    const auto chosen = metric_rng.choose(distinct.size(), static_cast<std::size_t>(settings.mm_texts));
    std::vector<corpus::Frames> repeats(chosen.size() * mm_count);
    parallel_for(repeats.size(), [&](std::size_t j) {
      const std::size_t item = distinct[chosen[j / mm_count]];
      Rng rng(derive_seed(rep_seed, (2ULL << 32) + j));
      const auto motion = generate({texts[item], test[item]->motion.length(), item}, rng);
      repeats[j] = normalizer.normalize(motion.frames);
    });
    const Features repeat_feats = extractors.motion_features(repeats);
    std::vector<Features> per_text;
    for (std::size_t t = 0; t < chosen.size(); ++t) {
      per_text.push_back(repeat_feats.middleRows(static_cast<Eigen::Index>(t * mm_count),
                                                 static_cast<Eigen::Index>(mm_count)));
    }
    out.mmodality = mmodality(per_text, settings.mm_texts, settings.mm_subset, metric_rng);
  }

  auto column = [&](auto field) {
    std::vector<double> v;
    for (const auto& r : results) v.push_back(field(r));
    return v;
  };
  MetricReport report;
  report.replicates = settings.replicates;
  auto fill = [&](auto field, double& value, double& ci) {
    const auto v = column(field);
    value = mean(v);
    ci = ci95(v);
  };
  fill([](const Replicate& r) { return r.r.top1; }, report.r_precision_top1, report.r_precision_top1_ci95);
  fill([](const Replicate& r) { return r.r.top2; }, report.r_precision_top2, report.r_precision_top2_ci95);
  fill([](const Replicate& r) { return r.r.top3; }, report.r_precision_top3, report.r_precision_top3_ci95);
  fill([](const Replicate& r) { return r.fid; }, report.fid, report.fid_ci95);
  fill([](const Replicate& r) { return r.mm_dist; }, report.mm_dist, report.mm_dist_ci95);
  fill([](const Replicate& r) { return r.diversity; }, report.diversity, report.diversity_ci95);
  fill([](const Replicate& r) { return r.mmodality; }, report.mmodality, report.mmodality_ci95);
  return report;
}

}  // namespace ladiff::eval
