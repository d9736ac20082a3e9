#include "ladiff/analysis.hpp"

#include "ladiff/error.hpp"
#include "ladiff/parallel.hpp"

#include <ostream>

#include <fmt/format.h>

namespace ladiff::analysis {

AttentionMap attention_map(const vae::LaVaeModel<float>& vae, const vae::LatentCode<float>& z, int f_star,
                           std::vector<Eigen::MatrixXd>* per_layer) {
  std::vector<ag::Matrix<float>> layers;
  vae.decode(z, f_star, &layers);
  if (layers.empty()) throw ShapeError("attention_map: decoder has no layers");
  AttentionMap map;
  map.frames_per_slot = vae.config().frames_per_slot;
  map.weights = Eigen::MatrixXd::Zero(z.k(), f_star);
  for (const auto& w : layers) {
    const Eigen::MatrixXd t = w.cast<double>().transpose();
    if (per_layer) per_layer->push_back(t);
    map.weights += t;
  }
  const Eigen::RowVectorXd sums = map.weights.colwise().sum();
  for (Eigen::Index c = 0; c < map.weights.cols(); ++c) map.weights.col(c) /= sums(c);
  return map;
}

double chunking_score(const AttentionMap& map, int frames_per_slot) {
  if (frames_per_slot < 1) throw DomainError("chunking_score: frames per slot must be positive");
  if (map.frames() == 0) return 0.0;
  int hits = 0;
  for (int i = 0; i < map.frames(); ++i) {
    Eigen::Index best = 0;
    map.weights.col(i).maxCoeff(&best);  // first maximum on ties
    if (best == i / frames_per_slot) ++hits;
  }
  return static_cast<double>(hits) / map.frames();
}

void ablate_slots(vae::LatentCode<float>& z, const std::set<int>& active_set) {
  if (active_set.empty()) throw DomainError("subspace ablation: active set is empty");
  for (int s : active_set) {
    if (s < 1 || s > z.k()) throw DomainError(fmt::format("subspace ablation: slot {} outside [1, {}]", s, z.k()));
  }
  for (int s = 1; s <= z.k(); ++s) {
    if (!active_set.contains(s)) z.slots.row(s - 1).setZero();
  }
}

corpus::MotionSequence subspace_ablation(const diffusion::TextToMotion& system, const std::string& text, int f_star,
                                         const std::set<int>& active_set, Rng& rng) {
  auto z = diffusion::sample_code(system, text, f_star, rng);
  ablate_slots(z, active_set);
  return diffusion::decode_motion(system, z, f_star);
}

SubspaceUsage latent_occupancy(const vae::LaVaeModel<float>& vae, std::span<const corpus::CorpusSample* const> samples,
                               const corpus::Normalizer& normalizer) {
  std::vector<vae::SubspacePosterior<float>> posteriors(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    posteriors[i] = vae.encode(normalizer.normalize(samples[i]->motion.frames));
  });
  SubspaceUsage usage;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& p = posteriors[i];
    ++usage.histogram[p.slots()];
    for (int s = 0; s < p.slots(); ++s) {
      usage.coordinates.push_back({samples[i]->id, s + 1, p.mu.row(s).transpose()});
    }
  }
  return usage;
}

std::map<int, int> analytic_histogram(std::span<const corpus::CorpusSample* const> samples,
                                      const vae::LaVaeModel<float>& vae) {
  std::map<int, int> h;
  for (const auto* s : samples) ++h[vae.slots_for(s->motion.length())];
  return h;
}

std::vector<LengthStats> length_sweep(const MotionGenerator& generate, const std::string& text,
                                      std::span<const int> lengths, std::uint64_t seed, int samples) {
  if (samples < 1) throw DomainError("length_sweep: samples must be positive");
  const auto per = static_cast<std::size_t>(samples);
  std::vector<eval::DynamicsStats> raw(lengths.size() * per);
  parallel_for(raw.size(), [&](std::size_t j) {
    Rng rng(samples == 1 ? seed : derive_seed(seed, j % per));
    raw[j] = eval::dynamics_stats(generate(text, lengths[j / per], rng));
  });
  std::vector<LengthStats> out;
  for (std::size_t l = 0; l < lengths.size(); ++l) {
    LengthStats row;
    row.frames = lengths[l];
    for (std::size_t s = 0; s < per; ++s) {
      const auto& d = raw[l * per + s];
      row.stats.avg_vel += d.avg_vel / samples;
      row.stats.avg_acc += d.avg_acc / samples;
      row.stats.max_acc += d.max_acc / samples;
    }
    out.push_back(row);
  }
  return out;
}

void write_attention_map(std::ostream& out, const AttentionMap& map) {
  out << fmt::format("attention k={} f={} r={}\n", map.slots(), map.frames(), map.frames_per_slot);
  for (Eigen::Index r = 0; r < map.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < map.weights.cols(); ++c) {
      out << (c ? " " : "") << fmt::format("{:.6g}", map.weights(r, c));
    }
    out << '\n';
  }
}

void write_histogram(std::ostream& out, const std::map<int, int>& histogram, int frames_per_slot) {
  int total = 0;
  for (const auto& [k, n] : histogram) total += n;
  out << fmt::format("occupancy samples={} r={}\n", total, frames_per_slot);
  for (const auto& [k, n] : histogram) out << k << ' ' << n << '\n';
}

void write_coordinates(std::ostream& out, const SubspaceUsage& usage, int frames_per_slot) {
  const auto dim = usage.coordinates.empty() ? 0 : usage.coordinates.front().mu.size();
  out << fmt::format("coordinates rows={} dim={} r={}\n", usage.coordinates.size(), dim, frames_per_slot);
  for (const auto& row : usage.coordinates) {
    out << row.sample_id << ' ' << row.slot;
    for (Eigen::Index i = 0; i < row.mu.size(); ++i) out << ' ' << fmt::format("{:.6g}", row.mu(i));
    out << '\n';
  }
}

void write_length_sweep(std::ostream& out, const std::string& text, std::span<const LengthStats> rows) {
  out << fmt::format("length_sweep rows={} text=\"{}\"\n", rows.size(), text);
  out << "frames avg_vel avg_acc max_acc\n";
  for (const auto& r : rows) {
    out << fmt::format("{} {:.4f} {:.4f} {:.4f}\n", r.frames, r.stats.avg_vel, r.stats.avg_acc, r.stats.max_acc);
  }
}

}  // namespace ladiff::analysis
