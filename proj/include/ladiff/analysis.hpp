#pragma once

// Diagnostics of the latent layout: decoder attention over slots, decoding
// with a subset of slots, slot usage across a corpus, and how motion
// dynamics change with the requested length.

#include "ladiff/corpus.hpp"
#include "ladiff/denoiser.hpp"
#include "ladiff/lavae.hpp"
#include "ladiff/metrics.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ladiff::analysis {

/// k x f decoder cross-attention; each column (output frame) sums to 1.
struct AttentionMap {
  Eigen::MatrixXd weights;
  int frames_per_slot = 0;

  int slots() const { return static_cast<int>(weights.rows()); }
  int frames() const { return static_cast<int>(weights.cols()); }
};

/// Decodes z to f_star frames, averages the captured cross-attention over
/// layers (heads are already averaged) and renormalizes each column.
/// `per_layer`, if given, receives each layer's k x f map.
AttentionMap attention_map(const vae::LaVaeModel<float>& vae, const vae::LatentCode<float>& z, int f_star,
                           std::vector<Eigen::MatrixXd>* per_layer = nullptr);

/// Fraction of frames whose highest-weight slot is the one the activation
/// rule assigns to that frame (0-based frame i belongs to slot i / r). Ties
/// go to the lowest slot index.
double chunking_score(const AttentionMap& map, int frames_per_slot);

/// Samples z_0 for (text, f_star), replaces slots outside `active_set`
/// (1-based slot numbers) with the prior mean, and decodes.
corpus::MotionSequence subspace_ablation(const diffusion::TextToMotion& system, const std::string& text, int f_star,
                                         const std::set<int>& active_set, Rng& rng);

/// Zeroes every slot not in `active_set`; DomainError if the set is empty or
/// names a slot outside [1, k].
void ablate_slots(vae::LatentCode<float>& z, const std::set<int>& active_set);

struct SlotCoordinates {
  std::uint32_t sample_id = 0;
  int slot = 0;  // 1-based
  Eigen::VectorXf mu;
};

struct SubspaceUsage {
  std::map<int, int> histogram;  // k -> sample count
  std::vector<SlotCoordinates> coordinates;
};

/// Encodes every sample and records its active slot count and per-slot
/// posterior means. Motions are normalized with `normalizer` first.
SubspaceUsage latent_occupancy(const vae::LaVaeModel<float>& vae, std::span<const corpus::CorpusSample* const> samples,
                               const corpus::Normalizer& normalizer);

/// Histogram of activation counts implied by the lengths alone.
std::map<int, int> analytic_histogram(std::span<const corpus::CorpusSample* const> samples, const vae::LaVaeModel<float>& vae);

struct LengthStats {
  int frames = 0;
  eval::DynamicsStats stats;
};

using MotionGenerator = std::function<corpus::MotionSequence(const std::string& text, int frames, Rng& rng)>;

/// One generation per length, each from a fresh stream seeded by `seed`, so
/// all lengths share the same noise policy. Averages over `samples` draws
/// (streams derived from seed) when samples > 1.
std::vector<LengthStats> length_sweep(const MotionGenerator& generate, const std::string& text,
                                      std::span<const int> lengths, std::uint64_t seed, int samples = 1);

/// Published per-action average joint velocity (m/s) at 48, 84 and 170
/// frames, for directional comparison only.
inline constexpr std::array<int, 3> kReferenceLengths{48, 84, 170};
inline constexpr std::array<double, 3> kReferenceWalkVelocity{1.31, 1.01, 0.72};
inline constexpr std::array<double, 3> kReferenceSitVelocity{0.27, 0.17, 0.10};

/// Header "attention k=<k> f=<f> r=<r>" then k rows of f values.
void write_attention_map(std::ostream& out, const AttentionMap& map);
/// Header "occupancy samples=<n> r=<r>" then "k count" lines.
void write_histogram(std::ostream& out, const std::map<int, int>& histogram, int frames_per_slot);
/// Header "coordinates rows=<n> dim=<D> r=<r>" then "id slot mu..." lines.
void write_coordinates(std::ostream& out, const SubspaceUsage& usage, int frames_per_slot);
/// Header "length_sweep rows=<n>" then "frames avg_vel avg_acc max_acc" lines.
void write_length_sweep(std::ostream& out, const std::string& text, std::span<const LengthStats> rows);

}  // namespace ladiff::analysis
