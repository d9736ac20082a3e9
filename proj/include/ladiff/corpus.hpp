#pragma once

// Motion data model and the procedural text-motion corpus.
//
// Pose layout for a skeleton of J joints (V = 6J + 1 channels):
//   [0, 3J)    joint positions in meters; joint 0 (root) in world space, the
//              others relative to the root
//   [3J, 6J)   joint velocities in m/s, fps * backward difference of the
//              position channels (forward difference on frame 0)
//   [6J]       root yaw in radians

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ladiff::corpus {

inline constexpr int kJoints = 8;
inline constexpr int kChannels = 6 * kJoints + 1;
inline constexpr int kDefaultFps = 20;

enum Joint : int { kRoot = 0, kHead, kLeftShoulder, kRightShoulder, kLeftHand, kRightHand, kLeftFoot, kRightFoot };

inline constexpr int position_channel(int joint, int axis) { return 3 * joint + axis; }
inline constexpr int velocity_channel(int joint, int axis) { return 3 * kJoints + 3 * joint + axis; }
inline constexpr int kYawChannel = 6 * kJoints;

using Frames = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MotionSequence {
  Frames frames;  // F x V
  int fps = kDefaultFps;

  int length() const { return static_cast<int>(frames.rows()); }
  int channels() const { return static_cast<int>(frames.cols()); }
};

/// Checks shape and finiteness; throws ShapeError / DomainError.
void validate(const MotionSequence& motion, int channels = kChannels);

/// World-space joint positions (F x 3J): root plus root-relative offsets.
Eigen::MatrixXd world_positions(const MotionSequence& motion);

/// Rewrites the velocity channels from the position channels.
void recompute_velocities(MotionSequence& motion);

/// Rewrites the root position channels of frames 1.. by integrating the root
/// velocity channels from frame 0. Decoded motions carry small independent
/// errors per frame in both; integrating the velocity keeps the trajectory
/// smooth where the absolute positions would jitter.
void integrate_root(MotionSequence& motion);

enum class Action : int { walk = 0, walk_circle, sit, throw_ball, jump, wave };
inline constexpr int kActionCount = 6;

std::string_view action_name(Action a);
/// Accepts the names used in configs ("walk", "walk-in-circle", "sit",
/// "throw", "jump", "wave"). Throws ConfigError on anything else.
Action parse_action(std::string_view name);

/// Discrete slots fill the text template; `magnitude` is the continuous,
/// unspoken size of the action (walk: step length m, circle: radius m,
/// sit: seat drop m, throw: reach m, jump: height m, wave: amplitude m).
struct ActionParams {
  int variant = 0;      // template index within the action
  int subject = 0;      // subject phrase
  int count = 1;        // steps / jumps / waves
  bool mirrored = false;  // backward, counterclockwise, or left side
  bool large = false;     // large circle / on a chair
  double magnitude = 0.0;

  bool operator==(const ActionParams&) const = default;
};

struct TextDescriptor {
  std::string text;
  Action action = Action::walk;
  ActionParams params;
};

/// Renders the template text for (action, params).
std::string render_text(Action action, const ActionParams& params);

/// Number of template variants for an action and valid slot ranges.
int variant_count(Action action);

/// Recovers action and discrete params from a grammar text (magnitude is 0).
/// Throws VocabularyError if the text is not produced by the grammar.
TextDescriptor parse_descriptor(std::string_view text);

/// Every distinct text the grammar can produce, in a fixed order.
const std::vector<TextDescriptor>& grammar_texts();

/// Sorted vocabulary of the grammar.
const std::vector<std::string>& vocabulary();

/// Lower-cased whitespace-separated words with punctuation dropped.
std::vector<std::string> tokenize(std::string_view text);

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };
std::string_view split_name(Split s);

struct CorpusSample {
  std::uint32_t id = 0;
  MotionSequence motion;
  TextDescriptor descriptor;
  Split split = Split::train;
};

struct CorpusConfig {
  std::vector<Action> actions = {Action::walk, Action::walk_circle, Action::sit,
                                 Action::throw_ball, Action::jump, Action::wave};
  int samples = 600;
  int min_frames = 30;
  int max_frames = 200;
  int fps = kDefaultFps;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  std::uint64_t split_seed = 7;
};

/// Throws ConfigError if the config is unusable.
void validate(const CorpusConfig& config);

/// Split assignment as a pure function of (id, split_seed).
Split assign_split(std::uint32_t id, const CorpusConfig& config);

/// Draws params for `action` from a per-sample stream.
ActionParams draw_params(Action action, std::uint64_t sample_seed);

/// Kinematic synthesis. Every trajectory is a function of the normalized
/// phase i / (frames - 1) only, so the same action performed over fewer
/// frames covers the same path with proportionally higher speeds.
MotionSequence synthesize(Action action, const ActionParams& params, int frames, int fps);

/// Deterministic for a fixed seed; per-sample streams derive from (seed, id).
std::vector<CorpusSample> generate_corpus(const CorpusConfig& config, std::uint64_t seed);

std::vector<const CorpusSample*> select(std::span<const CorpusSample> samples, Split split);

// ---------------------------------------------------------------- text embedding

inline constexpr int kDefaultTextDim = 64;

/// Frozen table of random unit-variance token vectors over the grammar
/// vocabulary. embed() is the L2-normalized mean of the token vectors.
class TextEmbedder {
 public:
  explicit TextEmbedder(std::uint64_t seed = 1234, int dim = kDefaultTextDim);

  Eigen::VectorXf embed(std::string_view text) const;
  int dim() const { return dim_; }

 private:
  int dim_;
  std::vector<std::string> vocab_;
  Eigen::MatrixXf table_;  // vocab x dim
};

// ---------------------------------------------------------------- normalization

inline constexpr double kStdFloor = 1e-6;

struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  MotionSequence normalize(const MotionSequence& motion) const;
  MotionSequence denormalize(const MotionSequence& motion) const;
  Frames normalize(const Frames& frames) const;
  Frames denormalize(const Frames& frames) const;
};

/// Per-channel statistics over every frame of the given samples. Channels
/// with std below kStdFloor are clamped to it and a warning is logged.
Normalizer fit_normalizer(std::span<const CorpusSample* const> train);

// ---------------------------------------------------------------- files

inline constexpr std::uint32_t kCorpusFormatVersion = 1;

void write_corpus(const std::filesystem::path& path, std::span<const CorpusSample> samples, int fps = kDefaultFps);
std::vector<CorpusSample> read_corpus(const std::filesystem::path& path);

/// Same header as the corpus file (magic "LADN", sample count 0) followed
/// by V means and V standard deviations.
void write_normalizer(const std::filesystem::path& path, const Normalizer& normalizer);
Normalizer read_normalizer(const std::filesystem::path& path);

/// A single motion in corpus record format (used by `sample`).
void write_motion(const std::filesystem::path& path, const MotionSequence& motion, const std::string& text);

}  // namespace ladiff::corpus
