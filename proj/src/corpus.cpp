#include "ladiff/corpus.hpp"

#include "ladiff/error.hpp"
#include "ladiff/parallel.hpp"
#include "ladiff/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <numbers>

#include <fmt/format.h>

namespace ladiff::corpus {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kPelvisHeight = 0.95;

using Vec3 = Eigen::Vector3d;

// Rest offsets in the body frame (x right, y up, z forward), indexed by Joint.
const std::array<Vec3, kJoints> kRest = {
    Vec3(0.0, 0.0, 0.0),     Vec3(0.0, 0.65, 0.0),   Vec3(-0.18, 0.45, 0.0), Vec3(0.18, 0.45, 0.0),
    Vec3(-0.25, -0.05, 0.0), Vec3(0.25, -0.05, 0.0), Vec3(-0.1, -0.9, 0.0),  Vec3(0.1, -0.9, 0.0),
};

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct Pose {
  Vec3 root = Vec3(0.0, kPelvisHeight, 0.0);
  double yaw = 0.0;
  std::array<Vec3, kJoints> local = kRest;
};

// Alternating stepping of feet and counter-swinging arms for `steps` steps.
void gait(Pose& pose, double u, int steps, double stride, double dir) {
  const double s = std::sin(kPi * steps * u);
  const double lift = 0.08 * std::max(0.0, std::sin(2.0 * kPi * steps * u));
  pose.local[kLeftFoot].z() += 0.5 * stride * dir * s;
  pose.local[kRightFoot].z() -= 0.5 * stride * dir * s;
  pose.local[kLeftFoot].y() += s > 0 ? lift : 0.0;
  pose.local[kRightFoot].y() += s < 0 ? lift : 0.0;
  pose.local[kLeftHand].z() -= 0.3 * stride * dir * s;
  pose.local[kRightHand].z() += 0.3 * stride * dir * s;
  pose.root.y() += 0.025 * (1.0 - std::cos(2.0 * kPi * steps * u));
}

Pose pose_at(Action action, const ActionParams& p, double u) {
  Pose pose;
  const int hand = p.mirrored ? kLeftHand : kRightHand;
  const double side = p.mirrored ? -1.0 : 1.0;
  switch (action) {
    case Action::walk: {
      const double dir = p.mirrored ? -1.0 : 1.0;
      pose.root.z() = dir * p.count * p.magnitude * u;
      gait(pose, u, p.count, p.magnitude, dir);
      break;
    }
    case Action::walk_circle: {
      const double radius = p.magnitude;
      const double turn = p.mirrored ? 1.0 : -1.0;  // counterclockwise seen from above is +yaw
      const double angle = turn * 2.0 * kPi * u;
      // Start at the origin facing +z, circle center on the x axis.
      pose.root.x() = turn * radius * (1.0 - std::cos(angle));
      pose.root.z() = turn * radius * std::sin(angle);
      pose.yaw = angle;
      const int steps = std::max(2, static_cast<int>(std::lround(2.0 * kPi * radius / 0.6)));
      gait(pose, u, steps, 0.6, 1.0);
      break;
    }
    case Action::sit: {
      const double s = smoothstep(0.1, 0.9, u);
      pose.root.y() -= p.magnitude * s;
      pose.root.z() -= 0.25 * s;
      for (int foot : {kLeftFoot, kRightFoot}) {
        pose.local[foot].y() += p.magnitude * s;
        pose.local[foot].z() += 0.35 * s;
      }
      pose.local[kHead].z() += 0.15 * std::sin(kPi * s);
      for (int h : {kLeftHand, kRightHand}) {
        pose.local[h].z() += 0.3 * s;
        pose.local[h].y() += 0.05 * s;
      }
      break;
    }
    case Action::throw_ball: {
      const double wind = smoothstep(0.0, 0.4, u) * (1.0 - smoothstep(0.4, 0.65, u));
      const double release = smoothstep(0.4, 0.65, u) * (1.0 - smoothstep(0.7, 1.0, u));
      pose.local[hand].z() += -0.4 * wind + p.magnitude * release;
      pose.local[hand].y() += 0.7 * wind + 0.45 * release;
      pose.local[hand].x() -= side * 0.1 * release;
      pose.root.z() += 0.2 * smoothstep(0.35, 0.7, u);
      pose.local[kHead].z() += 0.08 * release;
      break;
    }
    case Action::jump: {
      const double q = std::fmod(p.count * u, 1.0);
      const double air = std::pow(std::sin(kPi * q), 2);
      const double crouch = std::pow(std::sin(2.0 * kPi * q), 2) * (q < 0.25 || q > 0.75 ? 1.0 : 0.0);
      pose.root.y() += p.magnitude * air * (q > 0.25 && q < 0.75 ? 1.0 : 0.0) - 0.12 * crouch;
      for (int foot : {kLeftFoot, kRightFoot}) pose.local[foot].y() += 0.12 * crouch;
      for (int h : {kLeftHand, kRightHand}) pose.local[h].y() += 0.35 * air;
      break;
    }
    case Action::wave: {
      const double raise = smoothstep(0.0, 0.2, u) * (1.0 - smoothstep(0.8, 1.0, u));
      const double osc = std::sin(2.0 * kPi * p.count * std::clamp((u - 0.2) / 0.6, 0.0, 1.0));
      const Vec3 up(side * 0.35, 0.75, 0.1);
      pose.local[hand] = (1.0 - raise) * kRest[static_cast<std::size_t>(hand)] + raise * up;
      pose.local[hand].x() += raise * p.magnitude * osc;
      pose.local[kHead].x() += 0.02 * raise * osc;
      break;
    }
  }
  return pose;
}

}  // namespace

void validate(const MotionSequence& motion, int channels) {
  if (motion.frames.cols() != channels) {
    throw ShapeError(fmt::format("motion has {} channels, expected {}", motion.frames.cols(), channels));
  }
  if (motion.frames.rows() < 1) throw ShapeError("motion has no frames");
  if (motion.fps <= 0) throw DomainError("fps must be positive");
  if (!motion.frames.allFinite()) throw DomainError("motion contains non-finite values");
}

Eigen::MatrixXd world_positions(const MotionSequence& motion) {
  const Eigen::Index n = motion.frames.rows();
  Eigen::MatrixXd out(n, 3 * kJoints);
  for (Eigen::Index f = 0; f < n; ++f) {
    for (int j = 0; j < kJoints; ++j) {
      for (int a = 0; a < 3; ++a) {
        double v = motion.frames(f, position_channel(j, a));
        if (j != kRoot) v += motion.frames(f, position_channel(kRoot, a));
        out(f, 3 * j + a) = v;
      }
    }
  }
  return out;
}

void recompute_velocities(MotionSequence& motion) {
  auto& x = motion.frames;
  const Eigen::Index n = x.rows();
  for (Eigen::Index f = 0; f < n; ++f) {
    const Eigen::Index a = n == 1 ? 0 : (f == 0 ? 0 : f - 1);
    const Eigen::Index b = n == 1 ? 0 : (f == 0 ? 1 : f);
    for (int c = 0; c < 3 * kJoints; ++c) {
      const double d = static_cast<double>(x(b, c)) - static_cast<double>(x(a, c));
      x(f, 3 * kJoints + c) = static_cast<float>(d * motion.fps);
    }
  }
}

void integrate_root(MotionSequence& motion) {
  auto& x = motion.frames;
  for (Eigen::Index f = 1; f < x.rows(); ++f) {
    for (int a = 0; a < 3; ++a) {
      const double step = static_cast<double>(x(f, velocity_channel(kRoot, a))) / motion.fps;
      x(f, position_channel(kRoot, a)) = static_cast<float>(x(f - 1, position_channel(kRoot, a)) + step);
    }
  }
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

void validate(const CorpusConfig& config) {
  if (config.actions.empty()) throw ConfigError("corpus action set is empty");
  if (config.samples < 1) throw ConfigError("corpus sample count must be positive");
  if (config.min_frames < 1) throw ConfigError("corpus.min_frames must be at least 1");
  if (config.min_frames > config.max_frames) {
    throw ConfigError(fmt::format("corpus.min_frames {} exceeds corpus.max_frames {}", config.min_frames,
                                  config.max_frames));
  }
  if (config.fps < 1) throw ConfigError("corpus.fps must be positive");
  if (config.train_fraction <= 0.0 || config.val_fraction < 0.0 ||
      config.train_fraction + config.val_fraction > 1.0) {
    throw ConfigError("corpus split fractions must satisfy 0 < train, 0 <= val, train + val <= 1");
  }
}

Split assign_split(std::uint32_t id, const CorpusConfig& config) {
  const std::uint64_t h = derive_seed(config.split_seed, id);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < config.train_fraction) return Split::train;
  if (u < config.train_fraction + config.val_fraction) return Split::val;
  return Split::test;
}

ActionParams draw_params(Action action, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  ActionParams p;
  p.variant = static_cast<int>(rng.index(static_cast<std::size_t>(variant_count(action))));
  p.subject = static_cast<int>(rng.index(4));
  auto uniform = [&rng](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  switch (action) {
    case Action::walk:
      p.count = 2 + static_cast<int>(rng.index(5));
      p.mirrored = rng.uniform() < 0.5;
      p.magnitude = uniform(0.5, 0.8);
      break;
    case Action::walk_circle:
      p.mirrored = rng.uniform() < 0.5;
      p.large = rng.uniform() < 0.5;
      p.magnitude = p.large ? uniform(1.4, 1.8) : uniform(0.6, 0.9);
      break;
    case Action::sit:
      p.large = rng.uniform() < 0.5;
      p.magnitude = p.large ? uniform(0.4, 0.5) : uniform(0.6, 0.7);
      break;
    case Action::throw_ball:
      p.mirrored = rng.uniform() < 0.5;
      p.magnitude = uniform(0.5, 0.8);
      break;
    case Action::jump:
      p.count = 1 + static_cast<int>(rng.index(3));
      p.magnitude = uniform(0.2, 0.4);
      break;
    case Action::wave:
      p.count = 2 + static_cast<int>(rng.index(3));
      p.mirrored = rng.uniform() < 0.5;
      p.magnitude = uniform(0.15, 0.3);
      break;
  }
  return p;
}

MotionSequence synthesize(Action action, const ActionParams& params, int frames, int fps) {
  if (frames < 1) throw LengthError("synthesize: frames must be positive");
  if (fps < 1) throw DomainError("synthesize: fps must be positive");
  MotionSequence m;
  m.fps = fps;
  m.frames = Frames::Zero(frames, kChannels);
  for (int i = 0; i < frames; ++i) {
    const double u = frames == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(frames - 1);
    const Pose pose = pose_at(action, params, u);
    const double c = std::cos(pose.yaw);
    const double s = std::sin(pose.yaw);
    for (int a = 0; a < 3; ++a) m.frames(i, position_channel(kRoot, a)) = static_cast<float>(pose.root(a));
    for (int j = 1; j < kJoints; ++j) {
      const Vec3& l = pose.local[static_cast<std::size_t>(j)];
      // Yaw about +y maps body forward (+z) to (sin yaw, 0, cos yaw).
      const Vec3 w(c * l.x() + s * l.z(), l.y(), -s * l.x() + c * l.z());
      for (int a = 0; a < 3; ++a) m.frames(i, position_channel(j, a)) = static_cast<float>(w(a));
    }
    m.frames(i, kYawChannel) = static_cast<float>(pose.yaw);
  }
  recompute_velocities(m);
  return m;
}

std::vector<CorpusSample> generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
  validate(config);
  std::vector<CorpusSample> out(static_cast<std::size_t>(config.samples));
  parallel_for(out.size(), [&](std::size_t i) {
    const auto id = static_cast<std::uint32_t>(i);
    const std::uint64_t sample_seed = derive_seed(seed, id);
    Rng rng(sample_seed);
    const Action action = config.actions[i % config.actions.size()];
    const int frames =
        config.min_frames + static_cast<int>(rng.index(static_cast<std::size_t>(config.max_frames - config.min_frames + 1)));
    const ActionParams params = draw_params(action, derive_seed(sample_seed, 1));
    CorpusSample& s = out[i];
    s.id = id;
    s.descriptor = TextDescriptor{render_text(action, params), action, params};
    s.motion = synthesize(action, params, frames, config.fps);
    s.split = assign_split(id, config);
  });
  return out;
}

std::vector<const CorpusSample*> select(std::span<const CorpusSample> samples, Split split) {
  std::vector<const CorpusSample*> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(&s);
  }
  return out;
}

// ---------------------------------------------------------------- normalizer

Frames Normalizer::normalize(const Frames& frames) const {
  if (frames.cols() != mean.size()) throw ShapeError("normalize: channel count mismatch");
  Frames out(frames.rows(), frames.cols());
  for (Eigen::Index c = 0; c < frames.cols(); ++c) {
    out.col(c) = ((frames.col(c).cast<double>().array() - mean(c)) / std(c)).cast<float>().matrix();
  }
  return out;
}

Frames Normalizer::denormalize(const Frames& frames) const {
  if (frames.cols() != mean.size()) throw ShapeError("denormalize: channel count mismatch");
  Frames out(frames.rows(), frames.cols());
  for (Eigen::Index c = 0; c < frames.cols(); ++c) {
    out.col(c) = (frames.col(c).cast<double>().array() * std(c) + mean(c)).cast<float>().matrix();
  }
  return out;
}

MotionSequence Normalizer::normalize(const MotionSequence& motion) const {
  return MotionSequence{normalize(motion.frames), motion.fps};
}

MotionSequence Normalizer::denormalize(const MotionSequence& motion) const {
  return MotionSequence{denormalize(motion.frames), motion.fps};
}

Normalizer fit_normalizer(std::span<const CorpusSample* const> train) {
  if (train.empty()) throw InsufficientDataError("fit_normalizer: empty training split");
  const Eigen::Index v = train.front()->motion.frames.cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(v);
  double count = 0.0;
  for (const auto* s : train) {
    if (s->motion.frames.cols() != v) throw ShapeError("fit_normalizer: channel count mismatch");
    sum += s->motion.frames.cast<double>().colwise().sum().transpose();
    count += static_cast<double>(s->motion.frames.rows());
  }
  Normalizer n;
  n.mean = sum / count;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(v);
  for (const auto* s : train) {
    Eigen::MatrixXd centered = s->motion.frames.cast<double>().rowwise() - n.mean.transpose();
    sq += centered.array().square().colwise().sum().matrix().transpose();
  }
  n.std = (sq / count).cwiseSqrt();
  for (Eigen::Index c = 0; c < v; ++c) {
    if (n.std(c) < kStdFloor) {
      std::cerr << fmt::format("warning: channel {} is constant over the training split; std clamped to {}\n",
                               c, kStdFloor);
      n.std(c) = kStdFloor;
    }
  }
  // Round to the on-disk precision so a reloaded normalizer is identical.
  n.mean = n.mean.cast<float>().cast<double>();
  n.std = n.std.cast<float>().cast<double>();
  return n;
}

}  // namespace ladiff::corpus
