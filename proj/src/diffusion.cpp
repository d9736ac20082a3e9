#include "ladiff/diffusion.hpp"

#include "ladiff/error.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace ladiff::diffusion {

ScheduleKind parse_schedule_kind(std::string_view n) {
  if (n == "linear") return ScheduleKind::linear;
  if (n == "cosine") return ScheduleKind::cosine;
  throw ConfigError(fmt::format("unknown schedule kind '{}'", n));
}

SamplerKind parse_sampler_kind(std::string_view n) {
  if (n == "ancestral") return SamplerKind::ancestral;
  if (n == "deterministic" || n == "deterministic-subsequence") return SamplerKind::deterministic;
  throw ConfigError(fmt::format("unknown sampler kind '{}'", n));
}

std::string_view name(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }
std::string_view name(SamplerKind kind) { return kind == SamplerKind::ancestral ? "ancestral" : "deterministic"; }

NoiseSchedule build_schedule(int steps, ScheduleKind kind, int inference_steps) {
  if (steps < 1) throw ConfigError("schedule: T must be at least 1");
  if (inference_steps < 1 || inference_steps > steps) {
    throw ConfigError(fmt::format("schedule: need T ({}) >= inference steps ({}) >= 1", steps, inference_steps));
  }
  NoiseSchedule s;
  s.steps = steps;
  s.kind = kind;
  s.alphas_bar.resize(static_cast<std::size_t>(steps) + 1);
  s.alphas_bar[0] = 1.0;
  if (kind == ScheduleKind::linear) {
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
      const double beta =
          steps == 1 ? kLinearBetaStart
                     : kLinearBetaStart + (kLinearBetaEnd - kLinearBetaStart) * (t - 1) / static_cast<double>(steps - 1);
      prod *= 1.0 - beta;
      s.alphas_bar[static_cast<std::size_t>(t)] = prod;
    }
  } else {
    constexpr double offset = 0.008;
    auto f = [&](int t) {
      const double x = (static_cast<double>(t) / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0;
      return std::cos(x) * std::cos(x);
    };
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
      const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
      prod *= 1.0 - beta;
      s.alphas_bar[static_cast<std::size_t>(t)] = prod;
    }
  }
  for (int t = 1; t <= steps; ++t) {
    const double a = s.alphas_bar[static_cast<std::size_t>(t)];
    if (!(a > 0.0 && a < s.alphas_bar[static_cast<std::size_t>(t) - 1])) {
      throw ConfigError(fmt::format("schedule: alpha_bar not monotone decreasing in (0, 1] at t={}", t));
    }
  }
  // Evenly spaced from T down to 1; the step after t=1 lands on alpha_bar_0 = 1.
  for (int i = 0; i < inference_steps; ++i) {
    const double frac = inference_steps == 1 ? 0.0 : static_cast<double>(i) / (inference_steps - 1);
    s.inference_steps.push_back(static_cast<int>(std::lround(steps - frac * (steps - 1))));
  }
  for (std::size_t i = 1; i < s.inference_steps.size(); ++i) {
    if (s.inference_steps[i] >= s.inference_steps[i - 1]) {
      throw ConfigError("schedule: inference steps not strictly decreasing");
    }
  }
  return s;
}

template <typename T>
Matrix<T> forward_diffuse(const Matrix<T>& z0, double alpha_bar, const Matrix<T>& noise) {
  if (z0.rows() != noise.rows() || z0.cols() != noise.cols()) {
    throw ShapeError(fmt::format("forward_diffuse: z0 {}x{} vs noise {}x{}", z0.rows(), z0.cols(), noise.rows(),
                                 noise.cols()));
  }
  const T a = static_cast<T>(std::sqrt(alpha_bar));
  const T b = static_cast<T>(std::sqrt(1.0 - alpha_bar));
  return a * z0 + b * noise;
}

template <typename T>
Matrix<T> forward_diffuse(const Matrix<T>& z0, int t, const Matrix<T>& noise, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps) {
    throw DomainError(fmt::format("forward_diffuse: t={} outside [1, {}]", t, schedule.steps));
  }
  return forward_diffuse(z0, schedule.alpha_bar(t), noise);
}

template <typename T>
Matrix<T> predict_clean(const Matrix<T>& z_t, const Matrix<T>& eps_hat, double alpha_bar) {
  return (z_t - static_cast<T>(std::sqrt(1.0 - alpha_bar)) * eps_hat) / static_cast<T>(std::sqrt(alpha_bar));
}

template <typename T>
Matrix<T> deterministic_step(const Matrix<T>& z_t, const Matrix<T>& eps_hat, double alpha_bar_t,
                             double alpha_bar_prev) {
  const Matrix<T> z0 = predict_clean(z_t, eps_hat, alpha_bar_t);
  return static_cast<T>(std::sqrt(alpha_bar_prev)) * z0 + static_cast<T>(std::sqrt(1.0 - alpha_bar_prev)) * eps_hat;
}

template <typename T>
Matrix<T> ancestral_step(const Matrix<T>& z_t, const Matrix<T>& eps_hat, double alpha_bar_t, double alpha_bar_prev,
                         Rng& rng) {
  const Matrix<T> z0 = predict_clean(z_t, eps_hat, alpha_bar_t);
  const double alpha = alpha_bar_t / alpha_bar_prev;
  const double beta = 1.0 - alpha;
  const double c0 = std::sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar_t);
  const double ct = std::sqrt(alpha) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t);
  Matrix<T> mean = static_cast<T>(c0) * z0 + static_cast<T>(ct) * z_t;
  if (alpha_bar_prev >= 1.0) return mean;
  const double var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t);
  const double sd = std::sqrt(std::max(var, 0.0));
  for (Eigen::Index i = 0; i < mean.size(); ++i) mean.data()[i] += static_cast<T>(sd * rng.normal());
  return mean;
}

#define LADIFF_INSTANTIATE(T)                                                                            \
  template Matrix<T> forward_diffuse(const Matrix<T>&, double, const Matrix<T>&);                        \
  template Matrix<T> forward_diffuse(const Matrix<T>&, int, const Matrix<T>&, const NoiseSchedule&);     \
  template Matrix<T> predict_clean(const Matrix<T>&, const Matrix<T>&, double);                          \
  template Matrix<T> deterministic_step(const Matrix<T>&, const Matrix<T>&, double, double);             \
  template Matrix<T> ancestral_step(const Matrix<T>&, const Matrix<T>&, double, double, Rng&);

LADIFF_INSTANTIATE(float)
LADIFF_INSTANTIATE(double)

#undef LADIFF_INSTANTIATE

}  // namespace ladiff::diffusion
