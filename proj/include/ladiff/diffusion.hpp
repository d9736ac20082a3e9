#pragma once

// Noise schedule, forward process and reverse-step updates for latent
// diffusion with epsilon prediction.

#include "ladiff/autograd.hpp"
#include "ladiff/rng.hpp"

#include <string_view>
#include <vector>

namespace ladiff::diffusion {

using ag::Matrix;

enum class ScheduleKind { linear, cosine };
enum class SamplerKind { ancestral, deterministic };

ScheduleKind parse_schedule_kind(std::string_view name);
SamplerKind parse_sampler_kind(std::string_view name);
std::string_view name(ScheduleKind kind);
std::string_view name(SamplerKind kind);

inline constexpr double kLinearBetaStart = 1e-4;
inline constexpr double kLinearBetaEnd = 2e-2;

struct NoiseSchedule {
  int steps = 1000;                 // T
  ScheduleKind kind = ScheduleKind::linear;
  std::vector<double> alphas_bar;   // T + 1 entries, alphas_bar[0] = 1
  std::vector<int> inference_steps; // strictly decreasing, starts at T, ends at 1

  double alpha_bar(int t) const { return alphas_bar.at(static_cast<std::size_t>(t)); }
};

/// Throws ConfigError unless T >= inference_steps >= 1 and the result is
/// monotone decreasing in (0, 1].
NoiseSchedule build_schedule(int steps, ScheduleKind kind, int inference_steps);

/// z_t = sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) noise.
template <typename T>
Matrix<T> forward_diffuse(const Matrix<T>& z0, double alpha_bar, const Matrix<T>& noise);

/// Same, with alpha_bar taken from the schedule at 1 <= t <= T.
template <typename T>
Matrix<T> forward_diffuse(const Matrix<T>& z0, int t, const Matrix<T>& noise, const NoiseSchedule& schedule);

/// z0 implied by z_t and a noise prediction.
template <typename T>
Matrix<T> predict_clean(const Matrix<T>& z_t, const Matrix<T>& eps_hat, double alpha_bar);

/// Deterministic (eta = 0) update from alpha_bar_t to alpha_bar_prev.
template <typename T>
Matrix<T> deterministic_step(const Matrix<T>& z_t, const Matrix<T>& eps_hat, double alpha_bar_t,
                             double alpha_bar_prev);

/// Ancestral update using the posterior q(z_prev | z_t, z0_hat) of the
/// respaced chain; adds noise unless alpha_bar_prev == 1.
template <typename T>
Matrix<T> ancestral_step(const Matrix<T>& z_t, const Matrix<T>& eps_hat, double alpha_bar_t, double alpha_bar_prev,
                         Rng& rng);

}  // namespace ladiff::diffusion
