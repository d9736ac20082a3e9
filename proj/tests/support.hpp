#pragma once

// Helpers shared by the unit and acceptance tests.

#include "ladiff/autograd.hpp"
#include "ladiff/corpus.hpp"
#include "ladiff/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace ladiff::testing {

struct GradProbe {
  std::string name;
  ag::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

/// |a - n| / max(|a| + |n|, floor): relative error that degrades to an
/// absolute one for gradients near zero.
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max(std::abs(a) + std::abs(n), floor);
}

/// Compares tape gradients with central differences at `probes` randomly
/// chosen scalar parameters (all parameters if probes <= 0). `loss` must
/// build a 1x1 loss on a fresh tape and be deterministic.
inline std::vector<GradProbe> gradient_check(ag::ParameterStore<double>& store,
                                             const std::function<ag::Var(ag::Tape<double>&)>& loss, int probes,
                                             Rng& rng, double h = 1e-5) {
  store.zero_grad();
  {
    ag::Tape<double> tape;
    tape.backward(loss(tape));
  }
  struct Slot {
    ag::Parameter<double>* p;
    ag::Index i;
  };
  std::vector<Slot> slots;
  for (auto* p : store.all()) {
    for (ag::Index i = 0; i < p->value.size(); ++i) slots.push_back({p, i});
  }
  std::vector<std::size_t> chosen;
  if (probes <= 0 || static_cast<std::size_t>(probes) >= slots.size()) {
    for (std::size_t i = 0; i < slots.size(); ++i) chosen.push_back(i);
  } else {
    chosen = rng.choose(slots.size(), static_cast<std::size_t>(probes));
  }
  auto eval = [&] {
    ag::Tape<double> tape(false);
    return tape.scalar(loss(tape));
  };
  std::vector<GradProbe> out;
  for (std::size_t c : chosen) {
    auto [p, i] = slots[c];
    double& x = p->value.data()[i];
    const double saved = x;
    x = saved + h;
    const double up = eval();
    x = saved - h;
    const double down = eval();
    x = saved;
    GradProbe g;
    g.name = p->name;
    g.index = i;
    g.analytic = p->grad.size() ? p->grad.data()[i] : 0.0;
    g.numeric = (up - down) / (2.0 * h);
    g.rel_error = relative_error(g.analytic, g.numeric);
    out.push_back(g);
  }
  return out;
}

inline double max_error(const std::vector<GradProbe>& probes) {
  double m = 0.0;
  for (const auto& p : probes) m = std::max(m, p.rel_error);
  return m;
}

inline ag::Matrix<double> random_matrix(ag::Index rows, ag::Index cols, Rng& rng, double scale = 1.0) {
  ag::Matrix<double> m(rows, cols);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline corpus::Frames random_frames(ag::Index rows, ag::Index cols, Rng& rng) {
  corpus::Frames m(rows, cols);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

}  // namespace ladiff::testing
