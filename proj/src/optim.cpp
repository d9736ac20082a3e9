#include "ladiff/optim.hpp"

#include <cmath>

namespace ladiff {

template <typename T>
AdamW<T>::AdamW(ag::ParameterStore<T>& store, AdamWSettings settings)
    : params_(store.all()), settings_(settings) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto* p : params_) {
    m_.push_back(ag::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ag::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
  }
}

template <typename T>
double AdamW<T>::step(T grad_scale) {
  double sq = 0.0;
  for (auto* p : params_) sq += static_cast<double>(p->grad.squaredNorm());
  const double norm = std::sqrt(sq) * static_cast<double>(grad_scale);
  double factor = static_cast<double>(grad_scale);
  if (settings_.clip_norm > 0.0 && norm > settings_.clip_norm) factor *= settings_.clip_norm / norm;

  ++step_;
  const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(step_));
  const T b1 = static_cast<T>(settings_.beta1);
  const T b2 = static_cast<T>(settings_.beta2);
  const T decay = static_cast<T>(1.0 - settings_.lr * settings_.weight_decay);
  const T step_size = static_cast<T>(settings_.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(settings_.eps);
  const T f = static_cast<T>(factor);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto g = (p.grad.array() * f);
    m_[i].array() = b1 * m_[i].array() + (T(1) - b1) * g;
    v_[i].array() = b2 * v_[i].array() + (T(1) - b2) * g.square();
    p.value.array() *= decay;
    p.value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace ladiff
