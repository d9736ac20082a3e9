#include "ladiff/autograd.hpp"

#include "ladiff/error.hpp"

#include <cmath>
#include <cstring>

#include <fmt/format.h>

namespace ladiff::ag {

// ---------------------------------------------------------------- store

template <typename T>
Parameter<T>& ParameterStore<T>::create(std::string name, Index rows, Index cols) {
  if (find(name) != nullptr) {
    throw ConfigError(fmt::format("duplicate parameter name '{}'", name));
  }
  auto p = std::make_unique<Parameter<T>>();
  p->name = std::move(name);
  p->value = Matrix<T>::Zero(rows, cols);
  p->grad = Matrix<T>::Zero(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::all() {
  std::vector<Parameter<T>*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParameterStore<T>::all() const {
  std::vector<const Parameter<T>*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <typename T>
std::uint64_t ParameterStore<T>::checksum() const {
  // FNV-1a over bytes.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params_) {
    feed(p->name.data(), p->name.size());
    const Index shape[2] = {p->value.rows(), p->value.cols()};
    feed(shape, sizeof(shape));
    feed(p->value.data(), sizeof(T) * static_cast<std::size_t>(p->value.size()));
  }
  return h;
}

// ---------------------------------------------------------------- tape

template <typename T>
Var Tape<T>::push(Matrix<T> value, bool needs_grad) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad && record_grad_;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
bool Tape<T>::tracking(std::initializer_list<Var> inputs) const {
  if (!record_grad_) return false;
  for (Var v : inputs) {
    if (nodes_[v.id].needs_grad) return true;
  }
  return false;
}

template <typename T>
template <typename Expr>
void Tape<T>::accumulate(Var v, const Expr& g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

template <typename T>
Var Tape<T>::constant(Matrix<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad);
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
  Var v = push(p.value, true);
  nodes_[v.id].param = &p;
  return v;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ShapeError("backward() target must be a 1x1 scalar");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad = Matrix<T>::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward();
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

#define LADIFF_GRAD(v) (nodes_[(v).id].grad)

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows()) {
    throw ShapeError(fmt::format("matmul: {}x{} * {}x{}", value(a).rows(), value(a).cols(),
                                 value(b).rows(), value(b).cols()));
  }
  const bool track = tracking({a, b});
  Var out = push(value(a) * value(b), track);
  if (track) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = LADIFF_GRAD(out);
      if (needs(a)) accumulate(a, g * value(b).transpose());
      if (needs(b)) accumulate(b, value(a).transpose() * g);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::matmul_nt(Var a, Var b) {
  if (value(a).cols() != value(b).cols()) {
    throw ShapeError(fmt::format("matmul_nt: {}x{} * ({}x{})^T", value(a).rows(), value(a).cols(),
                                 value(b).rows(), value(b).cols()));
  }
  const bool track = tracking({a, b});
  Var out = push(value(a) * value(b).transpose(), track);
  if (track) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = LADIFF_GRAD(out);
      if (needs(a)) accumulate(a, g * value(b));
      if (needs(b)) accumulate(b, g.transpose() * value(a));
    };
  }
  return out;
}

namespace {

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(fmt::format("{}: shape {}x{} vs {}x{}", op, a.rows(), a.cols(), b.rows(), b.cols()));
  }
}

template <typename A, typename B>
void require_row_of(const A& a, const B& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError(fmt::format("{}: expected 1x{} row, got {}x{}", op, a.cols(), row.rows(), row.cols()));
  }
}

}  // namespace

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  const bool track = tracking({a, b});
  Var out = push(value(a) + value(b), track);
  if (track) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = LADIFF_GRAD(out);
      accumulate(a, g);
      accumulate(b, g);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  const bool track = tracking({a, b});
  Var out = push(value(a) - value(b), track);
  if (track) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = LADIFF_GRAD(out);
      accumulate(a, g);
      if (needs(b)) accumulate(b, -g);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  const bool track = tracking({a, b});
  Var out = push(value(a).cwiseProduct(value(b)), track);
  if (track) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = LADIFF_GRAD(out);
      if (needs(a)) accumulate(a, g.cwiseProduct(value(b)));
      if (needs(b)) accumulate(b, g.cwiseProduct(value(a)));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::add_row(Var a, Var row) {
  require_row_of(value(a), value(row), "add_row");
  const bool track = tracking({a, row});
  Matrix<T> v = value(a);
  v.rowwise() += value(row).row(0);
  Var out = push(std::move(v), track);
  if (track) {
    nodes_[out.id].backward = [this, a, row, out] {
      const auto& g = LADIFF_GRAD(out);
      accumulate(a, g);
      if (needs(row)) accumulate(row, g.colwise().sum());
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::mul_row(Var a, Var row) {
  require_row_of(value(a), value(row), "mul_row");
  const bool track = tracking({a, row});
  Matrix<T> v = value(a).array().rowwise() * value(row).row(0).array();
  Var out = push(std::move(v), track);
  if (track) {
    nodes_[out.id].backward = [this, a, row, out] {
      const auto& g = LADIFF_GRAD(out);
      if (needs(a)) {
        Matrix<T> ga = g.array().rowwise() * value(row).row(0).array();
        accumulate(a, ga);
      }
      if (needs(row)) accumulate(row, g.cwiseProduct(value(a)).colwise().sum());
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::scale(Var a, T s) {
  const bool track = tracking({a});
  Var out = push(value(a) * s, track);
  if (track) {
    nodes_[out.id].backward = [this, a, out, s] { accumulate(a, LADIFF_GRAD(out) * s); };
  }
  return out;
}

template <typename T>
Var Tape<T>::add_scalar(Var a, T s) {
  const bool track = tracking({a});
  Var out = push((value(a).array() + s).matrix(), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out] { accumulate(a, LADIFF_GRAD(out)); };
  }
  return out;
}

template <typename T>
Var Tape<T>::exp(Var a) {
  const bool track = tracking({a});
  Var out = push(value(a).array().exp().matrix(), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out] {
      accumulate(a, LADIFF_GRAD(out).cwiseProduct(value(out)));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::square(Var a) {
  const bool track = tracking({a});
  Var out = push(value(a).array().square().matrix(), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out] {
      accumulate(a, (LADIFF_GRAD(out).array() * value(a).array() * T(2)).matrix());
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::gelu(Var a) {
  // tanh approximation
  static constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T k = T(0.044715);
  const auto& x = value(a);
  Matrix<T> th = (c * (x.array() + k * x.array().cube())).tanh().matrix();
  Matrix<T> y = (T(0.5) * x.array() * (T(1) + th.array())).matrix();
  const bool track = tracking({a});
  Var out = push(std::move(y), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out, th = std::move(th)] {
      const auto& xv = value(a).array();
      auto dinner = c * (T(1) + T(3) * k * xv.square());
      auto dy = T(0.5) * (T(1) + th.array()) + T(0.5) * xv * (T(1) - th.array().square()) * dinner;
      accumulate(a, (LADIFF_GRAD(out).array() * dy).matrix());
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::silu(Var a) {
  const auto& x = value(a);
  Matrix<T> sig = (T(1) / (T(1) + (-x.array()).exp())).matrix();
  Matrix<T> y = x.cwiseProduct(sig);
  const bool track = tracking({a});
  Var out = push(std::move(y), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out, sig = std::move(sig)] {
      auto s = sig.array();
      auto dy = s * (T(1) + value(a).array() * (T(1) - s));
      accumulate(a, (LADIFF_GRAD(out).array() * dy).matrix());
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::clamp(Var a, T lo, T hi) {
  const bool track = tracking({a});
  Var out = push(value(a).cwiseMax(lo).cwiseMin(hi), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out, lo, hi] {
      const auto& x = value(a).array();
      auto inside = ((x >= lo) && (x <= hi)).template cast<T>();
      accumulate(a, (LADIFF_GRAD(out).array() * inside).matrix());
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::softmax_rows(Var a) {
  const auto& x = value(a);
  Matrix<T> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const T m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  const bool track = tracking({a});
  Var out = push(std::move(y), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out] {
      const auto& g = LADIFF_GRAD(out);
      const auto& yv = value(out);
      Matrix<T> gy = g.cwiseProduct(yv);
      Matrix<T> ga = gy;
      for (Index i = 0; i < yv.rows(); ++i) ga.row(i) -= yv.row(i) * gy.row(i).sum();
      accumulate(a, ga);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::layer_norm(Var a, Var gamma, Var beta, T eps) {
  const auto& x = value(a);
  require_row_of(x, value(gamma), "layer_norm gamma");
  require_row_of(x, value(beta), "layer_norm beta");
  const Index n = x.rows();
  const Index d = x.cols();
  Matrix<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix<T> y = xhat.array().rowwise() * value(gamma).row(0).array();
  y.rowwise() += value(beta).row(0);
  const bool track = tracking({a, gamma, beta});
  Var out = push(std::move(y), track);
  if (track) {
    nodes_[out.id].backward = [this, a, gamma, beta, out, xhat = std::move(xhat),
                               inv_std = std::move(inv_std)] {
      const auto& g = LADIFF_GRAD(out);
      if (needs(gamma)) accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
      if (needs(beta)) accumulate(beta, g.colwise().sum());
      if (needs(a)) {
        Matrix<T> gxh = g.array().rowwise() * value(gamma).row(0).array();
        Matrix<T> ga(gxh.rows(), gxh.cols());
        for (Index i = 0; i < gxh.rows(); ++i) {
          const T m1 = gxh.row(i).mean();
          const T m2 = gxh.row(i).cwiseProduct(xhat.row(i)).mean();
          ga.row(i) = (gxh.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
        }
        accumulate(a, ga);
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::normalize_rows(Var a, T eps) {
  const auto& x = value(a);
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = x.rowwise().norm();
  norms.array() += eps;
  Matrix<T> y = x;
  for (Index i = 0; i < x.rows(); ++i) y.row(i) /= norms(i);
  const bool track = tracking({a});
  Var out = push(std::move(y), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out, norms = std::move(norms)] {
      const auto& g = LADIFF_GRAD(out);
      const auto& yv = value(out);
      Matrix<T> ga(g.rows(), g.cols());
      for (Index i = 0; i < g.rows(); ++i) {
        const T dot = g.row(i).dot(yv.row(i));
        ga.row(i) = (g.row(i) - yv.row(i) * dot) / norms(i);
      }
      accumulate(a, ga);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::slice_rows(Var a, Index begin, Index count) {
  const auto& x = value(a);
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw ShapeError(fmt::format("slice_rows [{}, {}) of {} rows", begin, begin + count, x.rows()));
  }
  const bool track = tracking({a});
  Var out = push(x.middleRows(begin, count), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out, begin, count] {
      Node& n = nodes_[a.id];
      if (!n.needs_grad) return;
      if (n.grad.size() == 0) n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
      n.grad.middleRows(begin, count) += LADIFF_GRAD(out);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::slice_cols(Var a, Index begin, Index count) {
  const auto& x = value(a);
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw ShapeError(fmt::format("slice_cols [{}, {}) of {} cols", begin, begin + count, x.cols()));
  }
  const bool track = tracking({a});
  Var out = push(x.middleCols(begin, count), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out, begin, count] {
      Node& n = nodes_[a.id];
      if (!n.needs_grad) return;
      if (n.grad.size() == 0) n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
      n.grad.middleCols(begin, count) += LADIFF_GRAD(out);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = value(parts[0]).cols();
  Index rows = 0;
  bool track = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += value(p).rows();
    track = track || tracking({p});
  }
  Matrix<T> y(rows, cols);
  Index at = 0;
  for (Var p : parts) {
    y.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  Var out = push(std::move(y), track);
  if (track) {
    std::vector<Var> ins(parts.begin(), parts.end());
    nodes_[out.id].backward = [this, ins = std::move(ins), out] {
      const auto& g = LADIFF_GRAD(out);
      Index offset = 0;
      for (Var p : ins) {
        const Index r = value(p).rows();
        if (needs(p)) accumulate(p, g.middleRows(offset, r));
        offset += r;
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = value(parts[0]).rows();
  Index cols = 0;
  bool track = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += value(p).cols();
    track = track || tracking({p});
  }
  Matrix<T> y(rows, cols);
  Index at = 0;
  for (Var p : parts) {
    y.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  Var out = push(std::move(y), track);
  if (track) {
    std::vector<Var> ins(parts.begin(), parts.end());
    nodes_[out.id].backward = [this, ins = std::move(ins), out] {
      const auto& g = LADIFF_GRAD(out);
      Index offset = 0;
      for (Var p : ins) {
        const Index c = value(p).cols();
        if (needs(p)) accumulate(p, g.middleCols(offset, c));
        offset += c;
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::broadcast_rows(Var row, Index n) {
  if (value(row).rows() != 1) throw ShapeError("broadcast_rows: input must be a single row");
  const bool track = tracking({row});
  Var out = push(value(row).replicate(n, 1), track);
  if (track) {
    nodes_[out.id].backward = [this, row, out] { accumulate(row, LADIFF_GRAD(out).colwise().sum()); };
  }
  return out;
}

template <typename T>
Var Tape<T>::mean_rows(Var a) {
  const auto& x = value(a);
  const Index n = x.rows();
  const bool track = tracking({a});
  Var out = push(x.colwise().mean(), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out, n] {
      accumulate(a, (LADIFF_GRAD(out) / T(n)).replicate(n, 1));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::transpose(Var a) {
  const bool track = tracking({a});
  Var out = push(value(a).transpose(), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out] { accumulate(a, LADIFF_GRAD(out).transpose()); };
  }
  return out;
}

template <typename T>
Var Tape<T>::sum(Var a) {
  const bool track = tracking({a});
  Matrix<T> s(1, 1);
  s(0, 0) = value(a).sum();
  Var out = push(std::move(s), track);
  if (track) {
    nodes_[out.id].backward = [this, a, out] {
      const T g = LADIFF_GRAD(out)(0, 0);
      accumulate(a, Matrix<T>::Constant(value(a).rows(), value(a).cols(), g));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::mean(Var a) {
  const T n = static_cast<T>(value(a).size());
  return scale(sum(a), T(1) / n);
}

template <typename T>
Var Tape<T>::mse(Var a, Var b) {
  return mean(square(sub(a, b)));
}

template <typename T>
Var Tape<T>::cross_entropy_rows(Var logits, std::span<const int> targets) {
  const auto& x = value(logits);
  if (static_cast<Index>(targets.size()) != x.rows()) {
    throw ShapeError("cross_entropy_rows: one target per row required");
  }
  Matrix<T> prob(x.rows(), x.cols());
  T loss = 0;
  for (Index i = 0; i < x.rows(); ++i) {
    const T m = x.row(i).maxCoeff();
    prob.row(i) = (x.row(i).array() - m).exp().matrix();
    const T z = prob.row(i).sum();
    prob.row(i) /= z;
    loss -= (x(i, targets[i]) - m - std::log(z));
  }
  loss /= T(x.rows());
  Matrix<T> s(1, 1);
  s(0, 0) = loss;
  const bool track = tracking({logits});
  Var out = push(std::move(s), track);
  if (track) {
    std::vector<int> tg(targets.begin(), targets.end());
    nodes_[out.id].backward = [this, logits, out, prob = std::move(prob), tg = std::move(tg)] {
      const T g = LADIFF_GRAD(out)(0, 0);
      Matrix<T> ga = prob;
      for (Index i = 0; i < ga.rows(); ++i) ga(i, tg[i]) -= T(1);
      accumulate(logits, ga * (g / T(ga.rows())));
    };
  }
  return out;
}

#undef LADIFF_GRAD

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace ladiff::ag
