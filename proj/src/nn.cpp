#include "ladiff/nn.hpp"

#include "ladiff/error.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace ladiff::nn {

template <typename T>
Var Linear<T>::operator()(Tape<T>& tape, Var x) const {
  return tape.add_row(tape.matmul(x, tape.param(*weight)), tape.param(*bias));
}

template <typename T>
Linear<T> make_linear(ParameterStore<T>& store, const std::string& name, Index in, Index out, Rng& rng,
                      double gain) {
  Linear<T> l;
  l.weight = &store.create(name + ".weight", in, out);
  l.bias = &store.create(name + ".bias", 1, out);
  const double std = gain / std::sqrt(static_cast<double>(in));
  for (Index i = 0; i < l.weight->value.size(); ++i) {
    l.weight->value.data()[i] = static_cast<T>(rng.normal() * std);
  }
  return l;
}

template <typename T>
Var LayerNorm<T>::operator()(Tape<T>& tape, Var x) const {
  return tape.layer_norm(x, tape.param(*gamma), tape.param(*beta));
}

template <typename T>
LayerNorm<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, Index dim) {
  LayerNorm<T> n;
  n.gamma = &store.create(name + ".gamma", 1, dim);
  n.gamma->value.setOnes();
  n.beta = &store.create(name + ".beta", 1, dim);
  return n;
}

template <typename T>
Var Attention<T>::operator()(Tape<T>& tape, Var query, Var memory, Matrix<T>* weights) const {
  const Index dim = q.out_features();
  const Index head_dim = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  Var qs = q(tape, query);
  Var ks = k(tape, memory);
  Var vs = v(tape, memory);
  if (weights != nullptr) {
    weights->setZero(tape.value(query).rows(), tape.value(memory).rows());
  }
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? qs : tape.slice_cols(qs, h * head_dim, head_dim);
    Var kh = heads == 1 ? ks : tape.slice_cols(ks, h * head_dim, head_dim);
    Var vh = heads == 1 ? vs : tape.slice_cols(vs, h * head_dim, head_dim);
    Var probs = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), scale));
    if (weights != nullptr) *weights += tape.value(probs) / static_cast<T>(heads);
    outs.push_back(tape.matmul(probs, vh));
  }
  Var merged = heads == 1 ? outs.front() : tape.concat_cols(outs);
  return o(tape, merged);
}

template <typename T>
Attention<T> make_attention(ParameterStore<T>& store, const std::string& name, Index dim, int heads, Rng& rng) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError(fmt::format("{}: dim {} not divisible by {} heads", name, dim, heads));
  }
  Attention<T> a;
  a.q = make_linear(store, name + ".q", dim, dim, rng);
  a.k = make_linear(store, name + ".k", dim, dim, rng);
  a.v = make_linear(store, name + ".v", dim, dim, rng);
  a.o = make_linear(store, name + ".o", dim, dim, rng);
  a.heads = heads;
  return a;
}

template <typename T>
Var FeedForward<T>::operator()(Tape<T>& tape, Var x) const {
  return down(tape, tape.gelu(up(tape, x)));
}

template <typename T>
FeedForward<T> make_feed_forward(ParameterStore<T>& store, const std::string& name, Index dim, Index hidden,
                                 Rng& rng) {
  FeedForward<T> f;
  f.up = make_linear(store, name + ".up", dim, hidden, rng);
  f.down = make_linear(store, name + ".down", hidden, dim, rng);
  return f;
}

template <typename T>
Var EncoderLayer<T>::operator()(Tape<T>& tape, Var x) const {
  Var h = norm1(tape, x);
  x = tape.add(x, attn(tape, h, h));
  return tape.add(x, ff(tape, norm2(tape, x)));
}

template <typename T>
EncoderLayer<T> make_encoder_layer(ParameterStore<T>& store, const std::string& name, Index dim, int heads,
                                   Rng& rng) {
  EncoderLayer<T> l;
  l.norm1 = make_layer_norm(store, name + ".norm1", dim);
  l.attn = make_attention(store, name + ".attn", dim, heads, rng);
  l.norm2 = make_layer_norm(store, name + ".norm2", dim);
  l.ff = make_feed_forward(store, name + ".ff", dim, 2 * dim, rng);
  return l;
}

template <typename T>
Var DecoderLayer<T>::operator()(Tape<T>& tape, Var x, Var memory, Matrix<T>* cross_weights) const {
  Var h = norm1(tape, x);
  x = tape.add(x, self_attn(tape, h, h));
  x = tape.add(x, cross_attn(tape, norm2(tape, x), memory, cross_weights));
  return tape.add(x, ff(tape, norm3(tape, x)));
}

template <typename T>
DecoderLayer<T> make_decoder_layer(ParameterStore<T>& store, const std::string& name, Index dim, int heads,
                                   Rng& rng) {
  DecoderLayer<T> l;
  l.norm1 = make_layer_norm(store, name + ".norm1", dim);
  l.self_attn = make_attention(store, name + ".self_attn", dim, heads, rng);
  l.norm2 = make_layer_norm(store, name + ".norm2", dim);
  l.cross_attn = make_attention(store, name + ".cross_attn", dim, heads, rng);
  l.norm3 = make_layer_norm(store, name + ".norm3", dim);
  l.ff = make_feed_forward(store, name + ".ff", dim, 2 * dim, rng);
  return l;
}

template <typename T>
Matrix<T> frame_positional_features(Index n, Index dim) {
  Matrix<T> pe(n, dim);
  const Index half = dim / 2;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < half; j += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(half));
      pe(i, j) = static_cast<T>(std::sin(static_cast<double>(i) * freq));
      if (j + 1 < half) pe(i, j + 1) = static_cast<T>(std::cos(static_cast<double>(i) * freq));
    }
    const double phase = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    for (Index j = half; j < dim; j += 2) {
      const double m = static_cast<double>((j - half) / 2 + 1);
      pe(i, j) = static_cast<T>(std::sin(std::numbers::pi * m * phase));
      if (j + 1 < dim) pe(i, j + 1) = static_cast<T>(std::cos(std::numbers::pi * m * phase));
    }
  }
  return pe;
}

template <typename T>
Matrix<T> timestep_embedding(int t, Index dim) {
  Matrix<T> e(1, dim);
  const Index half = dim / 2;
  for (Index j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
    e(0, j) = static_cast<T>(std::sin(t * freq));
    e(0, j + half) = static_cast<T>(std::cos(t * freq));
  }
  if (dim % 2 == 1) e(0, dim - 1) = T(0);
  return e;
}

#define LADIFF_INSTANTIATE(T)                                                                                \
  template struct Linear<T>;                                                                                 \
  template Linear<T> make_linear(ParameterStore<T>&, const std::string&, Index, Index, Rng&, double);        \
  template struct LayerNorm<T>;                                                                              \
  template LayerNorm<T> make_layer_norm(ParameterStore<T>&, const std::string&, Index);                      \
  template struct Attention<T>;                                                                              \
  template Attention<T> make_attention(ParameterStore<T>&, const std::string&, Index, int, Rng&);            \
  template struct FeedForward<T>;                                                                            \
  template FeedForward<T> make_feed_forward(ParameterStore<T>&, const std::string&, Index, Index, Rng&);     \
  template struct EncoderLayer<T>;                                                                           \
  template EncoderLayer<T> make_encoder_layer(ParameterStore<T>&, const std::string&, Index, int, Rng&);     \
  template struct DecoderLayer<T>;                                                                           \
  template DecoderLayer<T> make_decoder_layer(ParameterStore<T>&, const std::string&, Index, int, Rng&);     \
  template Matrix<T> frame_positional_features<T>(Index, Index);                                             \
  template Matrix<T> timestep_embedding<T>(int, Index);

LADIFF_INSTANTIATE(float)
LADIFF_INSTANTIATE(double)

#undef LADIFF_INSTANTIATE

}  // namespace ladiff::nn
