#pragma once

// Transformer building blocks on top of the autodiff tape. Every module is a
// plain aggregate of Parameter pointers into a ParameterStore owned by the
// enclosing model; modules never own memory.

#include "ladiff/autograd.hpp"
#include "ladiff/rng.hpp"

#include <string>
#include <vector>

namespace ladiff::nn {

using ag::Index;
using ag::Matrix;
using ag::Parameter;
using ag::ParameterStore;
using ag::Tape;
using ag::Var;

/// y = x W + b with W stored in x out.
template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  Var operator()(Tape<T>& tape, Var x) const;
  Index in_features() const { return weight->value.rows(); }
  Index out_features() const { return weight->value.cols(); }
};

/// Weights ~ N(0, gain^2 / in), zero bias.
template <typename T>
Linear<T> make_linear(ParameterStore<T>& store, const std::string& name, Index in, Index out, Rng& rng,
                      double gain = 1.0);

template <typename T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;

  Var operator()(Tape<T>& tape, Var x) const;
};

template <typename T>
LayerNorm<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, Index dim);

/// Multi-head scaled dot-product attention of `query` rows over `memory` rows.
template <typename T>
struct Attention {
  Linear<T> q, k, v, o;
  int heads = 1;

  /// If `weights` is non-null it receives the attention probabilities
  /// averaged over heads (query rows x memory rows).
  Var operator()(Tape<T>& tape, Var query, Var memory, Matrix<T>* weights = nullptr) const;
};

template <typename T>
Attention<T> make_attention(ParameterStore<T>& store, const std::string& name, Index dim, int heads, Rng& rng);

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  Var operator()(Tape<T>& tape, Var x) const;
};

template <typename T>
FeedForward<T> make_feed_forward(ParameterStore<T>& store, const std::string& name, Index dim, Index hidden,
                                 Rng& rng);

/// Pre-norm self-attention block.
template <typename T>
struct EncoderLayer {
  LayerNorm<T> norm1, norm2;
  Attention<T> attn;
  FeedForward<T> ff;

  Var operator()(Tape<T>& tape, Var x) const;
};

template <typename T>
EncoderLayer<T> make_encoder_layer(ParameterStore<T>& store, const std::string& name, Index dim, int heads,
                                   Rng& rng);

/// Pre-norm block: self-attention, cross-attention to `memory`, feed-forward.
template <typename T>
struct DecoderLayer {
  LayerNorm<T> norm1, norm2, norm3;
  Attention<T> self_attn, cross_attn;
  FeedForward<T> ff;

  Var operator()(Tape<T>& tape, Var x, Var memory, Matrix<T>* cross_weights = nullptr) const;
};

template <typename T>
DecoderLayer<T> make_decoder_layer(ParameterStore<T>& store, const std::string& name, Index dim, int heads,
                                   Rng& rng);

/// Frame positional features (n x dim). The first half is the usual absolute
/// sinusoidal code of the frame index; the second half encodes the relative
/// phase (i + 0.5) / n, so a decoder can tell where in the sequence a frame
/// falls for any target length.
template <typename T>
Matrix<T> frame_positional_features(Index n, Index dim);

/// Sinusoidal embedding of a diffusion timestep (1 x dim).
template <typename T>
Matrix<T> timestep_embedding(int t, Index dim);

}  // namespace ladiff::nn
