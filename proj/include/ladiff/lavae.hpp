#pragma once

// Length-aware VAE.
//
// The latent space is split into K = ceil(F_max / r) subspaces ("slots") of
// dimension D. A motion of f frames uses only the first k = ceil(f / r)
// slots: the encoder reads k posteriors from the first k of K learned query
// tokens, and the decoder reconstructs exactly f frames by cross-attending
// from f positional queries to those k slots. Slots beyond k never enter the
// computation.

#include "ladiff/autograd.hpp"
#include "ladiff/corpus.hpp"
#include "ladiff/nn.hpp"
#include "ladiff/optim.hpp"
#include "ladiff/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ladiff::vae {

using ag::Index;
using ag::Matrix;
using ag::Tape;
using ag::Var;

/// How the posterior spread multiplies the reparameterization noise.
/// `variance` is z = mu + sigma^2 * rho; `std_dev` is the usual z = mu + sigma * rho.
enum class NoiseScale { variance, std_dev };
/// Where the denoising perturbation is applied during training.
enum class DvaeTarget { input, latent };

inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 20.0;

struct LaVaeConfig {
  int channels = corpus::kChannels;
  int max_frames = 200;
  int frames_per_slot = 48;
  int dim = 256;
  int layers = 9;
  int heads = 4;
  double dvae_fraction = 0.33;
  double dvae_std = 0.1;
  double kl_weight = 1e-4;
  bool length_aware = true;
  NoiseScale noise_scale = NoiseScale::variance;
  DvaeTarget dvae_target = DvaeTarget::input;

  /// K = ceil(max_frames / frames_per_slot).
  int max_slots() const;
};

void validate(const LaVaeConfig& config);

/// k = ceil(frames / frames_per_slot), clamped to [1, max_slots].
/// Throws DomainError for non-positive arguments.
int activation_count(int frames, int frames_per_slot, int max_slots = 1 << 30);

template <typename T>
struct SubspacePosterior {
  Matrix<T> mu;       // k x D
  Matrix<T> log_var;  // k x D, clamped to [kLogVarMin, kLogVarMax]

  int slots() const { return static_cast<int>(mu.rows()); }
};

template <typename T>
struct LatentCode {
  Matrix<T> slots;  // k x D

  int k() const { return static_cast<int>(slots.rows()); }
  int dim() const { return static_cast<int>(slots.cols()); }
};

template <typename T>
class LaVaeModel {
 public:
  LaVaeModel(const LaVaeConfig& config, std::uint64_t init_seed);

  LaVaeModel(LaVaeModel&&) noexcept = default;
  LaVaeModel& operator=(LaVaeModel&&) noexcept = default;

  const LaVaeConfig& config() const { return config_; }
  ag::ParameterStore<T>& parameters() { return store_; }
  const ag::ParameterStore<T>& parameters() const { return store_; }

  /// Active slot count for a length: ceil(f / r) when length-aware, K
  /// otherwise. Throws LengthError if frames is outside [1, max_frames].
  int slots_for(int frames) const;

  struct PosteriorVars {
    Var mu;
    Var log_var;
  };

  /// Graph form; `frames` is an F x V normalized motion on the tape.
  PosteriorVars encode(Tape<T>& tape, Var frames) const;

  /// Graph form; `z` must have exactly slots_for(frames) rows. If
  /// `cross_attention` is non-null it receives one (frames x k) head-averaged
  /// map per decoder layer.
  Var decode(Tape<T>& tape, Var z, int frames, std::vector<Matrix<T>>* cross_attention = nullptr) const;

  SubspacePosterior<T> encode(const corpus::Frames& normalized) const;
  corpus::Frames decode(const LatentCode<T>& z, int frames,
                        std::vector<Matrix<T>>* cross_attention = nullptr) const;

 private:
  void check_decode_shape(Index k, Index d, int frames) const;

  LaVaeConfig config_;
  ag::ParameterStore<T> store_;

  nn::Linear<T> frame_in_;
  ag::Parameter<T>* slot_queries_ = nullptr;  // K x D
  std::vector<nn::EncoderLayer<T>> encoder_;
  nn::LayerNorm<T> encoder_norm_;
  nn::Linear<T> posterior_head_;  // D -> 2D

  nn::Linear<T> latent_in_;
  ag::Parameter<T>* slot_embedding_ = nullptr;  // K x D
  nn::Linear<T> query_in_;
  std::vector<nn::DecoderLayer<T>> decoder_;
  nn::LayerNorm<T> decoder_norm_;
  nn::Linear<T> frame_out_;
};

/// slot i = mu_i + s_i * rho_i with rho ~ N(0, I) drawn per slot, where s is
/// sigma^2 or sigma according to `scale`.
template <typename T>
LatentCode<T> reparameterize(const SubspacePosterior<T>& posterior, Rng& rng,
                             NoiseScale scale = NoiseScale::variance);

/// Graph form of reparameterize with explicit noise (k x D).
template <typename T>
Var reparameterize(Tape<T>& tape, Var mu, Var log_var, const Matrix<T>& noise, NoiseScale scale);

/// floor(fraction * F) distinct frames get additive N(0, std^2) noise on
/// every channel; the rest are unchanged. DomainError unless fraction is in
/// [0, 1] and std >= 0.
corpus::Frames perturb_frames(const corpus::Frames& frames, double fraction, double std, Rng& rng);
corpus::MotionSequence perturb_frames(const corpus::MotionSequence& motion, double fraction, double std, Rng& rng);

/// Latent-space variant: floor(fraction * k * D) distinct coordinates are perturbed.
template <typename T>
Matrix<T> perturb_latent(const Matrix<T>& z, double fraction, double std, Rng& rng);

/// KL(N(mu, exp(log_var)) || N(0, I)) summed over all slots and coordinates.
template <typename T>
Var kl_divergence(Tape<T>& tape, Var mu, Var log_var);

struct VaeLoss {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

/// recon = MSE(clean, reconstructed) over all F x V entries; kl as above;
/// total = recon + kl_weight * kl.
template <typename T>
VaeLoss vae_loss(const corpus::Frames& clean, const corpus::Frames& reconstructed,
                 const SubspacePosterior<T>& posterior, double kl_weight);

/// One item of the training objective, fully on the tape: encode the
/// (possibly perturbed) input, reparameterize with `noise`, optionally add
/// `latent_perturbation`, decode, and score against the clean frames.
template <typename T>
struct VaeLossVars {
  Var total, recon, kl;
};

template <typename T>
VaeLossVars<T> vae_loss(Tape<T>& tape, const LaVaeModel<T>& model, const Matrix<T>& clean, const Matrix<T>& input,
                        const Matrix<T>& noise, const Matrix<T>* latent_perturbation, double kl_weight);

struct TrainSettings {
  int epochs = 10;
  int batch_size = 64;
  /// Stop after this many optimizer steps if positive.
  long max_steps = 0;
  AdamWSettings optimizer;
};

struct EpochRecord {
  int epoch = 0;
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double seconds = 0.0;
};

/// Format of one training-log line: "epoch recon kl total seconds".
std::string format_epoch(const EpochRecord& r);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// DVAE-augmented first-stage training on normalized motions. Throws
/// NumericalError naming the batch if a loss becomes non-finite.
std::vector<EpochRecord> train_vae(LaVaeModel<float>& model, std::span<const corpus::Frames> normalized_train,
                                   const TrainSettings& settings, std::uint64_t seed,
                                   const EpochCallback& on_epoch = {});

}  // namespace ladiff::vae
