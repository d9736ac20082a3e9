#pragma once

// Text-conditioned latent denoiser and the second training stage.
//
// Each layer runs self-attention over the k latent slots, cross-attention
// from the slots to the projected text embedding, and a feed-forward block;
// every sublayer output passes through a stylization block that applies a
// scale-and-shift computed from (timestep embedding + text embedding).

#include "ladiff/autograd.hpp"
#include "ladiff/corpus.hpp"
#include "ladiff/diffusion.hpp"
#include "ladiff/lavae.hpp"
#include "ladiff/nn.hpp"
#include "ladiff/optim.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ladiff::diffusion {

using ag::Index;
using ag::Tape;
using ag::Var;

struct DenoiserConfig {
  int latent_dim = 256;  // D of the VAE latent slots
  int dim = 256;
  int layers = 9;
  int heads = 4;
  int text_dim = corpus::kDefaultTextDim;
  int max_slots = 5;
};

void validate(const DenoiserConfig& config);

template <typename T>
struct Stylization {
  nn::Linear<T> modulation;  // emb -> [scale | shift]
  nn::LayerNorm<T> norm;
  nn::Linear<T> out;

  Var operator()(Tape<T>& tape, Var h, Var emb) const;
};

template <typename T>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t init_seed);

  Denoiser(Denoiser&&) noexcept = default;
  Denoiser& operator=(Denoiser&&) noexcept = default;

  const DenoiserConfig& config() const { return config_; }
  ag::ParameterStore<T>& parameters() { return store_; }
  const ag::ParameterStore<T>& parameters() const { return store_; }

  /// Divides encoder latents before diffusion and multiplies samples
  /// before decoding; fitted by train_denoiser.
  double latent_scale() const { return latent_scale_; }
  void set_latent_scale(double s) { latent_scale_ = s; }

  /// eps_hat with the shape of z_t (k x latent_dim, 1 <= k <= max_slots).
  Var predict(Tape<T>& tape, Var z_t, int t, const Eigen::VectorXf& text) const;
  ag::Matrix<T> predict(const ag::Matrix<T>& z_t, int t, const Eigen::VectorXf& text) const;

 private:
  DenoiserConfig config_;
  ag::ParameterStore<T> store_;
  double latent_scale_ = 1.0;

  nn::Linear<T> latent_in_;
  ag::Parameter<T>* slot_embedding_ = nullptr;
  nn::Linear<T> time_hidden_, time_out_;
  nn::Linear<T> text_cond_;
  nn::Linear<T> text_memory_;
  struct Layer {
    nn::LayerNorm<T> norm1, norm2, norm3;
    nn::Attention<T> self_attn, cross_attn;
    nn::FeedForward<T> ff;
    Stylization<T> style1, style2, style3;
  };
  std::vector<Layer> layers_;
  nn::LayerNorm<T> out_norm_;
  nn::Linear<T> out_;
};

/// Squared error between `noise` and the prediction at z_t = forward(z0, t,
/// noise), averaged over all coordinates.
template <typename T>
Var diffusion_loss(Tape<T>& tape, const Denoiser<T>& model, const ag::Matrix<T>& z0, int t,
                   const ag::Matrix<T>& noise, const Eigen::VectorXf& text, const NoiseSchedule& schedule);

/// One training item: a frozen-encoder latent (already divided by the latent
/// scale) and its text embedding.
struct LatentItem {
  ag::Matrix<float> z0;
  Eigen::VectorXf text;
};

/// Batch objective: per item draws t ~ U{1..T} and eps ~ N(0, I), returns
/// the mean squared error over every coordinate of every item. Items are
/// processed in same-k groups. If `eps_override` is set it replaces the
/// model prediction (used to check the objective itself).
using EpsOverride = std::function<ag::Matrix<float>(std::size_t item, const ag::Matrix<float>& eps)>;
double diffusion_loss(std::span<const LatentItem> batch, const Denoiser<float>& model, const NoiseSchedule& schedule,
                      Rng& rng, const EpsOverride& eps_override = {});

struct DenoiserTrainSettings {
  int epochs = 10;
  int batch_size = 128;
  long max_steps = 0;
  AdamWSettings optimizer;
};

struct DenoiserEpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double seconds = 0.0;
};

/// Precomputes latents with the frozen VAE: posterior samples divided by a
/// scale fitted as the standard deviation of the posterior means.
struct EncodedCorpus {
  std::vector<vae::SubspacePosterior<float>> posteriors;
  std::vector<Eigen::VectorXf> texts;
  double latent_scale = 1.0;
};

EncodedCorpus encode_corpus(const vae::LaVaeModel<float>& vae, std::span<const corpus::Frames> normalized,
                            std::span<const Eigen::VectorXf> texts);

/// Second stage: optimizes the diffusion objective against latents of the
/// frozen VAE. Verifies the VAE parameter checksum is unchanged.
std::vector<DenoiserEpochRecord> train_denoiser(Denoiser<float>& model, const vae::LaVaeModel<float>& vae,
                                                const EncodedCorpus& data, const NoiseSchedule& schedule,
                                                const DenoiserTrainSettings& settings, std::uint64_t seed,
                                                const std::function<void(const DenoiserEpochRecord&)>& on_epoch = {});

/// Everything needed to turn text and a target length into motion.
struct TextToMotion {
  const vae::LaVaeModel<float>* vae = nullptr;
  const Denoiser<float>* denoiser = nullptr;
  const NoiseSchedule* schedule = nullptr;
  const corpus::TextEmbedder* embedder = nullptr;
  const corpus::Normalizer* normalizer = nullptr;
  int min_frames = 30;
  int max_frames = 200;
  int fps = corpus::kDefaultFps;
  SamplerKind sampler = SamplerKind::deterministic;
};

/// Reverse process from z_T ~ N(0, I) with k rows over the schedule's
/// inference steps. Returns z_0 in VAE latent units (scale applied).
ag::Matrix<float> sample_latent(const Denoiser<float>& denoiser, const Eigen::VectorXf& text, int k,
                                const NoiseSchedule& schedule, Rng& rng, SamplerKind kind);

/// Latent z_0 for (text, f_star); LengthError outside [min_frames, max_frames].
vae::LatentCode<float> sample_code(const TextToMotion& system, const std::string& text, int f_star, Rng& rng);

/// Decodes a latent to a denormalized motion of f_star frames with the root
/// trajectory integrated from the decoded root velocity.
corpus::MotionSequence decode_motion(const TextToMotion& system, const vae::LatentCode<float>& z, int f_star);

corpus::MotionSequence sample(const TextToMotion& system, const std::string& text, int f_star, Rng& rng);

}  // namespace ladiff::diffusion
