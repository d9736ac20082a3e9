#include "ladiff/lavae.hpp"

#include "ladiff/error.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace ladiff::vae {

int LaVaeConfig::max_slots() const {
  return activation_count(max_frames, frames_per_slot);
}

void validate(const LaVaeConfig& c) {
  if (c.frames_per_slot < 1) throw ConfigError("lavae.r must be at least 1");
  if (c.max_frames < 1) throw ConfigError("max_frames must be at least 1");
  if (c.channels < 1) throw ConfigError("channel count must be positive");
  if (c.dim < 2 || c.layers < 1 || c.heads < 1 || c.dim % c.heads != 0) {
    throw ConfigError(fmt::format("lavae: dim {} / layers {} / heads {} invalid", c.dim, c.layers, c.heads));
  }
  if (c.dvae_fraction < 0.0 || c.dvae_fraction > 1.0) throw ConfigError("lavae.dvae_fraction must be in [0, 1]");
  if (c.dvae_std < 0.0) throw ConfigError("lavae.dvae_std must be non-negative");
  if (c.kl_weight < 0.0) throw ConfigError("lavae.kl_weight must be non-negative");
}

int activation_count(int frames, int frames_per_slot, int max_slots) {
  if (frames <= 0) throw DomainError(fmt::format("activation_count: frame count {} must be positive", frames));
  if (frames_per_slot <= 0) {
    throw DomainError(fmt::format("activation_count: frames per subspace {} must be positive", frames_per_slot));
  }
  const int k = (frames + frames_per_slot - 1) / frames_per_slot;
  return std::clamp(k, 1, std::max(1, max_slots));
}

namespace {

template <typename T>
void init_normal(ag::Parameter<T>& p, Rng& rng, double std) {
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.normal() * std);
}

}  // namespace

template <typename T>
LaVaeModel<T>::LaVaeModel(const LaVaeConfig& config, std::uint64_t init_seed) : config_(config) {
  validate(config_);
  Rng rng(init_seed);
  const Index d = config_.dim;
  const Index k_max = config_.max_slots();

  frame_in_ = nn::make_linear(store_, "encoder.frame_in", config_.channels, d, rng);
  slot_queries_ = &store_.create("encoder.slot_queries", k_max, d);
  init_normal(*slot_queries_, rng, 1.0);
  for (int l = 0; l < config_.layers; ++l) {
    encoder_.push_back(nn::make_encoder_layer(store_, fmt::format("encoder.layer{}", l), d, config_.heads, rng));
  }
  encoder_norm_ = nn::make_layer_norm(store_, "encoder.norm", d);
  posterior_head_ = nn::make_linear(store_, "encoder.posterior", d, 2 * d, rng);

  latent_in_ = nn::make_linear(store_, "decoder.latent_in", d, d, rng);
  slot_embedding_ = &store_.create("decoder.slot_embedding", k_max, d);
  init_normal(*slot_embedding_, rng, 1.0);
  query_in_ = nn::make_linear(store_, "decoder.query_in", d, d, rng);
  for (int l = 0; l < config_.layers; ++l) {
    decoder_.push_back(nn::make_decoder_layer(store_, fmt::format("decoder.layer{}", l), d, config_.heads, rng));
  }
  decoder_norm_ = nn::make_layer_norm(store_, "decoder.norm", d);
  frame_out_ = nn::make_linear(store_, "decoder.frame_out", d, config_.channels, rng);
}

template <typename T>
int LaVaeModel<T>::slots_for(int frames) const {
  if (frames < 1 || frames > config_.max_frames) {
    throw LengthError(fmt::format("length {} outside [1, {}]", frames, config_.max_frames));
  }
  if (!config_.length_aware) return config_.max_slots();
  return activation_count(frames, config_.frames_per_slot, config_.max_slots());
}

template <typename T>
typename LaVaeModel<T>::PosteriorVars LaVaeModel<T>::encode(Tape<T>& tape, Var frames) const {
  const auto& x = tape.value(frames);
  if (x.cols() != config_.channels) {
    throw ShapeError(fmt::format("encode: {} channels, expected {}", x.cols(), config_.channels));
  }
  const int f = static_cast<int>(x.rows());
  if (f > config_.max_frames) {
    throw LengthError(fmt::format("encode: {} frames exceeds F_max = {}", f, config_.max_frames));
  }
  const int k = slots_for(f);
  const Index d = config_.dim;

  Var tokens = tape.add(frame_in_(tape, frames), tape.constant(nn::frame_positional_features<T>(f, d)));
  Var queries = tape.slice_rows(tape.param(*slot_queries_), 0, k);
  const Var parts[2] = {queries, tokens};
  Var h = tape.concat_rows(parts);
  for (const auto& layer : encoder_) h = layer(tape, h);
  h = encoder_norm_(tape, tape.slice_rows(h, 0, k));
  Var stats = posterior_head_(tape, h);
  Var mu = tape.slice_cols(stats, 0, d);
  Var log_var = tape.clamp(tape.slice_cols(stats, d, d), T(kLogVarMin), T(kLogVarMax));
  return {mu, log_var};
}

template <typename T>
void LaVaeModel<T>::check_decode_shape(Index k, Index d, int frames) const {
  if (frames < 1 || frames > config_.max_frames) {
    throw LengthError(fmt::format("decode: target length {} outside [1, {}]", frames, config_.max_frames));
  }
  if (d != config_.dim) throw ShapeError(fmt::format("decode: latent dim {} != {}", d, config_.dim));
  const int expected = slots_for(frames);
  if (k != expected) {
    throw ShapeError(fmt::format("decode: {} latent slots supplied but {} frames require {}", k, frames, expected));
  }
}

template <typename T>
Var LaVaeModel<T>::decode(Tape<T>& tape, Var z, int frames, std::vector<Matrix<T>>* cross_attention) const {
  const Index k = tape.value(z).rows();
  check_decode_shape(k, tape.value(z).cols(), frames);
  const Index d = config_.dim;

  Var memory = tape.add(latent_in_(tape, z), tape.slice_rows(tape.param(*slot_embedding_), 0, k));
  Var h = query_in_(tape, tape.constant(nn::frame_positional_features<T>(frames, d)));
  if (cross_attention != nullptr) cross_attention->clear();
  for (const auto& layer : decoder_) {
    if (cross_attention != nullptr) {
      Matrix<T> w;
      h = layer(tape, h, memory, &w);
      cross_attention->push_back(std::move(w));
    } else {
      h = layer(tape, h, memory);
    }
  }
  return frame_out_(tape, decoder_norm_(tape, h));
}

template <typename T>
SubspacePosterior<T> LaVaeModel<T>::encode(const corpus::Frames& normalized) const {
  Tape<T> tape(false);
  auto vars = encode(tape, tape.constant(normalized.template cast<T>()));
  return {tape.value(vars.mu), tape.value(vars.log_var)};
}

template <typename T>
corpus::Frames LaVaeModel<T>::decode(const LatentCode<T>& z, int frames,
                                     std::vector<Matrix<T>>* cross_attention) const {
  Tape<T> tape(false);
  Var out = decode(tape, tape.constant(z.slots), frames, cross_attention);
  return tape.value(out).template cast<float>();
}

template <typename T>
LatentCode<T> reparameterize(const SubspacePosterior<T>& posterior, Rng& rng, NoiseScale scale) {
  if (posterior.mu.rows() != posterior.log_var.rows() || posterior.mu.cols() != posterior.log_var.cols()) {
    throw ShapeError("reparameterize: mu and log_var shapes differ");
  }
  LatentCode<T> z;
  z.slots.resize(posterior.mu.rows(), posterior.mu.cols());
  const double power = scale == NoiseScale::variance ? 1.0 : 0.5;
  for (Index i = 0; i < z.slots.rows(); ++i) {
    for (Index j = 0; j < z.slots.cols(); ++j) {
      const double lv = std::clamp(static_cast<double>(posterior.log_var(i, j)), kLogVarMin, kLogVarMax);
      const double spread = std::exp(power * lv);
      z.slots(i, j) = static_cast<T>(static_cast<double>(posterior.mu(i, j)) + spread * rng.normal());
    }
  }
  return z;
}

template <typename T>
Var reparameterize(Tape<T>& tape, Var mu, Var log_var, const Matrix<T>& noise, NoiseScale scale) {
  Var spread = scale == NoiseScale::variance ? tape.exp(log_var) : tape.exp(tape.scale(log_var, T(0.5)));
  return tape.add(mu, tape.mul(spread, tape.constant(noise)));
}

corpus::Frames perturb_frames(const corpus::Frames& frames, double fraction, double std, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw DomainError(fmt::format("perturb_frames: fraction {} outside [0, 1]", fraction));
  }
  if (!(std >= 0.0)) throw DomainError("perturb_frames: std must be non-negative");
  corpus::Frames out = frames;
  const auto n = static_cast<std::size_t>(frames.rows());
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (count == 0 || std == 0.0) return out;
  for (std::size_t f : rng.choose(n, count)) {
    for (Index c = 0; c < out.cols(); ++c) {
      out(static_cast<Index>(f), c) += static_cast<float>(std * rng.normal());
    }
  }
  return out;
}

corpus::MotionSequence perturb_frames(const corpus::MotionSequence& motion, double fraction, double std,
                                      Rng& rng) {
  return corpus::MotionSequence{perturb_frames(motion.frames, fraction, std, rng), motion.fps};
}

template <typename T>
Matrix<T> perturb_latent(const Matrix<T>& z, double fraction, double std, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw DomainError(fmt::format("perturb_latent: fraction {} outside [0, 1]", fraction));
  }
  Matrix<T> out = z;
  const auto n = static_cast<std::size_t>(z.size());
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (count == 0 || std == 0.0) return out;
  for (std::size_t i : rng.choose(n, count)) out.data()[i] += static_cast<T>(std * rng.normal());
  return out;
}

template <typename T>
Var kl_divergence(Tape<T>& tape, Var mu, Var log_var) {
  // 0.5 * sum(mu^2 + exp(lv) - lv - 1)
  Var terms = tape.sub(tape.add(tape.square(mu), tape.exp(log_var)), log_var);
  return tape.scale(tape.add_scalar(tape.sum(terms), -static_cast<T>(tape.value(mu).size())), T(0.5));
}

template <typename T>
VaeLoss vae_loss(const corpus::Frames& clean, const corpus::Frames& reconstructed,
                 const SubspacePosterior<T>& posterior, double kl_weight) {
  if (clean.rows() != reconstructed.rows() || clean.cols() != reconstructed.cols()) {
    throw ShapeError(fmt::format("vae_loss: clean {}x{} vs reconstruction {}x{}", clean.rows(), clean.cols(),
                                 reconstructed.rows(), reconstructed.cols()));
  }
  VaeLoss l;
  l.recon = (clean.cast<double>() - reconstructed.cast<double>()).array().square().mean();
  const auto mu = posterior.mu.template cast<double>().array();
  const auto lv = posterior.log_var.template cast<double>().array().max(kLogVarMin).min(kLogVarMax);
  l.kl = 0.5 * (mu.square() + lv.exp() - lv - 1.0).sum();
  l.total = l.recon + kl_weight * l.kl;
  return l;
}

template <typename T>
VaeLossVars<T> vae_loss(Tape<T>& tape, const LaVaeModel<T>& model, const Matrix<T>& clean, const Matrix<T>& input,
                        const Matrix<T>& noise, const Matrix<T>* latent_perturbation, double kl_weight) {
  if (clean.rows() != input.rows() || clean.cols() != input.cols()) {
    throw ShapeError("vae_loss: clean and perturbed inputs differ in shape");
  }
  auto post = model.encode(tape, tape.constant(input));
  Var z = reparameterize(tape, post.mu, post.log_var, noise, model.config().noise_scale);
  if (latent_perturbation != nullptr) z = tape.add(z, tape.constant(*latent_perturbation));
  Var recon_frames = model.decode(tape, z, static_cast<int>(clean.rows()));
  Var recon = tape.mse(recon_frames, tape.constant(clean));
  Var kl = kl_divergence(tape, post.mu, post.log_var);
  Var total = tape.add(recon, tape.scale(kl, static_cast<T>(kl_weight)));
  return {total, recon, kl};
}

std::string format_epoch(const EpochRecord& r) {
  return fmt::format("{} {:.6g} {:.6g} {:.6g} {:.3f}", r.epoch, r.recon, r.kl, r.total, r.seconds);
}

std::vector<EpochRecord> train_vae(LaVaeModel<float>& model, std::span<const corpus::Frames> train,
                                   const TrainSettings& settings, std::uint64_t seed, const EpochCallback& on_epoch) {
  if (train.empty()) throw InsufficientDataError("train_vae: empty training split");
  if (settings.batch_size < 1) throw ConfigError("batch size must be positive");
  const auto& cfg = model.config();
  AdamW<float> optim(model.parameters(), settings.optimizer);
  Rng rng(seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochRecord> log;
  long batch_id = 0;
  for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng.engine());
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(settings.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(settings.batch_size));
      model.parameters().zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        const corpus::Frames& clean = train[order[i]];
        const bool latent = cfg.dvae_target == DvaeTarget::latent;
        corpus::Frames input = latent ? clean : perturb_frames(clean, cfg.dvae_fraction, cfg.dvae_std, rng);
        const int k = model.slots_for(static_cast<int>(clean.rows()));
        Matrix<float> noise(k, cfg.dim);
        for (Index j = 0; j < noise.size(); ++j) noise.data()[j] = static_cast<float>(rng.normal());
        Matrix<float> latent_noise;
        if (latent) {
          latent_noise = perturb_latent<float>(Matrix<float>::Zero(k, cfg.dim), cfg.dvae_fraction, cfg.dvae_std, rng);
        }
        Tape<float> tape;
        auto loss = vae_loss(tape, model, clean, input, noise, latent ? &latent_noise : nullptr, cfg.kl_weight);
        const double total = tape.scalar(loss.total);
        if (!std::isfinite(total)) {
          throw NumericalError(fmt::format("train_vae: non-finite loss in epoch {} batch {} (sample {})", epoch,
                                           batch_id, order[i]));
        }
        tape.backward(loss.total);
        rec.recon += tape.scalar(loss.recon);
        rec.kl += tape.scalar(loss.kl);
        rec.total += total;
        ++seen;
      }
      optim.step(1.0f / static_cast<float>(end - b));
      ++batch_id;
      if (settings.max_steps > 0 && optim.steps_taken() >= settings.max_steps) break;
    }
    rec.recon /= static_cast<double>(seen);
    rec.kl /= static_cast<double>(seen);
    rec.total /= static_cast<double>(seen);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (settings.max_steps > 0 && optim.steps_taken() >= settings.max_steps) break;
  }
  return log;
}

#define LADIFF_INSTANTIATE(T)                                                                                   \
  template class LaVaeModel<T>;                                                                                 \
  template LatentCode<T> reparameterize(const SubspacePosterior<T>&, Rng&, NoiseScale);                         \
  template Var reparameterize(Tape<T>&, Var, Var, const Matrix<T>&, NoiseScale);                                \
  template Matrix<T> perturb_latent(const Matrix<T>&, double, double, Rng&);                                    \
  template Var kl_divergence(Tape<T>&, Var, Var);                                                               \
  template VaeLoss vae_loss(const corpus::Frames&, const corpus::Frames&, const SubspacePosterior<T>&, double); \
  template VaeLossVars<T> vae_loss(Tape<T>&, const LaVaeModel<T>&, const Matrix<T>&, const Matrix<T>&,          \
                                   const Matrix<T>&, const Matrix<T>*, double);

LADIFF_INSTANTIATE(float)
LADIFF_INSTANTIATE(double)

#undef LADIFF_INSTANTIATE

}  // namespace ladiff::vae
