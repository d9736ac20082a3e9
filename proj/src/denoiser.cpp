#include "ladiff/denoiser.hpp"

#include "ladiff/error.hpp"
#include "ladiff/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace ladiff::diffusion {

void validate(const DenoiserConfig& c) {
  if (c.dim < 2 || c.layers < 1 || c.heads < 1 || c.dim % c.heads != 0) {
    throw ConfigError(fmt::format("denoiser: dim {} / layers {} / heads {} invalid", c.dim, c.layers, c.heads));
  }
  if (c.latent_dim < 1) throw ConfigError("denoiser: latent dimension must be positive");
  if (c.text_dim < 1) throw ConfigError("denoiser: text dimension must be positive");
  if (c.max_slots < 1) throw ConfigError("denoiser: max_slots must be positive");
}

template <typename T>
Var Stylization<T>::operator()(Tape<T>& tape, Var h, Var emb) const {
  const Index d = norm.gamma->value.cols();
  Var mod = modulation(tape, tape.silu(emb));
  Var scale = tape.add_scalar(tape.slice_cols(mod, 0, d), T(1));
  Var shift = tape.slice_cols(mod, d, d);
  Var y = tape.add_row(tape.mul_row(norm(tape, h), scale), shift);
  return out(tape, tape.silu(y));
}

namespace {

template <typename T>
Stylization<T> make_stylization(ag::ParameterStore<T>& store, const std::string& name, Index d, Rng& rng) {
  Stylization<T> s;
  s.modulation = nn::make_linear(store, name + ".modulation", d, 2 * d, rng, 0.1);
  s.norm = nn::make_layer_norm(store, name + ".norm", d);
  s.out = nn::make_linear(store, name + ".out", d, d, rng, 0.1);
  return s;
}

template <typename T>
ag::Matrix<T> text_row(const Eigen::VectorXf& text, int expected) {
  if (text.size() != expected) {
    throw ShapeError(fmt::format("text embedding has {} dims, expected {}", text.size(), expected));
  }
  return text.transpose().cast<T>();
}

}  // namespace

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, std::uint64_t init_seed) : config_(config) {
  validate(config_);
  Rng rng(init_seed);
  const Index d = config_.dim;
  latent_in_ = nn::make_linear(store_, "denoiser.latent_in", config_.latent_dim, d, rng);
  slot_embedding_ = &store_.create("denoiser.slot_embedding", config_.max_slots, d);
  for (Index i = 0; i < slot_embedding_->value.size(); ++i) {
    slot_embedding_->value.data()[i] = static_cast<T>(rng.normal() * 0.1);
  }
  time_hidden_ = nn::make_linear(store_, "denoiser.time_hidden", d, d, rng);
  time_out_ = nn::make_linear(store_, "denoiser.time_out", d, d, rng);
  text_cond_ = nn::make_linear(store_, "denoiser.text_cond", config_.text_dim, d, rng);
  text_memory_ = nn::make_linear(store_, "denoiser.text_memory", config_.text_dim, d, rng);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = fmt::format("denoiser.layer{}", l);
    Layer layer;
    layer.norm1 = nn::make_layer_norm(store_, p + ".norm1", d);
    layer.self_attn = nn::make_attention(store_, p + ".self_attn", d, config_.heads, rng);
    layer.style1 = make_stylization(store_, p + ".style1", d, rng);
    layer.norm2 = nn::make_layer_norm(store_, p + ".norm2", d);
    layer.cross_attn = nn::make_attention(store_, p + ".cross_attn", d, config_.heads, rng);
    layer.style2 = make_stylization(store_, p + ".style2", d, rng);
    layer.norm3 = nn::make_layer_norm(store_, p + ".norm3", d);
    layer.ff = nn::make_feed_forward(store_, p + ".ff", d, 2 * d, rng);
    layer.style3 = make_stylization(store_, p + ".style3", d, rng);
    layers_.push_back(std::move(layer));
  }
  out_norm_ = nn::make_layer_norm(store_, "denoiser.out_norm", d);
  out_ = nn::make_linear(store_, "denoiser.out", d, config_.latent_dim, rng, 0.1);
}

template <typename T>
Var Denoiser<T>::predict(Tape<T>& tape, Var z_t, int t, const Eigen::VectorXf& text) const {
  const auto& z = tape.value(z_t);
  const Index k = z.rows();
  if (z.cols() != config_.latent_dim) {
    throw ShapeError(fmt::format("denoiser: latent dim {} != {}", z.cols(), config_.latent_dim));
  }
  if (k < 1 || k > config_.max_slots) {
    throw ShapeError(fmt::format("denoiser: {} slots outside [1, {}]", k, config_.max_slots));
  }
  Var text_in = tape.constant(text_row<T>(text, config_.text_dim));
  Var temb = tape.constant(nn::timestep_embedding<T>(t, config_.dim));
  Var emb = tape.add(time_out_(tape, tape.silu(time_hidden_(tape, temb))), text_cond_(tape, text_in));
  Var memory = text_memory_(tape, text_in);

  Var x = tape.add(latent_in_(tape, z_t), tape.slice_rows(tape.param(*slot_embedding_), 0, k));
  for (const auto& layer : layers_) {
    Var h = layer.norm1(tape, x);
    x = tape.add(x, layer.style1(tape, layer.self_attn(tape, h, h), emb));
    x = tape.add(x, layer.style2(tape, layer.cross_attn(tape, layer.norm2(tape, x), memory), emb));
    x = tape.add(x, layer.style3(tape, layer.ff(tape, layer.norm3(tape, x)), emb));
  }
  return out_(tape, out_norm_(tape, x));
}

template <typename T>
ag::Matrix<T> Denoiser<T>::predict(const ag::Matrix<T>& z_t, int t, const Eigen::VectorXf& text) const {
  Tape<T> tape(false);
  return tape.value(predict(tape, tape.constant(z_t), t, text));
}

template <typename T>
Var diffusion_loss(Tape<T>& tape, const Denoiser<T>& model, const ag::Matrix<T>& z0, int t,
                   const ag::Matrix<T>& noise, const Eigen::VectorXf& text, const NoiseSchedule& schedule) {
  Var z_t = tape.constant(forward_diffuse(z0, t, noise, schedule));
  return tape.mse(model.predict(tape, z_t, t, text), tape.constant(noise));
}

namespace {

// Items sorted so equal-k latents are adjacent (same-shape sub-batches).
std::vector<std::size_t> group_by_slots(std::span<const LatentItem> batch) {
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return batch[a].z0.rows() < batch[b].z0.rows(); });
  return order;
}

ag::Matrix<float> gaussian(Index rows, Index cols, Rng& rng) {
  ag::Matrix<float> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

int draw_timestep(const NoiseSchedule& schedule, Rng& rng) {
  return 1 + static_cast<int>(rng.index(static_cast<std::size_t>(schedule.steps)));
}

}  // namespace

double diffusion_loss(std::span<const LatentItem> batch, const Denoiser<float>& model, const NoiseSchedule& schedule,
                      Rng& rng, const EpsOverride& eps_override) {
  if (batch.empty()) throw InsufficientDataError("diffusion_loss: empty batch");
  double sq = 0.0;
  double count = 0.0;
  for (std::size_t i : group_by_slots(batch)) {
    const auto& item = batch[i];
    const int t = draw_timestep(schedule, rng);
    const ag::Matrix<float> eps = gaussian(item.z0.rows(), item.z0.cols(), rng);
    const ag::Matrix<float> z_t = forward_diffuse(item.z0, t, eps, schedule);
    const ag::Matrix<float> pred = eps_override ? eps_override(i, eps) : model.predict(z_t, t, item.text);
    sq += (pred - eps).cast<double>().squaredNorm();
    count += static_cast<double>(eps.size());
  }
  const double loss = sq / count;
  if (!std::isfinite(loss)) throw NumericalError("diffusion_loss: non-finite loss");
  return loss;
}

EncodedCorpus encode_corpus(const vae::LaVaeModel<float>& vae, std::span<const corpus::Frames> normalized,
                            std::span<const Eigen::VectorXf> texts) {
  if (normalized.size() != texts.size()) throw ShapeError("encode_corpus: motions and texts differ in count");
  if (normalized.empty()) throw InsufficientDataError("encode_corpus: no samples");
  EncodedCorpus out;
  out.posteriors.resize(normalized.size());
  parallel_for(normalized.size(), [&](std::size_t i) { out.posteriors[i] = vae.encode(normalized[i]); });
  out.texts.assign(texts.begin(), texts.end());
  double sum = 0.0;
  double sq = 0.0;
  double n = 0.0;
  for (const auto& p : out.posteriors) {
    sum += p.mu.cast<double>().sum();
    sq += p.mu.cast<double>().squaredNorm();
    n += static_cast<double>(p.mu.size());
  }
  const double m = sum / n;
  out.latent_scale = std::max(std::sqrt(std::max(sq / n - m * m, 0.0)), 1e-6);
  return out;
}

std::vector<DenoiserEpochRecord> train_denoiser(Denoiser<float>& model, const vae::LaVaeModel<float>& vae,
                                                const EncodedCorpus& data, const NoiseSchedule& schedule,
                                                const DenoiserTrainSettings& settings, std::uint64_t seed,
                                                const std::function<void(const DenoiserEpochRecord&)>& on_epoch) {
  if (data.posteriors.empty()) throw InsufficientDataError("train_denoiser: no latents");
  if (settings.batch_size < 1) throw ConfigError("batch size must be positive");
  const std::uint64_t vae_checksum = vae.parameters().checksum();
  model.set_latent_scale(data.latent_scale);
  const auto scale = static_cast<float>(data.latent_scale);
  const auto noise_scale = vae.config().noise_scale;

  AdamW<float> optim(model.parameters(), settings.optimizer);
  Rng rng(seed);
  std::vector<std::size_t> order(data.posteriors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<DenoiserEpochRecord> log;
  long batch_id = 0;
  for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_sq = 0.0;
    double epoch_count = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(settings.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(settings.batch_size));
      std::vector<LatentItem> batch;
      for (std::size_t i = b; i < end; ++i) {
        const std::size_t idx = order[i];
        LatentItem item;
        item.z0 = vae::reparameterize(data.posteriors[idx], rng, noise_scale).slots / scale;
        item.text = data.texts[idx];
        batch.push_back(std::move(item));
      }
      double coords = 0.0;
      for (const auto& item : batch) coords += static_cast<double>(item.z0.size());
      model.parameters().zero_grad();
      for (std::size_t i : group_by_slots(batch)) {
        const auto& item = batch[i];
        const int t = draw_timestep(schedule, rng);
        const ag::Matrix<float> eps = gaussian(item.z0.rows(), item.z0.cols(), rng);
        Tape<float> tape;
        Var mse = diffusion_loss(tape, model, item.z0, t, eps, item.text, schedule);
        const double value = tape.scalar(mse);
        if (!std::isfinite(value)) {
          throw NumericalError(fmt::format("train_denoiser: non-finite loss in epoch {} batch {} (item {})", epoch,
                                           batch_id, order[b + i]));
        }
        // Weight so the batch loss is the mean over all coordinates of all items.
        const auto weight = static_cast<float>(static_cast<double>(item.z0.size()) / coords);
        tape.backward(tape.scale(mse, weight));
        epoch_sq += value * static_cast<double>(item.z0.size());
        epoch_count += static_cast<double>(item.z0.size());
      }
      optim.step(1.0f);
      ++batch_id;
      if (settings.max_steps > 0 && optim.steps_taken() >= settings.max_steps) break;
    }
    DenoiserEpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_sq / epoch_count;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (settings.max_steps > 0 && optim.steps_taken() >= settings.max_steps) break;
  }
  if (vae.parameters().checksum() != vae_checksum) {
    throw Error("train_denoiser: VAE parameters changed during second-stage training");
  }
  return log;
}

ag::Matrix<float> sample_latent(const Denoiser<float>& denoiser, const Eigen::VectorXf& text, int k,
                                const NoiseSchedule& schedule, Rng& rng, SamplerKind kind) {
  ag::Matrix<float> z = gaussian(k, denoiser.config().latent_dim, rng);
  const auto& steps = schedule.inference_steps;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i];
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = i + 1 < steps.size() ? schedule.alpha_bar(steps[i + 1]) : 1.0;
    const ag::Matrix<float> eps = denoiser.predict(z, t, text);
    z = kind == SamplerKind::deterministic ? deterministic_step(z, eps, ab_t, ab_prev)
                                           : ancestral_step(z, eps, ab_t, ab_prev, rng);
  }
  return z * static_cast<float>(denoiser.latent_scale());
}

vae::LatentCode<float> sample_code(const TextToMotion& system, const std::string& text, int f_star, Rng& rng) {
  if (f_star < system.min_frames || f_star > system.max_frames) {
    throw LengthError(fmt::format("target length {} outside [{}, {}]", f_star, system.min_frames, system.max_frames));
  }
  const int k = system.vae->slots_for(f_star);
  const Eigen::VectorXf emb = system.embedder->embed(text);
  return {sample_latent(*system.denoiser, emb, k, *system.schedule, rng, system.sampler)};
}

corpus::MotionSequence decode_motion(const TextToMotion& system, const vae::LatentCode<float>& z, int f_star) {
  corpus::MotionSequence m;
  m.fps = system.fps;
  m.frames = system.normalizer->denormalize(system.vae->decode(z, f_star));
  corpus::integrate_root(m);
  return m;
}

corpus::MotionSequence sample(const TextToMotion& system, const std::string& text, int f_star, Rng& rng) {
  return decode_motion(system, sample_code(system, text, f_star, rng), f_star);
}

template struct Stylization<float>;
template struct Stylization<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template Var diffusion_loss(Tape<float>&, const Denoiser<float>&, const ag::Matrix<float>&, int,
                            const ag::Matrix<float>&, const Eigen::VectorXf&, const NoiseSchedule&);
template Var diffusion_loss(Tape<double>&, const Denoiser<double>&, const ag::Matrix<double>&, int,
                            const ag::Matrix<double>&, const Eigen::VectorXf&, const NoiseSchedule&);

}  // namespace ladiff::diffusion
