#include "ladiff/extractors.hpp"

#include "ladiff/error.hpp"
#include "ladiff/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace ladiff::eval {

using ag::Tape;
using ag::Var;

void validate(const ExtractorConfig& c) {
  if (c.feature_dim < 1 || c.dim < 2 || c.heads < 1 || c.dim % c.heads != 0) {
    throw ConfigError(fmt::format("extractor: feature_dim {} / dim {} / heads {} invalid", c.feature_dim, c.dim,
                                  c.heads));
  }
  if (c.pool < 1) throw ConfigError("extractor: pool must be positive");
  if (!(c.temperature > 0.0)) throw ConfigError("extractor: temperature must be positive");
  if (c.epochs < 0 || c.batch_size < 2) throw ConfigError("extractor: need epochs >= 0 and batch_size >= 2");
}

FeatureExtractors::FeatureExtractors(const ExtractorConfig& config, int channels, std::uint64_t init_seed)
    : config_(config), channels_(channels) {
  validate(config_);
  Rng rng(init_seed);
  const auto& vocab = corpus::vocabulary();
  for (std::size_t i = 0; i < vocab.size(); ++i) token_index_.emplace(vocab[i], static_cast<int>(i));

  frame_in_ = nn::make_linear(store_, "extractor.frame_in", channels, config_.dim, rng);
  motion_layer_ = nn::make_encoder_layer(store_, "extractor.motion_layer", config_.dim, config_.heads, rng);
  motion_norm_ = nn::make_layer_norm(store_, "extractor.motion_norm", config_.dim);
  motion_out_ = nn::make_linear(store_, "extractor.motion_out", config_.dim, config_.feature_dim, rng);

  token_table_ = &store_.create("extractor.token_table", static_cast<ag::Index>(vocab.size()), config_.dim);
  for (ag::Index i = 0; i < token_table_->value.size(); ++i) {
    token_table_->value.data()[i] = static_cast<float>(rng.normal());
  }
  text_hidden_ = nn::make_linear(store_, "extractor.text_hidden", config_.dim, config_.dim, rng);
  text_out_ = nn::make_linear(store_, "extractor.text_out", config_.dim, config_.feature_dim, rng);
}

Var FeatureExtractors::encode_motion(Tape<float>& tape, const corpus::Frames& normalized) const {
  if (normalized.cols() != channels_) {
    throw ShapeError(fmt::format("extractor: motion has {} channels, expected {}", normalized.cols(), channels_));
  }
  if (normalized.rows() < 1) throw ShapeError("extractor: empty motion");
  const ag::Index pool = config_.pool;
  const ag::Index n = (normalized.rows() + pool - 1) / pool;
  ag::Matrix<float> pooled(n, normalized.cols());
  for (ag::Index i = 0; i < n; ++i) {
    const ag::Index begin = i * pool;
    const ag::Index count = std::min(pool, normalized.rows() - begin);
    pooled.row(i) = normalized.middleRows(begin, count).colwise().mean();
  }
  Var x = tape.add(frame_in_(tape, tape.constant(std::move(pooled))),
                   tape.constant(nn::frame_positional_features<float>(n, config_.dim)));
  x = motion_norm_(tape, motion_layer_(tape, x));
  return tape.normalize_rows(motion_out_(tape, tape.mean_rows(x)));
}

Var FeatureExtractors::encode_text(Tape<float>& tape, const std::string& text) const {
  const auto tokens = corpus::tokenize(text);
  if (tokens.empty()) throw VocabularyError("extractor: empty text");
  std::vector<Var> rows;
  rows.reserve(tokens.size());
  Var table = tape.param(*token_table_);
  for (const auto& tok : tokens) {
    auto it = token_index_.find(tok);
    if (it == token_index_.end()) throw VocabularyError(fmt::format("extractor: unknown token '{}'", tok));
    rows.push_back(tape.slice_rows(table, it->second, 1));
  }
  Var bag = tape.mean_rows(tape.concat_rows(rows));
  return tape.normalize_rows(text_out_(tape, tape.gelu(text_hidden_(tape, bag))));
}

Features FeatureExtractors::motion_features(std::span<const corpus::Frames> normalized) const {
  Features out(static_cast<Eigen::Index>(normalized.size()), config_.feature_dim);
  parallel_for(normalized.size(), [&](std::size_t i) {
    Tape<float> tape(false);
    out.row(static_cast<Eigen::Index>(i)) = tape.value(encode_motion(tape, normalized[i])).cast<double>();
  });
  return out;
}

Features FeatureExtractors::text_features(std::span<const std::string> texts) const {
  Features out(static_cast<Eigen::Index>(texts.size()), config_.feature_dim);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Tape<float> tape(false);
    out.row(static_cast<Eigen::Index>(i)) = tape.value(encode_text(tape, texts[i])).cast<double>();
  }
  return out;
}

double validation_margin(const FeatureExtractors& extractors, std::span<const corpus::Frames> normalized,
                         std::span<const std::string> texts) {
  if (normalized.size() != texts.size() || normalized.size() < 2) {
    throw InsufficientDataError("validation_margin: need at least two matched pairs");
  }
  const Features m = extractors.motion_features(normalized);
  const Features t = extractors.text_features(texts);
  const Eigen::MatrixXd cos = m * t.transpose();
  const double n = static_cast<double>(cos.rows());
  const double matched = cos.diagonal().mean();
  const double mismatched = (cos.sum() - cos.diagonal().sum()) / (n * n - n);
  return matched - mismatched;
}

FeatureExtractors train_extractors(const ExtractorConfig& config, std::span<const corpus::Frames> train_motions,
                                   std::span<const std::string> train_texts,
                                   std::span<const corpus::Frames> val_motions,
                                   std::span<const std::string> val_texts, std::uint64_t seed,
                                   const std::function<void(const ExtractorEpochRecord&)>& on_epoch) {
  if (train_motions.empty() || train_motions.size() != train_texts.size()) {
    throw InsufficientDataError("train_extractors: need a nonempty set of matched training pairs");
  }
  FeatureExtractors ex(config, static_cast<int>(train_motions.front().cols()), derive_seed(seed, 0));
  AdamWSettings opt;
  opt.lr = config.lr;
  AdamW<float> optim(ex.parameters(), opt);
  Rng rng(derive_seed(seed, 1));
  std::vector<std::size_t> order(train_motions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const float inv_temp = static_cast<float>(1.0 / config.temperature);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b + 1 < order.size(); b += batch) {
      const std::size_t end = std::min(order.size(), b + batch);
      if (end - b < 2) break;
      Tape<float> tape;
      std::vector<Var> ms, ts;
      std::vector<int> targets;
      for (std::size_t i = b; i < end; ++i) {
        ms.push_back(ex.encode_motion(tape, train_motions[order[i]]));
        ts.push_back(ex.encode_text(tape, train_texts[order[i]]));
        targets.push_back(static_cast<int>(i - b));
      }
      Var logits = tape.scale(tape.matmul_nt(tape.concat_rows(ms), tape.concat_rows(ts)), inv_temp);
      Var loss = tape.scale(tape.add(tape.cross_entropy_rows(logits, targets),
                                     tape.cross_entropy_rows(tape.transpose(logits), targets)),
                            0.5f);
      const double value = tape.scalar(loss);
      if (!std::isfinite(value)) {
        throw NumericalError(fmt::format("train_extractors: non-finite loss in epoch {}", epoch));
      }
      ex.parameters().zero_grad();
      tape.backward(loss);
      optim.step(1.0f);
      loss_sum += value;
      ++steps;
    }
    ExtractorEpochRecord rec;
    rec.epoch = epoch;
    rec.loss = steps > 0 ? loss_sum / steps : 0.0;
    rec.margin = val_motions.size() >= 2 ? validation_margin(ex, val_motions, val_texts) : 0.0;
    if (on_epoch) on_epoch(rec);
  }

  const double margin = validation_margin(ex, val_motions, val_texts);
  if (margin < config.margin) {
    throw ExtractorQualityError(fmt::format(
        "feature extractors reached a validation margin of {:.3f}, below the required {:.3f}", margin, config.margin));
  }
  return ex;
}

}  // namespace ladiff::eval
