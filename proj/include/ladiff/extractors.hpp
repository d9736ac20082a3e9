#pragma once

// Text and motion feature extractors for evaluation, trained contrastively on
// matched pairs of the corpus so both map into one D_f-dimensional space.

#include "ladiff/autograd.hpp"
#include "ladiff/corpus.hpp"
#include "ladiff/metrics.hpp"
#include "ladiff/nn.hpp"
#include "ladiff/optim.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ladiff::eval {

struct ExtractorConfig {
  int feature_dim = 128;  // D_f
  int dim = 64;
  int heads = 4;
  /// Motion frames are averaged in groups of this size before encoding.
  int pool = 4;
  double temperature = 0.1;
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  /// Required gap between matched and mismatched mean cosine on validation.
  double margin = 0.2;
};

void validate(const ExtractorConfig& config);

class FeatureExtractors {
 public:
  FeatureExtractors(const ExtractorConfig& config, int channels, std::uint64_t init_seed);

  FeatureExtractors(FeatureExtractors&&) noexcept = default;
  FeatureExtractors& operator=(FeatureExtractors&&) noexcept = default;

  const ExtractorConfig& config() const { return config_; }
  int channels() const { return channels_; }
  ag::ParameterStore<float>& parameters() { return store_; }
  const ag::ParameterStore<float>& parameters() const { return store_; }

  /// Unit-norm 1 x D_f features. Motions are expected normalized.
  ag::Var encode_motion(ag::Tape<float>& tape, const corpus::Frames& normalized) const;
  ag::Var encode_text(ag::Tape<float>& tape, const std::string& text) const;

  Features motion_features(std::span<const corpus::Frames> normalized) const;
  Features text_features(std::span<const std::string> texts) const;

 private:
  ExtractorConfig config_;
  int channels_;
  ag::ParameterStore<float> store_;
  std::unordered_map<std::string, int> token_index_;

  nn::Linear<float> frame_in_;
  nn::EncoderLayer<float> motion_layer_;
  nn::LayerNorm<float> motion_norm_;
  nn::Linear<float> motion_out_;

  ag::Parameter<float>* token_table_ = nullptr;
  nn::Linear<float> text_hidden_;
  nn::Linear<float> text_out_;
};

struct ExtractorEpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double margin = 0.0;  // validation matched minus mismatched cosine
};

/// Mean matched cosine minus mean mismatched cosine over all pairs.
double validation_margin(const FeatureExtractors& extractors, std::span<const corpus::Frames> normalized,
                         std::span<const std::string> texts);

/// Symmetric InfoNCE over in-batch pairs. Throws ExtractorQualityError if the
/// validation margin stays below config.margin.
FeatureExtractors train_extractors(const ExtractorConfig& config, std::span<const corpus::Frames> train_motions,
                                   std::span<const std::string> train_texts,
                                   std::span<const corpus::Frames> val_motions,
                                   std::span<const std::string> val_texts, std::uint64_t seed,
                                   const std::function<void(const ExtractorEpochRecord&)>& on_epoch = {});

}  // namespace ladiff::eval
