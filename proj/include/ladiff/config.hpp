#pragma once

// Experiment configuration: one flat "key = value" document whose dotted
// prefixes group the settings of each stage.

#include "ladiff/corpus.hpp"
#include "ladiff/denoiser.hpp"
#include "ladiff/diffusion.hpp"
#include "ladiff/evaluate.hpp"
#include "ladiff/extractors.hpp"
#include "ladiff/lavae.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ladiff {

struct DiffusionSettings {
  int steps = 1000;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::linear;
  int inference_steps = 20;
  diffusion::SamplerKind sampler = diffusion::SamplerKind::deterministic;
};

struct AnalysisSettings {
  std::vector<int> lengths = {48, 84, 170};
  std::vector<std::string> texts = {"a person walks forward for four steps", "a person sits down on a chair"};
  int sweep_samples = 8;
};

/// Each list is one axis; cells vary a single axis from the base config.
/// An r of 0 stands for "all" (r = max_frames).
struct AblationGrid {
  std::vector<int> r = {16, 32, 48, 64, 0};
  std::vector<double> dvae_fraction = {0.0, 0.33, 0.5};
  std::vector<vae::DvaeTarget> dvae_target = {vae::DvaeTarget::latent};
  std::vector<bool> length_aware = {false};
  int vae_epochs = 4;
  int denoiser_epochs = 4;
  int replicates = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "run";

  corpus::CorpusConfig corpus;
  std::uint64_t text_seed = 1234;
  int text_dim = corpus::kDefaultTextDim;

  vae::LaVaeConfig lavae;
  vae::TrainSettings vae_train;

  diffusion::DenoiserConfig denoiser;
  DiffusionSettings diffusion;
  diffusion::DenoiserTrainSettings denoiser_train;

  eval::ExtractorConfig extractor;
  eval::EvalSettings eval;
  AnalysisSettings analysis;
  AblationGrid ablate;

  /// Copies shared values into the per-stage configs (max frames, slot
  /// count K, text dimension) and validates everything.
  void resolve();
};

/// Parses a document; unknown keys raise UnknownKeyError, unparsable values
/// TypeMismatchError, both naming the key and line. Keys not given keep
/// their defaults. The result is resolved.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, in a fixed order.
std::string format_config(const ExperimentConfig& config);

/// Sets one key from its textual value (same rules as parse_config).
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

enum class Component : std::uint32_t { vae = 1, denoiser = 2, extractor = 3 };
std::string_view component_name(Component c);

/// Hash of the settings that determine a component's parameter shapes and
/// meaning. Training-only settings are excluded.
std::uint64_t config_digest(const ExperimentConfig& config, Component component);

}  // namespace ladiff
