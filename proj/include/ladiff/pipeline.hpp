#pragma once

// Orchestration shared by the command-line tool and the end-to-end tests:
// artifact paths, per-stage seed streams, training stages and the loaded
// text-to-motion system.

#include "ladiff/analysis.hpp"
#include "ladiff/checkpoint.hpp"
#include "ladiff/config.hpp"
#include "ladiff/corpus.hpp"
#include "ladiff/denoiser.hpp"
#include "ladiff/evaluate.hpp"
#include "ladiff/extractors.hpp"
#include "ladiff/lavae.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ladiff::pipeline {

namespace fs = std::filesystem;

struct Paths {
  fs::path dir;

  fs::path corpus() const { return dir / "corpus.ladc"; }
  fs::path normalizer() const { return dir / "normalizer.ladn"; }
  fs::path vae() const { return dir / "vae.ladk"; }
  fs::path denoiser() const { return dir / "denoiser.ladk"; }
  fs::path extractor() const { return dir / "extractor.ladk"; }
  fs::path vae_log() const { return dir / "vae_train.log"; }
  fs::path denoiser_log() const { return dir / "denoiser_train.log"; }
  fs::path extractor_log() const { return dir / "extractor_train.log"; }
  fs::path report() const { return dir / "metrics.txt"; }
  fs::path analysis_dir() const { return dir / "analysis"; }
  fs::path samples_dir() const { return dir / "samples"; }
  fs::path ablation_dir() const { return dir / "ablate"; }
};

Paths paths(const ExperimentConfig& config);

/// Independent seed streams derived from the master seed.
enum class Stream : std::uint64_t {
  corpus = 1,
  vae_init,
  vae_train,
  denoiser_init,
  denoiser_train,
  extractor,
  evaluate,
  sample,
  analysis,
};
std::uint64_t stream_seed(const ExperimentConfig& config, Stream stream);

struct Data {
  std::vector<corpus::CorpusSample> samples;
  corpus::Normalizer normalizer;
  std::vector<const corpus::CorpusSample*> train, val, test;
};

/// Generates the corpus from the config and fits the normalizer on train.
Data make_data(const ExperimentConfig& config);
/// Reads the corpus and normalizer written by gen-corpus.
Data load_data(const ExperimentConfig& config);
void save_data(const ExperimentConfig& config, const Data& data);

std::vector<corpus::Frames> normalized_frames(const Data& data, std::span<const corpus::CorpusSample* const> items);
std::vector<std::string> texts_of(std::span<const corpus::CorpusSample* const> items);

/// Training stages. Progress goes to `log`; if `records` is set it also
/// receives one line per epoch (the append-only training log).
vae::LaVaeModel<float> train_vae_stage(const ExperimentConfig& config, const Data& data, std::ostream& log,
                                       std::ostream* records = nullptr);
diffusion::Denoiser<float> train_denoiser_stage(const ExperimentConfig& config, const Data& data,
                                                const vae::LaVaeModel<float>& vae, std::ostream& log,
                                                std::ostream* records = nullptr);
eval::FeatureExtractors train_extractor_stage(const ExperimentConfig& config, const Data& data, std::ostream& log,
                                              std::ostream* records = nullptr);

void save_vae(const ExperimentConfig& config, const vae::LaVaeModel<float>& model, const fs::path& path);
vae::LaVaeModel<float> load_vae(const ExperimentConfig& config, const fs::path& path);
void save_denoiser(const ExperimentConfig& config, const diffusion::Denoiser<float>& model, const fs::path& path);
diffusion::Denoiser<float> load_denoiser(const ExperimentConfig& config, const fs::path& path);
void save_extractors(const ExperimentConfig& config, const eval::FeatureExtractors& ex, const fs::path& path);
eval::FeatureExtractors load_extractors(const ExperimentConfig& config, const fs::path& path);

/// A trained text-to-motion system with stable addresses for TextToMotion.
class System {
 public:
  System(const ExperimentConfig& config, Data data, vae::LaVaeModel<float> vae, diffusion::Denoiser<float> denoiser);

  const ExperimentConfig& config() const { return config_; }
  const Data& data() const { return *data_; }
  const vae::LaVaeModel<float>& vae() const { return *vae_; }
  const diffusion::Denoiser<float>& denoiser() const { return *denoiser_; }
  const diffusion::TextToMotion& view() const { return view_; }

  corpus::MotionSequence sample(const std::string& text, int frames, Rng& rng) const;

 private:
  ExperimentConfig config_;
  std::unique_ptr<Data> data_;
  std::unique_ptr<vae::LaVaeModel<float>> vae_;
  std::unique_ptr<diffusion::Denoiser<float>> denoiser_;
  std::unique_ptr<diffusion::NoiseSchedule> schedule_;
  std::unique_ptr<corpus::TextEmbedder> embedder_;
  diffusion::TextToMotion view_;
};

/// Loads data and both checkpoints from the run directory.
System load_system(const ExperimentConfig& config);

eval::MetricReport evaluate_system(const System& system, const eval::FeatureExtractors& extractors,
                                   const eval::EvalSettings& settings, std::uint64_t seed);

// ---------------------------------------------------------------- commands

void gen_corpus(const ExperimentConfig& config, std::ostream& log);
void train_vae(const ExperimentConfig& config, std::ostream& log);
void train_denoiser(const ExperimentConfig& config, std::ostream& log);
void train_extractors(const ExperimentConfig& config, std::ostream& log);

struct SampleRequest {
  std::string text;
  int frames = 0;
  std::optional<std::set<int>> active_set;
};
/// Writes the motion (corpus record format) and a dynamics summary; returns
/// the motion file path.
fs::path sample(const ExperimentConfig& config, const SampleRequest& request, std::ostream& log);

eval::MetricReport evaluate(const ExperimentConfig& config, std::ostream& log);

struct AnalyzeRequest {
  std::vector<int> lengths;  // overrides analysis.lengths when nonempty
  std::optional<std::set<int>> active_set;
  int frames = 0;  // for the ablation output; 0 means max_frames
};
void analyze(const ExperimentConfig& config, const AnalyzeRequest& request, std::ostream& log);

struct AblationCell {
  std::string name;
  ExperimentConfig config;
};
/// One cell per listed value of each axis; every cell differs from the base
/// only in that axis and trains with the reduced ablate.* budgets.
std::vector<AblationCell> ablation_cells(const ExperimentConfig& base);
std::vector<std::pair<std::string, eval::MetricReport>> ablate(const ExperimentConfig& config, std::ostream& log);

}  // namespace ladiff::pipeline
