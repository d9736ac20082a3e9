// Command-line driver: corpus generation, both training stages, sampling,
// evaluation, latent analyses and the ablation grid.

#include "ladiff/config.hpp"
#include "ladiff/error.hpp"
#include "ladiff/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ladiff;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  int steps = 0;
};

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("--set expects key=value, got '{}'", kv));
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (c.steps > 0) cfg.diffusion.inference_steps = c.steps;
  cfg.resolve();
  std::cout << "# resolved configuration\n" << format_config(cfg) << fmt::format("# seed {}\n", cfg.seed) << std::flush;
  return cfg;
}

std::set<int> parse_active_set(const std::string& text) {
  std::set<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.insert(v);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("--active-set expects comma-separated slot numbers, got '{}'", text));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Length-aware latent diffusion for text-to-motion on a synthetic corpus"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Configuration file (key = value)");
    sub->add_option("--seed", common.seed, "Master seed (overrides the config)");
    sub->add_option("--out", common.out, "Output directory (overrides the config)");
    sub->add_option("--set", common.overrides, "Override one config key: key=value (repeatable)");
  };

  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus and normalizer");
  auto* tvae = app.add_subcommand("train-vae", "Train the length-aware VAE");
  auto* tden = app.add_subcommand("train-denoiser", "Train the latent denoiser against the frozen VAE");
  auto* tex = app.add_subcommand("train-extractors", "Train the evaluation feature extractors");
  auto* smp = app.add_subcommand("sample", "Generate one motion from text and a target length");
  auto* evl = app.add_subcommand("evaluate", "Compute the metric report on the test split");
  auto* ana = app.add_subcommand("analyze", "Attention maps, slot occupancy, ablation and length sweeps");
  auto* abl = app.add_subcommand("ablate", "Train and evaluate every cell of the ablation grid");
  for (auto* sub : {gen, tvae, tden, tex, smp, evl, ana, abl}) add_common(sub);

  pipeline::SampleRequest sample_req;
  std::string active_set;
  smp->add_option("--text", sample_req.text, "Description")->required();
  smp->add_option("--frames", sample_req.frames, "Target length in frames")->required();
  smp->add_option("--steps", common.steps, "Reverse diffusion steps");
  smp->add_option("--active-set", active_set, "Decode with only these 1-based slots, e.g. 1,2");
  evl->add_option("--steps", common.steps, "Reverse diffusion steps");

  pipeline::AnalyzeRequest analyze_req;
  ana->add_option("--lengths", analyze_req.lengths, "Lengths for the sweep and attention maps")->delimiter(',');
  ana->add_option("--active-set", active_set, "Slots kept in the subspace ablation, e.g. 1");
  ana->add_option("--frames", analyze_req.frames, "Length of the subspace ablation output");
  ana->add_option("--steps", common.steps, "Reverse diffusion steps");

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = resolve(common);
    if (gen->parsed()) {
      pipeline::gen_corpus(cfg, std::cout);
    } else if (tvae->parsed()) {
      pipeline::train_vae(cfg, std::cout);
    } else if (tden->parsed()) {
      pipeline::train_denoiser(cfg, std::cout);
    } else if (tex->parsed()) {
      pipeline::train_extractors(cfg, std::cout);
    } else if (smp->parsed()) {
      if (!active_set.empty()) sample_req.active_set = parse_active_set(active_set);
      pipeline::sample(cfg, sample_req, std::cout);
    } else if (evl->parsed()) {
      pipeline::evaluate(cfg, std::cout);
    } else if (ana->parsed()) {
      if (!active_set.empty()) analyze_req.active_set = parse_active_set(active_set);
      pipeline::analyze(cfg, analyze_req, std::cout);
    } else if (abl->parsed()) {
      pipeline::ablate(cfg, std::cout);
    }
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
