#include "ladiff/pipeline.hpp"

#include "ladiff/error.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <fmt/format.h>

namespace ladiff::pipeline {

Paths paths(const ExperimentConfig& config) { return {fs::path(config.out)}; }

std::uint64_t stream_seed(const ExperimentConfig& config, Stream stream) {
  return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

namespace {

void split_views(Data& d) {
  d.train = corpus::select(d.samples, corpus::Split::train);
  d.val = corpus::select(d.samples, corpus::Split::val);
  d.test = corpus::select(d.samples, corpus::Split::test);
}

void require(const fs::path& p, const char* produced_by) {
  if (!fs::exists(p)) {
    throw MissingArtifactError(fmt::format("missing artifact '{}'; run `{}` first", p.string(), produced_by));
  }
}

std::ofstream open_log(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::app);
  if (!out) throw FormatError(fmt::format("cannot open log '{}'", p.string()));
  return out;
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw FormatError(fmt::format("cannot open '{}' for writing", p.string()));
  return out;
}

diffusion::NoiseSchedule schedule_of(const ExperimentConfig& c) {
  return diffusion::build_schedule(c.diffusion.steps, c.diffusion.schedule, c.diffusion.inference_steps);
}

}  // namespace

Data make_data(const ExperimentConfig& config) {
  Data d;
  d.samples = corpus::generate_corpus(config.corpus, stream_seed(config, Stream::corpus));
  split_views(d);
  if (d.train.empty()) throw InsufficientDataError("corpus has an empty train split");
  d.normalizer = corpus::fit_normalizer(d.train);
  return d;
}

Data load_data(const ExperimentConfig& config) {
  const Paths p = paths(config);
  require(p.corpus(), "gen-corpus");
  require(p.normalizer(), "gen-corpus");
  Data d;
  d.samples = corpus::read_corpus(p.corpus());
  d.normalizer = corpus::read_normalizer(p.normalizer());
  split_views(d);
  for (const auto& s : d.samples) {
    if (s.motion.length() > config.corpus.max_frames || s.motion.length() < 1) {
      throw ConfigError(fmt::format("corpus sample {} has {} frames but corpus.max_frames is {}", s.id,
                                    s.motion.length(), config.corpus.max_frames));
    }
  }
  return d;
}

void save_data(const ExperimentConfig& config, const Data& data) {
  const Paths p = paths(config);
  corpus::write_corpus(p.corpus(), data.samples, config.corpus.fps);
  corpus::write_normalizer(p.normalizer(), data.normalizer);
}

std::vector<corpus::Frames> normalized_frames(const Data& data, std::span<const corpus::CorpusSample* const> items) {
  std::vector<corpus::Frames> out;
  out.reserve(items.size());
  for (const auto* s : items) out.push_back(data.normalizer.normalize(s->motion.frames));
  return out;
}

std::vector<std::string> texts_of(std::span<const corpus::CorpusSample* const> items) {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto* s : items) out.push_back(s->descriptor.text);
  return out;
}

vae::LaVaeModel<float> train_vae_stage(const ExperimentConfig& config, const Data& data, std::ostream& log,
                                       std::ostream* records) {
  vae::LaVaeModel<float> model(config.lavae, stream_seed(config, Stream::vae_init));
  const auto frames = normalized_frames(data, data.train);
  log << fmt::format("train-vae: {} sequences, K={}, r={}, {} parameters\n", frames.size(), config.lavae.max_slots(),
                     config.lavae.frames_per_slot, model.parameters().scalar_count());
  vae::train_vae(model, frames, config.vae_train, stream_seed(config, Stream::vae_train),
                 [&](const vae::EpochRecord& r) {
                   log << "vae " << vae::format_epoch(r) << '\n' << std::flush;
                   if (records) *records << vae::format_epoch(r) << '\n' << std::flush;
                 });
  return model;
}

diffusion::Denoiser<float> train_denoiser_stage(const ExperimentConfig& config, const Data& data,
                                                const vae::LaVaeModel<float>& vae, std::ostream& log,
                                                std::ostream* records) {
  diffusion::Denoiser<float> model(config.denoiser, stream_seed(config, Stream::denoiser_init));
  const corpus::TextEmbedder embedder(config.text_seed, config.text_dim);
  const auto frames = normalized_frames(data, data.train);
  std::vector<Eigen::VectorXf> texts;
  for (const auto* s : data.train) texts.push_back(embedder.embed(s->descriptor.text));
  const auto encoded = diffusion::encode_corpus(vae, frames, texts);
  const auto schedule = schedule_of(config);
  log << fmt::format("train-denoiser: {} latents, latent scale {:.6g}, {} parameters\n", encoded.posteriors.size(),
                     encoded.latent_scale, model.parameters().scalar_count());
  diffusion::train_denoiser(model, vae, encoded, schedule, config.denoiser_train,
                            stream_seed(config, Stream::denoiser_train), [&](const diffusion::DenoiserEpochRecord& r) {
                              const auto line = fmt::format("{} {:.6f} {:.2f}\n", r.epoch, r.loss, r.seconds);
                              log << "denoiser " << line << std::flush;
                              if (records) *records << line << std::flush;
                            });
  return model;
}

eval::FeatureExtractors train_extractor_stage(const ExperimentConfig& config, const Data& data, std::ostream& log,
                                              std::ostream* records) {
  const auto train = normalized_frames(data, data.train);
  const auto val = normalized_frames(data, data.val);
  log << fmt::format("train-extractors: {} train pairs, {} validation pairs\n", train.size(), val.size());
  return eval::train_extractors(config.extractor, train, texts_of(data.train), val, texts_of(data.val),
                                stream_seed(config, Stream::extractor), [&](const eval::ExtractorEpochRecord& r) {
                                  const auto line = fmt::format("{} {:.6f} {:.4f}\n", r.epoch, r.loss, r.margin);
                                  log << "extractor " << line << std::flush;
                                  if (records) *records << line << std::flush;
                                });
}

void save_vae(const ExperimentConfig& config, const vae::LaVaeModel<float>& model, const fs::path& path) {
  save_checkpoint(path, Component::vae, config_digest(config, Component::vae), model.parameters());
}

vae::LaVaeModel<float> load_vae(const ExperimentConfig& config, const fs::path& path) {
  vae::LaVaeModel<float> model(config.lavae, stream_seed(config, Stream::vae_init));
  load_checkpoint(path, Component::vae, config_digest(config, Component::vae), model.parameters());
  return model;
}

void save_denoiser(const ExperimentConfig& config, const diffusion::Denoiser<float>& model, const fs::path& path) {
  save_checkpoint(path, Component::denoiser, config_digest(config, Component::denoiser), model.parameters(),
                  {{"latent_scale", static_cast<float>(model.latent_scale())}});
}

diffusion::Denoiser<float> load_denoiser(const ExperimentConfig& config, const fs::path& path) {
  diffusion::Denoiser<float> model(config.denoiser, stream_seed(config, Stream::denoiser_init));
  const auto meta =
      load_checkpoint(path, Component::denoiser, config_digest(config, Component::denoiser), model.parameters());
  const auto it = meta.find("latent_scale");
  if (it == meta.end()) throw FormatError(fmt::format("{}: missing meta.latent_scale", path.string()));
  model.set_latent_scale(it->second);
  return model;
}

void save_extractors(const ExperimentConfig& config, const eval::FeatureExtractors& ex, const fs::path& path) {
  save_checkpoint(path, Component::extractor, config_digest(config, Component::extractor), ex.parameters());
}

eval::FeatureExtractors load_extractors(const ExperimentConfig& config, const fs::path& path) {
  eval::FeatureExtractors ex(config.extractor, corpus::kChannels, 0);
  load_checkpoint(path, Component::extractor, config_digest(config, Component::extractor), ex.parameters());
  return ex;
}

System::System(const ExperimentConfig& config, Data data, vae::LaVaeModel<float> vae,
               diffusion::Denoiser<float> denoiser)
    : config_(config),
      data_(std::make_unique<Data>(std::move(data))),
      vae_(std::make_unique<vae::LaVaeModel<float>>(std::move(vae))),
      denoiser_(std::make_unique<diffusion::Denoiser<float>>(std::move(denoiser))),
      schedule_(std::make_unique<diffusion::NoiseSchedule>(schedule_of(config))),
      embedder_(std::make_unique<corpus::TextEmbedder>(config.text_seed, config.text_dim)) {
  view_.vae = vae_.get();
  view_.denoiser = denoiser_.get();
  view_.schedule = schedule_.get();
  view_.embedder = embedder_.get();
  view_.normalizer = &data_->normalizer;
  view_.min_frames = config.corpus.min_frames;
  view_.max_frames = config.corpus.max_frames;
  view_.fps = config.corpus.fps;
  view_.sampler = config.diffusion.sampler;
}

corpus::MotionSequence System::sample(const std::string& text, int frames, Rng& rng) const {
  return diffusion::sample(view_, text, frames, rng);
}

System load_system(const ExperimentConfig& config) {
  const Paths p = paths(config);
  Data data = load_data(config);
  require(p.vae(), "train-vae");
  require(p.denoiser(), "train-denoiser");
  auto vae = load_vae(config, p.vae());
  auto den = load_denoiser(config, p.denoiser());
  return System(config, std::move(data), std::move(vae), std::move(den));
}

eval::MetricReport evaluate_system(const System& system, const eval::FeatureExtractors& extractors,
                                   const eval::EvalSettings& settings, std::uint64_t seed) {
  const eval::Generator gen = [&](const eval::GenerationRequest& req, Rng& rng) {
    return system.sample(req.text, req.frames, rng);
  };
  return eval::evaluate(gen, system.data().test, extractors, system.data().normalizer, settings, seed);
}

// ---------------------------------------------------------------- commands

void gen_corpus(const ExperimentConfig& config, std::ostream& log) {
  const Data d = make_data(config);
  save_data(config, d);
  log << fmt::format("gen-corpus: {} samples (train {}, val {}, test {}) -> {}\n", d.samples.size(), d.train.size(),
                     d.val.size(), d.test.size(), paths(config).corpus().string());
}

void train_vae(const ExperimentConfig& config, std::ostream& log) {
  const Paths p = paths(config);
  const Data d = load_data(config);
  auto records = open_log(p.vae_log());
  records << fmt::format("# seed {} r {} length_aware {} dvae_fraction {} dvae_target {}\n", config.seed,
                         config.lavae.frames_per_slot, config.lavae.length_aware, config.lavae.dvae_fraction,
                         config.lavae.dvae_target == vae::DvaeTarget::input ? "input" : "latent");
  const auto model = train_vae_stage(config, d, log, &records);
  save_vae(config, model, p.vae());
  log << fmt::format("train-vae: wrote {}\n", p.vae().string());
}

void train_denoiser(const ExperimentConfig& config, std::ostream& log) {
  const Paths p = paths(config);
  const Data d = load_data(config);
  require(p.vae(), "train-vae");
  const auto vae = load_vae(config, p.vae());
  auto records = open_log(p.denoiser_log());
  records << fmt::format("# seed {}\n", config.seed);
  const auto model = train_denoiser_stage(config, d, vae, log, &records);
  save_denoiser(config, model, p.denoiser());
  log << fmt::format("train-denoiser: wrote {}\n", p.denoiser().string());
}

void train_extractors(const ExperimentConfig& config, std::ostream& log) {
  const Paths p = paths(config);
  const Data d = load_data(config);
  auto records = open_log(p.extractor_log());
  records << fmt::format("# seed {}\n", config.seed);
  const auto ex = train_extractor_stage(config, d, log, &records);
  save_extractors(config, ex, p.extractor());
  log << fmt::format("train-extractors: wrote {}\n", p.extractor().string());
}

fs::path sample(const ExperimentConfig& config, const SampleRequest& request, std::ostream& log) {
  const System system = load_system(config);
  if (request.frames < config.corpus.min_frames || request.frames > config.corpus.max_frames) {
    throw LengthError(fmt::format("--frames {} outside [{}, {}]", request.frames, config.corpus.min_frames,
                                  config.corpus.max_frames));
  }
  const int k = system.vae().slots_for(request.frames);
  log << fmt::format("sample: text \"{}\", frames {}, k={} of K={}\n", request.text, request.frames, k,
                     config.lavae.max_slots());
  Rng rng(stream_seed(config, Stream::sample));
  corpus::MotionSequence motion;
  if (request.active_set) {
    motion = analysis::subspace_ablation(system.view(), request.text, request.frames, *request.active_set, rng);
  } else {
    motion = system.sample(request.text, request.frames, rng);
  }
  const Paths p = paths(config);
  const fs::path out = p.samples_dir() / fmt::format("sample_f{}_seed{}.ladc", request.frames, config.seed);
  corpus::write_motion(out, motion, request.text);
  const auto stats = eval::dynamics_stats(motion);
  auto summary = open_out(fs::path(out).replace_extension(".txt"));
  const std::string line = fmt::format("avg_vel = {:.4f}\navg_acc = {:.4f}\nmax_acc = {:.4f}\n", stats.avg_vel,
                                       stats.avg_acc, stats.max_acc);
  summary << fmt::format("text = {}\nframes = {}\nk = {}\n", request.text, request.frames, k) << line;
  log << line << fmt::format("sample: wrote {}\n", out.string());
  return out;
}

eval::MetricReport evaluate(const ExperimentConfig& config, std::ostream& log) {
  const Paths p = paths(config);
  require(p.extractor(), "train-extractors");
  const System system = load_system(config);
  const auto ex = load_extractors(config, p.extractor());
  const double margin =
      eval::validation_margin(ex, normalized_frames(system.data(), system.data().val), texts_of(system.data().val));
  if (margin < config.extractor.margin) {
    throw ExtractorQualityError(fmt::format("extractor validation margin {:.3f} below {:.3f}; retrain extractors",
                                            margin, config.extractor.margin));
  }
  log << fmt::format("evaluate: {} test items, {} replicates, extractor margin {:.3f}\n", system.data().test.size(),
                     config.eval.replicates, margin);
  const auto report = evaluate_system(system, ex, config.eval, stream_seed(config, Stream::evaluate));
  auto out = open_out(p.report());
  eval::write_report(out, report);
  log << eval::format_report(report);
  return report;
}

void analyze(const ExperimentConfig& config, const AnalyzeRequest& request, std::ostream& log) {
  const System system = load_system(config);
  const Paths p = paths(config);
  const fs::path dir = p.analysis_dir();
  fs::create_directories(dir);
  const int r = config.lavae.frames_per_slot;

  std::vector<const corpus::CorpusSample*> all;
  for (const auto& s : system.data().samples) all.push_back(&s);
  const auto usage = analysis::latent_occupancy(system.vae(), all, system.data().normalizer);
  const auto expected = analysis::analytic_histogram(all, system.vae());
  {
    auto out = open_out(dir / "occupancy.txt");
    analysis::write_histogram(out, usage.histogram, r);
    auto coords = open_out(dir / "coordinates.txt");
    analysis::write_coordinates(coords, usage, r);
  }
  log << fmt::format("analyze: occupancy over {} samples matches activation rule: {}\n", all.size(),
                     usage.histogram == expected ? "yes" : "NO");

  std::vector<int> lengths = request.lengths.empty() ? config.analysis.lengths : request.lengths;
  const std::string& text = config.analysis.texts.empty() ? system.data().samples.front().descriptor.text
                                                          : config.analysis.texts.front();
  std::vector<int> map_lengths = lengths;
  map_lengths.push_back(config.corpus.max_frames);
  std::sort(map_lengths.begin(), map_lengths.end());
  map_lengths.erase(std::unique(map_lengths.begin(), map_lengths.end()), map_lengths.end());
  for (int f : map_lengths) {
    Rng rng(stream_seed(config, Stream::analysis));
    const auto z = diffusion::sample_code(system.view(), text, f, rng);
    const auto map = analysis::attention_map(system.vae(), z, f);
    auto out = open_out(dir / fmt::format("attention_f{}.txt", f));
    analysis::write_attention_map(out, map);
    if (map.slots() >= 2) {
      const double score = analysis::chunking_score(map, r);
      log << fmt::format("analyze: attention f={} k={} chunking score {:.3f}{}\n", f, map.slots(), score,
                         score >= 0.5 ? "" : " (below 0.5, informational)");
    } else {
      log << fmt::format("analyze: attention f={} k=1\n", f);
    }
  }

  if (request.active_set) {
    const int f = request.frames > 0 ? request.frames : config.corpus.max_frames;
    Rng rng(stream_seed(config, Stream::analysis));
    const auto motion = analysis::subspace_ablation(system.view(), text, f, *request.active_set, rng);
    std::string name = "ablation";
    for (int s : *request.active_set) name += fmt::format("_{}", s);
    corpus::write_motion(dir / (name + ".ladc"), motion, text);
    log << fmt::format("analyze: wrote subspace ablation {} ({} frames)\n", name, f);
  }

  const analysis::MotionGenerator gen = [&](const std::string& t, int f, Rng& rng) { return system.sample(t, f, rng); };
  auto sweep_out = open_out(dir / "length_sweep.txt");
  for (const auto& t : config.analysis.texts) {
    const auto rows = analysis::length_sweep(gen, t, lengths, stream_seed(config, Stream::analysis),
                                             config.analysis.sweep_samples);
    analysis::write_length_sweep(sweep_out, t, rows);
    analysis::write_length_sweep(log, t, rows);
  }
  sweep_out << "reference_walk_avg_vel 48 84 170: 1.31 1.01 0.72\nreference_sit_avg_vel 48 84 170: 0.27 0.17 0.10\n";
}

std::vector<AblationCell> ablation_cells(const ExperimentConfig& base) {
  ExperimentConfig b = base;
  b.vae_train.epochs = base.ablate.vae_epochs;
  b.denoiser_train.epochs = base.ablate.denoiser_epochs;
  b.eval.replicates = base.ablate.replicates;
  const fs::path root = paths(base).ablation_dir();
  std::vector<AblationCell> cells;
  auto add = [&](std::string name, auto&& edit) {
    ExperimentConfig c = b;
    edit(c);
    c.out = (root / name).string();
    c.resolve();
    cells.push_back({std::move(name), std::move(c)});
  };
  for (int r : base.ablate.r) {
    add(r == 0 ? std::string("r_all") : fmt::format("r_{}", r),
        [&](ExperimentConfig& c) { c.lavae.frames_per_slot = r == 0 ? c.corpus.max_frames : r; });
  }
  for (double f : base.ablate.dvae_fraction) {
    add(fmt::format("dvae_fraction_{}", f), [&](ExperimentConfig& c) { c.lavae.dvae_fraction = f; });
  }
  for (auto t : base.ablate.dvae_target) {
    add(t == vae::DvaeTarget::input ? "dvae_target_input" : "dvae_target_latent",
        [&](ExperimentConfig& c) { c.lavae.dvae_target = t; });
  }
  for (bool la : base.ablate.length_aware) {
    add(la ? "length_aware_true" : "length_aware_false", [&](ExperimentConfig& c) { c.lavae.length_aware = la; });
  }
  return cells;
}

std::vector<std::pair<std::string, eval::MetricReport>> ablate(const ExperimentConfig& config, std::ostream& log) {
  const Paths p = paths(config);
  require(p.extractor(), "train-extractors");
  const Data base_data = load_data(config);
  const auto ex = load_extractors(config, p.extractor());
  std::vector<std::pair<std::string, eval::MetricReport>> reports;
  auto summary = open_out(p.ablation_dir() / "summary.txt");
  summary << "cell r_precision_top1 r_precision_top2 r_precision_top3 fid mm_dist diversity mmodality\n";
  for (const auto& cell : ablation_cells(config)) {
    log << fmt::format("ablate: cell {} (r={}, K={}, dvae_fraction={}, length_aware={})\n", cell.name,
                       cell.config.lavae.frames_per_slot, cell.config.lavae.max_slots(),
                       cell.config.lavae.dvae_fraction, cell.config.lavae.length_aware);
    Data data = base_data;
    split_views(data);
    auto vae = train_vae_stage(cell.config, data, log);
    auto den = train_denoiser_stage(cell.config, data, vae, log);
    const Paths cp = paths(cell.config);
    save_vae(cell.config, vae, cp.vae());
    save_denoiser(cell.config, den, cp.denoiser());
    const System system(cell.config, std::move(data), std::move(vae), std::move(den));
    const auto report = evaluate_system(system, ex, cell.config.eval, stream_seed(cell.config, Stream::evaluate));
    auto out = open_out(cp.report());
    eval::write_report(out, report);
    summary << fmt::format("{} {:.4f} {:.4f} {:.4f} {:.4f} {:.4f} {:.4f} {:.4f}\n", cell.name, report.r_precision_top1,
                           report.r_precision_top2, report.r_precision_top3, report.fid, report.mm_dist,
                           report.diversity, report.mmodality)
            << std::flush;
    log << eval::format_report(report);
    reports.emplace_back(cell.name, report);
  }
  return reports;
}

}  // namespace ladiff::pipeline
