#include "ladiff/config.hpp"

#include "ladiff/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

namespace ladiff {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void type_mismatch(const std::string& key, const char* expected, const std::string& value) {
  throw TypeMismatchError(fmt::format("key '{}': expected {}, got '{}'", key, expected, value));
}

template <typename N>
N parse_number(const std::string& key, const std::string& value, const char* expected) {
  N out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) type_mismatch(key, expected, value);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  type_mismatch(key, "true or false", value);
}

vae::DvaeTarget parse_target(const std::string& key, const std::string& value) {
  if (value == "input") return vae::DvaeTarget::input;
  if (value == "latent") return vae::DvaeTarget::latent;
  type_mismatch(key, "input or latent", value);
}

vae::NoiseScale parse_noise_scale(const std::string& key, const std::string& value) {
  if (value == "variance") return vae::NoiseScale::variance;
  if (value == "std") return vae::NoiseScale::std_dev;
  type_mismatch(key, "variance or std", value);
}

std::string num(double v) { return fmt::format("{}", v); }
std::string flag(bool b) { return b ? "true" : "false"; }
std::string target_name(vae::DvaeTarget t) { return t == vae::DvaeTarget::input ? "input" : "latent"; }

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt_one) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt_one(items[i]);
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename N, typename Ref>
Key number_key(std::string name, Ref ref, const char* expected) {
  return {name,
          [name, ref, expected](ExperimentConfig& c, const std::string& v) {
            ref(c) = parse_number<N>(name, v, expected);
          },
          [ref](const ExperimentConfig& c) { return num(static_cast<double>(ref(const_cast<ExperimentConfig&>(c)))); }};
}

template <typename Ref>
Key int_key(std::string name, Ref ref) {
  return number_key<int>(std::move(name), ref, "an integer");
}

template <typename Ref>
Key long_key(std::string name, Ref ref) {
  return number_key<long>(std::move(name), ref, "an integer");
}

template <typename Ref>
Key double_key(std::string name, Ref ref) {
  return number_key<double>(std::move(name), ref, "a number");
}

template <typename Ref>
Key seed_key(std::string name, Ref ref) {
  return {name,
          [name, ref](ExperimentConfig& c, const std::string& v) {
            ref(c) = parse_number<std::uint64_t>(name, v, "an unsigned integer");
          },
          [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Ref>
Key bool_key(std::string name, Ref ref) {
  return {name, [name, ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); },
          [ref](const ExperimentConfig& c) { return flag(ref(const_cast<ExperimentConfig&>(c))); }};
}

#define LADIFF_REF(type, expr) [](ExperimentConfig& c) -> type& { return expr; }

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back(seed_key("seed", LADIFF_REF(std::uint64_t, c.seed)));
    k.push_back({"out", [](ExperimentConfig& c, const std::string& v) { c.out = v; },
                 [](const ExperimentConfig& c) { return c.out; }});

    k.push_back(int_key("corpus.samples", LADIFF_REF(int, c.corpus.samples)));
    k.push_back(int_key("corpus.min_frames", LADIFF_REF(int, c.corpus.min_frames)));
    k.push_back(int_key("corpus.max_frames", LADIFF_REF(int, c.corpus.max_frames)));
    k.push_back(int_key("corpus.fps", LADIFF_REF(int, c.corpus.fps)));
    k.push_back(double_key("corpus.train_fraction", LADIFF_REF(double, c.corpus.train_fraction)));
    k.push_back(double_key("corpus.val_fraction", LADIFF_REF(double, c.corpus.val_fraction)));
    k.push_back(seed_key("corpus.split_seed", LADIFF_REF(std::uint64_t, c.corpus.split_seed)));
    k.push_back({"corpus.actions",
                 [](ExperimentConfig& c, const std::string& v) {
                   std::vector<corpus::Action> actions;
                   for (const auto& a : split_list(v)) {
                     try {
                       actions.push_back(corpus::parse_action(a));
                     } catch (const ConfigError&) {
                       type_mismatch("corpus.actions", "a list of action names", v);
                     }
                   }
                   c.corpus.actions = actions;
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.corpus.actions, [](corpus::Action a) { return std::string(corpus::action_name(a)); });
                 }});

    k.push_back(seed_key("text.seed", LADIFF_REF(std::uint64_t, c.text_seed)));
    k.push_back(int_key("text.dim", LADIFF_REF(int, c.text_dim)));

    k.push_back(int_key("lavae.r", LADIFF_REF(int, c.lavae.frames_per_slot)));
    k.push_back(int_key("lavae.dim", LADIFF_REF(int, c.lavae.dim)));
    k.push_back(int_key("lavae.layers", LADIFF_REF(int, c.lavae.layers)));
    k.push_back(int_key("lavae.heads", LADIFF_REF(int, c.lavae.heads)));
    k.push_back(double_key("lavae.dvae_fraction", LADIFF_REF(double, c.lavae.dvae_fraction)));
    k.push_back(double_key("lavae.dvae_std", LADIFF_REF(double, c.lavae.dvae_std)));
    k.push_back({"lavae.dvae_target",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.lavae.dvae_target = parse_target("lavae.dvae_target", v);
                 },
                 [](const ExperimentConfig& c) { return target_name(c.lavae.dvae_target); }});
    k.push_back(double_key("lavae.kl_weight", LADIFF_REF(double, c.lavae.kl_weight)));
    k.push_back(bool_key("lavae.length_aware", LADIFF_REF(bool, c.lavae.length_aware)));
    k.push_back({"lavae.noise_scale",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.lavae.noise_scale = parse_noise_scale("lavae.noise_scale", v);
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.lavae.noise_scale == vae::NoiseScale::variance ? "variance" : "std");
                 }});
    k.push_back(int_key("lavae.epochs", LADIFF_REF(int, c.vae_train.epochs)));
    k.push_back(int_key("lavae.batch_size", LADIFF_REF(int, c.vae_train.batch_size)));
    k.push_back(long_key("lavae.max_steps", LADIFF_REF(long, c.vae_train.max_steps)));
    k.push_back(double_key("lavae.lr", LADIFF_REF(double, c.vae_train.optimizer.lr)));
    k.push_back(double_key("lavae.weight_decay", LADIFF_REF(double, c.vae_train.optimizer.weight_decay)));
    k.push_back(double_key("lavae.clip_norm", LADIFF_REF(double, c.vae_train.optimizer.clip_norm)));

    k.push_back(int_key("ladiff.dim", LADIFF_REF(int, c.denoiser.dim)));
    k.push_back(int_key("ladiff.layers", LADIFF_REF(int, c.denoiser.layers)));
    k.push_back(int_key("ladiff.heads", LADIFF_REF(int, c.denoiser.heads)));
    k.push_back(int_key("ladiff.steps", LADIFF_REF(int, c.diffusion.steps)));
    k.push_back({"ladiff.schedule",
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.diffusion.schedule = diffusion::parse_schedule_kind(v);
                   } catch (const ConfigError&) {
                     type_mismatch("ladiff.schedule", "linear or cosine", v);
                   }
                 },
                 [](const ExperimentConfig& c) { return std::string(diffusion::name(c.diffusion.schedule)); }});
    k.push_back(int_key("ladiff.inference_steps", LADIFF_REF(int, c.diffusion.inference_steps)));
    k.push_back({"ladiff.sampler",
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.diffusion.sampler = diffusion::parse_sampler_kind(v);
                   } catch (const ConfigError&) {
                     type_mismatch("ladiff.sampler", "deterministic or ancestral", v);
                   }
                 },
                 [](const ExperimentConfig& c) { return std::string(diffusion::name(c.diffusion.sampler)); }});
    k.push_back(int_key("ladiff.epochs", LADIFF_REF(int, c.denoiser_train.epochs)));
    k.push_back(int_key("ladiff.batch_size", LADIFF_REF(int, c.denoiser_train.batch_size)));
    k.push_back(long_key("ladiff.max_steps", LADIFF_REF(long, c.denoiser_train.max_steps)));
    k.push_back(double_key("ladiff.lr", LADIFF_REF(double, c.denoiser_train.optimizer.lr)));
    k.push_back(double_key("ladiff.weight_decay", LADIFF_REF(double, c.denoiser_train.optimizer.weight_decay)));
    k.push_back(double_key("ladiff.clip_norm", LADIFF_REF(double, c.denoiser_train.optimizer.clip_norm)));

    k.push_back(int_key("extractor.feature_dim", LADIFF_REF(int, c.extractor.feature_dim)));
    k.push_back(int_key("extractor.dim", LADIFF_REF(int, c.extractor.dim)));
    k.push_back(int_key("extractor.heads", LADIFF_REF(int, c.extractor.heads)));
    k.push_back(int_key("extractor.pool", LADIFF_REF(int, c.extractor.pool)));
    k.push_back(double_key("extractor.temperature", LADIFF_REF(double, c.extractor.temperature)));
    k.push_back(int_key("extractor.epochs", LADIFF_REF(int, c.extractor.epochs)));
    k.push_back(int_key("extractor.batch_size", LADIFF_REF(int, c.extractor.batch_size)));
    k.push_back(double_key("extractor.lr", LADIFF_REF(double, c.extractor.lr)));
    k.push_back(double_key("extractor.margin", LADIFF_REF(double, c.extractor.margin)));

    k.push_back(int_key("eval.replicates", LADIFF_REF(int, c.eval.replicates)));
    k.push_back(int_key("eval.batch_size", LADIFF_REF(int, c.eval.batch_size)));
    k.push_back(int_key("eval.diversity_subset", LADIFF_REF(int, c.eval.diversity_subset)));
    k.push_back(int_key("eval.mm_texts", LADIFF_REF(int, c.eval.mm_texts)));
    k.push_back(int_key("eval.mm_subset", LADIFF_REF(int, c.eval.mm_subset)));

    k.push_back({"analysis.lengths",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.analysis.lengths.clear();
                   for (const auto& item : split_list(v)) {
                     c.analysis.lengths.push_back(parse_number<int>("analysis.lengths", item, "a list of integers"));
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.analysis.lengths, [](int n) { return std::to_string(n); });
                 }});
    k.push_back({"analysis.texts", [](ExperimentConfig& c, const std::string& v) { c.analysis.texts = split_list(v); },
                 [](const ExperimentConfig& c) { return join(c.analysis.texts, [](const std::string& s) { return s; }); }});
    k.push_back(int_key("analysis.sweep_samples", LADIFF_REF(int, c.analysis.sweep_samples)));

    k.push_back({"ablate.r",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.ablate.r.clear();
                   for (const auto& item : split_list(v)) {
                     c.ablate.r.push_back(item == "all" ? 0 : parse_number<int>("ablate.r", item, "integers or all"));
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.ablate.r, [](int r) { return r == 0 ? std::string("all") : std::to_string(r); });
                 }});
    k.push_back({"ablate.dvae_fraction",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.ablate.dvae_fraction.clear();
                   for (const auto& item : split_list(v)) {
                     c.ablate.dvae_fraction.push_back(parse_number<double>("ablate.dvae_fraction", item, "numbers"));
                   }
                 },
                 [](const ExperimentConfig& c) { return join(c.ablate.dvae_fraction, num); }});
    k.push_back({"ablate.dvae_target",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.ablate.dvae_target.clear();
                   for (const auto& item : split_list(v)) {
                     c.ablate.dvae_target.push_back(parse_target("ablate.dvae_target", item));
                   }
                 },
                 [](const ExperimentConfig& c) { return join(c.ablate.dvae_target, target_name); }});
    k.push_back({"ablate.length_aware",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.ablate.length_aware.clear();
                   for (const auto& item : split_list(v)) {
                     c.ablate.length_aware.push_back(parse_bool("ablate.length_aware", item));
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.ablate.length_aware, [](bool b) { return flag(b); });
                 }});
    k.push_back(int_key("ablate.vae_epochs", LADIFF_REF(int, c.ablate.vae_epochs)));
    k.push_back(int_key("ablate.denoiser_epochs", LADIFF_REF(int, c.ablate.denoiser_epochs)));
    k.push_back(int_key("ablate.replicates", LADIFF_REF(int, c.ablate.replicates)));
    return k;
  }();
  return keys;
}

#undef LADIFF_REF

const Key* find_key(const std::string& name) {
  for (const auto& k : registry()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void ExperimentConfig::resolve() {
  corpus::validate(corpus);
  if (text_dim < 1) throw ConfigError("text.dim must be positive");
  lavae.channels = corpus::kChannels;
  lavae.max_frames = corpus.max_frames;
  vae::validate(lavae);
  denoiser.latent_dim = lavae.dim;
  denoiser.text_dim = text_dim;
  denoiser.max_slots = lavae.max_slots();
  diffusion::validate(denoiser);
  diffusion::build_schedule(diffusion.steps, diffusion.schedule, diffusion.inference_steps);
  eval::validate(extractor);
  eval::validate(eval);
  for (int n : analysis.lengths) {
    if (n < corpus.min_frames || n > corpus.max_frames) {
      throw ConfigError(fmt::format("analysis.lengths: {} outside [{}, {}]", n, corpus.min_frames, corpus.max_frames));
    }
  }
  for (const auto& text : analysis.texts) {
    try {
      corpus::parse_descriptor(text);
    } catch (const VocabularyError& e) {
      throw ConfigError(fmt::format("analysis.texts: {}", e.what()));
    }
  }
  for (int r : ablate.r) {
    if (r < 0) throw ConfigError("ablate.r entries must be positive or 'all'");
  }
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw UnknownKeyError(fmt::format("unknown config key '{}'", key));
  k->set(config, value);
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, number));
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    try {
      set_config_value(config, key, value);
    } catch (const UnknownKeyError& e) {
      throw UnknownKeyError(fmt::format("{}:{}: {}", origin, number, e.what()));
    } catch (const TypeMismatchError& e) {
      throw TypeMismatchError(fmt::format("{}:{}: {}", origin, number, e.what()));
    }
  }
  config.resolve();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError(fmt::format("cannot open config '{}'", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& k : registry()) out += fmt::format("{} = {}\n", k.name, k.get(config));
  return out;
}

std::string_view component_name(Component c) {
  switch (c) {
    case Component::vae: return "vae";
    case Component::denoiser: return "denoiser";
    case Component::extractor: return "extractor";
  }
  return "unknown";
}

std::uint64_t config_digest(const ExperimentConfig& config, Component component) {
  std::string s = fmt::format("component={}\nchannels={}\n", component_name(component), corpus::kChannels);
  switch (component) {
    case Component::vae:
      s += fmt::format("max_frames={}\nr={}\ndim={}\nlayers={}\nheads={}\nlength_aware={}\n", config.corpus.max_frames,
                       config.lavae.frames_per_slot, config.lavae.dim, config.lavae.layers, config.lavae.heads,
                       config.lavae.length_aware);
      break;
    case Component::denoiser:
      s += fmt::format("latent_dim={}\nslots={}\ndim={}\nlayers={}\nheads={}\ntext_seed={}\ntext_dim={}\n",
                       config.lavae.dim, config.lavae.max_slots(), config.denoiser.dim, config.denoiser.layers,
                       config.denoiser.heads, config.text_seed, config.text_dim);
      s += fmt::format("steps={}\nschedule={}\n", config.diffusion.steps, diffusion::name(config.diffusion.schedule));
      break;
    case Component::extractor:
      s += fmt::format("feature_dim={}\ndim={}\nheads={}\npool={}\nvocabulary={}\n", config.extractor.feature_dim,
                       config.extractor.dim, config.extractor.heads, config.extractor.pool,
                       corpus::vocabulary().size());
      break;
  }
  return fnv1a(s);
}

}  // namespace ladiff
