#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ladiff/checkpoint.hpp"
#include "ladiff/config.hpp"
#include "ladiff/error.hpp"
#include "ladiff/pipeline.hpp"
#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace ladiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ladiff_test_config";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

ag::ParameterStore<float> make_store(Rng& rng) {
  ag::ParameterStore<float> s;
  s.create("a", 2, 3).value = testing::random_matrix(2, 3, rng).cast<float>();
  s.create("b", 1, 4).value = testing::random_matrix(1, 4, rng).cast<float>();
  return s;
}

}  // namespace

TEST_CASE("defaults resolve to K = 5 with r = 48 and 200 frames") {
  ExperimentConfig c;
  c.resolve();
  CHECK(c.lavae.frames_per_slot == 48);
  CHECK(c.lavae.max_slots() == 5);
  CHECK(c.denoiser.max_slots == 5);
  CHECK(c.denoiser.latent_dim == c.lavae.dim);
  CHECK(c.denoiser.text_dim == c.text_dim);
  CHECK(c.diffusion.inference_steps == 20);
  CHECK(c.diffusion.sampler == diffusion::SamplerKind::deterministic);
}

TEST_CASE("parsing sets keys, ignores comments and resolves derived values") {
  const auto c = parse_config("# comment\nseed = 9\nlavae.r = 40\ncorpus.max_frames = 160\n\nladiff.schedule = cosine\n"
                              "analysis.lengths = 48, 84\nablate.r = 16, all\n");
  CHECK(c.seed == 9);
  CHECK(c.lavae.frames_per_slot == 40);
  CHECK(c.lavae.max_slots() == 4);
  CHECK(c.denoiser.max_slots == 4);
  CHECK(c.diffusion.schedule == diffusion::ScheduleKind::cosine);
  CHECK(c.analysis.lengths == std::vector<int>{48, 84});
  CHECK(c.ablate.r == std::vector<int>{16, 0});
}

TEST_CASE("unknown keys and bad values are reported with their key") {
  CHECK_THROWS_AS(parse_config("foo = 1\n"), UnknownKeyError);
  CHECK_THROWS_AS(parse_config("lavae.r = many\n"), TypeMismatchError);
  CHECK_THROWS_AS(parse_config("lavae.length_aware = perhaps\n"), TypeMismatchError);
  CHECK_THROWS_AS(parse_config("lavae.r\n"), ConfigError);
  try {
    parse_config("seed = 1\nfoo = 1\n", "x.cfg");
    FAIL("expected an error");
  } catch (const UnknownKeyError& e) {
    const std::string what = e.what();
    CHECK(what.find("foo") != std::string::npos);
    CHECK(what.find('2') != std::string::npos);
  }
  CHECK_THROWS_AS(load_config(scratch("absent.cfg")), MissingArtifactError);
}

TEST_CASE("semantic validation rejects inconsistent settings") {
  CHECK_THROWS_AS(parse_config("lavae.dim = 10\nlavae.heads = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("ladiff.inference_steps = 2000\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("analysis.lengths = 500\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("analysis.texts = a person dances\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lavae.dvae_fraction = 2\n"), ConfigError);
}

TEST_CASE("formatted configs parse back to the same document") {
  auto c = parse_config("seed = 3\nlavae.r = 32\nlavae.dvae_target = latent\nlavae.noise_scale = std\n");
  const std::string text = format_config(c);
  CHECK(format_config(parse_config(text)) == text);
  set_config_value(c, "ladiff.dim", "64");
  CHECK(c.denoiser.dim == 64);
  CHECK_THROWS_AS(set_config_value(c, "ladiff.width", "64"), UnknownKeyError);
}

TEST_CASE("digests follow architecture keys only") {
  ExperimentConfig a;
  a.resolve();
  ExperimentConfig b = a;
  b.vae_train.epochs = 99;
  b.seed = 77;
  CHECK(config_digest(a, Component::vae) == config_digest(b, Component::vae));
  b.lavae.dim = 128;
  b.resolve();
  CHECK(config_digest(a, Component::vae) != config_digest(b, Component::vae));
  CHECK(config_digest(a, Component::vae) != config_digest(a, Component::denoiser));
  ExperimentConfig c = a;
  c.diffusion.steps = 500;
  c.resolve();
  CHECK(config_digest(a, Component::denoiser) != config_digest(c, Component::denoiser));
  CHECK(config_digest(a, Component::vae) == config_digest(c, Component::vae));
}

TEST_CASE("checkpoints round-trip parameters bitwise with meta scalars") {
  Rng rng(1);
  auto store = make_store(rng);
  const auto path = scratch("ok.ladk");
  save_checkpoint(path, Component::vae, 42, store, {{"meta.latent_scale", 0.37f}});
  Rng other(2);
  auto restored = make_store(other);
  const auto meta = load_checkpoint(path, Component::vae, 42, restored);
  CHECK(restored.checksum() == store.checksum());
  CHECK(restored.find("a")->value == store.find("a")->value);
  REQUIRE(meta.count("meta.latent_scale") == 1);
  CHECK(meta.at("meta.latent_scale") == 0.37f);
}

TEST_CASE("each kind of checkpoint damage raises its own error") {
  Rng rng(1);
  auto store = make_store(rng);
  const auto path = scratch("base.ladk");
  save_checkpoint(path, Component::vae, 42, store);
  const std::string bytes = read_bytes(path);
  auto target = [] {
    Rng r(5);
    return make_store(r);
  };

  auto s = target();
  CHECK_THROWS_AS(load_checkpoint(scratch("nothing.ladk"), Component::vae, 42, s), MissingArtifactError);
  CHECK_THROWS_AS(load_checkpoint(path, Component::vae, 43, s), DigestMismatchError);
  CHECK_THROWS_AS(load_checkpoint(path, Component::denoiser, 42, s), FormatError);

  std::string flipped = bytes;
  flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x10);
  write_bytes(scratch("flipped.ladk"), flipped);
  CHECK_THROWS_AS(load_checkpoint(scratch("flipped.ladk"), Component::vae, 42, s), ChecksumError);

  write_bytes(scratch("short.ladk"), bytes.substr(0, 10));
  CHECK_THROWS_AS(load_checkpoint(scratch("short.ladk"), Component::vae, 42, s), FormatError);

  ag::ParameterStore<float> extra;
  extra.create("a", 2, 3);
  extra.create("b", 1, 4);
  extra.create("c", 1, 1);
  CHECK_THROWS_AS(load_checkpoint(path, Component::vae, 42, extra), FormatError);

  ag::ParameterStore<float> reshaped;
  reshaped.create("a", 3, 2);
  reshaped.create("b", 1, 4);
  CHECK_THROWS_AS(load_checkpoint(path, Component::vae, 42, reshaped), FormatError);

  ag::ParameterStore<float> fewer;
  fewer.create("a", 2, 3);
  const auto before = fewer.checksum();
  CHECK_THROWS_AS(load_checkpoint(path, Component::vae, 42, fewer), FormatError);
  // A failed load leaves the store untouched.
  CHECK(fewer.checksum() == before);
}

TEST_CASE("a reloaded VAE decodes bit-identically") {
  auto cfg = parse_config("lavae.dim = 16\nlavae.layers = 1\nlavae.heads = 2\nladiff.dim = 16\nladiff.layers = 1\n"
                          "ladiff.heads = 2\n");
  cfg.out = scratch("run").string();
  const vae::LaVaeModel<float> model(cfg.lavae, 3);
  const auto path = scratch("vae.ladk");
  pipeline::save_vae(cfg, model, path);
  const auto loaded = pipeline::load_vae(cfg, path);
  Rng rng(4);
  for (int i = 0; i < 5; ++i) {
    const int f = 30 + static_cast<int>(rng.index(170));
    vae::LatentCode<float> z{testing::random_matrix(model.slots_for(f), 16, rng).cast<float>()};
    CHECK(loaded.decode(z, f) == model.decode(z, f));
  }
  auto changed = cfg;
  changed.lavae.dim = 32;
  changed.resolve();
  CHECK_THROWS_AS(pipeline::load_vae(changed, path), DigestMismatchError);
}

TEST_CASE("ablation cells vary one axis each with the reduced budgets") {
  auto base = parse_config("ablate.r = 16, 32, 48, all\nablate.dvae_fraction = 0, 0.5\nablate.vae_epochs = 2\n"
                           "ablate.denoiser_epochs = 3\nablate.replicates = 1\n");
  const auto cells = pipeline::ablation_cells(base);
  CHECK(cells.size() == 4 + 2 + 1 + 1);
  std::set<std::string> names;
  int r_cells = 0;
  for (const auto& cell : cells) {
    names.insert(cell.name);
    const auto& c = cell.config;
    CHECK(c.vae_train.epochs == 2);
    CHECK(c.denoiser_train.epochs == 3);
    CHECK(c.eval.replicates == 1);
    CHECK(c.out.find(cell.name) != std::string::npos);
    int differs = 0;
    differs += c.lavae.frames_per_slot != base.lavae.frames_per_slot;
    differs += c.lavae.dvae_fraction != base.lavae.dvae_fraction;
    differs += c.lavae.dvae_target != base.lavae.dvae_target;
    differs += c.lavae.length_aware != base.lavae.length_aware;
    CHECK(differs <= 1);
    if (cell.name.rfind("r_", 0) == 0) ++r_cells;
  }
  CHECK(r_cells == 4);
  CHECK(names.size() == cells.size());
  CHECK(names.count("r_all") == 1);
  const auto& all = *std::find_if(cells.begin(), cells.end(), [](const auto& c) { return c.name == "r_all"; });
  CHECK(all.config.lavae.max_slots() == 1);
}

TEST_CASE("seed streams are distinct and follow the master seed") {
  ExperimentConfig a;
  ExperimentConfig b;
  b.seed = 2;
  CHECK(pipeline::stream_seed(a, pipeline::Stream::vae_init) != pipeline::stream_seed(a, pipeline::Stream::vae_train));
  CHECK(pipeline::stream_seed(a, pipeline::Stream::vae_init) != pipeline::stream_seed(b, pipeline::Stream::vae_init));
  CHECK(pipeline::stream_seed(a, pipeline::Stream::sample) == pipeline::stream_seed(a, pipeline::Stream::sample));
}
