#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ladiff/analysis.hpp"
#include "ladiff/error.hpp"
#include "support.hpp"

#include <sstream>
#include <string>
#include <vector>

using namespace ladiff;
using namespace ladiff::analysis;

namespace {

vae::LaVaeConfig small_vae() {
  vae::LaVaeConfig c;
  c.max_frames = 200;
  c.frames_per_slot = 48;
  c.dim = 8;
  c.layers = 2;
  c.heads = 2;
  return c;
}

std::vector<corpus::CorpusSample> samples_with_lengths(const std::vector<int>& lengths) {
  std::vector<corpus::CorpusSample> out;
  corpus::ActionParams p;
  p.count = 2;
  p.magnitude = 0.5;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    corpus::CorpusSample s;
    s.id = static_cast<std::uint32_t>(i);
    s.motion = corpus::synthesize(corpus::Action::walk, p, lengths[i], 20);
    s.descriptor = corpus::parse_descriptor("a person walks forward for two steps");
    out.push_back(s);
  }
  return out;
}

std::vector<const corpus::CorpusSample*> pointers(const std::vector<corpus::CorpusSample>& s) {
  std::vector<const corpus::CorpusSample*> out;
  for (const auto& x : s) out.push_back(&x);
  return out;
}

corpus::Normalizer identity_normalizer() {
  corpus::Normalizer n;
  n.mean = Eigen::VectorXd::Zero(corpus::kChannels);
  n.std = Eigen::VectorXd::Ones(corpus::kChannels);
  return n;
}

}  // namespace

TEST_CASE("attention maps have unit columns and the expected shape") {
  vae::LaVaeModel<float> v(small_vae(), 3);
  Rng rng(1);
  vae::LatentCode<float> z{testing::random_matrix(5, 8, rng).cast<float>()};
  std::vector<Eigen::MatrixXd> layers;
  const auto map = attention_map(v, z, 200, &layers);
  CHECK(map.slots() == 5);
  CHECK(map.frames() == 200);
  CHECK(map.frames_per_slot == 48);
  CHECK(layers.size() == 2);
  for (int c = 0; c < map.frames(); ++c) CHECK(map.weights.col(c).sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(map.weights.minCoeff() >= 0.0);
  CHECK_THROWS_AS(attention_map(v, z, 100), ShapeError);
}

TEST_CASE("a single slot receives all attention") {
  vae::LaVaeModel<float> v(small_vae(), 3);
  Rng rng(2);
  vae::LatentCode<float> z{testing::random_matrix(1, 8, rng).cast<float>()};
  const auto map = attention_map(v, z, 40);
  CHECK((map.weights.array() - 1.0).abs().maxCoeff() < 1e-6);
  CHECK(chunking_score(map, 48) == 1.0);
}

TEST_CASE("chunking score rewards block-diagonal attention") {
  AttentionMap block;
  block.frames_per_slot = 4;
  block.weights = Eigen::MatrixXd::Zero(3, 12);
  for (int f = 0; f < 12; ++f) block.weights(f / 4, f) = 1.0;
  CHECK(chunking_score(block, 4) == 1.0);

  AttentionMap uniform;
  uniform.frames_per_slot = 4;
  uniform.weights = Eigen::MatrixXd::Constant(4, 16, 0.25);
  CHECK(chunking_score(uniform, 4) == doctest::Approx(0.25));

  AttentionMap reversed = block;
  reversed.weights = block.weights.colwise().reverse();
  // Slot order reversed: only the middle block still matches.
  CHECK(chunking_score(reversed, 4) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("slot ablation zeroes the slots outside the active set") {
  Rng rng(3);
  vae::LatentCode<float> z{testing::random_matrix(3, 4, rng).cast<float>()};
  const auto original = z;
  ablate_slots(z, {1, 2, 3});
  CHECK(z.slots == original.slots);
  ablate_slots(z, {2});
  CHECK(z.slots.row(0).isZero());
  CHECK(z.slots.row(1) == original.slots.row(1));
  CHECK(z.slots.row(2).isZero());
  CHECK_THROWS_AS(ablate_slots(z, {}), DomainError);
  CHECK_THROWS_AS(ablate_slots(z, {4}), DomainError);
  CHECK_THROWS_AS(ablate_slots(z, {0}), DomainError);
}

TEST_CASE("subspace ablation changes the decoded motion unless every slot is kept") {
  vae::LaVaeModel<float> v(small_vae(), 3);
  diffusion::DenoiserConfig dc;
  dc.latent_dim = 8;
  dc.dim = 8;
  dc.layers = 1;
  dc.heads = 2;
  dc.text_dim = 16;
  dc.max_slots = 5;
  diffusion::Denoiser<float> d(dc, 2);
  const auto sched = diffusion::build_schedule(50, diffusion::ScheduleKind::linear, 5);
  const corpus::TextEmbedder emb(3, 16);
  const auto norm = identity_normalizer();
  diffusion::TextToMotion sys{&v, &d, &sched, &emb, &norm, 30, 200};
  const std::string text = "a person sits down on a chair";
  Rng a(4), b(4), c(4);
  const auto full = diffusion::sample(sys, text, 120, a);
  const auto kept = subspace_ablation(sys, text, 120, {1, 2, 3}, b);
  const auto first = subspace_ablation(sys, text, 120, {1}, c);
  CHECK(kept.frames == full.frames);
  CHECK(first.frames != full.frames);
  CHECK(first.length() == 120);
  Rng e(4);
  CHECK_THROWS_AS(subspace_ablation(sys, text, 120, {4}, e), DomainError);
}

TEST_CASE("occupancy histogram equals the analytic activation counts") {
  vae::LaVaeModel<float> v(small_vae(), 3);
  const auto norm = identity_normalizer();
  {
    const auto s = samples_with_lengths(std::vector<int>(10, 40));
    const auto usage = latent_occupancy(v, pointers(s), norm);
    CHECK(usage.histogram == std::map<int, int>{{1, 10}});
    CHECK(usage.coordinates.size() == 10);
  }
  {
    const auto s = samples_with_lengths({30, 96, 144, 145, 200, 48, 49});
    const auto ptrs = pointers(s);
    const auto usage = latent_occupancy(v, ptrs, norm);
    const std::map<int, int> expected{{1, 2}, {2, 2}, {3, 1}, {4, 1}, {5, 1}};
    CHECK(usage.histogram == expected);
    CHECK(analytic_histogram(ptrs, v) == expected);
    // 1 + 2 + 3 + 4 + 5 + 1 + 2 slots in total.
    CHECK(usage.coordinates.size() == 18);
    CHECK(usage.coordinates.front().slot == 1);
    CHECK(usage.coordinates.front().mu.size() == 8);
  }
}

TEST_CASE("exports carry headers and one row per item") {
  AttentionMap map;
  map.frames_per_slot = 4;
  map.weights = Eigen::MatrixXd::Constant(2, 6, 0.5);
  std::ostringstream a;
  write_attention_map(a, map);
  std::istringstream in(a.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "attention k=2 f=6 r=4");
  int rows = 0;
  for (std::string line; std::getline(in, line);) {
    std::istringstream ls(line);
    int values = 0;
    for (double x; ls >> x;) ++values;
    CHECK(values == 6);
    ++rows;
  }
  CHECK(rows == 2);

  std::ostringstream h;
  write_histogram(h, {{1, 3}, {2, 5}}, 48);
  CHECK(h.str() == "occupancy samples=8 r=48\n1 3\n2 5\n");

  SubspaceUsage usage;
  usage.coordinates.push_back({7, 2, Eigen::VectorXf::Ones(3)});
  std::ostringstream c;
  write_coordinates(c, usage, 48);
  CHECK(c.str().rfind("coordinates rows=1 dim=3 r=48\n7 2 ", 0) == 0);
}

TEST_CASE("length sweep reports one row per length from shared seeds") {
  std::vector<std::uint64_t> seeds;
  MotionGenerator gen = [&](const std::string& text, int frames, Rng& rng) {
    seeds.push_back(rng.seed());
    const auto d = corpus::parse_descriptor(text);
    corpus::ActionParams p = d.params;
    p.magnitude = 0.5;
    return corpus::synthesize(d.action, p, frames, 20);
  };
  const int lengths[] = {48, 84, 170};
  const auto rows = length_sweep(gen, "a person walks forward for four steps", lengths, 9);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].frames == 48);
  CHECK(rows[0].stats.avg_vel > rows[1].stats.avg_vel);
  CHECK(rows[1].stats.avg_vel > rows[2].stats.avg_vel);
  CHECK(seeds.size() == 3);
  CHECK(seeds[0] == seeds[1]);
  CHECK(seeds[1] == seeds[2]);

  seeds.clear();
  const auto avg = length_sweep(gen, "a person walks forward for four steps", lengths, 9, 4);
  CHECK(seeds.size() == 12);
  // The generator ignores randomness, so averaging changes nothing.
  CHECK(avg[2].stats.avg_vel == doctest::Approx(rows[2].stats.avg_vel));

  std::ostringstream out;
  write_length_sweep(out, "text", rows);
  CHECK(out.str().find("length_sweep rows=3") != std::string::npos);
}
