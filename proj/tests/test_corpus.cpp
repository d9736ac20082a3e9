#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ladiff/corpus.hpp"
#include "ladiff/error.hpp"
#include "ladiff/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

using namespace ladiff;
using namespace ladiff::corpus;

namespace {

CorpusConfig small_config(int samples = 60) {
  CorpusConfig c;
  c.samples = samples;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ladiff_test_corpus";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("generation is deterministic for a seed and varies across seeds") {
  const auto a = generate_corpus(small_config(), 11);
  const auto b = generate_corpus(small_config(), 11);
  const auto c = generate_corpus(small_config(), 12);
  REQUIRE(a.size() == 60);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].motion.frames == b[i].motion.frames);
    CHECK(a[i].descriptor.text == b[i].descriptor.text);
    if (a[i].motion.frames.rows() != c[i].motion.frames.rows() || a[i].motion.frames != c[i].motion.frames) {
      any_diff = true;
    }
  }
  CHECK(any_diff);
}

TEST_CASE("every sample is valid, within the length range and parses back") {
  const auto config = small_config(120);
  for (const auto& s : generate_corpus(config, 5)) {
    CHECK_NOTHROW(validate(s.motion));
    CHECK(s.motion.length() >= config.min_frames);
    CHECK(s.motion.length() <= config.max_frames);
    const auto parsed = parse_descriptor(s.descriptor.text);
    CHECK(parsed.action == s.descriptor.action);
    CHECK(parsed.params.count == s.descriptor.params.count);
    CHECK(parsed.params.mirrored == s.descriptor.params.mirrored);
  }
}

TEST_CASE("all six actions appear in a round-robin corpus") {
  std::set<Action> seen;
  for (const auto& s : generate_corpus(small_config(12), 1)) seen.insert(s.descriptor.action);
  CHECK(seen.size() == kActionCount);
}

TEST_CASE("grammar texts round-trip through the parser") {
  const auto& texts = grammar_texts();
  CHECK(texts.size() > 100);
  for (const auto& d : texts) {
    const auto p = parse_descriptor(d.text);
    CHECK(p.action == d.action);
    CHECK(render_text(p.action, p.params) == d.text);
  }
  CHECK_THROWS_AS(parse_descriptor("a person dances"), VocabularyError);
}

TEST_CASE("action names parse and reject unknown actions") {
  CHECK(parse_action("walk-in-circle") == Action::walk_circle);
  CHECK(parse_action("throw") == Action::throw_ball);
  CHECK_THROWS_AS(parse_action("swim"), ConfigError);
}

TEST_CASE("split assignment is a pure function of id with roughly the configured fractions") {
  CorpusConfig c = small_config(3000);
  int counts[3] = {0, 0, 0};
  for (std::uint32_t id = 0; id < 3000; ++id) {
    const Split s = assign_split(id, c);
    CHECK(s == assign_split(id, c));
    ++counts[static_cast<int>(s)];
  }
  CHECK(counts[0] / 3000.0 == doctest::Approx(0.7).epsilon(0.05));
  CHECK(counts[1] / 3000.0 == doctest::Approx(0.1).epsilon(0.3));
  CHECK(counts[2] / 3000.0 == doctest::Approx(0.2).epsilon(0.15));
}

TEST_CASE("invalid configs are rejected") {
  CorpusConfig c;
  c.min_frames = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = CorpusConfig{};
  c.max_frames = 10;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = CorpusConfig{};
  c.train_fraction = 0.95;
  c.val_fraction = 0.1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = CorpusConfig{};
  c.actions.clear();
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("velocity channels are fps times backward differences of positions") {
  ActionParams p;
  p.count = 4;
  p.magnitude = 0.7;
  const auto m = synthesize(Action::walk, p, 60, 20);
  for (int i = 1; i < m.length(); ++i) {
    for (int c = 0; c < 3 * kJoints; ++c) {
      const double expected = 20.0 * (static_cast<double>(m.frames(i, c)) - m.frames(i - 1, c));
      CHECK(m.frames(i, 3 * kJoints + c) == doctest::Approx(expected).epsilon(1e-4));
    }
  }
}

TEST_CASE("integrating the root velocity recovers the root trajectory") {
  ActionParams p;
  p.count = 5;
  p.magnitude = 0.6;
  const auto m = synthesize(Action::walk_circle, p, 200, 20);
  auto jittered = m;
  Rng rng(3);
  for (int i = 1; i < m.length(); ++i) {
    for (int a = 0; a < 3; ++a) jittered.frames(i, position_channel(kRoot, a)) += static_cast<float>(0.1 * rng.normal());
  }
  integrate_root(jittered);
  for (int i = 0; i < m.length(); ++i) {
    for (int a = 0; a < 3; ++a) {
      CHECK(jittered.frames(i, position_channel(kRoot, a)) ==
            doctest::Approx(m.frames(i, position_channel(kRoot, a))).epsilon(1e-4).scale(1.0));
    }
  }
  CHECK(jittered.frames.rightCols(kChannels - 3) == m.frames.rightCols(kChannels - 3));
}

TEST_CASE("walk covers count times step length along its heading") {
  ActionParams p;
  p.count = 4;
  p.magnitude = 0.6;
  const auto fwd = synthesize(Action::walk, p, 80, 20);
  CHECK(fwd.frames(79, position_channel(kRoot, 2)) == doctest::Approx(2.4).epsilon(1e-5));
  p.mirrored = true;
  const auto back = synthesize(Action::walk, p, 80, 20);
  CHECK(back.frames(79, position_channel(kRoot, 2)) == doctest::Approx(-2.4).epsilon(1e-5));
}

TEST_CASE("a circle walk returns to its start and the root moves along its heading") {
  ActionParams p;
  p.magnitude = 1.0;
  const auto m = synthesize(Action::walk_circle, p, 200, 20);
  CHECK(std::abs(m.frames(199, position_channel(kRoot, 0))) < 1e-4);
  CHECK(std::abs(m.frames(199, position_channel(kRoot, 2))) < 1e-4);
  for (int i = 10; i < 200; i += 37) {
    const double yaw = m.frames(i, kYawChannel);
    const double vx = m.frames(i, velocity_channel(kRoot, 0));
    const double vz = m.frames(i, velocity_channel(kRoot, 2));
    const double along = (vx * std::sin(yaw) + vz * std::cos(yaw)) / std::hypot(vx, vz);
    CHECK(along > 0.95);
  }
}

TEST_CASE("shorter performances of the same action are faster") {
  for (Action a : {Action::walk, Action::sit}) {
    ActionParams p;
    p.count = 4;
    p.magnitude = 0.5;
    const double fast = eval::dynamics_stats(synthesize(a, p, 48, 20)).avg_vel;
    const double slow = eval::dynamics_stats(synthesize(a, p, 170, 20)).avg_vel;
    CHECK(fast > 1.15 * slow);
  }
}

TEST_CASE("world positions add the root to the relative joints") {
  ActionParams p;
  p.count = 2;
  p.magnitude = 0.5;
  const auto m = synthesize(Action::walk, p, 30, 20);
  const auto w = world_positions(m);
  CHECK(w(7, 3 * kHead + 1) == doctest::Approx(m.frames(7, position_channel(kRoot, 1)) +
                                                m.frames(7, position_channel(kHead, 1))));
  CHECK(w(7, 0) == doctest::Approx(m.frames(7, 0)));
}

TEST_CASE("validate rejects wrong shapes and non-finite values") {
  MotionSequence m;
  m.frames = Frames::Zero(5, kChannels - 1);
  CHECK_THROWS_AS(validate(m), ShapeError);
  m.frames = Frames::Zero(5, kChannels);
  m.frames(2, 3) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(validate(m), DomainError);
}

TEST_CASE("normalizer standardizes the train split and inverts exactly enough") {
  const auto samples = generate_corpus(small_config(90), 3);
  const auto train = select(samples, Split::train);
  const auto n = fit_normalizer(train);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kChannels);
  double count = 0;
  for (const auto* s : train) {
    const auto z = n.normalize(s->motion.frames);
    sum += z.cast<double>().colwise().sum().transpose();
    count += static_cast<double>(z.rows());
    const auto back = n.denormalize(z);
    CHECK((back - s->motion.frames).cwiseAbs().maxCoeff() < 1e-4f);
  }
  CHECK((sum / count).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("text embedding is unit-norm, deterministic and closed over the vocabulary") {
  const TextEmbedder e(99, 32);
  const auto a = e.embed("a person walks forward for four steps");
  CHECK(a.size() == 32);
  CHECK(a.norm() == doctest::Approx(1.0f).epsilon(1e-5));
  CHECK(a == TextEmbedder(99, 32).embed("a person walks forward for four steps"));
  CHECK((a - e.embed("a person walks backward for four steps")).norm() > 1e-3f);
  CHECK_THROWS_AS(e.embed("a person moonwalks"), VocabularyError);
  CHECK(tokenize("A person, walks!") == std::vector<std::string>{"a", "person", "walks"});
}

TEST_CASE("corpus and normalizer files round-trip bitwise") {
  const auto samples = generate_corpus(small_config(30), 8);
  const auto path = temp_path("c.ladc");
  write_corpus(path, samples);
  const auto back = read_corpus(path);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].id == samples[i].id);
    CHECK(back[i].split == samples[i].split);
    CHECK(back[i].descriptor.text == samples[i].descriptor.text);
    CHECK(back[i].motion.frames == samples[i].motion.frames);
  }
  const auto n = fit_normalizer(select(samples, Split::train));
  write_normalizer(temp_path("n.ladn"), n);
  const auto m = read_normalizer(temp_path("n.ladn"));
  CHECK(m.mean == n.mean);
  CHECK(m.std == n.std);
}

TEST_CASE("damaged or missing corpus files fail with format errors") {
  const auto samples = generate_corpus(small_config(6), 8);
  const auto path = temp_path("t.ladc");
  write_corpus(path, samples);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 10);
  CHECK_THROWS_AS(read_corpus(path), FormatError);
  {
    std::ofstream out(temp_path("bad.ladc"), std::ios::binary);
    out << "NOPE0000000000000000000000";
  }
  CHECK_THROWS_AS(read_corpus(temp_path("bad.ladc")), FormatError);
  CHECK_THROWS_AS(read_corpus(temp_path("absent.ladc")), MissingArtifactError);
}
