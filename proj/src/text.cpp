#include "ladiff/corpus.hpp"
#include "ladiff/error.hpp"
#include "ladiff/rng.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace ladiff::corpus {

namespace {

constexpr std::array<std::string_view, 4> kSubjects = {"a man", "a person", "someone", "a woman"};
constexpr std::array<std::string_view, 7> kNumbers = {"zero", "one", "two", "three", "four", "five", "six"};

std::string_view times_word(int n) {
  switch (n) {
    case 1: return "once";
    case 2: return "twice";
    case 3: return "three times";
    case 4: return "four times";
    default: throw DomainError(fmt::format("no repetition word for {}", n));
  }
}

struct SlotRanges {
  int count_min = 1;
  int count_max = 1;
  bool uses_mirror = false;
  bool uses_large = false;
};

SlotRanges slot_ranges(Action a) {
  switch (a) {
    case Action::walk: return {2, 6, true, false};
    case Action::walk_circle: return {1, 1, true, true};
    case Action::sit: return {1, 1, false, true};
    case Action::throw_ball: return {1, 1, true, false};
    case Action::jump: return {1, 3, false, false};
    case Action::wave: return {2, 4, true, false};
  }
  return {};
}

std::map<std::string, TextDescriptor> build_index() {
  std::map<std::string, TextDescriptor> index;
  for (int ai = 0; ai < kActionCount; ++ai) {
    const auto action = static_cast<Action>(ai);
    const SlotRanges r = slot_ranges(action);
    for (int variant = 0; variant < variant_count(action); ++variant) {
      for (int subject = 0; subject < static_cast<int>(kSubjects.size()); ++subject) {
        for (int count = r.count_min; count <= r.count_max; ++count) {
          for (int mirrored = 0; mirrored <= (r.uses_mirror ? 1 : 0); ++mirrored) {
            for (int large = 0; large <= (r.uses_large ? 1 : 0); ++large) {
              ActionParams p;
              p.variant = variant;
              p.subject = subject;
              p.count = count;
              p.mirrored = mirrored != 0;
              p.large = large != 0;
              TextDescriptor d{render_text(action, p), action, p};
              index.emplace(d.text, d);
            }
          }
        }
      }
    }
  }
  return index;
}

const std::map<std::string, TextDescriptor>& text_index() {
  static const auto index = build_index();
  return index;
}

}  // namespace

std::string_view action_name(Action a) {
  switch (a) {
    case Action::walk: return "walk";
    case Action::walk_circle: return "walk-in-circle";
    case Action::sit: return "sit";
    case Action::throw_ball: return "throw";
    case Action::jump: return "jump";
    case Action::wave: return "wave";
  }
  return "unknown";
}

Action parse_action(std::string_view name) {
  for (int i = 0; i < kActionCount; ++i) {
    if (action_name(static_cast<Action>(i)) == name) return static_cast<Action>(i);
  }
  throw ConfigError(fmt::format("unknown action '{}'", name));
}

int variant_count(Action) { return 2; }

std::string render_text(Action action, const ActionParams& p) {
  const SlotRanges r = slot_ranges(action);
  if (p.variant < 0 || p.variant >= variant_count(action) || p.subject < 0 ||
      p.subject >= static_cast<int>(kSubjects.size()) || p.count < r.count_min || p.count > r.count_max) {
    throw DomainError(fmt::format("params out of range for action '{}'", action_name(action)));
  }
  const std::string_view subj = kSubjects[static_cast<std::size_t>(p.subject)];
  const std::string_view side = p.mirrored ? "left" : "right";
  switch (action) {
    case Action::walk: {
      const std::string_view dir = p.mirrored ? "backward" : "forward";
      const std::string_view n = kNumbers[static_cast<std::size_t>(p.count)];
      return p.variant == 0 ? fmt::format("{} walks {} for {} steps", subj, dir, n)
                            : fmt::format("{} takes {} steps {}", subj, n, dir);
    }
    case Action::walk_circle: {
      const std::string_view size = p.large ? "large" : "small";
      const std::string_view rot = p.mirrored ? "counterclockwise" : "clockwise";
      return p.variant == 0 ? fmt::format("{} walks in a {} circle {}", subj, size, rot)
                            : fmt::format("{} walks {} around a {} circle", subj, rot, size);
    }
    case Action::sit: {
      const std::string_view seat = p.large ? "a chair" : "the floor";
      return p.variant == 0 ? fmt::format("{} sits down on {}", subj, seat)
                            : fmt::format("{} lowers down to sit on {}", subj, seat);
    }
    case Action::throw_ball:
      return p.variant == 0 ? fmt::format("{} throws a ball with the {} hand", subj, side)
                            : fmt::format("{} winds up and throws with the {} arm", subj, side);
    case Action::jump:
      return p.variant == 0 ? fmt::format("{} jumps up {}", subj, times_word(p.count))
                            : fmt::format("{} jumps in place {}", subj, times_word(p.count));
    case Action::wave:
      return p.variant == 0 ? fmt::format("{} waves the {} hand {}", subj, side, times_word(p.count))
                            : fmt::format("{} raises the {} hand and waves {}", subj, side, times_word(p.count));
  }
  throw DomainError("unknown action");
}

TextDescriptor parse_descriptor(std::string_view text) {
  const auto& index = text_index();
  auto it = index.find(std::string(text));
  if (it == index.end()) {
    for (const auto& tok : tokenize(text)) {
      const auto& vocab = vocabulary();
      if (!std::binary_search(vocab.begin(), vocab.end(), tok)) {
        throw VocabularyError(fmt::format("token '{}' is not in the vocabulary", tok));
      }
    }
    throw VocabularyError(fmt::format("text '{}' is not produced by the template grammar", text));
  }
  return it->second;
}

const std::vector<TextDescriptor>& grammar_texts() {
  static const auto texts = [] {
    std::vector<TextDescriptor> out;
    for (const auto& [text, d] : text_index()) out.push_back(d);
    return out;
  }();
  return texts;
}

const std::vector<std::string>& vocabulary() {
  static const auto vocab = [] {
    std::set<std::string> words;
    for (const auto& [text, d] : text_index()) {
      for (auto& tok : tokenize(text)) words.insert(std::move(tok));
    }
    return std::vector<std::string>(words.begin(), words.end());
  }();
  return vocab;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n') {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else if (std::ispunct(static_cast<unsigned char>(c)) == 0) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

TextEmbedder::TextEmbedder(std::uint64_t seed, int dim) : dim_(dim), vocab_(vocabulary()) {
  if (dim < 1) throw ConfigError("text embedding dimension must be positive");
  table_.resize(static_cast<Eigen::Index>(vocab_.size()), dim);
  for (std::size_t w = 0; w < vocab_.size(); ++w) {
    Rng rng(derive_seed(seed, w));
    for (int j = 0; j < dim; ++j) table_(static_cast<Eigen::Index>(w), j) = static_cast<float>(rng.normal());
  }
}

Eigen::VectorXf TextEmbedder::embed(std::string_view text) const {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw VocabularyError("empty text");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_);
  for (const auto& tok : tokens) {
    auto it = std::lower_bound(vocab_.begin(), vocab_.end(), tok);
    if (it == vocab_.end() || *it != tok) {
      throw VocabularyError(fmt::format("token '{}' is not in the vocabulary", tok));
    }
    acc += table_.row(it - vocab_.begin()).transpose().cast<double>();
  }
  acc /= static_cast<double>(tokens.size());
  const double norm = acc.norm();
  if (norm > 0.0) acc /= norm;
  return acc.cast<float>();
}

}  // namespace ladiff::corpus
