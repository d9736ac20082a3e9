#include "binary_io.hpp"
#include "ladiff/corpus.hpp"
#include "ladiff/error.hpp"

#include <fstream>

#include <fmt/format.h>

namespace ladiff::corpus {

namespace {

struct Header {
  std::uint32_t version = kCorpusFormatVersion;
  std::uint32_t joints = kJoints;
  std::uint32_t channels = kChannels;
  std::uint32_t fps = kDefaultFps;
  std::uint32_t count = 0;
};

void put_header(std::ostream& out, const char (&magic)[5], const Header& h) {
  io::put_magic(out, magic);
  io::put_u32(out, h.version);
  io::put_u32(out, h.joints);
  io::put_u32(out, h.channels);
  io::put_u32(out, h.fps);
  io::put_u32(out, h.count);
}

Header get_header(io::Reader& in, const char (&magic)[5]) {
  in.expect_magic(magic);
  Header h;
  h.version = in.u32();
  if (h.version != kCorpusFormatVersion) {
    throw FormatError(fmt::format("{}: unsupported format version {}", in.what(), h.version));
  }
  h.joints = in.u32();
  h.channels = in.u32();
  h.fps = in.u32();
  h.count = in.u32();
  if (h.channels != 6 * h.joints + 1) {
    throw FormatError(fmt::format("{}: V={} inconsistent with J={}", in.what(), h.channels, h.joints));
  }
  return h;
}

void put_record(std::ostream& out, std::uint32_t id, Split split, const std::string& text,
                const MotionSequence& motion) {
  io::put_u32(out, id);
  io::put_u8(out, static_cast<std::uint8_t>(split));
  io::put_string(out, text);
  io::put_u32(out, static_cast<std::uint32_t>(motion.length()));
  const auto& x = motion.frames;
  for (Eigen::Index i = 0; i < x.size(); ++i) io::put_f32(out, x.data()[i]);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(fmt::format("cannot open '{}'", path.string()));
  return in;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, std::span<const CorpusSample> samples, int fps) {
  auto out = open_out(path);
  Header h;
  h.fps = static_cast<std::uint32_t>(fps);
  h.count = static_cast<std::uint32_t>(samples.size());
  put_header(out, "LADC", h);
  for (const auto& s : samples) {
    validate(s.motion);
    put_record(out, s.id, s.split, s.descriptor.text, s.motion);
  }
  if (!out) throw FormatError(fmt::format("write to '{}' failed", path.string()));
}

std::vector<CorpusSample> read_corpus(const std::filesystem::path& path) {
  auto file = open_in(path);
  io::Reader in(file, path.string());
  const Header h = get_header(in, "LADC");
  std::vector<CorpusSample> out;
  out.reserve(h.count);
  for (std::uint32_t n = 0; n < h.count; ++n) {
    CorpusSample s;
    s.id = in.u32();
    const std::uint8_t split = in.u8();
    if (split > 2) throw FormatError(fmt::format("{}: bad split tag {} at offset {}", in.what(), split, in.offset()));
    s.split = static_cast<Split>(split);
    const std::string text = in.string();
    s.descriptor = parse_descriptor(text);
    const std::uint32_t frames = in.u32();
    if (frames == 0 || frames > 100000) {
      throw FormatError(fmt::format("{}: bad frame count {} at offset {}", in.what(), frames, in.offset()));
    }
    s.motion.fps = static_cast<int>(h.fps);
    s.motion.frames.resize(frames, h.channels);
    for (Eigen::Index i = 0; i < s.motion.frames.size(); ++i) s.motion.frames.data()[i] = in.f32();
    out.push_back(std::move(s));
  }
  return out;
}

void write_normalizer(const std::filesystem::path& path, const Normalizer& normalizer) {
  auto out = open_out(path);
  Header h;
  h.channels = static_cast<std::uint32_t>(normalizer.mean.size());
  h.joints = (h.channels - 1) / 6;
  put_header(out, "LADN", h);
  for (Eigen::Index i = 0; i < normalizer.mean.size(); ++i) io::put_f32(out, static_cast<float>(normalizer.mean(i)));
  for (Eigen::Index i = 0; i < normalizer.std.size(); ++i) io::put_f32(out, static_cast<float>(normalizer.std(i)));
}

Normalizer read_normalizer(const std::filesystem::path& path) {
  auto file = open_in(path);
  io::Reader in(file, path.string());
  const Header h = get_header(in, "LADN");
  Normalizer n;
  n.mean.resize(h.channels);
  n.std.resize(h.channels);
  for (std::uint32_t i = 0; i < h.channels; ++i) n.mean(i) = in.f32();
  for (std::uint32_t i = 0; i < h.channels; ++i) n.std(i) = in.f32();
  return n;
}

void write_motion(const std::filesystem::path& path, const MotionSequence& motion, const std::string& text) {
  auto out = open_out(path);
  Header h;
  h.fps = static_cast<std::uint32_t>(motion.fps);
  h.count = 1;
  put_header(out, "LADC", h);
  put_record(out, 0, Split::test, text, motion);
}

}  // namespace ladiff::corpus
