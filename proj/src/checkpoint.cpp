#include "ladiff/checkpoint.hpp"

#include "binary_io.hpp"
#include "ladiff/error.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

namespace ladiff {

namespace {

std::uint32_t crc(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void put_block(std::ostream& out, const std::string& name, const ag::Matrix<float>& value) {
  io::put_string(out, name);
  io::put_u32(out, static_cast<std::uint32_t>(value.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(value.cols()));
  for (ag::Index i = 0; i < value.size(); ++i) io::put_f32(out, value.data()[i]);
}

constexpr std::string_view kMetaPrefix = "meta.";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Component component, std::uint64_t digest,
                     const ag::ParameterStore<float>& store, const CheckpointMeta& meta) {
  std::ostringstream body;
  io::put_magic(body, "LADK");
  io::put_u32(body, kCheckpointVersion);
  io::put_u32(body, static_cast<std::uint32_t>(component));
  io::put_u64(body, digest);
  const auto params = store.all();
  io::put_u32(body, static_cast<std::uint32_t>(params.size() + meta.size()));
  for (const auto* p : params) put_block(body, p->name, p->value);
  for (const auto& [name, value] : meta) {
    ag::Matrix<float> m(1, 1);
    m(0, 0) = value;
    put_block(body, std::string(kMetaPrefix) + name, m);
  }
  std::string bytes = body.str();
  std::ostringstream trailer;
  io::put_u32(trailer, crc(bytes));
  bytes += trailer.str();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(fmt::format("write to '{}' failed", path.string()));
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, Component component, std::uint64_t digest,
                               ag::ParameterStore<float>& store) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw MissingArtifactError(fmt::format("checkpoint '{}' not found", path.string()));
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  const std::string what = path.string();
  if (bytes.size() < 4 + 4 + 4 + 8 + 4 + 4) throw FormatError(fmt::format("{}: truncated checkpoint", what));

  const std::string body = bytes.substr(0, bytes.size() - 4);
  std::istringstream trailer_in(bytes.substr(bytes.size() - 4));
  io::Reader trailer(trailer_in, what);
  const std::uint32_t stored = trailer.u32();
  if (stored != crc(body)) {
    throw ChecksumError(fmt::format("{}: checksum mismatch (stored {:08x}, computed {:08x}) over {} bytes", what,
                                    stored, crc(body), body.size()));
  }

  std::istringstream body_in(body);
  io::Reader in(body_in, what);
  in.expect_magic("LADK");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) throw FormatError(fmt::format("{}: unsupported version {}", what, version));
  const std::uint32_t tag = in.u32();
  if (tag != static_cast<std::uint32_t>(component)) {
    throw FormatError(fmt::format("{}: holds component tag {}, expected {} ({})", what, tag,
                                  static_cast<std::uint32_t>(component), component_name(component)));
  }
  const std::uint64_t saved_digest = in.u64();
  if (saved_digest != digest) {
    throw DigestMismatchError(fmt::format(
        "{}: saved under a different {} configuration (digest {:016x}, current config {:016x}); retrain or load the "
        "matching config",
        what, component_name(component), saved_digest, digest));
  }

  // Parse into staging first so a failure leaves the store untouched.
  std::map<std::string, ag::Matrix<float>> staged;
  CheckpointMeta meta;
  const std::uint32_t count = in.u32();
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::size_t at = in.offset();
    const std::string name = in.string();
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    if (static_cast<std::uint64_t>(rows) * cols > body.size()) {
      throw FormatError(fmt::format("{}: block '{}' at offset {} claims {}x{} values", what, name, at, rows, cols));
    }
    ag::Matrix<float> value(rows, cols);
    for (ag::Index i = 0; i < value.size(); ++i) value.data()[i] = in.f32();
    if (name.starts_with(kMetaPrefix)) {
      if (rows != 1 || cols != 1) throw FormatError(fmt::format("{}: meta block '{}' is not 1x1", what, name));
      meta[name.substr(kMetaPrefix.size())] = value(0, 0);
      continue;
    }
    const auto* p = store.find(name);
    if (!p) throw FormatError(fmt::format("{}: unknown parameter block '{}' at offset {}", what, name, at));
    if (p->value.rows() != rows || p->value.cols() != cols) {
      throw FormatError(fmt::format("{}: block '{}' at offset {} is {}x{}, model expects {}x{}", what, name, at, rows,
                                    cols, p->value.rows(), p->value.cols()));
    }
    if (!staged.emplace(name, std::move(value)).second) {
      throw FormatError(fmt::format("{}: duplicate block '{}' at offset {}", what, name, at));
    }
  }
  if (in.offset() != body.size()) {
    throw FormatError(fmt::format("{}: {} trailing bytes after the last block", what, body.size() - in.offset()));
  }
  for (const auto* p : std::as_const(store).all()) {
    if (!staged.contains(p->name)) throw FormatError(fmt::format("{}: missing parameter block '{}'", what, p->name));
  }
  for (auto* p : store.all()) p->value = std::move(staged.at(p->name));
  return meta;
}

}  // namespace ladiff
