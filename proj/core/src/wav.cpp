#include "fcac/wav.hpp"

#include <algorithm>
#include <cmath>

#include "fcac/binary_io.hpp"
#include "fcac/error.hpp"

namespace fcac {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::string fourcc(BinaryReader& r) {
  std::string s(4, '\0');
  for (auto& c : s) c = static_cast<char>(r.u8());
  return s;
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  BinaryReader r(bytes);
  const auto where = " in '" + path.string() + "'";
  if (fourcc(r) != "RIFF") throw FormatError("missing RIFF header" + where);
  r.u32();
  if (fourcc(r) != "WAVE") throw FormatError("missing WAVE tag" + where);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const auto id = fourcc(r);
    const auto size = r.u32();
    if (size > r.remaining()) throw FormatError("chunk '" + id + "' overruns file" + where);
    const auto start = r.position();
    if (id == "fmt ") {
      if (size < 16) throw FormatError("short fmt chunk" + where);
      const auto lo = r.u32();
      format = static_cast<std::uint16_t>(lo & 0xFFFF);
      channels = static_cast<std::uint16_t>(lo >> 16);
      rate = r.u32();
      r.u32();  // byte rate
      bits = static_cast<std::uint16_t>(r.u32() >> 16);
      if (format == kFormatExtensible && size >= 40) {
        r.u32();  // cbSize + valid bits
        r.u32();  // channel mask
        format = static_cast<std::uint16_t>(r.u32() & 0xFFFF);
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk" + where);
      if (channels != 1) throw FormatError("only mono audio is supported" + where);
      if (rate == 0) throw FormatError("zero sample rate" + where);
      AudioClip clip;
      clip.sample_rate = rate;
      clip.clip_id = path.stem().string();
      if (format == kFormatPcm && bits == 16) {
        clip.samples.resize(size / 2);
        for (auto& s : clip.samples) {
          const auto lo = r.u8();
          const auto hi = r.u8();
          const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
          s = static_cast<Real>(v) / Real(32768);
        }
      } else if (format == kFormatFloat && bits == 32) {
        clip.samples.resize(size / 4);
        for (auto& s : clip.samples) s = static_cast<Real>(r.f32());
      } else {
        throw FormatError("unsupported sample format " + std::to_string(format) + "/" +
                          std::to_string(bits) + " bits" + where);
      }
      return clip;
    }
    // Skip the rest of the chunk, including the pad byte of odd-sized chunks.
    const auto consumed = r.position() - start;
    const auto skip = size - consumed + (size & 1u);
    for (std::size_t i = 0; i < skip && r.remaining() > 0; ++i) r.u8();
  }
  throw FormatError("no data chunk" + where);
}

void write_wav_pcm16(const std::filesystem::path& path, std::span<const Real> samples,
                     std::uint32_t sample_rate) {
  BinaryWriter w;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  auto tag = [&](const char* t) {
    for (int i = 0; i < 4; ++i) w.u8(static_cast<std::uint8_t>(t[i]));
  };
  tag("RIFF");
  w.u32(36 + data_bytes);
  tag("WAVE");
  tag("fmt ");
  w.u32(16);
  w.u32(kFormatPcm | (1u << 16));
  w.u32(sample_rate);
  w.u32(sample_rate * 2);
  w.u32(2u | (16u << 16));
  tag("data");
  w.u32(data_bytes);
  for (auto s : samples) {
    const auto clamped = std::clamp(static_cast<double>(s), -1.0, 1.0);
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(clamped * 32768.0, -32768.0, 32767.0)));
    const auto u = static_cast<std::uint16_t>(v);
    w.u8(static_cast<std::uint8_t>(u & 0xFF));
    w.u8(static_cast<std::uint8_t>(u >> 8));
  }
  write_file_bytes(path, w.bytes());
}

}  // namespace fcac
