#pragma once

#include <filesystem>
#include <span>

#include "fcac/dsp.hpp"

namespace fcac {

/// Reads a mono RIFF/WAVE file with 16-bit PCM or 32-bit IEEE float samples.
/// The clip id defaults to the file stem.
AudioClip read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono; samples are clamped to [-1, 1].
void write_wav_pcm16(const std::filesystem::path& path, std::span<const Real> samples,
                     std::uint32_t sample_rate);

}  // namespace fcac
