// SPDX-License-Identifier: Apache-2.0
//
// Mono audio clips, RIFF/WAVE decoding and encoding, and windowed-sinc
// resampling to the 16 kHz working rate.
#pragma once

#include <swishnet/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace swishnet {

inline constexpr int kWorkingRate = 16000;

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kWorkingRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

namespace detail {

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes an in-memory RIFF/WAVE image. PCM16 is scaled by 1/32768,
/// float32 is taken as is; channels are averaged to mono.
inline AudioClip decode_wav(std::span<const unsigned char> bytes) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DecodeError("not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::span<const unsigned char> payload;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t chunk_size = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (chunk_size > bytes.size() - body) throw DecodeError("truncated RIFF chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw DecodeError("fmt chunk too small");
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (format == 0xFFFE) {
        // WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the real tag.
        if (chunk_size < 40) throw DecodeError("extensible fmt chunk too small");
        format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      payload = bytes.subspan(body, chunk_size);
      have_data = true;
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }
  if (pos < bytes.size() && !have_data) throw DecodeError("truncated RIFF chunk header");
  if (!have_fmt) throw DecodeError("missing fmt chunk");
  if (!have_data) throw DecodeError("missing data chunk");
  if (channels == 0) throw DecodeError("zero channels");
  if (rate == 0) throw DecodeError("zero sample rate");

  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) {
    throw UnsupportedFormatError("unsupported WAV codec (format tag " + std::to_string(format) +
                                 ", " + std::to_string(bits) + " bits)");
  }

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t n = payload.size() / frame_bytes;
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = payload.data() + i * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        acc += static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        const std::uint32_t raw = read_u32(p);
        float v;
        std::memcpy(&v, &raw, sizeof v);
        if (!std::isfinite(v)) throw DecodeError("non-finite float sample");
        acc += v;
      }
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

inline AudioClip load_wav(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return decode_wav(bytes);
}

enum class WavEncoding { Pcm16, Float32 };

/// Encodes a mono clip. PCM16 clamps to [-1, 1).
inline std::vector<unsigned char> encode_wav(const AudioClip& clip,
                                             WavEncoding enc = WavEncoding::Pcm16) {
  using detail::put_u16;
  using detail::put_u32;
  const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.size() * (bits / 8));
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, enc == WavEncoding::Pcm16 ? 1 : 3);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (double s : clip.samples) {
    if (enc == WavEncoding::Pcm16) {
      const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
      const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      put_u16(out, static_cast<std::uint16_t>(v));
    } else {
      const float f = static_cast<float>(s);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      put_u32(out, raw);
    }
  }
  return out;
}

inline void save_wav(const std::filesystem::path& path, const AudioClip& clip,
                     WavEncoding enc = WavEncoding::Pcm16) {
  const auto bytes = encode_wav(clip, enc);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DecodeError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Band-limited interpolation with a Hann-windowed sinc kernel. The cutoff
/// follows the lower of the two Nyquist frequencies.
inline AudioClip resample(const AudioClip& clip, int target_rate, int half_taps = 32) {
  if (target_rate <= 0 || clip.sample_rate <= 0) throw ConfigError("sample rates must be positive");
  if (target_rate == clip.sample_rate || clip.empty()) {
    AudioClip out = clip;
    out.sample_rate = target_rate;
    return out;
  }
  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to the input Nyquist
  const double support = half_taps / cutoff;
  const auto n_out = static_cast<std::size_t>(std::floor(clip.size() * ratio));
  const auto n_in = static_cast<std::ptrdiff_t>(clip.size());

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double center = i / ratio;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(center - support));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(center + support));
    double acc = 0.0;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(lo, 0); j <= std::min(hi, n_in - 1); ++j) {
      const double d = center - static_cast<double>(j);
      const double x = d * cutoff;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * d / support);
      acc += clip.samples[static_cast<std::size_t>(j)] * cutoff * sinc * window;
    }
    out.samples[i] = acc;
  }
  return out;
}

}  // namespace swishnet
