// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "melmark/errors.hpp"

namespace melmark {

// Mono audio in [-1, 1] doubles.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

struct WavWriteStats {
  size_t clipped_samples = 0;  // inputs outside [-1, 1] hard-clipped before quantization
};

namespace detail {

inline uint32_t rd_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t rd_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// Reads a PCM RIFF/WAVE file. Integer widths 8/16/24/32 and 32-bit float are
// accepted (format tags 1, 3, and their WAVE_FORMAT_EXTENSIBLE wrappings);
// multi-channel content is averaged down to mono.
inline AudioClip load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open WAV: " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  require(raw.size() >= 12, Errc::format, "file too short for RIFF header: " + path);
  require(std::memcmp(raw.data(), "RIFF", 4) == 0 && std::memcmp(raw.data() + 8, "WAVE", 4) == 0,
          Errc::format, "not a RIFF/WAVE file: " + path);

  uint16_t fmt_tag = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  const uint8_t* data = nullptr;
  size_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const uint8_t* hdr = raw.data() + pos;
    uint32_t chunk_len = detail::rd_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    require(pos + 8 + chunk_len <= raw.size(), Errc::format,
            "chunk overruns file: " + path);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      require(chunk_len >= 16, Errc::format, "fmt chunk too short: " + path);
      fmt_tag = detail::rd_u16(body);
      channels = detail::rd_u16(body + 2);
      sample_rate = detail::rd_u32(body + 4);
      bits = detail::rd_u16(body + 14);
      if (fmt_tag == 0xFFFE) {
        require(chunk_len >= 40, Errc::format, "extensible fmt chunk too short: " + path);
        fmt_tag = detail::rd_u16(body + 24);  // first bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  require(have_fmt, Errc::format, "missing fmt chunk: " + path);
  require(data != nullptr, Errc::format, "missing data chunk: " + path);
  require(channels >= 1, Errc::format, "zero channels: " + path);
  require(sample_rate > 0, Errc::format, "zero sample rate: " + path);

  const bool is_float = (fmt_tag == 3);
  require(fmt_tag == 1 || fmt_tag == 3, Errc::unsupported,
          "unsupported WAV format tag " + std::to_string(fmt_tag) + ": " + path);
  if (is_float)
    require(bits == 32, Errc::unsupported, "only 32-bit float WAV supported: " + path);
  else
    require(bits == 8 || bits == 16 || bits == 24 || bits == 32, Errc::unsupported,
            "unsupported PCM bit depth " + std::to_string(bits) + ": " + path);

  const size_t bytes_per = bits / 8;
  const size_t frame_bytes = bytes_per * channels;
  require(frame_bytes > 0 && data_len % frame_bytes == 0, Errc::format,
          "data chunk not a whole number of frames: " + path);
  const size_t frames = data_len / frame_bytes;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(sample_rate);
  clip.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (size_t c = 0; c < channels; ++c) {
      const uint8_t* p = data + i * frame_bytes + c * bytes_per;
      double s = 0.0;
      if (is_float) {
        float v;
        std::memcpy(&v, p, 4);
        s = v;
      } else if (bits == 8) {
        s = (static_cast<int>(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        int16_t v = static_cast<int16_t>(p[0] | (p[1] << 8));
        s = v / 32768.0;
      } else if (bits == 24) {
        int32_t v = static_cast<int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
        if (v & 0x800000) v |= ~0xFFFFFF;
        s = v / 8388608.0;
      } else {  // 32-bit int
        int32_t v;
        std::memcpy(&v, p, 4);
        s = v / 2147483648.0;
      }
      acc += s;
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

// Writes mono 16-bit PCM. Out-of-range samples are clipped and counted.
inline WavWriteStats save_wav(const AudioClip& clip, const std::string& path) {
  require(clip.sample_rate > 0, Errc::parameter, "save_wav: sample rate must be positive");
  WavWriteStats stats;
  const size_t n = clip.samples.size();
  const uint32_t data_len = static_cast<uint32_t>(n * 2);

  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot write WAV: " + path);

  auto w_u32 = [&f](uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
  };
  auto w_u16 = [&f](uint16_t v) {
    uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
    f.write(reinterpret_cast<char*>(b), 2);
  };

  f.write("RIFF", 4);
  w_u32(36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  w_u32(16);
  w_u16(1);  // PCM
  w_u16(1);  // mono
  w_u32(static_cast<uint32_t>(clip.sample_rate));
  w_u32(static_cast<uint32_t>(clip.sample_rate) * 2);  // byte rate
  w_u16(2);                                            // block align
  w_u16(16);
  f.write("data", 4);
  w_u32(data_len);

  for (double s : clip.samples) {
    double c = s;
    if (c > 1.0 || c < -1.0) {
      c = std::clamp(c, -1.0, 1.0);
      ++stats.clipped_samples;
    }
    // Symmetric 32768 scale, clamped at +32767: reload error stays <= 1/32768.
    long q32 = std::lround(c * 32768.0);
    int16_t q = static_cast<int16_t>(std::clamp(q32, -32768L, 32767L));
    uint8_t b[2] = {static_cast<uint8_t>(q & 0xFF),
                    static_cast<uint8_t>((q >> 8) & 0xFF)};
    f.write(reinterpret_cast<char*>(b), 2);
  }
  require(f.good(), Errc::io, "write failed: " + path);
  return stats;
}

}  // namespace melmark
