// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/wav_io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "convoifilter/errors.h"

namespace cvf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "wav_io assumes a little-endian host");

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(const std::vector<char>& buf, std::size_t pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string* out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  out->append(bytes, sizeof(T));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw FormatError(name + ": not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const uint32_t size = read_le<uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size()) throw FormatError(name + ": truncated chunk " + id);
    if (id == "fmt ") {
      if (size < 16) throw FormatError(name + ": short fmt chunk");
      format = read_le<uint16_t>(buf, body);
      channels = read_le<uint16_t>(buf, body + 2);
      rate = read_le<uint32_t>(buf, body + 4);
      bits = read_le<uint16_t>(buf, body + 14);
      if (format == kFormatExtensible && size >= 26)
        format = read_le<uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(name + ": data chunk before fmt");
      if (channels != 1) throw FormatError(name + ": only mono audio is supported");
      if (rate == 0) throw FormatError(name + ": zero sample rate");
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      if (format == kFormatPcm && bits == 16) {
        w.samples.resize(size / 2);
        for (std::size_t i = 0; i < w.samples.size(); ++i)
          w.samples[i] = read_le<int16_t>(buf, body + 2 * i) / 32768.0f;
      } else if (format == kFormatFloat && bits == 32) {
        w.samples.resize(size / 4);
        std::memcpy(w.samples.data(), buf.data() + body, w.samples.size() * 4);
      } else {
        throw FormatError(name + ": unsupported sample format (need PCM16 or float32)");
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError(name + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w,
               WavEncoding encoding) {
  const bool pcm = encoding == WavEncoding::kPcm16;
  const uint16_t bits = pcm ? 16 : 32;
  const uint32_t data_bytes = static_cast<uint32_t>(w.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  put_le<uint32_t>(&out, 36 + data_bytes);
  out.append("WAVEfmt ");
  put_le<uint32_t>(&out, 16);
  put_le<uint16_t>(&out, pcm ? kFormatPcm : kFormatFloat);
  put_le<uint16_t>(&out, 1);
  put_le<uint32_t>(&out, static_cast<uint32_t>(w.sample_rate));
  put_le<uint32_t>(&out, static_cast<uint32_t>(w.sample_rate) * (bits / 8));
  put_le<uint16_t>(&out, bits / 8);
  put_le<uint16_t>(&out, bits);
  out.append("data");
  put_le<uint32_t>(&out, data_bytes);
  for (float v : w.samples) {
    if (pcm) {
      const long q = std::lround(static_cast<double>(v) * 32768.0);
      put_le<int16_t>(&out, static_cast<int16_t>(std::clamp(q, -32768L, 32767L)));
    } else {
      put_le<float>(&out, v);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace cvf
