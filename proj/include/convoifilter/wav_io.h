// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CONVOIFILTER_WAV_IO_H_
#define CONVOIFILTER_WAV_IO_H_

#include <filesystem>

#include "convoifilter/dsp.h"

namespace cvf {

enum class WavEncoding { kPcm16, kFloat32 };

// Mono RIFF/WAVE, PCM 16-bit or IEEE float-32. PCM samples map to floats by
// division by 32768. Multi-channel files are rejected.
Waveform read_wav(const std::filesystem::path& path);

// PCM16 writing rounds and saturates to [-32768, 32767].
void write_wav(const std::filesystem::path& path, const Waveform& w,
               WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace cvf

#endif  // CONVOIFILTER_WAV_IO_H_
