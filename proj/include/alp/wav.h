#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace alp::corpus {

// RIFF/WAV, PCM signed 16-bit little-endian, mono, 16 kHz. Anything else is
// rejected with a reason.
struct WavData {
  int sample_rate = 16000;
  std::vector<int16_t> samples;
};

WavData read_wav(const std::string& path);
void write_wav(const std::string& path, const WavData& wav);

}  // namespace alp::corpus
