#include "alp/wav.h"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace alp::corpus {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t read_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 24));
}
void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("wav: cannot open " + path);
  auto size = size_t(in.tellg());
  if (size < 44) throw std::runtime_error("wav: file too small: " + path);
  std::vector<uint8_t> buf(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(size));
  if (!in) throw std::runtime_error("wav: short read: " + path);

  if (std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("wav: not a RIFF/WAVE file: " + path);

  WavData wav;
  bool have_fmt = false, have_data = false;
  size_t pos = 12;
  while (pos + 8 <= size) {
    char tag[5] = {0};
    std::memcpy(tag, buf.data() + pos, 4);
    uint32_t chunk = read_u32(buf.data() + pos + 4);
    size_t body = pos + 8;
    if (body + chunk > size) throw std::runtime_error("wav: truncated chunk in " + path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk < 16) throw std::runtime_error("wav: fmt chunk too small: " + path);
      uint16_t format = read_u16(buf.data() + body);
      uint16_t channels = read_u16(buf.data() + body + 2);
      uint32_t rate = read_u32(buf.data() + body + 4);
      uint16_t bits = read_u16(buf.data() + body + 14);
      if (format != 1) throw std::runtime_error("wav: only PCM supported: " + path);
      if (channels != 1) throw std::runtime_error("wav: only mono supported: " + path);
      if (bits != 16) throw std::runtime_error("wav: only 16-bit supported: " + path);
      if (rate != 16000) throw std::runtime_error("wav: only 16 kHz supported: " + path);
      wav.sample_rate = int(rate);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      wav.samples.resize(chunk / 2);
      for (size_t i = 0; i < wav.samples.size(); ++i)
        wav.samples[i] = int16_t(read_u16(buf.data() + body + i * 2));
      have_data = true;
    }
    pos = body + chunk + (chunk & 1);
  }
  if (!have_fmt) throw std::runtime_error("wav: missing fmt chunk: " + path);
  if (!have_data) throw std::runtime_error("wav: missing data chunk: " + path);
  return wav;
}

void write_wav(const std::string& path, const WavData& wav) {
  std::vector<uint8_t> out;
  out.reserve(44 + wav.samples.size() * 2);
  uint32_t data_bytes = uint32_t(wav.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, uint32_t(wav.sample_rate));
  put_u32(out, uint32_t(wav.sample_rate) * 2);  // byte rate
  put_u16(out, 2);                              // block align
  put_u16(out, 16);                             // bits per sample
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (int16_t s : wav.samples) put_u16(out, uint16_t(s));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("wav: cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!f) throw std::runtime_error("wav: short write " + path);
}

}  // namespace alp::corpus
