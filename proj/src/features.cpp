#include "alp/features.h"

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace alp::features {

namespace {

constexpr double kPi = 3.14159265358979323846;

// In-place iterative radix-2 FFT; n must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * kPi / double(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// filters[m][bin] over bins 0..n_fft/2
std::vector<std::vector<double>> build_mel_filters(const LogMelConfig& cfg, size_t n_fft) {
  size_t n_bins = n_fft / 2 + 1;
  int n_mels = cfg.n_mels;
  double mel_lo = hz_to_mel(cfg.fmin_hz);
  double mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> mel_points(size_t(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    mel_points[size_t(i)] = mel_lo + (mel_hi - mel_lo) * double(i) / double(n_mels + 1);
  std::vector<double> hz_points(mel_points.size());
  for (size_t i = 0; i < mel_points.size(); ++i) hz_points[i] = mel_to_hz(mel_points[i]);

  std::vector<std::vector<double>> filters(size_t(n_mels), std::vector<double>(n_bins, 0.0));
  double bin_hz = double(cfg.sample_rate) / double(n_fft);
  for (int m = 0; m < n_mels; ++m) {
    double lo = hz_points[size_t(m)];
    double mid = hz_points[size_t(m) + 1];
    double hi = hz_points[size_t(m) + 2];
    for (size_t b = 0; b < n_bins; ++b) {
      double f = double(b) * bin_hz;
      double w = 0.0;
      if (f >= lo && f <= mid && mid > lo) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f <= hi && hi > mid) {
        w = (hi - f) / (hi - mid);
      }
      filters[size_t(m)][b] = w;
    }
  }
  return filters;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_centers_hz(const LogMelConfig& config) {
  double mel_lo = hz_to_mel(config.fmin_hz);
  double mel_hi = hz_to_mel(config.fmax_hz);
  std::vector<double> centers(size_t(config.n_mels));
  for (int m = 0; m < config.n_mels; ++m)
    centers[size_t(m)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(m + 1) / double(config.n_mels + 1));
  return centers;
}

float LogMel::min_value() const {
  float mn = values.empty() ? 0.0f : values[0];
  for (float v : values) mn = std::min(mn, v);
  return mn;
}

LogMel log_mel(const std::vector<double>& waveform, const LogMelConfig& config) {
  int win = config.frame_length_samples();
  int shift = config.frame_shift_samples();
  if (int(waveform.size()) < win)
    throw std::invalid_argument("log_mel: waveform shorter than one analysis window");
  for (double s : waveform)
    if (!std::isfinite(s)) throw std::invalid_argument("log_mel: non-finite sample");

  size_t n_fft = next_pow2(size_t(win));
  auto filters = build_mel_filters(config, n_fft);
  std::vector<double> window(size_t(win), 0.0);
  for (int i = 0; i < win; ++i)
    window[size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(win - 1));

  LogMel out;
  out.config = config;
  out.n_mels = config.n_mels;
  out.n_frames = int((waveform.size() - size_t(win)) / size_t(shift)) + 1;
  out.values.resize(size_t(out.n_frames) * size_t(config.n_mels));

  std::vector<std::complex<double>> buf(n_fft);
  std::vector<double> power(n_fft / 2 + 1);
  for (int frame = 0; frame < out.n_frames; ++frame) {
    size_t start = size_t(frame) * size_t(shift);
    for (size_t i = 0; i < n_fft; ++i) {
      double s = (i < size_t(win)) ? waveform[start + i] * window[i] : 0.0;
      buf[i] = std::complex<double>(s, 0.0);
    }
    fft(buf);
    for (size_t b = 0; b < power.size(); ++b) power[b] = std::norm(buf[b]);
    for (int m = 0; m < config.n_mels; ++m) {
      double e = 0.0;
      const auto& filt = filters[size_t(m)];
      for (size_t b = 0; b < power.size(); ++b) e += filt[b] * power[b];
      out.at(frame, m) = float(std::log(e + config.log_floor_eps));
    }
  }
  return out;
}

LogMel log_mel_i16(const std::vector<int16_t>& samples, const LogMelConfig& config) {
  std::vector<double> wav(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) wav[i] = double(samples[i]) / 32768.0;
  return log_mel(wav, config);
}

void normalize_per_utterance(LogMel& features, double eps) {
  if (features.n_frames == 0) return;
  for (int m = 0; m < features.n_mels; ++m) {
    double mean = 0.0;
    for (int f = 0; f < features.n_frames; ++f) mean += double(features.at(f, m));
    mean /= double(features.n_frames);
    double var = 0.0;
    for (int f = 0; f < features.n_frames; ++f) {
      double d = double(features.at(f, m)) - mean;
      var += d * d;
    }
    var /= double(features.n_frames);
    double inv = 1.0 / std::sqrt(var + eps);
    for (int f = 0; f < features.n_frames; ++f)
      features.at(f, m) = float((double(features.at(f, m)) - mean) * inv);
  }
}

std::vector<AcousticBlock> extract_blocks(const LogMel& features, const BlockGeometry& geometry,
                                          float pad_value) {
  if (geometry.block_frames != AcousticBlock::kFrames || features.n_mels != AcousticBlock::kBands)
    throw std::invalid_argument("extract_blocks: block shape is fixed at 50x64");
  if (geometry.block_shift <= 0) throw std::invalid_argument("extract_blocks: bad shift");

  std::vector<AcousticBlock> blocks;
  if (features.n_frames < geometry.block_frames) {
    AcousticBlock b;
    b.start_frame = 0;
    b.padded = true;
    b.values.assign(size_t(AcousticBlock::kFrames) * AcousticBlock::kBands, pad_value);
    for (int f = 0; f < features.n_frames; ++f)
      for (int m = 0; m < features.n_mels; ++m)
        b.values[size_t(f) * AcousticBlock::kBands + size_t(m)] = features.at(f, m);
    blocks.push_back(std::move(b));
    return blocks;
  }

  int count = (features.n_frames - geometry.block_frames) / geometry.block_shift + 1;
  for (int i = 0; i < count; ++i) {
    AcousticBlock b;
    b.start_frame = i * geometry.block_shift;
    b.values.resize(size_t(AcousticBlock::kFrames) * AcousticBlock::kBands);
    for (int f = 0; f < geometry.block_frames; ++f)
      for (int m = 0; m < features.n_mels; ++m)
        b.values[size_t(f) * AcousticBlock::kBands + size_t(m)] = features.at(b.start_frame + f, m);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

PatchSet extract_patches(const AcousticBlock& block, const PatchGeometry& geometry) {
  if (geometry.patch_frames <= 0 || geometry.patch_bands <= 0 || geometry.stride_frames <= 0 ||
      geometry.stride_bands <= 0)
    throw std::invalid_argument("extract_patches: geometry values must be positive");
  if (geometry.patch_frames > AcousticBlock::kFrames || geometry.patch_bands > AcousticBlock::kBands)
    throw std::invalid_argument("extract_patches: patch larger than block");

  PatchSet set;
  set.geometry = geometry;
  set.n_time_positions = (AcousticBlock::kFrames - geometry.patch_frames) / geometry.stride_frames + 1;
  set.n_band_positions = (AcousticBlock::kBands - geometry.patch_bands) / geometry.stride_bands + 1;

  for (int fb = 0; fb < set.n_band_positions; ++fb) {
    for (int ft = 0; ft < set.n_time_positions; ++ft) {
      Patch p;
      p.position_index = fb * set.n_time_positions + ft;
      p.values.resize(size_t(geometry.patch_len()));
      int t0 = ft * geometry.stride_frames;
      int b0 = fb * geometry.stride_bands;
      for (int t = 0; t < geometry.patch_frames; ++t)
        for (int b = 0; b < geometry.patch_bands; ++b)
          p.values[size_t(t) * size_t(geometry.patch_bands) + size_t(b)] = block.at(t0 + t, b0 + b);
      set.patches.push_back(std::move(p));
    }
  }
  return set;
}

void save_feature_cache(const std::string& path, const LogMel& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature cache: " + path);
  out.write("ALFC", 4);
  uint32_t t = uint32_t(features.n_frames), m = uint32_t(features.n_mels);
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&m), 4);
  out.write(reinterpret_cast<const char*>(features.values.data()),
            std::streamsize(features.values.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to feature cache: " + path);
}

LogMel load_feature_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature cache: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ALFC", 4) != 0)
    throw std::runtime_error("bad feature cache magic: " + path);
  uint32_t t = 0, m = 0;
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&m), 4);
  LogMel out;
  out.n_frames = int(t);
  out.n_mels = int(m);
  out.values.resize(size_t(t) * size_t(m));
  in.read(reinterpret_cast<char*>(out.values.data()),
          std::streamsize(out.values.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated feature cache: " + path);
  return out;
}

}  // namespace alp::features
