#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace alp::features {

struct LogMelConfig {
  int sample_rate = 16000;
  double frame_length_s = 0.025;  // Hann analysis window
  double frame_shift_s = 0.010;
  int n_mels = 64;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor_eps = 1e-10;

  int frame_length_samples() const { return int(frame_length_s * sample_rate + 0.5); }
  int frame_shift_samples() const { return int(frame_shift_s * sample_rate + 0.5); }
};

// [n_frames x n_mels] natural-log mel energies, row major.
struct LogMel {
  int n_frames = 0;
  int n_mels = 64;
  std::vector<float> values;
  LogMelConfig config;

  float at(int frame, int band) const { return values[size_t(frame) * n_mels + band]; }
  float& at(int frame, int band) { return values[size_t(frame) * n_mels + band]; }
  float min_value() const;
};

// HTK mel scale triangular filterbank. Exposed so tests can derive band
// centers independently of log_mel itself.
double hz_to_mel(double hz);
double mel_to_hz(double mel);
std::vector<double> mel_band_centers_hz(const LogMelConfig& config);

// T_frames = floor((n_samples - frame_length) / frame_shift) + 1.
LogMel log_mel(const std::vector<double>& waveform, const LogMelConfig& config = {});
LogMel log_mel_i16(const std::vector<int16_t>& samples, const LogMelConfig& config = {});

// Per-utterance mean/variance normalization, per mel band.
void normalize_per_utterance(LogMel& features, double eps = 1e-8);

struct BlockGeometry {
  int block_frames = 50;
  int block_shift = 30;
};

struct AcousticBlock {
  static constexpr int kFrames = 50;
  static constexpr int kBands = 64;
  std::vector<float> values;  // [50 x 64] row major
  int start_frame = 0;
  std::string utterance_id;
  bool padded = false;  // true when the source had fewer frames than one block

  float at(int frame, int band) const { return values[size_t(frame) * kBands + band]; }
};

// Blocks start at 0, shift, 2*shift, ...; trailing frames not covered by a
// full block are dropped. Inputs shorter than one block produce a single
// block padded with pad_value and flagged.
std::vector<AcousticBlock> extract_blocks(const LogMel& features,
                                          const BlockGeometry& geometry = {},
                                          float pad_value = -23.025850929940457f /* ln(1e-10) */);

struct PatchGeometry {
  int patch_frames = 10;
  int patch_bands = 16;
  int stride_frames = 5;
  int stride_bands = 8;

  int patch_len() const { return patch_frames * patch_bands; }
};

struct Patch {
  std::vector<float> values;  // flattened time-major: values[t * patch_bands + f]
  int position_index = 0;
};

// position_index increments first across time, then across frequency band.
struct PatchSet {
  std::vector<Patch> patches;
  PatchGeometry geometry;
  int n_time_positions = 0;
  int n_band_positions = 0;
};

PatchSet extract_patches(const AcousticBlock& block, const PatchGeometry& geometry = {});

// Feature cache: "ALFC" magic, u32 n_frames, u32 n_mels, then row-major
// little-endian float32.
void save_feature_cache(const std::string& path, const LogMel& features);
LogMel load_feature_cache(const std::string& path);

}  // namespace alp::features
