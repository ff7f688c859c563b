#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "alp/features.h"
#include "alp/rng.h"

using namespace alp;
using namespace alp::features;

namespace {

std::vector<double> sine_wave(double freq_hz, double seconds, double amp = 0.5) {
  int n = int(seconds * 16000);
  std::vector<double> w(size_t(n), 0.0);
  for (int i = 0; i < n; ++i)
    w[size_t(i)] = amp * std::sin(2.0 * 3.14159265358979323846 * freq_hz * i / 16000.0);
  return w;
}

std::vector<double> noise_wave(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(size_t(n), 0.0);
  for (auto& v : w) v = 0.1 * rng.gauss();
  return w;
}

}  // namespace

TEST_CASE("frame count formula: 1 second at 16 kHz gives 98 frames") {
  auto mel = log_mel(std::vector<double>(16000, 0.0));
  CHECK(mel.n_frames == 98);
  CHECK(mel.n_mels == 64);
}

TEST_CASE("silence maps every band to the log floor") {
  auto mel = log_mel(std::vector<double>(8000, 0.0));
  float floor = float(std::log(1e-10));
  for (float v : mel.values) CHECK(v == doctest::Approx(floor).epsilon(1e-9));
}

TEST_CASE("log_mel input validation") {
  CHECK_THROWS_AS(log_mel(std::vector<double>(100, 0.0)), std::invalid_argument);
  std::vector<double> bad(1000, 0.0);
  bad[5] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(log_mel(bad), std::invalid_argument);
}

TEST_CASE("pure tone: argmax band constant across frames and centered near 1 kHz") {
  auto mel = log_mel(sine_wave(1000.0, 1.0));
  int first = 0;
  for (int b = 1; b < 64; ++b)
    if (mel.at(0, b) > mel.at(0, first)) first = b;
  for (int f = 1; f < mel.n_frames; ++f) {
    int best = 0;
    for (int b = 1; b < 64; ++b)
      if (mel.at(f, b) > mel.at(f, best)) best = b;
    CHECK(best == first);
  }
  // independent oracle: the band whose center frequency is closest to 1 kHz
  auto centers = mel_band_centers_hz(LogMelConfig{});
  int closest = 0;
  for (int b = 1; b < 64; ++b)
    if (std::fabs(centers[size_t(b)] - 1000.0) < std::fabs(centers[size_t(closest)] - 1000.0))
      closest = b;
  CHECK(std::abs(first - closest) <= 1);
}

TEST_CASE("scaling the waveform up increases every log-mel value") {
  auto w = noise_wave(6000, 11);
  auto mel1 = log_mel(w);
  for (auto& v : w) v *= 2.0;
  auto mel2 = log_mel(w);
  for (size_t i = 0; i < mel1.values.size(); ++i) CHECK(mel2.values[i] > mel1.values[i]);
}

TEST_CASE("log_mel is deterministic") {
  auto w = noise_wave(5000, 3);
  auto a = log_mel(w);
  auto b = log_mel(w);
  CHECK(a.values == b.values);
}

TEST_CASE("block extraction start positions") {
  auto make_mel = [](int frames) {
    LogMel mel;
    mel.n_frames = frames;
    mel.n_mels = 64;
    mel.values.resize(size_t(frames) * 64);
    for (size_t i = 0; i < mel.values.size(); ++i) mel.values[i] = float(i % 97) * 0.01f;
    return mel;
  };

  SUBCASE("110 frames give starts 0,30,60") {
    auto blocks = extract_blocks(make_mel(110));
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0].start_frame == 0);
    CHECK(blocks[1].start_frame == 30);
    CHECK(blocks[2].start_frame == 60);
    for (const auto& b : blocks) CHECK_FALSE(b.padded);
  }
  SUBCASE("exact fit gives one block") {
    auto blocks = extract_blocks(make_mel(50));
    REQUIRE(blocks.size() == 1);
    CHECK_FALSE(blocks[0].padded);
  }
  SUBCASE("49 frames give one floor-padded flagged block") {
    auto mel = make_mel(49);
    auto blocks = extract_blocks(mel, BlockGeometry{}, -5.0f);
    REQUIRE(blocks.size() == 1);
    CHECK(blocks[0].padded);
    CHECK(blocks[0].at(48, 0) == mel.at(48, 0));
    CHECK(blocks[0].at(49, 0) == -5.0f);
    CHECK(blocks[0].at(49, 63) == -5.0f);
  }
  SUBCASE("block content matches source frames") {
    auto mel = make_mel(80);
    auto blocks = extract_blocks(mel);
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[1].at(0, 0) == mel.at(30, 0));
    CHECK(blocks[1].at(19, 63) == mel.at(49, 63));
  }
}

TEST_CASE("block extraction is translation-consistent over one shift") {
  auto w = noise_wave(16000 + 30 * 160, 9);
  std::vector<double> shifted(w.begin() + 30 * 160, w.end());
  auto mel_full = log_mel(w);
  auto mel_shift = log_mel(shifted);
  auto blocks_full = extract_blocks(mel_full);
  auto blocks_shift = extract_blocks(mel_shift);
  REQUIRE(blocks_shift.size() >= 1);
  REQUIRE(blocks_full.size() >= 2);
  for (size_t i = 0; i + 1 < blocks_full.size() && i < blocks_shift.size(); ++i) {
    REQUIRE(blocks_shift[i].values.size() == blocks_full[i + 1].values.size());
    for (size_t j = 0; j < blocks_shift[i].values.size(); ++j)
      CHECK(blocks_shift[i].values[j] == blocks_full[i + 1].values[j]);
  }
}

TEST_CASE("default patch geometry: 63 patches of length 160") {
  AcousticBlock block;
  Rng rng(13);
  block.values.resize(50 * 64);
  for (auto& v : block.values) v = float(rng.gauss());
  auto set = extract_patches(block);
  CHECK(set.n_time_positions == 9);
  CHECK(set.n_band_positions == 7);
  REQUIRE(set.patches.size() == 63);
  for (size_t i = 0; i < set.patches.size(); ++i) {
    CHECK(set.patches[i].position_index == int(i));  // dense, ordered
    CHECK(set.patches[i].values.size() == 160);
  }
}

TEST_CASE("patch ordering: position index increments first across time") {
  AcousticBlock block;
  block.values.resize(50 * 64);
  for (int f = 0; f < 50; ++f)
    for (int b = 0; b < 64; ++b) block.values[size_t(f) * 64 + size_t(b)] = float(f * 1000 + b);
  auto set = extract_patches(block);
  // patch 0 at (t=0, band=0); patch 1 at (t=5, band=0); patch 9 at (t=0, band=8)
  CHECK(set.patches[0].values[0] == 0.0f);
  CHECK(set.patches[1].values[0] == 5000.0f);
  CHECK(set.patches[9].values[0] == 8.0f);
}

TEST_CASE("whole-block patch and non-overlapping grid") {
  AcousticBlock block;
  Rng rng(14);
  block.values.resize(50 * 64);
  for (auto& v : block.values) v = float(rng.gauss());

  PatchGeometry whole{50, 64, 1, 1};
  auto one = extract_patches(block, whole);
  REQUIRE(one.patches.size() == 1);
  CHECK(one.patches[0].position_index == 0);
  CHECK(one.patches[0].values.size() == 3200);

  PatchGeometry quarters{25, 16, 25, 16};
  auto grid = extract_patches(block, quarters);
  CHECK(grid.patches.size() == 8);  // 2 x 4

  PatchGeometry too_big{60, 16, 5, 8};
  CHECK_THROWS_AS(extract_patches(block, too_big), std::invalid_argument);
}

TEST_CASE("averaging overlapping patches reconstructs covered cells exactly") {
  AcousticBlock block;
  Rng rng(15);
  block.values.resize(50 * 64);
  for (auto& v : block.values) v = float(rng.gauss());
  auto set = extract_patches(block);

  std::vector<double> acc(50 * 64, 0.0);
  std::vector<int> hits(50 * 64, 0);
  const auto& g = set.geometry;
  for (const auto& p : set.patches) {
    int ft = p.position_index % set.n_time_positions;
    int fb = p.position_index / set.n_time_positions;
    int t0 = ft * g.stride_frames, b0 = fb * g.stride_bands;
    for (int t = 0; t < g.patch_frames; ++t)
      for (int b = 0; b < g.patch_bands; ++b) {
        size_t cell = size_t(t0 + t) * 64 + size_t(b0 + b);
        acc[cell] += p.values[size_t(t) * size_t(g.patch_bands) + size_t(b)];
        hits[cell] += 1;
      }
  }
  int covered = 0;
  for (size_t i = 0; i < acc.size(); ++i) {
    if (hits[i] == 0) continue;
    ++covered;
    CHECK(float(acc[i] / hits[i]) == doctest::Approx(block.values[i]).epsilon(1e-6));
  }
  CHECK(covered > 0);
}

TEST_CASE("per-utterance normalization yields zero mean unit variance per band") {
  auto mel = log_mel(noise_wave(16000, 21));
  normalize_per_utterance(mel);
  for (int b = 0; b < 64; ++b) {
    double mean = 0, var = 0;
    for (int f = 0; f < mel.n_frames; ++f) mean += mel.at(f, b);
    mean /= mel.n_frames;
    for (int f = 0; f < mel.n_frames; ++f) var += (mel.at(f, b) - mean) * (mel.at(f, b) - mean);
    var /= mel.n_frames;
    CHECK(std::fabs(mean) < 1e-4);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("feature cache round trip is exact") {
  auto mel = log_mel(noise_wave(9000, 8));
  auto path = (std::filesystem::temp_directory_path() / "alp_feat_cache.bin").string();
  save_feature_cache(path, mel);
  auto loaded = load_feature_cache(path);
  CHECK(loaded.n_frames == mel.n_frames);
  CHECK(loaded.n_mels == mel.n_mels);
  CHECK(loaded.values == mel.values);
}
