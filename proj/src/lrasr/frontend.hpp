#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace lrasr {

using FeatMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kSampleRateHz = 16000;
inline constexpr int kWindowSamples = 400;  // 25 ms
inline constexpr int kHopSamples = 160;     // 10 ms
inline constexpr int kNumMelBins = 40;

struct Waveform {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRateHz;
};

// T x F acoustic features with timing metadata.
struct FeatureSequence {
  FeatMatrix frames;
  int frame_shift_ms = 10;
  int frame_length_ms = 25;
  std::string utt_id;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
};

// Power-mel filterbank features: 40 triangular mel filters over 0-8 kHz on a
// Hann-windowed 512-point power spectrum, energies floored at 1e-10 and
// compressed with (.)^(1/15).
FeatureSequence extract_powermel(const Waveform& wave);

// Number of frames produced for n samples (n >= one window).
int num_frames_for_samples(int64_t n);

struct SpecAugmentPolicy {
  int num_freq_masks = 2;
  int max_freq_width = 10;
  int num_time_masks = 2;
  int max_time_width = 20;
  uint64_t seed = 0;
};

// Zeroes num_freq_masks contiguous frequency bands of width in
// [0, max_freq_width] and num_time_masks time spans of width in
// [0, max_time_width]. Widths are clipped to the axis length, so degenerate
// policies are the identity.
FeatureSequence spec_augment(const FeatureSequence& feat,
                             const SpecAugmentPolicy& policy);

// "PMEL" binary feature file: magic, u32 version=1, u32 T, u32 F, then T*F
// little-endian float32 values, row-major.
void write_pmel(const std::string& path, const FeatureSequence& feat);
FeatureSequence read_pmel(const std::string& path);
std::string encode_pmel(const FeatureSequence& feat);
FeatureSequence decode_pmel(const std::string& bytes);

}  // namespace lrasr
