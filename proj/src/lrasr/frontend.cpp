#include "lrasr/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "lrasr/common.hpp"

namespace lrasr {
namespace {

constexpr int kFftSize = 512;
constexpr double kEnergyFloor = 1e-10;
constexpr double kPowerExponent = 1.0 / 15.0;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// kNumMelBins x (kFftSize/2 + 1) triangular weights.
const std::vector<std::vector<double>>& mel_filterbank() {
  static const std::vector<std::vector<double>> bank = [] {
    const int num_bins = kFftSize / 2 + 1;
    const double lo = hz_to_mel(0.0);
    const double hi = hz_to_mel(kSampleRateHz / 2.0);
    std::vector<double> centers(kNumMelBins + 2);
    for (int i = 0; i < kNumMelBins + 2; ++i) {
      centers[i] = mel_to_hz(lo + (hi - lo) * i / (kNumMelBins + 1));
    }
    std::vector<std::vector<double>> w(kNumMelBins,
                                       std::vector<double>(num_bins, 0.0));
    for (int m = 0; m < kNumMelBins; ++m) {
      const double left = centers[m];
      const double center = centers[m + 1];
      const double right = centers[m + 2];
      for (int k = 0; k < num_bins; ++k) {
        const double f = static_cast<double>(k) * kSampleRateHz / kFftSize;
        if (f > left && f < right) {
          w[m][k] = f <= center ? (f - left) / (center - left)
                                : (right - f) / (right - center);
        }
      }
    }
    return w;
  }();
  return bank;
}

const std::vector<double>& hann_window() {
  static const std::vector<double> win = [] {
    std::vector<double> w(kWindowSamples);
    for (int i = 0; i < kWindowSamples; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (kWindowSamples - 1));
    }
    return w;
  }();
  return win;
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

uint32_t get_u32(const std::string& in, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

int num_frames_for_samples(int64_t n) {
  if (n < kWindowSamples) {
    return 0;
  }
  return static_cast<int>((n - kWindowSamples) / kHopSamples + 1);
}

FeatureSequence extract_powermel(const Waveform& wave) {
  if (wave.sample_rate_hz != kSampleRateHz) {
    throw DataError("expected 16000 Hz audio, got " +
                    std::to_string(wave.sample_rate_hz) + " Hz");
  }
  const int64_t n = static_cast<int64_t>(wave.samples.size());
  if (n < kWindowSamples) {
    throw DataError("audio too short: " + std::to_string(n) +
                    " samples, need at least " + std::to_string(kWindowSamples));
  }
  for (float s : wave.samples) {
    if (!std::isfinite(s)) {
      throw DataError("non-finite audio sample");
    }
  }

  const int num_frames = num_frames_for_samples(n);
  const auto& bank = mel_filterbank();
  const auto& window = hann_window();
  Eigen::FFT<double> fft;
  std::vector<double> frame(kFftSize, 0.0);
  std::vector<std::complex<double>> spectrum;
  std::vector<double> power(kFftSize / 2 + 1);

  FeatureSequence out;
  out.frames.resize(num_frames, kNumMelBins);
  for (int t = 0; t < num_frames; ++t) {
    const int64_t start = static_cast<int64_t>(t) * kHopSamples;
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int i = 0; i < kWindowSamples; ++i) {
      frame[i] = wave.samples[start + i] * window[i];
    }
    fft.fwd(spectrum, frame);
    for (int k = 0; k <= kFftSize / 2; ++k) {
      power[k] = std::norm(spectrum[k]);
    }
    for (int m = 0; m < kNumMelBins; ++m) {
      double e = 0.0;
      for (int k = 0; k <= kFftSize / 2; ++k) {
        e += bank[m][k] * power[k];
      }
      out.frames(t, m) =
          static_cast<float>(std::pow(std::max(e, kEnergyFloor), kPowerExponent));
    }
  }
  return out;
}

FeatureSequence spec_augment(const FeatureSequence& feat,
                             const SpecAugmentPolicy& policy) {
  FeatureSequence out = feat;
  const int num_t = feat.num_frames();
  const int num_f = feat.dim();
  if (num_t == 0 || num_f == 0) {
    return out;
  }
  Rng rng(policy.seed);
  const int max_fw = std::clamp(policy.max_freq_width, 0, num_f);
  for (int i = 0; i < policy.num_freq_masks; ++i) {
    const int width = static_cast<int>(uniform_int(rng, 0, max_fw));
    const int start = static_cast<int>(uniform_int(rng, 0, num_f - width));
    out.frames.middleCols(start, width).setZero();
  }
  const int max_tw = std::clamp(policy.max_time_width, 0, num_t);
  for (int i = 0; i < policy.num_time_masks; ++i) {
    const int width = static_cast<int>(uniform_int(rng, 0, max_tw));
    const int start = static_cast<int>(uniform_int(rng, 0, num_t - width));
    out.frames.middleRows(start, width).setZero();
  }
  return out;
}

std::string encode_pmel(const FeatureSequence& feat) {
  std::string out = "PMEL";
  put_u32(out, 1);
  put_u32(out, static_cast<uint32_t>(feat.num_frames()));
  put_u32(out, static_cast<uint32_t>(feat.dim()));
  out.reserve(out.size() + 4 * feat.frames.size());
  for (int t = 0; t < feat.num_frames(); ++t) {
    for (int f = 0; f < feat.dim(); ++f) {
      uint32_t bits;
      const float v = feat.frames(t, f);
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

FeatureSequence decode_pmel(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "PMEL") != 0) {
    throw DataError("not a PMEL feature file");
  }
  const uint32_t version = get_u32(bytes, 4);
  if (version != 1) {
    throw DataError("unsupported PMEL version " + std::to_string(version));
  }
  const uint32_t num_t = get_u32(bytes, 8);
  const uint32_t num_f = get_u32(bytes, 12);
  if (bytes.size() != 16 + 4ull * num_t * num_f) {
    throw DataError("truncated PMEL feature file");
  }
  FeatureSequence feat;
  feat.frames.resize(num_t, num_f);
  size_t pos = 16;
  for (uint32_t t = 0; t < num_t; ++t) {
    for (uint32_t f = 0; f < num_f; ++f) {
      const uint32_t bits = get_u32(bytes, pos);
      pos += 4;
      float v;
      std::memcpy(&v, &bits, 4);
      feat.frames(t, f) = v;
    }
  }
  return feat;
}

void write_pmel(const std::string& path, const FeatureSequence& feat) {
  write_text_file(path, encode_pmel(feat));
}

FeatureSequence read_pmel(const std::string& path) {
  return decode_pmel(read_text_file(path));
}

}  // namespace lrasr
