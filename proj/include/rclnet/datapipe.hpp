#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <random>
#include <utility>
#include <vector>

#include "rclnet/tensor.hpp"

namespace rclnet {

/// One recorded sequence: per-frame channelized vectors (3 channels of length
/// `width`, stored channel-major) with per-frame intensity labels.
struct FrameSequence {
  int subject_id = 0;
  Index width = 0;
  std::vector<std::vector<float>> frames;  // each of length 3 * width
  std::vector<float> labels;

  Index size() const { return static_cast<Index>(frames.size()); }

  void validate() const {
    if (frames.empty() || frames.size() != labels.size())
      throw DimensionError("sequence needs equally many frames and labels, got " +
                           std::to_string(frames.size()) + " frames / " +
                           std::to_string(labels.size()) + " labels");
    if (width < 1) throw DimensionError("sequence width must be >= 1");
    for (const auto& f : frames)
      if (static_cast<Index>(f.size()) != 3 * width)
        throw DimensionError("frame vector length " + std::to_string(f.size()) +
                             " != 3 * width = " + std::to_string(3 * width));
  }
};

/// Row-major flattening of a 3xHxW frame into one channel-major vector;
/// channels stay separate (channel c occupies [c*h*w, (c+1)*h*w)).
inline std::vector<float> flatten_frame(const Tensor<float>& frame) {
  if (frame.rank() != 3 || frame.extent(0) != 3)
    throw DimensionError("flatten_frame expects a 3xHxW frame, got " +
                         shape_to_string(frame.shape()));
  return std::vector<float>(frame.data(), frame.data() + frame.size());
}

inline Tensor<float> unflatten_frame(const std::vector<float>& vec, Index h, Index w) {
  if (static_cast<Index>(vec.size()) != 3 * h * w)
    throw DimensionError("frame vector length " + std::to_string(vec.size()) +
                         " does not reshape to 3x" + std::to_string(h) + "x" + std::to_string(w));
  return Tensor<float>({3, h, w}, vec);
}

/// A causal window ending at frame `end_frame`: row i (0-based) holds frame
/// end_frame - H + 1 + i. Rows before the sequence start are zero with a zero
/// target and a cleared valid flag.
template <typename Scalar>
struct WindowSample {
  Tensor<Scalar> data;              // 3 x H x W
  std::vector<Scalar> targets;      // H
  std::vector<std::uint8_t> valid;  // H; 0 marks a padded row
  Index end_frame = 0;              // 1-based
  Index pad_rows = 0;
};

template <typename Scalar>
WindowSample<Scalar> build_window(const FrameSequence& seq, Index n, Index window_h) {
  if (n < 1 || n > seq.size())
    throw ConfigError("window end frame " + std::to_string(n) + " out of range [1, " +
                      std::to_string(seq.size()) + "]");
  if (window_h < 1) throw ConfigError("window height must be >= 1");
  const Index w = seq.width;

  WindowSample<Scalar> sample;
  sample.data = Tensor<Scalar>({3, window_h, w});
  sample.targets.assign(static_cast<std::size_t>(window_h), Scalar(0));
  sample.valid.assign(static_cast<std::size_t>(window_h), 0);
  sample.end_frame = n;
  sample.pad_rows = std::max<Index>(0, window_h - n);

  for (Index i = 0; i < window_h; ++i) {
    const Index frame = n - window_h + 1 + i;
    if (frame < 1) continue;
    const std::vector<float>& src = seq.frames[static_cast<std::size_t>(frame - 1)];
    for (Index c = 0; c < 3; ++c)
      for (Index x = 0; x < w; ++x)
        sample.data(c, i, x) = static_cast<Scalar>(src[static_cast<std::size_t>(c * w + x)]);
    sample.targets[static_cast<std::size_t>(i)] =
        static_cast<Scalar>(seq.labels[static_cast<std::size_t>(frame - 1)]);
    sample.valid[static_cast<std::size_t>(i)] = 1;
  }
  return sample;
}

// ---------------------------------------------------------------------------
// Weighted balanced sampling
// ---------------------------------------------------------------------------

inline constexpr int kIntensityLevels = 16;

/// Discrete intensity level of a label, clamped to [0, 15].
inline int label_level(float label) {
  long level = std::lround(label);
  if (level < 0) level = 0;
  if (level >= kIntensityLevels) level = kIntensityLevels - 1;
  return static_cast<int>(level);
}

/// Per-level sampling weights; normalized over the levels actually present in
/// the pool at draw time.
struct LevelWeights {
  std::array<double, kIntensityLevels> weights{};

  static LevelWeights uniform() {
    LevelWeights lw;
    lw.weights.fill(1.0 / kIntensityLevels);
    return lw;
  }

  void validate() const {
    double sum = 0;
    for (double v : weights) {
      if (v < 0) throw ConfigError("level weights must be non-negative");
      sum += v;
    }
    if (sum <= 0) throw ConfigError("level weights must have positive total mass");
  }
};

/// Index over every training window, grouped by the intensity level of the
/// window's end frame. Draws are with replacement: first a level from the
/// normalized weights restricted to present levels, then uniformly within it.
class WindowPool {
 public:
  WindowPool(const std::vector<FrameSequence>& sequences, Index window_h)
      : sequences_(&sequences), window_h_(window_h) {
    for (Index s = 0; s < static_cast<Index>(sequences.size()); ++s) {
      const FrameSequence& seq = sequences[static_cast<std::size_t>(s)];
      seq.validate();
      for (Index n = 1; n <= seq.size(); ++n) {
        const int level = label_level(seq.labels[static_cast<std::size_t>(n - 1)]);
        by_level_[static_cast<std::size_t>(level)].push_back({s, n});
        ++total_;
      }
    }
    if (total_ == 0) throw ConfigError("window pool is empty");
  }

  Index total() const { return total_; }
  Index window_height() const { return window_h_; }

  bool level_present(int level) const {
    return !by_level_[static_cast<std::size_t>(level)].empty();
  }

  Index level_count(int level) const {
    return static_cast<Index>(by_level_[static_cast<std::size_t>(level)].size());
  }

  bool renormalization_warned() const { return warned_; }

  /// Draws one (sequence, end-frame) pair.
  std::pair<Index, Index> draw(const LevelWeights& weights, std::mt19937_64& rng) const {
    weights.validate();
    std::array<double, kIntensityLevels> mass{};
    double present_mass = 0, absent_mass = 0;
    for (int level = 0; level < kIntensityLevels; ++level) {
      if (level_present(level)) {
        mass[static_cast<std::size_t>(level)] = weights.weights[static_cast<std::size_t>(level)];
        present_mass += mass[static_cast<std::size_t>(level)];
      } else {
        absent_mass += weights.weights[static_cast<std::size_t>(level)];
      }
    }
    if (present_mass <= 0)
      throw ConfigError("all sampling weight lies on intensity levels absent from the pool");
    if (absent_mass > 0 && !warned_) {
      warned_ = true;
      std::cerr << "warning: sampling weight on absent intensity levels is renormalized away\n";
    }

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng) * present_mass;
    double cum = 0;
    int level = 0;
    for (int l = 0; l < kIntensityLevels; ++l) {
      cum += mass[static_cast<std::size_t>(l)];
      if (u < cum) {
        level = l;
        break;
      }
      level = l;  // fall through to the last present level on rounding
    }
    while (!level_present(level)) --level;  // guards the rounding fall-through
    const auto& entries = by_level_[static_cast<std::size_t>(level)];
    std::uniform_int_distribution<std::size_t> pick(0, entries.size() - 1);
    return entries[pick(rng)];
  }

  template <typename Scalar>
  std::vector<WindowSample<Scalar>> sample_batch(const LevelWeights& weights, Index batch_size,
                                                 std::mt19937_64& rng) const {
    std::vector<WindowSample<Scalar>> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (Index i = 0; i < batch_size; ++i) {
      const auto [seq, frame] = draw(weights, rng);
      batch.push_back(
          build_window<Scalar>((*sequences_)[static_cast<std::size_t>(seq)], frame, window_h_));
    }
    return batch;
  }

 private:
  const std::vector<FrameSequence>* sequences_;
  Index window_h_;
  Index total_ = 0;
  std::array<std::vector<std::pair<Index, Index>>, kIntensityLevels> by_level_;
  mutable bool warned_ = false;
};

/// Stacks window samples into network-ready batch tensors.
template <typename Scalar>
struct Batch {
  Tensor<Scalar> data;              // B x 3 x H x W
  Tensor<Scalar> targets;           // B x H
  std::vector<std::uint8_t> valid;  // B * H
};

template <typename Scalar>
Batch<Scalar> stack_windows(const std::vector<WindowSample<Scalar>>& windows) {
  if (windows.empty()) throw ConfigError("cannot stack an empty batch");
  const Index b = static_cast<Index>(windows.size());
  const Index h = windows[0].data.extent(1);
  const Index w = windows[0].data.extent(2);
  Batch<Scalar> batch{Tensor<Scalar>({b, 3, h, w}), Tensor<Scalar>({b, h}), {}};
  batch.valid.assign(static_cast<std::size_t>(b * h), 0);
  for (Index i = 0; i < b; ++i) {
    const WindowSample<Scalar>& win = windows[static_cast<std::size_t>(i)];
    if (win.data.extent(1) != h || win.data.extent(2) != w)
      throw DimensionError("cannot stack windows of differing extents");
    std::copy(win.data.data(), win.data.data() + win.data.size(),
              batch.data.data() + i * win.data.size());
    for (Index r = 0; r < h; ++r) {
      batch.targets(i, r) = win.targets[static_cast<std::size_t>(r)];
      batch.valid[static_cast<std::size_t>(i * h + r)] = win.valid[static_cast<std::size_t>(r)];
    }
  }
  return batch;
}

}  // namespace rclnet
