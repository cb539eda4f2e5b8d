#pragma once

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "rclnet/datapipe.hpp"

namespace rclnet {

/// Synthetic eye-state benchmark. Sequences carry a latent per-frame
/// "closure" state rendered identically for short events (blinks, duration <=
/// blink_max, label 0) and long events (closures, duration >= closure_min,
/// label ramping to ramp_height). Appearance alone therefore cannot separate
/// the two; only temporal context can. Label mode PerFrame instead draws an
/// independent closure amplitude per frame and labels it directly, giving a
/// control task with no temporal structure: every frame's label is a pure
/// function of that frame's latent, and history carries no information.
struct SynthSpec {
  Index width = 64;
  int subjects = 8;
  int sequences_per_subject = 2;
  int frames_per_sequence = 150;
  int blink_max = 4;     // D_b, longest label-0 event
  int closure_min = 12;  // D_c, shortest labeled event; D_c > D_b
  double noise_std = 0.3;
  double ramp_height = 8.0;  // peak label, in (0, 15]
  enum class Labels { Temporal, PerFrame } labels = Labels::Temporal;
  std::uint64_t seed = 42;

  void validate() const {
    if (width < 1) throw ConfigError("synth width must be >= 1");
    if (subjects < 1 || sequences_per_subject < 1)
      throw ConfigError("synth needs at least one subject and one sequence per subject");
    if (blink_max < 1 || closure_min <= blink_max)
      throw ConfigError("event durations must satisfy closure_min > blink_max >= 1, got blink_max=" +
                        std::to_string(blink_max) + " closure_min=" + std::to_string(closure_min));
    if (frames_per_sequence < closure_min + blink_max)
      throw ConfigError("infeasible durations: " + std::to_string(frames_per_sequence) +
                        " frames cannot hold a closure of " + std::to_string(closure_min));
    if (!(ramp_height > 0.0 && ramp_height <= 15.0))
      throw ConfigError("ramp height must lie in (0, 15]");
    if (noise_std < 0.0) throw ConfigError("noise std must be non-negative");
  }
};

namespace detail {

struct SynthRender {
  std::vector<float> base;      // 3 * W, shared deterministic background
  std::vector<float> closure;   // 3 * W, appearance added while the eye is closed
  std::vector<float> drift_pattern;  // W, carrier of the nuisance drift

  explicit SynthRender(Index w) {
    base.resize(static_cast<std::size_t>(3 * w));
    closure.resize(static_cast<std::size_t>(3 * w));
    drift_pattern.resize(static_cast<std::size_t>(w));
    const double centre = double(w) / 2.0;
    const double spread = double(w) / 8.0;
    const std::array<double, 3> channel_amp = {1.0, 0.6, 0.3};
    for (Index c = 0; c < 3; ++c) {
      for (Index x = 0; x < w; ++x) {
        const double phase = 2.0 * M_PI * double(x) / double(w);
        base[static_cast<std::size_t>(c * w + x)] =
            static_cast<float>(0.4 * std::sin(phase * double(c + 1)));
        const double d = (double(x) - centre) / spread;
        closure[static_cast<std::size_t>(c * w + x)] =
            static_cast<float>(channel_amp[static_cast<std::size_t>(c)] * std::exp(-d * d));
      }
    }
    for (Index x = 0; x < w; ++x)
      drift_pattern[static_cast<std::size_t>(x)] =
          static_cast<float>(std::cos(2.0 * M_PI * double(x) / double(w) * 3.0));
  }
};

}  // namespace detail

/// Deterministic generator for the synthetic benchmark; the same seed yields
/// a bitwise-identical dataset.
inline std::vector<FrameSequence> synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const detail::SynthRender render(spec.width);
  const Index w = spec.width;

  std::vector<FrameSequence> dataset;
  dataset.reserve(static_cast<std::size_t>(spec.subjects * spec.sequences_per_subject));

  for (int subject = 1; subject <= spec.subjects; ++subject) {
    // Per-subject identity offsets; nuisance a subject-independent model must
    // ignore. The control task drops them (near zero) so that it measures
    // per-frame predictability alone, not subject invariance.
    const double identity_scale = spec.labels == SynthSpec::Labels::PerFrame ? 0.02 : 0.15;
    std::vector<float> identity(static_cast<std::size_t>(3 * w));
    for (auto& v : identity) v = static_cast<float>(identity_scale * gauss(rng));

    for (int s = 0; s < spec.sequences_per_subject; ++s) {
      FrameSequence seq;
      seq.subject_id = subject;
      seq.width = w;
      const int n = spec.frames_per_sequence;

      // Latent closure amplitude per frame (0 = open, 1 = fully closed) plus labels.
      std::vector<float> closure_amp(static_cast<std::size_t>(n), 0.0f);
      std::vector<float> labels(static_cast<std::size_t>(n), 0.0f);
      if (spec.labels == SynthSpec::Labels::PerFrame) {
        for (int t = 0; t < n; ++t) {
          const float amp = static_cast<float>(unit(rng));
          closure_amp[static_cast<std::size_t>(t)] = amp;
          labels[static_cast<std::size_t>(t)] = static_cast<float>(spec.ramp_height) * amp;
        }
      } else {
        int t = 0;
        while (t < n) {
          if (unit(rng) >= 0.03) {  // stay idle; keeps the label histogram zero-heavy
            ++t;
            continue;
          }
          const bool long_event = unit(rng) < 0.5;
          int duration;
          if (long_event) {
            std::uniform_int_distribution<int> d(spec.closure_min, spec.closure_min + spec.blink_max);
            duration = d(rng);
          } else {
            std::uniform_int_distribution<int> d(1, spec.blink_max);
            duration = d(rng);
          }
          if (t + duration > n) break;  // event would overrun; stop emitting events
          for (int j = 0; j < duration; ++j) {
            closure_amp[static_cast<std::size_t>(t + j)] = 1.0f;
            if (long_event) {
              const double ramp = std::min(1.0, double(j + 1) / double(spec.closure_min));
              labels[static_cast<std::size_t>(t + j)] = static_cast<float>(spec.ramp_height * ramp);
            }
          }
          t += duration + 1;  // at least one open frame between events
        }
      }

      // Render appearances: a frame's look depends only on its own closure
      // amplitude, never on the event's eventual duration.
      double drift = 0.0;
      for (int t = 0; t < n; ++t) {
        drift = 0.95 * drift + 0.1 * gauss(rng);
        std::vector<float> frame(static_cast<std::size_t>(3 * w));
        const float amp = closure_amp[static_cast<std::size_t>(t)];
        for (Index c = 0; c < 3; ++c) {
          for (Index x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(c * w + x);
            double v = render.base[i] + identity[i];
            if (amp != 0.0f) v += double(amp) * render.closure[i];
            if (c == 1) v += drift * render.drift_pattern[static_cast<std::size_t>(x)];
            v += spec.noise_std * gauss(rng);
            frame[i] = static_cast<float>(v);
          }
        }
        seq.frames.push_back(std::move(frame));
        seq.labels.push_back(labels[static_cast<std::size_t>(t)]);
      }
      dataset.push_back(std::move(seq));
    }
  }
  return dataset;
}

/// Counts frames per intensity level across a dataset.
inline std::array<Index, kIntensityLevels> label_histogram(const std::vector<FrameSequence>& seqs) {
  std::array<Index, kIntensityLevels> hist{};
  for (const FrameSequence& seq : seqs)
    for (float label : seq.labels) ++hist[static_cast<std::size_t>(label_level(label))];
  return hist;
}

}  // namespace rclnet
