#pragma once

#include <vector>

#include "rclnet/evaluation.hpp"
#include "rclnet/synth.hpp"
#include "rclnet/training.hpp"

namespace rclnet {

/// Subject-level split for the temporal-vs-static comparison: the last
/// `test_subjects` subjects are held out for testing, the preceding
/// `val_subjects` provide validation for annealing/model selection.
struct CompareOptions {
  TrainConfig train;
  int test_subjects = 2;
  int val_subjects = 1;
};

/// Frozen desk-scale benchmark stack for the comparison. Width-only pooling
/// keeps the full time resolution, so the head sees every window row; with
/// time pooling the floor semantics would drop the newest rows entirely at
/// this scale.
inline NetworkConfig benchmark_network() {
  NetworkConfig cfg;
  cfg.input_w = 64;
  cfg.input_h = 30;
  cfg.maps = 16;
  cfg.rcl_count = 2;
  cfg.iterations = 2;
  cfg.pool_specs = {{4, 1, 4, 1}, {4, 1, 4, 1}, {4, 1, 4, 1}};
  cfg.dropout_rate = 0.4;
  return cfg;
}

/// Frozen training budget shared by the temporal model and the static
/// baseline.
inline TrainConfig benchmark_train() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 35;
  cfg.learning_rate = 0.01;
  cfg.momentum = 0.9;
  cfg.weight_decay = 1e-3;
  cfg.patience = 5;
  cfg.min_rel_improve = 0.01;
  cfg.seed = 42;
  return cfg;
}

/// Benchmark datasets: the temporal task at the default spec, the per-frame
/// control with heavier observation noise so both models face the same
/// estimation floor, and without subject offsets (the control isolates
/// per-frame predictability, not subject invariance).
inline SynthSpec benchmark_synth(SynthSpec::Labels mode) {
  SynthSpec spec;
  spec.labels = mode;
  if (mode == SynthSpec::Labels::PerFrame) spec.noise_std = 1.0;
  return spec;
}

inline CompareOptions benchmark_options() {
  CompareOptions options;
  options.train = benchmark_train();
  options.test_subjects = 2;
  options.val_subjects = 1;
  return options;
}

struct PairedReport {
  EvalReport temporal;   // window height H
  EvalReport baseline;   // same architecture with window height 1
};

/// Trains the temporal model (window height = cfg.input_h) and the static
/// baseline (identical architecture with window height 1) under the same
/// budget, then evaluates both on the held-out subjects frame by frame.
template <typename Scalar>
PairedReport compare_static_baseline(const std::vector<FrameSequence>& dataset,
                                     const NetworkConfig& cfg, const CompareOptions& options) {
  const std::vector<int> subjects = distinct_subjects(dataset);
  if (static_cast<int>(subjects.size()) < options.test_subjects + options.val_subjects + 1)
    throw ConfigError("comparison needs at least " +
                      std::to_string(options.test_subjects + options.val_subjects + 1) +
                      " subjects, got " + std::to_string(subjects.size()));

  std::vector<int> test_ids(subjects.end() - options.test_subjects, subjects.end());
  std::vector<int> val_ids(subjects.end() - options.test_subjects - options.val_subjects,
                           subjects.end() - options.test_subjects);

  std::vector<FrameSequence> fit_split, test_split;
  for (const FrameSequence& seq : dataset) {
    const bool is_test =
        std::find(test_ids.begin(), test_ids.end(), seq.subject_id) != test_ids.end();
    (is_test ? test_split : fit_split).push_back(seq);
  }

  TrainConfig train_cfg = options.train;
  train_cfg.val_subjects = val_ids;

  PairedReport report;
  {
    Network<Scalar> net(cfg, train_cfg.seed);
    train(net, fit_split, LevelWeights::uniform(), train_cfg);
    report.temporal = evaluate_by_subject(net, test_split);
  }
  {
    Network<Scalar> net(static_variant(cfg), train_cfg.seed);
    train(net, fit_split, LevelWeights::uniform(), train_cfg);
    report.baseline = evaluate_by_subject(net, test_split);
  }
  return report;
}

}  // namespace rclnet
