#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rclnet/datapipe.hpp"
#include "rclnet/network.hpp"

namespace rclnet {

struct TimelinePoint {
  Index frame = 0;  // 1-based
  double truth = 0;
  double prediction = 0;
};

/// Per-frame predictions for one sequence.
struct Timeline {
  int subject_id = 0;
  Index sequence_index = 0;  // position within the evaluated dataset
  std::vector<TimelinePoint> points;
};

/// (1/N) sum (pred_i - truth_i)^2.
inline double mse_metric(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size())
    throw DimensionError("mse_metric length mismatch: " + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  if (pred.empty()) throw ConfigError("mse_metric needs at least one sample");
  double sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    sum += d * d;
  }
  return sum / double(pred.size());
}

/// Pearson product-moment correlation; throws NumericError for constant
/// vectors instead of silently returning 0.
inline double pcc_metric(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size())
    throw DimensionError("pcc_metric length mismatch: " + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  if (pred.size() < 2) throw ConfigError("pcc_metric needs at least two samples");
  const double n = double(pred.size());
  double mean_p = 0, mean_t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mean_p += pred[i];
    mean_t += truth[i];
  }
  mean_p /= n;
  mean_t /= n;
  double cov = 0, var_p = 0, var_t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mean_p;
    const double dt = truth[i] - mean_t;
    cov += dp * dt;
    var_p += dp * dp;
    var_t += dt * dt;
  }
  if (var_p == 0 || var_t == 0)
    throw NumericError("correlation undefined: a vector is constant");
  return cov / (std::sqrt(var_p) * std::sqrt(var_t));
}

/// Stride-1 causal per-frame prediction: frame n's estimate is the last row
/// of the window ending at n. Windows are batched for speed; per-sample
/// results are identical to one-at-a-time evaluation.
template <typename Scalar>
Timeline predict_sequence(Network<Scalar>& net, const FrameSequence& seq, Index chunk = 64) {
  const NetworkConfig& cfg = net.config();
  if (seq.width != cfg.input_w)
    throw DimensionError("sequence width " + std::to_string(seq.width) +
                         " does not match network input width " + std::to_string(cfg.input_w));
  if (cfg.head != HeadKind::Regression)
    throw ConfigError("predict_sequence requires the regression head");
  const Index h = cfg.input_h;
  Timeline timeline;
  timeline.subject_id = seq.subject_id;
  timeline.points.reserve(static_cast<std::size_t>(seq.size()));

  for (Index start = 1; start <= seq.size(); start += chunk) {
    const Index count = std::min(chunk, seq.size() - start + 1);
    Tensor<Scalar> batch({count, 3, h, cfg.input_w});
    for (Index i = 0; i < count; ++i) {
      WindowSample<Scalar> win = build_window<Scalar>(seq, start + i, h);
      std::copy(win.data.data(), win.data.data() + win.data.size(),
                batch.data() + i * win.data.size());
    }
    Tensor<Scalar> out = net.forward(batch, LayerMode::Inference);
    for (Index i = 0; i < count; ++i) {
      double value = double(out(i, h - 1));
      if (cfg.clamp_predictions) value = std::clamp(value, 0.0, 15.0);
      timeline.points.push_back(
          {start + i, double(seq.labels[static_cast<std::size_t>(start + i - 1)]), value});
    }
  }
  return timeline;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct FoldResult {
  int fold = 0;
  int subject = 0;
  double mse = 0;
  std::optional<double> pcc;  // empty when undefined (constant vector)
  Index frames = 0;
  std::vector<Timeline> timelines;
};

struct EvalReport {
  std::vector<FoldResult> folds;
  double mean_mse = 0;               // mean over folds, each fold pooling its frames
  std::optional<double> mean_pcc;    // over folds with a defined correlation
  double pooled_mse = 0;             // all test frames pooled across folds
  std::optional<double> pooled_pcc;
  double frames_per_second = 0;
};

namespace detail {

inline FoldResult score_fold(int fold, int subject, std::vector<Timeline> timelines) {
  FoldResult result;
  result.fold = fold;
  result.subject = subject;
  result.timelines = std::move(timelines);
  std::vector<double> pred, truth;
  for (const Timeline& tl : result.timelines) {
    for (const TimelinePoint& p : tl.points) {
      pred.push_back(p.prediction);
      truth.push_back(p.truth);
    }
  }
  result.frames = static_cast<Index>(pred.size());
  result.mse = mse_metric(pred, truth);
  try {
    result.pcc = pcc_metric(pred, truth);
  } catch (const NumericError&) {
    result.pcc.reset();
  }
  return result;
}

inline void finalize_report(EvalReport& report) {
  std::vector<double> pred, truth;
  double mse_sum = 0, pcc_sum = 0;
  int pcc_count = 0;
  for (const FoldResult& fold : report.folds) {
    mse_sum += fold.mse;
    if (fold.pcc) {
      pcc_sum += *fold.pcc;
      ++pcc_count;
    }
    for (const Timeline& tl : fold.timelines)
      for (const TimelinePoint& p : tl.points) {
        pred.push_back(p.prediction);
        truth.push_back(p.truth);
      }
  }
  report.mean_mse = report.folds.empty() ? 0 : mse_sum / double(report.folds.size());
  if (pcc_count > 0) report.mean_pcc = pcc_sum / double(pcc_count);
  report.pooled_mse = mse_metric(pred, truth);
  try {
    report.pooled_pcc = pcc_metric(pred, truth);
  } catch (const NumericError&) {
    report.pooled_pcc.reset();
  }
}

}  // namespace detail

inline std::vector<int> distinct_subjects(const std::vector<FrameSequence>& dataset) {
  std::vector<int> subjects;
  for (const FrameSequence& seq : dataset)
    if (std::find(subjects.begin(), subjects.end(), seq.subject_id) == subjects.end())
      subjects.push_back(seq.subject_id);
  std::sort(subjects.begin(), subjects.end());
  return subjects;
}

/// Evaluates a trained network over a set of sequences, one fold per subject
/// (no training involved; used for fixed-checkpoint evaluation). Subjects may
/// be scored on up to `threads` threads, each over its own network copy;
/// results merge in subject order either way.
template <typename Scalar>
EvalReport evaluate_by_subject(Network<Scalar>& net, const std::vector<FrameSequence>& dataset,
                               int threads = 1) {
  EvalReport report;
  const std::vector<int> subjects = distinct_subjects(dataset);
  report.folds.resize(subjects.size());
  auto run_subject = [&](int fold, Network<Scalar>& model) {
    const int subject = subjects[static_cast<std::size_t>(fold)];
    std::vector<Timeline> timelines;
    for (Index i = 0; i < static_cast<Index>(dataset.size()); ++i) {
      const FrameSequence& seq = dataset[static_cast<std::size_t>(i)];
      if (seq.subject_id != subject) continue;
      Timeline tl = predict_sequence(model, seq);
      tl.sequence_index = i;
      timelines.push_back(std::move(tl));
    }
    report.folds[static_cast<std::size_t>(fold)] =
        detail::score_fold(fold, subject, std::move(timelines));
  };

  const int folds = static_cast<int>(subjects.size());
  if (threads <= 1) {
    for (int fold = 0; fold < folds; ++fold) run_subject(fold, net);
  } else {
    for (int begin = 0; begin < folds; begin += threads) {
      std::vector<std::thread> workers;
      for (int fold = begin; fold < std::min(folds, begin + threads); ++fold)
        workers.emplace_back([&, fold] {
          Network<Scalar> local = net;
          run_subject(fold, local);
        });
      for (std::thread& worker : workers) worker.join();
    }
  }
  detail::finalize_report(report);
  return report;
}

/// Trains one model per subject on everybody else's sequences and tests on
/// the held-out subject. `train_fn` receives the training split and a
/// fold-specific seed. Folds may run on up to `threads` threads; results are
/// merged by subject order, so the report is deterministic either way.
template <typename Scalar>
EvalReport loso_crossval(
    const std::vector<FrameSequence>& dataset, const NetworkConfig& cfg,
    const std::function<Network<Scalar>(const NetworkConfig&, const std::vector<FrameSequence>&,
                                        std::uint64_t)>& train_fn,
    std::uint64_t seed = 42, int threads = 1) {
  const std::vector<int> subjects = distinct_subjects(dataset);
  if (subjects.size() < 2)
    throw ConfigError("leave-one-subject-out needs at least 2 distinct subjects, got " +
                      std::to_string(subjects.size()));

  EvalReport report;
  report.folds.resize(subjects.size());
  auto run_fold = [&](int fold) {
    const int subject = subjects[static_cast<std::size_t>(fold)];
    std::vector<FrameSequence> train_split;
    for (const FrameSequence& seq : dataset)
      if (seq.subject_id != subject) train_split.push_back(seq);
    Network<Scalar> net = train_fn(cfg, train_split, seed + static_cast<std::uint64_t>(fold));
    std::vector<Timeline> timelines;
    for (Index i = 0; i < static_cast<Index>(dataset.size()); ++i) {
      const FrameSequence& seq = dataset[static_cast<std::size_t>(i)];
      if (seq.subject_id != subject) continue;
      Timeline tl = predict_sequence(net, seq);
      tl.sequence_index = i;
      timelines.push_back(std::move(tl));
    }
    report.folds[static_cast<std::size_t>(fold)] =
        detail::score_fold(fold, subject, std::move(timelines));
  };

  const int folds = static_cast<int>(subjects.size());
  if (threads <= 1) {
    for (int fold = 0; fold < folds; ++fold) run_fold(fold);
  } else {
    for (int begin = 0; begin < folds; begin += threads) {
      std::vector<std::thread> workers;
      for (int fold = begin; fold < std::min(folds, begin + threads); ++fold)
        workers.emplace_back(run_fold, fold);
      for (std::thread& worker : workers) worker.join();
    }
  }
  detail::finalize_report(report);
  return report;
}

/// Median wall-clock frames per second of predict_sequence over `repetitions`
/// runs, after one warm-up pass.
template <typename Scalar>
double measure_throughput(Network<Scalar>& net, const FrameSequence& seq, int repetitions = 3) {
  if (repetitions < 1) throw ConfigError("throughput needs at least one repetition");
  predict_sequence(net, seq);  // warm-up
  std::vector<double> rates;
  for (int r = 0; r < repetitions; ++r) {
    const auto start = std::chrono::steady_clock::now();
    predict_sequence(net, seq);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    rates.push_back(double(seq.size()) / std::max(1e-9, elapsed.count()));
  }
  std::sort(rates.begin(), rates.end());
  return rates[rates.size() / 2];
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

inline void write_timeline_csv(const Timeline& timeline, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "frame,truth,prediction\n";
  for (const TimelinePoint& p : timeline.points)
    out << p.frame << "," << p.truth << "," << p.prediction << "\n";
  if (!out) throw Error("failed while writing " + path.string());
}

inline nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["folds"] = nlohmann::json::array();
  nlohmann::json fold_subjects = nlohmann::json::object();
  for (const FoldResult& fold : report.folds) {
    nlohmann::json f;
    f["fold"] = fold.fold;
    f["subject"] = fold.subject;
    f["frames"] = fold.frames;
    f["mse"] = fold.mse;
    if (fold.pcc)
      f["pcc"] = *fold.pcc;
    else
      f["pcc"] = "undefined";
    j["folds"].push_back(f);
    fold_subjects[std::to_string(fold.fold)] = fold.subject;
  }
  j["fold_subjects"] = fold_subjects;
  j["mean_mse"] = report.mean_mse;
  if (report.mean_pcc)
    j["mean_pcc"] = *report.mean_pcc;
  else
    j["mean_pcc"] = "undefined";
  j["pooled_mse"] = report.pooled_mse;
  if (report.pooled_pcc)
    j["pooled_pcc"] = *report.pooled_pcc;
  else
    j["pooled_pcc"] = "undefined";
  j["frames_per_second"] = report.frames_per_second;
  return j;
}

}  // namespace rclnet
