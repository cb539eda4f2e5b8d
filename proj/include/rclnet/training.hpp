#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "rclnet/evaluation.hpp"
#include "rclnet/network.hpp"

namespace rclnet {

/// Momentum SGD with weight decay and the plateau-triggered /10 annealing
/// schedule (at most three anneals, so the final rate is initial/1000).
template <typename Scalar>
struct OptimState {
  Scalar learning_rate = Scalar(0.01);
  Scalar initial_rate = Scalar(0.01);
  Scalar momentum = Scalar(0.9);
  Scalar weight_decay = Scalar(5e-4);
  std::vector<Tensor<Scalar>> velocity;
  int anneal_count = 0;
  int patience = 5;
  double min_rel_improve = 0.01;

  // Plateau tracking over the validation history.
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_improve = 0;

  void attach(Network<Scalar>& net) {
    velocity.clear();
    for (const auto& p : net.parameters()) velocity.emplace_back(p.value->shape());
  }
};

/// One update: v <- mu*v - lr*(g + lambda*w); w <- w + v. Weight decay is
/// skipped for parameters flagged decay-exempt (biases, norm scale/shift).
template <typename Scalar>
void sgd_step(std::vector<ParamView<Scalar>> params, OptimState<Scalar>& state) {
  if (state.velocity.size() != params.size())
    throw StateError("optimizer state is not attached to this network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamView<Scalar>& p = params[i];
    if (!p.grad) continue;
    if (!all_finite(*p.grad))
      throw NumericError("non-finite gradient in parameter " + p.name + "; aborting step");
    Tensor<Scalar>& v = state.velocity[i];
    const Scalar lambda = p.weight_decay ? state.weight_decay : Scalar(0);
    v.array() = state.momentum * v.array() -
                state.learning_rate * (p.grad->array() + lambda * p.value->array());
    p.value->array() += v.array();
  }
}

/// Divides the learning rate by ten when the best validation loss has not
/// improved by min_rel_improve over the last `patience` epochs. Used at most
/// three times; each anneal resets the plateau window. The rate is derived
/// from the initial value so that three anneals give exactly initial/1000.
template <typename Scalar>
bool maybe_anneal(OptimState<Scalar>& state, const std::vector<double>& val_history) {
  if (val_history.empty()) return false;
  const double val = val_history.back();
  if (val < state.best_val * (1.0 - state.min_rel_improve) ||
      !std::isfinite(state.best_val)) {
    state.best_val = val;
    state.epochs_since_improve = 0;
    return false;
  }
  ++state.epochs_since_improve;
  if (state.epochs_since_improve < state.patience || state.anneal_count >= 3) return false;
  ++state.anneal_count;
  static constexpr double kDivisor[4] = {1.0, 10.0, 100.0, 1000.0};
  state.learning_rate = Scalar(double(state.initial_rate) / kDivisor[state.anneal_count]);
  state.epochs_since_improve = 0;
  return true;
}

struct TrainEpoch {
  int epoch = 0;
  double train_mse = 0;
  double val_mse = 0;
  double lr = 0;
  int anneal_count = 0;
};

template <typename Scalar>
struct TrainRun {
  std::vector<TrainEpoch> history;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  bool diverged = false;
  std::vector<Tensor<Scalar>> best_state;  // state tensors at the best epoch
  std::uint64_t seed = 0;
  Index batch_size = 0;
};

/// History log: CSV with columns epoch, train_mse, val_mse, lr, anneal_count.
template <typename Scalar>
void write_history_csv(const TrainRun<Scalar>& run, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "epoch,train_mse,val_mse,lr,anneal_count\n";
  for (const TrainEpoch& e : run.history)
    out << e.epoch << "," << e.train_mse << "," << e.val_mse << "," << e.lr << ","
        << e.anneal_count << "\n";
  if (!out) throw Error("failed while writing " + path.string());
}

struct TrainConfig {
  Index batch_size = 64;
  int max_epochs = 100;
  Index iters_per_epoch = 0;  // 0: ceil(pool size / batch size)
  std::uint64_t seed = 42;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int patience = 5;
  double min_rel_improve = 0.01;
  std::vector<int> val_subjects;  // empty: hold out the tail val_fraction of sequences
  double val_fraction = 0.25;
  bool early_stop = true;  // stop once the post-third-anneal plateau persists
};

template <typename Scalar>
void restore_state(Network<Scalar>& net, const std::vector<Tensor<Scalar>>& state) {
  auto views = net.state_tensors();
  if (views.size() != state.size())
    throw StateError("saved state does not match this network's tensor list");
  for (std::size_t i = 0; i < views.size(); ++i) *views[i].value = state[i];
}

template <typename Scalar>
std::vector<Tensor<Scalar>> snapshot_state(Network<Scalar>& net) {
  std::vector<Tensor<Scalar>> state;
  for (const auto& view : net.state_tensors()) state.push_back(*view.value);
  return state;
}

/// Pooled per-frame prediction MSE over validation sequences.
template <typename Scalar>
double validation_mse(Network<Scalar>& net, const std::vector<FrameSequence>& val) {
  std::vector<double> pred, truth;
  for (const FrameSequence& seq : val) {
    Timeline tl = predict_sequence(net, seq);
    for (const TimelinePoint& p : tl.points) {
      pred.push_back(p.prediction);
      truth.push_back(p.truth);
    }
  }
  return mse_metric(pred, truth);
}

/// The training loop: weighted-random window batches, masked MSE on padded
/// rows, momentum SGD, per-epoch validation and plateau annealing. Stops at
/// max_epochs, on early-stop after the third anneal plateaus again, or on
/// divergence (the best checkpoint so far is kept). The network is left at
/// its best-validation state.
template <typename Scalar>
TrainRun<Scalar> train(Network<Scalar>& net, const std::vector<FrameSequence>& dataset,
                       const LevelWeights& weights, const TrainConfig& cfg) {
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  weights.validate();

  std::vector<FrameSequence> train_split, val_split;
  if (!cfg.val_subjects.empty()) {
    for (const FrameSequence& seq : dataset) {
      const bool held_out = std::find(cfg.val_subjects.begin(), cfg.val_subjects.end(),
                                      seq.subject_id) != cfg.val_subjects.end();
      (held_out ? val_split : train_split).push_back(seq);
    }
  } else {
    const Index n = static_cast<Index>(dataset.size());
    Index n_val = std::max<Index>(1, static_cast<Index>(std::lround(cfg.val_fraction * double(n))));
    if (n_val >= n) n_val = n - 1;
    train_split.assign(dataset.begin(), dataset.end() - n_val);
    val_split.assign(dataset.end() - n_val, dataset.end());
  }
  if (train_split.empty() || val_split.empty())
    throw ConfigError("training requires non-empty train and validation splits");

  const Index window_h = net.config().input_h;
  WindowPool pool(train_split, window_h);
  const Index iters = cfg.iters_per_epoch > 0
                          ? cfg.iters_per_epoch
                          : (pool.total() + cfg.batch_size - 1) / cfg.batch_size;

  OptimState<Scalar> optim;
  optim.learning_rate = Scalar(cfg.learning_rate);
  optim.initial_rate = Scalar(cfg.learning_rate);
  optim.momentum = Scalar(cfg.momentum);
  optim.weight_decay = Scalar(cfg.weight_decay);
  optim.patience = cfg.patience;
  optim.min_rel_improve = cfg.min_rel_improve;
  optim.attach(net);

  TrainRun<Scalar> run;
  run.seed = cfg.seed;
  run.batch_size = cfg.batch_size;
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> val_history;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double loss_sum = 0;
    bool aborted = false;
    for (Index it = 0; it < iters; ++it) {
      auto windows = pool.sample_batch<Scalar>(weights, cfg.batch_size, rng);
      Batch<Scalar> batch = stack_windows(windows);
      Tensor<Scalar> pred = net.forward(batch.data, LayerMode::Training);
      LossResult<Scalar> loss = masked_mse_loss(pred, batch.targets, batch.valid);
      if (!std::isfinite(double(loss.value))) {
        run.diverged = true;
        aborted = true;
        break;
      }
      loss_sum += double(loss.value);
      try {
        net.backward(loss.grad);
        sgd_step(net.parameters(), optim);
      } catch (const NumericError&) {
        run.diverged = true;
        aborted = true;
        break;
      }
    }
    if (aborted) break;

    const double train_mse = loss_sum / double(iters);
    const double val_mse = validation_mse(net, val_split);
    val_history.push_back(val_mse);
    run.history.push_back(
        {epoch, train_mse, val_mse, double(optim.learning_rate), optim.anneal_count});

    if (val_mse < run.best_val) {
      run.best_val = val_mse;
      run.best_epoch = epoch;
      run.best_state = snapshot_state(net);
    }
    maybe_anneal(optim, val_history);
    if (cfg.early_stop && optim.anneal_count == 3 && optim.epochs_since_improve >= optim.patience)
      break;
  }

  if (!run.best_state.empty()) restore_state(net, run.best_state);
  return run;
}

}  // namespace rclnet
