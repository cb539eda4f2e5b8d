#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "rclnet/network.hpp"

namespace rclnet {

/// Central finite differences against the analytic backward pass, in double
/// precision. The error metric is |analytic - numeric| / max(|a| + |n|, 1).
struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0;

  bool passes(double threshold) const { return worst < threshold; }
};

inline double rel_err(double analytic, double numeric) {
  const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1.0);
  return std::abs(analytic - numeric) / denom;
}

/// Generic checker: `loss` evaluates the scalar objective as a pure function
/// of the current value of `param`; `analytic` is the gradient under test.
template <typename LossFn>
double finite_difference_max_err(Tensor<double>& param, const Tensor<double>& analytic,
                                 const LossFn& loss, double step = 1e-5) {
  if (!param.same_shape(analytic))
    throw DimensionError("finite difference: gradient shape does not match parameter");
  double worst = 0;
  for (Index i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + step;
    const double up = loss();
    param[i] = saved - step;
    const double down = loss();
    param[i] = saved;
    const double numeric = (up - down) / (2 * step);
    worst = std::max(worst, rel_err(analytic[i], numeric));
  }
  return worst;
}

/// Whole-network finite-difference suite on a random batch: one entry per
/// parameter tensor. Runs in training mode with frozen batch-norm statistics
/// so the objective is a pure function of the parameters. `corrupt` plants a
/// deliberate error in the analytic gradients (negative-control hook).
inline GradCheckReport network_gradcheck(const NetworkConfig& cfg, std::uint64_t seed,
                                         double step = 1e-5, bool corrupt = false,
                                         Index batch = 2) {
  NetworkConfig check_cfg = cfg;
  check_cfg.dropout_rate = 0.0;  // dropout would re-randomize between evaluations
  Network<double> net(check_cfg, seed);

  std::mt19937_64 rng(seed ^ 0xabcdef12345678ull);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor<double> input({batch, check_cfg.channels, check_cfg.input_h, check_cfg.input_w});
  for (Index i = 0; i < input.size(); ++i) input[i] = gauss(rng);
  Tensor<double> target({batch, check_cfg.output_size()});
  for (Index i = 0; i < target.size(); ++i) target[i] = gauss(rng);
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(target.size()), 1);
  if (check_cfg.head == HeadKind::Regression && target.size() >= 4) {
    valid[0] = 0;  // exercise the masked-loss path
    valid[static_cast<std::size_t>(target.size() - 1)] = 0;
  }

  auto loss = [&]() {
    Tensor<double> pred = net.forward(input, LayerMode::Training, /*update_bn_stats=*/false);
    return double(masked_mse_loss(pred, target, valid).value);
  };

  // Analytic pass.
  Tensor<double> pred = net.forward(input, LayerMode::Training, false);
  LossResult<double> l = masked_mse_loss(pred, target, valid);
  net.backward(l.grad);

  std::vector<Tensor<double>> analytic;
  for (const auto& p : net.parameters()) analytic.push_back(*p.grad);
  if (corrupt && !analytic.empty()) analytic[0][0] += 0.5;

  GradCheckReport report;
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    GradCheckEntry entry;
    entry.name = params[i].name;
    entry.max_rel_err = finite_difference_max_err(*params[i].value, analytic[i], loss, step);
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace rclnet
