#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "rclnet/checkpoint.hpp"
#include "rclnet/experiments.hpp"
#include "rclnet/gradcheck.hpp"
#include "rclnet/run_config.hpp"
#include "rclnet/sequence_io.hpp"

namespace fs = std::filesystem;
using namespace rclnet;

namespace {

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
template <typename Body>
int guarded(const Body& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

void write_effective_config(const RunConfig& cfg, const fs::path& out_dir) {
  const nlohmann::json j = to_json(cfg);
  std::ofstream out(out_dir / "effective_config.json", std::ios::trunc);
  out << j.dump(2) << "\n";
  std::cout << "effective config:\n" << j.dump(2) << "\n";
}

void print_histogram(const std::array<Index, kIntensityLevels>& hist) {
  Index total = 0;
  for (Index count : hist) total += count;
  std::cout << "label histogram (" << total << " frames):\n";
  for (int level = 0; level < kIntensityLevels; ++level)
    std::cout << "  level " << level << ": " << hist[static_cast<std::size_t>(level)] << "\n";
}

struct SynthArgs {
  SynthSpec spec;
  std::string out_dir = "synth_out";
  bool control = false;
};

int cmd_synth(const SynthArgs& args) {
  SynthSpec spec = args.spec;
  if (args.control) spec.labels = SynthSpec::Labels::PerFrame;
  std::vector<FrameSequence> dataset = synth_generate(spec);

  fs::create_directories(args.out_dir);
  std::vector<std::string> entries;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::string name = "seq_s" + std::to_string(dataset[i].subject_id) + "_" +
                             std::to_string(i) + ".rclseq";
    write_sequence(dataset[i], fs::path(args.out_dir) / name);
    entries.push_back(name);
  }
  write_manifest(entries, fs::path(args.out_dir) / "manifest.txt");
  std::cout << "wrote " << dataset.size() << " sequences + manifest to " << args.out_dir << "\n";
  print_histogram(label_histogram(dataset));
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string manifest_override;
  std::string out_override;
  std::int64_t seed_override = -1;
  int epochs_override = -1;
  Index batch_override = -1;
  double lr_override = -1;
};

RunConfig load_with_overrides(const TrainArgs& args) {
  RunConfig cfg = load_run_config(args.config_path);
  if (!args.manifest_override.empty()) cfg.manifest = args.manifest_override;
  if (!args.out_override.empty()) cfg.output_dir = args.out_override;
  if (args.seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(args.seed_override);
    cfg.training.seed = cfg.seed;
  }
  if (args.epochs_override > 0) cfg.training.max_epochs = args.epochs_override;
  if (args.batch_override > 0) cfg.training.batch_size = args.batch_override;
  if (args.lr_override > 0) cfg.training.learning_rate = args.lr_override;
  return cfg;
}

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = load_with_overrides(args);
  if (cfg.manifest.empty()) throw ConfigError("config is missing a dataset manifest");
  if (!fs::exists(cfg.manifest)) throw ConfigError("manifest not found: " + cfg.manifest);
  std::vector<FrameSequence> dataset = load_dataset(cfg.manifest);

  fs::create_directories(cfg.output_dir);
  write_effective_config(cfg, cfg.output_dir);

  Network<float> net(cfg.network, cfg.seed);
  TrainRun<float> run = train(net, dataset, cfg.level_weights, cfg.training);
  write_history_csv(run, fs::path(cfg.output_dir) / "history.csv");
  save_checkpoint(net, fs::path(cfg.output_dir) / "checkpoint.rclnet");
  std::cout << "trained " << run.history.size() << " epochs, best val MSE " << run.best_val
            << " at epoch " << run.best_epoch << "\n";
  if (run.diverged) {
    std::cerr << "training diverged: loss became non-finite; wrote the best checkpoint so far\n";
    return 1;
  }
  return 0;
}

struct EvalArgs {
  TrainArgs base;
  std::string checkpoint_path;
  int threads = 1;
};

void require_matching_config(const NetworkConfig& expected, const NetworkConfig& loaded) {
  auto mismatch = [](const std::string& what, auto a, auto b) {
    throw ConfigError("checkpoint/config mismatch: " + what + " is " + std::to_string(b) +
                      " in the checkpoint but " + std::to_string(a) + " in the config");
  };
  if (expected.input_w != loaded.input_w) mismatch("input_w", expected.input_w, loaded.input_w);
  if (expected.input_h != loaded.input_h) mismatch("input_h", expected.input_h, loaded.input_h);
  if (expected.channels != loaded.channels) mismatch("channels", expected.channels, loaded.channels);
  if (expected.maps != loaded.maps) mismatch("maps", expected.maps, loaded.maps);
  if (expected.rcl_count != loaded.rcl_count)
    mismatch("rcl_count", expected.rcl_count, loaded.rcl_count);
  if (expected.iterations != loaded.iterations)
    mismatch("iterations", expected.iterations, loaded.iterations);
  if (expected.head != loaded.head)
    throw ConfigError("checkpoint/config mismatch: output head kind differs");
  if (expected.class_count != loaded.class_count)
    mismatch("class_count", expected.class_count, loaded.class_count);
  if (expected.use_batchnorm != loaded.use_batchnorm)
    mismatch("use_batchnorm", int(expected.use_batchnorm), int(loaded.use_batchnorm));
  if (expected.pool_specs.size() != loaded.pool_specs.size())
    mismatch("pool count", expected.pool_specs.size(), loaded.pool_specs.size());
  for (std::size_t i = 0; i < expected.pool_specs.size(); ++i) {
    const PoolSpec& a = expected.pool_specs[i];
    const PoolSpec& b = loaded.pool_specs[i];
    if (a.pool_w != b.pool_w || a.pool_h != b.pool_h || a.stride_w != b.stride_w ||
        a.stride_h != b.stride_h)
      throw ConfigError("checkpoint/config mismatch: pool spec " + std::to_string(i + 1) +
                        " differs");
  }
}

int cmd_eval(const EvalArgs& args) {
  RunConfig cfg = load_with_overrides(args.base);
  if (cfg.manifest.empty()) throw ConfigError("config is missing a dataset manifest");
  if (!fs::exists(cfg.manifest)) throw ConfigError("manifest not found: " + cfg.manifest);
  if (!fs::exists(args.checkpoint_path))
    throw ConfigError("checkpoint not found: " + args.checkpoint_path);

  Network<float> net = load_checkpoint<float>(args.checkpoint_path);
  require_matching_config(cfg.network, net.config());
  std::vector<FrameSequence> dataset = load_dataset(cfg.manifest);

  fs::create_directories(cfg.output_dir);
  write_effective_config(cfg, cfg.output_dir);

  EvalReport report = evaluate_by_subject(net, dataset, cfg.threads > 1 ? cfg.threads : args.threads);
  report.frames_per_second = measure_throughput(net, dataset.front(), 3);

  for (const FoldResult& fold : report.folds)
    for (const Timeline& tl : fold.timelines)
      write_timeline_csv(tl, fs::path(cfg.output_dir) /
                                 ("timeline_" + std::to_string(tl.sequence_index) + ".csv"));
  std::ofstream out(fs::path(cfg.output_dir) / "report.json", std::ios::trunc);
  out << to_json(report).dump(2) << "\n";

  std::cout << "evaluated " << dataset.size() << " sequences over " << report.folds.size()
            << " subjects: mean MSE " << report.mean_mse << ", pooled MSE " << report.pooled_mse
            << ", " << report.frames_per_second << " frames/s\n";
  return 0;
}

struct GradcheckArgs {
  Index width = 32;
  Index height = 8;
  Index maps = 8;
  int rcls = 2;
  int iterations = 2;
  std::uint64_t seed = 7;
  double step = 1e-5;
  double threshold = 1e-4;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& args) {
  const NetworkConfig cfg =
      NetworkConfig::reduced(args.width, args.height, args.maps, args.rcls, args.iterations);
  GradCheckReport report = network_gradcheck(cfg, args.seed, args.step, args.corrupt);
  for (const GradCheckEntry& entry : report.entries)
    std::printf("%-20s max rel err %.3e\n", entry.name.c_str(), entry.max_rel_err);
  std::printf("worst %.3e (threshold %.1e): %s\n", report.worst, args.threshold,
              report.passes(args.threshold) ? "PASS" : "FAIL");
  return report.passes(args.threshold) ? 0 : 1;
}

struct CompareArgs {
  std::string config_path;
  std::string out_dir = "compare_out";
  std::string dataset = "temporal";
  std::int64_t seed_override = -1;
};

int cmd_compare(const CompareArgs& args) {
  NetworkConfig net_cfg = benchmark_network();
  CompareOptions options = benchmark_options();
  if (!args.config_path.empty()) {
    RunConfig cfg = load_run_config(args.config_path);
    net_cfg = cfg.network;
    options.train = cfg.training;
  }
  if (args.seed_override >= 0) options.train.seed = static_cast<std::uint64_t>(args.seed_override);

  SynthSpec::Labels mode;
  if (args.dataset == "temporal") mode = SynthSpec::Labels::Temporal;
  else if (args.dataset == "control") mode = SynthSpec::Labels::PerFrame;
  else throw ConfigError("--dataset must be \"temporal\" or \"control\"");

  std::vector<FrameSequence> dataset = synth_generate(benchmark_synth(mode));
  PairedReport paired = compare_static_baseline<float>(dataset, net_cfg, options);

  const double ratio = paired.temporal.pooled_mse / paired.baseline.pooled_mse;
  const double rmse_t = std::sqrt(paired.temporal.pooled_mse);
  const double rmse_s = std::sqrt(paired.baseline.pooled_mse);
  const double rmse_diff = std::abs(rmse_t - rmse_s) / std::max(rmse_t, rmse_s);

  fs::create_directories(args.out_dir);
  nlohmann::json j;
  j["dataset"] = args.dataset;
  j["temporal"] = to_json(paired.temporal);
  j["baseline"] = to_json(paired.baseline);
  j["mse_ratio"] = ratio;
  j["rmse_relative_difference"] = rmse_diff;
  std::ofstream out(fs::path(args.out_dir) / "compare_report.json", std::ios::trunc);
  out << j.dump(2) << "\n";

  std::cout << "dataset " << args.dataset << ": temporal pooled MSE " << paired.temporal.pooled_mse
            << ", static pooled MSE " << paired.baseline.pooled_mse << ", ratio " << ratio
            << ", rmse relative difference " << rmse_diff << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent-convolutional frame-level intensity regressor"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic benchmark dataset");
  synth->add_option("--out", synth_args.out_dir, "Output directory")->capture_default_str();
  synth->add_option("--width", synth_args.spec.width, "Frame vector width W")->capture_default_str();
  synth->add_option("--subjects", synth_args.spec.subjects, "Number of subjects")->capture_default_str();
  synth->add_option("--seqs-per-subject", synth_args.spec.sequences_per_subject,
                    "Sequences per subject")->capture_default_str();
  synth->add_option("--frames", synth_args.spec.frames_per_sequence, "Frames per sequence")
      ->capture_default_str();
  synth->add_option("--blink-max", synth_args.spec.blink_max, "Longest unlabeled (blink) event")
      ->capture_default_str();
  synth->add_option("--closure-min", synth_args.spec.closure_min, "Shortest labeled (closure) event")
      ->capture_default_str();
  synth->add_option("--noise-std", synth_args.spec.noise_std, "Observation noise std")
      ->capture_default_str();
  synth->add_option("--ramp-height", synth_args.spec.ramp_height, "Peak label value")
      ->capture_default_str();
  synth->add_option("--seed", synth_args.spec.seed, "Generator seed")->capture_default_str();
  synth->add_flag("--control", synth_args.control,
                  "Per-frame control labels instead of the temporal task");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", train_args.config_path, "Run config JSON")->required();
  train_cmd->add_option("--manifest", train_args.manifest_override, "Override dataset manifest");
  train_cmd->add_option("--out", train_args.out_override, "Override output directory");
  train_cmd->add_option("--seed", train_args.seed_override, "Override seed")->capture_default_str();
  train_cmd->add_option("--epochs", train_args.epochs_override, "Override max epochs")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", train_args.batch_override, "Override batch size")
      ->capture_default_str();
  train_cmd->add_option("--learning-rate", train_args.lr_override, "Override initial learning rate")
      ->capture_default_str();

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint over a dataset");
  eval_cmd->add_option("--config", eval_args.base.config_path, "Run config JSON")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", eval_args.base.manifest_override, "Override dataset manifest");
  eval_cmd->add_option("--out", eval_args.base.out_override, "Override output directory");
  eval_cmd->add_option("--threads", eval_args.threads, "Cap subject-level parallelism")
      ->capture_default_str();

  GradcheckArgs grad_args;
  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  grad_cmd->add_option("--width", grad_args.width, "Input width")->capture_default_str();
  grad_cmd->add_option("--height", grad_args.height, "Window height")->capture_default_str();
  grad_cmd->add_option("--maps", grad_args.maps, "Feature maps per layer")->capture_default_str();
  grad_cmd->add_option("--rcls", grad_args.rcls, "Recurrent layer count")->capture_default_str();
  grad_cmd->add_option("--iterations", grad_args.iterations, "Recurrent iterations T")
      ->capture_default_str();
  grad_cmd->add_option("--seed", grad_args.seed, "Seed")->capture_default_str();
  grad_cmd->add_option("--step", grad_args.step, "Finite-difference step")->capture_default_str();
  grad_cmd->add_option("--threshold", grad_args.threshold, "Max relative error to pass")
      ->capture_default_str();
  grad_cmd->add_flag("--corrupt-backward", grad_args.corrupt,
                     "Plant a gradient error (negative-control hook)");

  CompareArgs compare_args;
  CLI::App* compare_cmd = app.add_subcommand(
      "compare", "Train and score the temporal model against the single-frame baseline");
  compare_cmd->add_option("--config", compare_args.config_path,
                          "Run config JSON (defaults to the frozen benchmark)");
  compare_cmd->add_option("--out", compare_args.out_dir, "Output directory")->capture_default_str();
  compare_cmd->add_option("--dataset", compare_args.dataset, "temporal | control")
      ->capture_default_str();
  compare_cmd->add_option("--seed", compare_args.seed_override, "Override seed")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (synth->parsed()) return guarded([&] { return cmd_synth(synth_args); });
  if (train_cmd->parsed()) return guarded([&] { return cmd_train(train_args); });
  if (eval_cmd->parsed()) return guarded([&] { return cmd_eval(eval_args); });
  if (grad_cmd->parsed()) return guarded([&] { return cmd_gradcheck(grad_args); });
  if (compare_cmd->parsed()) return guarded([&] { return cmd_compare(compare_args); });
  return 2;
}
