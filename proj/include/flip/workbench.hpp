#ifndef FLIP_WORKBENCH_HPP_
#define FLIP_WORKBENCH_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flip/config.hpp"
#include "flip/dataset.hpp"
#include "flip/flops.hpp"
#include "flip/trainer.hpp"

namespace flip {

/// One row of a "samples,metric,value" curve file.
struct CurvePoint {
  std::int64_t samples = 0;
  std::string metric;
  double value = 0.0;
};

void write_curve(const std::string& path, const std::vector<CurvePoint>& points);
std::vector<CurvePoint> read_curve(const std::string& path);

/// Training set from train_data, or generated from (train_size, data_seed).
Dataset load_train_data(const TrainConfig& config);
/// Held-out set from eval_data, or generated from (eval_size, heldout_seed).
Dataset load_eval_data(const TrainConfig& config);
std::uint64_t heldout_seed(std::uint64_t data_seed);

/// FLOPs per sample of a configuration's pre-training forward pass.
FlopReport run_flops(const TrainConfig& config);

struct RunOutputs {
  TrainState state;
  std::vector<CurvePoint> curve;
  FlopReport flops;
};

/// Trains `config` (optionally from a checkpoint) and writes config.txt,
/// curve.csv, flops.json and final.ckpt into out_dir. Progress lines go to
/// `log` when given.
RunOutputs train_run(const TrainConfig& config, const std::string& out_dir,
                     const std::optional<std::string>& resume = std::nullopt, std::ostream* log = nullptr);

struct TradeoffPoint {
  std::string run;
  std::int64_t samples = 0;
  double compute = 0.0;  // FLOPs per sample times samples seen
  double accuracy = 0.0;
  std::optional<double> wall_seconds;
};

/// Accuracy against estimated compute for every evaluated point of every
/// run, sorted by compute.
std::vector<TradeoffPoint> tradeoff_report(const std::vector<std::string>& run_dirs);
std::string tradeoff_csv(const std::vector<TradeoffPoint>& points);

enum class ScalingAxis { kModel, kData, kSchedule };
ScalingAxis parse_scaling_axis(const std::string& name);
std::string to_string(ScalingAxis axis);

/// `base` with one axis scaled: the larger encoder preset, twice the unique
/// training data at fixed samples seen, or twice the samples seen.
TrainConfig scaled_config(const TrainConfig& base, ScalingAxis axis);

/// Trains the base and the scaled configuration under out_root/{base,<axis>}
/// and returns their trade-off points.
std::vector<TradeoffPoint> run_scaling_axis(const TrainConfig& base, ScalingAxis axis, const std::string& out_root,
                                            std::ostream* log = nullptr);

}  // namespace flip

#endif  // FLIP_WORKBENCH_HPP_
