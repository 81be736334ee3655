#include "flip/workbench.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "flip/checkpoint.hpp"
#include "flip/errors.hpp"
#include "flip/evaluation.hpp"
#include "flip/random.hpp"

namespace flip {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCurveHeader = "samples,metric,value";
constexpr const char* kAccuracyMetric = "zero_shot_accuracy";
constexpr const char* kWallMetric = "wall_seconds";

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace

void write_curve(const std::string& path, const std::vector<CurvePoint>& points) {
  std::ostringstream os;
  os << kCurveHeader << '\n' << std::setprecision(9);
  for (const auto& p : points) os << p.samples << ',' << p.metric << ',' << p.value << '\n';
  write_text(path, os.str());
}

std::vector<CurvePoint> read_curve(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw IoError(path + ": missing '" + kCurveHeader + "' header");
  std::vector<CurvePoint> points;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw IoError(path + ":" + std::to_string(line_no) + ": expected 3 columns");
    try {
      points.push_back({std::stoll(line.substr(0, a)), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return points;
}

std::uint64_t heldout_seed(std::uint64_t data_seed) { return seed_hash({data_seed, 0x4e1d}); }

Dataset load_train_data(const TrainConfig& config) {
  if (!config.train_data.empty()) return read_dataset(config.train_data);
  return generate_dataset(config.train_size, config.data_seed);
}

Dataset load_eval_data(const TrainConfig& config) {
  if (!config.eval_data.empty()) return read_dataset(config.eval_data);
  return generate_dataset(config.eval_size, heldout_seed(config.data_seed));
}

FlopReport run_flops(const TrainConfig& config) {
  const double text_ratio = config.text_mask.policy == TextMaskPolicy::kNone ? 0.0 : config.text_mask.ratio;
  return count_flops(config.encoder(), config.mask_ratio, text_ratio);
}

RunOutputs train_run(const TrainConfig& config, const std::string& out_dir, const std::optional<std::string>& resume,
                     std::ostream* log) {
  config.validate();
  fs::create_directories(out_dir);
  config.save((fs::path(out_dir) / "config.txt").string());
  const Dataset train = load_train_data(config);
  const Dataset heldout = load_eval_data(config);
  const Tokenizer tokenizer(Vocabulary::desk());

  Trainer trainer = resume ? Trainer(config, train, tokenizer, load_checkpoint(*resume)) : Trainer(config, train, tokenizer);
  RunOutputs out;
  out.flops = run_flops(config);
  write_text((fs::path(out_dir) / "flops.json").string(), out.flops.to_json() + "\n");

  const auto start = std::chrono::steady_clock::now();
  std::int64_t last_eval = -1;
  auto evaluate = [&](const TrainState& state) {
    const double acc = zero_shot_accuracy(state.model, tokenizer, heldout);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.curve.push_back({state.samples_seen, kAccuracyMetric, acc});
    out.curve.push_back({state.samples_seen, kWallMetric, wall});
    last_eval = state.samples_seen;
    if (log) *log << "samples " << state.samples_seen << " zero-shot " << acc << '\n';
  };

  std::int64_t next_eval = config.eval_every > 0 ? trainer.state().samples_seen + config.eval_every : -1;
  double loss_sum = 0.0;
  std::int64_t loss_steps = 0;
  trainer.run([&](const StepReport& r, const TrainState& state) {
    loss_sum += r.total;
    ++loss_steps;
    if (r.reconstruction) out.curve.push_back({state.samples_seen, "reconstruction_loss", *r.reconstruction});
    if (next_eval > 0 && state.samples_seen >= next_eval) {
      out.curve.push_back({state.samples_seen, "train_loss", loss_sum / static_cast<double>(loss_steps)});
      loss_sum = 0.0;
      loss_steps = 0;
      evaluate(state);
      next_eval += config.eval_every;
    }
  });
  if (loss_steps > 0) out.curve.push_back({trainer.state().samples_seen, "train_loss", loss_sum / static_cast<double>(loss_steps)});
  if (last_eval != trainer.state().samples_seen) evaluate(trainer.state());
  write_curve((fs::path(out_dir) / "curve.csv").string(), out.curve);
  save_checkpoint(trainer.state(), (fs::path(out_dir) / "final.ckpt").string());
  out.state = std::move(trainer.state());
  return out;
}

std::vector<TradeoffPoint> tradeoff_report(const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("trade-off report needs at least one run directory");
  std::vector<TradeoffPoint> points;
  for (const auto& dir : run_dirs) {
    auto norm = fs::path(dir).lexically_normal();
    if (norm.filename().empty()) norm = norm.parent_path();
    const std::string run = norm.filename().string();
    const auto curve_path = fs::path(dir) / "curve.csv";
    const auto flops_path = fs::path(dir) / "flops.json";
    if (!fs::exists(curve_path)) throw IoError("run '" + dir + "' has no curve.csv");
    if (!fs::exists(flops_path)) throw IoError("run '" + dir + "' has no flops.json");
    const FlopReport flops = FlopReport::from_json(read_text(flops_path.string()));
    std::map<std::int64_t, double> wall;
    const auto curve = read_curve(curve_path.string());
    for (const auto& p : curve) {
      if (p.metric == kWallMetric) wall[p.samples] = p.value;
    }
    for (const auto& p : curve) {
      if (p.metric != kAccuracyMetric) continue;
      TradeoffPoint t{run, p.samples, flops.total_flops * static_cast<double>(p.samples), p.value, std::nullopt};
      if (auto it = wall.find(p.samples); it != wall.end()) t.wall_seconds = it->second;
      points.push_back(std::move(t));
    }
  }
  std::stable_sort(points.begin(), points.end(),
                   [](const TradeoffPoint& a, const TradeoffPoint& b) { return a.compute < b.compute; });
  return points;
}

std::string tradeoff_csv(const std::vector<TradeoffPoint>& points) {
  std::ostringstream os;
  os << "run,samples,compute,accuracy,wall_seconds\n" << std::setprecision(9);
  for (const auto& p : points) {
    os << p.run << ',' << p.samples << ',' << p.compute << ',' << p.accuracy << ',';
    if (p.wall_seconds) os << *p.wall_seconds;
    os << '\n';
  }
  return os.str();
}

ScalingAxis parse_scaling_axis(const std::string& name) {
  if (name == "model") return ScalingAxis::kModel;
  if (name == "data") return ScalingAxis::kData;
  if (name == "schedule") return ScalingAxis::kSchedule;
  throw ConfigError("unknown scaling axis '" + name + "' (model, data or schedule)");
}

std::string to_string(ScalingAxis axis) {
  switch (axis) {
    case ScalingAxis::kModel:
      return "model";
    case ScalingAxis::kData:
      return "data";
    case ScalingAxis::kSchedule:
      return "schedule";
  }
  return "model";
}

TrainConfig scaled_config(const TrainConfig& base, ScalingAxis axis) {
  TrainConfig c = base;
  switch (axis) {
    case ScalingAxis::kModel: {
      const auto names = EncoderConfig::preset_names();
      auto it = std::find(names.begin(), names.end(), base.preset);
      if (it == names.end() || it + 1 == names.end()) throw ConfigError("no larger preset than '" + base.preset + "'");
      c.preset = *(it + 1);
      break;
    }
    case ScalingAxis::kData:
      if (!base.train_data.empty()) throw ConfigError("data scaling needs a generated training set");
      c.train_size = 2 * base.train_size;
      break;
    case ScalingAxis::kSchedule:
      c.total_samples = 2 * base.total_samples;
      c.warmup_samples = base.warmup_samples;
      if (c.eval_every == 0) c.eval_every = base.total_samples;
      break;
  }
  c.validate();
  return c;
}

std::vector<TradeoffPoint> run_scaling_axis(const TrainConfig& base, ScalingAxis axis, const std::string& out_root,
                                            std::ostream* log) {
  const TrainConfig scaled = scaled_config(base, axis);
  const std::string base_dir = (fs::path(out_root) / "base").string();
  const std::string scaled_dir = (fs::path(out_root) / to_string(axis)).string();
  if (log) *log << "training base run in " << base_dir << '\n';
  train_run(base, base_dir, std::nullopt, log);
  if (log) *log << "training " << to_string(axis) << "-scaled run in " << scaled_dir << '\n';
  train_run(scaled, scaled_dir, std::nullopt, log);
  return tradeoff_report({base_dir, scaled_dir});
}

}  // namespace flip
