#include "flip/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flip/checkpoint.hpp"
#include "flip/errors.hpp"
#include "flip/evaluation.hpp"
#include "flip/flops.hpp"
#include "flip/workbench.hpp"

namespace flip {

namespace {

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return config_hash(os.str());
}

struct GenDataArgs {
  Index n = 0;
  std::uint64_t seed = 0;
  std::string out;
};

struct TrainArgs {
  std::string config;
  std::string out_dir;
  std::string resume;
};

struct TuneArgs {
  std::string ckpt;
  std::string config;
  std::string out;
};

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string train_data;
  std::string task = "zero-shot";
  double mask_ratio = 0.0;
  std::uint64_t seed = 0;
};

struct FlopsArgs {
  std::string preset;
  double mask_ratio = 0.0;
  double text_mask_ratio = 0.0;
};

struct ScaleArgs {
  std::string config;
  std::string axis;
  std::string out_root;
};

void cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const Dataset data = generate_dataset(a.n, a.seed);
  write_dataset(data, a.out);
  out << "wrote " << data.size() << " records to " << a.out << '\n';
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
  const TrainConfig config = TrainConfig::load(a.config);
  const auto resume = a.resume.empty() ? std::nullopt : std::optional<std::string>(a.resume);
  const RunOutputs run = train_run(config, a.out_dir, resume, &out);
  const TrainState& s = run.state;
  nlohmann::ordered_json j;
  j["steps"] = s.step;
  j["samples_seen"] = s.samples_seen;
  j["checkpoint"] = (std::filesystem::path(a.out_dir) / "final.ckpt").string();
  out << j.dump() << '\n';
}

void cmd_tune(const TuneArgs& a, std::ostream& out) {
  const TrainConfig config = TrainConfig::load(a.config);
  const Dataset train = load_train_data(config);
  const Dataset heldout = load_eval_data(config);
  const Tokenizer tokenizer(Vocabulary::desk());
  TrainState state = load_checkpoint(a.ckpt);
  const double before = heldout_loss(state.model, tokenizer, heldout, config.batch_size);
  state = unmasked_tune(std::move(state), config, train, tokenizer);
  const double after = heldout_loss(state.model, tokenizer, heldout, config.batch_size);
  std::string dest = a.out;
  if (dest.empty()) dest = std::filesystem::path(a.ckpt).replace_extension(".tuned.ckpt").string();
  save_checkpoint(state, dest);
  const std::string hash = config_hash(config.to_string());
  out << EvalReport{"heldout_loss_before_tuning", before, InferenceMode::kFull, hash}.to_json() << '\n'
      << EvalReport{"heldout_loss_after_tuning", after, InferenceMode::kFull, hash}.to_json() << '\n';
}

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const TrainState state = load_checkpoint(a.ckpt);
  const Dataset data = read_dataset(a.data);
  const Tokenizer tokenizer(Vocabulary::desk());
  const std::string hash = file_hash(a.ckpt);
  const InferenceMode mode = a.mask_ratio > 0.0 ? InferenceMode::kMasked : InferenceMode::kFull;
  const ImageEmbedOptions options{mode, a.mask_ratio, a.seed, 256};
  auto emit = [&](const std::string& metric, double value, InferenceMode m) {
    out << EvalReport{metric, value, m, hash}.to_json() << '\n';
  };

  if (a.task == "zero-shot") {
    emit("zero_shot_accuracy", zero_shot_accuracy(state.model, tokenizer, data, options), mode);
  } else if (a.task == "retrieval") {
    const EmbeddingMatrix images = embed_images(state.model, data, options);
    const EmbeddingMatrix texts = embed_captions(state.model, tokenizer, data.captions(data.all_indices()));
    const std::vector<Index> truth = data.all_indices();
    for (Index k : {Index{1}, Index{5}}) {
      if (k > data.size()) continue;
      emit("image_to_text_recall@" + std::to_string(k), recall_at_k(images, texts, truth, k), mode);
      emit("text_to_image_recall@" + std::to_string(k), recall_at_k(texts, images, truth, k), mode);
    }
  } else if (a.task == "linear-probe") {
    EmbeddingMatrix train_f, test_f;
    std::vector<int> train_l, test_l;
    const EmbeddingMatrix features = image_features(state.model, data);
    const auto labels = data.labels(data.all_indices());
    if (!a.train_data.empty()) {
      const Dataset train = read_dataset(a.train_data);
      train_f = image_features(state.model, train);
      train_l = train.labels(train.all_indices());
      test_f = features;
      test_l = labels;
    } else {
      // first half trains the probe, second half tests it
      const Index half = data.size() / 2;
      train_f = features.topRows(half);
      test_f = features.bottomRows(data.size() - half);
      train_l.assign(labels.begin(), labels.begin() + half);
      test_l.assign(labels.begin() + half, labels.end());
    }
    emit("linear_probe_accuracy", linear_probe(train_f, train_l, test_f, test_l).accuracy, InferenceMode::kFull);
  } else if (a.task == "modes") {
    for (const auto& r : eval_inference_modes(state.model, tokenizer, data, a.mask_ratio, a.seed, hash)) {
      out << r.to_json() << '\n';
    }
  } else {
    throw ConfigError("unknown eval task '" + a.task + "'");
  }
}

void cmd_flops(const FlopsArgs& a, std::ostream& out) {
  const FlopReport r = count_flops(EncoderConfig::preset(a.preset), a.mask_ratio, a.text_mask_ratio);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(r.to_json());
  j["preset"] = a.preset;
  j["mask_ratio"] = a.mask_ratio;
  out << j.dump() << '\n';
  out << std::fixed << std::setprecision(2) << "ratio " << r.ratio_vs_unmasked << "x, text "
      << std::setprecision(1) << 100.0 * r.text_fraction << "%\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked contrastive language-image pre-training workbench", "flip"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset file");
  gen_cmd->add_option("--n", gen.n, "Number of records")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen.out, "Output path")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Pre-train from a key=value config file");
  train_cmd->add_option("--config", train.config, "Config file")->required();
  train_cmd->add_option("--out-dir", train.out_dir, "Run directory")->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");

  TuneArgs tune;
  auto* tune_cmd = app.add_subcommand("tune-unmasked", "Continue a checkpoint without masking at a low lr");
  tune_cmd->add_option("--ckpt", tune.ckpt, "Pre-trained checkpoint")->required();
  tune_cmd->add_option("--config", tune.config, "Pre-training config file")->required();
  tune_cmd->add_option("--out", tune.out, "Tuned checkpoint path (default: <ckpt stem>.tuned.ckpt)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset file")->required();
  eval_cmd->add_option("--task", ev.task, "Evaluation task")
      ->check(CLI::IsMember({"zero-shot", "retrieval", "linear-probe", "modes"}));
  eval_cmd->add_option("--mask-ratio", ev.mask_ratio, "Image mask ratio at inference");
  eval_cmd->add_option("--seed", ev.seed, "Inference mask seed");
  eval_cmd->add_option("--train-data", ev.train_data, "Probe training set (linear-probe)");

  FlopsArgs fl;
  auto* flops_cmd = app.add_subcommand("flops", "Forward FLOPs per sample of a preset");
  flops_cmd->add_option("--preset", fl.preset, "Encoder preset")->required()->check(CLI::IsMember(EncoderConfig::preset_names()));
  flops_cmd->add_option("--mask-ratio", fl.mask_ratio, "Image mask ratio");
  flops_cmd->add_option("--text-mask-ratio", fl.text_mask_ratio, "Text mask ratio");

  std::vector<std::string> runs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Accuracy against compute for run directories");
  report_cmd->add_option("--runs", runs, "Run directories")->required();
  report_cmd->add_option("--out", report_out, "CSV output path (default stdout)");

  ScaleArgs sc;
  auto* scale_cmd = app.add_subcommand("scale", "Train a base run and one scaled variant");
  scale_cmd->add_option("--config", sc.config, "Base config file")->required();
  scale_cmd->add_option("--axis", sc.axis, "Scaling axis")->required()->check(CLI::IsMember({"model", "data", "schedule"}));
  scale_cmd->add_option("--out-root", sc.out_root, "Directory for both runs")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("flip");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*gen_cmd) {
      cmd_gen_data(gen, out);
    } else if (*train_cmd) {
      cmd_train(train, out);
    } else if (*tune_cmd) {
      cmd_tune(tune, out);
    } else if (*eval_cmd) {
      cmd_eval(ev, out);
    } else if (*flops_cmd) {
      cmd_flops(fl, out);
    } else if (*report_cmd) {
      const std::string csv = tradeoff_csv(tradeoff_report(runs));
      if (report_out.empty()) {
        out << csv;
      } else {
        std::ofstream f(report_out, std::ios::binary);
        if (!(f << csv)) throw IoError("cannot write " + report_out);
      }
    } else if (*scale_cmd) {
      out << tradeoff_csv(run_scaling_axis(TrainConfig::load(sc.config), parse_scaling_axis(sc.axis), sc.out_root, &out));
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace flip
