#include "sembg/cli.hpp"

#include <fstream>
#include <ostream>
#include <string>

#include <CLI11.hpp>

#include "sembg/arch_io.hpp"
#include "sembg/checkpoint.hpp"
#include "sembg/config.hpp"
#include "sembg/errors.hpp"
#include "sembg/metrics.hpp"

namespace sembg {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string command;
  std::string config;
  std::string out;
  std::string checkpoint;
  bool deterministic = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("cannot write " + path.string());
}

// Spatial input size the cost model is evaluated at.
std::pair<int, int> input_hw(const ExperimentConfig& cfg) {
  switch (cfg.data.kind) {
    case DataKind::blobs: return {cfg.data.blobs.image_hw, cfg.data.blobs.image_hw};
    case DataKind::cifar10:
    case DataKind::cifar100: return {32, 32};
    case DataKind::file: break;
  }
  const Dataset d = import_dataset(cfg.data.path);
  return {static_cast<int>(d.images.dim(2)), static_cast<int>(d.images.dim(3))};
}

ExperimentConfig load(const Options& opt) {
  ExperimentConfig cfg = load_experiment(opt.config);
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (opt.deterministic) cfg.train.deterministic = true;
  return cfg;
}

int cmd_transform(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load(opt);
  const ArchSpec arch = resolve_arch(cfg);
  const BranchPlan plan = resolve_plan(cfg, arch);
  const auto [h, w] = input_hw(cfg);
  const MultiBranchArch single = single_path(arch);
  const MultiBranchArch multi = transform(arch, plan);
  const CostReport cs = cost_report(single, h, w);
  const CostReport cm = cost_report(multi, h, w);
  const json report{{"plan", plan.notation()},
                    {"input_hw", {h, w}},
                    {"single", emit_report(single, h, w)},
                    {"sembg", emit_report(multi, h, w)},
                    {"ratios",
                     {{"params", static_cast<double>(cm.params) / static_cast<double>(cs.params)},
                      {"flops", static_cast<double>(cm.flops_mac) / static_cast<double>(cs.flops_mac)}}}};
  const std::string text = report.dump(2) + "\n";
  write_text(run_directory(cfg) / "transform.json", text);
  out << text;
  return kExitOk;
}

int cmd_train(const Options& opt, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = load(opt);
  const ArchSpec arch = resolve_arch(cfg);
  const BranchPlan plan = resolve_plan(cfg, arch);
  const ExperimentData data = load_experiment_data(cfg.data);
  const fs::path dir = run_directory(cfg);
  fs::create_directories(dir);
  write_text(dir / "config.json", experiment_to_json(cfg).dump(2) + "\n");

  const auto log = [&](const EpochRecord& r) {
    err << "epoch " << r.epoch << " lr " << r.lr << " L_CE " << r.loss_ce << " L_KD " << r.loss_kd
        << " val_acc " << r.val_ensemble_acc;
    if (r.has_diversity) err << " PD " << r.mean_pd << " CS " << r.mean_cs;
    err << '\n';
  };

  const MultiBranchArch multi = transform(arch, plan);
  std::optional<TrainResult> result;
  try {
    if (!opt.checkpoint.empty()) {
      LoadedCheckpoint ck = load_checkpoint(opt.checkpoint, arch_hash(multi));
      result.emplace(TrainResult{std::move(ck.net), std::move(ck.state), std::move(ck.history)});
      continue_training(result->net, result->state, result->history, data.train, data.val, cfg.train, log);
    } else {
      result.emplace(train_run(arch, plan, data.train, data.val, cfg.train, log));
    }
  } catch (const NumericError& e) {
    write_text(dir / "failure.txt", std::string(e.what()) + "\n");
    throw;
  }
  write_text(dir / "history.csv", history_csv(result->history));
  save_checkpoint(dir / "checkpoint.bin", result->net, result->state, result->history);
  const EvalReport report = evaluate(result->net, data.val, cfg.train.eval_batch_size);
  const std::string text = eval_report_to_json(report).dump(2) + "\n";
  write_text(dir / "eval.json", text);
  out << text;
  return kExitOk;
}

struct Loaded {
  ExperimentConfig cfg;
  LoadedCheckpoint ck;
  ExperimentData data;
};

Loaded load_for_eval(const Options& opt) {
  ExperimentConfig cfg = load(opt);
  const ArchSpec arch = resolve_arch(cfg);
  const MultiBranchArch multi = transform(arch, resolve_plan(cfg, arch));
  const fs::path path = opt.checkpoint.empty() ? run_directory(cfg) / "checkpoint.bin" : fs::path(opt.checkpoint);
  LoadedCheckpoint ck = load_checkpoint(path, arch_hash(multi));
  ExperimentData data = load_experiment_data(cfg.data);
  return {std::move(cfg), std::move(ck), std::move(data)};
}

int cmd_eval(const Options& opt, std::ostream& out) {
  const Loaded l = load_for_eval(opt);
  const EvalReport report = evaluate(l.ck.net, l.data.val, l.cfg.train.eval_batch_size);
  const fs::path dir = run_directory(l.cfg);
  const std::string text = eval_report_to_json(report).dump(2) + "\n";
  write_text(dir / "eval.json", text);
  write_text(dir / "table1.csv", table1_csv_header() + table1_csv_row(report));
  write_text(dir / "calibration.csv", calibration_csv(report.bins));
  out << text;
  return kExitOk;
}

int cmd_diversity(const Options& opt, std::ostream& out) {
  const Loaded l = load_for_eval(opt);
  const EvalReport report = evaluate(l.ck.net, l.data.val, l.cfg.train.eval_batch_size);
  const fs::path dir = run_directory(l.cfg);
  write_text(dir / "pd.csv", matrix_csv(report.pd_matrix));
  write_text(dir / "cs.csv", matrix_csv(report.cs_matrix));
  out << "prediction disagreement\n" << matrix_csv(report.pd_matrix);
  out << "cosine similarity\n" << matrix_csv(report.cs_matrix);
  out << "mean_pd " << report.mean_pd() << "\nmean_cs " << report.mean_cs() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-ensembling multi-branch networks"};
  app.require_subcommand(1);
  Options opt;
  for (const char* name : {"transform", "train", "eval", "diversity"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory (overrides output_dir)");
    sub->add_option("--checkpoint", opt.checkpoint, "checkpoint to evaluate or resume from");
    sub->add_flag("--deterministic", opt.deterministic, "force deterministic mode");
    sub->callback([&opt, sub] { opt.command = sub->get_name(); });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (opt.command == "transform") return cmd_transform(opt, out);
    if (opt.command == "train") return cmd_train(opt, out, err);
    if (opt.command == "eval") return cmd_eval(opt, out);
    return cmd_diversity(opt, out);
  } catch (const ChannelUnderflowError& e) {
    err << "channel underflow: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    switch (e.kind()) {
      case CheckpointError::Kind::arch_mismatch:
      case CheckpointError::Kind::version: return kExitConfig;
      case CheckpointError::Kind::io:
      case CheckpointError::Kind::corrupt: return kExitData;
    }
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace sembg
