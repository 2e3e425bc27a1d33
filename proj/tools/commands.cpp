#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "probekit/csv.hpp"
#include "probekit/errors.hpp"
#include "probekit/gradcheck_suite.hpp"
#include "probekit/metrics.hpp"
#include "probekit/synth.hpp"
#include "probekit/train.hpp"

namespace probekit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Thrown inside a command to leave with a specific exit code.
struct Exit {
  int code;
  std::string message;
};

json read_json(const fs::path& file, int parse_error_code) {
  std::ifstream in(file);
  if (!in) throw Exit{kInternal, "cannot read " + file.string()};
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Exit{parse_error_code, file.string() + ": " + e.what()};
  }
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

Dataset load_bank(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Exit{kInternal, "bank directory not found: " + dir.string()};
  try {
    return Dataset::load(EmbeddingBank::open(dir));
  } catch (const BankError& e) {
    throw Exit{kIncompatible, e.what()};
  }
}

RunState load_run(const fs::path& run_dir) {
  const fs::path file = run_dir / "checkpoint.json";
  if (!fs::exists(file)) throw Exit{kInternal, "no checkpoint in " + run_dir.string()};
  try {
    return restore(file);
  } catch (const CheckpointError& e) {
    throw Exit{kInternal, e.what()};
  }
}

void check_compatible(const ProbeModel& model, const BankManifest& manifest) {
  try {
    require_compatible(model, manifest);
  } catch (const ConfigError& e) {
    throw Exit{kIncompatible, e.what()};
  }
}

json run_config_json(const RunState& run) {
  json j = to_json(run.config);
  j["strategy"] = to_string(run.model.arch.strategy);
  j["head"] = to_string(run.model.arch.head);
  return j;
}

// Writes everything a run directory holds. Runs that have not reached their
// final epoch only get config, checkpoint and log so they can be resumed.
void write_run(const RunState& run, const Dataset& train_data, const fs::path& dir, std::ostream& out) {
  fs::create_directories(dir);
  write_json(dir / "config.json", run_config_json(run));
  checkpoint(run, dir / "checkpoint.json");
  write_text(dir / "train_log.csv", train_log_csv(run.history));
  if (!run.finished()) {
    out << "halted after epoch " << run.epoch << " of " << run.config.epochs << "\n";
    return;
  }
  const EvalReport report = evaluate(train_data, run.model);
  write_json(dir / "metrics.json", to_json(report));
  if (run.model.arch.strategy == Strategy::all) {
    write_text(dir / "layer_weights.csv", layer_weights_csv(run.model));
  }
  out << report.metric << " (training bank) = " << format_double(report.value) << "\n";
}

int cmd_synth(const fs::path& spec_file, const fs::path& out_dir, std::ostream& out) {
  const json j = read_json(spec_file, kUsage);
  SynthSpec spec;
  try {
    spec = synth_spec_from_json(j);
    validate_synth_spec(spec);
  } catch (const ConfigError& e) {
    throw Exit{kUsage, std::string("invalid spec: ") + e.what()};
  }
  synth_bank(spec, out_dir);
  const auto violations = validate_bank(out_dir);
  if (!violations.empty()) {
    std::string msg = "written bank failed validation:";
    for (const auto& v : violations) msg += "\n  " + v.file + ": " + v.message;
    throw Exit{kInternal, msg};
  }
  out << "wrote " << spec.num_samples << " samples to " << out_dir.string() << "\n";
  return kOk;
}

struct TrainArgs {
  fs::path bank;
  fs::path out = "run";
  std::string strategy;
  std::string head;
  TrainConfig config;
  std::optional<std::size_t> halt_after;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  try {
    validate(a.config);
  } catch (const ConfigError& e) {
    throw Exit{kUsage, e.what()};
  }
  const Dataset data = load_bank(a.bank);
  const Strategy strategy = parse_strategy(a.strategy);
  const HeadKind head = parse_head(a.head);
  RunState run = start_run(init_probe_for(data.manifest, strategy, head, a.config), a.config);
  run_epochs(run, data, a.halt_after);
  write_run(run, data, a.out, out);
  return kOk;
}

int cmd_resume(const fs::path& run_dir, const fs::path& bank, std::optional<std::size_t> halt_after,
               std::ostream& out) {
  RunState run = load_run(run_dir);
  const Dataset data = load_bank(bank);
  check_compatible(run.model, data.manifest);
  run_epochs(run, data, halt_after);
  write_run(run, data, run_dir, out);
  return kOk;
}

int cmd_eval(const fs::path& run_dir, const fs::path& bank, std::ostream& out) {
  const RunState run = load_run(run_dir);
  const Dataset data = load_bank(bank);
  check_compatible(run.model, data.manifest);
  const EvalReport report = evaluate(data, run.model);
  write_json(run_dir / "metrics.json", to_json(report));
  out << report.metric << " = " << format_double(report.value) << "\n";
  return kOk;
}

int cmd_export_weights(const fs::path& run_dir, std::ostream& out) {
  const RunState run = load_run(run_dir);
  if (run.model.arch.strategy != Strategy::all) {
    throw Exit{kIncompatible,
               "run uses strategy=last, which has no layer weights; train with --strategy all"};
  }
  const fs::path file = run_dir / "layer_weights.csv";
  write_text(file, layer_weights_csv(run.model));
  out << "wrote " << file.string() << "\n";
  return kOk;
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err) {
  const auto results = run_gradcheck_suite(options);
  std::vector<std::string> failed;
  char line[160];
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-22s worst %.3e  tol %.0e  n=%zu  %s\n", r.name.c_str(),
                  r.worst_rel_error, r.tolerance, r.instances, r.passed() ? "ok" : "FAIL");
    out << line;
    if (!r.passed()) failed.push_back(r.name);
  }
  if (failed.empty()) {
    out << "all " << results.size() << " components passed\n";
    return kOk;
  }
  err << "gradient check failed:";
  for (const auto& name : failed) err << " " << name;
  err << "\n";
  return kInternal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Probing harness for frozen-encoder embedding banks"};
  app.name("probekit");
  app.require_subcommand(1);

  fs::path spec_file, out_dir, run_dir, bank_dir;

  auto* synth = app.add_subcommand("synth", "Generate a planted-signal embedding bank");
  synth->add_option("--spec", spec_file, "SynthSpec JSON file")->required();
  synth->add_option("--out", out_dir, "Output bank directory")->required();

  TrainArgs ta;
  std::size_t halt_after = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a probe on a bank");
  train_cmd->add_option("--bank", ta.bank, "Training bank directory")->required();
  train_cmd->add_option("--strategy", ta.strategy, "last | all")
      ->required()
      ->check(CLI::IsMember({"last", "all"}));
  train_cmd->add_option("--head", ta.head, "linear | attention")
      ->required()
      ->check(CLI::IsMember({"linear", "attention"}));
  train_cmd->add_option("--out", ta.out, "Run directory")->capture_default_str();
  auto& c = ta.config;
  train_cmd->add_option("--epochs", c.epochs)->capture_default_str();
  train_cmd->add_option("--warmup-epochs,--warmup_epochs", c.warmup_epochs)->capture_default_str();
  train_cmd->add_option("--lr,--peak-lr,--peak_lr", c.peak_lr)->capture_default_str();
  train_cmd->add_option("--batch-size,--batch_size", c.batch_size)->capture_default_str();
  train_cmd->add_option("--weight-decay,--weight_decay", c.weight_decay)->capture_default_str();
  train_cmd->add_option("--beta1", c.beta1)->capture_default_str();
  train_cmd->add_option("--beta2", c.beta2)->capture_default_str();
  train_cmd->add_option("--eps", c.eps)->capture_default_str();
  train_cmd->add_option("--dropout,--dropout-p,--dropout_p", c.dropout_p)->capture_default_str();
  train_cmd->add_option("--seed", c.seed)->capture_default_str();
  auto* train_halt = train_cmd->add_option("--halt-after", halt_after,
                                           "Stop after this many epochs, leaving a resumable run");

  auto* resume_cmd = app.add_subcommand("resume", "Continue a halted run from its checkpoint");
  resume_cmd->add_option("--run", run_dir, "Run directory")->required();
  resume_cmd->add_option("--bank", bank_dir, "Training bank directory")->required();
  auto* resume_halt = resume_cmd->add_option("--halt-after", halt_after);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained run on a bank");
  eval_cmd->add_option("--run", run_dir, "Run directory")->required();
  eval_cmd->add_option("--bank", bank_dir, "Bank directory")->required();

  auto* export_cmd = app.add_subcommand("export-weights", "Write learned layer weights as CSV");
  export_cmd->add_option("--run", run_dir, "Run directory")->required();

  GradcheckOptions gc;
  std::vector<std::string> faults;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck_cmd->add_option("--instances", gc.instances)->capture_default_str();
  gradcheck_cmd->add_option("--inject-fault", faults, "Flip the gradient sign of a component")
      ->group("");

  std::vector<std::string> argv_store{"probekit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(spec_file, out_dir, out);
    if (train_cmd->parsed()) {
      if (train_halt->count() > 0) ta.halt_after = halt_after;
      return cmd_train(ta, out);
    }
    if (resume_cmd->parsed()) {
      std::optional<std::size_t> halt;
      if (resume_halt->count() > 0) halt = halt_after;
      return cmd_resume(run_dir, bank_dir, halt, out);
    }
    if (eval_cmd->parsed()) return cmd_eval(run_dir, bank_dir, out);
    if (export_cmd->parsed()) return cmd_export_weights(run_dir, out);
    if (gradcheck_cmd->parsed()) {
      const auto known = gradcheck_components();
      for (const auto& f : faults) {
        if (std::find(known.begin(), known.end(), f) == known.end()) {
          err << "unknown component for --inject-fault: " << f << "\n";
          return kUsage;
        }
      }
      gc.inject_faults.insert(faults.begin(), faults.end());
      return cmd_gradcheck(gc, out, err);
    }
  } catch (const Exit& e) {
    err << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace probekit::cli
