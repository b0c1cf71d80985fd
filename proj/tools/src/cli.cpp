#include "jamba/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "jamba/analyzer.hpp"
#include "jamba/checkpoint.hpp"
#include "jamba/config.hpp"
#include "jamba/io.hpp"
#include "jamba/oracles.hpp"
#include "jamba/probe.hpp"
#include "jamba/tasks.hpp"
#include "jamba/train.hpp"
#include "json.hpp"

namespace jamba {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNonFinite:
    case ErrorKind::kNumericOverflow:
    case ErrorKind::kDivergence:
    case ErrorKind::kIoFailure:
    case ErrorKind::kCacheMismatch:
    case ErrorKind::kInternal:
      return kExitRuntime;
    default:
      return kExitValidation;
  }
}

namespace {

using ojson = nlohmann::ordered_json;

struct ConfigOptions {
  std::string config;
  std::vector<std::string> set;
};

struct TaskOptions {
  std::string task;
  std::size_t task_vocab = 0;  // 0: model vocabulary
  std::size_t seq_len = 64;
  std::size_t pairs = 8;
  std::size_t content = 8;
  double needle_depth = -1;
};

struct TrainOptions {
  std::size_t steps = 200;
  std::size_t batch = 8;
  double lr = 3e-4;
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double clip = 1.0;
  std::size_t warmup = 0;
  bool cosine = false;
  std::size_t eval_every = 50;
  std::size_t eval_samples = 64;
  std::string dtype = "f64";
};

void add_config_flags(CLI::App* cmd, ConfigOptions& o, const std::string& default_config) {
  o.config = default_config;
  cmd->add_option("--config", o.config, "Preset name or path to a JSON config")->capture_default_str();
  cmd->add_option("--set", o.set, "Override one config field, key=value (repeatable)");
}

void add_task_flags(CLI::App* cmd, TaskOptions& o, const std::string& default_task) {
  o.task = default_task;
  cmd->add_option("--task", o.task, "induction | selective-copy | needle | lm-bytes")->capture_default_str();
  cmd->add_option("--task-vocab", o.task_vocab, "Task vocabulary size (0: the model's)")->capture_default_str();
  cmd->add_option("--seq-len", o.seq_len, "Tokens per training sequence")->capture_default_str();
  cmd->add_option("--pairs", o.pairs, "Induction key/value pairs")->capture_default_str();
  cmd->add_option("--content", o.content, "Selective-copy content tokens")->capture_default_str();
  cmd->add_option("--needle-depth", o.needle_depth, "Needle depth in [0, 1]; negative samples uniformly")
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--steps", o.steps, "Optimizer steps")->capture_default_str();
  cmd->add_option("--batch", o.batch, "Sequences per step")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  cmd->add_option("--optimizer", o.optimizer, "sgd | adam")->capture_default_str();
  cmd->add_option("--beta1", o.beta1, "Adam beta1")->capture_default_str();
  cmd->add_option("--beta2", o.beta2, "Adam beta2")->capture_default_str();
  cmd->add_option("--adam-eps", o.adam_eps, "Adam epsilon")->capture_default_str();
  cmd->add_option("--clip", o.clip, "Global gradient-norm clip (0 disables)")->capture_default_str();
  cmd->add_option("--warmup", o.warmup, "Linear warmup steps")->capture_default_str();
  cmd->add_flag("--cosine", o.cosine, "Cosine decay to lr/10 after warmup");
  cmd->add_option("--eval-every", o.eval_every, "Evaluation cadence in steps (0: only at the end)")
      ->capture_default_str();
  cmd->add_option("--eval-samples", o.eval_samples, "Held-out sequences per evaluation")->capture_default_str();
  cmd->add_option("--dtype", o.dtype, "f64 | f32")->capture_default_str();
}

JambaConfig apply_overrides(JambaConfig c, const std::vector<std::string>& set) {
  for (const auto& kv : set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      fail(ErrorKind::kInvalidArgument, "--set expects key=value, got '" + kv + "'");
    }
    set_config_field(c, std::string_view(kv).substr(0, eq), std::string_view(kv).substr(eq + 1));
  }
  validate(c);
  return c;
}

JambaConfig resolve_config(const ConfigOptions& o) { return apply_overrides(load_config(o.config), o.set); }

TaskSpec resolve_task(const TaskOptions& o, std::size_t model_vocab, std::uint64_t seed) {
  TaskSpec t;
  t.kind = parse_task_kind(o.task);
  t.vocab_size = o.task_vocab ? o.task_vocab : model_vocab;
  t.seq_len = o.seq_len;
  t.n_pairs = o.pairs;
  t.n_content = o.content;
  t.needle_depth = o.needle_depth;
  t.seed = seed;
  check_task(t);
  return t;
}

TrainSpec resolve_train(const TrainOptions& o, std::uint64_t seed) {
  TrainSpec s;
  s.steps = o.steps;
  s.batch = o.batch;
  s.lr = o.lr;
  s.optimizer = parse_optimizer(o.optimizer);
  s.beta1 = o.beta1;
  s.beta2 = o.beta2;
  s.eps = o.adam_eps;
  s.clip = o.clip;
  s.warmup = o.warmup;
  s.cosine = o.cosine;
  s.eval_every = o.eval_every;
  s.eval_samples = o.eval_samples;
  s.seed = seed;
  s.dtype = parse_dtype(o.dtype);
  return s;
}

std::string invocation_line(const std::vector<std::string>& args) {
  std::string line = "jamba";
  for (const auto& a : args) {
    const bool plain = !a.empty() && std::all_of(a.begin(), a.end(), [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || std::string_view("-_=.,:/+").find(c) != std::string_view::npos;
    });
    line += ' ';
    if (plain) {
      line += a;
    } else {
      line += '\'';
      for (char c : a) line += c == '\'' ? std::string("'\\''") : std::string(1, c);
      line += '\'';
    }
  }
  return line;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      fail(ErrorKind::kInvalidArgument, "expected a comma-separated list of integers, got '" + text + "'");
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::kInvalidArgument, "expected a comma-separated list of numbers, got '" + text + "'");
    }
  }
  return out;
}

std::uint64_t bytes_from_bits(std::size_t bits, const char* flag) {
  if (bits == 0 || bits % 8 != 0) {
    fail(ErrorKind::kRangeViolation, std::string(flag) + " must be a positive multiple of 8");
  }
  return bits / 8;
}

std::string eval_json(const EvalResult& r) {
  return ojson{{"accuracy", r.accuracy}, {"loss", r.loss}, {"answers", r.answers}}.dump();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid attention/Mamba/MoE desk toolkit: planning, training, evaluation and oracle checks.",
               "jamba"};
  app.require_subcommand(1);
  app.allow_extras(false);

  // plan
  auto* plan = app.add_subcommand("plan", "Parameter counts and inference-state memory for a config");
  ConfigOptions plan_cfg;
  std::size_t plan_context = 262144, kv_bits = 16, param_bits = 16;
  std::optional<double> budget_gib;
  std::string plan_format = "text", plan_out;
  add_config_flags(plan, plan_cfg, "jamba-release-shape");
  plan->add_option("--context", plan_context, "Context length in tokens")->capture_default_str();
  plan->add_option("--kv-bits", kv_bits, "Bits per cached key/value/state element")->capture_default_str();
  plan->add_option("--param-bits", param_bits, "Bits per parameter for --budget-gib")->capture_default_str();
  plan->add_option("--budget-gib", budget_gib, "Memory budget in GiB; reports the longest context that fits");
  plan->add_option("--format", plan_format, "text | json")
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();
  plan->add_option("--out", plan_out, "Also write the JSON report to this file");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model on a synthetic task and write a checkpoint");
  ConfigOptions train_cfg;
  TaskOptions train_task;
  TrainOptions train_opts;
  std::uint64_t train_seed = 0;
  std::string train_out, train_log;
  bool train_activations = false, train_quiet = false;
  add_config_flags(train_cmd, train_cfg, "toy-1m");
  add_task_flags(train_cmd, train_task, "induction");
  add_train_flags(train_cmd, train_opts);
  train_cmd->add_option("--seed", train_seed, "Seed for initialization and data")->capture_default_str();
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "RunLog CSV path (default: <out>.csv)");
  train_cmd->add_flag("--activations", train_activations, "Also log Mamba activation magnitudes");
  train_cmd->add_flag("--quiet", train_quiet, "Only print the final summary");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a task or a needle grid");
  std::string eval_ckpt, eval_out, needle_lengths, needle_depths;
  TaskOptions eval_task;
  std::size_t eval_samples = 256;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
  add_task_flags(eval_cmd, eval_task, "induction");
  eval_cmd->add_option("--samples", eval_samples, "Evaluation sequences (per grid cell)")->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed, "Task seed")->capture_default_str();
  eval_cmd->add_option("--needle-lengths", needle_lengths, "Comma-separated lengths for a needle grid");
  eval_cmd->add_option("--needle-depths", needle_depths, "Comma-separated depths in [0, 1] for a needle grid");
  eval_cmd->add_option("--out", eval_out, "Write the JSON result to this file");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Train architecture variants under one budget and compare");
  ConfigOptions ablate_cfg;
  TaskOptions ablate_task;
  TrainOptions ablate_opts;
  std::uint64_t ablate_seed = 0;
  std::string ablate_out, ablate_variants;
  std::size_t ablate_workers = 1;
  add_config_flags(ablate_cmd, ablate_cfg, "toy-1m");
  add_task_flags(ablate_cmd, ablate_task, "lm-bytes");
  add_train_flags(ablate_cmd, ablate_opts);
  ablate_cmd->add_option("--seed", ablate_seed, "Seed shared by every variant")->capture_default_str();
  ablate_cmd->add_option("--variants", ablate_variants,
                         "Comma-separated subset of attention,mamba,hybrid-1:7,hybrid-1:3,hybrid+moe");
  ablate_cmd->add_option("--workers", ablate_workers, "Variants trained concurrently")->capture_default_str();
  ablate_cmd->add_option("--out", ablate_out, "Output directory")->required();

  // probe
  auto* probe_cmd = app.add_subcommand("probe", "Export per-head attention matrices and induction scores");
  std::string probe_ckpt, probe_out, probe_tokens;
  TaskOptions probe_task;
  std::uint64_t probe_seed = 0;
  probe_cmd->add_option("--checkpoint", probe_ckpt, "Checkpoint path")->required();
  add_task_flags(probe_cmd, probe_task, "induction");
  probe_cmd->add_option("--seed", probe_seed, "Task seed for the probe sequence")->capture_default_str();
  probe_cmd->add_option("--tokens", probe_tokens, "Comma-separated token ids instead of a task sample (scores then cover every position)");
  probe_cmd->add_option("--out", probe_out, "Output directory")->required();

  // scan-check
  auto* scan_cmd = app.add_subcommand("scan-check", "Chunked scan against the sequential recurrence");
  std::size_t scan_trials = 100;
  std::uint64_t scan_seed = 0;
  scan_cmd->add_option("--trials", scan_trials, "Random instances")->capture_default_str();
  scan_cmd->add_option("--seed", scan_seed, "Instance seed")->capture_default_str();

  // grad-check
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of end-to-end gradients");
  std::string grad_config;
  std::vector<std::string> grad_set;
  std::uint64_t grad_seed = 0;
  std::size_t grad_per_tensor = 0;
  grad_cmd->add_option("--config", grad_config, "Preset or JSON config (default: built-in small hybrid)");
  grad_cmd->add_option("--set", grad_set, "Override one config field, key=value (repeatable)");
  grad_cmd->add_option("--seed", grad_seed, "Model and data seed")->capture_default_str();
  grad_cmd->add_option("--per-tensor", grad_per_tensor, "Entries checked per tensor (0: all)")
      ->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return kExitValidation;
  }

  const std::string line = invocation_line(args);
  try {
    if (plan->parsed()) {
      const JambaConfig c = resolve_config(plan_cfg);
      const auto bpv = bytes_from_bits(kv_bits, "--kv-bits");
      const CostReport rep = state_bytes(c, plan_context, bpv);
      ojson j = ojson::parse(report_to_json(rep, plan_cfg.config));
      std::string text = report_to_text(rep, plan_cfg.config);
      if (budget_gib) {
        if (!(*budget_gib > 0)) fail(ErrorKind::kRangeViolation, "--budget-gib must be positive");
        const auto bpp = bytes_from_bits(param_bits, "--param-bits");
        const auto budget = static_cast<std::uint64_t>(*budget_gib * kGiB);
        const auto ctx = max_context(c, budget, bpp, bpv);
        j["budget_bytes"] = budget;
        j["bytes_per_param"] = bpp;
        j["max_context"] = ctx == kUnboundedContext ? ojson(nullptr) : ojson(ctx);
        text += "\nmax context within " + std::to_string(*budget_gib) + " GiB: " +
                (ctx == kUnboundedContext ? std::string("unbounded") : std::to_string(ctx)) + " tokens\n";
      }
      out << (plan_format == "json" ? j.dump(2) + "\n" : text);
      if (!plan_out.empty()) write_file_atomic(plan_out, j.dump(2) + "\n");
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      const JambaConfig c = resolve_config(train_cfg);
      const TaskSpec task = resolve_task(train_task, c.vocab_size, train_seed);
      TrainSpec spec = resolve_train(train_opts, train_seed);
      spec.log_activations = train_activations;
      if (!train_quiet) out << "# " << line << "\n";
      auto result = train(c, task, spec, [&](const RunLogRow& r) {
        if (train_quiet || r.eval_accuracy < 0) return;
        char buf[160];
        std::snprintf(buf, sizeof buf, "step %zu loss %.5f aux %.5f eval_acc %.4f grad_norm %.4f  %.0f ms\n",
                      r.step, r.loss, r.aux_loss, r.eval_accuracy, r.grad_norm, r.wall_ms);
        out << buf << std::flush;
      });
      save_checkpoint(result.model, train_out);
      write_file_atomic(train_log.empty() ? train_out + ".csv" : train_log, result.log.to_csv());
      write_file_atomic(train_out + ".invocation", line + "\n");
      if (train_activations) write_file_atomic(train_out + ".activations.csv", result.log.activations_to_csv());
      const auto& last = result.log.rows.back();
      out << ojson{{"checkpoint", train_out},
                   {"steps", last.step},
                   {"final_loss", last.loss},
                   {"final_eval_accuracy", last.eval_accuracy},
                   {"wall_ms", last.wall_ms}}
                 .dump()
          << "\n";
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      const JambaModel model = load_checkpoint(eval_ckpt);
      TaskSpec task = resolve_task(eval_task, model.config().vocab_size, eval_seed);
      ojson j;
      j["checkpoint"] = eval_ckpt;
      j["task"] = std::string(to_string(task.kind));
      if (!needle_lengths.empty() || !needle_depths.empty()) {
        const auto lengths = parse_size_list(needle_lengths.empty() ? std::to_string(task.seq_len) : needle_lengths);
        const auto depths = parse_double_list(needle_depths.empty() ? "0,0.25,0.5,0.75,1" : needle_depths);
        j["task"] = "needle";
        auto& grid = j["grid"] = ojson::array();
        for (const auto& cell : needle_grid(model, task, lengths, depths, eval_samples)) {
          grid.push_back({{"seq_len", cell.seq_len}, {"depth", cell.depth}, {"accuracy", cell.result.accuracy},
                          {"loss", cell.result.loss}});
        }
      } else {
        j["result"] = ojson::parse(eval_json(evaluate(model, gen_task(task, eval_samples, kEvalStream))));
      }
      out << j.dump(2) << "\n";
      if (!eval_out.empty()) write_file_atomic(eval_out, j.dump(2) + "\n");
      return kExitOk;
    }

    if (ablate_cmd->parsed()) {
      const JambaConfig base = resolve_config(ablate_cfg);
      const TaskSpec task = resolve_task(ablate_task, base.vocab_size, ablate_seed);
      const TrainSpec spec = resolve_train(ablate_opts, ablate_seed);
      auto variants = standard_ablation(base);
      if (!ablate_variants.empty()) {
        std::vector<AblationVariant> chosen;
        std::stringstream ss(ablate_variants);
        std::string name;
        while (std::getline(ss, name, ',')) {
          auto it = std::find_if(variants.begin(), variants.end(),
                                 [&](const AblationVariant& v) { return v.name == name; });
          if (it == variants.end()) fail(ErrorKind::kInvalidArgument, "unknown variant '" + name + "'");
          chosen.push_back(*it);
        }
        variants = std::move(chosen);
      }
      const auto report = ablate(variants, task, spec, ablate_workers);
      std::filesystem::create_directories(ablate_out);
      for (const auto& e : report.entries) {
        std::string file = e.name;
        std::replace(file.begin(), file.end(), ':', '-');
        std::replace(file.begin(), file.end(), '+', '_');
        write_file_atomic(ablate_out + "/" + file + ".csv", e.log.to_csv());
      }
      write_file_atomic(ablate_out + "/curves.csv", report.curves_csv());
      write_file_atomic(ablate_out + "/summary.json", report.summary_json() + "\n");
      write_file_atomic(ablate_out + "/invocation", line + "\n");
      out << report.summary_json() << "\n";
      return kExitOk;
    }

    if (probe_cmd->parsed()) {
      const JambaModel model = load_checkpoint(probe_ckpt);
      std::vector<std::int32_t> tokens;
      std::vector<std::uint8_t> queries;
      if (!probe_tokens.empty()) {
        for (auto v : parse_size_list(probe_tokens)) tokens.push_back(static_cast<std::int32_t>(v));
      } else {
        const TaskSpec task = resolve_task(probe_task, model.config().vocab_size, probe_seed);
        auto sample = gen_task(task, 1, kEvalStream);
        tokens = std::move(sample.inputs);
        queries = std::move(sample.mask);
      }
      const ProbeResult res = probe_attention(model, tokens, queries);
      std::filesystem::create_directories(probe_out);
      write_probe(res, probe_out);
      ojson j = ojson::array();
      for (const auto& h : res.heads) {
        j.push_back({{"layer", h.layer}, {"head", h.head}, {"induction_score", h.induction_score}});
      }
      write_file_atomic(probe_out + "/invocation", line + "\n");
      out << j.dump(2) << "\n";
      return kExitOk;
    }

    if (scan_cmd->parsed()) {
      const auto rep = scan_check(scan_trials, scan_seed);
      const bool ok = rep.max_rel_diff < kScanTolerance;
      out << ojson{{"trials", rep.trials},
                   {"max_rel_diff", rep.max_rel_diff},
                   {"worst_trial", rep.worst_trial},
                   {"tolerance", kScanTolerance},
                   {"chunk_class_counts", rep.chunk_counts},
                   {"elapsed_ms", rep.elapsed_ms},
                   {"passed", ok}}
                 .dump()
          << "\n";
      if (!ok) {
        err << "error: chunked scan differs from the sequential recurrence by " << rep.max_rel_diff << "\n";
        return kExitRuntime;
      }
      return kExitOk;
    }

    if (grad_cmd->parsed()) {
      const JambaConfig c =
          apply_overrides(grad_config.empty() ? grad_check_config() : load_config(grad_config), grad_set);
      GradCheckOptions opts;
      opts.max_per_tensor = grad_per_tensor;
      opts.seed = grad_seed;
      const auto res = model_grad_check(c, grad_seed, opts);
      out << ojson{{"checked", res.checked},
                   {"failures", res.failures},
                   {"max_abs_err", res.max_abs_err},
                   {"max_rel_err", res.max_rel_err},
                   {"worst", res.worst},
                   {"passed", res.passed()}}
                 .dump()
          << "\n";
      if (!res.passed()) {
        err << "error: " << res.failures << " of " << res.checked << " gradient entries disagree; worst "
            << res.worst << "\n";
        return kExitRuntime;
      }
      return kExitOk;
    }
  } catch (const ValidationError& e) {
    std::string msg;
    for (const auto& issue : e.issues()) {
      if (!msg.empty()) msg += "; ";
      msg += std::string(to_string(issue.kind)) + ": " + issue.message;
    }
    err << "error: invalid config: " << msg << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << to_string(e.kind()) << ": " << msg << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io-failure: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace jamba
