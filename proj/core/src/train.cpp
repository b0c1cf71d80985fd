#include "jamba/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "jamba/analyzer.hpp"
#include "jamba/errors.hpp"
#include "jamba/ops.hpp"
#include "json.hpp"

namespace jamba {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  fail(ErrorKind::kInvalidArgument, "unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::string RunLog::to_csv() const {
  std::string out = "step,loss,aux_loss,eval_accuracy,grad_norm,tokens_seen,wall_ms\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + ',' + fmt("%.17g", r.loss) + ',' + fmt("%.17g", r.aux_loss) + ',' +
           (r.eval_accuracy >= 0 ? fmt("%.17g", r.eval_accuracy) : std::string()) + ',' +
           fmt("%.17g", r.grad_norm) + ',' + std::to_string(r.tokens_seen) + ',' + fmt("%.3f", r.wall_ms) +
           '\n';
  }
  return out;
}

std::string RunLog::activations_to_csv() const {
  std::string out = "step,layer,dt_rms_raw,b_rms_raw,c_rms_raw,dt_rms,b_rms,c_rms,max_abs_state\n";
  for (const auto& a : activations) {
    const auto& s = a.stats;
    out += std::to_string(a.step) + ',' + std::to_string(a.layer);
    for (double v : {s.dt_rms_raw, s.b_rms_raw, s.c_rms_raw, s.dt_rms, s.b_rms, s.c_rms, s.max_abs_state}) {
      out += ',' + fmt("%.9g", v);
    }
    out += '\n';
  }
  return out;
}

EvalResult evaluate(const JambaModel& model, const TaskBatch& data, std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t L = data.seq_len;
  const std::size_t V = model.config().vocab_size;
  batch_size = std::max<std::size_t>(batch_size, 1);
  EvalResult res;
  double loss_sum = 0;
  std::size_t hits = 0;
  for (std::size_t b0 = 0; b0 < data.samples; b0 += batch_size) {
    const std::size_t nb = std::min(batch_size, data.samples - b0);
    const std::size_t off = b0 * L;
    std::span<const std::int32_t> tok(data.inputs.data() + off, nb * L);
    const auto fwd = model.forward(tok, nb, L);
    const auto logits = fwd.logits.data();
    for (std::size_t i = 0; i < nb * L; ++i) {
      if (!data.mask[off + i]) continue;
      const double* row = logits.data() + i * V;
      const auto target = static_cast<std::size_t>(data.targets[off + i]);
      const double mx = *std::max_element(row, row + V);
      double z = 0;
      for (std::size_t v = 0; v < V; ++v) z += std::exp(row[v] - mx);
      loss_sum += std::log(z) + mx - row[target];
      hits += argmax({row, V}) == target;
      ++res.answers;
    }
  }
  if (res.answers > 0) {
    res.accuracy = static_cast<double>(hits) / static_cast<double>(res.answers);
    res.loss = loss_sum / static_cast<double>(res.answers);
  }
  return res;
}

TrainResult train(const JambaConfig& config, const TaskSpec& task, const TrainSpec& spec,
                  const StepCallback& on_step) {
  return train(JambaModel::init(config, spec.seed, spec.dtype), task, spec, on_step);
}

TrainResult train(JambaModel model, const TaskSpec& task, const TrainSpec& spec,
                  const StepCallback& on_step) {
  check_task(task);
  if (task.vocab_size > model.config().vocab_size) {
    fail(ErrorKind::kVocabOverflow, "task vocabulary " + std::to_string(task.vocab_size) +
                                        " exceeds model vocabulary " +
                                        std::to_string(model.config().vocab_size));
  }
  if (spec.batch == 0) fail(ErrorKind::kRangeViolation, "batch must be positive");
  if (!(spec.lr >= 0) || !(spec.clip >= 0)) fail(ErrorKind::kRangeViolation, "lr and clip must be nonnegative");

  const auto params = model.named_parameters();
  std::vector<std::vector<double>> m1, m2;
  if (spec.optimizer == OptimizerKind::kAdam) {
    for (const auto& p : params) {
      m1.emplace_back(p.tensor.numel(), 0.0);
      m2.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  const TaskBatch eval_data = gen_task(task, spec.eval_samples, kEvalStream);
  const auto t0 = std::chrono::steady_clock::now();
  RunLog log;
  const std::size_t L = task.seq_len;

  for (std::size_t step = 1; step <= spec.steps; ++step) {
    const TaskBatch data = gen_task(task, spec.batch, step);
    RunLogRow row;
    row.step = step;
    auto diverged = [step](const std::string& why) {
      fail(ErrorKind::kDivergence, "diverged at step " + std::to_string(step) + ": " + why);
    };
    try {
      LossResult lr = model.loss(data.inputs, data.targets, data.mask, spec.batch, L);
      row.loss = lr.cross_entropy;
      row.aux_loss = lr.aux;
      if (!std::isfinite(lr.total.item())) diverged("non-finite loss");
      backward(lr.total);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNonFinite || e.kind() == ErrorKind::kNumericOverflow) diverged(e.what());
      throw;
    }

    double sq = 0;
    for (const auto& p : params) {
      for (double g : p.tensor.grad()) sq += g * g;
    }
    row.grad_norm = std::sqrt(sq);
    if (!std::isfinite(row.grad_norm)) diverged("non-finite gradient");
    const double clip_scale = spec.clip > 0 && row.grad_norm > spec.clip ? spec.clip / row.grad_norm : 1.0;
    double lr_t = spec.lr;
    if (spec.warmup > 0 && step < spec.warmup) {
      lr_t = spec.lr * static_cast<double>(step) / static_cast<double>(spec.warmup);
    } else if (spec.cosine && spec.steps > spec.warmup) {
      const double span = static_cast<double>(spec.steps - spec.warmup);
      const double frac = std::min(1.0, static_cast<double>(step - spec.warmup) / span);
      lr_t = spec.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * frac)));
    }
    const bool f32 = model.dtype() == DType::kReal32;
    const double bc1 = 1.0 - std::pow(spec.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(spec.beta2, static_cast<double>(step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Tensor t = params[pi].tensor;
      auto g = t.grad();
      if (g.empty()) continue;
      auto w = t.mutable_data();
      if (spec.optimizer == OptimizerKind::kSgd) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_t * clip_scale * g[i];
      } else {
        auto& a = m1[pi];
        auto& b = m2[pi];
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = clip_scale * g[i];
          a[i] = spec.beta1 * a[i] + (1 - spec.beta1) * gi;
          b[i] = spec.beta2 * b[i] + (1 - spec.beta2) * gi * gi;
          w[i] -= lr_t * (a[i] / bc1) / (std::sqrt(b[i] / bc2) + spec.eps);
        }
      }
      if (f32) {
        for (double& x : w) x = static_cast<double>(static_cast<float>(x));
      }
      t.zero_grad();
    }

    row.tokens_seen = step * spec.batch * L;
    const bool eval_now = (spec.eval_every > 0 && step % spec.eval_every == 0) || step == spec.steps;
    if (eval_now && eval_data.samples > 0) {
      row.eval_accuracy = evaluate(model, eval_data).accuracy;
      if (spec.log_activations) {
        NoGradGuard no_grad;
        std::vector<MambaActivationStats> stats;
        ForwardOptions opts;
        opts.mamba_stats = &stats;
        const std::size_t nb = std::min<std::size_t>(eval_data.samples, 16);
        model.forward({eval_data.inputs.data(), nb * L}, nb, L, opts);
        std::size_t k = 0;
        for (const auto& spec_i : model.schedule().entries) {
          if (spec_i.mixer == MixerKind::kMamba && k < stats.size()) {
            log.activations.push_back({step, spec_i.index, stats[k++]});
          }
        }
      }
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.rows.push_back(row);
    if (on_step) on_step(row);
  }
  return {std::move(model), std::move(log)};
}

std::vector<AblationVariant> standard_ablation(const JambaConfig& base) {
  auto make = [&](std::size_t a, std::size_t m, bool moe) {
    JambaConfig c = base;
    c.attn_ratio = a;
    c.mamba_ratio = m;
    if (moe) {
      c.moe_every = base.moe_every > 0 ? base.moe_every : 2;
      c.n_experts = std::max<std::size_t>(base.n_experts, 2);
      c.top_k = std::clamp<std::size_t>(base.top_k, 1, c.n_experts);
    } else {
      c.moe_every = 0;
    }
    return c;
  };
  return {{"attention", make(1, 0, false)},
          {"mamba", make(0, 1, false)},
          {"hybrid-1:7", make(1, 7, false)},
          {"hybrid-1:3", make(1, 3, false)},
          {"hybrid+moe", make(1, 7, true)}};
}

std::string AblationReport::curves_csv() const {
  std::string out = "step";
  for (const auto& e : entries) out += ',' + e.name;
  out += '\n';
  std::size_t n = 0;
  for (const auto& e : entries) n = std::max(n, e.log.rows.size());
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(i + 1);
    for (const auto& e : entries) {
      out += ',';
      if (i < e.log.rows.size()) out += fmt("%.17g", e.log.rows[i].loss);
    }
    out += '\n';
  }
  return out;
}

std::string AblationReport::summary_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    j.push_back({{"variant", e.name},
                 {"layers", resolve_schedule(e.config).mixer_string()},
                 {"moe_layers", resolve_schedule(e.config).count(MlpKind::kMoe)},
                 {"total_params", e.total_params},
                 {"active_params", e.active_params},
                 {"final_loss", e.final_loss},
                 {"final_eval_accuracy", e.final_accuracy},
                 {"wall_ms", e.log.rows.empty() ? 0.0 : e.log.rows.back().wall_ms}});
  }
  return j.dump(2);
}

AblationReport ablate(const std::vector<AblationVariant>& variants, const TaskSpec& task,
                      const TrainSpec& spec, std::size_t workers) {
  AblationReport report;
  report.entries.resize(variants.size());
  for (const auto& v : variants) validate(v.config);
  auto run_one = [&](std::size_t i) {
    auto& e = report.entries[i];
    e.name = variants[i].name;
    e.config = variants[i].config;
    const auto counts = count_params(e.config);
    e.total_params = counts.total;
    e.active_params = counts.active;
    auto result = train(e.config, task, spec);
    e.log = std::move(result.log);
    if (!e.log.rows.empty()) {
      e.final_loss = e.log.rows.back().loss;
      e.final_accuracy = std::max(0.0, e.log.rows.back().eval_accuracy);
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(variants.size(), 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < variants.size(); ++i) run_one(i);
    return report;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < variants.size(); i = next++) {
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return report;
}

std::vector<NeedleCell> needle_grid(const JambaModel& model, const TaskSpec& base,
                                    const std::vector<std::size_t>& lengths,
                                    const std::vector<double>& depths, std::size_t samples) {
  std::vector<NeedleCell> cells;
  for (std::size_t len : lengths) {
    for (double depth : depths) {
      if (depth < 0 || depth > 1) fail(ErrorKind::kRangeViolation, "needle depth must lie in [0, 1]");
      TaskSpec s = base;
      s.kind = TaskKind::kNeedle;
      s.seq_len = len;
      s.needle_depth = depth;
      cells.push_back({len, depth, evaluate(model, gen_task(s, samples, kEvalStream))});
    }
  }
  return cells;
}

}  // namespace jamba
