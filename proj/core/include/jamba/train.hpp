#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "jamba/config.hpp"
#include "jamba/model.hpp"
#include "jamba/tasks.hpp"

namespace jamba {

enum class OptimizerKind : std::uint8_t { kSgd, kAdam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainSpec {
  std::size_t steps = 200;
  std::size_t batch = 8;
  double lr = 3e-4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double clip = 1.0;            // global gradient-norm clip; 0 disables
  std::size_t warmup = 0;       // linear warmup steps
  bool cosine = false;          // after warmup, cosine decay to lr / 10 at the last step
  std::size_t eval_every = 50;  // 0: evaluate only after the last step
  std::size_t eval_samples = 64;
  std::uint64_t seed = 0;       // model initialization seed
  DType dtype = DType::kReal64;
  bool log_activations = false;

  bool operator==(const TrainSpec&) const = default;
};

struct RunLogRow {
  std::size_t step = 0;  // 1-based index of the completed update
  double loss = 0;       // cross-entropy part
  double aux_loss = 0;
  double eval_accuracy = -1;  // negative when no evaluation ran at this step
  double grad_norm = 0;       // before clipping
  std::size_t tokens_seen = 0;
  double wall_ms = 0;
};

struct ActivationRow {
  std::size_t step = 0;
  std::size_t layer = 0;
  MambaActivationStats stats;
};

struct RunLog {
  std::vector<RunLogRow> rows;
  std::vector<ActivationRow> activations;

  // step,loss,aux_loss,eval_accuracy,grad_norm,tokens_seen,wall_ms
  std::string to_csv() const;
  std::string activations_to_csv() const;
};

struct EvalResult {
  double accuracy = 0;  // argmax hits over masked-in positions
  double loss = 0;      // mean cross-entropy over masked-in positions
  std::size_t answers = 0;
};

// Forward without recording; `batch_size` bounds the rows run at once.
EvalResult evaluate(const JambaModel& model, const TaskBatch& data, std::size_t batch_size = 16);

struct TrainResult {
  JambaModel model;
  RunLog log;
};

using StepCallback = std::function<void(const RunLogRow&)>;

// Deterministic given (config, task, train). Step s trains on
// gen_task(task, batch, s); evaluation uses a fixed held-out stream. Raises
// kDivergence naming the step when the loss or gradient becomes non-finite.
TrainResult train(const JambaConfig& config, const TaskSpec& task, const TrainSpec& spec,
                  const StepCallback& on_step = {});
// Continues from an existing model.
TrainResult train(JambaModel model, const TaskSpec& task, const TrainSpec& spec,
                  const StepCallback& on_step = {});

inline constexpr std::uint64_t kEvalStream = 0xE7A1'0000'0000'0001ULL;

struct AblationVariant {
  std::string name;
  JambaConfig config;
};

// attention, mamba, hybrid-1:7, hybrid-1:3 and hybrid+moe derived from `base`
// (layers per block, widths and vocabulary kept).
std::vector<AblationVariant> standard_ablation(const JambaConfig& base);

struct AblationEntry {
  std::string name;
  JambaConfig config;
  std::uint64_t total_params = 0;
  std::uint64_t active_params = 0;
  RunLog log;
  double final_loss = 0;
  double final_accuracy = 0;
};

struct AblationReport {
  std::vector<AblationEntry> entries;

  // step plus one loss column per variant.
  std::string curves_csv() const;
  std::string summary_json() const;
};

// Trains every variant with the same task, train spec and seeds. `workers` > 1
// runs variants on separate threads.
AblationReport ablate(const std::vector<AblationVariant>& variants, const TaskSpec& task,
                      const TrainSpec& spec, std::size_t workers = 1);

struct NeedleCell {
  std::size_t seq_len = 0;
  double depth = 0;
  EvalResult result;
};

// Accuracy of the answer token over every (length, depth) pair.
std::vector<NeedleCell> needle_grid(const JambaModel& model, const TaskSpec& base,
                                    const std::vector<std::size_t>& lengths,
                                    const std::vector<double>& depths, std::size_t samples);

}  // namespace jamba
