#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "jamba/config.hpp"

namespace jamba {

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t active = 0;  // each MoE layer counted with K experts; routers always active
};

struct LayerCost {
  std::size_t index = 0;
  MixerKind mixer = MixerKind::kMamba;
  MlpKind mlp = MlpKind::kPlain;
  std::uint64_t total_params = 0;
  std::uint64_t active_params = 0;
  std::uint64_t kv_bytes = 0;    // at the report's context length
  std::uint64_t ssm_bytes = 0;
  std::uint64_t conv_bytes = 0;
};

struct CostReport {
  std::uint64_t total_params = 0;
  std::uint64_t active_params = 0;
  std::uint64_t context_len = 0;
  std::uint64_t bytes_per_value = 0;
  std::uint64_t kv_bytes = 0;
  std::uint64_t ssm_state_bytes = 0;
  std::uint64_t conv_state_bytes = 0;
  std::uint64_t kv_bytes_per_token = 0;  // slope of state memory in context length
  std::vector<LayerCost> layers;

  std::uint64_t state_bytes() const { return kv_bytes + ssm_state_bytes + conv_state_bytes; }
};

// Closed form over every weight array the model instantiates.
ParamCount count_params(const JambaConfig& config);

// Parameter counts plus inference-state memory at one context length. SSM and
// conv terms do not depend on the context length.
CostReport state_bytes(const JambaConfig& config, std::uint64_t context_len,
                       std::uint64_t bytes_per_value);

inline constexpr std::uint64_t kUnboundedContext = std::numeric_limits<std::uint64_t>::max();

// Largest context whose parameter storage (total params * bytes_per_param)
// plus inference state fits the budget. Activation memory is not modeled.
// Returns kUnboundedContext for configs with no attention layers. Throws
// kBudgetTooSmall when the fixed footprint alone exceeds the budget.
std::uint64_t max_context(const JambaConfig& config, std::uint64_t memory_budget_bytes,
                          std::uint64_t bytes_per_param, std::uint64_t bytes_per_value);

std::string report_to_json(const CostReport& report, const std::string& name, int indent = 2);
std::string report_to_text(const CostReport& report, const std::string& name);

inline constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

}  // namespace jamba
