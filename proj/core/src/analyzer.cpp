#include "jamba/analyzer.hpp"

#include <cstdio>
#include <sstream>

#include "jamba/attention.hpp"
#include "jamba/errors.hpp"
#include "json.hpp"

namespace jamba {

namespace {

struct PerLayer {
  std::uint64_t attention;
  std::uint64_t mamba;
  std::uint64_t mlp;
  std::uint64_t norms;
};

PerLayer layer_sizes(const JambaConfig& c) {
  const std::uint64_t d = c.d_model;
  const std::uint64_t q = c.n_heads * c.head_dim;
  const std::uint64_t kv = c.n_kv_heads * c.head_dim;
  const std::uint64_t din = c.d_inner();
  const std::uint64_t n = c.mamba_d_state;
  const std::uint64_t r = c.mamba_dt_rank;
  const std::uint64_t k = c.mamba_conv_kernel;
  PerLayer s{};
  s.attention = d * q + 2 * d * kv + q * d;
  s.mamba = d * 2 * din          // w_in
            + din * k + din      // conv
            + din * (r + 2 * n)  // w_x_to_dbc
            + r * din + din      // w_dt, dt_bias
            + din * n            // a_log
            + din                // D
            + din * d;           // w_out
  if (c.use_inner_mamba_norm) s.mamba += r + 2 * n;
  s.mlp = 3 * d * c.mlp_hidden;
  s.norms = 2 * d;
  return s;
}

}  // namespace

ParamCount count_params(const JambaConfig& config) {
  const CostReport r = state_bytes(config, 0, 0);
  return {r.total_params, r.active_params};
}

CostReport state_bytes(const JambaConfig& c, std::uint64_t context_len,
                       std::uint64_t bytes_per_value) {
  const auto schedule = resolve_schedule(c);
  const PerLayer s = layer_sizes(c);
  CostReport rep;
  rep.context_len = context_len;
  rep.bytes_per_value = bytes_per_value;
  rep.total_params = rep.active_params = c.vocab_size * c.d_model + c.d_model;
  const std::uint64_t kv_row = 2 * c.n_kv_heads * c.head_dim * bytes_per_value;
  for (const auto& spec : schedule.entries) {
    LayerCost lc;
    lc.index = spec.index;
    lc.mixer = spec.mixer;
    lc.mlp = spec.mlp;
    lc.total_params = lc.active_params = s.norms;
    if (spec.mixer == MixerKind::kAttention) {
      lc.total_params += s.attention;
      lc.active_params += s.attention;
      lc.kv_bytes = kv_row * context_len;
      rep.kv_bytes_per_token += kv_row;
    } else {
      lc.total_params += s.mamba;
      lc.active_params += s.mamba;
      lc.ssm_bytes = c.d_inner() * c.mamba_d_state * bytes_per_value;
      lc.conv_bytes = c.d_inner() * (c.mamba_conv_kernel - 1) * bytes_per_value;
    }
    if (spec.mlp == MlpKind::kMoe) {
      const std::uint64_t router = c.d_model * c.n_experts;
      lc.total_params += router + c.n_experts * s.mlp;
      lc.active_params += router + c.top_k * s.mlp;
    } else {
      lc.total_params += s.mlp;
      lc.active_params += s.mlp;
    }
    rep.total_params += lc.total_params;
    rep.active_params += lc.active_params;
    rep.kv_bytes += lc.kv_bytes;
    rep.ssm_state_bytes += lc.ssm_bytes;
    rep.conv_state_bytes += lc.conv_bytes;
    rep.layers.push_back(lc);
  }
  return rep;
}

std::uint64_t max_context(const JambaConfig& config, std::uint64_t memory_budget_bytes,
                          std::uint64_t bytes_per_param, std::uint64_t bytes_per_value) {
  const CostReport base = state_bytes(config, 0, bytes_per_value);
  const std::uint64_t fixed =
      base.total_params * bytes_per_param + base.ssm_state_bytes + base.conv_state_bytes;
  if (memory_budget_bytes < fixed) {
    fail(ErrorKind::kBudgetTooSmall,
         "budget of " + std::to_string(memory_budget_bytes) + " bytes is below the fixed footprint of " +
             std::to_string(fixed) + " bytes");
  }
  if (base.kv_bytes_per_token == 0) return kUnboundedContext;
  return (memory_budget_bytes - fixed) / base.kv_bytes_per_token;
}

std::string report_to_json(const CostReport& r, const std::string& name, int indent) {
  nlohmann::ordered_json j;
  j["config"] = name;
  j["total_params"] = r.total_params;
  j["active_params"] = r.active_params;
  j["context_len"] = r.context_len;
  j["bytes_per_value"] = r.bytes_per_value;
  j["kv_bytes"] = r.kv_bytes;
  j["kv_gib"] = static_cast<double>(r.kv_bytes) / kGiB;
  j["ssm_state_bytes"] = r.ssm_state_bytes;
  j["conv_state_bytes"] = r.conv_state_bytes;
  j["state_bytes"] = r.state_bytes();
  j["kv_bytes_per_token"] = r.kv_bytes_per_token;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"index", l.index},
                      {"mixer", std::string(to_string(l.mixer))},
                      {"mlp", std::string(to_string(l.mlp))},
                      {"total_params", l.total_params},
                      {"active_params", l.active_params},
                      {"kv_bytes", l.kv_bytes},
                      {"ssm_bytes", l.ssm_bytes},
                      {"conv_bytes", l.conv_bytes}});
  }
  return j.dump(indent);
}

std::string report_to_text(const CostReport& r, const std::string& name) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %16s %16s %12s %12s %12s\n", "config", "total_params",
                "active_params", "kv_gib", "ssm_mib", "conv_mib");
  os << line;
  std::snprintf(line, sizeof line, "%-22s %16llu %16llu %12.3f %12.3f %12.3f\n", name.c_str(),
                static_cast<unsigned long long>(r.total_params),
                static_cast<unsigned long long>(r.active_params),
                static_cast<double>(r.kv_bytes) / kGiB,
                static_cast<double>(r.ssm_state_bytes) / (1024.0 * 1024.0),
                static_cast<double>(r.conv_state_bytes) / (1024.0 * 1024.0));
  os << line;
  os << "context " << r.context_len << " tokens at " << r.bytes_per_value
     << " bytes/value; kv bytes/token " << r.kv_bytes_per_token << "\n\n";
  std::snprintf(line, sizeof line, "%6s %-10s %-4s %14s %14s %14s %12s\n", "layer", "mixer", "mlp",
                "total_params", "active_params", "kv_bytes", "ssm+conv");
  os << line;
  for (const auto& l : r.layers) {
    std::snprintf(line, sizeof line, "%6zu %-10s %-4s %14llu %14llu %14llu %12llu\n", l.index,
                  std::string(to_string(l.mixer)).c_str(), std::string(to_string(l.mlp)).c_str(),
                  static_cast<unsigned long long>(l.total_params),
                  static_cast<unsigned long long>(l.active_params),
                  static_cast<unsigned long long>(l.kv_bytes),
                  static_cast<unsigned long long>(l.ssm_bytes + l.conv_bytes));
    os << line;
  }
  return os.str();
}

}  // namespace jamba
