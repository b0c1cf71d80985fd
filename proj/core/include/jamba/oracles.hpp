#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "jamba/config.hpp"
#include "jamba/model.hpp"
#include "jamba/rng.hpp"

namespace jamba {

// Elementwise |a - b| / max(|b|, floor), maximized; floor guards exact zeros.
double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor = 1e-300);

struct ScanInstance {
  std::size_t length = 0;
  std::size_t d_inner = 0;
  std::size_t d_state = 0;
  std::size_t chunk = 0;
  std::vector<double> abar;  // [L, Din, N] in (0, 1)
  std::vector<double> bx;    // [L, Din, N]
  std::vector<double> c;     // [L, N]
  std::vector<double> h0;    // [Din, N]
};

// Discretized operators from random continuous parameters: A ~ -U(1, N+1),
// steps log-uniform in [1e-3, 1].
ScanInstance random_scan_instance(Rng& rng, std::size_t max_len, std::size_t max_inner,
                                  std::size_t max_state, std::size_t chunk);

struct ScanCheckReport {
  std::size_t trials = 0;
  double max_rel_diff = 0;
  std::size_t worst_trial = 0;
  std::vector<std::size_t> chunk_counts;  // trials per chunk class {1, 2, 4, 16, >=L}
  double elapsed_ms = 0;
};

inline constexpr double kScanTolerance = 1e-10;

// Chunked versus sequential scan on `trials` random instances (d_inner <= 8,
// N <= 8, L <= 64); chunk classes rotate over {1, 2, 4, 16, >= L}.
ScanCheckReport scan_check(std::size_t trials, std::uint64_t seed);

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_abs_err = 0;
  double max_rel_err = 0;
  std::string worst;  // "name[index]: analytic vs numeric"

  bool passed() const { return checked > 0 && failures == 0; }
};

struct GradCheckOptions {
  double step = 1e-5;
  double rtol = 1e-4;
  double atol = 1e-8;
  std::size_t max_per_tensor = 0;  // 0 checks every entry; otherwise a seeded sample
  std::uint64_t seed = 0;
};

// Central differences against reverse mode. `loss` rebuilds the scalar from
// the current parameter values. An entry passes when
// |analytic - numeric| <= max(atol, rtol * max(|analytic|, |numeric|)).
GradCheckResult grad_check(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

// Small hybrid with every layer type: attention, Mamba with inner norm, MLP and MoE.
JambaConfig grad_check_config();

// End-to-end check of a model's training loss on random tokens.
GradCheckResult model_grad_check(const JambaConfig& config, std::uint64_t seed,
                                 const GradCheckOptions& options = {});

}  // namespace jamba
