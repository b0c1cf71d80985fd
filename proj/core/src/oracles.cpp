#include "jamba/oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "jamba/errors.hpp"
#include "jamba/mamba.hpp"

namespace jamba {

double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) fail(ErrorKind::kShapeMismatch, "max_rel_diff on different lengths");
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  }
  return worst;
}

ScanInstance random_scan_instance(Rng& rng, std::size_t max_len, std::size_t max_inner,
                                  std::size_t max_state, std::size_t chunk) {
  ScanInstance s;
  s.length = 1 + rng.below(max_len);
  s.d_inner = 1 + rng.below(max_inner);
  s.d_state = 1 + rng.below(max_state);
  s.chunk = chunk;
  const std::size_t L = s.length, D = s.d_inner, N = s.d_state;
  std::vector<double> a(D * N);
  for (double& v : a) v = -rng.uniform(1.0, static_cast<double>(N) + 1.0);
  s.abar.resize(L * D * N);
  s.bx.resize(L * D * N);
  s.c.resize(L * N);
  s.h0.resize(D * N);
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> b(N);
    for (double& v : b) v = rng.normal();
    for (std::size_t i = 0; i < D; ++i) {
      const double delta = std::exp(rng.uniform(std::log(1e-3), 0.0));
      const double u = rng.normal();
      for (std::size_t n = 0; n < N; ++n) {
        s.abar[(t * D + i) * N + n] = std::exp(delta * a[i * N + n]);
        s.bx[(t * D + i) * N + n] = delta * u * b[n];
      }
    }
    for (std::size_t n = 0; n < N; ++n) s.c[t * N + n] = rng.normal();
  }
  for (double& v : s.h0) v = rng.normal();
  return s;
}

ScanCheckReport scan_check(std::size_t trials, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  ScanCheckReport rep;
  rep.trials = trials;
  rep.chunk_counts.assign(5, 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t cls = i % 5;
    static constexpr std::size_t kFixed[] = {1, 2, 4, 16};
    ScanInstance s = random_scan_instance(rng, 64, 8, 8, 0);
    s.chunk = cls < 4 ? kFixed[cls] : s.length + rng.below(8);
    ++rep.chunk_counts[cls];
    const auto seq = selective_scan_sequential(s.abar, s.bx, s.c, s.h0, s.length, s.d_inner, s.d_state);
    const auto chk =
        selective_scan_chunked(s.abar, s.bx, s.c, s.h0, s.length, s.d_inner, s.d_state, s.chunk);
    const double d = std::max(max_rel_diff(chk.y, seq.y), max_rel_diff(chk.h_final, seq.h_final));
    if (d > rep.max_rel_diff || i == 0) {
      rep.max_rel_diff = d;
      rep.worst_trial = i;
    }
  }
  rep.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

GradCheckResult grad_check(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& o) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    auto g = p.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.tensor.numel(), 0.0);
  }
  GradCheckResult res;
  Rng rng(o.seed);
  NoGradGuard no_grad;
  double worst_score = -1;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].tensor;
    auto w = t.mutable_data();
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (o.max_per_tensor > 0 && idx.size() > o.max_per_tensor) {
      for (std::size_t i = 0; i < o.max_per_tensor; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      idx.resize(o.max_per_tensor);
    }
    for (std::size_t i : idx) {
      const double saved = w[i];
      w[i] = saved + o.step;
      const double fp = loss().item();
      w[i] = saved - o.step;
      const double fm = loss().item();
      w[i] = saved;
      const double numeric = (fp - fm) / (2 * o.step);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric);
      const double mag = std::max(std::abs(a), std::abs(numeric));
      const double allowed = std::max(o.atol, o.rtol * mag);
      ++res.checked;
      res.max_abs_err = std::max(res.max_abs_err, err);
      if (mag > 0) res.max_rel_err = std::max(res.max_rel_err, err / mag);
      if (err > allowed) ++res.failures;
      const double score = err / allowed;
      if (score > worst_score) {
        worst_score = score;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s[%zu]: analytic %.10g vs numeric %.10g", params[pi].name.c_str(), i, a,
                      numeric);
        res.worst = buf;
      }
    }
  }
  return res;
}

JambaConfig grad_check_config() {
  JambaConfig c;
  c.d_model = 8;
  c.n_layers_per_block = 4;
  c.n_blocks = 1;
  c.attn_ratio = 1;
  c.mamba_ratio = 3;
  c.moe_every = 2;
  c.n_experts = 4;
  c.top_k = 2;
  c.n_heads = 2;
  c.n_kv_heads = 1;
  c.head_dim = 4;
  c.mamba_d_state = 4;
  c.mamba_expand = 2;
  c.mamba_conv_kernel = 3;
  c.mamba_dt_rank = 2;
  c.mlp_hidden = 12;
  c.vocab_size = 16;
  c.use_rope = true;
  c.use_inner_mamba_norm = true;
  c.load_balance_alpha = 0.01;
  return c;
}

GradCheckResult model_grad_check(const JambaConfig& config, std::uint64_t seed, const GradCheckOptions& options) {
  validate(config);
  // Larger-than-default init so every path carries a visible gradient.
  JambaModel model = JambaModel::init(config, seed);
  Rng rng(mix_seed(seed, 0x6752ULL));
  for (auto& p : model.named_parameters()) {
    Tensor t = p.tensor;
    if (p.name.find("norm") != std::string::npos || p.name.find("a_log") != std::string::npos ||
        p.name.find("dt_bias") != std::string::npos || p.name.find("d_skip") != std::string::npos) {
      continue;
    }
    for (double& v : t.mutable_data()) v = rng.normal(0.0, 0.3);
  }
  const std::size_t batch = 2, seq = 6;
  std::vector<std::int32_t> tokens(batch * seq), targets(batch * seq);
  std::vector<std::uint8_t> mask(batch * seq, 1);
  for (auto& t : tokens) t = static_cast<std::int32_t>(rng.below(config.vocab_size));
  for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(config.vocab_size));
  mask[0] = 0;
  return grad_check([&] { return model.loss(tokens, targets, mask, batch, seq).total; },
                    model.named_parameters(), options);
}

}  // namespace jamba
