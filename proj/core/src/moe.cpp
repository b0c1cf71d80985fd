#include "jamba/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "jamba/errors.hpp"
#include "jamba/ops.hpp"

namespace jamba {

Tensor mlp(const Tensor& x, const MlpWeights& w) {
  return matmul(mul(silu(matmul(x, w.w_gate)), matmul(x, w.w_up)), w.w_down);
}

std::vector<std::size_t> top_k_indices(const double* logits, std::size_t n, std::size_t k) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [logits](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  order.resize(std::min(k, n));
  return order;
}

namespace {

// Softmax over the selected logits of each row -> [rows, K].
Tensor selected_softmax(const Tensor& logits, const std::vector<std::size_t>& selected,
                        std::size_t k) {
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.numel() / n;
  auto ld = logits.data();
  std::vector<double> out(rows * k);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, ld[r * n + selected[r * k + j]]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp(ld[r * n + selected[r * k + j]] - mx);
      z += out[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= z;
  }
  const Tensor inputs[] = {logits};
  return record_op("selected_softmax", {rows, k}, std::move(out), inputs,
                   [selected, rows, n, k](std::span<const double> y, std::span<const double> g,
                                          const GradSinks& s) {
                     double* gl = s[0];
                     if (!gl) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                       double dot = 0.0;
                       for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
                       for (std::size_t j = 0; j < k; ++j)
                         gl[r * n + selected[r * k + j]] += y[r * k + j] * (g[r * k + j] - dot);
                     }
                   });
}

}  // namespace

MoeOutput route_and_combine(const Tensor& x, const MoeWeights& weights, std::size_t top_k) {
  if (!weights.router.defined() || weights.router.rank() != 2) {
    fail(ErrorKind::kShapeMismatch, "router must be [d_model, n_experts]");
  }
  const std::size_t d = weights.router.shape()[0];
  const std::size_t n = weights.router.shape()[1];
  if (weights.experts.size() != n) {
    fail(ErrorKind::kShapeMismatch, "router has " + std::to_string(n) + " outputs but " +
                                        std::to_string(weights.experts.size()) + " experts");
  }
  if (top_k == 0 || top_k > n) {
    fail(ErrorKind::kRangeViolation, "top_k = " + std::to_string(top_k) + " with " +
                                         std::to_string(n) + " experts");
  }
  if (x.rank() == 0 || x.shape().back() != d) {
    fail(ErrorKind::kShapeMismatch, "MoE input " + shape_str(x.shape()) + " for d_model " +
                                        std::to_string(d));
  }
  const std::size_t tokens = x.numel() / d;
  Tensor x2 = x.rank() == 2 ? x : reshape(x, {tokens, d});
  Tensor logits = matmul(x2, weights.router);

  RoutingRecord rec;
  rec.n_tokens = tokens;
  rec.n_experts = n;
  rec.top_k = top_k;
  rec.selected.reserve(tokens * top_k);
  auto ld = logits.data();
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto idx = top_k_indices(ld.data() + t * n, n, top_k);
    rec.selected.insert(rec.selected.end(), idx.begin(), idx.end());
  }
  Tensor gates = selected_softmax(logits, rec.selected, top_k);
  rec.gates.assign(gates.data().begin(), gates.data().end());

  rec.load.assign(n, 0.0);
  for (auto e : rec.selected) rec.load[e] += 1.0;
  const double slots = static_cast<double>(tokens * top_k);
  if (slots > 0)
    for (double& f : rec.load) f /= slots;
  rec.mean_probs = mean_rows(softmax(logits, -1));

  Tensor y;
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<std::size_t> rows, slots_of_e;
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t j = 0; j < top_k; ++j)
        if (rec.selected[t * top_k + j] == e) {
          rows.push_back(t);
          slots_of_e.push_back(t * top_k + j);
        }
    if (rows.empty()) continue;
    Tensor ye = mlp(gather_rows(x2, rows), weights.experts[e]);
    ye = scale_rows(ye, gather_elements(gates, slots_of_e));
    Tensor contrib = scatter_add_rows(ye, rows, tokens);
    y = y.defined() ? add(y, contrib) : contrib;
  }
  if (!y.defined()) y = Tensor::zeros({tokens, d}, x.dtype());
  if (x.rank() != 2) y = reshape(y, x.shape());
  return {y, std::move(rec)};
}

Tensor load_balance_loss(const RoutingRecord& record, double alpha) {
  if (!record.mean_probs.defined() || record.mean_probs.numel() != record.n_experts ||
      record.load.size() != record.n_experts) {
    fail(ErrorKind::kShapeMismatch, "routing record is incomplete");
  }
  Tensor f = Tensor::from_vector({record.n_experts}, record.load, record.mean_probs.dtype());
  return scale(sum(mul(record.mean_probs, f)), alpha * static_cast<double>(record.n_experts));
}

}  // namespace jamba
