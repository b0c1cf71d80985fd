#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "jamba/tensor.hpp"

namespace jamba {

// SwiGLU MLP without biases. w_gate, w_up: [d_model, hidden]; w_down: [hidden, d_model].
struct MlpWeights {
  Tensor w_gate;
  Tensor w_up;
  Tensor w_down;
};

struct MoeWeights {
  Tensor router;  // [d_model, n_experts]
  std::vector<MlpWeights> experts;
};

// w_down (silu(x w_gate) * (x w_up)); x: [..., d_model].
Tensor mlp(const Tensor& x, const MlpWeights& weights);

struct RoutingRecord {
  std::size_t n_tokens = 0;
  std::size_t n_experts = 0;
  std::size_t top_k = 0;
  std::vector<std::size_t> selected;  // [tokens, K] expert ids, best first
  std::vector<double> gates;          // [tokens, K] renormalized weights
  std::vector<double> load;           // f: fraction of token-slots per expert, sums to 1
  Tensor mean_probs;                  // P: [n] mean full-softmax router probability (differentiable)
};

struct MoeOutput {
  Tensor y;
  RoutingRecord record;
};

// Top-K routing: logits = x router; the K largest logits per token (ties to
// the lower expert index) are softmax-normalized among themselves and weight
// the selected experts' outputs. x: [tokens, d_model] (leading dims allowed).
MoeOutput route_and_combine(const Tensor& x, const MoeWeights& weights, std::size_t top_k);

// alpha * n * sum_i f_i P_i, differentiable through P only.
Tensor load_balance_loss(const RoutingRecord& record, double alpha);

// Top-K indices of one row, ties broken toward the lower index.
std::vector<std::size_t> top_k_indices(const double* logits, std::size_t n, std::size_t k);

}  // namespace jamba
