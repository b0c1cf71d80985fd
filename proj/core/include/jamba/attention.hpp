#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "jamba/config.hpp"
#include "jamba/tensor.hpp"

namespace jamba {

inline constexpr double kRopeBase = 10000.0;

struct AttentionDims {
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;
  std::size_t head_dim = 0;

  static AttentionDims from(const JambaConfig& config);
  std::size_t q_width() const { return n_heads * head_dim; }
  std::size_t kv_width() const { return n_kv_heads * head_dim; }
  std::size_t group() const { return n_heads / n_kv_heads; }
};

// Bias-free projections. w_q: [d_model, H*Dh]; w_k, w_v: [d_model, Hkv*Dh];
// w_o: [H*Dh, d_model].
struct AttentionWeights {
  Tensor w_q;
  Tensor w_k;
  Tensor w_v;
  Tensor w_o;
};

// Append-only keys/values of one attention layer for a single sequence,
// stored [cached_len, n_kv_heads, head_dim].
class KVCacheLayer {
 public:
  KVCacheLayer() = default;
  KVCacheLayer(std::size_t n_kv_heads, std::size_t head_dim)
      : n_kv_heads_(n_kv_heads), head_dim_(head_dim) {}

  std::size_t cached_len() const { return cached_len_; }
  std::size_t n_kv_heads() const { return n_kv_heads_; }
  std::size_t head_dim() const { return head_dim_; }
  std::span<const double> keys() const { return keys_; }
  std::span<const double> values() const { return values_; }

  void append(std::span<const double> keys, std::span<const double> values);

 private:
  std::size_t n_kv_heads_ = 0;
  std::size_t head_dim_ = 0;
  std::size_t cached_len_ = 0;
  std::vector<double> keys_;
  std::vector<double> values_;
};

enum class AttentionMask : std::uint8_t { kCausal, kNone };

struct AttendOptions {
  bool use_rope = false;
  AttentionMask mask = AttentionMask::kCausal;
  // When set, receives softmax weights laid out [batch, n_heads, q_len, k_len].
  std::vector<double>* probs_out = nullptr;
};

// Grouped-query self-attention over x: [batch, seq, d_model]. Scores are
// scaled by 1/sqrt(head_dim); each KV head serves n_heads/n_kv_heads query
// heads. With a cache (batch must be 1) the new keys/values are appended and
// query positions start at the prior cached length. Gradients do not flow into
// previously cached entries.
Tensor attend(const Tensor& x, const AttentionWeights& weights, const AttentionDims& dims,
              KVCacheLayer* cache, const AttendOptions& options = {});

// Rotary phase on x: [batch, seq, heads*head_dim] at absolute positions
// offset, offset+1, ... (half-split pairing, base 10000).
Tensor apply_rope(const Tensor& x, std::size_t n_heads, std::size_t head_dim,
                  std::size_t position_offset);

// Softmax(q k^T / sqrt(Dh)) v with GQA head sharing. q: [B, Tq, H*Dh];
// k, v: [B, Tk, Hkv*Dh]. Under the causal mask query i sees keys
// j <= i + (Tk - Tq).
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         const AttentionDims& dims, AttentionMask mask,
                         std::vector<double>* probs_out = nullptr);

// 2 * attention_layers * n_kv_heads * head_dim * context_len * bytes_per_value
std::uint64_t kv_bytes(const JambaConfig& config, std::uint64_t context_len,
                       std::uint64_t bytes_per_value);

}  // namespace jamba
