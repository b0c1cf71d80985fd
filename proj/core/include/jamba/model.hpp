#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "jamba/attention.hpp"
#include "jamba/config.hpp"
#include "jamba/mamba.hpp"
#include "jamba/moe.hpp"
#include "jamba/tensor.hpp"

namespace jamba {

inline constexpr double kInitStd = 0.02;

// Weights of one scheduled layer. Exactly one of attention/mamba and exactly
// one of mlp/moe are populated, as dictated by `spec`.
struct LayerWeights {
  LayerSpec spec;
  Tensor mixer_norm;  // [d_model]
  Tensor mlp_norm;    // [d_model]
  AttentionWeights attention;
  MambaWeights mamba;
  MlpWeights mlp;
  MoeWeights moe;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Per-sequence inference state: a KV cache for every attention layer and a
// (conv window, SSM state) pair for every Mamba layer.
class HybridCache {
 public:
  using Slot = std::variant<KVCacheLayer, MambaStateLayer>;

  HybridCache() = default;
  HybridCache(LayerSchedule schedule, std::vector<Slot> slots)
      : schedule_(std::move(schedule)), slots_(std::move(slots)) {}

  std::size_t position() const { return position_; }
  const LayerSchedule& schedule() const { return schedule_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void advance(std::size_t tokens) { position_ += tokens; }

 private:
  LayerSchedule schedule_;
  std::vector<Slot> slots_;
  std::size_t position_ = 0;
};

struct AttentionCapture {
  std::size_t layer = 0;
  std::size_t batch = 0;
  std::size_t n_heads = 0;
  std::size_t q_len = 0;
  std::size_t k_len = 0;
  std::vector<double> probs;  // [batch, n_heads, q_len, k_len]
};

struct ForwardOptions {
  AttentionMask mask = AttentionMask::kCausal;
  std::vector<AttentionCapture>* attention = nullptr;
  std::vector<MambaActivationStats>* mamba_stats = nullptr;
};

struct ForwardResult {
  Tensor logits;    // [batch, seq, vocab]
  Tensor aux_loss;  // scalar; sum of load-balance losses over MoE layers
  std::vector<RoutingRecord> routing;
};

struct LossResult {
  Tensor total;  // cross_entropy + aux
  double cross_entropy = 0;
  double aux = 0;
  ForwardResult forward;
};

class JambaModel {
 public:
  // Shapes per config with zero weights and unit norm gains.
  static JambaModel allocate(const JambaConfig& config, DType dtype = DType::kReal64);
  // Deterministic initialization from a seed.
  static JambaModel init(const JambaConfig& config, std::uint64_t seed,
                         DType dtype = DType::kReal64);

  const JambaConfig& config() const { return config_; }
  const LayerSchedule& schedule() const { return schedule_; }
  DType dtype() const { return dtype_; }
  Tensor& embedding() { return embedding_; }
  const Tensor& embedding() const { return embedding_; }
  Tensor& final_norm() { return final_norm_; }
  std::vector<LayerWeights>& layers() { return layers_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }

  // Every weight array in a fixed order; tensors share storage with the model.
  std::vector<NamedTensor> named_parameters() const;
  std::size_t parameter_count() const;

  // tokens: [batch * seq] row-major. Records gradients unless disabled.
  ForwardResult forward(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t seq,
                        const ForwardOptions& options = {}) const;

  // Mean cross-entropy over masked-in positions plus the auxiliary loss.
  LossResult loss(std::span<const std::int32_t> tokens, std::span<const std::int32_t> targets,
                  std::span<const std::uint8_t> mask, std::size_t batch, std::size_t seq) const;

  HybridCache new_cache() const;
  // Feeds tokens through the cache (batch 1) and returns logits for the last one.
  std::vector<double> prefill(HybridCache& cache, std::span<const std::int32_t> tokens,
                              const ForwardOptions& options = {}) const;
  std::vector<double> decode_step(HybridCache& cache, std::int32_t token) const;

  // Bitwise equality of config and every weight.
  bool identical_to(const JambaModel& other) const;

 private:
  ForwardResult run(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t seq,
                    HybridCache* cache, const ForwardOptions& options) const;

  JambaConfig config_;
  LayerSchedule schedule_;
  DType dtype_ = DType::kReal64;
  Tensor embedding_;  // [vocab, d_model]; also the output head
  std::vector<LayerWeights> layers_;
  Tensor final_norm_;
};

// Greedy continuation through the cache; returns the generated tokens.
std::vector<std::int32_t> greedy_decode(const JambaModel& model, std::span<const std::int32_t> prompt,
                                        std::size_t steps);

std::size_t argmax(std::span<const double> values);

}  // namespace jamba
