#include "jamba/model.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "jamba/errors.hpp"
#include "jamba/ops.hpp"
#include "jamba/rng.hpp"

namespace jamba {

namespace {

Tensor zeros_param(Shape shape, DType dtype) {
  return Tensor::parameter(shape, std::vector<double>(shape_numel(shape), 0.0), dtype);
}

Tensor ones_param(Shape shape, DType dtype) {
  return Tensor::parameter(shape, std::vector<double>(shape_numel(shape), 1.0), dtype);
}

MlpWeights make_mlp(std::size_t d, std::size_t hidden, DType dtype) {
  return {zeros_param({d, hidden}, dtype), zeros_param({d, hidden}, dtype),
          zeros_param({hidden, d}, dtype)};
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void fill_parameter(const std::string& name, Tensor& t, const JambaConfig& c, Rng& rng) {
  auto data = t.mutable_data();
  if (ends_with(name, "_norm") || ends_with(name, "norm_dt") || ends_with(name, "norm_b") ||
      ends_with(name, "norm_c")) {
    std::fill(data.begin(), data.end(), 1.0);
  } else if (ends_with(name, "a_log")) {
    const std::size_t n = c.mamba_d_state;
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::log(static_cast<double>(i % n + 1));
  } else if (ends_with(name, "d_skip")) {
    std::fill(data.begin(), data.end(), 1.0);
  } else if (ends_with(name, "dt_bias")) {
    // softplus(dt_bias) log-uniform in [1e-3, 1e-1]
    for (double& v : data) {
      const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      v = dt + std::log(-std::expm1(-dt));
    }
  } else if (ends_with(name, "w_dt")) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c.mamba_dt_rank));
    for (double& v : data) v = rng.uniform(-bound, bound);
  } else if (ends_with(name, "conv_w") || ends_with(name, "conv_b")) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c.mamba_conv_kernel));
    for (double& v : data) v = rng.uniform(-bound, bound);
  } else {
    for (double& v : data) v = rng.normal(0.0, kInitStd);
  }
  if (t.dtype() == DType::kReal32)
    for (double& v : data) v = static_cast<double>(static_cast<float>(v));
}

void check_tokens(std::span<const std::int32_t> tokens, std::size_t vocab) {
  for (auto t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      fail(ErrorKind::kVocabOverflow,
           "token " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
}

}  // namespace

JambaModel JambaModel::allocate(const JambaConfig& config, DType dtype) {
  JambaModel m;
  m.config_ = config;
  m.schedule_ = resolve_schedule(config);
  m.dtype_ = dtype;
  const std::size_t d = config.d_model;
  m.embedding_ = zeros_param({config.vocab_size, d}, dtype);
  m.final_norm_ = ones_param({d}, dtype);
  const auto adims = AttentionDims::from(config);
  const auto mdims = MambaDims::from(config);
  for (const auto& spec : m.schedule_.entries) {
    LayerWeights lw;
    lw.spec = spec;
    lw.mixer_norm = ones_param({d}, dtype);
    lw.mlp_norm = ones_param({d}, dtype);
    if (spec.mixer == MixerKind::kAttention) {
      lw.attention = {zeros_param({d, adims.q_width()}, dtype), zeros_param({d, adims.kv_width()}, dtype),
                      zeros_param({d, adims.kv_width()}, dtype), zeros_param({adims.q_width(), d}, dtype)};
    } else {
      auto& mw = lw.mamba;
      const std::size_t Din = mdims.d_inner, N = mdims.d_state, R = mdims.dt_rank;
      mw.w_in = zeros_param({d, 2 * Din}, dtype);
      mw.conv_w = zeros_param({Din, mdims.conv_kernel}, dtype);
      mw.conv_b = zeros_param({Din}, dtype);
      mw.w_x_to_dbc = zeros_param({Din, mdims.dbc_width()}, dtype);
      mw.w_dt = zeros_param({R, Din}, dtype);
      mw.dt_bias = zeros_param({Din}, dtype);
      mw.a_log = zeros_param({Din, N}, dtype);
      mw.d_skip = zeros_param({Din}, dtype);
      mw.w_out = zeros_param({Din, d}, dtype);
      if (config.use_inner_mamba_norm) {
        mw.norm_dt = ones_param({R}, dtype);
        mw.norm_b = ones_param({N}, dtype);
        mw.norm_c = ones_param({N}, dtype);
      }
    }
    if (spec.mlp == MlpKind::kMoe) {
      lw.moe.router = zeros_param({d, config.n_experts}, dtype);
      for (std::size_t e = 0; e < config.n_experts; ++e)
        lw.moe.experts.push_back(make_mlp(d, config.mlp_hidden, dtype));
    } else {
      lw.mlp = make_mlp(d, config.mlp_hidden, dtype);
    }
    m.layers_.push_back(std::move(lw));
  }
  return m;
}

JambaModel JambaModel::init(const JambaConfig& config, std::uint64_t seed, DType dtype) {
  JambaModel m = allocate(config, dtype);
  Rng rng(seed);
  for (auto& [name, tensor] : m.named_parameters()) fill_parameter(name, tensor, config, rng);
  return m;
}

std::vector<NamedTensor> JambaModel::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"embed", embedding_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& lw = layers_[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    out.push_back({p + "mixer_norm", lw.mixer_norm});
    if (lw.spec.mixer == MixerKind::kAttention) {
      out.push_back({p + "attn.w_q", lw.attention.w_q});
      out.push_back({p + "attn.w_k", lw.attention.w_k});
      out.push_back({p + "attn.w_v", lw.attention.w_v});
      out.push_back({p + "attn.w_o", lw.attention.w_o});
    } else {
      const auto& mw = lw.mamba;
      out.push_back({p + "mamba.w_in", mw.w_in});
      out.push_back({p + "mamba.conv_w", mw.conv_w});
      out.push_back({p + "mamba.conv_b", mw.conv_b});
      out.push_back({p + "mamba.w_x_to_dbc", mw.w_x_to_dbc});
      out.push_back({p + "mamba.w_dt", mw.w_dt});
      out.push_back({p + "mamba.dt_bias", mw.dt_bias});
      out.push_back({p + "mamba.a_log", mw.a_log});
      out.push_back({p + "mamba.d_skip", mw.d_skip});
      out.push_back({p + "mamba.w_out", mw.w_out});
      if (mw.norm_dt.defined()) {
        out.push_back({p + "mamba.norm_dt", mw.norm_dt});
        out.push_back({p + "mamba.norm_b", mw.norm_b});
        out.push_back({p + "mamba.norm_c", mw.norm_c});
      }
    }
    out.push_back({p + "mlp_norm", lw.mlp_norm});
    if (lw.spec.mlp == MlpKind::kMoe) {
      out.push_back({p + "moe.router", lw.moe.router});
      for (std::size_t e = 0; e < lw.moe.experts.size(); ++e) {
        const std::string q = p + "moe.experts." + std::to_string(e) + ".";
        out.push_back({q + "w_gate", lw.moe.experts[e].w_gate});
        out.push_back({q + "w_up", lw.moe.experts[e].w_up});
        out.push_back({q + "w_down", lw.moe.experts[e].w_down});
      }
    } else {
      out.push_back({p + "mlp.w_gate", lw.mlp.w_gate});
      out.push_back({p + "mlp.w_up", lw.mlp.w_up});
      out.push_back({p + "mlp.w_down", lw.mlp.w_down});
    }
  }
  out.push_back({"final_norm", final_norm_});
  return out;
}

std::size_t JambaModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

ForwardResult JambaModel::run(std::span<const std::int32_t> tokens, std::size_t batch,
                              std::size_t seq, HybridCache* cache,
                              const ForwardOptions& options) const {
  if (tokens.size() != batch * seq) {
    fail(ErrorKind::kShapeMismatch, std::to_string(tokens.size()) + " tokens for batch " +
                                        std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  check_tokens(tokens, config_.vocab_size);
  if (cache) {
    if (cache->schedule() != schedule_ || cache->slots().size() != layers_.size()) {
      fail(ErrorKind::kCacheMismatch, "cache was built for a different layer schedule");
    }
    if (batch != 1) fail(ErrorKind::kCacheMismatch, "cached forward requires batch 1");
  }
  const auto adims = AttentionDims::from(config_);
  const auto mdims = MambaDims::from(config_);

  ForwardResult result;
  Tensor x = jamba::embedding(embedding_, tokens, {batch, seq});
  Tensor aux = Tensor::scalar(0.0, dtype_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& lw = layers_[i];
    try {
      Tensor h = rmsnorm(x, lw.mixer_norm);
      Tensor mixed;
      if (lw.spec.mixer == MixerKind::kAttention) {
        KVCacheLayer* kv = nullptr;
        if (cache) {
          kv = std::get_if<KVCacheLayer>(&cache->slots()[i]);
          if (!kv) fail(ErrorKind::kCacheMismatch, "layer " + std::to_string(i) + " expects a KV cache slot");
        }
        AttendOptions ao;
        ao.use_rope = config_.use_rope;
        ao.mask = options.mask;
        std::vector<double> probs;
        if (options.attention) ao.probs_out = &probs;
        mixed = attend(h, lw.attention, adims, kv, ao);
        if (options.attention) {
          const std::size_t k_len = kv ? kv->cached_len() : seq;
          options.attention->push_back({i, batch, adims.n_heads, seq, k_len, std::move(probs)});
        }
      } else {
        MambaStateLayer* st = nullptr;
        if (cache) {
          st = std::get_if<MambaStateLayer>(&cache->slots()[i]);
          if (!st) fail(ErrorKind::kCacheMismatch, "layer " + std::to_string(i) + " expects a Mamba state slot");
        }
        MambaActivationStats stats;
        mixed = mamba_forward(h, lw.mamba, mdims, st, config_.use_inner_mamba_norm,
                              options.mamba_stats ? &stats : nullptr);
        if (options.mamba_stats) options.mamba_stats->push_back(stats);
      }
      x = add(x, mixed);
      Tensor h2 = rmsnorm(x, lw.mlp_norm);
      if (lw.spec.mlp == MlpKind::kMoe) {
        auto routed = route_and_combine(h2, lw.moe, config_.top_k);
        aux = add(aux, load_balance_loss(routed.record, config_.load_balance_alpha));
        result.routing.push_back(std::move(routed.record));
        x = add(x, routed.y);
      } else {
        x = add(x, mlp(h2, lw.mlp));
      }
      require_finite(x.data(), "layer output");
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNonFinite) {
        fail(ErrorKind::kNumericOverflow, "layer " + std::to_string(i) + ": " + e.what());
      }
      throw;
    }
  }
  Tensor out = rmsnorm(x, final_norm_);
  result.logits = matmul_nt(out, embedding_);
  result.aux_loss = aux;
  if (cache) cache->advance(seq);
  return result;
}

ForwardResult JambaModel::forward(std::span<const std::int32_t> tokens, std::size_t batch,
                                  std::size_t seq, const ForwardOptions& options) const {
  return run(tokens, batch, seq, nullptr, options);
}

LossResult JambaModel::loss(std::span<const std::int32_t> tokens,
                            std::span<const std::int32_t> targets,
                            std::span<const std::uint8_t> mask, std::size_t batch,
                            std::size_t seq) const {
  LossResult r;
  r.forward = forward(tokens, batch, seq);
  Tensor ce = cross_entropy(r.forward.logits, targets, mask);
  r.cross_entropy = ce.item();
  r.aux = r.forward.aux_loss.item();
  r.total = add(ce, r.forward.aux_loss);
  return r;
}

HybridCache JambaModel::new_cache() const {
  std::vector<HybridCache::Slot> slots;
  const auto mdims = MambaDims::from(config_);
  for (const auto& spec : schedule_.entries) {
    if (spec.mixer == MixerKind::kAttention) slots.emplace_back(KVCacheLayer(config_.n_kv_heads, config_.head_dim));
    else slots.emplace_back(MambaStateLayer(mdims));
  }
  return HybridCache(schedule_, std::move(slots));
}

std::vector<double> JambaModel::prefill(HybridCache& cache, std::span<const std::int32_t> tokens,
                                        const ForwardOptions& options) const {
  if (tokens.empty()) fail(ErrorKind::kInvalidArgument, "prefill needs at least one token");
  NoGradGuard no_grad;
  auto r = run(tokens, 1, tokens.size(), &cache, options);
  const std::size_t v = config_.vocab_size;
  auto ld = r.logits.data();
  return {ld.end() - static_cast<std::ptrdiff_t>(v), ld.end()};
}

std::vector<double> JambaModel::decode_step(HybridCache& cache, std::int32_t token) const {
  const std::int32_t one[] = {token};
  return prefill(cache, one);
}

bool JambaModel::identical_to(const JambaModel& other) const {
  if (!(config_ == other.config_) || dtype_ != other.dtype_) return false;
  const auto a = named_parameters();
  const auto b = other.named_parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) return false;
    auto da = a[i].tensor.data();
    auto db = b[i].tensor.data();
    if (std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<std::int32_t> greedy_decode(const JambaModel& model,
                                        std::span<const std::int32_t> prompt, std::size_t steps) {
  HybridCache cache = model.new_cache();
  std::vector<std::int32_t> out;
  if (steps == 0) return out;
  auto logits = model.prefill(cache, prompt);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto next = static_cast<std::int32_t>(argmax(logits));
    out.push_back(next);
    if (s + 1 < steps) logits = model.decode_step(cache, next);
  }
  return out;
}

}  // namespace jamba
