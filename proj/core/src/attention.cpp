#include "jamba/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "jamba/errors.hpp"
#include "jamba/ops.hpp"

namespace jamba {

AttentionDims AttentionDims::from(const JambaConfig& config) {
  return {config.d_model, config.n_heads, config.n_kv_heads, config.head_dim};
}

void KVCacheLayer::append(std::span<const double> keys, std::span<const double> values) {
  const std::size_t row = n_kv_heads_ * head_dim_;
  if (row == 0 || keys.size() != values.size() || keys.size() % row != 0) {
    fail(ErrorKind::kShapeMismatch, "KV cache append with mismatched key/value sizes");
  }
  keys_.insert(keys_.end(), keys.begin(), keys.end());
  values_.insert(values_.end(), values.begin(), values.end());
  cached_len_ += keys.size() / row;
}

namespace {

// Cached prefix (constant) followed by the new rows of `fresh`: [1, prior+T, W].
Tensor prepend_cached(std::span<const double> cached, const Tensor& fresh) {
  const std::size_t width = fresh.shape().back();
  const std::size_t prior = cached.size() / width;
  const std::size_t t = fresh.shape()[1];
  std::vector<double> out;
  out.reserve(cached.size() + fresh.numel());
  out.insert(out.end(), cached.begin(), cached.end());
  out.insert(out.end(), fresh.data().begin(), fresh.data().end());
  const std::size_t offset = cached.size();
  const Tensor inputs[] = {fresh};
  return record_op("prepend_cached", {1, prior + t, width}, std::move(out), inputs,
                   [offset](auto, std::span<const double> g, const GradSinks& s) {
                     if (double* gf = s[0])
                       for (std::size_t i = offset; i < g.size(); ++i) gf[i - offset] += g[i];
                   });
}

void check_projection(const Tensor& w, std::size_t rows, std::size_t cols, const char* name) {
  if (!w.defined() || w.rank() != 2 || w.shape()[0] != rows || w.shape()[1] != cols) {
    fail(ErrorKind::kShapeMismatch, std::string(name) + " must be [" + std::to_string(rows) +
                                        ", " + std::to_string(cols) + "], got " +
                                        (w.defined() ? shape_str(w.shape()) : "undefined"));
  }
}

}  // namespace

Tensor apply_rope(const Tensor& x, std::size_t n_heads, std::size_t head_dim,
                  std::size_t position_offset) {
  if (head_dim % 2 != 0) fail(ErrorKind::kShapeMismatch, "rope needs an even head_dim");
  if (x.rank() != 3 || x.shape()[2] != n_heads * head_dim) {
    fail(ErrorKind::kShapeMismatch, "rope input " + shape_str(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t seq = x.shape()[1];
  const std::size_t half = head_dim / 2;
  std::vector<double> cos_t(seq * half), sin_t(seq * half);
  for (std::size_t t = 0; t < seq; ++t) {
    const double pos = static_cast<double>(position_offset + t);
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      cos_t[t * half + i] = std::cos(pos * freq);
      sin_t[t * half + i] = std::sin(pos * freq);
    }
  }
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t base = ((b * seq + t) * n_heads + h) * head_dim;
        for (std::size_t i = 0; i < half; ++i) {
          const double c = cos_t[t * half + i], s = sin_t[t * half + i];
          const double x1 = xd[base + i], x2 = xd[base + half + i];
          out[base + i] = x1 * c - x2 * s;
          out[base + half + i] = x2 * c + x1 * s;
        }
      }
  const Tensor inputs[] = {x};
  return record_op(
      "rope", x.shape(), std::move(out), inputs,
      [batch, seq, n_heads, head_dim, half, cos_t = std::move(cos_t), sin_t = std::move(sin_t)](
          auto, std::span<const double> g, const GradSinks& sinks) {
        double* gx = sinks[0];
        if (!gx) return;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < seq; ++t)
            for (std::size_t h = 0; h < n_heads; ++h) {
              const std::size_t base = ((b * seq + t) * n_heads + h) * head_dim;
              for (std::size_t i = 0; i < half; ++i) {
                const double c = cos_t[t * half + i], s = sin_t[t * half + i];
                const double g1 = g[base + i], g2 = g[base + half + i];
                gx[base + i] += g1 * c + g2 * s;
                gx[base + half + i] += -g1 * s + g2 * c;
              }
            }
      });
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         const AttentionDims& dims, AttentionMask mask,
                         std::vector<double>* probs_out) {
  const std::size_t H = dims.n_heads, Hkv = dims.n_kv_heads, Dh = dims.head_dim;
  if (Hkv == 0 || H % Hkv != 0) fail(ErrorKind::kShapeMismatch, "n_kv_heads must divide n_heads");
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.shape()[2] != H * Dh ||
      k.shape()[2] != Hkv * Dh || v.shape() != k.shape() || q.shape()[0] != k.shape()[0] ||
      k.shape()[1] < q.shape()[1]) {
    fail(ErrorKind::kShapeMismatch, "attention q " + shape_str(q.shape()) + ", k " +
                                        shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t B = q.shape()[0], Tq = q.shape()[1], Tk = k.shape()[1];
  const std::size_t offset = Tk - Tq;
  const std::size_t group = H / Hkv;
  const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();

  std::vector<double> probs(B * H * Tq * Tk, 0.0);
  std::vector<double> out(B * Tq * H * Dh, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t hk = h / group;
      for (std::size_t i = 0; i < Tq; ++i) {
        const std::size_t limit = mask == AttentionMask::kCausal ? i + offset + 1 : Tk;
        const double* qi = qd.data() + ((b * Tq + i) * H + h) * Dh;
        double* p = probs.data() + ((b * H + h) * Tq + i) * Tk;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < limit; ++j) {
          const double* kj = kd.data() + ((b * Tk + j) * Hkv + hk) * Dh;
          double dot = 0.0;
          for (std::size_t d = 0; d < Dh; ++d) dot += qi[d] * kj[d];
          p[j] = dot * scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < limit; ++j) p[j] /= z;
        double* oi = out.data() + ((b * Tq + i) * H + h) * Dh;
        for (std::size_t j = 0; j < limit; ++j) {
          const double* vj = vd.data() + ((b * Tk + j) * Hkv + hk) * Dh;
          for (std::size_t d = 0; d < Dh; ++d) oi[d] += p[j] * vj[d];
        }
      }
    }
  if (probs_out) *probs_out = probs;

  const Tensor inputs[] = {q, k, v};
  return record_op(
      "grouped_attention", {B, Tq, H * Dh}, std::move(out), inputs,
      [q, k, v, B, Tq, Tk, H, Hkv, Dh, group, offset, scale, mask, probs = std::move(probs)](
          auto, std::span<const double> g, const GradSinks& sinks) {
        double* gq = sinks[0];
        double* gk = sinks[1];
        double* gv = sinks[2];
        auto qd = q.data();
        auto kd = k.data();
        auto vd = v.data();
        std::vector<double> dp(Tk);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < H; ++h) {
            const std::size_t hk = h / group;
            for (std::size_t i = 0; i < Tq; ++i) {
              const std::size_t limit = mask == AttentionMask::kCausal ? i + offset + 1 : Tk;
              const double* p = probs.data() + ((b * H + h) * Tq + i) * Tk;
              const double* go = g.data() + ((b * Tq + i) * H + h) * Dh;
              const double* qi = qd.data() + ((b * Tq + i) * H + h) * Dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < limit; ++j) {
                const std::size_t kv_base = ((b * Tk + j) * Hkv + hk) * Dh;
                double acc = 0.0;
                for (std::size_t d = 0; d < Dh; ++d) acc += go[d] * vd[kv_base + d];
                dp[j] = acc;
                dot += acc * p[j];
                if (gv)
                  for (std::size_t d = 0; d < Dh; ++d) gv[kv_base + d] += p[j] * go[d];
              }
              for (std::size_t j = 0; j < limit; ++j) {
                const double ds = p[j] * (dp[j] - dot) * scale;
                if (ds == 0.0) continue;
                const std::size_t kv_base = ((b * Tk + j) * Hkv + hk) * Dh;
                if (gq) {
                  double* gqi = gq + ((b * Tq + i) * H + h) * Dh;
                  for (std::size_t d = 0; d < Dh; ++d) gqi[d] += ds * kd[kv_base + d];
                }
                if (gk)
                  for (std::size_t d = 0; d < Dh; ++d) gk[kv_base + d] += ds * qi[d];
              }
            }
          }
      });
}

Tensor attend(const Tensor& x, const AttentionWeights& w, const AttentionDims& dims,
              KVCacheLayer* cache, const AttendOptions& options) {
  if (x.rank() != 3 || x.shape()[2] != dims.d_model) {
    fail(ErrorKind::kShapeMismatch, "attention input " + shape_str(x.shape()) +
                                        " for d_model " + std::to_string(dims.d_model));
  }
  check_projection(w.w_q, dims.d_model, dims.q_width(), "w_q");
  check_projection(w.w_k, dims.d_model, dims.kv_width(), "w_k");
  check_projection(w.w_v, dims.d_model, dims.kv_width(), "w_v");
  check_projection(w.w_o, dims.q_width(), dims.d_model, "w_o");
  if (options.use_rope && dims.head_dim % 2 != 0) {
    fail(ErrorKind::kShapeMismatch, "rope needs an even head_dim");
  }
  std::size_t prior = 0;
  if (cache) {
    if (x.shape()[0] != 1) {
      fail(ErrorKind::kCacheMismatch, "cached attention requires batch 1, got " +
                                          std::to_string(x.shape()[0]));
    }
    if (cache->n_kv_heads() != dims.n_kv_heads || cache->head_dim() != dims.head_dim) {
      fail(ErrorKind::kCacheMismatch, "KV cache layout does not match attention dims");
    }
    prior = cache->cached_len();
  }

  Tensor q = matmul(x, w.w_q);
  Tensor k = matmul(x, w.w_k);
  Tensor v = matmul(x, w.w_v);
  if (options.use_rope) {
    q = apply_rope(q, dims.n_heads, dims.head_dim, prior);
    k = apply_rope(k, dims.n_kv_heads, dims.head_dim, prior);
  }
  Tensor k_all = k;
  Tensor v_all = v;
  if (cache) {
    k_all = prepend_cached(cache->keys(), k);
    v_all = prepend_cached(cache->values(), v);
    cache->append(k.data(), v.data());
  }
  Tensor ctx = grouped_attention(q, k_all, v_all, dims, options.mask, options.probs_out);
  return matmul(ctx, w.w_o);
}

std::uint64_t kv_bytes(const JambaConfig& config, std::uint64_t context_len,
                       std::uint64_t bytes_per_value) {
  const auto schedule = resolve_schedule(config);
  const std::uint64_t attn_layers = schedule.count(MixerKind::kAttention);
  return 2 * attn_layers * config.n_kv_heads * config.head_dim * context_len * bytes_per_value;
}

}  // namespace jamba
