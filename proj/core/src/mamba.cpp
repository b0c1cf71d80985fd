#include "jamba/mamba.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "jamba/errors.hpp"
#include "jamba/ops.hpp"

namespace jamba {

MambaDims MambaDims::from(const JambaConfig& config) {
  return {config.d_model, config.d_inner(), config.mamba_d_state, config.mamba_conv_kernel,
          config.mamba_dt_rank};
}

MambaStateLayer::MambaStateLayer(const MambaDims& dims)
    : dims_(dims),
      ssm_(dims.d_inner * dims.d_state, 0.0),
      conv_window_((dims.conv_kernel - 1) * dims.d_inner, 0.0) {}

void MambaStateLayer::update(std::vector<double> ssm, std::vector<double> conv_window,
                             std::size_t tokens) {
  if (ssm.size() != ssm_.size() || conv_window.size() != conv_window_.size()) {
    fail(ErrorKind::kShapeMismatch, "Mamba state update with wrong sizes");
  }
  require_finite(ssm, "Mamba state");
  ssm_ = std::move(ssm);
  conv_window_ = std::move(conv_window);
  seen_ += tokens;
}

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
  if (!t.defined() || t.shape() != shape) {
    fail(ErrorKind::kShapeMismatch, std::string(name) + " must be " + shape_str(shape) + ", got " +
                                        (t.defined() ? shape_str(t.shape()) : "undefined"));
  }
}

double rms_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     std::span<const double> prefix) {
  if (x.rank() != 3) fail(ErrorKind::kShapeMismatch, "conv input must be [B, T, C]");
  const std::size_t B = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  if (w.rank() != 2 || w.shape()[0] != C) fail(ErrorKind::kShapeMismatch, "conv kernel " + shape_str(w.shape()));
  const std::size_t K = w.shape()[1];
  expect_shape(bias, {C}, "conv bias");
  if (!prefix.empty()) {
    if (B != 1) fail(ErrorKind::kCacheMismatch, "conv prefix requires batch 1");
    if (prefix.size() != (K - 1) * C) fail(ErrorKind::kShapeMismatch, "conv prefix size");
  }
  auto xd = x.data();
  auto wd = w.data();
  auto bd = bias.data();
  // Value of input row (t + k - (K-1)), falling back to the prefix or zero.
  auto input_at = [&](std::size_t b, std::ptrdiff_t t, std::size_t ch) -> double {
    if (t >= 0) return xd[(b * T + static_cast<std::size_t>(t)) * C + ch];
    if (prefix.empty()) return 0.0;
    const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(K - 1) + t;
    return prefix[static_cast<std::size_t>(row) * C + ch];
  };
  std::vector<double> out(B * T * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t ch = 0; ch < C; ++ch) {
        double acc = bd[ch];
        for (std::size_t k = 0; k < K; ++k) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(K - 1);
          acc += wd[ch * K + k] * input_at(b, src, ch);
        }
        out[(b * T + t) * C + ch] = acc;
      }
  std::vector<double> saved_prefix(prefix.begin(), prefix.end());
  const Tensor inputs[] = {x, w, bias};
  return record_op(
      "causal_conv1d", x.shape(), std::move(out), inputs,
      [x, w, B, T, C, K, saved_prefix = std::move(saved_prefix)](auto, std::span<const double> g,
                                                                   const GradSinks& s) {
        auto xd = x.data();
        auto wd = w.data();
        double* gx = s[0];
        double* gw = s[1];
        double* gb = s[2];
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t ch = 0; ch < C; ++ch) {
              const double go = g[(b * T + t) * C + ch];
              if (gb) gb[ch] += go;
              for (std::size_t k = 0; k < K; ++k) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(K - 1);
                if (src >= 0) {
                  const std::size_t idx = (b * T + static_cast<std::size_t>(src)) * C + ch;
                  if (gx) gx[idx] += go * wd[ch * K + k];
                  if (gw) gw[ch * K + k] += go * xd[idx];
                } else if (gw && !saved_prefix.empty()) {
                  const std::size_t row = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(K - 1) + src);
                  gw[ch * K + k] += go * saved_prefix[row * C + ch];
                }
              }
            }
      });
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip, std::span<const double> h0,
                      std::vector<double>* final_state) {
  if (u.rank() != 3) fail(ErrorKind::kShapeMismatch, "scan input must be [B, T, Din]");
  const std::size_t Bsz = u.shape()[0], T = u.shape()[1], Din = u.shape()[2];
  if (a_log.rank() != 2 || a_log.shape()[0] != Din) fail(ErrorKind::kShapeMismatch, "a_log " + shape_str(a_log.shape()));
  const std::size_t N = a_log.shape()[1];
  expect_shape(delta, u.shape(), "delta");
  expect_shape(b, {Bsz, T, N}, "B");
  expect_shape(c, {Bsz, T, N}, "C");
  expect_shape(d_skip, {Din}, "D");
  if (!h0.empty() && (Bsz != 1 || h0.size() != Din * N)) {
    fail(ErrorKind::kShapeMismatch, "initial scan state must be [Din, N] with batch 1");
  }

  std::vector<double> A(Din * N);
  for (std::size_t i = 0; i < A.size(); ++i) A[i] = -std::exp(a_log.data()[i]);

  auto ud = u.data();
  auto dd = delta.data();
  auto bd = b.data();
  auto cd = c.data();
  auto Dd = d_skip.data();
  const bool keep = grad_enabled() && (u.requires_grad() || delta.requires_grad() ||
                                       a_log.requires_grad() || b.requires_grad() ||
                                       c.requires_grad() || d_skip.requires_grad());
  // states[b][t] = h_t (t = 0..T-1); abars stored alongside for the reverse pass.
  std::vector<double> states(keep ? Bsz * T * Din * N : 0);
  std::vector<double> abars(keep ? Bsz * T * Din * N : 0);
  std::vector<double> y(Bsz * T * Din, 0.0);
  std::vector<double> h(Din * N);
  if (final_state) final_state->assign(Bsz * Din * N, 0.0);

  for (std::size_t bb = 0; bb < Bsz; ++bb) {
    if (h0.empty()) std::fill(h.begin(), h.end(), 0.0);
    else std::copy(h0.begin(), h0.end(), h.begin());
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t row = bb * T + t;
      const double* Bt = bd.data() + row * N;
      const double* Ct = cd.data() + row * N;
      for (std::size_t d = 0; d < Din; ++d) {
        const double dt = dd[row * Din + d];
        const double du = dt * ud[row * Din + d];
        double* hd = h.data() + d * N;
        const double* Ad = A.data() + d * N;
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const double abar = std::exp(dt * Ad[n]);
          hd[n] = abar * hd[n] + du * Bt[n];
          acc += hd[n] * Ct[n];
          if (keep) abars[(row * Din + d) * N + n] = abar;
        }
        y[row * Din + d] = acc + Dd[d] * ud[row * Din + d];
      }
      if (keep) std::copy(h.begin(), h.end(), states.begin() + static_cast<std::ptrdiff_t>(row * Din * N));
    }
    if (final_state) std::copy(h.begin(), h.end(), final_state->begin() + static_cast<std::ptrdiff_t>(bb * Din * N));
  }

  std::vector<double> h_init(h0.begin(), h0.end());
  const Tensor inputs[] = {u, delta, a_log, b, c, d_skip};
  return record_op(
      "selective_scan", u.shape(), std::move(y), inputs,
      [u, delta, b, c, d_skip, Bsz, T, Din, N, A = std::move(A), states = std::move(states),
       abars = std::move(abars), h_init = std::move(h_init)](auto, std::span<const double> g,
                                                             const GradSinks& s) {
        double* gu = s[0];
        double* gdelta = s[1];
        double* galog = s[2];
        double* gB = s[3];
        double* gC = s[4];
        double* gD = s[5];
        auto ud = u.data();
        auto dd = delta.data();
        auto bd = b.data();
        auto cd = c.data();
        auto Dd = d_skip.data();
        std::vector<double> dA(Din * N, 0.0);
        std::vector<double> carry(Din * N);
        for (std::size_t bb = 0; bb < Bsz; ++bb) {
          std::fill(carry.begin(), carry.end(), 0.0);
          for (std::size_t t = T; t-- > 0;) {
            const std::size_t row = bb * T + t;
            const double* Bt = bd.data() + row * N;
            const double* Ct = cd.data() + row * N;
            const double* h_t = states.data() + row * Din * N;
            const double* h_prev = nullptr;
            if (t > 0) h_prev = states.data() + (row - 1) * Din * N;
            else if (!h_init.empty()) h_prev = h_init.data();
            for (std::size_t d = 0; d < Din; ++d) {
              const double gy = g[row * Din + d];
              const double dt = dd[row * Din + d];
              const double uu = ud[row * Din + d];
              double ddt = 0.0, duu = 0.0;
              for (std::size_t n = 0; n < N; ++n) {
                const std::size_t i = d * N + n;
                const double dh = carry[i] + gy * Ct[n];
                if (gC) gC[row * N + n] += gy * h_t[i];
                const double abar = abars[(row * Din + d) * N + n];
                const double hp = h_prev ? h_prev[i] : 0.0;
                const double dabar = dh * hp * abar;
                ddt += dabar * A[i] + dh * uu * Bt[n];
                dA[i] += dabar * dt;
                duu += dh * dt * Bt[n];
                if (gB) gB[row * N + n] += dh * dt * uu;
                carry[i] = dh * abar;
              }
              if (gdelta) gdelta[row * Din + d] += ddt;
              if (gu) gu[row * Din + d] += duu + gy * Dd[d];
              if (gD) gD[d] += gy * uu;
            }
          }
        }
        if (galog)
          for (std::size_t i = 0; i < Din * N; ++i) galog[i] += dA[i] * A[i];
      });
}

ScanResult selective_scan_sequential(std::span<const double> abar, std::span<const double> bx,
                                     std::span<const double> c, std::span<const double> h0,
                                     std::size_t length, std::size_t d_inner, std::size_t d_state) {
  const std::size_t DN = d_inner * d_state;
  if (abar.size() != length * DN || bx.size() != length * DN || c.size() != length * d_state ||
      h0.size() != DN) {
    fail(ErrorKind::kShapeMismatch, "selective scan operand sizes");
  }
  ScanResult r;
  r.y.assign(length * d_inner, 0.0);
  r.h_final.assign(h0.begin(), h0.end());
  auto& h = r.h_final;
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t d = 0; d < d_inner; ++d) {
      double acc = 0.0;
      for (std::size_t n = 0; n < d_state; ++n) {
        const std::size_t i = d * d_state + n;
        h[i] = abar[t * DN + i] * h[i] + bx[t * DN + i];
        acc += h[i] * c[t * d_state + n];
      }
      r.y[t * d_inner + d] = acc;
    }
  }
  return r;
}

ScanResult selective_scan_chunked(std::span<const double> abar, std::span<const double> bx,
                                  std::span<const double> c, std::span<const double> h0,
                                  std::size_t length, std::size_t d_inner, std::size_t d_state,
                                  std::size_t chunk) {
  if (chunk == 0) fail(ErrorKind::kRangeViolation, "chunk must be at least 1");
  const std::size_t DN = d_inner * d_state;
  if (abar.size() != length * DN || bx.size() != length * DN || c.size() != length * d_state ||
      h0.size() != DN) {
    fail(ErrorKind::kShapeMismatch, "selective scan operand sizes");
  }
  const std::size_t n_chunks = (length + chunk - 1) / chunk;
  ScanResult r;
  r.y.assign(length * d_inner, 0.0);

  // Pass 1 (independent per chunk): local states from a zero start, and the
  // running product of Abar from the chunk start through each token.
  std::vector<double> local(length * DN);
  std::vector<double> prefix(length * DN);
  std::vector<double> segment(chunk);
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    const std::size_t start = ci * chunk;
    const std::size_t len = std::min(chunk, length - start);
    for (std::size_t i = 0; i < DN; ++i) {
      // segment[s] = prod_{r=s+1..t} Abar_r, extended one token at a time.
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t at = (start + t) * DN + i;
        for (std::size_t sidx = 0; sidx < t; ++sidx) segment[sidx] *= abar[at];
        segment[t] = 1.0;
        double h_local = 0.0;
        for (std::size_t sidx = 0; sidx <= t; ++sidx) h_local += segment[sidx] * bx[(start + sidx) * DN + i];
        local[at] = h_local;
        prefix[at] = t == 0 ? abar[at] : prefix[at - DN] * abar[at];
      }
    }
  }

  // Pass 2: carry chunk start states forward and fold them into outputs.
  std::vector<double> h_start(h0.begin(), h0.end());
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    const std::size_t start = ci * chunk;
    const std::size_t len = std::min(chunk, length - start);
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t tt = start + t;
      for (std::size_t d = 0; d < d_inner; ++d) {
        double acc = 0.0;
        for (std::size_t n = 0; n < d_state; ++n) {
          const std::size_t i = d * d_state + n;
          const double h = prefix[tt * DN + i] * h_start[i] + local[tt * DN + i];
          acc += h * c[tt * d_state + n];
        }
        r.y[tt * d_inner + d] = acc;
      }
    }
    const std::size_t last = start + len - 1;
    for (std::size_t i = 0; i < DN; ++i) h_start[i] = prefix[last * DN + i] * h_start[i] + local[last * DN + i];
  }
  r.h_final = std::move(h_start);
  return r;
}

Tensor mamba_forward(const Tensor& x, const MambaWeights& w, const MambaDims& dims,
                     MambaStateLayer* state, bool use_inner_norm, MambaActivationStats* stats) {
  if (x.rank() != 3 || x.shape()[2] != dims.d_model) {
    fail(ErrorKind::kShapeMismatch, "Mamba input " + shape_str(x.shape()) + " for d_model " +
                                        std::to_string(dims.d_model));
  }
  const std::size_t Din = dims.d_inner, N = dims.d_state, R = dims.dt_rank, K = dims.conv_kernel;
  expect_shape(w.w_in, {dims.d_model, 2 * Din}, "w_in");
  expect_shape(w.conv_w, {Din, K}, "conv_w");
  expect_shape(w.w_x_to_dbc, {Din, dims.dbc_width()}, "w_x_to_dbc");
  expect_shape(w.w_dt, {R, Din}, "w_dt");
  expect_shape(w.dt_bias, {Din}, "dt_bias");
  expect_shape(w.a_log, {Din, N}, "a_log");
  expect_shape(w.d_skip, {Din}, "D");
  expect_shape(w.w_out, {Din, dims.d_model}, "w_out");
  if (use_inner_norm) {
    expect_shape(w.norm_dt, {R}, "norm_dt");
    expect_shape(w.norm_b, {N}, "norm_b");
    expect_shape(w.norm_c, {N}, "norm_c");
  }
  const std::size_t T = x.shape()[1];
  if (state) {
    if (x.shape()[0] != 1) fail(ErrorKind::kCacheMismatch, "stateful Mamba requires batch 1");
    const auto& sd = state->dims();
    if (sd.d_inner != Din || sd.d_state != N || sd.conv_kernel != K) {
      fail(ErrorKind::kCacheMismatch, "Mamba state layout does not match layer dims");
    }
  }

  Tensor xz = matmul(x, w.w_in);
  Tensor xs = slice_last(xz, 0, Din);
  Tensor z = slice_last(xz, Din, 2 * Din);
  Tensor conv = causal_conv1d(xs, w.conv_w, w.conv_b,
                              state ? state->conv_window() : std::span<const double>{});
  Tensor u = silu(conv);
  Tensor dbc = matmul(u, w.w_x_to_dbc);
  Tensor dt_raw = slice_last(dbc, 0, R);
  Tensor b = slice_last(dbc, R, R + N);
  Tensor c = slice_last(dbc, R + N, R + 2 * N);
  if (stats) {
    stats->dt_rms_raw = rms_of(dt_raw.data());
    stats->b_rms_raw = rms_of(b.data());
    stats->c_rms_raw = rms_of(c.data());
  }
  if (use_inner_norm) {
    dt_raw = rmsnorm(dt_raw, w.norm_dt);
    b = rmsnorm(b, w.norm_b);
    c = rmsnorm(c, w.norm_c);
  }
  if (stats) {
    stats->dt_rms = rms_of(dt_raw.data());
    stats->b_rms = rms_of(b.data());
    stats->c_rms = rms_of(c.data());
  }
  Tensor delta = softplus(add(matmul(dt_raw, w.w_dt), w.dt_bias));

  std::vector<double> final_state;
  Tensor y = selective_scan(u, delta, w.a_log, b, c, w.d_skip,
                            state ? state->ssm() : std::span<const double>{}, &final_state);
  if (stats) {
    stats->max_abs_state = 0.0;
    for (double v : final_state) stats->max_abs_state = std::max(stats->max_abs_state, std::abs(v));
  }
  Tensor out = matmul(mul(y, silu(z)), w.w_out);

  if (state) {
    // New window: the last K-1 pre-conv rows of (old window ++ xs).
    std::vector<double> joined(state->conv_window().begin(), state->conv_window().end());
    joined.insert(joined.end(), xs.data().begin(), xs.data().end());
    const std::size_t keep = (K - 1) * Din;
    std::vector<double> window(joined.end() - static_cast<std::ptrdiff_t>(keep), joined.end());
    state->update(std::move(final_state), std::move(window), T);
  }
  return out;
}

}  // namespace jamba
