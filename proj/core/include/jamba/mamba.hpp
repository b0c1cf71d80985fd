#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "jamba/config.hpp"
#include "jamba/tensor.hpp"

namespace jamba {

struct MambaDims {
  std::size_t d_model = 0;
  std::size_t d_inner = 0;
  std::size_t d_state = 0;      // N
  std::size_t conv_kernel = 0;
  std::size_t dt_rank = 0;

  static MambaDims from(const JambaConfig& config);
  std::size_t dbc_width() const { return dt_rank + 2 * d_state; }
};

// Selective state-space mixer parameters. A = -exp(a_log) is negative by
// construction. The inner-norm gains are only present when the layer
// normalizes its step/B/C streams.
struct MambaWeights {
  Tensor w_in;        // [d_model, 2*d_inner]: x half then gate half
  Tensor conv_w;      // [d_inner, conv_kernel]; last tap multiplies the current token
  Tensor conv_b;      // [d_inner]
  Tensor w_x_to_dbc;  // [d_inner, dt_rank + 2N]
  Tensor w_dt;        // [dt_rank, d_inner]
  Tensor dt_bias;     // [d_inner]
  Tensor a_log;       // [d_inner, N]
  Tensor d_skip;      // [d_inner]
  Tensor w_out;       // [d_inner, d_model]
  Tensor norm_dt;     // [dt_rank]
  Tensor norm_b;      // [N]
  Tensor norm_c;      // [N]
};

// Recurrent state of one Mamba layer for one sequence.
class MambaStateLayer {
 public:
  MambaStateLayer() = default;
  explicit MambaStateLayer(const MambaDims& dims);

  std::span<const double> ssm() const { return ssm_; }               // [d_inner, N]
  std::span<const double> conv_window() const { return conv_window_; }  // [K-1, d_inner]
  std::size_t seen() const { return seen_; }
  const MambaDims& dims() const { return dims_; }

  void update(std::vector<double> ssm, std::vector<double> conv_window, std::size_t tokens);

 private:
  MambaDims dims_;
  std::vector<double> ssm_;
  std::vector<double> conv_window_;
  std::size_t seen_ = 0;
};

// Root-mean-square magnitudes of the step/B/C projection streams, before and
// after the inner normalization, plus the largest |h| seen.
struct MambaActivationStats {
  double dt_rms_raw = 0;
  double b_rms_raw = 0;
  double c_rms_raw = 0;
  double dt_rms = 0;
  double b_rms = 0;
  double c_rms = 0;
  double max_abs_state = 0;
};

// Full mixer: in-projection, causal depthwise conv, SiLU, input-dependent
// step/B/C, optional inner RMSNorm, selective scan, SiLU gate, out-projection.
// x: [batch, seq, d_model]. With a state (batch must be 1) the scan and conv
// resume from it and the state is advanced.
Tensor mamba_forward(const Tensor& x, const MambaWeights& weights, const MambaDims& dims,
                     MambaStateLayer* state, bool use_inner_norm,
                     MambaActivationStats* stats = nullptr);

// Depthwise causal convolution. x: [B, T, C]; w: [C, K]; bias: [C].
// `prefix` holds the K-1 inputs preceding x ([K-1, C], batch 1 only); empty
// means zero padding.
Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     std::span<const double> prefix = {});

// Differentiable sequential scan with the skip term:
//   Abar = exp(delta * A), A = -exp(a_log)
//   h_t  = Abar_t * h_{t-1} + (delta_t * u_t) outer B_t
//   y_t  = h_t C_t + D * u_t
// u, delta: [B, T, Din]; b, c: [B, T, N]; a_log: [Din, N]; d_skip: [Din].
// `h0` is the initial state for batch 1 ([Din, N]) or empty for zeros.
// `final_state` receives h_T for every batch row ([B, Din, N]).
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip, std::span<const double> h0 = {},
                      std::vector<double>* final_state = nullptr);

struct ScanResult {
  std::vector<double> y;        // [L, Din]
  std::vector<double> h_final;  // [Din, N]
};

// Reference recurrence on discretized operators for a single sequence.
// abar, bx: [L, Din, N]; c: [L, N]; h0: [Din, N].  y_t = h_t C_t.
ScanResult selective_scan_sequential(std::span<const double> abar, std::span<const double> bx,
                                     std::span<const double> c, std::span<const double> h0,
                                     std::size_t length, std::size_t d_inner, std::size_t d_state);

// Same result computed chunk by chunk: within each chunk, outputs come from
// products of Abar over token segments applied to a zero start state; the
// chunk start states are then propagated across chunks with the chunk's
// total product and folded back into the outputs.
ScanResult selective_scan_chunked(std::span<const double> abar, std::span<const double> bx,
                                  std::span<const double> c, std::span<const double> h0,
                                  std::size_t length, std::size_t d_inner, std::size_t d_state,
                                  std::size_t chunk);

}  // namespace jamba
