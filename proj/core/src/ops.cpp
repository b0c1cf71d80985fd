#include "jamba/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "jamba/errors.hpp"

namespace jamba {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Number of times `b` repeats across `a` under trailing-dimension expansion.
std::size_t broadcast_repeats(const Tensor& a, const Tensor& b, std::string_view op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  for (std::size_t i = 0; ok && i < sb.size(); ++i) {
    ok = sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i];
  }
  if (!ok) {
    fail(ErrorKind::kShapeMismatch, std::string(op) + ": cannot combine " + shape_str(sa) +
                                        " with " + shape_str(sb));
  }
  return b.numel() == 0 ? 0 : a.numel() / b.numel();
}

std::size_t last_dim(const Tensor& t, std::string_view op) {
  if (t.rank() == 0) fail(ErrorKind::kShapeMismatch, std::string(op) + ": scalar input");
  return t.shape().back();
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_scalar(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

template <typename F>
Tensor unary(std::string_view name, const Tensor& a, F&& forward,
             BackwardFn backward_maker) {
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  const Tensor inputs[] = {a};
  return record_op(name, a.shape(), std::move(out), inputs, std::move(backward_maker));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t reps = broadcast_repeats(a, b, "add");
  const std::size_t nb = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] += bd[j];
  const Tensor inputs[] = {a, b};
  return record_op("add", a.shape(), std::move(out), inputs,
                   [reps, nb](auto, std::span<const double> g, const GradSinks& s) {
                     if (double* ga = s[0])
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     if (double* gb = s[1])
                       for (std::size_t r = 0; r < reps; ++r)
                         for (std::size_t j = 0; j < nb; ++j) gb[j] += g[r * nb + j];
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t reps = broadcast_repeats(a, b, "sub");
  const std::size_t nb = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] -= bd[j];
  const Tensor inputs[] = {a, b};
  return record_op("sub", a.shape(), std::move(out), inputs,
                   [reps, nb](auto, std::span<const double> g, const GradSinks& s) {
                     if (double* ga = s[0])
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     if (double* gb = s[1])
                       for (std::size_t r = 0; r < reps; ++r)
                         for (std::size_t j = 0; j < nb; ++j) gb[j] -= g[r * nb + j];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t reps = broadcast_repeats(a, b, "mul");
  const std::size_t nb = b.numel();
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] = ad[r * nb + j] * bd[j];
  const Tensor inputs[] = {a, b};
  return record_op("mul", a.shape(), std::move(out), inputs,
                   [a, b, reps, nb](auto, std::span<const double> g, const GradSinks& s) {
                     auto ad = a.data();
                     auto bd = b.data();
                     if (double* ga = s[0])
                       for (std::size_t r = 0; r < reps; ++r)
                         for (std::size_t j = 0; j < nb; ++j) ga[r * nb + j] += g[r * nb + j] * bd[j];
                     if (double* gb = s[1])
                       for (std::size_t r = 0; r < reps; ++r)
                         for (std::size_t j = 0; j < nb; ++j) gb[j] += g[r * nb + j] * ad[r * nb + j];
                   });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](auto, std::span<const double> g, const GradSinks& s) {
                 if (double* ga = s[0])
                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
               });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2) fail(ErrorKind::kShapeMismatch, "matmul: rhs must be 2-D, got " + shape_str(b.shape()));
  const std::size_t k = last_dim(a, "matmul");
  if (b.shape()[0] != k) {
    fail(ErrorKind::kShapeMismatch,
         "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t n = b.shape()[1];
  const std::size_t m = a.numel() / std::max<std::size_t>(k, 1);
  std::vector<double> out(m * n, 0.0);
  if (k > 0) {
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  }
  Shape shape = a.shape();
  shape.back() = n;
  const Tensor inputs[] = {a, b};
  return record_op("matmul", std::move(shape), std::move(out), inputs,
                   [a, b, m, k, n](auto, std::span<const double> g, const GradSinks& s) {
                     ConstMap G(g.data(), m, n);
                     if (double* ga = s[0])
                       MutMap(ga, m, k).noalias() += G * ConstMap(b.data().data(), k, n).transpose();
                     if (double* gb = s[1])
                       MutMap(gb, k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * G;
                   });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2) fail(ErrorKind::kShapeMismatch, "matmul_nt: rhs must be 2-D");
  const std::size_t k = last_dim(a, "matmul_nt");
  if (b.shape()[1] != k) {
    fail(ErrorKind::kShapeMismatch,
         "matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t n = b.shape()[0];
  const std::size_t m = a.numel() / std::max<std::size_t>(k, 1);
  std::vector<double> out(m * n, 0.0);
  if (k > 0) {
    MutMap(out.data(), m, n).noalias() =
        ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), n, k).transpose();
  }
  Shape shape = a.shape();
  shape.back() = n;
  const Tensor inputs[] = {a, b};
  return record_op("matmul_nt", std::move(shape), std::move(out), inputs,
                   [a, b, m, k, n](auto, std::span<const double> g, const GradSinks& s) {
                     ConstMap G(g.data(), m, n);
                     if (double* ga = s[0])
                       MutMap(ga, m, k).noalias() += G * ConstMap(b.data().data(), n, k);
                     if (double* gb = s[1])
                       MutMap(gb, n, k).noalias() += G.transpose() * ConstMap(a.data().data(), m, k);
                   });
}

Tensor softmax(const Tensor& a, int axis) {
  const int r = static_cast<int>(a.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) fail(ErrorKind::kShapeMismatch, "softmax: axis out of range");
  const auto& sh = a.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= sh[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < r; ++i) inner *= sh[static_cast<std::size_t>(i)];
  const std::size_t len = sh[static_cast<std::size_t>(ax)];
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      double mx = -INFINITY;
      for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, in[base + t * inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double e = std::exp(in[base + t * inner] - mx);
        out[base + t * inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= z;
    }
  }
  const Tensor inputs[] = {a};
  return record_op("softmax", sh, std::move(out), inputs,
                   [outer, inner, len](std::span<const double> y, std::span<const double> g,
                                       const GradSinks& s) {
                     double* ga = s[0];
                     if (!ga) return;
                     for (std::size_t o = 0; o < outer; ++o) {
                       for (std::size_t j = 0; j < inner; ++j) {
                         const std::size_t base = o * len * inner + j;
                         double dot = 0.0;
                         for (std::size_t t = 0; t < len; ++t) dot += g[base + t * inner] * y[base + t * inner];
                         for (std::size_t t = 0; t < len; ++t) {
                           const std::size_t idx = base + t * inner;
                           ga[idx] += y[idx] * (g[idx] - dot);
                         }
                       }
                     }
                   });
}

Tensor silu(const Tensor& a) {
  return unary("silu", a, [](double x) { return x * sigmoid_scalar(x); },
               [a](auto, std::span<const double> g, const GradSinks& s) {
                 double* ga = s[0];
                 if (!ga) return;
                 auto x = a.data();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double sg = sigmoid_scalar(x[i]);
                   ga[i] += g[i] * sg * (1.0 + x[i] * (1.0 - sg));
                 }
               });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, sigmoid_scalar,
               [](std::span<const double> y, std::span<const double> g, const GradSinks& s) {
                 if (double* ga = s[0])
                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
               });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](std::span<const double> y, std::span<const double> g, const GradSinks& s) {
                 if (double* ga = s[0])
                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
               });
}

Tensor softplus(const Tensor& a) {
  return unary("softplus", a, softplus_scalar,
               [a](auto, std::span<const double> g, const GradSinks& s) {
                 double* ga = s[0];
                 if (!ga) return;
                 auto x = a.data();
                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_scalar(x[i]);
               });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  if (eps < 0) fail(ErrorKind::kRangeViolation, "rmsnorm: eps must be nonnegative");
  const std::size_t d = last_dim(x, "rmsnorm");
  if (gain.rank() != 1 || gain.shape()[0] != d) {
    fail(ErrorKind::kShapeMismatch,
         "rmsnorm: gain " + shape_str(gain.shape()) + " for input " + shape_str(x.shape()));
  }
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> inv_rms(rows);
  auto xd = x.data();
  auto gd = gain.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xd[r * d + j] * xd[r * d + j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    inv_rms[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] * inv * gd[j];
  }
  const Tensor inputs[] = {x, gain};
  return record_op(
      "rmsnorm", x.shape(), std::move(out), inputs,
      [x, gain, rows, d, inv_rms = std::move(inv_rms)](auto, std::span<const double> g,
                                                       const GradSinks& s) {
        auto xd = x.data();
        auto gd = gain.data();
        double* gx = s[0];
        double* gg = s[1];
        for (std::size_t r = 0; r < rows; ++r) {
          const double inv = inv_rms[r];
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = xd[r * d + j] * inv;
            const double gy = g[r * d + j];
            if (gg) gg[j] += gy * xhat;
            dot += gy * gd[j] * xhat;
          }
          if (!gx) continue;
          const double m = dot / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = xd[r * d + j] * inv;
            gx[r * d + j] += inv * (g[r * d + j] * gd[j] - xhat * m);
          }
        }
      });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  const Tensor inputs[] = {a};
  const std::size_t n = a.numel();
  return record_op("sum", {}, {total}, inputs,
                   [n](auto, std::span<const double> g, const GradSinks& s) {
                     if (double* ga = s[0])
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                   });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(std::max<std::size_t>(a.numel(), 1));
  return scale(sum(a), 1.0 / n);
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t n = last_dim(a, "mean_rows");
  const std::size_t rows = n == 0 ? 0 : a.numel() / n;
  std::vector<double> out(n, 0.0);
  auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[j] += ad[r * n + j];
  const double inv = rows ? 1.0 / static_cast<double>(rows) : 0.0;
  for (double& v : out) v *= inv;
  const Tensor inputs[] = {a};
  return record_op("mean_rows", {n}, std::move(out), inputs,
                   [rows, n, inv](auto, std::span<const double> g, const GradSinks& s) {
                     if (double* ga = s[0])
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[j] * inv;
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    fail(ErrorKind::kShapeMismatch,
         "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const Tensor inputs[] = {a};
  return record_op("reshape", std::move(shape), std::move(out), inputs,
                   [](auto, std::span<const double> g, const GradSinks& s) {
                     if (double* ga = s[0])
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t d = last_dim(a, "slice_last");
  if (begin > end || end > d) {
    fail(ErrorKind::kShapeMismatch, "slice_last: [" + std::to_string(begin) + ", " +
                                        std::to_string(end) + ") of " + shape_str(a.shape()));
  }
  const std::size_t rows = d == 0 ? 0 : a.numel() / d;
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>(r * d + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(r * w));
  Shape shape = a.shape();
  shape.back() = w;
  const Tensor inputs[] = {a};
  return record_op("slice_last", std::move(shape), std::move(out), inputs,
                   [rows, d, w, begin](auto, std::span<const double> g, const GradSinks& s) {
                     if (double* ga = s[0])
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < w; ++j) ga[r * d + begin + j] += g[r * w + j];
                   });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, Shape leading) {
  if (table.rank() != 2) fail(ErrorKind::kShapeMismatch, "embedding: table must be 2-D");
  if (shape_numel(leading) != ids.size()) {
    fail(ErrorKind::kShapeMismatch, "embedding: " + std::to_string(ids.size()) +
                                        " ids for leading shape " + shape_str(leading));
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      fail(ErrorKind::kVocabOverflow, "token id " + std::to_string(ids[i]) +
                                          " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  leading.push_back(d);
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  const Tensor inputs[] = {table};
  return record_op("embedding", std::move(leading), std::move(out), inputs,
                   [saved = std::move(saved), d](auto, std::span<const double> g, const GradSinks& s) {
                     double* gt = s[0];
                     if (!gt) return;
                     for (std::size_t i = 0; i < saved.size(); ++i) {
                       double* row = gt + static_cast<std::size_t>(saved[i]) * d;
                       for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
                     }
                   });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> mask) {
  const std::size_t vocab = last_dim(logits, "cross_entropy");
  const std::size_t rows = vocab == 0 ? 0 : logits.numel() / vocab;
  if (targets.size() != rows || mask.size() != rows) {
    fail(ErrorKind::kShapeMismatch, "cross_entropy: " + std::to_string(rows) + " rows, " +
                                        std::to_string(targets.size()) + " targets, " +
                                        std::to_string(mask.size()) + " mask entries");
  }
  auto ld = logits.data();
  std::vector<double> probs(rows * vocab, 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      fail(ErrorKind::kVocabOverflow, "target id " + std::to_string(targets[r]) + " outside vocabulary");
    }
    const double* row = ld.data() + r * vocab;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[r * vocab + j] = std::exp(row[j] - mx);
      z += probs[r * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] /= z;
    total += -(row[static_cast<std::size_t>(targets[r])] - mx - std::log(z));
    ++count;
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  const Tensor inputs[] = {logits};
  return record_op(
      "cross_entropy", {}, {total * inv}, inputs,
      [probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk), rows, vocab, inv](
          auto, std::span<const double> g, const GradSinks& s) {
        double* gl = s[0];
        if (!gl) return;
        const double scale = g[0] * inv;
        for (std::size_t r = 0; r < rows; ++r) {
          if (!msk[r]) continue;
          for (std::size_t j = 0; j < vocab; ++j) gl[r * vocab + j] += scale * probs[r * vocab + j];
          gl[r * vocab + static_cast<std::size_t>(tgt[r])] -= scale;
        }
      });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t d = last_dim(x, "gather_rows");
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  std::vector<double> out(idx.size() * d);
  auto xd = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) fail(ErrorKind::kShapeMismatch, "gather_rows: index out of range");
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::size_t> saved(idx.begin(), idx.end());
  const Tensor inputs[] = {x};
  return record_op("gather_rows", {idx.size(), d}, std::move(out), inputs,
                   [saved = std::move(saved), d](auto, std::span<const double> g, const GradSinks& s) {
                     double* gx = s[0];
                     if (!gx) return;
                     for (std::size_t i = 0; i < saved.size(); ++i)
                       for (std::size_t j = 0; j < d; ++j) gx[saved[i] * d + j] += g[i * d + j];
                   });
}

Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> idx, std::size_t rows) {
  const std::size_t d = last_dim(src, "scatter_add_rows");
  if (src.numel() != idx.size() * d) {
    fail(ErrorKind::kShapeMismatch, "scatter_add_rows: index count does not match source rows");
  }
  std::vector<double> out(rows * d, 0.0);
  auto sd = src.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) fail(ErrorKind::kShapeMismatch, "scatter_add_rows: index out of range");
    for (std::size_t j = 0; j < d; ++j) out[idx[i] * d + j] += sd[i * d + j];
  }
  std::vector<std::size_t> saved(idx.begin(), idx.end());
  const Tensor inputs[] = {src};
  return record_op("scatter_add_rows", {rows, d}, std::move(out), inputs,
                   [saved = std::move(saved), d](auto, std::span<const double> g, const GradSinks& s) {
                     double* gs = s[0];
                     if (!gs) return;
                     for (std::size_t i = 0; i < saved.size(); ++i)
                       for (std::size_t j = 0; j < d; ++j) gs[i * d + j] += g[saved[i] * d + j];
                   });
}

Tensor gather_elements(const Tensor& x, std::span<const std::size_t> idx) {
  std::vector<double> out(idx.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xd.size()) fail(ErrorKind::kShapeMismatch, "gather_elements: index out of range");
    out[i] = xd[idx[i]];
  }
  std::vector<std::size_t> saved(idx.begin(), idx.end());
  const Tensor inputs[] = {x};
  return record_op("gather_elements", {idx.size()}, std::move(out), inputs,
                   [saved = std::move(saved)](auto, std::span<const double> g, const GradSinks& s) {
                     if (double* gx = s[0])
                       for (std::size_t i = 0; i < saved.size(); ++i) gx[saved[i]] += g[i];
                   });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const std::size_t d = last_dim(x, "scale_rows");
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  if (s.numel() != rows) {
    fail(ErrorKind::kShapeMismatch,
         "scale_rows: " + shape_str(x.shape()) + " by " + shape_str(s.shape()));
  }
  std::vector<double> out(x.numel());
  auto xd = x.data();
  auto sd = s.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] * sd[r];
  const Tensor inputs[] = {x, s};
  return record_op("scale_rows", x.shape(), std::move(out), inputs,
                   [x, s, rows, d](auto, std::span<const double> g, const GradSinks& sinks) {
                     auto xd = x.data();
                     auto sd = s.data();
                     double* gx = sinks[0];
                     double* gs = sinks[1];
                     for (std::size_t r = 0; r < rows; ++r) {
                       double acc = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         if (gx) gx[r * d + j] += g[r * d + j] * sd[r];
                         acc += g[r * d + j] * xd[r * d + j];
                       }
                       if (gs) gs[r] += acc;
                     }
                   });
}

}  // namespace jamba
