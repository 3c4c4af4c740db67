#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_set>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

inline void check_2d(const Tensor& a, const char* op) {
    if (a.ndim() != 2)
        throw ShapeError(std::string(op) + ": expects a 2-d tensor, got " +
                         shape_str(a.shape()));
}

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    auto ai = a.impl(), bi = b.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai, bi},
        [ai, bi](detail::TensorImpl& self) {
            const auto& g = self.grad;
            if (ai->requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
            if (bi->requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i];
        },
        "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
    auto ai = a.impl(), bi = b.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai, bi},
        [ai, bi](detail::TensorImpl& self) {
            const auto& g = self.grad;
            if (ai->requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
            if (bi->requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) bi->grad[i] -= g[i];
        },
        "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    auto ai = a.impl(), bi = b.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai, bi},
        [ai, bi](detail::TensorImpl& self) {
            const auto& g = self.grad;
            if (ai->requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] * bi->values[i];
            if (bi->requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i] * ai->values[i];
        },
        "mul");
}

// ---------------------------------------------------------------------------
// scalar ops
// ---------------------------------------------------------------------------

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + s;
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai](detail::TensorImpl& self) {
            if (ai->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
        },
        "add_scalar");
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * s;
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai, s](detail::TensorImpl& self) {
            if (ai->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    ai->grad[i] += s * self.grad[i];
        },
        "mul_scalar");
}

// s - a, elementwise.
inline Tensor sub_from_scalar(double s, const Tensor& a) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s - pa[i];
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai](detail::TensorImpl& self) {
            if (ai->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] -= self.grad[i];
        },
        "sub_from_scalar");
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const std::size_t M = a.dim(0), K = a.dim(1), P = b.dim(1);
    std::vector<double> out(M * P, 0.0);
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < M; ++i) {
        double* po = out.data() + i * P;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = pa[i * K + k];
            const double* pbk = pb + k * P;
            for (std::size_t j = 0; j < P; ++j) po[j] += aik * pbk[j];
        }
    }
    auto ai = a.impl(), bi = b.impl();
    return Tensor::make_result(
        Shape{M, P}, std::move(out), {ai, bi},
        [ai, bi, M, K, P](detail::TensorImpl& self) {
            const double* g = self.grad.data();
            if (ai->requires_grad) {
                // dA = dC . B^T
                double* ga = ai->grad.data();
                const double* vb = bi->values.data();
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        const double* gr = g + i * P;
                        const double* br = vb + k * P;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < P; ++j) acc += gr[j] * br[j];
                        ga[i * K + k] += acc;
                    }
            }
            if (bi->requires_grad) {
                // dB = A^T . dC
                double* gb = bi->grad.data();
                const double* va = ai->values.data();
                for (std::size_t i = 0; i < M; ++i) {
                    const double* gr = g + i * P;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double aik = va[i * K + k];
                        double* gbk = gb + k * P;
                        for (std::size_t j = 0; j < P; ++j) gbk[j] += aik * gr[j];
                    }
                }
            }
        },
        "matmul");
}

inline Tensor transpose(const Tensor& a) {
    detail::check_2d(a, "transpose");
    const std::size_t R = a.dim(0), C = a.dim(1);
    std::vector<double> out(R * C);
    const double* pa = a.data();
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out[j * R + i] = pa[i * C + j];
    auto ai = a.impl();
    return Tensor::make_result(
        Shape{C, R}, std::move(out), {ai},
        [ai, R, C](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            const double* g = self.grad.data();
            double* ga = ai->grad.data();
            for (std::size_t j = 0; j < C; ++j)
                for (std::size_t i = 0; i < R; ++i) ga[i * C + j] += g[j * R + i];
        },
        "transpose");
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "concat_cols");
    detail::check_2d(b, "concat_cols");
    if (a.dim(0) != b.dim(0))
        throw ShapeError("concat_cols: row counts disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
    std::vector<double> out(N * (Ca + Cb));
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < N; ++i) {
        std::copy(pa + i * Ca, pa + (i + 1) * Ca, out.begin() + i * (Ca + Cb));
        std::copy(pb + i * Cb, pb + (i + 1) * Cb, out.begin() + i * (Ca + Cb) + Ca);
    }
    auto ai = a.impl(), bi = b.impl();
    return Tensor::make_result(
        Shape{N, Ca + Cb}, std::move(out), {ai, bi},
        [ai, bi, N, Ca, Cb](detail::TensorImpl& self) {
            const double* g = self.grad.data();
            for (std::size_t i = 0; i < N; ++i) {
                const double* gr = g + i * (Ca + Cb);
                if (ai->requires_grad)
                    for (std::size_t j = 0; j < Ca; ++j) ai->grad[i * Ca + j] += gr[j];
                if (bi->requires_grad)
                    for (std::size_t j = 0; j < Cb; ++j) bi->grad[i * Cb + j] += gr[Ca + j];
            }
        },
        "concat_cols");
}

// Rows [r0, r1) of a 2-d tensor.
inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    detail::check_2d(a, "slice_rows");
    if (r0 > r1 || r1 > a.dim(0))
        throw ParamError("slice_rows: range [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") out of bounds for " + shape_str(a.shape()));
    const std::size_t C = a.dim(1), R = r1 - r0;
    std::vector<double> out(a.data() + r0 * C, a.data() + r1 * C);
    auto ai = a.impl();
    return Tensor::make_result(
        Shape{R, C}, std::move(out), {ai},
        [ai, r0, R, C](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            const double* g = self.grad.data();
            for (std::size_t i = 0; i < R * C; ++i) ai->grad[r0 * C + i] += g[i];
        },
        "slice_rows");
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    std::vector<double> out(a.values());
    auto ai = a.impl();
    return Tensor::make_result(
        std::move(shape), std::move(out), {ai},
        [ai](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
        },
        "reshape");
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto ai = a.impl();
    return Tensor::make_result(
        Shape{1}, {s}, {ai},
        [ai](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            const double g = self.grad[0];
            for (double& gv : ai->grad) gv += g;
        },
        "sum");
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.numel());
    auto ai = a.impl();
    return Tensor::make_result(
        Shape{1}, {s * inv}, {ai},
        [ai, inv](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            const double g = self.grad[0] * inv;
            for (double& gv : ai->grad) gv += g;
        },
        "mean");
}

inline Tensor frobenius_norm_sq(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    auto ai = a.impl();
    return Tensor::make_result(
        Shape{1}, {s}, {ai},
        [ai](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            const double g = self.grad[0];
            for (std::size_t i = 0; i < ai->grad.size(); ++i)
                ai->grad[i] += 2.0 * ai->values[i] * g;
        },
        "frobenius_norm_sq");
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

inline Tensor square(const Tensor& a) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pa[i];
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                ai->grad[i] += 2.0 * ai->values[i] * self.grad[i];
        },
        "square");
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = pa[i];
        // branch keeps exp() argument non-positive for stability
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
    }
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.values[i];
                ai->grad[i] += y * (1.0 - y) * self.grad[i];
            }
        },
        "sigmoid");
}

inline Tensor elu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = pa[i] >= 0.0 ? pa[i] : std::expm1(pa[i]);
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double x = ai->values[i];
                ai->grad[i] += (x >= 0.0 ? 1.0 : std::exp(x)) * self.grad[i];
            }
        },
        "elu");
}

inline Tensor leaky_relu(const Tensor& a, double slope) {
    if (!(slope > 0.0 && slope < 1.0))
        throw ParamError("leaky_relu: slope must lie in (0, 1), got " + std::to_string(slope));
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = pa[i] >= 0.0 ? pa[i] : slope * pa[i];
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai, slope](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                ai->grad[i] += (ai->values[i] >= 0.0 ? 1.0 : slope) * self.grad[i];
        },
        "leaky_relu");
}

inline Tensor log(const Tensor& a) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (pa[i] <= 0.0)
            throw DataError("log: non-positive input " + std::to_string(pa[i]));
        out[i] = std::log(pa[i]);
    }
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                ai->grad[i] += self.grad[i] / ai->values[i];
        },
        "log");
}

inline Tensor exp(const Tensor& a) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(pa[i]);
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                ai->grad[i] += self.values[i] * self.grad[i];
        },
        "exp");
}

// max(x - delta, 0) elementwise; subgradient 0 at the kink.
inline Tensor hinge_max0(const Tensor& a, double delta) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(pa[i] - delta, 0.0);
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai, delta](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (ai->values[i] - delta > 0.0) ai->grad[i] += self.grad[i];
        },
        "hinge_max0");
}

// ---------------------------------------------------------------------------
// bias broadcasts
// ---------------------------------------------------------------------------

// x[N x D] + b[D], b replicated across rows.
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
    detail::check_2d(x, "add_row_bias");
    const std::size_t N = x.dim(0), D = x.dim(1);
    if (b.numel() != D)
        throw ShapeError("add_row_bias: bias " + shape_str(b.shape()) +
                         " does not match row width of " + shape_str(x.shape()));
    std::vector<double> out(x.numel());
    const double* px = x.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < D; ++j) out[i * D + j] = px[i * D + j] + pb[j];
    auto xi = x.impl(), bi = b.impl();
    return Tensor::make_result(
        x.shape(), std::move(out), {xi, bi},
        [xi, bi, N, D](detail::TensorImpl& self) {
            const double* g = self.grad.data();
            if (xi->requires_grad)
                for (std::size_t i = 0; i < N * D; ++i) xi->grad[i] += g[i];
            if (bi->requires_grad)
                for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t j = 0; j < D; ++j) bi->grad[j] += g[i * D + j];
        },
        "add_row_bias");
}

// x[B x C x H x W] + b[C], b replicated across batch and spatial dims.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 4)
        throw ShapeError("add_channel_bias: expects a 4-d tensor, got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (b.numel() != C)
        throw ShapeError("add_channel_bias: bias " + shape_str(b.shape()) +
                         " does not match channel count of " + shape_str(x.shape()));
    std::vector<double> out(x.numel());
    const double* px = x.data();
    const double* pb = b.data();
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) out[base + i] = px[base + i] + pb[c];
        }
    auto xi = x.impl(), bi = b.impl();
    return Tensor::make_result(
        x.shape(), std::move(out), {xi, bi},
        [xi, bi, B, C, HW](detail::TensorImpl& self) {
            const double* g = self.grad.data();
            if (xi->requires_grad)
                for (std::size_t i = 0; i < B * C * HW; ++i) xi->grad[i] += g[i];
            if (bi->requires_grad)
                for (std::size_t n = 0; n < B; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t base = (n * C + c) * HW;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < HW; ++i) acc += g[base + i];
                        bi->grad[c] += acc;
                    }
        },
        "add_channel_bias");
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

// Row-wise softmax restricted to the support of mask (entries > 0.5 count as
// set). Unmasked entries come out exactly zero; each masked row sums to 1.
// The max-subtraction trick keeps exp() in range.
inline Tensor masked_softmax_rows(const Tensor& logits, const Tensor& mask) {
    detail::check_2d(logits, "masked_softmax_rows");
    detail::check_same_shape(logits, mask, "masked_softmax_rows");
    const std::size_t R = logits.dim(0), C = logits.dim(1);
    std::vector<double> out(R * C, 0.0);
    const double* pl = logits.data();
    const double* pm = mask.data();
    for (std::size_t i = 0; i < R; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < C; ++j)
            if (pm[i * C + j] > 0.5) mx = std::max(mx, pl[i * C + j]);
        if (!std::isfinite(mx))
            throw ContractError("masked_softmax_rows: row " + std::to_string(i) +
                                " has no unmasked entries");
        double denom = 0.0;
        for (std::size_t j = 0; j < C; ++j)
            if (pm[i * C + j] > 0.5) {
                out[i * C + j] = std::exp(pl[i * C + j] - mx);
                denom += out[i * C + j];
            }
        for (std::size_t j = 0; j < C; ++j) out[i * C + j] /= denom;
    }
    auto li = logits.impl(), mi = mask.impl();
    return Tensor::make_result(
        logits.shape(), std::move(out), {li, mi},
        [li, mi, R, C](detail::TensorImpl& self) {
            if (!li->requires_grad) return;
            const double* g = self.grad.data();
            const double* y = self.values.data();
            const double* pm = mi->values.data();
            for (std::size_t i = 0; i < R; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < C; ++j)
                    if (pm[i * C + j] > 0.5) dot += y[i * C + j] * g[i * C + j];
                for (std::size_t j = 0; j < C; ++j)
                    if (pm[i * C + j] > 0.5)
                        li->grad[i * C + j] += y[i * C + j] * (g[i * C + j] - dot);
            }
        },
        "masked_softmax_rows");
}

inline Tensor softmax_rows(const Tensor& logits) {
    return masked_softmax_rows(logits, Tensor::ones(logits.shape()));
}

// Plain-sum cross-entropy over the rows selected by mask:
//   loss = -sum_{i in mask} y_i . ln softmax(logits_i)
// computed through a stabilized log-sum-exp. Rows outside the mask contribute
// nothing to the value or the gradient.
inline Tensor masked_cross_entropy(const Tensor& logits, const Tensor& onehot,
                                   const std::vector<std::uint8_t>& mask) {
    detail::check_2d(logits, "masked_cross_entropy");
    detail::check_same_shape(logits, onehot, "masked_cross_entropy");
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    if (mask.size() != N)
        throw ShapeError("masked_cross_entropy: mask covers " + std::to_string(mask.size()) +
                         " rows, logits have " + std::to_string(N));
    std::size_t n_masked = 0;
    for (std::uint8_t m : mask) n_masked += m ? 1 : 0;
    if (n_masked == 0) throw ContractError("masked_cross_entropy: mask selects no rows");
    const double* pl = logits.data();
    const double* py = onehot.data();
    for (std::size_t i = 0; i < N; ++i) {
        if (!mask[i]) continue;
        double rowsum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double v = py[i * C + c];
            if (std::abs(v) > 1e-12 && std::abs(v - 1.0) > 1e-12)
                throw DataError("labels: row " + std::to_string(i) + " is not one-hot");
            rowsum += v;
        }
        if (std::abs(rowsum - 1.0) > 1e-9)
            throw DataError("labels: row " + std::to_string(i) + " is not one-hot");
    }
    double loss = 0.0;
    std::vector<double> lse(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        if (!mask[i]) continue;
        double mx = pl[i * C];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, pl[i * C + c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < C; ++c) denom += std::exp(pl[i * C + c] - mx);
        lse[i] = mx + std::log(denom);
        for (std::size_t c = 0; c < C; ++c)
            loss += py[i * C + c] * (lse[i] - pl[i * C + c]);
    }
    auto li = logits.impl(), yi = onehot.impl();
    return Tensor::make_result(
        Shape{1}, {loss}, {li, yi},
        [li, yi, mask, lse, N, C](detail::TensorImpl& self) {
            if (!li->requires_grad) return;
            const double g = self.grad[0];
            const double* pl = li->values.data();
            const double* py = yi->values.data();
            for (std::size_t i = 0; i < N; ++i) {
                if (!mask[i]) continue;
                for (std::size_t c = 0; c < C; ++c) {
                    const double p = std::exp(pl[i * C + c] - lse[i]);
                    li->grad[i * C + c] += g * (p - py[i * C + c]);
                }
            }
        },
        "masked_cross_entropy");
}

// ---------------------------------------------------------------------------
// row normalization
// ---------------------------------------------------------------------------

// Divides each row by its euclidean norm. An exactly-zero row is left as is
// (with a warning); its gradient passes through unchanged.
inline Tensor row_l2_normalize(const Tensor& a) {
    detail::check_2d(a, "row_l2_normalize");
    const std::size_t N = a.dim(0), D = a.dim(1);
    std::vector<double> out(a.numel());
    std::vector<double> norms(N, 0.0);
    const double* pa = a.data();
    for (std::size_t i = 0; i < N; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < D; ++j) s += pa[i * D + j] * pa[i * D + j];
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) {
            warn("row_l2_normalize: row " + std::to_string(i) +
                 " has zero norm, left unnormalized");
            for (std::size_t j = 0; j < D; ++j) out[i * D + j] = pa[i * D + j];
        } else {
            for (std::size_t j = 0; j < D; ++j) out[i * D + j] = pa[i * D + j] / norms[i];
        }
    }
    auto ai = a.impl();
    return Tensor::make_result(
        a.shape(), std::move(out), {ai},
        [ai, norms, N, D](detail::TensorImpl& self) {
            if (!ai->requires_grad) return;
            const double* g = self.grad.data();
            const double* x = ai->values.data();
            for (std::size_t i = 0; i < N; ++i) {
                const double r = norms[i];
                if (r == 0.0) {
                    for (std::size_t j = 0; j < D; ++j) ai->grad[i * D + j] += g[i * D + j];
                    continue;
                }
                double xg = 0.0;
                for (std::size_t j = 0; j < D; ++j) xg += x[i * D + j] * g[i * D + j];
                const double r3 = r * r * r;
                for (std::size_t j = 0; j < D; ++j)
                    ai->grad[i * D + j] += g[i * D + j] / r - x[i * D + j] * xg / r3;
            }
        },
        "row_l2_normalize");
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

// Valid (no padding) cross-correlation.
//   input   [B x C_in x H x W]
//   kernels [C_out x C_in x k x k]
//   output  [B x C_out x (H-k)/stride+1 x (W-k)/stride+1]
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride) {
    if (input.ndim() != 4)
        throw ShapeError("conv2d: input must be 4-d, got " + shape_str(input.shape()));
    if (kernels.ndim() != 4)
        throw ShapeError("conv2d: kernels must be 4-d, got " + shape_str(kernels.shape()));
    if (stride == 0) throw ParamError("conv2d: stride must be positive");
    const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Co = kernels.dim(0), k = kernels.dim(2);
    if (kernels.dim(1) != Ci)
        throw ShapeError("conv2d: kernel channels " + shape_str(kernels.shape()) +
                         " do not match input " + shape_str(input.shape()));
    if (kernels.dim(3) != k)
        throw ShapeError("conv2d: kernels must be square, got " + shape_str(kernels.shape()));
    if (k > H || k > W)
        throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) +
                         " larger than input " + shape_str(input.shape()));
    const std::size_t Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
    std::vector<double> out(B * Co * Ho * Wo, 0.0);
    const double* pi = input.data();
    const double* pk = kernels.data();
    auto in_at = [&](std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
        return pi[((b * Ci + c) * H + y) * W + x];
    };
    auto k_at = [&](std::size_t co, std::size_t ci, std::size_t u, std::size_t v) {
        return pk[((co * Ci + ci) * k + u) * k + v];
    };
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double acc = 0.0;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v)
                                acc += in_at(b, ci, oy * stride + u, ox * stride + v) *
                                       k_at(co, ci, u, v);
                    out[((b * Co + co) * Ho + oy) * Wo + ox] = acc;
                }
    auto ii = input.impl(), ki = kernels.impl();
    return Tensor::make_result(
        Shape{B, Co, Ho, Wo}, std::move(out), {ii, ki},
        [ii, ki, B, Ci, Co, H, W, k, Ho, Wo, stride](detail::TensorImpl& self) {
            const double* g = self.grad.data();
            const double* pi = ii->values.data();
            const double* pk = ki->values.data();
            const bool gi = ii->requires_grad, gk = ki->requires_grad;
            if (!gi && !gk) return;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t co = 0; co < Co; ++co)
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const double gv = g[((b * Co + co) * Ho + oy) * Wo + ox];
                            if (gv == 0.0) continue;
                            for (std::size_t ci = 0; ci < Ci; ++ci)
                                for (std::size_t u = 0; u < k; ++u)
                                    for (std::size_t v = 0; v < k; ++v) {
                                        const std::size_t iy = oy * stride + u;
                                        const std::size_t ix = ox * stride + v;
                                        const std::size_t in_idx =
                                            ((b * Ci + ci) * H + iy) * W + ix;
                                        const std::size_t k_idx =
                                            ((co * Ci + ci) * k + u) * k + v;
                                        if (gi) ii->grad[in_idx] += gv * pk[k_idx];
                                        if (gk) ki->grad[k_idx] += gv * pi[in_idx];
                                    }
                        }
        },
        "conv2d");
}

// Adjoint of conv2d (scatter form), used by the decoder half of the conv
// autoencoder.
//   input   [B x C_in x H x W]
//   kernels [C_in x C_out x k x k]
//   output  [B x C_out x out_h x out_w]
// out_h/out_w must be sizes a forward conv2d with the same kernel and stride
// would reduce back to H x W; positions beyond (H-1)*stride+k stay zero
// (trailing output padding).
inline Tensor conv2d_transpose(const Tensor& input, const Tensor& kernels, std::size_t stride,
                               std::size_t out_h, std::size_t out_w) {
    if (input.ndim() != 4)
        throw ShapeError("conv2d_transpose: input must be 4-d, got " + shape_str(input.shape()));
    if (kernels.ndim() != 4)
        throw ShapeError("conv2d_transpose: kernels must be 4-d, got " +
                         shape_str(kernels.shape()));
    if (stride == 0) throw ParamError("conv2d_transpose: stride must be positive");
    const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Co = kernels.dim(1), k = kernels.dim(2);
    if (kernels.dim(0) != Ci)
        throw ShapeError("conv2d_transpose: kernel channels " + shape_str(kernels.shape()) +
                         " do not match input " + shape_str(input.shape()));
    if (out_h < k || out_w < k || (out_h - k) / stride + 1 != H || (out_w - k) / stride + 1 != W)
        throw ShapeError("conv2d_transpose: output " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " is not consistent with input " +
                         shape_str(input.shape()) + ", kernel size " + std::to_string(k) +
                         ", stride " + std::to_string(stride));
    std::vector<double> out(B * Co * out_h * out_w, 0.0);
    const double* pi = input.data();
    const double* pk = kernels.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t iy = 0; iy < H; ++iy)
                for (std::size_t ix = 0; ix < W; ++ix) {
                    const double v = pi[((b * Ci + ci) * H + iy) * W + ix];
                    for (std::size_t co = 0; co < Co; ++co)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t w = 0; w < k; ++w)
                                out[((b * Co + co) * out_h + iy * stride + u) * out_w +
                                    ix * stride + w] +=
                                    v * pk[((ci * Co + co) * k + u) * k + w];
                }
    auto ii = input.impl(), ki = kernels.impl();
    return Tensor::make_result(
        Shape{B, Co, out_h, out_w}, std::move(out), {ii, ki},
        [ii, ki, B, Ci, Co, H, W, k, out_h, out_w, stride](detail::TensorImpl& self) {
            const double* g = self.grad.data();
            const double* pi = ii->values.data();
            const double* pk = ki->values.data();
            const bool gi = ii->requires_grad, gk = ki->requires_grad;
            if (!gi && !gk) return;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t ci = 0; ci < Ci; ++ci)
                    for (std::size_t iy = 0; iy < H; ++iy)
                        for (std::size_t ix = 0; ix < W; ++ix) {
                            const std::size_t in_idx = ((b * Ci + ci) * H + iy) * W + ix;
                            for (std::size_t co = 0; co < Co; ++co)
                                for (std::size_t u = 0; u < k; ++u)
                                    for (std::size_t w = 0; w < k; ++w) {
                                        const std::size_t out_idx =
                                            ((b * Co + co) * out_h + iy * stride + u) * out_w +
                                            ix * stride + w;
                                        const std::size_t k_idx =
                                            ((ci * Co + co) * k + u) * k + w;
                                        if (gi) ii->grad[in_idx] += g[out_idx] * pk[k_idx];
                                        if (gk) ki->grad[k_idx] += g[out_idx] * pi[in_idx];
                                    }
                        }
        },
        "conv2d_transpose");
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Visits each recorded node exactly
// once in reverse topological order. Grad buffers of interior nodes are reset
// per call; leaf grads accumulate until zero_grad.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    auto root = loss.impl();
    if (!root->requires_grad) return;

    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    struct Frame {
        detail::TensorImpl* node;
        std::size_t next;
    };
    std::vector<Frame> stack;
    visited.insert(root.get());
    stack.push_back({root.get(), 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            detail::TensorImpl* p = f.node->parents[f.next++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    for (detail::TensorImpl* n : order) {
        n->ensure_grad();
        if (!n->leaf) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

inline void zero_grad(std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace mmgf
