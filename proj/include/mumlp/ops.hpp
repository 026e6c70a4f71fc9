#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mumlp {

namespace kernels {

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x k] += A[m x n] * B[k x n]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * n;
        T* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T* brow = b + p * n;
            T acc{0};
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernels

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": " + to_string(a) + " vs " + to_string(b));
    }
}

}  // namespace detail

/// Elementwise sum of two same-shaped tensors. Never broadcasts.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "add", [](Node<T>& self) {
        for (auto& parent : self.parents) {
            if (!parent->requires_grad) continue;
            auto& g = parent->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul", [](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        // Copy values first: a and b may be the same node.
        const std::vector<T> av = pa->data;
        const std::vector<T> bv = pb->data;
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T total{0};
    for (T v : x.data()) total += v;
    return detail::make_result<T>({1}, {total}, {&x}, "sum", [](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw Error(ErrorKind::ShapeMismatch, "reshape " + to_string(x.shape()) + " -> " + to_string(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return detail::make_result<T>(std::move(shape), std::move(out), {&x}, "reshape", [](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

/// Plain 2-D product c = a * b.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw Error(ErrorKind::ShapeMismatch, "matmul expects 2-D operands, got " + to_string(a.shape()) + " and " +
                                                  to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw Error(ErrorKind::ShapeMismatch, "matmul inner extents differ: " + to_string(a.shape()) + " * " +
                                                  to_string(b.shape()));
    }
    std::vector<T> out(m * n, T{0});
    kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
    return detail::make_result<T>({m, n}, std::move(out), {&a, &b}, "matmul", [m, k, n](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) kernels::gemm_nt(m, n, k, self.grad.data(), pb->data.data(), pa->ensure_grad().data());
        if (pb->requires_grad) kernels::gemm_tn(m, k, n, pa->data.data(), self.grad.data(), pb->ensure_grad().data());
    });
}

/// Affine map along the last axis: x[..., in] * weight[in, out] + bias[out].
/// `bias` may be an undefined tensor.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (weight.rank() != 2) throw Error(ErrorKind::ShapeMismatch, "linear weight must be 2-D");
    const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
    if (x.shape().back() != in) {
        throw Error(ErrorKind::ShapeMismatch, "linear input " + to_string(x.shape()) + " vs weight " +
                                                  to_string(weight.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
        throw Error(ErrorKind::ShapeMismatch, "linear bias " + to_string(bias.shape()) + " vs out " +
                                                  std::to_string(out_dim));
    }
    const std::size_t rows = x.size() / in;
    std::vector<T> out(rows * out_dim, T{0});
    if (has_bias) {
        auto bd = bias.data();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bd.begin(), bd.end(), out.begin() + r * out_dim);
    }
    kernels::gemm_nn(rows, in, out_dim, x.data().data(), weight.data().data(), out.data());
    Shape shape = x.shape();
    shape.back() = out_dim;
    auto backward_fn = [rows, in, out_dim, has_bias](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        if (px->requires_grad) kernels::gemm_nt(rows, out_dim, in, self.grad.data(), pw->data.data(), px->ensure_grad().data());
        if (pw->requires_grad) kernels::gemm_tn(rows, in, out_dim, px->data.data(), self.grad.data(), pw->ensure_grad().data());
        if (has_bias && self.parents[2]->requires_grad) {
            auto& gb = self.parents[2]->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* grow = self.grad.data() + r * out_dim;
                for (std::size_t j = 0; j < out_dim; ++j) gb[j] += grow[j];
            }
        }
    };
    if (has_bias) return detail::make_result<T>(std::move(shape), std::move(out), {&x, &weight, &bias}, "linear", backward_fn);
    return detail::make_result<T>(std::move(shape), std::move(out), {&x, &weight}, "linear", backward_fn);
}

/// Swaps the last two axes: [..., m, n] -> [..., n, m].
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    if (x.rank() < 2) throw Error(ErrorKind::ShapeMismatch, "transpose needs rank >= 2");
    const std::size_t m = x.shape()[x.rank() - 2], n = x.shape().back();
    const std::size_t batch = x.size() / (m * n);
    std::vector<T> out(x.size());
    auto xd = x.data();
    for (std::size_t b = 0; b < batch; ++b) {
        const T* src = xd.data() + b * m * n;
        T* dst = out.data() + b * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 2], shape.back());
    return detail::make_result<T>(std::move(shape), std::move(out), {&x}, "transpose", [batch, m, n](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b) {
            const T* src = self.grad.data() + b * m * n;
            T* dst = g.data() + b * m * n;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += src[j * m + i];
        }
    });
}

/// Mean over one axis, which is removed from the shape (a rank-1 input
/// reduces to shape [1]).
template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) throw Error(ErrorKind::ShapeMismatch, "mean axis out of range");
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t mid = s[axis];
    std::vector<T> out(outer * inner, T{0});
    auto xd = x.data();
    const T scale = T{1} / static_cast<T>(mid);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t m = 0; m < mid; ++m)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * mid + m) * inner + i];
    for (auto& v : out) v *= scale;
    Shape shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) shape.push_back(s[i]);
    if (shape.empty()) shape.push_back(1);
    return detail::make_result<T>(std::move(shape), std::move(out), {&x}, "mean", [outer, mid, inner, scale](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t m = 0; m < mid; ++m)
                for (std::size_t i = 0; i < inner; ++i) g[(o * mid + m) * inner + i] += self.grad[o * inner + i] * scale;
    });
}

/// Normalizes each last-axis slice with the biased variance, then applies
/// gamma and beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
    const std::size_t d = x.shape().back();
    if (gamma.size() != d || beta.size() != d) {
        throw Error(ErrorKind::ShapeMismatch, "layer_norm over " + std::to_string(d) + " with gamma " +
                                                  to_string(gamma.shape()) + ", beta " + to_string(beta.shape()));
    }
    if (!(eps > 0)) throw Error(ErrorKind::ConfigError, "layer_norm eps must be positive");
    const std::size_t rows = x.size() / d;
    std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xd.data() + r * d;
        T mean{0};
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var{0};
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(d);
        const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
        rstd[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gd[j] + bd[j];
        }
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x, &gamma, &beta}, "layer_norm",
        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
            auto& px = self.parents[0];
            auto& pg = self.parents[1];
            auto& pb = self.parents[2];
            if (pg->requires_grad) {
                auto& gg = pg->ensure_grad();
                for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += self.grad[i] * xhat[i];
            }
            if (pb->requires_grad) {
                auto& gb = pb->ensure_grad();
                for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += self.grad[i];
            }
            if (!px->requires_grad) return;
            auto& gx = px->ensure_grad();
            const auto& gamma_v = pg->data;
            std::vector<T> dxhat(d);
            for (std::size_t r = 0; r < rows; ++r) {
                T mean_d{0}, mean_dx{0};
                for (std::size_t j = 0; j < d; ++j) {
                    dxhat[j] = self.grad[r * d + j] * gamma_v[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xhat[r * d + j];
                }
                mean_d /= static_cast<T>(d);
                mean_dx /= static_cast<T>(d);
                for (std::size_t j = 0; j < d; ++j)
                    gx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
            }
        });
}

/// GELU in the exact form x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    std::vector<T> out(x.size());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * T{0.5} * (T{1} + std::erf(xd[i] * inv_sqrt2));
    return detail::make_result<T>(x.shape(), std::move(out), {&x}, "gelu", [](Node<T>& self) {
        constexpr T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
        auto& px = self.parents[0];
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = px->data[i];
            const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

/// Inverted dropout: survivors are scaled by 1/(1-p) in training mode,
/// inference is the identity.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, RngStream& rng) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw Error(ErrorKind::InvalidProbability, "dropout probability " + std::to_string(p) + " not in [0, 1)");
    }
    if (!training || p == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(x.size());
    for (auto& m : mask) m = rng.uniform() < p ? T{0} : keep_scale;
    std::vector<T> out(x.size());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
    return detail::make_result<T>(x.shape(), std::move(out), {&x}, "dropout", [mask = std::move(mask)](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

/// Mean negative log-likelihood of `labels` under softmax(logits).
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2) throw Error(ErrorKind::ShapeMismatch, "logits must be [batch x classes]");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) {
        throw Error(ErrorKind::ShapeMismatch, "got " + std::to_string(labels.size()) + " labels for batch of " +
                                                  std::to_string(batch));
    }
    std::vector<std::size_t> label_copy(labels.begin(), labels.end());
    for (auto l : label_copy) {
        if (l >= classes) {
            throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(l) + " outside [0, " +
                                                        std::to_string(classes) + ")");
        }
    }
    std::vector<T> probs(logits.size());
    auto ld = logits.data();
    T loss{0};
    for (std::size_t b = 0; b < batch; ++b) {
        const T* row = ld.data() + b * classes;
        const T peak = *std::max_element(row, row + classes);
        T denom{0};
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = std::exp(row[c] - peak);
            denom += probs[b * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= denom;
        loss += std::log(denom) - (row[label_copy[b]] - peak);
    }
    loss /= static_cast<T>(batch);
    return detail::make_result<T>(
        {1}, {loss}, {&logits}, "softmax_cross_entropy",
        [batch, classes, probs = std::move(probs), label_copy = std::move(label_copy)](Node<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            const T scale = self.grad[0] / static_cast<T>(batch);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t c = 0; c < classes; ++c)
                    g[b * classes + c] += scale * (probs[b * classes + c] - (c == label_copy[b] ? T{1} : T{0}));
        });
}

}  // namespace mumlp
