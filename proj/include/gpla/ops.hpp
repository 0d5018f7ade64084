#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "gpla/tensor.hpp"

// Differentiable op library. Forward values are f32; reductions (means,
// norms, softmax denominators) accumulate in f64 before rounding back.
namespace gpla::tc {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using StrideT = Eigen::OuterStride<>;
using MapMs = Eigen::Map<RowMat, 0, StrideT>;
using CMapMs = Eigen::Map<const RowMat, 0, StrideT>;

namespace detail {
inline int last_dim(const Shape& s) { return s.back(); }
inline std::size_t lead_count(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
    return n;
}
inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    for (std::size_t i = 0; i < small.size(); ++i)
        if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    return true;
}
}  // namespace detail

// out = a + b, where b's shape may be a trailing suffix of a's (bias,
// positional table) in which case b is tiled over the leading dims.
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!detail::is_suffix(b.shape(), a.shape()))
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t nb = b.size();
    std::vector<float> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % nb];
    return Tensor::make_result(
        a.shape(), std::move(out), {a, b},
        [na = a.size(), nb](const float* g, const std::vector<float*>& gin) {
            if (gin[0])
                for (std::size_t i = 0; i < na; ++i) gin[0][i] += g[i];
            if (gin[1])
                for (std::size_t i = 0; i < na; ++i) gin[1][i % nb] += g[i];
        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a.shape(), b.shape(), "sub");
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i];
                                   if (gin[1])
                                       for (std::size_t i = 0; i < n; ++i) gin[1][i] -= g[i];
                               });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a.shape(), b.shape(), "mul");
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i] * b.data()[i];
                                   if (gin[1])
                                       for (std::size_t i = 0; i < n; ++i) gin[1][i] += g[i] * a.data()[i];
                               });
}

inline Tensor mul_scalar(const Tensor& a, float c) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [c, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i] * c;
                               });
}

inline Tensor add_scalar(const Tensor& a, float c) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i];
                               });
}

// out = a * s with s a one-element tensor (learned temperature and friends).
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw DimensionError("scale_by: scale must be one element, got " + shape_str(s.shape()));
    const float sv = s.data()[0];
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * sv;
    return Tensor::make_result(a.shape(), std::move(out), {a, s},
                               [a, sv, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i] * sv;
                                   if (gin[1]) {
                                       double acc = 0.0;
                                       for (std::size_t i = 0; i < n; ++i)
                                           acc += static_cast<double>(g[i]) * a.data()[i];
                                       gin[1][0] += static_cast<float>(acc);
                                   }
                               });
}

inline Tensor exp_elem(const Tensor& a) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i] * std::exp(a.data()[i]);
                               });
}

inline Tensor relu(const Tensor& a) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0f ? a.data()[i] : 0.0f;
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i)
                                           if (a.data()[i] > 0.0f) gin[0][i] += g[i];
                               });
}

// Exact gelu, x * Phi(x) with the Gaussian CDF.
inline Tensor gelu(const Tensor& a) {
    constexpr float inv_sqrt2 = 0.7071067811865476f;
    constexpr float inv_sqrt2pi = 0.3989422804014327f;
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        float x = a.data()[i];
        out[i] = 0.5f * x * (1.0f + std::erf(x * inv_sqrt2));
    }
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (std::size_t i = 0; i < n; ++i) {
                                       float x = a.data()[i];
                                       float cdf = 0.5f * (1.0f + std::erf(x * inv_sqrt2));
                                       float pdf = inv_sqrt2pi * std::exp(-0.5f * x * x);
                                       gin[0][i] += g[i] * (cdf + x * pdf);
                                   }
                               });
}

// log(1 + e^x), numerically stable; d/dx = sigmoid(x).
inline Tensor softplus(const Tensor& a) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        float x = a.data()[i];
        out[i] = x > 20.0f ? x : (x < -20.0f ? std::exp(x) : std::log1p(std::exp(x)));
    }
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (std::size_t i = 0; i < n; ++i) {
                                       float x = a.data()[i];
                                       float sig = 1.0f / (1.0f + std::exp(-x));
                                       gin[0][i] += g[i] * sig;
                                   }
                               });
}

inline Tensor clamp(const Tensor& a, float lo, float hi) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a.data()[i]));
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a, lo, hi, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (std::size_t i = 0; i < n; ++i)
                                       if (a.data()[i] > lo && a.data()[i] < hi) gin[0][i] += g[i];
                               });
}

// Same storage reinterpreted; identity backward.
inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<float> out(a.values());
    return Tensor::make_result(std::move(shape), std::move(out), {a},
                               [n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i];
                               });
}

// a: [..., K] (leading dims flattened), w: [K, N] -> [..., N].
inline Tensor matmul(const Tensor& a, const Tensor& w) {
    if (a.rank() < 2 || w.rank() != 2 || a.shape().back() != w.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(w.shape()));
    const int rows = static_cast<int>(detail::lead_count(a.shape()));
    const int k = a.shape().back();
    const int cols = w.dim(1);
    std::vector<float> out(static_cast<std::size_t>(rows) * cols);
    {
        CMapM A(a.data(), rows, k), W(w.data(), k, cols);
        MapM O(out.data(), rows, cols);
        O.noalias() = A * W;
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(cols);
    return Tensor::make_result(std::move(out_shape), std::move(out), {a, w},
                               [a, w, rows, k, cols](const float* g, const std::vector<float*>& gin) {
                                   CMapM G(g, rows, cols);
                                   if (gin[0]) {
                                       MapM GA(gin[0], rows, k);
                                       CMapM W(w.data(), k, cols);
                                       GA.noalias() += G * W.transpose();
                                   }
                                   if (gin[1]) {
                                       MapM GW(gin[1], k, cols);
                                       CMapM A(a.data(), rows, k);
                                       GW.noalias() += A.transpose() * G;
                                   }
                               });
}

inline Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose2d: expected rank 2, got " + shape_str(a.shape()));
    const int r = a.dim(0), c = a.dim(1);
    std::vector<float> out(a.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = a.data()[static_cast<std::size_t>(i) * c + j];
    return Tensor::make_result({c, r}, std::move(out), {a},
                               [r, c](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (int j = 0; j < c; ++j)
                                       for (int i = 0; i < r; ++i)
                                           gin[0][static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
                               });
}

// Row-wise softmax over the last dimension.
inline Tensor softmax(const Tensor& a) {
    const int cols = detail::last_dim(a.shape());
    const std::size_t rows = detail::lead_count(a.shape());
    std::vector<float> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const float* x = a.data() + r * cols;
        float* y = out.data() + r * cols;
        float mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            denom += y[j];
        }
        const float inv = static_cast<float>(1.0 / denom);
        for (int j = 0; j < cols; ++j) y[j] *= inv;
    }
    Tensor result = Tensor::make_result(
        a.shape(), std::move(out), {a}, nullptr);
    // backward needs the forward output; capture the result's storage
    if (result.requires_grad()) {
        std::vector<float> snapshot = result.values();
        result.raw()->node->fn = [snap = std::move(snapshot), rows, cols](const float* g, const std::vector<float*>& gin) {
            if (!gin[0]) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const float* y = snap.data() + r * cols;
                const float* go = g + r * cols;
                double dot = 0.0;
                for (int j = 0; j < cols; ++j) dot += static_cast<double>(go[j]) * y[j];
                for (int j = 0; j < cols; ++j) gin[0][r * cols + j] += y[j] * (go[j] - static_cast<float>(dot));
            }
        };
    }
    return result;
}

inline Tensor log_softmax(const Tensor& a) {
    const int cols = detail::last_dim(a.shape());
    const std::size_t rows = detail::lead_count(a.shape());
    std::vector<float> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const float* x = a.data() + r * cols;
        float* y = out.data() + r * cols;
        float mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) denom += std::exp(static_cast<double>(x[j]) - mx);
        const float lse = mx + static_cast<float>(std::log(denom));
        for (int j = 0; j < cols; ++j) y[j] = x[j] - lse;
    }
    Tensor result = Tensor::make_result(a.shape(), std::move(out), {a}, nullptr);
    if (result.requires_grad()) {
        std::vector<float> snapshot = result.values();
        result.raw()->node->fn = [snap = std::move(snapshot), rows, cols](const float* g, const std::vector<float*>& gin) {
            if (!gin[0]) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const float* lp = snap.data() + r * cols;
                const float* go = g + r * cols;
                double gsum = 0.0;
                for (int j = 0; j < cols; ++j) gsum += go[j];
                for (int j = 0; j < cols; ++j)
                    gin[0][r * cols + j] += go[j] - static_cast<float>(gsum) * std::exp(lp[j]);
            }
        };
    }
    return result;
}

// Normalize over the last dim, then per-channel affine with gamma/beta [D].
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f) {
    const int d = detail::last_dim(a.shape());
    if (gamma.size() != static_cast<std::size_t>(d) || beta.size() != static_cast<std::size_t>(d))
        throw DimensionError("layer_norm: affine params must match last dim " + std::to_string(d));
    const std::size_t rows = detail::lead_count(a.shape());
    std::vector<float> out(a.size());
    auto normed = std::make_shared<std::vector<float>>(a.size());
    auto inv_std = std::make_shared<std::vector<float>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* x = a.data() + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double dx = x[j] - mean;
            var += dx * dx;
        }
        var /= d;
        float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_std)[r] = is;
        for (int j = 0; j < d; ++j) {
            float nv = (static_cast<float>(x[j] - mean)) * is;
            (*normed)[r * d + j] = nv;
            out[r * d + j] = nv * gamma.data()[j] + beta.data()[j];
        }
    }
    return Tensor::make_result(
        a.shape(), std::move(out), {a, gamma, beta},
        [gamma, normed, inv_std, rows, d](const float* g, const std::vector<float*>& gin) {
            for (std::size_t r = 0; r < rows; ++r) {
                const float* y = normed->data() + r * d;
                const float* go = g + r * d;
                if (gin[1] || gin[2])
                    for (int j = 0; j < d; ++j) {
                        if (gin[1]) gin[1][j] += go[j] * y[j];
                        if (gin[2]) gin[2][j] += go[j];
                    }
                if (gin[0]) {
                    double m1 = 0.0, m2 = 0.0;  // mean(gy), mean(gy*y) with gy = g*gamma
                    for (int j = 0; j < d; ++j) {
                        double gy = static_cast<double>(go[j]) * gamma.data()[j];
                        m1 += gy;
                        m2 += gy * y[j];
                    }
                    m1 /= d;
                    m2 /= d;
                    const float is = (*inv_std)[r];
                    for (int j = 0; j < d; ++j) {
                        double gy = static_cast<double>(go[j]) * gamma.data()[j];
                        gin[0][r * d + j] += static_cast<float>((gy - m1 - y[j] * m2) * is);
                    }
                }
            }
        });
}

// table: [V, D], ids laid out as lead_shape -> output [lead_shape..., D].
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, Shape lead_shape) {
    if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be [V,D]");
    if (ids.size() != numel(lead_shape))
        throw DimensionError("embedding_lookup: ids count mismatch with " + shape_str(lead_shape));
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v) throw ContractError("embedding_lookup: id " + std::to_string(id) + " out of vocab " + std::to_string(v));
    std::vector<float> out(ids.size() * static_cast<std::size_t>(d));
    for (std::size_t r = 0; r < ids.size(); ++r)
        std::memcpy(out.data() + r * d, table.data() + static_cast<std::size_t>(ids[r]) * d, sizeof(float) * d);
    Shape out_shape = lead_shape;
    out_shape.push_back(d);
    return Tensor::make_result(std::move(out_shape), std::move(out), {table},
                               [ids, d](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (std::size_t r = 0; r < ids.size(); ++r) {
                                       float* row = gin[0] + static_cast<std::size_t>(ids[r]) * d;
                                       const float* go = g + r * d;
                                       for (int j = 0; j < d; ++j) row[j] += go[j];
                                   }
                               });
}

// Multi-head scaled dot-product attention over [B, S, D] with per-sample
// valid lengths (keys at positions >= len are masked out) and an optional
// causal mask. Queries at padded positions produce values that callers must
// mask out downstream (pooling and losses here always do).
inline Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                               const std::vector<int>& lengths, bool causal) {
    check_same_shape(q.shape(), k.shape(), "masked_attention(q,k)");
    check_same_shape(q.shape(), v.shape(), "masked_attention(q,v)");
    if (q.rank() != 3) throw DimensionError("masked_attention: expected [B,S,D], got " + shape_str(q.shape()));
    const int b = q.dim(0), s = q.dim(1), d = q.dim(2);
    if (d % n_heads != 0) throw DimensionError("masked_attention: heads must divide model dim");
    if (static_cast<int>(lengths.size()) != b) throw DimensionError("masked_attention: lengths size != batch");
    const int dh = d / n_heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(b) * n_heads * s * s);
    std::vector<float> out(q.size(), 0.0f);
    std::vector<float> scores(static_cast<std::size_t>(s) * s);

    for (int bi = 0; bi < b; ++bi) {
        const int len = std::min(std::max(lengths[static_cast<std::size_t>(bi)], 1), s);
        for (int h = 0; h < n_heads; ++h) {
            const float* qp = q.data() + (static_cast<std::size_t>(bi) * s) * d + h * dh;
            const float* kp = k.data() + (static_cast<std::size_t>(bi) * s) * d + h * dh;
            const float* vp = v.data() + (static_cast<std::size_t>(bi) * s) * d + h * dh;
            CMapMs Q(qp, s, dh, StrideT(d)), K(kp, s, dh, StrideT(d)), V(vp, s, dh, StrideT(d));
            MapM Sc(scores.data(), s, s);
            Sc.noalias() = Q * K.transpose() * scale;
            float* pr = probs->data() + ((static_cast<std::size_t>(bi) * n_heads + h) * s) * s;
            for (int i = 0; i < s; ++i) {
                int kmax = causal ? std::min(i + 1, len) : len;
                if (kmax < 1) kmax = 1;
                const float* row = scores.data() + static_cast<std::size_t>(i) * s;
                float mx = row[0];
                for (int j = 1; j < kmax; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                float* prow = pr + static_cast<std::size_t>(i) * s;
                for (int j = 0; j < kmax; ++j) {
                    prow[j] = std::exp(row[j] - mx);
                    denom += prow[j];
                }
                const float inv = static_cast<float>(1.0 / denom);
                for (int j = 0; j < kmax; ++j) prow[j] *= inv;
                for (int j = kmax; j < s; ++j) prow[j] = 0.0f;
            }
            CMapM P(pr, s, s);
            MapMs O(out.data() + (static_cast<std::size_t>(bi) * s) * d + h * dh, s, dh, StrideT(d));
            O.noalias() = P * V;
        }
    }

    return Tensor::make_result(
        q.shape(), std::move(out), {q, k, v},
        [q, k, v, probs, b, s, d, n_heads, dh, scale](const float* g, const std::vector<float*>& gin) {
            RowMat dP(s, s), dS(s, s);
            for (int bi = 0; bi < b; ++bi) {
                for (int h = 0; h < n_heads; ++h) {
                    const std::size_t off = (static_cast<std::size_t>(bi) * s) * d + h * dh;
                    CMapMs Q(q.data() + off, s, dh, StrideT(d));
                    CMapMs K(k.data() + off, s, dh, StrideT(d));
                    CMapMs V(v.data() + off, s, dh, StrideT(d));
                    CMapM P(probs->data() + ((static_cast<std::size_t>(bi) * n_heads + h) * s) * s, s, s);
                    CMapMs G(g + off, s, dh, StrideT(d));
                    if (gin[2]) {
                        MapMs GV(gin[2] + off, s, dh, StrideT(d));
                        GV.noalias() += P.transpose() * G;
                    }
                    dP.noalias() = G * V.transpose();
                    for (int i = 0; i < s; ++i) {
                        double dot = 0.0;
                        for (int j = 0; j < s; ++j) dot += static_cast<double>(dP(i, j)) * P(i, j);
                        for (int j = 0; j < s; ++j) dS(i, j) = P(i, j) * (dP(i, j) - static_cast<float>(dot));
                    }
                    if (gin[0]) {
                        MapMs GQ(gin[0] + off, s, dh, StrideT(d));
                        GQ.noalias() += dS * K * scale;
                    }
                    if (gin[1]) {
                        MapMs GK(gin[1] + off, s, dh, StrideT(d));
                        GK.noalias() += dS.transpose() * Q * scale;
                    }
                }
            }
        });
}

inline Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    return Tensor::make_result({1}, {static_cast<float>(acc)}, {a},
                               [n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
                               });
}

inline Tensor mean_all(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    const float inv = 1.0f / static_cast<float>(a.size());
    return Tensor::make_result({1}, {static_cast<float>(acc / static_cast<double>(a.size()))}, {a},
                               [inv, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0] * inv;
                               });
}

// Mean over the sequence axis of [B, S, D], counting only the first
// lengths[b] positions.
inline Tensor masked_mean_rows(const Tensor& a, const std::vector<int>& lengths) {
    if (a.rank() != 3) throw DimensionError("masked_mean_rows: expected [B,S,D], got " + shape_str(a.shape()));
    const int b = a.dim(0), s = a.dim(1), d = a.dim(2);
    if (static_cast<int>(lengths.size()) != b) throw DimensionError("masked_mean_rows: lengths size != batch");
    std::vector<float> out(static_cast<std::size_t>(b) * d, 0.0f);
    for (int bi = 0; bi < b; ++bi) {
        const int len = std::min(std::max(lengths[static_cast<std::size_t>(bi)], 1), s);
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int si = 0; si < len; ++si) acc += a.data()[(static_cast<std::size_t>(bi) * s + si) * d + j];
            out[static_cast<std::size_t>(bi) * d + j] = static_cast<float>(acc / len);
        }
    }
    return Tensor::make_result({b, d}, std::move(out), {a},
                               [lengths, b, s, d](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (int bi = 0; bi < b; ++bi) {
                                       const int len = std::min(std::max(lengths[static_cast<std::size_t>(bi)], 1), s);
                                       const float inv = 1.0f / static_cast<float>(len);
                                       for (int si = 0; si < len; ++si)
                                           for (int j = 0; j < d; ++j)
                                               gin[0][(static_cast<std::size_t>(bi) * s + si) * d + j] +=
                                                   g[static_cast<std::size_t>(bi) * d + j] * inv;
                                   }
                               });
}

// Per-row masked sum of a [B, S] matrix; mask entries are 0/1 constants.
inline Tensor sum_rows_masked(const Tensor& a, const std::vector<float>& mask) {
    if (a.rank() != 2) throw DimensionError("sum_rows_masked: expected [B,S], got " + shape_str(a.shape()));
    const int b = a.dim(0), s = a.dim(1);
    if (mask.size() != a.size()) throw DimensionError("sum_rows_masked: mask size mismatch");
    std::vector<float> out(static_cast<std::size_t>(b));
    for (int bi = 0; bi < b; ++bi) {
        double acc = 0.0;
        for (int si = 0; si < s; ++si) {
            const std::size_t idx = static_cast<std::size_t>(bi) * s + si;
            acc += static_cast<double>(a.data()[idx]) * mask[idx];
        }
        out[static_cast<std::size_t>(bi)] = static_cast<float>(acc);
    }
    return Tensor::make_result({b}, std::move(out), {a},
                               [mask, b, s](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (int bi = 0; bi < b; ++bi)
                                       for (int si = 0; si < s; ++si) {
                                           const std::size_t idx = static_cast<std::size_t>(bi) * s + si;
                                           gin[0][idx] += g[bi] * mask[idx];
                                       }
                               });
}

// out[r] = a[r, ids[r]]; the usual gather for token log-likelihoods.
inline Tensor take_per_row(const Tensor& a, const std::vector<int>& ids) {
    if (a.rank() != 2) throw DimensionError("take_per_row: expected [N,C], got " + shape_str(a.shape()));
    const int n = a.dim(0), c = a.dim(1);
    if (static_cast<int>(ids.size()) != n) throw DimensionError("take_per_row: ids size != rows");
    std::vector<float> out(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
        if (ids[static_cast<std::size_t>(r)] < 0 || ids[static_cast<std::size_t>(r)] >= c)
            throw ContractError("take_per_row: index out of range");
        out[static_cast<std::size_t>(r)] = a.data()[static_cast<std::size_t>(r) * c + ids[static_cast<std::size_t>(r)]];
    }
    return Tensor::make_result({n}, std::move(out), {a},
                               [ids, n, c](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (int r = 0; r < n; ++r)
                                       gin[0][static_cast<std::size_t>(r) * c + ids[static_cast<std::size_t>(r)]] += g[r];
                               });
}

// Weighted mean of a vector with constant 0/1 weights (e.g. non-pad tokens).
inline Tensor masked_mean_vec(const Tensor& a, const std::vector<float>& mask) {
    if (a.rank() != 1 || mask.size() != a.size()) throw DimensionError("masked_mean_vec: expected matching [N]");
    double wsum = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        wsum += mask[i];
        acc += static_cast<double>(a.data()[i]) * mask[i];
    }
    if (wsum <= 0.0) throw ContractError("masked_mean_vec: empty mask");
    const float inv = static_cast<float>(1.0 / wsum);
    return Tensor::make_result({1}, {static_cast<float>(acc / wsum)}, {a},
                               [mask, inv, n = a.size()](const float* g, const std::vector<float*>& gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0] * mask[i] * inv;
                               });
}

// Concatenate [B, Si, D] parts along the sequence axis.
inline Tensor concat_seq(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_seq: no inputs");
    const int b = parts[0].dim(0), d = parts[0].dim(2);
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 3 || p.dim(0) != b || p.dim(2) != d)
            throw DimensionError("concat_seq: incompatible part " + shape_str(p.shape()));
        total += p.dim(1);
    }
    std::vector<float> out(static_cast<std::size_t>(b) * total * d);
    std::vector<int> seq_lens;
    int offset = 0;
    for (const Tensor& p : parts) {
        const int sp = p.dim(1);
        seq_lens.push_back(sp);
        for (int bi = 0; bi < b; ++bi)
            std::memcpy(out.data() + ((static_cast<std::size_t>(bi) * total) + offset) * d,
                        p.data() + (static_cast<std::size_t>(bi) * sp) * d, sizeof(float) * sp * d);
        offset += sp;
    }
    return Tensor::make_result({b, total, d}, std::move(out), parts,
                               [seq_lens, b, total, d](const float* g, const std::vector<float*>& gin) {
                                   int off = 0;
                                   for (std::size_t pi = 0; pi < seq_lens.size(); ++pi) {
                                       const int sp = seq_lens[pi];
                                       if (gin[pi])
                                           for (int bi = 0; bi < b; ++bi) {
                                               const float* src = g + ((static_cast<std::size_t>(bi) * total) + off) * d;
                                               float* dst = gin[pi] + (static_cast<std::size_t>(bi) * sp) * d;
                                               for (int i = 0; i < sp * d; ++i) dst[i] += src[i];
                                           }
                                       off += sp;
                                   }
                               });
}

inline Tensor concat1d(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat1d: no inputs");
    std::size_t total = 0;
    for (const Tensor& p : parts) total += p.size();
    std::vector<float> out;
    out.reserve(total);
    std::vector<std::size_t> sizes;
    for (const Tensor& p : parts) {
        sizes.push_back(p.size());
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return Tensor::make_result({static_cast<int>(total)}, std::move(out), parts,
                               [sizes](const float* g, const std::vector<float*>& gin) {
                                   std::size_t off = 0;
                                   for (std::size_t pi = 0; pi < sizes.size(); ++pi) {
                                       if (gin[pi])
                                           for (std::size_t i = 0; i < sizes[pi]; ++i) gin[pi][i] += g[off + i];
                                       off += sizes[pi];
                                   }
                               });
}

inline Tensor slice_seq(const Tensor& a, int start, int len) {
    if (a.rank() != 3) throw DimensionError("slice_seq: expected [B,S,D], got " + shape_str(a.shape()));
    const int b = a.dim(0), s = a.dim(1), d = a.dim(2);
    if (start < 0 || len < 0 || start + len > s) throw ContractError("slice_seq: range out of bounds");
    std::vector<float> out(static_cast<std::size_t>(b) * len * d);
    for (int bi = 0; bi < b; ++bi)
        std::memcpy(out.data() + (static_cast<std::size_t>(bi) * len) * d,
                    a.data() + ((static_cast<std::size_t>(bi) * s) + start) * d, sizeof(float) * len * d);
    return Tensor::make_result({b, len, d}, std::move(out), {a},
                               [b, s, d, start, len](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (int bi = 0; bi < b; ++bi) {
                                       const float* src = g + (static_cast<std::size_t>(bi) * len) * d;
                                       float* dst = gin[0] + ((static_cast<std::size_t>(bi) * s) + start) * d;
                                       for (int i = 0; i < len * d; ++i) dst[i] += src[i];
                                   }
                               });
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
    if (a.rank() != 2) throw DimensionError("slice_rows: expected [N,D], got " + shape_str(a.shape()));
    const int n = a.dim(0), d = a.dim(1);
    if (r0 < 0 || r1 < r0 || r1 > n) throw ContractError("slice_rows: range out of bounds");
    const int len = r1 - r0;
    std::vector<float> out(static_cast<std::size_t>(len) * d);
    std::memcpy(out.data(), a.data() + static_cast<std::size_t>(r0) * d, sizeof(float) * out.size());
    return Tensor::make_result({len, d}, std::move(out), {a},
                               [r0, len, d](const float* g, const std::vector<float*>& gin) {
                                   if (!gin[0]) return;
                                   for (std::size_t i = 0; i < static_cast<std::size_t>(len) * d; ++i)
                                       gin[0][static_cast<std::size_t>(r0) * d + i] += g[i];
                               });
}

// Row-wise x / ||x||; rows must be nonzero.
inline Tensor l2_normalize_rows(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("l2_normalize_rows: expected [N,D], got " + shape_str(a.shape()));
    const int n = a.dim(0), d = a.dim(1);
    std::vector<float> out(a.size());
    auto inv_norm = std::make_shared<std::vector<float>>(n);
    for (int r = 0; r < n; ++r) {
        const float* x = a.data() + static_cast<std::size_t>(r) * d;
        double nrm = 0.0;
        for (int j = 0; j < d; ++j) nrm += static_cast<double>(x[j]) * x[j];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw ContractError("l2_normalize_rows: zero row " + std::to_string(r));
        const float inv = static_cast<float>(1.0 / nrm);
        (*inv_norm)[r] = inv;
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(r) * d + j] = x[j] * inv;
    }
    Tensor result = Tensor::make_result(a.shape(), std::move(out), {a}, nullptr);
    if (result.requires_grad()) {
        std::vector<float> snapshot = result.values();
        result.raw()->node->fn = [snap = std::move(snapshot), inv_norm, n, d](const float* g, const std::vector<float*>& gin) {
            if (!gin[0]) return;
            for (int r = 0; r < n; ++r) {
                const float* y = snap.data() + static_cast<std::size_t>(r) * d;
                const float* go = g + static_cast<std::size_t>(r) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += static_cast<double>(go[j]) * y[j];
                const float inv = (*inv_norm)[r];
                for (int j = 0; j < d; ++j)
                    gin[0][static_cast<std::size_t>(r) * d + j] += (go[j] - static_cast<float>(dot) * y[j]) * inv;
            }
        };
    }
    return result;
}

// Feature-wise affine modulation: out[b,s,d] = x[b,s,d] * gamma[b,d] + beta[b,d].
inline Tensor film(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    if (x.rank() != 3 || gamma.rank() != 2 || beta.rank() != 2)
        throw DimensionError("film: expected x [B,S,D], gamma/beta [B,D]");
    const int b = x.dim(0), s = x.dim(1), d = x.dim(2);
    if (gamma.dim(0) != b || gamma.dim(1) != d || beta.dim(0) != b || beta.dim(1) != d)
        throw DimensionError("film: conditioning shape mismatch " + shape_str(gamma.shape()));
    std::vector<float> out(x.size());
    for (int bi = 0; bi < b; ++bi)
        for (int si = 0; si < s; ++si)
            for (int j = 0; j < d; ++j) {
                const std::size_t xi = (static_cast<std::size_t>(bi) * s + si) * d + j;
                out[xi] = x.data()[xi] * gamma.data()[static_cast<std::size_t>(bi) * d + j] +
                          beta.data()[static_cast<std::size_t>(bi) * d + j];
            }
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, b, s, d](const float* g, const std::vector<float*>& gin) {
            for (int bi = 0; bi < b; ++bi)
                for (int j = 0; j < d; ++j) {
                    const std::size_t cj = static_cast<std::size_t>(bi) * d + j;
                    double dg = 0.0, db = 0.0;
                    for (int si = 0; si < s; ++si) {
                        const std::size_t xi = (static_cast<std::size_t>(bi) * s + si) * d + j;
                        if (gin[0]) gin[0][xi] += g[xi] * gamma.data()[cj];
                        dg += static_cast<double>(g[xi]) * x.data()[xi];
                        db += g[xi];
                    }
                    if (gin[1]) gin[1][cj] += static_cast<float>(dg);
                    if (gin[2]) gin[2][cj] += static_cast<float>(db);
                }
        });
}

}  // namespace gpla::tc
