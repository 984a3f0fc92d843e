#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "spt/tensor.hpp"

namespace spt {
namespace detail {

// Builds an op output. parents are kept both for topo traversal and for
// closure lifetime; fn only runs when some parent requires grad.
template <typename Fn>
Tensor make_node(std::vector<std::size_t> shape, std::vector<double> data,
                 std::vector<Tensor> parents, Fn&& fn) {
    bool rg = false;
    if (grad_enabled()) {
        for (const Tensor& p : parents)
            if (p.requires_grad()) rg = true;
    }
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    if (rg) {
        out.impl()->requires_grad = true;
        for (const Tensor& p : parents) out.impl()->parents.push_back(p.impl());
        out.impl()->backward_fn = std::forward<Fn>(fn);
    }
    return out;
}

inline void check_matrix(const Tensor& t, const char* what) {
    if (t.shape().size() != 2) throw NumericError(std::string(what) + ": expected a matrix");
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw NumericError("add: shape mismatch");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    auto ai = a.impl(), bi = b.impl();
    return detail::make_node(a.shape(), std::move(out), {a, b},
        [ai, bi](const std::vector<double>& g) {
            if (ai->requires_grad) {
                detail::ensure_grad(*ai);
                for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
            }
            if (bi->requires_grad) {
                detail::ensure_grad(*bi);
                for (std::size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i];
            }
        });
}

// a: n x m, row: vector of m added to every row of a.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
    detail::check_matrix(a, "add_row");
    std::size_t n = a.rows(), m = a.cols();
    if (row.numel() != m) throw NumericError("add_row: width mismatch");
    std::vector<double> out(n * m);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] = a.at(r, c) + row.at(c);
    auto ai = a.impl(), ri = row.impl();
    return detail::make_node(a.shape(), std::move(out), {a, row},
        [ai, ri, n, m](const std::vector<double>& g) {
            if (ai->requires_grad) {
                detail::ensure_grad(*ai);
                for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
            }
            if (ri->requires_grad) {
                detail::ensure_grad(*ri);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < m; ++c) ri->grad[c] += g[r * m + c];
            }
        });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
    auto ai = a.impl();
    return detail::make_node(a.shape(), std::move(out), {a},
        [ai, c](const std::vector<double>& g) {
            if (!ai->requires_grad) return;
            detail::ensure_grad(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += c * g[i];
        });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "matmul");
    detail::check_matrix(b, "matmul");
    std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) throw NumericError("matmul: inner dimension mismatch");
    std::vector<double> out(n * m, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            double av = pa[i * k + kk];
            const double* brow = pb + kk * m;
            double* orow = out.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    auto ai = a.impl(), bi = b.impl();
    return detail::make_node({n, m}, std::move(out), {a, b},
        [ai, bi, n, k, m](const std::vector<double>& g) {
            if (ai->requires_grad) {
                detail::ensure_grad(*ai);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < m; ++j)
                            s += g[i * m + j] * bi->data[kk * m + j];
                        ai->grad[i * k + kk] += s;
                    }
            }
            if (bi->requires_grad) {
                detail::ensure_grad(*bi);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double av = ai->data[i * k + kk];
                        for (std::size_t j = 0; j < m; ++j)
                            bi->grad[kk * m + j] += av * g[i * m + j];
                    }
            }
        });
}

inline Tensor transpose(const Tensor& a) {
    detail::check_matrix(a, "transpose");
    std::size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a.at(i, j);
    auto ai = a.impl();
    return detail::make_node({m, n}, std::move(out), {a},
        [ai, n, m](const std::vector<double>& g) {
            if (!ai->requires_grad) return;
            detail::ensure_grad(*ai);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) ai->grad[i * m + j] += g[j * n + i];
        });
}

inline Tensor softmax_rows(const Tensor& a) {
    detail::check_matrix(a, "softmax_rows");
    std::size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n * m);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = a.at(r, 0);
        for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, a.at(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            out[r * m + c] = std::exp(a.at(r, c) - mx);
            z += out[r * m + c];
        }
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] /= z;
    }
    auto ai = a.impl();
    std::vector<double> y = out;  // closure needs forward output
    return detail::make_node(a.shape(), std::move(out), {a},
        [ai, y = std::move(y), n, m](const std::vector<double>& g) {
            if (!ai->requires_grad) return;
            detail::ensure_grad(*ai);
            for (std::size_t r = 0; r < n; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < m; ++c) dot += g[r * m + c] * y[r * m + c];
                for (std::size_t c = 0; c < m; ++c)
                    ai->grad[r * m + c] += y[r * m + c] * (g[r * m + c] - dot);
            }
        });
}

// Row-wise layer norm with learned gain/bias. Population variance.
inline Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                             double eps = 1e-5) {
    detail::check_matrix(x, "layernorm_rows");
    std::size_t n = x.rows(), m = x.cols();
    if (gain.numel() != m || bias.numel() != m)
        throw NumericError("layernorm_rows: gain/bias width mismatch");
    std::vector<double> out(n * m), xhat(n * m), inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mu = 0.0;
        for (std::size_t c = 0; c < m; ++c) mu += x.at(r, c);
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            double d = x.at(r, c) - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < m; ++c) {
            double xh = (x.at(r, c) - mu) * is;
            xhat[r * m + c] = xh;
            out[r * m + c] = gain.at(c) * xh + bias.at(c);
        }
    }
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
    return detail::make_node(x.shape(), std::move(out), {x, gain, bias},
        [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
         m](const std::vector<double>& g) {
            if (gi->requires_grad) {
                detail::ensure_grad(*gi);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < m; ++c)
                        gi->grad[c] += g[r * m + c] * xhat[r * m + c];
            }
            if (bi->requires_grad) {
                detail::ensure_grad(*bi);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < m; ++c) bi->grad[c] += g[r * m + c];
            }
            if (xi->requires_grad) {
                detail::ensure_grad(*xi);
                for (std::size_t r = 0; r < n; ++r) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (std::size_t c = 0; c < m; ++c) {
                        double dxh = g[r * m + c] * gi->data[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[r * m + c];
                    }
                    mean_dxh /= static_cast<double>(m);
                    mean_dxh_xh /= static_cast<double>(m);
                    for (std::size_t c = 0; c < m; ++c) {
                        double dxh = g[r * m + c] * gi->data[c];
                        xi->grad[r * m + c] +=
                            (dxh - mean_dxh - xhat[r * m + c] * mean_dxh_xh) * inv_std[r];
                    }
                }
            }
        });
}

inline Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = x.at(i);
        out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    auto xi = x.impl();
    return detail::make_node(x.shape(), std::move(out), {x},
        [xi](const std::vector<double>& g) {
            if (!xi->requires_grad) return;
            detail::ensure_grad(*xi);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double v = xi->data[i];
                double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                xi->grad[i] += g[i] * (cdf + v * pdf);
            }
        });
}

// Gather rows of an embedding table. Backward scatter-adds only into the
// rows that were looked up; untouched rows keep exactly zero gradient.
inline Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    detail::check_matrix(table, "embedding_rows");
    std::size_t v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
            throw DataError("embedding_rows: token id " + std::to_string(ids[i]) +
                            " out of range (vocab " + std::to_string(v) + ")");
        const double* src = table.data().data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    auto ti = table.impl();
    return detail::make_node({ids.size(), d}, std::move(out), {table},
        [ti, ids, d](const std::vector<double>& g) {
            if (!ti->requires_grad) return;
            detail::ensure_grad(*ti);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* dst = ti->grad.data() + static_cast<std::size_t>(ids[i]) * d;
                const double* src = g.data() + i * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
            }
        });
}

// Vertical concatenation. Zero-row parts are legal (empty prompt segments).
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw NumericError("concat_rows: no parts");
    std::size_t m = parts.front().cols(), n = 0;
    for (const Tensor& p : parts) {
        detail::check_matrix(p, "concat_rows");
        if (p.cols() != m) throw NumericError("concat_rows: width mismatch");
        n += p.rows();
    }
    std::vector<double> out;
    out.reserve(n * m);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<Tensor::Impl>> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    return detail::make_node({n, m}, std::move(out), parts,
        [impls, m](const std::vector<double>& g) {
            std::size_t off = 0;
            for (const auto& pi : impls) {
                std::size_t len = pi->data.size();
                if (pi->requires_grad) {
                    detail::ensure_grad(*pi);
                    for (std::size_t i = 0; i < len; ++i) pi->grad[i] += g[off + i];
                }
                off += len;
            }
        });
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t w) {
    detail::check_matrix(a, "slice_cols");
    std::size_t n = a.rows(), m = a.cols();
    if (c0 + w > m) throw NumericError("slice_cols: out of range");
    std::vector<double> out(n * w);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = a.at(r, c0 + c);
    auto ai = a.impl();
    return detail::make_node({n, w}, std::move(out), {a},
        [ai, c0, w, n, m](const std::vector<double>& g) {
            if (!ai->requires_grad) return;
            detail::ensure_grad(*ai);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < w; ++c)
                    ai->grad[r * m + c0 + c] += g[r * w + c];
        });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw NumericError("concat_cols: no parts");
    std::size_t n = parts.front().rows(), m = 0;
    for (const Tensor& p : parts) {
        detail::check_matrix(p, "concat_cols");
        if (p.rows() != n) throw NumericError("concat_cols: height mismatch");
        m += p.cols();
    }
    std::vector<double> out(n * m);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::size_t w = p.cols();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) out[r * m + off + c] = p.at(r, c);
        off += w;
    }
    std::vector<std::shared_ptr<Tensor::Impl>> impls;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        impls.push_back(p.impl());
        widths.push_back(p.cols());
    }
    return detail::make_node({n, m}, std::move(out), parts,
        [impls, widths, n, m](const std::vector<double>& g) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < impls.size(); ++k) {
                std::size_t w = widths[k];
                if (impls[k]->requires_grad) {
                    detail::ensure_grad(*impls[k]);
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < w; ++c)
                            impls[k]->grad[r * w + c] += g[r * m + off + c];
                }
                off += w;
            }
        });
}

// Mean over positions of -log softmax(logits)[target].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& target_ids) {
    detail::check_matrix(logits, "cross_entropy");
    std::size_t r = logits.rows(), v = logits.cols();
    if (target_ids.size() != r)
        throw DataError("cross_entropy: target length does not match logit rows");
    std::vector<double> probs(r * v);
    double total = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        int t = target_ids[i];
        if (t < 0 || static_cast<std::size_t>(t) >= v)
            throw DataError("cross_entropy: target id " + std::to_string(t) +
                            " out of range (vocab " + std::to_string(v) + ")");
        double mx = logits.at(i, 0);
        for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, logits.at(i, c));
        double z = 0.0;
        for (std::size_t c = 0; c < v; ++c) {
            probs[i * v + c] = std::exp(logits.at(i, c) - mx);
            z += probs[i * v + c];
        }
        for (std::size_t c = 0; c < v; ++c) probs[i * v + c] /= z;
        total += mx + std::log(z) - logits.at(i, static_cast<std::size_t>(t));
    }
    total /= static_cast<double>(r);
    auto li = logits.impl();
    return detail::make_node({1}, {total}, {logits},
        [li, probs = std::move(probs), target_ids, r, v](const std::vector<double>& g) {
            if (!li->requires_grad) return;
            detail::ensure_grad(*li);
            double go = g[0] / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t c = 0; c < v; ++c) {
                    double onehot = (static_cast<std::size_t>(target_ids[i]) == c) ? 1.0 : 0.0;
                    li->grad[i * v + c] += go * (probs[i * v + c] - onehot);
                }
        });
}

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
    auto ai = a.impl();
    return detail::make_node({1}, {s}, {a},
        [ai](const std::vector<double>& g) {
            if (!ai->requires_grad) return;
            detail::ensure_grad(*ai);
            for (double& gv : ai->grad) gv += g[0];
        });
}

inline Tensor mean_all(const Tensor& a) {
    if (a.numel() == 0) throw NumericError("mean_all: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
    s /= static_cast<double>(a.numel());
    auto ai = a.impl();
    std::size_t n = a.numel();
    return detail::make_node({1}, {s}, {a},
        [ai, n](const std::vector<double>& g) {
            if (!ai->requires_grad) return;
            detail::ensure_grad(*ai);
            double gv = g[0] / static_cast<double>(n);
            for (double& gg : ai->grad) gg += gv;
        });
}

// Inverted dropout. p <= 0 returns the input tensor unchanged and does
// not consume RNG draws, so eval-mode streams stay untouched.
inline Tensor dropout(const Tensor& x, double p, SplitMix64& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw NumericError("dropout: rate must be < 1");
    double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (double& mv : mask) mv = (rng.uniform() >= p) ? keep_scale : 0.0;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * mask[i];
    auto xi = x.impl();
    return detail::make_node(x.shape(), std::move(out), {x},
        [xi, mask = std::move(mask)](const std::vector<double>& g) {
            if (!xi->requires_grad) return;
            detail::ensure_grad(*xi);
            for (std::size_t i = 0; i < g.size(); ++i) xi->grad[i] += g[i] * mask[i];
        });
}

// Index of the largest value; ties take the lowest index.
inline std::size_t argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace spt
