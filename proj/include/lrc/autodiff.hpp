#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lrc/tensor.hpp"
#include "lrc/util.hpp"

namespace lrc {

// A named trainable tensor.
template <typename T>
struct ParamT {
    std::string name;
    TensorT<T> value;
};

// Ordered collection of parameters with unique names.
template <typename T>
class ParamSetT {
public:
    size_t add(std::string name, TensorT<T> value) {
        if (index_.count(name) != 0) {
            throw ValidationError("parameter name not unique: " + name);
        }
        index_.emplace(name, items_.size());
        items_.push_back(ParamT<T>{std::move(name), std::move(value)});
        return items_.size() - 1;
    }

    size_t size() const { return items_.size(); }
    ParamT<T>& operator[](size_t i) { return items_[i]; }
    const ParamT<T>& operator[](size_t i) const { return items_[i]; }

    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    size_t total_numel() const {
        size_t n = 0;
        for (const auto& p : items_) n += p.value.numel();
        return n;
    }

    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::vector<ParamT<T>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// Per-parameter gradient buffers, aligned with a ParamSetT by index.
// `populated` distinguishes a genuinely absent gradient from a zero one.
template <typename T>
struct GradientsT {
    std::vector<TensorT<T>> grad;
    std::vector<char> populated;

    GradientsT() = default;
    explicit GradientsT(const ParamSetT<T>& params) {
        grad.reserve(params.size());
        for (const auto& p : params) grad.emplace_back(p.value.shape);
        populated.assign(params.size(), 0);
    }

    void reset() {
        for (auto& g : grad) std::fill(g.data.begin(), g.data.end(), T(0));
        std::fill(populated.begin(), populated.end(), char(0));
    }

    void add(size_t i, const std::vector<T>& g) {
        auto& dst = grad[i].data;
        for (size_t j = 0; j < dst.size(); ++j) dst[j] += g[j];
        populated[i] = 1;
    }
};

struct ValueRef {
    int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. Ops append nodes in topological order; backward() walks
// the tape once from the loss down, accumulating into node buffers and, for
// parameter leaves, into the bound GradientsT. One tape per forward pass,
// reset between steps. Single-threaded per tape.
template <typename T>
class TapeT {
public:
    TapeT() = default;
    TapeT(const ParamSetT<T>* params, GradientsT<T>* grads)
        : params_(params), grads_out_(grads) {}

    size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        grads_.clear();
        param_nodes_.clear();
    }

    const TensorT<T>& val(ValueRef r) const { return nodes_[check(r)].value; }

    // ---- leaves ---------------------------------------------------------

    // Constant input; no gradient flows out of it.
    ValueRef input(TensorT<T> v) {
        check_finite(v, "input");
        return push(std::move(v), {}, nullptr);
    }

    // Parameter leaf. Gradients reaching it are accumulated into the bound
    // GradientsT (when one is attached). Repeated requests reuse one node.
    ValueRef param(size_t param_idx) {
        if (params_ == nullptr) throw ValidationError("tape has no parameter set bound");
        auto it = param_nodes_.find(param_idx);
        if (it != param_nodes_.end()) return ValueRef{it->second};
        const auto& p = (*params_)[param_idx];
        check_finite(p.value, "param " + p.name);
        ValueRef r = push(p.value, {},
                          [param_idx](TapeT& t, size_t self) {
                              if (t.grads_out_ != nullptr) {
                                  t.grads_out_->add(param_idx, t.grads_[self]);
                              }
                          });
        param_nodes_.emplace(param_idx, r.idx);
        return r;
    }

    ValueRef param(const std::string& name) {
        if (params_ == nullptr) throw ValidationError("tape has no parameter set bound");
        return param(params_->index_of(name));
    }

    // ---- elementwise ----------------------------------------------------

    ValueRef add(ValueRef a, ValueRef b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require(va.same_shape(vb), "add", va.shape, vb.shape);
        TensorT<T> out(va.shape);
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] + vb.data[i];
        return push_checked(std::move(out), "add", {a.idx, b.idx},
                            [a, b](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                t.acc(a.idx, g.data(), g.size());
                                t.acc(b.idx, g.data(), g.size());
                            });
    }

    // (R x C) + (C,) broadcast over rows.
    ValueRef add_bias(ValueRef a, ValueRef b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require(vb.shape.size() == 1 && vb.numel() == va.cols(), "add_bias", va.shape, vb.shape);
        const size_t rows = va.rows(), cols = va.cols();
        TensorT<T> out(va.shape);
        for (size_t r = 0; r < rows; ++r) {
            for (size_t c = 0; c < cols; ++c) {
                out.data[r * cols + c] = va.data[r * cols + c] + vb.data[c];
            }
        }
        return push_checked(std::move(out), "add_bias", {a.idx, b.idx},
                            [a, b, rows, cols](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                t.acc(a.idx, g.data(), g.size());
                                auto& gb = t.grad_buf(b.idx);
                                for (size_t c = 0; c < cols; ++c) {
                                    double s = 0.0;
                                    for (size_t r = 0; r < rows; ++r) s += g[r * cols + c];
                                    gb[c] += static_cast<T>(s);
                                }
                            });
    }

    ValueRef mul(ValueRef a, ValueRef b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require(va.same_shape(vb), "mul", va.shape, vb.shape);
        TensorT<T> out(va.shape);
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] * vb.data[i];
        return push_checked(std::move(out), "mul", {a.idx, b.idx},
                            [a, b](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                const auto& va2 = t.nodes_[a.idx].value.data;
                                const auto& vb2 = t.nodes_[b.idx].value.data;
                                auto& ga = t.grad_buf(a.idx);
                                auto& gb = t.grad_buf(b.idx);
                                for (size_t i = 0; i < g.size(); ++i) {
                                    ga[i] += g[i] * vb2[i];
                                    gb[i] += g[i] * va2[i];
                                }
                            });
    }

    ValueRef scale(ValueRef a, double c) {
        const auto& va = val(a);
        TensorT<T> out(va.shape);
        for (size_t i = 0; i < out.numel(); ++i) {
            out.data[i] = static_cast<T>(va.data[i] * c);
        }
        return push_checked(std::move(out), "scale", {a.idx},
                            [a, c](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                auto& ga = t.grad_buf(a.idx);
                                for (size_t i = 0; i < g.size(); ++i) {
                                    ga[i] += static_cast<T>(g[i] * c);
                                }
                            });
    }

    ValueRef gelu(ValueRef a) {
        const auto& va = val(a);
        TensorT<T> out(va.shape);
        for (size_t i = 0; i < out.numel(); ++i) {
            const double x = va.data[i];
            out.data[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
        }
        return push_checked(std::move(out), "gelu", {a.idx},
                            [a](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                const auto& x = t.nodes_[a.idx].value.data;
                                auto& ga = t.grad_buf(a.idx);
                                for (size_t i = 0; i < g.size(); ++i) {
                                    const double xi = x[i];
                                    const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
                                    const double pdf = std::exp(-0.5 * xi * xi) * kInvSqrt2Pi;
                                    ga[i] += static_cast<T>(g[i] * (cdf + xi * pdf));
                                }
                            });
    }

    ValueRef sum(ValueRef a) {
        const auto& va = val(a);
        double s = 0.0;
        for (T x : va.data) s += x;
        TensorT<T> out(Shape{1});
        out.data[0] = static_cast<T>(s);
        return push_checked(std::move(out), "sum", {a.idx},
                            [a](TapeT& t, size_t self) {
                                const T g = t.grads_[self][0];
                                auto& ga = t.grad_buf(a.idx);
                                for (auto& v : ga) v += g;
                            });
    }

    // ---- structure ------------------------------------------------------

    ValueRef concat_rows(ValueRef a, ValueRef b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require(va.cols() == vb.cols(), "concat_rows", va.shape, vb.shape);
        const size_t cols = va.cols();
        TensorT<T> out(Shape{va.rows() + vb.rows(), cols});
        std::copy(va.data.begin(), va.data.end(), out.data.begin());
        std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.numel());
        const size_t na = va.numel();
        return push_checked(std::move(out), "concat_rows", {a.idx, b.idx},
                            [a, b, na](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                t.acc(a.idx, g.data(), na);
                                t.acc(b.idx, g.data() + na, g.size() - na);
                            });
    }

    ValueRef slice_rows(ValueRef a, size_t begin, size_t end) {
        const auto& va = val(a);
        if (!(begin < end && end <= va.rows())) {
            throw ValidationError("slice_rows: range [" + fmt_int((long long)begin) + ", " +
                                  fmt_int((long long)end) + ") out of bounds for " +
                                  shape_str(va.shape));
        }
        const size_t cols = va.cols();
        TensorT<T> out(Shape{end - begin, cols});
        std::copy(va.data.begin() + begin * cols, va.data.begin() + end * cols, out.data.begin());
        return push_checked(std::move(out), "slice_rows", {a.idx},
                            [a, begin, cols](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                auto& ga = t.grad_buf(a.idx);
                                for (size_t i = 0; i < g.size(); ++i) {
                                    ga[begin * cols + i] += g[i];
                                }
                            });
    }

    // ---- linear algebra -------------------------------------------------

    ValueRef matmul(ValueRef a, ValueRef b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (va.shape.size() != 2 || vb.shape.size() != 2 || va.shape[1] != vb.shape[0]) {
            throw ValidationError("matmul: incompatible shapes " + shape_str(va.shape) +
                                  " vs " + shape_str(vb.shape));
        }
        const size_t m = va.shape[0], k = va.shape[1], n = vb.shape[1];
        TensorT<T> out(Shape{m, n});
        gemm_nn(m, k, n, va.data.data(), vb.data.data(), out.data.data());
        return push_checked(std::move(out), "matmul", {a.idx, b.idx},
                            [a, b, m, k, n](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                const auto& A = t.nodes_[a.idx].value.data;
                                const auto& B = t.nodes_[b.idx].value.data;
                                auto& ga = t.grad_buf(a.idx);
                                auto& gb = t.grad_buf(b.idx);
                                // dA += G * B^T
                                std::vector<T> bt(k * n);
                                transpose(k, n, B.data(), bt.data());
                                gemm_nn_acc(m, n, k, g.data(), bt.data(), ga.data());
                                // dB += A^T * G
                                gemm_tn_acc(m, k, n, A.data(), g.data(), gb.data());
                            });
    }

    // ---- normalization and activations over the last axis ----------------

    ValueRef softmax(ValueRef a) {
        const auto& va = val(a);
        const size_t rows = va.rows(), cols = va.cols();
        TensorT<T> out(va.shape);
        for (size_t r = 0; r < rows; ++r) {
            const T* x = va.data.data() + r * cols;
            T* y = out.data.data() + r * cols;
            T mx = x[0];
            for (size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
            double denom = 0.0;
            for (size_t c = 0; c < cols; ++c) {
                const double e = std::exp(static_cast<double>(x[c] - mx));
                y[c] = static_cast<T>(e);
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (size_t c = 0; c < cols; ++c) y[c] = static_cast<T>(y[c] * inv);
        }
        return push_checked(std::move(out), "softmax", {a.idx},
                            [a, rows, cols](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                const auto& p = t.nodes_[self].value.data;
                                auto& ga = t.grad_buf(a.idx);
                                for (size_t r = 0; r < rows; ++r) {
                                    const T* pr = p.data() + r * cols;
                                    const T* gr = g.data() + r * cols;
                                    double dot = 0.0;
                                    for (size_t c = 0; c < cols; ++c) dot += double(gr[c]) * pr[c];
                                    T* dst = ga.data() + r * cols;
                                    for (size_t c = 0; c < cols; ++c) {
                                        dst[c] += static_cast<T>(pr[c] * (gr[c] - dot));
                                    }
                                }
                            });
    }

    // y = (x - mean) / sqrt(var + eps) * gain + bias, per row.
    ValueRef layernorm(ValueRef a, ValueRef gain, ValueRef bias, double eps) {
        const auto& va = val(a);
        const auto& vg = val(gain);
        const auto& vb = val(bias);
        const size_t rows = va.rows(), cols = va.cols();
        if (vg.numel() != cols || vb.numel() != cols) {
            throw ValidationError("layernorm: gain/bias length must match last axis " +
                                  shape_str(va.shape));
        }
        TensorT<T> out(va.shape);
        std::vector<T> norm(va.numel());     // (x - mean) * inv_std, saved for backward
        std::vector<T> inv_std(rows);
        for (size_t r = 0; r < rows; ++r) {
            const T* x = va.data.data() + r * cols;
            double mean = 0.0;
            for (size_t c = 0; c < cols; ++c) mean += x[c];
            mean /= double(cols);
            double var = 0.0;
            for (size_t c = 0; c < cols; ++c) {
                const double d = x[c] - mean;
                var += d * d;
            }
            var /= double(cols);
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std[r] = static_cast<T>(inv);
            for (size_t c = 0; c < cols; ++c) {
                const T nc = static_cast<T>((x[c] - mean) * inv);
                norm[r * cols + c] = nc;
                out.data[r * cols + c] = nc * vg.data[c] + vb.data[c];
            }
        }
        return push_checked(
            std::move(out), "layernorm", {a.idx, gain.idx, bias.idx},
            [a, gain, bias, rows, cols, norm = std::move(norm),
             inv_std = std::move(inv_std)](TapeT& t, size_t self) {
                const auto& g = t.grads_[self];
                const auto& vg2 = t.nodes_[gain.idx].value.data;
                auto& ga = t.grad_buf(a.idx);
                auto& gg = t.grad_buf(gain.idx);
                auto& gb = t.grad_buf(bias.idx);
                for (size_t r = 0; r < rows; ++r) {
                    const T* gr = g.data() + r * cols;
                    const T* nr = norm.data() + r * cols;
                    double m1 = 0.0, m2 = 0.0;  // mean(dy), mean(dy * norm)
                    for (size_t c = 0; c < cols; ++c) {
                        const double dy = double(gr[c]) * vg2[c];
                        m1 += dy;
                        m2 += dy * nr[c];
                    }
                    m1 /= double(cols);
                    m2 /= double(cols);
                    const double inv = inv_std[r];
                    T* dst = ga.data() + r * cols;
                    for (size_t c = 0; c < cols; ++c) {
                        const double dy = double(gr[c]) * vg2[c];
                        dst[c] += static_cast<T>(inv * (dy - m1 - double(nr[c]) * m2));
                    }
                }
                for (size_t c = 0; c < cols; ++c) {
                    double sg = 0.0, sb = 0.0;
                    for (size_t r = 0; r < rows; ++r) {
                        sg += double(g[r * cols + c]) * norm[r * cols + c];
                        sb += g[r * cols + c];
                    }
                    gg[c] += static_cast<T>(sg);
                    gb[c] += static_cast<T>(sb);
                }
            });
    }

    // Row gather: out[i, :] = table[ids[i], :].
    ValueRef embedding(ValueRef table, const std::vector<int32_t>& ids) {
        const auto& vt = val(table);
        const size_t n = ids.size(), d = vt.cols();
        for (int32_t id : ids) {
            if (id < 0 || size_t(id) >= vt.rows()) {
                throw ValidationError("embedding: token id " + fmt_int(id) +
                                      " out of range for table " + shape_str(vt.shape));
            }
        }
        TensorT<T> out(Shape{n, d});
        for (size_t i = 0; i < n; ++i) {
            const T* src = vt.data.data() + size_t(ids[i]) * d;
            std::copy(src, src + d, out.data.begin() + i * d);
        }
        return push_checked(std::move(out), "embedding", {table.idx},
                            [table, ids, d](TapeT& t, size_t self) {
                                const auto& g = t.grads_[self];
                                auto& gt = t.grad_buf(table.idx);
                                for (size_t i = 0; i < ids.size(); ++i) {
                                    T* dst = gt.data() + size_t(ids[i]) * d;
                                    const T* src = g.data() + i * d;
                                    for (size_t c = 0; c < d; ++c) dst[c] += src[c];
                                }
                            });
    }

    // Fused multi-head scaled-dot-product attention. q is (Sq x d), k and v
    // are (Sk x d); all already projected. Softmax probabilities are saved
    // for the backward pass.
    ValueRef attention(ValueRef q, ValueRef k, ValueRef v, size_t n_heads) {
        const auto& vq = val(q);
        const auto& vk = val(k);
        const auto& vv = val(v);
        const size_t sq = vq.rows(), sk = vk.rows(), d = vq.cols();
        if (vk.cols() != d || vv.cols() != d || vv.rows() != sk) {
            throw ValidationError("attention: shapes disagree " + shape_str(vq.shape) + ", " +
                                  shape_str(vk.shape) + ", " + shape_str(vv.shape));
        }
        if (n_heads == 0 || d % n_heads != 0) {
            throw ValidationError("attention: width " + fmt_int((long long)d) +
                                  " not divisible by " + fmt_int((long long)n_heads) + " heads");
        }
        const size_t dh = d / n_heads;
        const double att_scale = 1.0 / std::sqrt(double(dh));

        TensorT<T> out(Shape{sq, d});
        std::vector<T> probs(n_heads * sq * sk);
        std::vector<T> qh(sq * dh), kh(sk * dh), vh(sk * dh), kt(dh * sk), oh(sq * dh);
        std::vector<T> scores(sq * sk);
        for (size_t h = 0; h < n_heads; ++h) {
            gather_head(vq.data.data(), sq, d, h, dh, qh.data());
            gather_head(vk.data.data(), sk, d, h, dh, kh.data());
            gather_head(vv.data.data(), sk, d, h, dh, vh.data());
            transpose(sk, dh, kh.data(), kt.data());
            gemm_nn(sq, dh, sk, qh.data(), kt.data(), scores.data());
            T* p = probs.data() + h * sq * sk;
            for (size_t r = 0; r < sq; ++r) {
                T* row = scores.data() + r * sk;
                double mx = -1e300;
                for (size_t c = 0; c < sk; ++c) mx = std::max(mx, double(row[c]) * att_scale);
                double denom = 0.0;
                T* prow = p + r * sk;
                for (size_t c = 0; c < sk; ++c) {
                    const double e = std::exp(double(row[c]) * att_scale - mx);
                    prow[c] = static_cast<T>(e);
                    denom += e;
                }
                const double inv = 1.0 / denom;
                for (size_t c = 0; c < sk; ++c) prow[c] = static_cast<T>(prow[c] * inv);
            }
            gemm_nn(sq, sk, dh, p, vh.data(), oh.data());
            scatter_head(oh.data(), sq, d, h, dh, out.data.data());
        }
        return push_checked(
            std::move(out), "attention", {q.idx, k.idx, v.idx},
            [q, k, v, n_heads, sq, sk, d, dh, att_scale,
             probs = std::move(probs)](TapeT& t, size_t self) {
                const auto& g = t.grads_[self];
                const auto& vq2 = t.nodes_[q.idx].value.data;
                const auto& vk2 = t.nodes_[k.idx].value.data;
                const auto& vv2 = t.nodes_[v.idx].value.data;
                auto& gq = t.grad_buf(q.idx);
                auto& gk = t.grad_buf(k.idx);
                auto& gv = t.grad_buf(v.idx);
                std::vector<T> qh(sq * dh), kh(sk * dh), vh(sk * dh);
                std::vector<T> goh(sq * dh), gqh(sq * dh), gkh(sk * dh), gvh(sk * dh);
                std::vector<T> vt(dh * sk), dp(sq * sk), ds(sq * sk);
                for (size_t h = 0; h < n_heads; ++h) {
                    gather_head(vq2.data(), sq, d, h, dh, qh.data());
                    gather_head(vk2.data(), sk, d, h, dh, kh.data());
                    gather_head(vv2.data(), sk, d, h, dh, vh.data());
                    gather_head(g.data(), sq, d, h, dh, goh.data());
                    const T* p = probs.data() + h * sq * sk;
                    // dV_h = P^T * dO_h
                    std::fill(gvh.begin(), gvh.end(), T(0));
                    gemm_tn_acc(sq, sk, dh, p, goh.data(), gvh.data());
                    // dP = dO_h * V_h^T
                    transpose(sk, dh, vh.data(), vt.data());
                    gemm_nn(sq, dh, sk, goh.data(), vt.data(), dp.data());
                    // softmax backward, scale folded in
                    for (size_t r = 0; r < sq; ++r) {
                        const T* pr = p + r * sk;
                        const T* dpr = dp.data() + r * sk;
                        double dot = 0.0;
                        for (size_t c = 0; c < sk; ++c) dot += double(dpr[c]) * pr[c];
                        T* dsr = ds.data() + r * sk;
                        for (size_t c = 0; c < sk; ++c) {
                            dsr[c] = static_cast<T>(double(pr[c]) * (dpr[c] - dot) * att_scale);
                        }
                    }
                    // dQ_h = dS * K_h ; dK_h = dS^T * Q_h
                    gemm_nn(sq, sk, dh, ds.data(), kh.data(), gqh.data());
                    std::fill(gkh.begin(), gkh.end(), T(0));
                    gemm_tn_acc(sq, sk, dh, ds.data(), qh.data(), gkh.data());
                    scatter_head_acc(gqh.data(), sq, d, h, dh, gq.data());
                    scatter_head_acc(gkh.data(), sk, d, h, dh, gk.data());
                    scatter_head_acc(gvh.data(), sk, d, h, dh, gv.data());
                }
            });
    }

    // Mean or sum of per-row cross entropy between logits (N x V) and integer
    // labels, computed via log-sum-exp. Rows whose label equals ignore_id
    // contribute nothing to the value or the gradient.
    enum class Reduction { mean, sum };

    ValueRef cross_entropy(ValueRef logits, const std::vector<int32_t>& labels,
                           int32_t ignore_id = -1, Reduction red = Reduction::mean) {
        const auto& vl = val(logits);
        const size_t n = vl.rows(), vocab = vl.cols();
        if (labels.size() != n) {
            throw ValidationError("cross_entropy: " + fmt_int((long long)labels.size()) +
                                  " labels for " + fmt_int((long long)n) + " rows");
        }
        std::vector<T> probs(vl.numel());
        double total = 0.0;
        size_t counted = 0;
        for (size_t r = 0; r < n; ++r) {
            const T* x = vl.data.data() + r * vocab;
            T* p = probs.data() + r * vocab;
            double mx = x[0];
            for (size_t c = 1; c < vocab; ++c) mx = std::max(mx, double(x[c]));
            double denom = 0.0;
            for (size_t c = 0; c < vocab; ++c) {
                const double e = std::exp(double(x[c]) - mx);
                p[c] = static_cast<T>(e);
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (size_t c = 0; c < vocab; ++c) p[c] = static_cast<T>(p[c] * inv);
            const int32_t y = labels[r];
            if (y == ignore_id) continue;
            if (y < 0 || size_t(y) >= vocab) {
                throw ValidationError("cross_entropy: label " + fmt_int(y) +
                                      " out of range for vocab " + fmt_int((long long)vocab));
            }
            total += (mx + std::log(denom)) - double(x[y]);
            ++counted;
        }
        const double norm = (red == Reduction::mean) ? (counted > 0 ? 1.0 / double(counted) : 0.0)
                                                     : 1.0;
        TensorT<T> out(Shape{1});
        out.data[0] = static_cast<T>(total * norm);
        return push_checked(
            std::move(out), "cross_entropy", {logits.idx},
            [logits, labels, ignore_id, norm, vocab, probs = std::move(probs)](TapeT& t,
                                                                               size_t self) {
                const double go = double(t.grads_[self][0]) * norm;
                auto& gl = t.grad_buf(logits.idx);
                for (size_t r = 0; r < labels.size(); ++r) {
                    if (labels[r] == ignore_id) continue;
                    const T* p = probs.data() + r * vocab;
                    T* dst = gl.data() + r * vocab;
                    for (size_t c = 0; c < vocab; ++c) dst[c] += static_cast<T>(go * p[c]);
                    dst[labels[r]] -= static_cast<T>(go);
                }
            });
    }

    // ---- backward --------------------------------------------------------

    void backward(ValueRef loss) {
        if (nodes_.empty()) throw ValidationError("backward: tape is empty");
        const size_t li = check(loss);
        if (!nodes_[li].value.is_scalar()) {
            throw ValidationError("backward: loss must be scalar, got shape " +
                                  shape_str(nodes_[li].value.shape));
        }
        grads_.assign(nodes_.size(), {});
        grads_[li].assign(1, T(1));
        for (size_t i = li + 1; i-- > 0;) {
            if (!grads_[i].empty() && nodes_[i].backward) {
                nodes_[i].backward(*this, i);
            }
        }
    }

    // Gradient w.r.t. a non-parameter node from the last backward() call;
    // empty when no gradient reached it.
    std::vector<T> grad_of(ValueRef r) const {
        const size_t i = check(r);
        return i < grads_.size() ? grads_[i] : std::vector<T>{};
    }

private:
    struct Node {
        TensorT<T> value;
        std::function<void(TapeT&, size_t)> backward;
    };

    static constexpr double kInvSqrt2 = 0.7071067811865475244;
    static constexpr double kInvSqrt2Pi = 0.3989422804014326779;

    size_t check(ValueRef r) const {
        if (!r.valid() || size_t(r.idx) >= nodes_.size()) {
            throw ValidationError("invalid tape value reference");
        }
        return size_t(r.idx);
    }

    static void require(bool ok, const char* op, const Shape& a, const Shape& b) {
        if (!ok) {
            throw ValidationError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                  " vs " + shape_str(b));
        }
    }

    static void check_finite(const TensorT<T>& t, const std::string& what) {
        if (!t.all_finite()) {
            throw NumericError("non-finite values in " + what + " with shape " +
                               shape_str(t.shape));
        }
    }

    static void gather_head(const T* src, size_t rows, size_t d, size_t h, size_t dh, T* dst) {
        for (size_t r = 0; r < rows; ++r) {
            const T* s = src + r * d + h * dh;
            std::copy(s, s + dh, dst + r * dh);
        }
    }

    static void scatter_head(const T* src, size_t rows, size_t d, size_t h, size_t dh, T* dst) {
        for (size_t r = 0; r < rows; ++r) {
            std::copy(src + r * dh, src + (r + 1) * dh, dst + r * d + h * dh);
        }
    }

    static void scatter_head_acc(const T* src, size_t rows, size_t d, size_t h, size_t dh,
                                 T* dst) {
        for (size_t r = 0; r < rows; ++r) {
            T* out = dst + r * d + h * dh;
            const T* s = src + r * dh;
            for (size_t c = 0; c < dh; ++c) out[c] += s[c];
        }
    }

    ValueRef push(TensorT<T> value, std::initializer_list<int32_t>,
                  std::function<void(TapeT&, size_t)> backward) {
        nodes_.push_back(Node{std::move(value), std::move(backward)});
        return ValueRef{static_cast<int32_t>(nodes_.size() - 1)};
    }

    ValueRef push_checked(TensorT<T> value, const char* op, std::initializer_list<int32_t>,
                          std::function<void(TapeT&, size_t)> backward) {
        if (!value.all_finite()) {
            throw NumericError(std::string("non-finite result of ") + op + " with shape " +
                               shape_str(value.shape));
        }
        nodes_.push_back(Node{std::move(value), std::move(backward)});
        return ValueRef{static_cast<int32_t>(nodes_.size() - 1)};
    }

    std::vector<T>& grad_buf(int32_t idx) {
        auto& g = grads_[idx];
        if (g.empty()) g.assign(nodes_[idx].value.numel(), T(0));
        return g;
    }

    void acc(int32_t idx, const T* src, size_t n) {
        auto& g = grad_buf(idx);
        for (size_t i = 0; i < n; ++i) g[i] += src[i];
    }

    const ParamSetT<T>* params_ = nullptr;
    GradientsT<T>* grads_out_ = nullptr;
    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    std::unordered_map<size_t, int32_t> param_nodes_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using ParamSet = ParamSetT<float>;
using Gradients = GradientsT<float>;

}  // namespace lrc
