#include "lcl/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "lcl/errors.hpp"

namespace lcl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
    MMap(c, M, N).noalias() += CMap(a, M, K) * CMap(b, K, N);
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
    MMap(c, M, N).noalias() += CMap(a, M, K) * CMap(b, N, K).transpose();
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
    MMap(c, K, N).noalias() += CMap(a, M, K).transpose() * CMap(b, M, N);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
    }
}

Tape& tape_of(Var a) {
    if (a.tape == nullptr) throw ContractViolation("operation on an unbound Var");
    return *a.tape;
}

bool any_grad(std::initializer_list<Var> vs) {
    for (const Var& v : vs)
        if (v.requires_grad()) return true;
    return false;
}

void softmax_row_inplace(double* row, std::size_t n) {
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        s += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    Tensor c({a.rows(), b.cols()});
    gemm_nn(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.cols());
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: widths disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    }
    Tensor c({a.rows(), b.rows()});
    gemm_nt(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.rows());
    return c;
}

Tensor softmax(const Tensor& v) {
    if (v.size() == 0) throw ShapeError("softmax of an empty tensor");
    Tensor out = v;
    softmax_row_inplace(out.data().data(), out.size());
    return out;
}

Tensor softmax_rows(const Tensor& m) {
    require_rank2(m, "softmax_rows");
    if (m.cols() == 0) throw ShapeError("softmax over zero columns");
    Tensor out = m;
    for (std::size_t r = 0; r < m.rows(); ++r) softmax_row_inplace(&out(r, 0), m.cols());
    return out;
}

Tensor relu(const Tensor& v) {
    Tensor out = v;
    for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
    return out;
}

namespace ops {

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a);
    Tensor out = lcl::matmul(a.value(), b.value());
    return t.record(std::move(out), any_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(a);
        const Tensor& bv = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buffer(a);
            gemm_nt(g.data().data(), bv.data().data(), ga.data().data(), g.rows(), g.cols(), bv.rows());
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buffer(b);
            gemm_tn(av.data().data(), g.data().data(), gb.data().data(), av.rows(), av.cols(), g.cols());
        }
    });
}

Var matmul_nt(Var a, Var b) {
    Tape& t = tape_of(a);
    Tensor out = lcl::matmul_nt(a.value(), b.value());
    return t.record(std::move(out), any_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(a);
        const Tensor& bv = tp.value(b);
        if (tp.requires_grad(a)) {
            // dA = G B
            Tensor& ga = tp.grad_buffer(a);
            gemm_nn(g.data().data(), bv.data().data(), ga.data().data(), g.rows(), g.cols(), bv.cols());
        }
        if (tp.requires_grad(b)) {
            // dB = G^T A
            Tensor& gb = tp.grad_buffer(b);
            gemm_tn(g.data().data(), av.data().data(), gb.data().data(), g.rows(), g.cols(), av.cols());
        }
    });
}

Var add(Var a, Var b) {
    require_same(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return tape_of(a).record(std::move(out), any_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    require_same(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const auto bv = b.value().data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bv[i];
    return tape_of(a).record(std::move(out), any_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var add_row(Var a, Var r) {
    const Tensor& av = a.value();
    const Tensor& rv = r.value();
    require_rank2(av, "add_row");
    if (rv.size() != av.cols()) {
        throw ShapeError("add_row: row " + shape_str(rv.shape()) + " does not fit " + shape_str(av.shape()));
    }
    Tensor out = av;
    const std::size_t n = av.cols();
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) += rv[j];
    return tape_of(a).record(std::move(out), any_grad({a, r}), [a, r, n](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(r)) {
            Tensor& gr = tp.grad_buffer(r);
            const std::size_t rows = g.size() / n;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
        }
    });
}

Var add_tiled(Var a, Var t) {
    const Tensor& av = a.value();
    const Tensor& tv = t.value();
    require_rank2(av, "add_tiled");
    if (tv.cols() != av.cols() || tv.rows() == 0 || av.rows() % tv.rows() != 0) {
        throw ShapeError("add_tiled: " + shape_str(tv.shape()) + " does not tile " + shape_str(av.shape()));
    }
    Tensor out = av;
    const std::size_t block = tv.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tv[i % block];
    return tape_of(a).record(std::move(out), any_grad({a, t}), [a, t, block](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(t)) {
            Tensor& gt = tp.grad_buffer(t);
            for (std::size_t i = 0; i < g.size(); ++i) gt[i % block] += g[i];
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (double& x : out.data()) x *= s;
    return tape_of(a).record(std::move(out), a.requires_grad(), [a, s](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var mul(Var a, Var b) {
    require_same(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const auto bv = b.value().data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bv[i];
    return tape_of(a).record(std::move(out), any_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buffer(a);
            const Tensor& bv2 = tp.value(b);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buffer(b);
            const Tensor& av2 = tp.value(a);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
        }
    });
}

Var relu(Var a) {
    Tensor out = lcl::relu(a.value());
    return tape_of(a).record(std::move(out), a.requires_grad(), [a](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_buffer(a);
        const Tensor& av = tp.value(a);
        // Subgradient at exactly zero is zero.
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] > 0.0) ga[i] += g[i];
    });
}

Var sigmoid(Var a) {
    Tensor out = a.value();
    for (double& x : out.data()) x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    Tape& t = tape_of(a);
    const Var self{&t, t.size()};
    return t.record(std::move(out), a.requires_grad(), [a, self](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_buffer(a);
        const Tensor& yv = tp.value(self);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
    });
}

Var softmax_rows(Var a) {
    Tensor out = lcl::softmax_rows(a.value());
    const std::size_t n = out.cols();
    Tape& t = tape_of(a);
    const Var self{&t, t.size()};
    return t.record(std::move(out), a.requires_grad(), [a, self, n](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_buffer(a);
        const Tensor& yv = tp.value(self);
        const std::size_t rows = g.size() / n;
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * yv[r * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += yv[r * n + j] * (g[r * n + j] - dot);
        }
    });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
    const Tensor& x = a.value();
    require_rank2(x, "layer_norm");
    const std::size_t rows = x.rows(), n = x.cols();
    if (gain.value().size() != n || bias.value().size() != n) {
        throw ShapeError("layer_norm: affine parameters do not match width " + std::to_string(n));
    }
    Tensor xhat({rows, n});
    std::vector<double> inv_std(rows);
    Tensor out({rows, n});
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += x(r, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (x(r, j) - mu) * (x(r, j) - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat(r, j) = (x(r, j) - mu) * inv_std[r];
            out(r, j) = xhat(r, j) * gv[j] + bv[j];
        }
    }
    Tape& t = tape_of(a);
    const bool rg = any_grad({a, gain, bias});
    return t.record(std::move(out), rg,
                    [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                     n](Tape& tp, const Tensor& g) {
                        const Tensor& gv2 = tp.value(gain);
                        if (tp.requires_grad(gain)) {
                            Tensor& gg = tp.grad_buffer(gain);
                            for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat(r, j);
                        }
                        if (tp.requires_grad(bias)) {
                            Tensor& gb = tp.grad_buffer(bias);
                            for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                        }
                        if (tp.requires_grad(a)) {
                            Tensor& ga = tp.grad_buffer(a);
                            const double inv_n = 1.0 / static_cast<double>(n);
                            for (std::size_t r = 0; r < rows; ++r) {
                                double s1 = 0.0, s2 = 0.0;
                                for (std::size_t j = 0; j < n; ++j) {
                                    const double dxh = g[r * n + j] * gv2[j];
                                    s1 += dxh;
                                    s2 += dxh * xhat(r, j);
                                }
                                for (std::size_t j = 0; j < n; ++j) {
                                    const double dxh = g[r * n + j] * gv2[j];
                                    ga[r * n + j] += inv_std[r] * (dxh - inv_n * s1 - xhat(r, j) * inv_n * s2);
                                }
                            }
                        }
                    });
}

Var mean_blocks(Var a, std::size_t block) {
    const Tensor& x = a.value();
    require_rank2(x, "mean_blocks");
    if (block == 0 || x.rows() == 0) throw EmptyInputError("mean over zero rows");
    if (x.rows() % block != 0) {
        throw ShapeError("mean_blocks: " + std::to_string(x.rows()) + " rows not divisible by " +
                         std::to_string(block));
    }
    const std::size_t groups = x.rows() / block, n = x.cols();
    Tensor out({groups, n});
    const double inv = 1.0 / static_cast<double>(block);
    for (std::size_t b = 0; b < groups; ++b) {
        for (std::size_t r = 0; r < block; ++r)
            for (std::size_t j = 0; j < n; ++j) out(b, j) += x(b * block + r, j);
        for (std::size_t j = 0; j < n; ++j) out(b, j) *= inv;
    }
    return tape_of(a).record(std::move(out), a.requires_grad(),
                             [a, block, groups, n, inv](Tape& tp, const Tensor& g) {
                                 Tensor& ga = tp.grad_buffer(a);
                                 for (std::size_t b = 0; b < groups; ++b)
                                     for (std::size_t r = 0; r < block; ++r)
                                         for (std::size_t j = 0; j < n; ++j)
                                             ga[(b * block + r) * n + j] += g[b * n + j] * inv;
                             });
}

Var scale_blocks(Var a, Var s, std::size_t block) {
    const Tensor& x = a.value();
    const Tensor& sv = s.value();
    require_rank2(x, "scale_blocks");
    if (block == 0 || x.rows() != sv.size() * block) {
        throw ShapeError("scale_blocks: " + shape_str(x.shape()) + " vs scales " + shape_str(sv.shape()));
    }
    const std::size_t n = x.cols();
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double f = sv[r / block];
        for (std::size_t j = 0; j < n; ++j) out(r, j) *= f;
    }
    return tape_of(a).record(std::move(out), any_grad({a, s}), [a, s, block, n](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(a);
        const Tensor& sv2 = tp.value(s);
        const std::size_t rows = xv.rows();
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buffer(a);
            for (std::size_t r = 0; r < rows; ++r) {
                const double f = sv2[r / block];
                for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r * n + j] * f;
            }
        }
        if (tp.requires_grad(s)) {
            Tensor& gs = tp.grad_buffer(s);
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += g[r * n + j] * xv[r * n + j];
                gs[r / block] += acc;
            }
        }
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Tensor& x = a.value();
    require_rank2(x, "slice_cols");
    if (begin + count > x.cols()) throw ShapeError("slice_cols out of range on " + shape_str(x.shape()));
    const std::size_t rows = x.rows(), n = x.cols();
    Tensor out({rows, count});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j) out(r, j) = x(r, begin + j);
    return tape_of(a).record(std::move(out), a.requires_grad(),
                             [a, begin, count, rows, n](Tape& tp, const Tensor& g) {
                                 Tensor& ga = tp.grad_buffer(a);
                                 for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < count; ++j)
                                         ga[r * n + begin + j] += g[r * count + j];
                             });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    const std::size_t rows = parts[0].value().rows();
    std::size_t total = 0;
    bool rg = false;
    for (const Var& p : parts) {
        require_rank2(p.value(), "concat_cols");
        if (p.value().rows() != rows) throw ShapeError("concat_cols: row counts differ");
        total += p.value().cols();
        rg = rg || p.requires_grad();
    }
    Tensor out({rows, total});
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < v.cols(); ++j) out(r, off + j) = v(r, j);
        off += v.cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return tape_of(parts[0]).record(std::move(out), rg, [ps, rows, total](Tape& tp, const Tensor& g) {
        std::size_t o = 0;
        for (const Var& p : ps) {
            const std::size_t c = tp.value(p).cols();
            if (tp.requires_grad(p)) {
                Tensor& gp = tp.grad_buffer(p);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gp[r * c + j] += g[r * total + o + j];
            }
            o += c;
        }
    });
}

Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t tokens, std::size_t heads) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    require_same(qv, kv, "attention");
    require_same(qv, vv, "attention");
    const std::size_t d = qv.cols();
    if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by head count");
    if (qv.rows() != batch * tokens) throw ShapeError("attention: rows != batch * tokens");
    const std::size_t hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    // probs[(b * heads + h)] is a tokens x tokens row-stochastic matrix.
    std::vector<Tensor> probs(batch * heads);
    Tensor out({batch * tokens, d});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor p({tokens, tokens});
            for (std::size_t i = 0; i < tokens; ++i) {
                const double* qi = &qv(b * tokens + i, h * hd);
                for (std::size_t j = 0; j < tokens; ++j) {
                    const double* kj = &kv(b * tokens + j, h * hd);
                    double s = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    p(i, j) = s * scale;
                }
                softmax_row_inplace(&p(i, 0), tokens);
                double* oi = &out(b * tokens + i, h * hd);
                for (std::size_t j = 0; j < tokens; ++j) {
                    const double pij = p(i, j);
                    const double* vj = &vv(b * tokens + j, h * hd);
                    for (std::size_t c = 0; c < hd; ++c) oi[c] += pij * vj[c];
                }
            }
            probs[b * heads + h] = std::move(p);
        }
    }
    return tape_of(q).record(
        std::move(out), any_grad({q, k, v}),
        [q, k, v, batch, tokens, heads, hd, d, scale, probs = std::move(probs)](Tape& tp, const Tensor& g) {
            const Tensor& qv2 = tp.value(q);
            const Tensor& kv2 = tp.value(k);
            const Tensor& vv2 = tp.value(v);
            const bool gq = tp.requires_grad(q), gk = tp.requires_grad(k), gv = tp.requires_grad(v);
            Tensor* dq = gq ? &tp.grad_buffer(q) : nullptr;
            Tensor* dk = gk ? &tp.grad_buffer(k) : nullptr;
            Tensor* dv = gv ? &tp.grad_buffer(v) : nullptr;
            std::vector<double> dp(tokens);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const Tensor& p = probs[b * heads + h];
                    for (std::size_t i = 0; i < tokens; ++i) {
                        const double* gi = &g[(b * tokens + i) * d + h * hd];
                        // dP = dO V^T ; dV += P^T dO
                        double dot = 0.0;
                        for (std::size_t j = 0; j < tokens; ++j) {
                            const double* vj = &vv2[(b * tokens + j) * d + h * hd];
                            double s = 0.0;
                            for (std::size_t c = 0; c < hd; ++c) s += gi[c] * vj[c];
                            dp[j] = s;
                            dot += s * p(i, j);
                            if (dv) {
                                double* dvj = &(*dv)[(b * tokens + j) * d + h * hd];
                                const double pij = p(i, j);
                                for (std::size_t c = 0; c < hd; ++c) dvj[c] += pij * gi[c];
                            }
                        }
                        // dS = P .* (dP - rowdot); S = scale * q k^T
                        const double* qi = &qv2[(b * tokens + i) * d + h * hd];
                        double* dqi = dq ? &(*dq)[(b * tokens + i) * d + h * hd] : nullptr;
                        for (std::size_t j = 0; j < tokens; ++j) {
                            const double ds = p(i, j) * (dp[j] - dot) * scale;
                            if (ds == 0.0) continue;
                            if (dqi) {
                                const double* kj = &kv2[(b * tokens + j) * d + h * hd];
                                for (std::size_t c = 0; c < hd; ++c) dqi[c] += ds * kj[c];
                            }
                            if (dk) {
                                double* dkj = &(*dk)[(b * tokens + j) * d + h * hd];
                                for (std::size_t c = 0; c < hd; ++c) dkj[c] += ds * qi[c];
                            }
                        }
                    }
                }
            }
        });
}

Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    return tape_of(a).record(Tensor({1, 1}, {s}), a.requires_grad(), [a](Tape& tp, const Tensor& g) {
        Tensor& ga = tp.grad_buffer(a);
        for (double& x : ga.data()) x += g[0];
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw EmptyInputError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var squared_error(Var a, Var b) {
    require_same(a.value(), b.value(), "squared_error");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
    return tape_of(a).record(Tensor({1, 1}, {s}), any_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
        const Tensor& av2 = tp.value(a);
        const Tensor& bv2 = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buffer(a);
            for (std::size_t i = 0; i < av2.size(); ++i) ga[i] += 2.0 * g[0] * (av2[i] - bv2[i]);
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buffer(b);
            for (std::size_t i = 0; i < av2.size(); ++i) gb[i] -= 2.0 * g[0] * (av2[i] - bv2[i]);
        }
    });
}

Var dice_loss(Var probs, const Tensor& target, std::size_t groups, double eps) {
    const Tensor& p = probs.value();
    if (p.size() != target.size()) {
        throw ShapeError("dice_loss: probabilities " + shape_str(p.shape()) + " vs target " +
                         shape_str(target.shape()));
    }
    if (groups == 0 || p.size() % groups != 0) throw ShapeError("dice_loss: bad group count");
    const std::size_t per = p.size() / groups;
    std::vector<double> inter(groups, 0.0), denom(groups, 0.0);
    double loss = 0.0;
    for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t i = gi * per; i < (gi + 1) * per; ++i) {
            inter[gi] += p[i] * target[i];
            denom[gi] += p[i] + target[i];
        }
        loss += 1.0 - (2.0 * inter[gi] + eps) / (denom[gi] + eps);
    }
    loss /= static_cast<double>(groups);
    return tape_of(probs).record(
        Tensor({1, 1}, {loss}), probs.requires_grad(),
        [probs, target, groups, per, eps, inter = std::move(inter), denom = std::move(denom)](Tape& tp,
                                                                                          const Tensor& g) {
            Tensor& gp = tp.grad_buffer(probs);
            const double w = g[0] / static_cast<double>(groups);
            for (std::size_t gi = 0; gi < groups; ++gi) {
                const double num = 2.0 * inter[gi] + eps;
                const double den = denom[gi] + eps;
                for (std::size_t i = gi * per; i < (gi + 1) * per; ++i) {
                    // d/dp [1 - num/den] = -(2 t den - num) / den^2
                    gp[i] += -w * (2.0 * target[i] * den - num) / (den * den);
                }
            }
        });
}

Var bce_loss(Var probs, const Tensor& target, double clamp) {
    const Tensor& p = probs.value();
    if (p.size() != target.size()) {
        throw ShapeError("bce_loss: probabilities " + shape_str(p.shape()) + " vs target " +
                         shape_str(target.shape()));
    }
    if (p.size() == 0) throw EmptyInputError("bce over zero pixels");
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = std::clamp(p[i], clamp, 1.0 - clamp);
        loss -= target[i] * std::log(pc) + (1.0 - target[i]) * std::log(1.0 - pc);
    }
    const double n = static_cast<double>(p.size());
    loss /= n;
    return tape_of(probs).record(Tensor({1, 1}, {loss}), probs.requires_grad(),
                                 [probs, target, clamp, n](Tape& tp, const Tensor& g) {
                                     Tensor& gp = tp.grad_buffer(probs);
                                     const Tensor& pv = tp.value(probs);
                                     for (std::size_t i = 0; i < pv.size(); ++i) {
                                         const double x = pv[i];
                                         if (x < clamp || x > 1.0 - clamp) continue;
                                         gp[i] += g[0] / n * (-target[i] / x + (1.0 - target[i]) / (1.0 - x));
                                     }
                                 });
}

}  // namespace ops
}  // namespace lcl
