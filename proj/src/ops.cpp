#include "adasgn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adasgn/errors.hpp"

namespace adasgn {

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    thread_local std::vector<double> bt;
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(a, bt.data(), c, m, k, n);
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void accumulate(Tensor& dst, const Tensor& src) {
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < src.numel(); ++i) d[i] += s[i];
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

}  // namespace

BatchNormState::BatchNormState(std::size_t channels)
    : running_mean(Tensor({channels}, 0.0), false), running_var(Tensor({channels}, 1.0), false) {}

Var matmul(Var a, Var b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sb.size() > 3) mismatch("matmul", sa, sb);

    std::size_t batch = 1, m = 0, k = sa.back(), n = sb.back();
    std::size_t a_stride = 0, b_stride = 0;
    Shape out_shape;
    if (sb.size() == 2) {
        if (sb[0] != k) mismatch("matmul", sa, sb);
        m = a.value().numel() / k;
        out_shape.assign(sa.begin(), sa.end() - 1);
        out_shape.push_back(n);
    } else if (sa.size() == 2) {
        if (sb[1] != k) mismatch("matmul", sa, sb);
        batch = sb[0];
        m = sa[0];
        b_stride = k * n;
        out_shape = {batch, m, n};
    } else if (sa.size() == 3) {
        if (sa[0] != sb[0] || sb[1] != k) mismatch("matmul", sa, sb);
        batch = sa[0];
        m = sa[1];
        a_stride = m * k;
        b_stride = k * n;
        out_shape = {batch, m, n};
    } else {
        mismatch("matmul", sa, sb);
    }

    Tensor out(out_shape);
    const double* ad = a.value().data();
    const double* bd = b.value().data();
    for (std::size_t i = 0; i < batch; ++i)
        gemm_nn(ad + i * a_stride, bd + i * b_stride, out.data() + i * m * n, m, k, n);
    count_multiply_adds(static_cast<std::uint64_t>(batch) * m * k * n);

    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const double* av = t.value(ia).data();
        const double* bv = t.value(ib).data();
        if (t.requires_grad(ia)) {
            double* ga = t.grad_of(ia).data();
            for (std::size_t i = 0; i < batch; ++i)
                gemm_nt(g.data() + i * m * n, bv + i * b_stride, ga + i * a_stride, m, n, k);
        }
        if (t.requires_grad(ib)) {
            double* gb = t.grad_of(ib).data();
            for (std::size_t i = 0; i < batch; ++i)
                gemm_tn(av + i * a_stride, g.data() + i * m * n, gb + i * b_stride, k, m, n);
        }
    });
}

Var transpose_last(Var x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw DimensionError("transpose_last: rank < 2 for " + shape_string(s));
    const std::size_t r = s[s.size() - 2], c = s.back(), blocks = x.value().numel() / (r * c);
    Shape os = s;
    std::swap(os[os.size() - 2], os.back());
    Tensor out(os);
    const double* in = x.value().data();
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.data()[b * r * c + j * r + i] = in[b * r * c + i * c + j];
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
        const double* g = t.upstream(self).data();
        double* gx = t.grad_of(ix).data();
        for (std::size_t b = 0; b < blocks; ++b)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += g[b * r * c + j * r + i];
    });
}

namespace {

template <class Fwd, class Bwd>
Var binary_same_shape(const char* name, Var a, Var b, Fwd fwd, Bwd bwd) {
    if (a.shape() != b.shape()) mismatch(name, a.shape(), b.shape());
    Tensor out(a.shape());
    const double* av = a.value().data();
    const double* bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(av[i], bv[i]);
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const double* x = t.value(ia).data();
        const double* y = t.value(ib).data();
        double* ga = t.requires_grad(ia) ? t.grad_of(ia).data() : nullptr;
        double* gb = t.requires_grad(ib) ? t.grad_of(ib).data() : nullptr;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            auto [da, db] = bwd(x[i], y[i], g[i]);
            if (ga) ga[i] += da;
            if (gb) gb[i] += db;
        }
    });
}

}  // namespace

Var add(Var a, Var b) {
    return binary_same_shape(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return std::pair{g, g}; });
}

Var sub(Var a, Var b) {
    return binary_same_shape(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return std::pair{g, -g}; });
}

Var mul(Var a, Var b) {
    return binary_same_shape(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Var scale(Var x, double s) {
    Tensor out = x.value();
    for (double& v : out.values()) v *= s;
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        double* gx = t.grad_of(ix).data();
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += s * g[i];
    });
}

Var add_broadcast(Var x, Var y) {
    const Shape& sx = x.shape();
    const Shape& sy = y.shape();
    if (sy.size() > sx.size() || !std::equal(sy.begin(), sy.end(), sx.end() - sy.size()))
        mismatch("add_broadcast", sx, sy);
    const std::size_t inner = y.value().numel(), blocks = x.value().numel() / inner;
    Tensor out = x.value();
    const double* yv = y.value().data();
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < inner; ++i) out[b * inner + i] += yv[i];
    const std::size_t ix = x.id(), iy = y.id();
    return x.tape()->record(std::move(out), {x, y}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        if (t.requires_grad(ix)) accumulate(t.grad_of(ix), g);
        if (t.requires_grad(iy)) {
            double* gy = t.grad_of(iy).data();
            for (std::size_t b = 0; b < blocks; ++b)
                for (std::size_t i = 0; i < inner; ++i) gy[i] += g[b * inner + i];
        }
    });
}

Var relu(Var x) {
    Tensor out = x.value();
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const double* in = t.value(ix).data();
        double* gx = t.grad_of(ix).data();
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (in[i] > 0.0) gx[i] += g[i];
    });
}

Var softmax_rows(Var x) {
    const std::size_t n = last_dim(x.value()), rows = x.value().numel() / n;
    Tensor out(x.shape());
    const double* in = x.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = in + r * n;
        double* yr = out.data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
    }
    const std::size_t ix = x.id();
    Tensor saved = out;
    return x.tape()->record(std::move(out), {x}, [=, y = std::move(saved)](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        double* gx = t.grad_of(ix).data();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
        }
    });
}

Var log_softmax_rows(Var x) {
    const std::size_t n = last_dim(x.value()), rows = x.value().numel() / n;
    Tensor out(x.shape());
    const double* in = x.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = in + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] - lse;
    }
    const std::size_t ix = x.id();
    Tensor saved = out;
    return x.tape()->record(std::move(out), {x}, [=, lp = std::move(saved)](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        double* gx = t.grad_of(ix).data();
        for (std::size_t r = 0; r < rows; ++r) {
            double gs = 0.0;
            for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r * n + j] - std::exp(lp[r * n + j]) * gs;
        }
    });
}

Var conv1d_temporal(Var x, Var w, Var bias) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sw.size() != 3) throw DimensionError("conv1d_temporal: weight must be [k,Cin,Cout], got " + shape_string(sw));
    const std::size_t k = sw[0], cin = sw[1], cout = sw[2];
    if (k % 2 == 0) throw ConfigError("conv1d_temporal: kernel size must be odd, got " + std::to_string(k));
    if (sx.size() < 2 || sx.size() > 3 || sx.back() != cin) mismatch("conv1d_temporal", sx, sw);
    if (bias.shape() != Shape{cout}) mismatch("conv1d_temporal", sw, bias.shape());
    const std::size_t batch = sx.size() == 3 ? sx[0] : 1;
    const std::size_t steps = sx[sx.size() - 2];
    const std::size_t half = k / 2;

    Shape os = sx;
    os.back() = cout;
    Tensor out(os);
    const double* xv = x.value().data();
    const double* wv = w.value().data();
    const double* bv = bias.value().data();
    for (std::size_t r = 0; r < batch * steps; ++r)
        std::copy(bv, bv + cout, out.data() + r * cout);
    // Output row t reads input row t + j - half for tap j.
    auto valid = [=](std::size_t j) {
        const std::size_t t0 = j < half ? half - j : 0;
        const std::size_t t1 = std::min(steps, steps + half - j);
        return std::pair{t0, t1};
    };
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < k; ++j) {
            auto [t0, t1] = valid(j);
            if (t0 >= t1) continue;
            const std::size_t s0 = t0 + j - half;
            gemm_nn(xv + (b * steps + s0) * cin, wv + j * cin * cout, out.data() + (b * steps + t0) * cout, t1 - t0,
                    cin, cout);
        }
    count_multiply_adds(static_cast<std::uint64_t>(batch) * steps * k * cin * cout);

    const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
    return x.tape()->record(std::move(out), {x, w, bias}, [=](Tape& t, std::size_t self) {
        const double* g = t.upstream(self).data();
        const double* xin = t.value(ix).data();
        const double* win = t.value(iw).data();
        double* gx = t.requires_grad(ix) ? t.grad_of(ix).data() : nullptr;
        double* gw = t.requires_grad(iw) ? t.grad_of(iw).data() : nullptr;
        if (t.requires_grad(ib)) {
            double* gb = t.grad_of(ib).data();
            for (std::size_t r = 0; r < batch * steps; ++r)
                for (std::size_t o = 0; o < cout; ++o) gb[o] += g[r * cout + o];
        }
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < k; ++j) {
                auto [t0, t1] = valid(j);
                if (t0 >= t1) continue;
                const std::size_t s0 = t0 + j - half;
                const double* gout = g + (b * steps + t0) * cout;
                if (gx) gemm_nt(gout, win + j * cin * cout, gx + (b * steps + s0) * cin, t1 - t0, cout, cin);
                if (gw) gemm_tn(xin + (b * steps + s0) * cin, gout, gw + j * cin * cout, cin, t1 - t0, cout);
            }
    });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode) {
    const std::size_t c = last_dim(x.value()), rows = x.value().numel() / c;
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) mismatch("batch_norm", x.shape(), gamma.shape());
    if (state.running_mean.value.numel() != c) mismatch("batch_norm", x.shape(), state.running_mean.value.shape());
    if (mode == Mode::Train && rows < 2)
        throw BatchSizeError("batch_norm: train mode needs at least 2 rows, got " + std::to_string(rows));

    std::vector<double> mu(c, 0.0), var(c, 0.0);
    const double* xv = x.value().data();
    if (mode == Mode::Train) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
        for (double& m : mu) m /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = xv[r * c + j] - mu[j];
                var[j] += d * d;
            }
        for (double& v : var) v /= static_cast<double>(rows);
        double* rm = state.running_mean.value.data();
        double* rv = state.running_var.value.data();
        for (std::size_t j = 0; j < c; ++j) {
            rm[j] = state.momentum * rm[j] + (1.0 - state.momentum) * mu[j];
            rv[j] = state.momentum * rv[j] + (1.0 - state.momentum) * var[j];
        }
    } else {
        std::copy_n(state.running_mean.value.data(), c, mu.begin());
        std::copy_n(state.running_var.value.data(), c, var.begin());
    }
    std::vector<double> inv_std(c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);

    Tensor xhat(x.shape());
    Tensor out(x.shape());
    const double* gv = gamma.value().data();
    const double* bv = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (xv[r * c + j] - mu[j]) * inv_std[j];
            xhat[r * c + j] = h;
            out[r * c + j] = gv[j] * h + bv[j];
        }

    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    const bool train = mode == Mode::Train;
    return x.tape()->record(
        std::move(out), {x, gamma, beta},
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
            const double* g = t.upstream(self).data();
            const double* gam = t.value(ig).data();
            if (t.requires_grad(ig)) {
                double* gg = t.grad_of(ig).data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
            }
            if (t.requires_grad(ib)) {
                double* gb = t.grad_of(ib).data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
            if (!t.requires_grad(ix)) return;
            double* gx = t.grad_of(ix).data();
            if (!train) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[r * c + j] * gam[j] * inv_std[j];
                return;
            }
            std::vector<double> sum_d(c, 0.0), sum_dh(c, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = g[r * c + j] * gam[j];
                    sum_d[j] += d;
                    sum_dh[j] += d * xhat[r * c + j];
                }
            const double inv_rows = 1.0 / static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = g[r * c + j] * gam[j];
                    gx[r * c + j] += inv_std[j] * (d - inv_rows * sum_d[j] - xhat[r * c + j] * inv_rows * sum_dh[j]);
                }
        });
}

Var max_pool_axis(Var x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size())
        throw DimensionError("max_pool_axis: axis " + std::to_string(axis) + " invalid for " + shape_string(s));
    std::size_t pre = 1, post = 1;
    for (std::size_t i = 0; i < axis; ++i) pre *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) post *= s[i];
    const std::size_t len = s[axis];
    Shape os;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) os.push_back(s[i]);
    if (os.empty()) os = {1};

    Tensor out(os);
    std::vector<std::size_t> arg(pre * post);
    const double* xv = x.value().data();
    for (std::size_t p = 0; p < pre; ++p)
        for (std::size_t q = 0; q < post; ++q) {
            std::size_t best = 0;
            double bv = xv[p * len * post + q];
            for (std::size_t i = 1; i < len; ++i) {
                const double v = xv[(p * len + i) * post + q];
                if (v > bv) {
                    bv = v;
                    best = i;
                }
            }
            out[p * post + q] = bv;
            arg[p * post + q] = (p * len + best) * post + q;
        }
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x}, [=, arg = std::move(arg)](Tape& t, std::size_t self) {
        const double* g = t.upstream(self).data();
        double* gx = t.grad_of(ix).data();
        for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[i];
    });
}

Var cross_entropy(Var logits, std::size_t label) {
    const std::size_t n = logits.value().numel();
    if (label >= n)
        throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " + std::to_string(n) +
                         " classes");
    std::vector<std::size_t> labels{label};
    return cross_entropy_mean(reshape(logits, {1, n}), labels);
}

Var cross_entropy_mean(Var logits, std::span<const std::size_t> labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2 || s[0] != labels.size())
        throw DimensionError("cross_entropy_mean: logits " + shape_string(s) + " vs " + std::to_string(labels.size()) +
                             " labels");
    const std::size_t rows = s[0], n = s[1];
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    for (std::size_t l : lab)
        if (l >= n)
            throw IndexError("cross_entropy: label " + std::to_string(l) + " out of range for " + std::to_string(n) +
                             " classes");
    Tensor prob(s);
    const double* xv = logits.value().data();
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (prob[r * n + j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) prob[r * n + j] /= z;
        total += mx + std::log(z) - xr[lab[r]];
    }
    const double inv = 1.0 / static_cast<double>(rows);
    const std::size_t il = logits.id();
    return logits.tape()->record(Tensor::scalar(total * inv), {logits},
                                 [=, prob = std::move(prob), lab = std::move(lab)](Tape& t, std::size_t self) {
                                     const double g = t.upstream(self)[0] * inv;
                                     double* gx = t.grad_of(il).data();
                                     for (std::size_t r = 0; r < rows; ++r)
                                         for (std::size_t j = 0; j < n; ++j)
                                             gx[r * n + j] += g * (prob[r * n + j] - (j == lab[r] ? 1.0 : 0.0));
                                 });
}

Var sum(Var x) {
    double total = 0.0;
    for (double v : x.value().values()) total += v;
    const std::size_t ix = x.id();
    return x.tape()->record(Tensor::scalar(total), {x}, [=](Tape& t, std::size_t self) {
        const double g = t.upstream(self)[0];
        for (double& v : t.grad_of(ix).values()) v += g;
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x},
                            [=](Tape& t, std::size_t self) { accumulate(t.grad_of(ix), t.upstream(self)); });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
    const Shape& s = x.shape();
    const std::size_t inner = x.value().numel() / s[0];
    if (rows.empty()) throw DimensionError("gather_rows: empty row selection");
    Shape os = s;
    os[0] = rows.size();
    Tensor out(os);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    const double* xv = x.value().data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= s[0])
            throw IndexError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " + shape_string(s));
        std::copy_n(xv + idx[r] * inner, inner, out.data() + r * inner);
    }
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x}, [=, idx = std::move(idx)](Tape& t, std::size_t self) {
        const double* g = t.upstream(self).data();
        double* gx = t.grad_of(ix).data();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t i = 0; i < inner; ++i) gx[idx[r] * inner + i] += g[r * inner + i];
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Shape os = parts[0].shape();
    std::size_t total = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != os.size() || !std::equal(s.begin() + 1, s.end(), os.begin() + 1))
            mismatch("concat_rows", os, s);
        total += s[0];
    }
    if (parts.size() == 1) return parts[0];
    os[0] = total;
    Tensor out(os);
    std::vector<std::size_t> offsets, ids;
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy_n(p.value().data(), p.value().numel(), out.data() + off);
        offsets.push_back(off);
        ids.push_back(p.id());
        off += p.value().numel();
    }
    return parts[0].tape()->record(std::move(out), parts,
                                   [offsets = std::move(offsets), ids = std::move(ids)](Tape& t, std::size_t self) {
                                       const double* g = t.upstream(self).data();
                                       for (std::size_t i = 0; i < ids.size(); ++i) {
                                           if (!t.requires_grad(ids[i])) continue;
                                           Tensor& gp = t.grad_of(ids[i]);
                                           for (std::size_t j = 0; j < gp.numel(); ++j) gp[j] += g[offsets[i] + j];
                                       }
                                   });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    const Shape& s = x.shape();
    if (count == 0 || begin + count > s[0])
        throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_string(s));
    const std::size_t inner = x.value().numel() / s[0];
    Shape os = s;
    os[0] = count;
    Tensor out(os);
    std::copy_n(x.value().data() + begin * inner, count * inner, out.data());
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        double* gx = t.grad_of(ix).data() + begin * inner;
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

Var scale_rows(Var x, Var g) {
    const Shape& s = x.shape();
    if (g.value().numel() != s[0]) mismatch("scale_rows", s, g.shape());
    const std::size_t rows = s[0], inner = x.value().numel() / rows;
    Tensor out = x.value();
    const double* gv = g.value().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] *= gv[r];
    const std::size_t ix = x.id(), ig = g.id();
    return x.tape()->record(std::move(out), {x, g}, [=](Tape& t, std::size_t self) {
        const double* up = t.upstream(self).data();
        const double* xv = t.value(ix).data();
        const double* gw = t.value(ig).data();
        if (t.requires_grad(ix)) {
            double* gx = t.grad_of(ix).data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < inner; ++i) gx[r * inner + i] += up[r * inner + i] * gw[r];
        }
        if (t.requires_grad(ig)) {
            double* gg = t.grad_of(ig).data();
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t i = 0; i < inner; ++i) acc += up[r * inner + i] * xv[r * inner + i];
                gg[r] += acc;
            }
        }
    });
}

Var pick(Var x, std::span<const std::size_t> idx) {
    const Shape& s = x.shape();
    if (s.size() != 2 || s[0] != idx.size())
        throw DimensionError("pick: " + shape_string(s) + " vs " + std::to_string(idx.size()) + " indices");
    const std::size_t n = s[1];
    std::vector<std::size_t> at(idx.begin(), idx.end());
    Tensor out({at.size()});
    for (std::size_t r = 0; r < at.size(); ++r) {
        if (at[r] >= n) throw IndexError("pick: column " + std::to_string(at[r]) + " out of range");
        out[r] = x.value()[r * n + at[r]];
    }
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x}, [=, at = std::move(at)](Tape& t, std::size_t self) {
        const double* g = t.upstream(self).data();
        double* gx = t.grad_of(ix).data();
        for (std::size_t r = 0; r < at.size(); ++r) gx[r * n + at[r]] += g[r];
    });
}

Var straight_through(Var soft, std::span<const std::size_t> hard) {
    const Shape& s = soft.shape();
    if (s.size() != 2 || s[0] != hard.size())
        throw DimensionError("straight_through: " + shape_string(s) + " vs " + std::to_string(hard.size()) +
                             " actions");
    Tensor out(s);
    for (std::size_t r = 0; r < hard.size(); ++r) {
        if (hard[r] >= s[1]) throw IndexError("straight_through: action " + std::to_string(hard[r]) + " out of range");
        out.at(r, hard[r]) = 1.0;
    }
    const std::size_t is = soft.id();
    return soft.tape()->record(std::move(out), {soft},
                               [=](Tape& t, std::size_t self) { accumulate(t.grad_of(is), t.upstream(self)); });
}

}  // namespace adasgn
