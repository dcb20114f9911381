#include "flowloc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "flowloc/util.hpp"

namespace flowloc::ad {

std::size_t Tensor::numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(shape);
    if (values.size() != numel_of(t.shape))
        throw std::invalid_argument("tensor data length does not match shape");
    t.data = std::move(values);
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, rng::Stream& rs, double scale) {
    Tensor t(std::move(shape));
    for (double& x : t.data) x = rs.normal() * scale;
    return t;
}

Tensor Tensor::randu(std::vector<int> shape, rng::Stream& rs, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& x : t.data) x = rs.uniform(lo, hi);
    return t;
}

Tape::Node& Tape::node(int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::out_of_range("value does not belong to this tape");
    return nodes_[static_cast<std::size_t>(id)];
}

const Tape::Node& Tape::node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::out_of_range("value does not belong to this tape");
    return nodes_[static_cast<std::size_t>(id)];
}

Value Tape::input(Tensor t, bool requires_grad) {
    Node n;
    n.val = std::move(t);
    n.rg = requires_grad;
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1, this};
}

Value Tape::emplace(Tensor value, bool requires_grad, BackFn back) {
    Node n;
    n.val = std::move(value);
    n.rg = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1, this};
}

Tensor& Tape::grad_ref(int id) {
    Node& n = node(id);
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.val.shape);
        n.grad_alloc = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Value v) { return grad_ref(v.id); }

void Tape::backward(Value loss) {
    if (backward_done_) throw std::logic_error("tape already consumed by backward()");
    backward_done_ = true;
    Node& ln = node(loss.id);
    if (ln.val.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad_ref(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.rg || !n.grad_alloc || !n.back) continue;
        n.back(*this, id);
    }
}

namespace {

void require_same_tape(Value a, Value b) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw std::invalid_argument("operands live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Collapses an N-d shape around `axis` into [outer, n, inner].
void axis_dims(const std::vector<int>& shape, int axis, std::size_t& outer, std::size_t& n,
               std::size_t& inner) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= shape.size())
        throw std::invalid_argument("axis out of range");
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(shape[i]);
    n = static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
        inner *= static_cast<std::size_t>(shape[i]);
}

// Shared builder for elementwise unary ops: y = f(x), dx += dy * dfdx.
Value unary(Value a, std::function<double(double)> f,
            std::function<double(double, double)> dfdx_of_x_y) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
    const int pid = a.id;
    auto d = std::make_shared<std::function<double(double, double)>>(std::move(dfdx_of_x_y));
    return tape.emplace(std::move(y), tape.rg_of(pid), [pid, d](Tape& t, int self) {
        if (!t.rg_of(pid)) return;
        const Tensor& g = t.grad_ref(self);
        const Tensor& x = t.val_of(pid);
        const Tensor& y = t.val_of(self);
        Tensor& gx = t.grad_ref(pid);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (*d)(x[i], y[i]);
    });
}

}  // namespace

Value add(Value a, Value b) {
    require_same_tape(a, b);
    Tape& tape = *a.tape;
    const Tensor& xa = tape.val(a);
    const Tensor& xb = tape.val(b);
    require_same_shape(xa, xb, "add");
    Tensor y(xa.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xa[i] + xb[i];
    const int pa = a.id, pb = b.id;
    return tape.emplace(std::move(y), tape.rg_of(pa) || tape.rg_of(pb),
                        [pa, pb](Tape& t, int self) {
                            const Tensor& g = t.grad_ref(self);
                            if (t.rg_of(pa)) {
                                Tensor& ga = t.grad_ref(pa);
                                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                            }
                            if (t.rg_of(pb)) {
                                Tensor& gb = t.grad_ref(pb);
                                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
                            }
                        });
}

Value sub(Value a, Value b) {
    require_same_tape(a, b);
    Tape& tape = *a.tape;
    const Tensor& xa = tape.val(a);
    const Tensor& xb = tape.val(b);
    require_same_shape(xa, xb, "sub");
    Tensor y(xa.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xa[i] - xb[i];
    const int pa = a.id, pb = b.id;
    return tape.emplace(std::move(y), tape.rg_of(pa) || tape.rg_of(pb),
                        [pa, pb](Tape& t, int self) {
                            const Tensor& g = t.grad_ref(self);
                            if (t.rg_of(pa)) {
                                Tensor& ga = t.grad_ref(pa);
                                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                            }
                            if (t.rg_of(pb)) {
                                Tensor& gb = t.grad_ref(pb);
                                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                            }
                        });
}

Value multiply(Value a, Value b) {
    require_same_tape(a, b);
    Tape& tape = *a.tape;
    const Tensor& xa = tape.val(a);
    const Tensor& xb = tape.val(b);
    require_same_shape(xa, xb, "multiply");
    Tensor y(xa.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xa[i] * xb[i];
    const int pa = a.id, pb = b.id;
    return tape.emplace(std::move(y), tape.rg_of(pa) || tape.rg_of(pb),
                        [pa, pb](Tape& t, int self) {
                            const Tensor& g = t.grad_ref(self);
                            const Tensor& va = t.val_of(pa);
                            const Tensor& vb = t.val_of(pb);
                            if (t.rg_of(pa)) {
                                Tensor& ga = t.grad_ref(pa);
                                for (std::size_t i = 0; i < g.numel(); ++i)
                                    ga[i] += g[i] * vb[i];
                            }
                            if (t.rg_of(pb)) {
                                Tensor& gb = t.grad_ref(pb);
                                for (std::size_t i = 0; i < g.numel(); ++i)
                                    gb[i] += g[i] * va[i];
                            }
                        });
}

Value affine(Value a, double mul, double addc) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    Tensor y(x.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = mul * x[i] + addc;
    const int pid = a.id;
    return tape.emplace(std::move(y), tape.rg_of(pid), [pid, mul](Tape& t, int self) {
        if (!t.rg_of(pid)) return;
        const Tensor& g = t.grad_ref(self);
        Tensor& gx = t.grad_ref(pid);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += mul * g[i];
    });
}

Value scale(Value a, double c) { return affine(a, c, 0.0); }

Value matmul(Value a, Value b) {
    require_same_tape(a, b);
    Tape& tape = *a.tape;
    const Tensor& xa = tape.val(a);
    const Tensor& xb = tape.val(b);
    if (xa.shape.size() != 2 || xb.shape.size() != 2 || xa.shape[1] != xb.shape[0])
        throw std::invalid_argument("matmul: needs [n,k] x [k,m]");
    const std::size_t n = static_cast<std::size_t>(xa.shape[0]);
    const std::size_t k = static_cast<std::size_t>(xa.shape[1]);
    const std::size_t m = static_cast<std::size_t>(xb.shape[1]);
    Tensor y({xa.shape[0], xb.shape[1]});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = xa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = &xb.data[p * m];
            double* yrow = &y.data[i * m];
            for (std::size_t j = 0; j < m; ++j) yrow[j] += av * brow[j];
        }
    const int pa = a.id, pb = b.id;
    return tape.emplace(std::move(y), tape.rg_of(pa) || tape.rg_of(pb),
                        [pa, pb, n, k, m](Tape& t, int self) {
                            const Tensor& g = t.grad_ref(self);
                            const Tensor& va = t.val_of(pa);
                            const Tensor& vb = t.val_of(pb);
                            if (t.rg_of(pa)) {  // dA = G B^T
                                Tensor& ga = t.grad_ref(pa);
                                for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < m; ++j) {
                                        const double gv = g[i * m + j];
                                        if (gv == 0.0) continue;
                                        const double* brow = &vb.data[0] + j;
                                        double* garow = &ga.data[i * k];
                                        for (std::size_t p = 0; p < k; ++p)
                                            garow[p] += gv * brow[p * m];
                                    }
                            }
                            if (t.rg_of(pb)) {  // dB = A^T G
                                Tensor& gb = t.grad_ref(pb);
                                for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t p = 0; p < k; ++p) {
                                        const double av = va[i * k + p];
                                        if (av == 0.0) continue;
                                        const double* grow = &g.data[i * m];
                                        double* gbrow = &gb.data[p * m];
                                        for (std::size_t j = 0; j < m; ++j)
                                            gbrow[j] += av * grow[j];
                                    }
                            }
                        });
}

Value transpose(Value a) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    if (x.shape.size() != 2) throw std::invalid_argument("transpose: needs a matrix");
    const std::size_t n = static_cast<std::size_t>(x.shape[0]);
    const std::size_t m = static_cast<std::size_t>(x.shape[1]);
    Tensor y({x.shape[1], x.shape[0]});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) y[j * n + i] = x[i * m + j];
    const int pid = a.id;
    return tape.emplace(std::move(y), tape.rg_of(pid), [pid, n, m](Tape& t, int self) {
        if (!t.rg_of(pid)) return;
        const Tensor& g = t.grad_ref(self);
        Tensor& gx = t.grad_ref(pid);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
    });
}

Value add_rows(Value a, Value row) {
    require_same_tape(a, row);
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    const Tensor& r = tape.val(row);
    if (x.shape.size() != 2) throw std::invalid_argument("add_rows: needs a matrix");
    const std::size_t n = static_cast<std::size_t>(x.shape[0]);
    const std::size_t m = static_cast<std::size_t>(x.shape[1]);
    if (r.numel() != m) throw std::invalid_argument("add_rows: row length mismatch");
    Tensor y(x.shape);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) y[i * m + j] = x[i * m + j] + r[j];
    const int pa = a.id, pr = row.id;
    return tape.emplace(std::move(y), tape.rg_of(pa) || tape.rg_of(pr),
                        [pa, pr, n, m](Tape& t, int self) {
                            const Tensor& g = t.grad_ref(self);
                            if (t.rg_of(pa)) {
                                Tensor& gx = t.grad_ref(pa);
                                for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                            }
                            if (t.rg_of(pr)) {
                                Tensor& gr = t.grad_ref(pr);
                                for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < m; ++j)
                                        gr[j] += g[i * m + j];
                            }
                        });
}

Value relu(Value a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value sigmoid(Value a) {
    return unary(
        a,
        [](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        },
        [](double, double y) { return y * (1.0 - y); });
}

Value tanh_op(Value a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Value exp_op(Value a) {
    return unary(a, [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
}

Value log_op(Value a) {
    return unary(a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Value softplus(Value a) {
    return unary(
        a,
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
        [](double x, double) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        });
}

Value softmax(Value a, int axis) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    std::size_t outer, n, inner;
    axis_dims(x.shape, axis, outer, n, inner);
    Tensor y(x.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = x[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(x[base + i * inner] - mx);
                y[base + i * inner] = e;
                s += e;
            }
            for (std::size_t i = 0; i < n; ++i) y[base + i * inner] /= s;
        }
    const int pid = a.id;
    return tape.emplace(std::move(y), tape.rg_of(pid),
                        [pid, outer, n, inner](Tape& t, int self) {
                            if (!t.rg_of(pid)) return;
                            const Tensor& g = t.grad_ref(self);
                            const Tensor& y = t.val_of(self);
                            Tensor& gx = t.grad_ref(pid);
                            for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t in = 0; in < inner; ++in) {
                                    const std::size_t base = o * n * inner + in;
                                    double dot = 0.0;
                                    for (std::size_t i = 0; i < n; ++i)
                                        dot += g[base + i * inner] * y[base + i * inner];
                                    for (std::size_t i = 0; i < n; ++i)
                                        gx[base + i * inner] +=
                                            y[base + i * inner] * (g[base + i * inner] - dot);
                                }
                        });
}

Value log_sum_exp(Value a, int axis) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    std::size_t outer, n, inner;
    axis_dims(x.shape, axis, outer, n, inner);
    std::vector<int> oshape = x.shape;
    oshape[static_cast<std::size_t>(axis)] = 1;
    Tensor y(oshape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = x[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += std::exp(x[base + i * inner] - mx);
            y[o * inner + in] = mx + std::log(s);
        }
    const int pid = a.id;
    return tape.emplace(std::move(y), tape.rg_of(pid),
                        [pid, outer, n, inner](Tape& t, int self) {
                            if (!t.rg_of(pid)) return;
                            const Tensor& g = t.grad_ref(self);
                            const Tensor& y = t.val_of(self);
                            const Tensor& x = t.val_of(pid);
                            Tensor& gx = t.grad_ref(pid);
                            for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t in = 0; in < inner; ++in) {
                                    const std::size_t base = o * n * inner + in;
                                    const double gy = g[o * inner + in];
                                    const double ly = y[o * inner + in];
                                    if (gy == 0.0) continue;
                                    for (std::size_t i = 0; i < n; ++i)
                                        gx[base + i * inner] +=
                                            gy * std::exp(x[base + i * inner] - ly);
                                }
                        });
}

namespace {

// Shared layer-norm core: returns normalized values plus cached statistics.
struct LnCache {
    std::vector<double> inv;  // 1/sqrt(var+eps) per slice
};

Tensor layer_norm_forward(const Tensor& x, std::size_t outer, std::size_t n,
                          std::size_t inner, double eps, LnCache& cache) {
    Tensor y(x.shape);
    cache.inv.resize(outer * inner);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += x[base + i * inner];
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = x[base + i * inner] - mu;
                var += d * d;
            }
            var /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(var + eps);
            cache.inv[o * inner + in] = inv;
            for (std::size_t i = 0; i < n; ++i)
                y[base + i * inner] = (x[base + i * inner] - mu) * inv;
        }
    return y;
}

// dx for plain layer norm given upstream dyhat (gradient w.r.t. normalized y).
void layer_norm_backward(const Tensor& yhat, const std::vector<double>& invs,
                         const Tensor& dyhat, std::size_t outer, std::size_t n,
                         std::size_t inner, Tensor& gx) {
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            const double inv = invs[o * inner + in];
            double mg = 0.0, mgy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                mg += dyhat[base + i * inner];
                mgy += dyhat[base + i * inner] * yhat[base + i * inner];
            }
            mg /= static_cast<double>(n);
            mgy /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                gx[base + i * inner] += inv * (dyhat[base + i * inner] - mg -
                                               yhat[base + i * inner] * mgy);
        }
}

}  // namespace

Value layer_norm(Value a, int axis, double eps) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    std::size_t outer, n, inner;
    axis_dims(x.shape, axis, outer, n, inner);
    auto cache = std::make_shared<LnCache>();
    Tensor y = layer_norm_forward(x, outer, n, inner, eps, *cache);
    const int pid = a.id;
    return tape.emplace(std::move(y), tape.rg_of(pid),
                        [pid, outer, n, inner, cache](Tape& t, int self) {
                            if (!t.rg_of(pid)) return;
                            const Tensor& g = t.grad_ref(self);
                            const Tensor& y = t.val_of(self);
                            Tensor& gx = t.grad_ref(pid);
                            layer_norm_backward(y, cache->inv, g, outer, n, inner, gx);
                        });
}

Value layer_norm_affine(Value a, int axis, Value gamma, Value beta, double eps) {
    require_same_tape(a, gamma);
    require_same_tape(a, beta);
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    std::size_t outer, n, inner;
    axis_dims(x.shape, axis, outer, n, inner);
    const Tensor& gm = tape.val(gamma);
    const Tensor& bt = tape.val(beta);
    if (gm.numel() != n || bt.numel() != n)
        throw std::invalid_argument("layer_norm_affine: gamma/beta length mismatch");
    auto cache = std::make_shared<LnCache>();
    Tensor yhat = layer_norm_forward(x, outer, n, inner, eps, *cache);
    auto yhat_kept = std::make_shared<Tensor>(yhat);
    Tensor y(x.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t ix = o * n * inner + i * inner + in;
                y[ix] = gm[i] * yhat[ix] + bt[i];
            }
    const int pid = a.id, pg = gamma.id, pb = beta.id;
    return tape.emplace(
        std::move(y), tape.rg_of(pid) || tape.rg_of(pg) || tape.rg_of(pb),
        [pid, pg, pb, outer, n, inner, cache, yhat_kept](Tape& t, int self) {
            const Tensor& g = t.grad_ref(self);
            const Tensor& gm = t.val_of(pg);
            const Tensor& yh = *yhat_kept;
            if (t.rg_of(pg)) {
                Tensor& gg = t.grad_ref(pg);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t in = 0; in < inner; ++in) {
                            const std::size_t ix = o * n * inner + i * inner + in;
                            gg[i] += g[ix] * yh[ix];
                        }
            }
            if (t.rg_of(pb)) {
                Tensor& gb = t.grad_ref(pb);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t in = 0; in < inner; ++in)
                            gb[i] += g[o * n * inner + i * inner + in];
            }
            if (t.rg_of(pid)) {
                Tensor dyhat(t.val_of(pid).shape);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t in = 0; in < inner; ++in) {
                            const std::size_t ix = o * n * inner + i * inner + in;
                            dyhat[ix] = g[ix] * gm[i];
                        }
                Tensor& gx = t.grad_ref(pid);
                layer_norm_backward(yh, cache->inv, dyhat, outer, n, inner, gx);
            }
        });
}

Value dropout(Value a, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must be in [0,1)");
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    rng::Stream rs(seed);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < x.numel(); ++i)
        (*mask)[i] = rs.uniform() < p ? 0.0 : keep_scale;
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * (*mask)[i];
    const int pid = a.id;
    return tape.emplace(std::move(y), tape.rg_of(pid), [pid, mask](Tape& t, int self) {
        if (!t.rg_of(pid)) return;
        const Tensor& g = t.grad_ref(self);
        Tensor& gx = t.grad_ref(pid);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (*mask)[i];
    });
}

Value gaussian_sample(Value mu, Value sigma, std::uint64_t seed) {
    require_same_tape(mu, sigma);
    Tape& tape = *mu.tape;
    const Tensor& m = tape.val(mu);
    const Tensor& s = tape.val(sigma);
    require_same_shape(m, s, "gaussian_sample");
    auto eps = std::make_shared<std::vector<double>>(m.numel());
    rng::Stream rs(seed);
    for (double& e : *eps) e = rs.normal();
    Tensor y(m.shape);
    for (std::size_t i = 0; i < m.numel(); ++i) y[i] = m[i] + s[i] * (*eps)[i];
    const int pm = mu.id, ps = sigma.id;
    return tape.emplace(std::move(y), tape.rg_of(pm) || tape.rg_of(ps),
                        [pm, ps, eps](Tape& t, int self) {
                            const Tensor& g = t.grad_ref(self);
                            if (t.rg_of(pm)) {
                                Tensor& gm = t.grad_ref(pm);
                                for (std::size_t i = 0; i < g.numel(); ++i) gm[i] += g[i];
                            }
                            if (t.rg_of(ps)) {
                                Tensor& gs = t.grad_ref(ps);
                                for (std::size_t i = 0; i < g.numel(); ++i)
                                    gs[i] += g[i] * (*eps)[i];
                            }
                        });
}

Value embed(Value table, const std::vector<int>& indices) {
    Tape& tape = *table.tape;
    const Tensor& tb = tape.val(table);
    if (tb.shape.size() != 2) throw std::invalid_argument("embed: table must be [V,D]");
    const std::size_t v = static_cast<std::size_t>(tb.shape[0]);
    const std::size_t d = static_cast<std::size_t>(tb.shape[1]);
    for (int ix : indices)
        if (ix < 0 || static_cast<std::size_t>(ix) >= v)
            throw std::invalid_argument("embed: index out of range");
    Tensor y({static_cast<int>(indices.size()), tb.shape[1]});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(&tb.data[static_cast<std::size_t>(indices[i]) * d], d, &y.data[i * d]);
    const int pid = table.id;
    auto idx = std::make_shared<std::vector<int>>(indices);
    return tape.emplace(std::move(y), tape.rg_of(pid), [pid, idx, d](Tape& t, int self) {
        if (!t.rg_of(pid)) return;
        const Tensor& g = t.grad_ref(self);
        Tensor& gt = t.grad_ref(pid);
        for (std::size_t i = 0; i < idx->size(); ++i) {
            double* dst = &gt.data[static_cast<std::size_t>((*idx)[i]) * d];
            const double* src = &g.data[i * d];
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Value concat(Value a, Value b, int axis) {
    require_same_tape(a, b);
    Tape& tape = *a.tape;
    const Tensor& xa = tape.val(a);
    const Tensor& xb = tape.val(b);
    if (xa.shape.size() != xb.shape.size())
        throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < xa.shape.size(); ++i)
        if (static_cast<int>(i) != axis && xa.shape[i] != xb.shape[i])
            throw std::invalid_argument("concat: shape mismatch off-axis");
    std::size_t outer, na, inner;
    axis_dims(xa.shape, axis, outer, na, inner);
    const std::size_t nb = static_cast<std::size_t>(xb.shape[static_cast<std::size_t>(axis)]);
    std::vector<int> oshape = xa.shape;
    oshape[static_cast<std::size_t>(axis)] = static_cast<int>(na + nb);
    Tensor y(oshape);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(&xa.data[o * na * inner], na * inner, &y.data[o * (na + nb) * inner]);
        std::copy_n(&xb.data[o * nb * inner], nb * inner,
                    &y.data[o * (na + nb) * inner + na * inner]);
    }
    const int pa = a.id, pb = b.id;
    return tape.emplace(std::move(y), tape.rg_of(pa) || tape.rg_of(pb),
                        [pa, pb, outer, na, nb, inner](Tape& t, int self) {
                            const Tensor& g = t.grad_ref(self);
                            if (t.rg_of(pa)) {
                                Tensor& ga = t.grad_ref(pa);
                                for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < na * inner; ++i)
                                        ga[o * na * inner + i] +=
                                            g[o * (na + nb) * inner + i];
                            }
                            if (t.rg_of(pb)) {
                                Tensor& gb = t.grad_ref(pb);
                                for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < nb * inner; ++i)
                                        gb[o * nb * inner + i] +=
                                            g[o * (na + nb) * inner + na * inner + i];
                            }
                        });
}

Value slice(Value a, int axis, int start, int len) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    std::size_t outer, n, inner;
    axis_dims(x.shape, axis, outer, n, inner);
    if (start < 0 || len <= 0 || static_cast<std::size_t>(start + len) > n)
        throw std::invalid_argument("slice: range out of bounds");
    std::vector<int> oshape = x.shape;
    oshape[static_cast<std::size_t>(axis)] = len;
    Tensor y(oshape);
    const std::size_t ln = static_cast<std::size_t>(len);
    const std::size_t st = static_cast<std::size_t>(start);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(&x.data[(o * n + st) * inner], ln * inner, &y.data[o * ln * inner]);
    const int pid = a.id;
    return tape.emplace(std::move(y), tape.rg_of(pid),
                        [pid, outer, n, inner, ln, st](Tape& t, int self) {
                            if (!t.rg_of(pid)) return;
                            const Tensor& g = t.grad_ref(self);
                            Tensor& gx = t.grad_ref(pid);
                            for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t i = 0; i < ln * inner; ++i)
                                    gx[(o * n + st) * inner + i] += g[o * ln * inner + i];
                        });
}

Value sum(Value a) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    double s = 0.0;
    for (double v : x.data) s += v;
    const int pid = a.id;
    return tape.emplace(Tensor::scalar(s), tape.rg_of(pid), [pid](Tape& t, int self) {
        if (!t.rg_of(pid)) return;
        const double g = t.grad_ref(self)[0];
        Tensor& gx = t.grad_ref(pid);
        for (double& v : gx.data) v += g;
    });
}

Value mean(Value a) {
    Tape& tape = *a.tape;
    const double inv_n = 1.0 / static_cast<double>(tape.val(a).numel());
    return scale(sum(a), inv_n);
}

Value mean_axis(Value a, int axis) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.val(a);
    std::size_t outer, n, inner;
    axis_dims(x.shape, axis, outer, n, inner);
    std::vector<int> oshape = x.shape;
    oshape[static_cast<std::size_t>(axis)] = 1;
    Tensor y(oshape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += x[o * n * inner + i * inner + in];
            y[o * inner + in] = s / static_cast<double>(n);
        }
    const int pid = a.id;
    return tape.emplace(std::move(y), tape.rg_of(pid),
                        [pid, outer, n, inner](Tape& t, int self) {
                            if (!t.rg_of(pid)) return;
                            const Tensor& g = t.grad_ref(self);
                            Tensor& gx = t.grad_ref(pid);
                            const double inv_n = 1.0 / static_cast<double>(n);
                            for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t in = 0; in < inner; ++in) {
                                    const double gv = g[o * inner + in] * inv_n;
                                    for (std::size_t i = 0; i < n; ++i)
                                        gx[o * n * inner + i * inner + in] += gv;
                                }
                        });
}

Value cross_entropy_logits(Value logits, int label) {
    Tape& tape = *logits.tape;
    const Tensor& x = tape.val(logits);
    if (x.shape.size() != 2 || x.shape[0] != 1)
        throw std::invalid_argument("cross_entropy_logits: expects [1,C] logits");
    if (label < 0 || label >= x.shape[1])
        throw std::invalid_argument("cross_entropy_logits: label out of range");
    Value lse = log_sum_exp(logits, 1);
    Value picked = slice(logits, 1, label, 1);
    return sum(sub(lse, picked));
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamConfig& cfg, long t) {
    if (t < 1) throw std::invalid_argument("adam_step: step index starts at 1");
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: params/grads length mismatch");
    if (cfg.m.empty()) {
        for (const Tensor& p : params) {
            cfg.m.push_back(Tensor::zeros(p.shape));
            cfg.v.push_back(Tensor::zeros(p.shape));
            if (cfg.amsgrad) cfg.vmax.push_back(Tensor::zeros(p.shape));
        }
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].shape != grads[k].shape)
            throw std::invalid_argument("adam_step: parameter/gradient shape mismatch");
        Tensor& p = params[k];
        const Tensor& g = grads[k];
        Tensor& m = cfg.m[k];
        Tensor& v = cfg.v[k];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            if (cfg.amsgrad) {
                Tensor& vm = cfg.vmax[k];
                vm[i] = std::max(vm[i], vhat);
                vhat = vm[i];
            }
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (cfg.weight_decay != 0.0) p[i] -= cfg.lr * cfg.weight_decay * p[i];
        }
    }
}

double cosine_lr(long t, long T, double lr_max, double lr_min) {
    if (T <= 0 || t < 0 || t > T) throw std::out_of_range("cosine_lr: need 0 <= t <= T");
    return lr_min + 0.5 * (lr_max - lr_min) *
                        (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(T)));
}

double finite_diff_check(const ModelFn& model_fn, const std::vector<Tensor>& params,
                         double eps, std::uint64_t seed) {
    auto eval = [&](const std::vector<Tensor>& ps) {
        Tape tape;
        std::vector<Value> vs;
        vs.reserve(ps.size());
        for (const Tensor& p : ps) vs.push_back(tape.input(p, false));
        Value loss = model_fn(tape, vs);
        if (tape.val(loss).numel() != 1)
            throw std::invalid_argument("finite_diff_check: loss must be scalar");
        return tape.val(loss)[0];
    };

    // Stochastic models (unfrozen dropout seeds etc.) violate the premise of
    // comparing two perturbed evaluations; probe twice and reject.
    const double probe1 = eval(params);
    const double probe2 = eval(params);
    if (probe1 != probe2)
        throw std::invalid_argument("finite_diff_check: model_fn is not deterministic");

    Tape tape;
    std::vector<Value> vs;
    for (const Tensor& p : params) vs.push_back(tape.input(p, true));
    Value loss = model_fn(tape, vs);
    tape.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Value v : vs) analytic.push_back(tape.grad(v));

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < params[k].numel(); ++i) coords.emplace_back(k, i);
    rng::Stream rs(rng::derive_seed(seed, fnv1a64("fdcheck")));
    rng::shuffle(coords, rs);
    const std::size_t n_check = std::min<std::size_t>(coords.size(), 120);

    double max_err = 0.0;
    std::vector<Tensor> work = params;
    for (std::size_t c = 0; c < n_check; ++c) {
        const auto [k, i] = coords[c];
        const double orig = work[k][i];
        work[k][i] = orig + eps;
        const double fp = eval(work);
        work[k][i] = orig - eps;
        const double fm = eval(work);
        work[k][i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err =
            std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace flowloc::ad
