#include "promptir/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace promptir {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Tensor make_op(Shape shape, std::vector<double> data,
               std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool track = false;
    if (grad_enabled()) {
        for (const auto& t : inputs) track = track || t.node()->requires_grad;
    }
    if (track) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(backward);
    }
    return Tensor::wrap(std::move(node));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// outer x axis x inner decomposition around one axis.
struct AxisSplit {
    std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for " + shape_str(shape));
    }
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    s.len = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
        s.inner *= shape[i];
    return s;
}

void require_bchw(const Tensor& x, const char* op) {
    if (x.ndim() != 4) {
        throw std::invalid_argument(std::string(op) + ": expected BCHW tensor, got " + shape_str(x.shape()));
    }
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.data().begin(), a.data().end());
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        const double* g = self.grad.data();
        for (int k = 0; k < 2; ++k) {
            auto& p = *self.parents[static_cast<std::size_t>(k)];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            double* pg = p.grad.data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.data().begin(), a.data().end());
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        const double* g = self.grad.data();
        auto& pa = *self.parents[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += g[i];
        }
        auto& pb2 = *self.parents[1];
        if (pb2.requires_grad) {
            pb2.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb2.grad[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.data().begin(), a.data().end());
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        const double* g = self.grad.data();
        auto& pa = *self.parents[0];
        auto& pb2 = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double* bd = pb2.data.data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += g[i] * bd[i];
        }
        if (pb2.requires_grad) {
            pb2.ensure_grad();
            const double* ad = pa.data.data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb2.grad[i] += g[i] * ad[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= c;
    return make_op(a.shape(), std::move(out), {a}, [c](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * g[i];
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_op({1}, {s}, {a}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double g = self.grad[0];
        for (double& v : p.grad) v += g;
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) +
                                    " as " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_op(std::move(shape), std::move(out), {a}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += g[i];
    });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = xs[0].shape();
    Shape out_shape = s0;
    std::int64_t axis_total = 0;
    for (const auto& x : xs) {
        if (x.ndim() != static_cast<int>(s0.size())) {
            throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(x.shape()));
        }
        for (int d = 0; d < x.ndim(); ++d) {
            if (d != axis && x.dim(d) != s0[static_cast<std::size_t>(d)]) {
                throw std::invalid_argument("concat: dim " + std::to_string(d) + " mismatch " +
                                            shape_str(s0) + " vs " + shape_str(x.shape()));
            }
        }
        axis_total += x.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(axis_total);

    AxisSplit sp = split_axis(out_shape, axis, "concat");
    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    std::vector<std::int64_t> starts;
    std::int64_t pos = 0;
    for (const auto& x : xs) {
        starts.push_back(pos);
        const std::int64_t len = x.dim(axis);
        const double* src = x.data().data();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            double* dst = out.data() + (o * sp.len + pos) * sp.inner;
            const double* s = src + o * len * sp.inner;
            std::copy(s, s + len * sp.inner, dst);
        }
        pos += len;
    }
    std::vector<Tensor> inputs = xs;
    return make_op(out_shape, std::move(out), std::move(inputs), [sp, starts](TensorNode& self) {
        const double* g = self.grad.data();
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            AxisSplit psp = sp;
            psp.len = static_cast<std::int64_t>(p.data.size()) / (sp.outer * sp.inner);
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                const double* src = g + (o * sp.len + starts[k]) * sp.inner;
                double* dst = p.grad.data() + o * psp.len * sp.inner;
                for (std::int64_t i = 0; i < psp.len * sp.inner; ++i) dst[i] += src[i];
            }
        }
    });
}

Tensor narrow(const Tensor& a, int axis, int start, int length) {
    AxisSplit sp = split_axis(a.shape(), axis, "narrow");
    if (start < 0 || length <= 0 || start + length > sp.len) {
        throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                    std::to_string(start + length) + ") invalid for axis of size " +
                                    std::to_string(sp.len));
    }
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = length;
    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    const double* src = a.data().data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        const double* s = src + (o * sp.len + start) * sp.inner;
        std::copy(s, s + length * sp.inner, out.data() + o * length * sp.inner);
    }
    return make_op(out_shape, std::move(out), {a}, [sp, start, length](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            double* dst = p.grad.data() + (o * sp.len + start) * sp.inner;
            const double* s = g + o * length * sp.inner;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(length) * sp.inner; ++i) dst[i] += s[i];
        }
    });
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
    require_bchw(x, "slice_channels");
    return narrow(x, 1, c0, c1 - c0);
}

Tensor transpose2d(const Tensor& a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose2d: expected 2-D, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(a.size()));
    const double* src = a.data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = src[static_cast<std::size_t>(i) * n + j];
    return make_op({n, m}, std::move(out), {a}, [m, n](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i) p.grad[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
}

namespace {

// out[M,N] += op_a(A) * op_b(B) for one batch item; op_* is an optional
// transpose of the stored [rows,cols] layout. The buffers never alias.
// Register-blocked: four output rows share each B access.

template <bool kTransA>
void gemm_rows_acc(double* __restrict out, const double* __restrict a, const double* __restrict b,
                   std::int64_t m_dim, std::int64_t k_dim, std::int64_t n_dim) {
    constexpr std::int64_t kTileN = 64;
    auto a_at = [&](std::int64_t m, std::int64_t k) {
        return kTransA ? a[k * m_dim + m] : a[m * k_dim + k];
    };
    double acc0[kTileN], acc1[kTileN], acc2[kTileN], acc3[kTileN];
    for (std::int64_t n0 = 0; n0 < n_dim; n0 += kTileN) {
        const std::int64_t nt = std::min(kTileN, n_dim - n0);
        std::int64_t m = 0;
        for (; m + 4 <= m_dim; m += 4) {
            for (std::int64_t n = 0; n < nt; ++n) acc0[n] = acc1[n] = acc2[n] = acc3[n] = 0.0;
            for (std::int64_t k = 0; k < k_dim; ++k) {
                const double a0 = a_at(m, k), a1 = a_at(m + 1, k);
                const double a2 = a_at(m + 2, k), a3 = a_at(m + 3, k);
                const double* __restrict brow = b + k * n_dim + n0;
                for (std::int64_t n = 0; n < nt; ++n) {
                    acc0[n] += a0 * brow[n];
                    acc1[n] += a1 * brow[n];
                    acc2[n] += a2 * brow[n];
                    acc3[n] += a3 * brow[n];
                }
            }
            for (std::int64_t n = 0; n < nt; ++n) {
                out[m * n_dim + n0 + n] += acc0[n];
                out[(m + 1) * n_dim + n0 + n] += acc1[n];
                out[(m + 2) * n_dim + n0 + n] += acc2[n];
                out[(m + 3) * n_dim + n0 + n] += acc3[n];
            }
        }
        for (; m < m_dim; ++m) {
            for (std::int64_t n = 0; n < nt; ++n) acc0[n] = 0.0;
            for (std::int64_t k = 0; k < k_dim; ++k) {
                const double a0 = a_at(m, k);
                const double* __restrict brow = b + k * n_dim + n0;
                for (std::int64_t n = 0; n < nt; ++n) acc0[n] += a0 * brow[n];
            }
            for (std::int64_t n = 0; n < nt; ++n) out[m * n_dim + n0 + n] += acc0[n];
        }
    }
}

// B transposed: M*N dot products over K, tiled 4x2 so A and B rows are
// shared across the register block.
void gemm_dots_acc(double* __restrict out, const double* __restrict a, const double* __restrict b,
                   std::int64_t m_dim, std::int64_t k_dim, std::int64_t n_dim) {
    std::int64_t m = 0;
    for (; m + 4 <= m_dim; m += 4) {
        const double* __restrict a0 = a + m * k_dim;
        const double* __restrict a1 = a0 + k_dim;
        const double* __restrict a2 = a1 + k_dim;
        const double* __restrict a3 = a2 + k_dim;
        std::int64_t n = 0;
        for (; n + 2 <= n_dim; n += 2) {
            const double* __restrict b0 = b + n * k_dim;
            const double* __restrict b1 = b0 + k_dim;
            double s00 = 0, s10 = 0, s20 = 0, s30 = 0;
            double s01 = 0, s11 = 0, s21 = 0, s31 = 0;
            for (std::int64_t k = 0; k < k_dim; ++k) {
                const double v0 = b0[k], v1 = b1[k];
                s00 += a0[k] * v0;
                s01 += a0[k] * v1;
                s10 += a1[k] * v0;
                s11 += a1[k] * v1;
                s20 += a2[k] * v0;
                s21 += a2[k] * v1;
                s30 += a3[k] * v0;
                s31 += a3[k] * v1;
            }
            out[m * n_dim + n] += s00;
            out[m * n_dim + n + 1] += s01;
            out[(m + 1) * n_dim + n] += s10;
            out[(m + 1) * n_dim + n + 1] += s11;
            out[(m + 2) * n_dim + n] += s20;
            out[(m + 2) * n_dim + n + 1] += s21;
            out[(m + 3) * n_dim + n] += s30;
            out[(m + 3) * n_dim + n + 1] += s31;
        }
        for (; n < n_dim; ++n) {
            const double* __restrict brow = b + n * k_dim;
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (std::int64_t k = 0; k < k_dim; ++k) {
                const double bv = brow[k];
                s0 += a0[k] * bv;
                s1 += a1[k] * bv;
                s2 += a2[k] * bv;
                s3 += a3[k] * bv;
            }
            out[m * n_dim + n] += s0;
            out[(m + 1) * n_dim + n] += s1;
            out[(m + 2) * n_dim + n] += s2;
            out[(m + 3) * n_dim + n] += s3;
        }
    }
    for (; m < m_dim; ++m) {
        const double* __restrict arow = a + m * k_dim;
        for (std::int64_t n = 0; n < n_dim; ++n) {
            const double* __restrict brow = b + n * k_dim;
            double s = 0;
            for (std::int64_t k = 0; k < k_dim; ++k) s += arow[k] * brow[k];
            out[m * n_dim + n] += s;
        }
    }
}

void gemm_acc(double* __restrict out, const double* __restrict a, const double* __restrict b,
              std::int64_t m_dim, std::int64_t k_dim, std::int64_t n_dim,
              bool trans_a, bool trans_b) {
    if (!trans_b) {
        if (trans_a) gemm_rows_acc<true>(out, a, b, m_dim, k_dim, n_dim);
        else gemm_rows_acc<false>(out, a, b, m_dim, k_dim, n_dim);
    } else if (!trans_a) {
        // Short contractions drown in per-dot reduction overhead;
        // transposing B once turns them into the streaming kernel.
        if (k_dim <= 128 && m_dim >= 8) {
            thread_local std::vector<double> bt;
            bt.resize(static_cast<std::size_t>(k_dim * n_dim));
            for (std::int64_t n = 0; n < n_dim; ++n)
                for (std::int64_t k = 0; k < k_dim; ++k) bt[static_cast<std::size_t>(k * n_dim + n)] = b[n * k_dim + k];
            gemm_rows_acc<false>(out, a, bt.data(), m_dim, k_dim, n_dim);
            return;
        }
        gemm_dots_acc(out, a, b, m_dim, k_dim, n_dim);
    } else {
        // A and B both transposed; only reachable through bmm on two
        // pre-transposed operands, which the model never does.
        for (std::int64_t m = 0; m < m_dim; ++m) {
            double* orow = out + m * n_dim;
            for (std::int64_t n = 0; n < n_dim; ++n) {
                const double* brow = b + n * k_dim;
                double acc = 0.0;
                for (std::int64_t k = 0; k < k_dim; ++k) acc += a[k * m_dim + m] * brow[k];
                orow[n] += acc;
            }
        }
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    gemm_acc(out.data(), a.data().data(), b.data().data(), m, k, n, false, false);
    return make_op({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const double* g = self.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            gemm_acc(pa.grad.data(), g, pb.data.data(), m, n, k, false, true);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            gemm_acc(pb.grad.data(), pa.data.data(), g, k, m, n, true, false);
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0)) {
        throw std::invalid_argument("bmm: expected matching 3-D batches, got " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    }
    const std::int64_t nb = a.dim(0);
    const std::int64_t m = trans_a ? a.dim(2) : a.dim(1);
    const std::int64_t ka = trans_a ? a.dim(1) : a.dim(2);
    const std::int64_t kb = trans_b ? b.dim(2) : b.dim(1);
    const std::int64_t n = trans_b ? b.dim(1) : b.dim(2);
    if (ka != kb) {
        throw std::invalid_argument("bmm: inner dims differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + (trans_a ? " (trans_a)" : "") +
                                    (trans_b ? " (trans_b)" : ""));
    }
    const std::int64_t a_sz = a.dim(1) * static_cast<std::int64_t>(a.dim(2));
    const std::int64_t b_sz = b.dim(1) * static_cast<std::int64_t>(b.dim(2));
    std::vector<double> out(static_cast<std::size_t>(nb * m * n), 0.0);
    for (std::int64_t i = 0; i < nb; ++i) {
        gemm_acc(out.data() + i * m * n, a.data().data() + i * a_sz, b.data().data() + i * b_sz,
                 m, ka, n, trans_a, trans_b);
    }
    Shape out_shape{static_cast<int>(nb), static_cast<int>(m), static_cast<int>(n)};
    return make_op(out_shape, std::move(out), {a, b},
                   [nb, m, n, ka, a_sz, b_sz, trans_a, trans_b](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const double* g = self.grad.data();
        for (std::int64_t i = 0; i < nb; ++i) {
            const double* gi = g + i * m * n;
            const double* ai = pa.data.data() + i * a_sz;
            const double* bi = pb.data.data() + i * b_sz;
            if (pa.requires_grad) {
                pa.ensure_grad();
                double* dai = pa.grad.data() + i * a_sz;
                if (!trans_a) gemm_acc(dai, gi, bi, m, n, ka, false, !trans_b);
                else gemm_acc(dai, bi, gi, ka, n, m, trans_b, true);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                double* dbi = pb.grad.data() + i * b_sz;
                if (!trans_b) gemm_acc(dbi, ai, gi, ka, m, n, !trans_a, false);
                else gemm_acc(dbi, gi, ai, n, m, ka, true, trans_a);
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1)) {
        throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) +
                                    " x " + shape_str(weight.shape()));
    }
    const int batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_dim)) {
        throw std::invalid_argument("linear: bias shape " + shape_str(bias.shape()) +
                                    " does not match out dim " + std::to_string(out_dim));
    }
    std::vector<double> out(static_cast<std::size_t>(batch) * out_dim, 0.0);
    const double* xd = x.data().data();
    const double* wd = weight.data().data();
    for (int b = 0; b < batch; ++b) {
        const double* xr = xd + static_cast<std::int64_t>(b) * in;
        double* orow = out.data() + static_cast<std::int64_t>(b) * out_dim;
        for (int o = 0; o < out_dim; ++o) {
            const double* wr = wd + static_cast<std::int64_t>(o) * in;
            double acc = bias.defined() ? bias.data()[static_cast<std::size_t>(o)] : 0.0;
            for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
            orow[o] = acc;
        }
    }
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return make_op({batch, out_dim}, std::move(out), std::move(inputs),
                   [batch, in, out_dim, has_bias](TensorNode& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const double* g = self.grad.data();
        for (int b = 0; b < batch; ++b) {
            const double* grow = g + static_cast<std::int64_t>(b) * out_dim;
            if (px.requires_grad) {
                px.ensure_grad();
                double* dxr = px.grad.data() + static_cast<std::int64_t>(b) * in;
                for (int o = 0; o < out_dim; ++o) {
                    const double gv = grow[o];
                    const double* wr = pw.data.data() + static_cast<std::int64_t>(o) * in;
                    for (int i = 0; i < in; ++i) dxr[i] += gv * wr[i];
                }
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                const double* xr = px.data.data() + static_cast<std::int64_t>(b) * in;
                for (int o = 0; o < out_dim; ++o) {
                    const double gv = grow[o];
                    double* dwr = pw.grad.data() + static_cast<std::int64_t>(o) * in;
                    for (int i = 0; i < in; ++i) dwr[i] += gv * xr[i];
                }
            }
        }
        if (has_bias && self.parents[2]->requires_grad) {
            auto& pb = *self.parents[2];
            pb.ensure_grad();
            for (int b = 0; b < batch; ++b)
                for (int o = 0; o < out_dim; ++o)
                    pb.grad[static_cast<std::size_t>(o)] += g[static_cast<std::int64_t>(b) * out_dim + o];
        }
    });
}

Tensor gelu(const Tensor& x) {
    // Phi(x) is reused by the backward pass, so keep it.
    auto cdf = std::make_shared<std::vector<double>>(x.data().begin(), x.data().end());
    for (double& v : *cdf) v = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*cdf)[i];
    return make_op(x.shape(), std::move(out), {x}, [cdf](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        const double* xd = p.data.data();
        const double* cd = cdf->data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = xd[i];
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            p.grad[i] += g[i] * (cd[i] + v * pdf);
        }
    });
}

Tensor softmax(const Tensor& x, int axis) {
    AxisSplit sp = split_axis(x.shape(), axis, "softmax");
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            double* base = out.data() + o * sp.len * sp.inner + in;
            double mx = base[0];
            for (std::int64_t k = 1; k < sp.len; ++k) mx = std::max(mx, base[k * sp.inner]);
            double denom = 0.0;
            for (std::int64_t k = 0; k < sp.len; ++k) {
                double e = std::exp(base[k * sp.inner] - mx);
                base[k * sp.inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::int64_t k = 0; k < sp.len; ++k) base[k * sp.inner] *= inv;
        }
    }
    return make_op(x.shape(), std::move(out), {x}, [sp](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        const double* y = self.data.data();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t in = 0; in < sp.inner; ++in) {
                const std::int64_t off = o * sp.len * sp.inner + in;
                double dot = 0.0;
                for (std::int64_t k = 0; k < sp.len; ++k) {
                    const std::int64_t i = off + k * sp.inner;
                    dot += g[i] * y[i];
                }
                for (std::int64_t k = 0; k < sp.len; ++k) {
                    const std::int64_t i = off + k * sp.inner;
                    p.grad[i] += y[i] * (g[i] - dot);
                }
            }
        }
    });
}

Tensor layer_norm_channel(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
    require_bchw(x, "layer_norm_channel");
    const int c = x.dim(1);
    if (scale.ndim() != 1 || scale.dim(0) != c || shift.ndim() != 1 || shift.dim(0) != c) {
        throw std::invalid_argument("layer_norm_channel: scale/shift must be [C=" + std::to_string(c) +
                                    "], got " + shape_str(scale.shape()) + " and " + shape_str(shift.shape()));
    }
    if (eps < 0.0) throw std::invalid_argument("layer_norm_channel: eps must be >= 0");
    const int batch = x.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    const double* xd = x.data().data();
    const double* sc = scale.data().data();
    const double* sh = shift.data().data();
    for (int b = 0; b < batch; ++b) {
        const double* xb = xd + static_cast<std::int64_t>(b) * c * hw;
        double* ob = out.data() + static_cast<std::int64_t>(b) * c * hw;
        for (std::int64_t s = 0; s < hw; ++s) {
            double mean = 0.0, sq = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double v = xb[ch * hw + s];
                mean += v;
                sq += v * v;
            }
            mean /= c;
            const double var = sq / c - mean * mean;
            const double inv = 1.0 / std::sqrt(var + eps);
            for (int ch = 0; ch < c; ++ch) {
                const double xhat = (xb[ch * hw + s] - mean) * inv;
                ob[ch * hw + s] = xhat * sc[ch] + sh[ch];
            }
        }
    }
    return make_op(x.shape(), std::move(out), {x, scale, shift}, [batch, c, hw, eps](TensorNode& self) {
        auto& px = *self.parents[0];
        auto& psc = *self.parents[1];
        auto& psh = *self.parents[2];
        const double* g = self.grad.data();
        const double* xd = px.data.data();
        const double* sc = psc.data.data();
        if (px.requires_grad) px.ensure_grad();
        if (psc.requires_grad) psc.ensure_grad();
        if (psh.requires_grad) psh.ensure_grad();
        std::vector<double> xhat(static_cast<std::size_t>(c));
        for (int b = 0; b < batch; ++b) {
            const std::int64_t base = static_cast<std::int64_t>(b) * c * hw;
            for (std::int64_t s = 0; s < hw; ++s) {
                double mean = 0.0, sq = 0.0;
                for (int ch = 0; ch < c; ++ch) {
                    const double v = xd[base + ch * hw + s];
                    mean += v;
                    sq += v * v;
                }
                mean /= c;
                const double var = sq / c - mean * mean;
                const double inv = 1.0 / std::sqrt(var + eps);
                double mean_h = 0.0, mean_hx = 0.0;
                for (int ch = 0; ch < c; ++ch) {
                    const std::int64_t i = base + ch * hw + s;
                    xhat[static_cast<std::size_t>(ch)] = (xd[i] - mean) * inv;
                    const double h = g[i] * sc[ch];
                    mean_h += h;
                    mean_hx += h * xhat[static_cast<std::size_t>(ch)];
                }
                mean_h /= c;
                mean_hx /= c;
                for (int ch = 0; ch < c; ++ch) {
                    const std::int64_t i = base + ch * hw + s;
                    const double xh = xhat[static_cast<std::size_t>(ch)];
                    if (px.requires_grad) px.grad[i] += inv * (g[i] * sc[ch] - mean_h - xh * mean_hx);
                    if (psc.requires_grad) psc.grad[static_cast<std::size_t>(ch)] += g[i] * xh;
                    if (psh.requires_grad) psh.grad[static_cast<std::size_t>(ch)] += g[i];
                }
            }
        }
    });
}

Tensor l2_normalize_last(const Tensor& x, double eps) {
    if (x.ndim() < 1) throw std::invalid_argument("l2_normalize_last: empty shape");
    const std::int64_t k = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.size() / k;
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::int64_t r = 0; r < rows; ++r) {
        double* row = out.data() + r * k;
        double sq = 0.0;
        for (std::int64_t i = 0; i < k; ++i) sq += row[i] * row[i];
        const double inv = 1.0 / std::max(std::sqrt(sq), eps);
        for (std::int64_t i = 0; i < k; ++i) row[i] *= inv;
    }
    return make_op(x.shape(), std::move(out), {x}, [rows, k, eps](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        const double* y = self.data.data();
        const double* xd = p.data.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* xr = xd + r * k;
            double sq = 0.0;
            for (std::int64_t i = 0; i < k; ++i) sq += xr[i] * xr[i];
            const double norm = std::sqrt(sq);
            const std::int64_t off = r * k;
            if (norm > eps) {
                double dot = 0.0;
                for (std::int64_t i = 0; i < k; ++i) dot += g[off + i] * y[off + i];
                const double inv = 1.0 / norm;
                for (std::int64_t i = 0; i < k; ++i)
                    p.grad[off + i] += (g[off + i] - y[off + i] * dot) * inv;
            } else {
                const double inv = 1.0 / eps;
                for (std::int64_t i = 0; i < k; ++i) p.grad[off + i] += g[off + i] * inv;
            }
        }
    });
}

Tensor div_per_head(const Tensor& logits, const Tensor& alpha, int heads) {
    if (logits.ndim() != 3 || logits.dim(0) % heads != 0) {
        throw std::invalid_argument("div_per_head: logits " + shape_str(logits.shape()) +
                                    " not divisible into " + std::to_string(heads) + " heads");
    }
    if (alpha.ndim() != 1 || alpha.dim(0) != heads) {
        throw std::invalid_argument("div_per_head: alpha must be [" + std::to_string(heads) + "], got " +
                                    shape_str(alpha.shape()));
    }
    const std::int64_t nb = logits.dim(0);
    const std::int64_t plane = static_cast<std::int64_t>(logits.dim(1)) * logits.dim(2);
    std::vector<double> out(logits.data().begin(), logits.data().end());
    const double* al = alpha.data().data();
    for (std::int64_t i = 0; i < nb; ++i) {
        const double inv = 1.0 / al[i % heads];
        double* base = out.data() + i * plane;
        for (std::int64_t j = 0; j < plane; ++j) base[j] *= inv;
    }
    return make_op(logits.shape(), std::move(out), {logits, alpha}, [nb, plane, heads](TensorNode& self) {
        auto& px = *self.parents[0];
        auto& pa = *self.parents[1];
        const double* g = self.grad.data();
        const double* y = self.data.data();
        const double* al = pa.data.data();
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::int64_t i = 0; i < nb; ++i) {
                const double inv = 1.0 / al[i % heads];
                for (std::int64_t j = 0; j < plane; ++j)
                    px.grad[i * plane + j] += g[i * plane + j] * inv;
            }
        }
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::int64_t i = 0; i < nb; ++i) {
                const double inv = 1.0 / al[i % heads];
                double acc = 0.0;
                for (std::int64_t j = 0; j < plane; ++j)
                    acc += g[i * plane + j] * y[i * plane + j];
                pa.grad[static_cast<std::size_t>(i % heads)] -= acc * inv;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
    int batch, cin, cout, h, w, k, stride, pad, groups, hout, wout;
    std::int64_t in_plane, out_plane;
    int in_per_group, out_per_group;

    bool pointwise() const { return k == 1 && stride == 1 && pad == 0 && groups == 1; }
    bool depthwise() const { return groups == cin && cout == cin && stride == 1; }
};

// Shift-and-accumulate over one (input plane, kernel tap) pair; stride 1.
inline void tap_acc_fwd(double* __restrict out, const double* __restrict in, double wv,
                        const ConvDims& d, int kh, int kw) {
    const int oh0 = std::max(0, d.pad - kh);
    const int oh1 = std::min(d.hout, d.h + d.pad - kh);
    const int ow0 = std::max(0, d.pad - kw);
    const int ow1 = std::min(d.wout, d.w + d.pad - kw);
    for (int oh = oh0; oh < oh1; ++oh) {
        double* __restrict orow = out + static_cast<std::int64_t>(oh) * d.wout;
        const double* __restrict irow =
            in + static_cast<std::int64_t>(oh - d.pad + kh) * d.w + (ow0 - d.pad + kw);
        for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * irow[ow - ow0];
    }
}

inline void tap_acc_bwd_input(double* __restrict din, const double* __restrict gout, double wv,
                              const ConvDims& d, int kh, int kw) {
    const int oh0 = std::max(0, d.pad - kh);
    const int oh1 = std::min(d.hout, d.h + d.pad - kh);
    const int ow0 = std::max(0, d.pad - kw);
    const int ow1 = std::min(d.wout, d.w + d.pad - kw);
    for (int oh = oh0; oh < oh1; ++oh) {
        const double* __restrict grow = gout + static_cast<std::int64_t>(oh) * d.wout;
        double* __restrict irow =
            din + static_cast<std::int64_t>(oh - d.pad + kh) * d.w + (ow0 - d.pad + kw);
        for (int ow = ow0; ow < ow1; ++ow) irow[ow - ow0] += wv * grow[ow];
    }
}

inline double tap_dot(const double* __restrict gout, const double* __restrict in, const ConvDims& d,
                      int kh, int kw) {
    const int oh0 = std::max(0, d.pad - kh);
    const int oh1 = std::min(d.hout, d.h + d.pad - kh);
    const int ow0 = std::max(0, d.pad - kw);
    const int ow1 = std::min(d.wout, d.w + d.pad - kw);
    double acc = 0.0;
    for (int oh = oh0; oh < oh1; ++oh) {
        const double* __restrict grow = gout + static_cast<std::int64_t>(oh) * d.wout;
        const double* __restrict irow =
            in + static_cast<std::int64_t>(oh - d.pad + kh) * d.w + (ow0 - d.pad + kw);
        for (int ow = ow0; ow < ow1; ++ow) acc += grow[ow] * irow[ow - ow0];
    }
    return acc;
}

// Unrolled patch matrix for one (batch, group) slice: row (ic,kh,kw),
// column (oh,ow). Turns the general convolution into a plain GEMM.
void im2col(const double* __restrict in, double* __restrict cols, const ConvDims& d) {
    const std::int64_t hw_out = d.out_plane;
    double* __restrict c = cols;
    for (int ic = 0; ic < d.in_per_group; ++ic) {
        const double* __restrict plane = in + static_cast<std::int64_t>(ic) * d.in_plane;
        for (int kh = 0; kh < d.k; ++kh)
            for (int kw = 0; kw < d.k; ++kw, c += hw_out) {
                for (int oh = 0; oh < d.hout; ++oh) {
                    double* __restrict crow = c + static_cast<std::int64_t>(oh) * d.wout;
                    const int ih = oh * d.stride - d.pad + kh;
                    if (ih < 0 || ih >= d.h) {
                        std::fill(crow, crow + d.wout, 0.0);
                        continue;
                    }
                    const double* __restrict irow = plane + static_cast<std::int64_t>(ih) * d.w;
                    if (d.stride == 1) {
                        const int ow0 = std::max(0, d.pad - kw);
                        const int ow1 = std::min(d.wout, d.w + d.pad - kw);
                        for (int ow = 0; ow < ow0; ++ow) crow[ow] = 0.0;
                        for (int ow = ow0; ow < ow1; ++ow) crow[ow] = irow[ow - d.pad + kw];
                        for (int ow = ow1; ow < d.wout; ++ow) crow[ow] = 0.0;
                    } else {
                        for (int ow = 0; ow < d.wout; ++ow) {
                            const int iw = ow * d.stride - d.pad + kw;
                            crow[ow] = (iw >= 0 && iw < d.w) ? irow[iw] : 0.0;
                        }
                    }
                }
            }
    }
}

void col2im_add(const double* __restrict cols, double* __restrict din, const ConvDims& d) {
    const std::int64_t hw_out = d.out_plane;
    const double* __restrict c = cols;
    for (int ic = 0; ic < d.in_per_group; ++ic) {
        double* __restrict plane = din + static_cast<std::int64_t>(ic) * d.in_plane;
        for (int kh = 0; kh < d.k; ++kh)
            for (int kw = 0; kw < d.k; ++kw, c += hw_out) {
                for (int oh = 0; oh < d.hout; ++oh) {
                    const double* __restrict crow = c + static_cast<std::int64_t>(oh) * d.wout;
                    const int ih = oh * d.stride - d.pad + kh;
                    if (ih < 0 || ih >= d.h) continue;
                    double* __restrict irow = plane + static_cast<std::int64_t>(ih) * d.w;
                    if (d.stride == 1) {
                        const int ow0 = std::max(0, d.pad - kw);
                        const int ow1 = std::min(d.wout, d.w + d.pad - kw);
                        for (int ow = ow0; ow < ow1; ++ow) irow[ow - d.pad + kw] += crow[ow];
                    } else {
                        for (int ow = 0; ow < d.wout; ++ow) {
                            const int iw = ow * d.stride - d.pad + kw;
                            if (iw >= 0 && iw < d.w) irow[iw] += crow[ow];
                        }
                    }
                }
            }
    }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int groups) {
    require_bchw(input, "conv2d");
    if (weight.ndim() != 4 || weight.dim(2) != weight.dim(3)) {
        throw std::invalid_argument("conv2d: weight must be [out,in/groups,k,k], got " + shape_str(weight.shape()));
    }
    ConvDims d;
    d.batch = input.dim(0);
    d.cin = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.cout = weight.dim(0);
    d.k = weight.dim(2);
    d.stride = stride;
    d.pad = padding;
    d.groups = groups;
    if (stride < 1 || padding < 0 || groups < 1) {
        throw std::invalid_argument("conv2d: invalid stride/padding/groups");
    }
    if (d.cin % groups != 0 || d.cout % groups != 0) {
        throw std::invalid_argument("conv2d: channels (in=" + std::to_string(d.cin) + ", out=" +
                                    std::to_string(d.cout) + ") not divisible by groups=" + std::to_string(groups));
    }
    d.in_per_group = d.cin / groups;
    d.out_per_group = d.cout / groups;
    if (weight.dim(1) != d.in_per_group) {
        throw std::invalid_argument("conv2d: weight " + shape_str(weight.shape()) + " expects " +
                                    std::to_string(weight.dim(1) * groups) + " input channels, input has " +
                                    std::to_string(d.cin));
    }
    const int num_h = d.h + 2 * padding - d.k;
    const int num_w = d.w + 2 * padding - d.k;
    if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0) {
        throw std::invalid_argument("conv2d: spatial dims " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                                    " with k=" + std::to_string(d.k) + " pad=" + std::to_string(padding) +
                                    " stride=" + std::to_string(stride) + " give non-integer output");
    }
    d.hout = num_h / stride + 1;
    d.wout = num_w / stride + 1;
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.cout)) {
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) + " does not match out=" +
                                    std::to_string(d.cout));
    }
    d.in_plane = static_cast<std::int64_t>(d.h) * d.w;
    d.out_plane = static_cast<std::int64_t>(d.hout) * d.wout;

    std::vector<double> out(static_cast<std::size_t>(d.batch) * d.cout * d.out_plane, 0.0);
    const double* in = input.data().data();
    const double* wd = weight.data().data();

    if (bias.defined()) {
        const double* bd = bias.data().data();
        for (int b = 0; b < d.batch; ++b)
            for (int oc = 0; oc < d.cout; ++oc) {
                double* plane = out.data() + (static_cast<std::int64_t>(b) * d.cout + oc) * d.out_plane;
                std::fill(plane, plane + d.out_plane, bd[oc]);
            }
    }

    if (d.pointwise()) {
        for (int b = 0; b < d.batch; ++b) {
            gemm_acc(out.data() + static_cast<std::int64_t>(b) * d.cout * d.out_plane, wd,
                     in + static_cast<std::int64_t>(b) * d.cin * d.in_plane, d.cout, d.cin,
                     d.out_plane, false, false);
        }
    } else if (d.depthwise()) {
        for (int b = 0; b < d.batch; ++b)
            for (int c = 0; c < d.cin; ++c) {
                const std::int64_t pc = static_cast<std::int64_t>(b) * d.cin + c;
                const double* wbase = wd + static_cast<std::int64_t>(c) * d.k * d.k;
                for (int kh = 0; kh < d.k; ++kh)
                    for (int kw = 0; kw < d.k; ++kw)
                        tap_acc_fwd(out.data() + pc * d.out_plane, in + pc * d.in_plane,
                                    wbase[kh * d.k + kw], d, kh, kw);
            }
    } else {
        const std::int64_t patch = static_cast<std::int64_t>(d.in_per_group) * d.k * d.k;
        std::vector<double> cols(static_cast<std::size_t>(patch * d.out_plane));
        for (int b = 0; b < d.batch; ++b)
            for (int g = 0; g < d.groups; ++g) {
                im2col(in + (static_cast<std::int64_t>(b) * d.cin + g * d.in_per_group) * d.in_plane,
                       cols.data(), d);
                gemm_acc(out.data() +
                             (static_cast<std::int64_t>(b) * d.cout + g * d.out_per_group) * d.out_plane,
                         wd + static_cast<std::int64_t>(g) * d.out_per_group * patch, cols.data(),
                         d.out_per_group, patch, d.out_plane, false, false);
            }
    }

    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return make_op({d.batch, d.cout, d.hout, d.wout}, std::move(out), std::move(inputs),
                   [d, has_bias](TensorNode& self) {
        auto& pin = *self.parents[0];
        auto& pw = *self.parents[1];
        const double* g = self.grad.data();
        const double* in = pin.data.data();
        const double* wd = pw.data.data();
        if (pin.requires_grad) pin.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();

        if (d.pointwise()) {
            for (int b = 0; b < d.batch; ++b) {
                const std::int64_t in_off = static_cast<std::int64_t>(b) * d.cin * d.in_plane;
                const std::int64_t out_off = static_cast<std::int64_t>(b) * d.cout * d.out_plane;
                if (pin.requires_grad)
                    gemm_acc(pin.grad.data() + in_off, wd, g + out_off, d.cin, d.cout, d.out_plane,
                             true, false);
                if (pw.requires_grad)
                    gemm_acc(pw.grad.data(), g + out_off, in + in_off, d.cout, d.out_plane, d.cin,
                             false, true);
            }
        } else if (d.depthwise()) {
            for (int b = 0; b < d.batch; ++b)
                for (int c = 0; c < d.cin; ++c) {
                    const std::int64_t pc = static_cast<std::int64_t>(b) * d.cin + c;
                    const std::int64_t wb = static_cast<std::int64_t>(c) * d.k * d.k;
                    for (int kh = 0; kh < d.k; ++kh)
                        for (int kw = 0; kw < d.k; ++kw) {
                            if (pin.requires_grad)
                                tap_acc_bwd_input(pin.grad.data() + pc * d.in_plane,
                                                  g + pc * d.out_plane, wd[wb + kh * d.k + kw], d, kh, kw);
                            if (pw.requires_grad)
                                pw.grad[static_cast<std::size_t>(wb + kh * d.k + kw)] +=
                                    tap_dot(g + pc * d.out_plane, in + pc * d.in_plane, d, kh, kw);
                        }
                }
        } else {
            const std::int64_t patch = static_cast<std::int64_t>(d.in_per_group) * d.k * d.k;
            std::vector<double> cols(static_cast<std::size_t>(patch * d.out_plane));
            std::vector<double> dcols(pin.requires_grad ? static_cast<std::size_t>(patch * d.out_plane) : 0);
            for (int b = 0; b < d.batch; ++b)
                for (int grp = 0; grp < d.groups; ++grp) {
                    const std::int64_t in_off =
                        (static_cast<std::int64_t>(b) * d.cin + grp * d.in_per_group) * d.in_plane;
                    const std::int64_t out_off =
                        (static_cast<std::int64_t>(b) * d.cout + grp * d.out_per_group) * d.out_plane;
                    const std::int64_t w_off = static_cast<std::int64_t>(grp) * d.out_per_group * patch;
                    if (pw.requires_grad) {
                        im2col(in + in_off, cols.data(), d);
                        gemm_acc(pw.grad.data() + w_off, g + out_off, cols.data(), d.out_per_group,
                                 d.out_plane, patch, false, true);
                    }
                    if (pin.requires_grad) {
                        std::fill(dcols.begin(), dcols.end(), 0.0);
                        gemm_acc(dcols.data(), wd + w_off, g + out_off, patch, d.out_per_group,
                                 d.out_plane, true, false);
                        col2im_add(dcols.data(), pin.grad.data() + in_off, d);
                    }
                }
        }
        if (has_bias && self.parents[2]->requires_grad) {
            auto& pb = *self.parents[2];
            pb.ensure_grad();
            for (int b = 0; b < d.batch; ++b)
                for (int oc = 0; oc < d.cout; ++oc) {
                    const double* gplane = g + (static_cast<std::int64_t>(b) * d.cout + oc) * d.out_plane;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < d.out_plane; ++i) acc += gplane[i];
                    pb.grad[static_cast<std::size_t>(oc)] += acc;
                }
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_bchw(x, "global_avg_pool");
    const int batch = x.dim(0), c = x.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(batch) * c, 0.0);
    const double* xd = x.data().data();
    for (int b = 0; b < batch; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const double* plane = xd + (static_cast<std::int64_t>(b) * c + ch) * hw;
            double acc = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) acc += plane[i];
            out[static_cast<std::size_t>(b) * c + ch] = acc / static_cast<double>(hw);
        }
    return make_op({batch, c}, std::move(out), {x}, [batch, c, hw](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        const double inv = 1.0 / static_cast<double>(hw);
        for (int b = 0; b < batch; ++b)
            for (int ch = 0; ch < c; ++ch) {
                const double gv = g[static_cast<std::size_t>(b) * c + ch] * inv;
                double* plane = p.grad.data() + (static_cast<std::int64_t>(b) * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) plane[i] += gv;
            }
    });
}

namespace {

struct ResizeAxis {
    std::vector<int> i0, i1;
    std::vector<double> t;
};

// Half-pixel source coordinates with edge clamping.
ResizeAxis resize_axis(int in, int out) {
    ResizeAxis a;
    a.i0.resize(static_cast<std::size_t>(out));
    a.i1.resize(static_cast<std::size_t>(out));
    a.t.resize(static_cast<std::size_t>(out));
    const double s = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) * s - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int lo = static_cast<int>(std::floor(src));
        a.i0[static_cast<std::size_t>(d)] = lo;
        a.i1[static_cast<std::size_t>(d)] = std::min(lo + 1, in - 1);
        a.t[static_cast<std::size_t>(d)] = src - lo;
    }
    return a;
}

} // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    require_bchw(x, "bilinear_resize");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: output dims must be >= 1");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h == h && out_w == w) {
        // Identity resize is bit-exact.
        std::vector<double> out(x.data().begin(), x.data().end());
        return make_op(x.shape(), std::move(out), {x}, [](TensorNode& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        });
    }
    const ResizeAxis ay = resize_axis(h, out_h);
    const ResizeAxis ax = resize_axis(w, out_w);
    std::vector<double> out(static_cast<std::size_t>(batch) * c * out_h * out_w);
    const double* xd = x.data().data();
    for (int bc = 0; bc < batch * c; ++bc) {
        const double* plane = xd + static_cast<std::int64_t>(bc) * h * w;
        double* oplane = out.data() + static_cast<std::int64_t>(bc) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ay.i0[static_cast<std::size_t>(oy)], y1 = ay.i1[static_cast<std::size_t>(oy)];
            const double ty = ay.t[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = ax.i0[static_cast<std::size_t>(ox)], x1 = ax.i1[static_cast<std::size_t>(ox)];
                const double tx = ax.t[static_cast<std::size_t>(ox)];
                const double v00 = plane[static_cast<std::int64_t>(y0) * w + x0];
                const double v01 = plane[static_cast<std::int64_t>(y0) * w + x1];
                const double v10 = plane[static_cast<std::int64_t>(y1) * w + x0];
                const double v11 = plane[static_cast<std::int64_t>(y1) * w + x1];
                oplane[static_cast<std::int64_t>(oy) * out_w + ox] =
                    (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
            }
        }
    }
    return make_op({batch, c, out_h, out_w}, std::move(out), {x},
                   [batch, c, h, w, out_h, out_w, ay, ax](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        for (int bc = 0; bc < batch * c; ++bc) {
            double* plane = p.grad.data() + static_cast<std::int64_t>(bc) * h * w;
            const double* gplane = g + static_cast<std::int64_t>(bc) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = ay.i0[static_cast<std::size_t>(oy)], y1 = ay.i1[static_cast<std::size_t>(oy)];
                const double ty = ay.t[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = ax.i0[static_cast<std::size_t>(ox)], x1 = ax.i1[static_cast<std::size_t>(ox)];
                    const double tx = ax.t[static_cast<std::size_t>(ox)];
                    const double gv = gplane[static_cast<std::int64_t>(oy) * out_w + ox];
                    plane[static_cast<std::int64_t>(y0) * w + x0] += (1 - ty) * (1 - tx) * gv;
                    plane[static_cast<std::int64_t>(y0) * w + x1] += (1 - ty) * tx * gv;
                    plane[static_cast<std::int64_t>(y1) * w + x0] += ty * (1 - tx) * gv;
                    plane[static_cast<std::int64_t>(y1) * w + x1] += ty * tx * gv;
                }
            }
        }
    });
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
    require_bchw(x, "pixel_unshuffle");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (r < 1 || h % r != 0 || w % r != 0) {
        throw std::invalid_argument("pixel_unshuffle: dims " + std::to_string(h) + "x" + std::to_string(w) +
                                    " not divisible by r=" + std::to_string(r));
    }
    const int oh = h / r, ow = w / r, oc = c * r * r;
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    const double* xd = x.data().data();
    for (int b = 0; b < batch; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int o = (ch * r + dy) * r + dx;
                    double* dst = out.data() + ((static_cast<std::int64_t>(b) * oc + o) * oh) * ow;
                    const double* src = xd + ((static_cast<std::int64_t>(b) * c + ch) * h + dy) * w + dx;
                    for (int y = 0; y < oh; ++y)
                        for (int xw = 0; xw < ow; ++xw)
                            dst[static_cast<std::int64_t>(y) * ow + xw] =
                                src[static_cast<std::int64_t>(y) * r * w + xw * r];
                }
    return make_op({batch, oc, oh, ow}, std::move(out), {x}, [batch, c, h, w, r](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const int oh = h / r, ow = w / r, oc = c * r * r;
        const double* g = self.grad.data();
        for (int b = 0; b < batch; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const int o = (ch * r + dy) * r + dx;
                        const double* src = g + ((static_cast<std::int64_t>(b) * oc + o) * oh) * ow;
                        double* dst = p.grad.data() + ((static_cast<std::int64_t>(b) * c + ch) * h + dy) * w + dx;
                        for (int y = 0; y < oh; ++y)
                            for (int xw = 0; xw < ow; ++xw)
                                dst[static_cast<std::int64_t>(y) * r * w + xw * r] +=
                                    src[static_cast<std::int64_t>(y) * ow + xw];
                    }
    });
}

Tensor pixel_shuffle(const Tensor& x, int r) {
    require_bchw(x, "pixel_shuffle");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (r < 1 || c % (r * r) != 0) {
        throw std::invalid_argument("pixel_shuffle: channels " + std::to_string(c) +
                                    " not divisible by r^2=" + std::to_string(r * r));
    }
    const int oc = c / (r * r), oh = h * r, ow = w * r;
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    const double* xd = x.data().data();
    for (int b = 0; b < batch; ++b)
        for (int ch = 0; ch < oc; ++ch)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int ic = (ch * r + dy) * r + dx;
                    const double* src = xd + ((static_cast<std::int64_t>(b) * c + ic) * h) * w;
                    double* dst = out.data() + ((static_cast<std::int64_t>(b) * oc + ch) * oh + dy) * ow + dx;
                    for (int y = 0; y < h; ++y)
                        for (int xw = 0; xw < w; ++xw)
                            dst[static_cast<std::int64_t>(y) * r * ow + xw * r] =
                                src[static_cast<std::int64_t>(y) * w + xw];
                }
    return make_op({batch, oc, oh, ow}, std::move(out), {x}, [batch, c, h, w, r](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const int oc = c / (r * r), oh = h * r, ow = w * r;
        const double* g = self.grad.data();
        for (int b = 0; b < batch; ++b)
            for (int ch = 0; ch < oc; ++ch)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const int ic = (ch * r + dy) * r + dx;
                        double* dst = p.grad.data() + ((static_cast<std::int64_t>(b) * c + ic) * h) * w;
                        const double* src = g + ((static_cast<std::int64_t>(b) * oc + ch) * oh + dy) * ow + dx;
                        for (int y = 0; y < h; ++y)
                            for (int xw = 0; xw < w; ++xw)
                                dst[static_cast<std::int64_t>(y) * w + xw] +=
                                    src[static_cast<std::int64_t>(y) * r * ow + xw * r];
                    }
    });
}

Tensor reflect_pad2d(const Tensor& x, int pad_bottom, int pad_right) {
    require_bchw(x, "reflect_pad2d");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (pad_bottom < 0 || pad_right < 0 || pad_bottom > h - 1 || pad_right > w - 1) {
        throw std::invalid_argument("reflect_pad2d: pad (" + std::to_string(pad_bottom) + "," +
                                    std::to_string(pad_right) + ") too large for " + std::to_string(h) +
                                    "x" + std::to_string(w));
    }
    const int oh = h + pad_bottom, ow = w + pad_right;
    std::vector<double> out(static_cast<std::size_t>(batch) * c * oh * ow);
    const double* xd = x.data().data();
    for (int bc = 0; bc < batch * c; ++bc) {
        const double* plane = xd + static_cast<std::int64_t>(bc) * h * w;
        double* oplane = out.data() + static_cast<std::int64_t>(bc) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            const int sy = y < h ? y : 2 * h - 2 - y;
            for (int xw = 0; xw < ow; ++xw) {
                const int sx = xw < w ? xw : 2 * w - 2 - xw;
                oplane[static_cast<std::int64_t>(y) * ow + xw] = plane[static_cast<std::int64_t>(sy) * w + sx];
            }
        }
    }
    return make_op({batch, c, oh, ow}, std::move(out), {x}, [batch, c, h, w, oh, ow](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        for (int bc = 0; bc < batch * c; ++bc) {
            double* plane = p.grad.data() + static_cast<std::int64_t>(bc) * h * w;
            const double* gplane = g + static_cast<std::int64_t>(bc) * oh * ow;
            for (int y = 0; y < oh; ++y) {
                const int sy = y < h ? y : 2 * h - 2 - y;
                for (int xw = 0; xw < ow; ++xw) {
                    const int sx = xw < w ? xw : 2 * w - 2 - xw;
                    plane[static_cast<std::int64_t>(sy) * w + sx] += gplane[static_cast<std::int64_t>(y) * ow + xw];
                }
            }
        }
    });
}

Tensor crop2d(const Tensor& x, int h0, int h, int w0, int w) {
    require_bchw(x, "crop2d");
    const int batch = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
    if (h0 < 0 || w0 < 0 || h < 1 || w < 1 || h0 + h > ih || w0 + w > iw) {
        throw std::invalid_argument("crop2d: window " + std::to_string(h) + "x" + std::to_string(w) + "+" +
                                    std::to_string(h0) + "+" + std::to_string(w0) + " outside " +
                                    std::to_string(ih) + "x" + std::to_string(iw));
    }
    std::vector<double> out(static_cast<std::size_t>(batch) * c * h * w);
    const double* xd = x.data().data();
    for (int bc = 0; bc < batch * c; ++bc) {
        const double* plane = xd + static_cast<std::int64_t>(bc) * ih * iw;
        double* oplane = out.data() + static_cast<std::int64_t>(bc) * h * w;
        for (int y = 0; y < h; ++y)
            std::copy(plane + static_cast<std::int64_t>(h0 + y) * iw + w0,
                      plane + static_cast<std::int64_t>(h0 + y) * iw + w0 + w,
                      oplane + static_cast<std::int64_t>(y) * w);
    }
    return make_op({batch, c, h, w}, std::move(out), {x}, [batch, c, ih, iw, h0, h, w0, w](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        for (int bc = 0; bc < batch * c; ++bc) {
            double* plane = p.grad.data() + static_cast<std::int64_t>(bc) * ih * iw;
            const double* gplane = g + static_cast<std::int64_t>(bc) * h * w;
            for (int y = 0; y < h; ++y)
                for (int xw = 0; xw < w; ++xw)
                    plane[static_cast<std::int64_t>(h0 + y) * iw + w0 + xw] +=
                        gplane[static_cast<std::int64_t>(y) * w + xw];
        }
    });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "l1_loss");
    const double* a = pred.data().data();
    const double* b = target.data().data();
    const std::int64_t n = pred.size();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[i]);
    return make_op({1}, {acc / static_cast<double>(n)}, {pred, target}, [n](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        const double* a = pa.data.data();
        const double* b = pb.data.data();
        for (std::int64_t i = 0; i < n; ++i) {
            const double diff = a[i] - b[i];
            const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            if (pa.requires_grad) pa.grad[static_cast<std::size_t>(i)] += g * s;
            if (pb.requires_grad) pb.grad[static_cast<std::size_t>(i)] -= g * s;
        }
    });
}

} // namespace promptir
