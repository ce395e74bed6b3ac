#include "calm/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace calm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

void require_same_tape(Var a, Var b) {
    if (a.tape() == nullptr || a.tape() != b.tape())
        throw std::invalid_argument("operands belong to different tapes");
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

}  // namespace

namespace kernels {

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
    CMap A(a, m, k);
    CMap B(b, k, n);
    MMap C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    CMap A(a, m, k);
    CMap B(b, n, k);
    MMap C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    CMap A(a, k, m);
    CMap B(b, k, n);
    MMap C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

}  // namespace kernels

// ---------------------------------------------------------------- Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor Var::grad() const {
    if (tape_->has_grad(id_)) return tape_->grad(id_);
    return Tensor(value().shape(), 0.0);
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Tape::value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
}

Tensor& Tape::grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.values().empty()) n.grad = Tensor(value(id).shape(), 0.0);
    return n.grad;
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, record_});
    return Var(this, nodes_.size() - 1);
}

Var Tape::external(const Tensor& value, bool requires_grad) {
    nodes_.push_back(Node{{}, &value, {}, {}, record_ && requires_grad});
    return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::push(Tensor value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    if (record_)
        for (const Var& p : parents) needs = needs || requires_grad(p.id());
    Node node{std::move(value), nullptr, {}, {}, needs};
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var scalar) {
    if (scalar.tape() != this) throw std::invalid_argument("backward: foreign variable");
    if (value(scalar.id()).size() != 1)
        throw DimensionError("backward expects a scalar, got " +
                             shape_str(value(scalar.id()).shape()));
    if (!requires_grad(scalar.id())) return;
    grad(scalar.id())[0] += 1.0;
    for (std::size_t i = scalar.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && has_grad(i)) n.backward(*this, i);
    }
}

// ---------------------------------------------------------------- ops

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols() != B.rows())
        throw DimensionError("matmul: inner dimensions differ for " + shape_str(A.shape()) +
                             " and " + shape_str(B.shape()));
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C(matrix_shape(m, n));
    kernels::gemm(A.data(), B.data(), C.data(), m, k, n, false);
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->push(std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
        const Tensor& dC = t.grad(self);
        if (t.requires_grad(ia))
            kernels::gemm_nt(dC.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k, true);
        if (t.requires_grad(ib))
            kernels::gemm_tn(t.value(ia).data(), dC.data(), t.grad(ib).data(), k, m, n, true);
    });
}

Var matmul_nt(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols() != B.cols())
        throw DimensionError("matmul_nt: inner dimensions differ for " + shape_str(A.shape()) +
                             " and " + shape_str(B.shape()));
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    Tensor C(matrix_shape(m, n));
    kernels::gemm_nt(A.data(), B.data(), C.data(), m, k, n, false);
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->push(std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
        const Tensor& dC = t.grad(self);
        if (t.requires_grad(ia))
            kernels::gemm(dC.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k, true);
        if (t.requires_grad(ib))
            kernels::gemm_tn(dC.data(), t.value(ia).data(), t.grad(ib).data(), n, m, k, true);
    });
}

Var linear(Var x, Var weight, Var bias) {
    require_same_tape(x, weight);
    require_same_tape(x, bias);
    const Tensor& X = x.value();
    const Tensor& W = weight.value();
    const Tensor& b = bias.value();
    if (X.cols() != W.cols() || b.size() != W.rows())
        throw DimensionError("linear: incompatible shapes " + shape_str(X.shape()) + ", " +
                             shape_str(W.shape()) + ", " + shape_str(b.shape()));
    const std::size_t m = X.rows(), k = X.cols(), n = W.rows();
    Tensor Y(matrix_shape(m, n));
    for (std::size_t r = 0; r < m; ++r)
        std::copy(b.data(), b.data() + n, Y.data() + r * n);
    kernels::gemm_nt(X.data(), W.data(), Y.data(), m, k, n, true);
    const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
    return x.tape()->push(std::move(Y), {x, weight, bias},
                          [ix, iw, ib, m, k, n](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        if (t.requires_grad(ix))
            kernels::gemm(dY.data(), t.value(iw).data(), t.grad(ix).data(), m, n, k, true);
        if (t.requires_grad(iw))
            kernels::gemm_tn(dY.data(), t.value(ix).data(), t.grad(iw).data(), n, m, k, true);
        if (t.requires_grad(ib)) {
            double* db = t.grad(ib).data();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) db[c] += dY.data()[r * n + c];
        }
    });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.shape() != B.shape())
        throw DimensionError("add: shapes differ " + shape_str(A.shape()) + " vs " +
                             shape_str(B.shape()));
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->push(std::move(C), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& dC = t.grad(self);
        for (std::size_t id : {ia, ib}) {
            if (!t.requires_grad(id)) continue;
            Tensor& g = t.grad(id);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dC[i];
        }
    });
}

Var add_row(Var x, Var row) {
    require_same_tape(x, row);
    const Tensor& X = x.value();
    const Tensor& R = row.value();
    if (R.size() != X.cols())
        throw DimensionError("add_row: row " + shape_str(R.shape()) + " does not match " +
                             shape_str(X.shape()));
    Tensor Y = X;
    const std::size_t m = X.rows(), n = X.cols();
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) Y.data()[r * n + c] += R[c];
    const std::size_t ix = x.id(), ir = row.id();
    return x.tape()->push(std::move(Y), {x, row}, [ix, ir, m, n](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        if (t.requires_grad(ix)) {
            Tensor& g = t.grad(ix);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[i];
        }
        if (t.requires_grad(ir)) {
            Tensor& g = t.grad(ir);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) g[c] += dY.data()[r * n + c];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.shape() != B.shape())
        throw DimensionError("mul: shapes differ " + shape_str(A.shape()) + " vs " +
                             shape_str(B.shape()));
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->push(std::move(C), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& dC = t.grad(self);
        if (t.requires_grad(ia)) {
            Tensor& g = t.grad(ia);
            const Tensor& B = t.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dC[i] * B[i];
        }
        if (t.requires_grad(ib)) {
            Tensor& g = t.grad(ib);
            const Tensor& A = t.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dC[i] * A[i];
        }
    });
}

Var scale(Var x, double s) {
    Tensor Y = x.value();
    for (double& v : Y.values()) v *= s;
    const std::size_t ix = x.id();
    return x.tape()->push(std::move(Y), {x}, [ix, s](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& g = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * dY[i];
    });
}

Var sum(Var x) {
    double total = 0.0;
    for (double v : x.value().values()) total += v;
    const std::size_t ix = x.id();
    return x.tape()->push(Tensor({1}, std::vector<double>{total}), {x},
                          [ix](Tape& t, std::size_t self) {
        const double d = t.grad(self)[0];
        for (double& g : t.grad(ix).values()) g += d;
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
    const Tensor& X = x.value();
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double v = X[i];
        Y[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    const std::size_t ix = x.id();
    return x.tape()->push(std::move(Y), {x}, [ix](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& X = t.value(ix);
        Tensor& g = t.grad(ix);
        for (std::size_t i = 0; i < X.size(); ++i) {
            const double v = X[i];
            const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const double d = 0.5 * (1.0 + th) +
                             0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            g[i] += dY[i] * d;
        }
    });
}

namespace {

// Softmax over the first `valid` entries of each row; the rest are 0.
template <typename ValidFn>
Tensor softmax_rows(const Tensor& X, ValidFn valid) {
    Tensor Y(X.shape(), 0.0);
    const std::size_t m = X.rows(), n = X.cols();
    for (std::size_t r = 0; r < m; ++r) {
        const double* x = X.data() + r * n;
        double* y = Y.data() + r * n;
        const std::size_t len = valid(r);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < len; ++c) mx = std::max(mx, x[c]);
        double total = 0.0;
        for (std::size_t c = 0; c < len; ++c) {
            y[c] = std::exp(x[c] - mx);
            total += y[c];
        }
        const double inv = 1.0 / total;
        for (std::size_t c = 0; c < len; ++c) y[c] *= inv;
    }
    return Y;
}

Tape::Backward softmax_backward(std::size_t ix, std::size_t m, std::size_t n) {
    return [ix, m, n](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& Y = t.value(self);
        Tensor& g = t.grad(ix);
        for (std::size_t r = 0; r < m; ++r) {
            const double* y = Y.data() + r * n;
            const double* dy = dY.data() + r * n;
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
            double* gx = g.data() + r * n;
            for (std::size_t c = 0; c < n; ++c) gx[c] += y[c] * (dy[c] - dot);
        }
    };
}

}  // namespace

Var softmax_lastdim(Var x) {
    const Tensor& X = x.value();
    const std::size_t n = X.cols();
    Tensor Y = softmax_rows(X, [n](std::size_t) { return n; });
    return x.tape()->push(std::move(Y), {x}, softmax_backward(x.id(), X.rows(), n));
}

Var causal_softmax(Var x) {
    const Tensor& X = x.value();
    const std::size_t n = X.cols();
    Tensor Y = softmax_rows(X, [n](std::size_t r) { return std::min(r + 1, n); });
    return x.tape()->push(std::move(Y), {x}, softmax_backward(x.id(), X.rows(), n));
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    require_same_tape(x, gain);
    require_same_tape(x, bias);
    const Tensor& X = x.value();
    const Tensor& G = gain.value();
    const Tensor& B = bias.value();
    const std::size_t m = X.rows(), n = X.cols();
    if (G.size() != n || B.size() != n)
        throw DimensionError("layer_norm: gain/bias " + shape_str(G.shape()) + "/" +
                             shape_str(B.shape()) + " do not match " + shape_str(X.shape()));
    Tensor Y(X.shape());
    std::vector<double> xhat(X.size());
    std::vector<double> rstd(m);
    for (std::size_t r = 0; r < m; ++r) {
        const double* xr = X.data() + r * n;
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) mean += xr[c];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= static_cast<double>(n);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            const double h = (xr[c] - mean) * rstd[r];
            xhat[r * n + c] = h;
            Y.data()[r * n + c] = G[c] * h + B[c];
        }
    }
    const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
    return x.tape()->push(
        std::move(Y), {x, gain, bias},
        [ix, ig, ib, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t,
                                                                            std::size_t self) {
            const Tensor& dY = t.grad(self);
            const Tensor& G = t.value(ig);
            if (t.requires_grad(ig)) {
                Tensor& dg = t.grad(ig);
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c)
                        dg[c] += dY.data()[r * n + c] * xhat[r * n + c];
            }
            if (t.requires_grad(ib)) {
                Tensor& db = t.grad(ib);
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) db[c] += dY.data()[r * n + c];
            }
            if (t.requires_grad(ix)) {
                Tensor& dx = t.grad(ix);
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t r = 0; r < m; ++r) {
                    double mean_d = 0.0, mean_dh = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                        const double d = dY.data()[r * n + c] * G[c];
                        mean_d += d;
                        mean_dh += d * xhat[r * n + c];
                    }
                    mean_d *= inv_n;
                    mean_dh *= inv_n;
                    for (std::size_t c = 0; c < n; ++c) {
                        const double d = dY.data()[r * n + c] * G[c];
                        dx.data()[r * n + c] +=
                            rstd[r] * (d - mean_d - xhat[r * n + c] * mean_dh);
                    }
                }
            }
        });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    const Tensor& X = x.value();
    const std::size_t m = X.rows(), n = X.cols();
    if (begin >= end || end > n)
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," +
                             std::to_string(end) + ") outside " + shape_str(X.shape()));
    const std::size_t w = end - begin;
    Tensor Y(matrix_shape(m, w));
    for (std::size_t r = 0; r < m; ++r)
        std::copy(X.data() + r * n + begin, X.data() + r * n + end, Y.data() + r * w);
    const std::size_t ix = x.id();
    return x.tape()->push(std::move(Y), {x}, [ix, m, n, begin, w](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& g = t.grad(ix);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < w; ++c) g.data()[r * n + begin + c] += dY.data()[r * w + c];
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t m = parts[0].value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        require_same_tape(parts[0], p);
        if (p.value().rows() != m)
            throw DimensionError("concat_cols: row counts differ, " +
                                 shape_str(parts[0].value().shape()) + " vs " +
                                 shape_str(p.value().shape()));
        widths.push_back(p.value().cols());
        total += p.value().cols();
    }
    Tensor Y(matrix_shape(m, total));
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Tensor& P = parts[i].value();
        for (std::size_t r = 0; r < m; ++r)
            std::copy(P.data() + r * widths[i], P.data() + (r + 1) * widths[i],
                      Y.data() + r * total + off);
        off += widths[i];
    }
    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id());
    return parts[0].tape()->push(
        std::move(Y), parts,
        [ids = std::move(ids), widths = std::move(widths), m, total](Tape& t, std::size_t self) {
            const Tensor& dY = t.grad(self);
            std::size_t off = 0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (t.requires_grad(ids[i])) {
                    Tensor& g = t.grad(ids[i]);
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < widths[i]; ++c)
                            g.data()[r * widths[i] + c] += dY.data()[r * total + off + c];
                }
                off += widths[i];
            }
        });
}

Var embedding(Var table, std::span<const int> ids) {
    const Tensor& T = table.value();
    const std::size_t v = T.rows(), d = T.cols();
    if (ids.empty()) throw DimensionError("embedding: empty id list");
    Tensor Y(matrix_shape(ids.size(), d));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
            throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside [0," +
                             std::to_string(v) + ")");
        std::copy(T.data() + ids[i] * d, T.data() + (ids[i] + 1) * d, Y.data() + i * d);
    }
    const std::size_t it = table.id();
    std::vector<int> idv(ids.begin(), ids.end());
    return table.tape()->push(std::move(Y), {table},
                              [it, d, idv = std::move(idv)](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& g = t.grad(it);
        for (std::size_t i = 0; i < idv.size(); ++i)
            for (std::size_t c = 0; c < d; ++c) g.data()[idv[i] * d + c] += dY.data()[i * d + c];
    });
}

Var cross_entropy_logits(Var logits, std::span<const int> targets) {
    const Tensor& L = logits.value();
    const std::size_t m = L.rows(), v = L.cols();
    if (targets.size() != m)
        throw DimensionError("cross_entropy_logits: " + std::to_string(targets.size()) +
                             " targets for logits " + shape_str(L.shape()));
    std::vector<double> probs(L.size());
    double loss = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
            throw IndexError("cross_entropy_logits: target " + std::to_string(targets[r]) +
                             " outside [0," + std::to_string(v) + ")");
        const double* x = L.data() + r * v;
        double mx = x[0];
        for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, x[c]);
        double total = 0.0;
        for (std::size_t c = 0; c < v; ++c) total += std::exp(x[c] - mx);
        const double lse = mx + std::log(total);
        loss += lse - x[targets[r]];
        for (std::size_t c = 0; c < v; ++c) probs[r * v + c] = std::exp(x[c] - lse);
    }
    loss /= static_cast<double>(m);
    const std::size_t il = logits.id();
    std::vector<int> tv(targets.begin(), targets.end());
    return logits.tape()->push(
        Tensor({1}, std::vector<double>{loss}), {logits},
        [il, m, v, probs = std::move(probs), tv = std::move(tv)](Tape& t, std::size_t self) {
            const double d = t.grad(self)[0] / static_cast<double>(m);
            Tensor& g = t.grad(il);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < v; ++c) g.data()[r * v + c] += d * probs[r * v + c];
                g.data()[r * v + tv[r]] -= d;
            }
        });
}

}  // namespace calm
