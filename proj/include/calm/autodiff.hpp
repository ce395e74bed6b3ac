#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "calm/tensor.hpp"

namespace calm {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    // Gradient accumulated by Tape::backward, or an all-zero tensor when no
    // gradient reached this node.
    Tensor grad() const;
    bool requires_grad() const;

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Each op appends one node holding its value
// and, when recording and any parent requires a gradient, a closure that
// pushes the node's gradient into its parents. backward() runs those
// closures once each, newest first. A tape is single-threaded.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);
    // Leaf referencing caller-owned storage; `value` must outlive the tape.
    Var external(const Tensor& value, bool requires_grad);

    Var push(Tensor value, std::initializer_list<Var> parents, Backward backward);
    Var push(Tensor value, std::span<const Var> parents, Backward backward);

    void backward(Var scalar);

    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }

    const Tensor& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool has_grad(std::size_t id) const { return !nodes_[id].grad.values().empty(); }
    // Gradient buffer of a node, allocated as zeros on first access.
    Tensor& grad(std::size_t id);

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        Backward backward;
        bool requires_grad = false;
    };

    std::deque<Node> nodes_;
    bool record_;
};

// Primitive ops. All 2-D ops treat a 1-D tensor as a single row.
Var matmul(Var a, Var b);                 // [m,k] x [k,n]
Var matmul_nt(Var a, Var b);              // [m,k] x [n,k]^T
Var linear(Var x, Var weight, Var bias);  // x weight^T + bias, weight [out,in]
Var add(Var a, Var b);
Var add_row(Var x, Var row);              // row broadcast over x's rows
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var sum(Var x);
Var gelu(Var x);
Var softmax_lastdim(Var x);
// Row i keeps columns j <= i; masked entries are exactly 0.
Var causal_softmax(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var embedding(Var table, std::span<const int> ids);
// Mean over rows of -log softmax(logits)[row, target]; shape {1}.
Var cross_entropy_logits(Var logits, std::span<const int> targets);

namespace kernels {
// Plain (non-taped) forms used by both the ops and inference paths.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
}  // namespace kernels

}  // namespace calm
