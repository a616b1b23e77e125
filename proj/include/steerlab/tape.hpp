#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/tensor.hpp"

namespace steerlab {

// Reverse-mode autodiff over Tensor. A Tape is an append-only record of
// forward operations; backward() walks it once in reverse and accumulates
// exact chain-rule gradients for every watched leaf. One tape per run,
// confined to one thread.
//
// Elementwise ops broadcast a 1-element tensor against any shape; no other
// broadcasting exists. matmul requires rank-2 operands. l2norm normalizes
// along the last axis (rows of a matrix, the whole of a vector).

enum class OpKind {
    leaf,
    add,
    sub,
    mul,
    matmul,
    relu,
    tanh_fn,
    sum,
    mean,
    square,
    sqrt_fn,
    concat,
    reshape,
    slice,
    l2norm,
    exp_fn,
    log_fn,
};

namespace detail {

using EigenMat =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EigenMatMut =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline EigenMat as_mat(const Tensor& t, int r, int c) { return EigenMat(t.data.data(), r, c); }
inline EigenMatMut as_mat(Tensor& t, int r, int c) { return EigenMatMut(t.data.data(), r, c); }

}  // namespace detail

struct TapeNode {
    OpKind kind = OpKind::leaf;
    int in0 = -1;  // producer node ids; -1 when that input was a constant
    int in1 = -1;
    std::vector<int> shape;      // output shape
    std::vector<int> in0_shape;  // input shapes (backward needs them even for constants)
    std::vector<int> in1_shape;
    Tensor v0;  // saved values, only where the vjp needs them
    Tensor v1;
    Tensor out;
    int axis = -1;  // sum: -1 = full reduce; concat/slice axis
    int start = 0;  // slice offset
    int len = 0;    // slice extent
};

class Tape {
public:
    Tape() : id_(next_id()) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    uint64_t id() const { return id_; }
    size_t size() const { return nodes_.size(); }
    const TapeNode& node(int i) const { return nodes_[static_cast<size_t>(i)]; }

    // Registers a gradient leaf. Idempotent for tensors already on this tape.
    Tensor& watch(Tensor& t) {
        require(t.requires_grad, Err::DetachedRoot, "watch() on a tensor without requires_grad");
        if (t.node >= 0 && t.tape_id == id_) return t;
        TapeNode n;
        n.kind = OpKind::leaf;
        n.shape = t.shape;
        t.node = push(std::move(n));
        t.tape_id = id_;
        return t;
    }

    // Chain rule from a scalar root back to every leaf. Gradients are kept on
    // the tape and read off via grad(); running backward again restarts from
    // a clean slate.
    void backward(const Tensor& root) {
        require(root.is_scalar(), Err::NotScalarRoot,
                "backward root must be scalar, got " + shape_str(root.shape));
        require(root.node >= 0 && root.tape_id == id_ &&
                    root.node < static_cast<int>(nodes_.size()),
                Err::DetachedRoot, "backward root was not produced on this tape");

        grads_.assign(nodes_.size(), Tensor{});
        grads_[static_cast<size_t>(root.node)] = Tensor({1}, {1.0});

        for (int i = root.node; i >= 0; --i) {
            Tensor& g = grads_[static_cast<size_t>(i)];
            if (g.data.empty()) continue;  // node not on any path to the root
            step_back(nodes_[static_cast<size_t>(i)], g);
        }
    }

    // Gradient of a watched/intermediate tensor after backward(); nullptr if
    // the tensor is off-tape or received no gradient.
    const Tensor* grad(const Tensor& t) const {
        if (t.node < 0 || t.tape_id != id_) return nullptr;
        auto idx = static_cast<size_t>(t.node);
        if (idx >= grads_.size() || grads_[idx].data.empty()) return nullptr;
        return &grads_[idx];
    }

    // gradients as a node-id -> tensor map (leaves included)
    std::unordered_map<int, Tensor> gradient_map() const {
        std::unordered_map<int, Tensor> m;
        for (size_t i = 0; i < grads_.size(); ++i)
            if (!grads_[i].data.empty()) m.emplace(static_cast<int>(i), grads_[i]);
        return m;
    }

    int record(TapeNode n) { return push(std::move(n)); }

private:
    static uint64_t next_id() {
        static std::atomic<uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    int push(TapeNode n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void acc(int node_id, const Tensor& contribution) {
        if (node_id < 0) return;
        Tensor& slot = grads_[static_cast<size_t>(node_id)];
        if (slot.data.empty()) {
            slot = contribution;
            return;
        }
        for (size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += contribution.data[i];
    }

    // scalar-broadcast aware vjp for the elementwise binary ops
    void acc_broadcast(int node_id, const std::vector<int>& in_shape, const Tensor& contribution) {
        if (node_id < 0) return;
        if (Tensor::numel_of(in_shape) == 1 && contribution.numel() > 1) {
            double s = 0.0;
            for (double v : contribution.data) s += v;
            Tensor red(in_shape);
            red.data[0] = s;
            acc(node_id, red);
        } else {
            acc(node_id, contribution);
        }
    }

    void step_back(const TapeNode& n, const Tensor& g) {
        switch (n.kind) {
            case OpKind::leaf:
                return;
            case OpKind::add: {
                acc_broadcast(n.in0, n.in0_shape, g);
                acc_broadcast(n.in1, n.in1_shape, g);
                return;
            }
            case OpKind::sub: {
                acc_broadcast(n.in0, n.in0_shape, g);
                if (n.in1 >= 0) {
                    Tensor neg = g;
                    for (double& v : neg.data) v = -v;
                    acc_broadcast(n.in1, n.in1_shape, neg);
                }
                return;
            }
            case OpKind::mul: {
                if (n.in0 >= 0) {
                    Tensor da(n.shape);
                    bool b_scalar = n.v1.numel() == 1;
                    for (size_t i = 0; i < da.data.size(); ++i)
                        da.data[i] = g.data[i] * (b_scalar ? n.v1.data[0] : n.v1.data[i]);
                    acc_broadcast(n.in0, n.in0_shape, da);
                }
                if (n.in1 >= 0) {
                    Tensor db(n.shape);
                    bool a_scalar = n.v0.numel() == 1;
                    for (size_t i = 0; i < db.data.size(); ++i)
                        db.data[i] = g.data[i] * (a_scalar ? n.v0.data[0] : n.v0.data[i]);
                    acc_broadcast(n.in1, n.in1_shape, db);
                }
                return;
            }
            case OpKind::matmul: {
                const int m = n.in0_shape[0], k = n.in0_shape[1], p = n.in1_shape[1];
                auto G = detail::as_mat(g, m, p);
                if (n.in0 >= 0) {
                    Tensor da(n.in0_shape);
                    detail::as_mat(da, m, k).noalias() = G * detail::as_mat(n.v1, k, p).transpose();
                    acc(n.in0, da);
                }
                if (n.in1 >= 0) {
                    Tensor db(n.in1_shape);
                    detail::as_mat(db, k, p).noalias() = detail::as_mat(n.v0, m, k).transpose() * G;
                    acc(n.in1, db);
                }
                return;
            }
            case OpKind::relu: {
                if (n.in0 < 0) return;
                Tensor da(n.shape);
                for (size_t i = 0; i < da.data.size(); ++i)
                    da.data[i] = n.v0.data[i] > 0.0 ? g.data[i] : 0.0;
                acc(n.in0, da);
                return;
            }
            case OpKind::tanh_fn: {
                if (n.in0 < 0) return;
                Tensor da(n.shape);
                for (size_t i = 0; i < da.data.size(); ++i)
                    da.data[i] = g.data[i] * (1.0 - n.out.data[i] * n.out.data[i]);
                acc(n.in0, da);
                return;
            }
            case OpKind::exp_fn: {
                if (n.in0 < 0) return;
                Tensor da(n.shape);
                for (size_t i = 0; i < da.data.size(); ++i)
                    da.data[i] = g.data[i] * n.out.data[i];
                acc(n.in0, da);
                return;
            }
            case OpKind::log_fn: {
                if (n.in0 < 0) return;
                Tensor da(n.shape);
                for (size_t i = 0; i < da.data.size(); ++i) da.data[i] = g.data[i] / n.v0.data[i];
                acc(n.in0, da);
                return;
            }
            case OpKind::square: {
                if (n.in0 < 0) return;
                Tensor da(n.shape);
                for (size_t i = 0; i < da.data.size(); ++i)
                    da.data[i] = 2.0 * n.v0.data[i] * g.data[i];
                acc(n.in0, da);
                return;
            }
            case OpKind::sqrt_fn: {
                if (n.in0 < 0) return;
                Tensor da(n.shape);
                for (size_t i = 0; i < da.data.size(); ++i)
                    da.data[i] = g.data[i] / (2.0 * n.out.data[i]);
                acc(n.in0, da);
                return;
            }
            case OpKind::sum: {
                if (n.in0 < 0) return;
                Tensor da(n.in0_shape);
                if (n.axis < 0) {
                    std::fill(da.data.begin(), da.data.end(), g.data[0]);
                } else if (n.in0_shape.size() == 1) {
                    std::fill(da.data.begin(), da.data.end(), g.data[0]);
                } else {
                    const int r = n.in0_shape[0], c = n.in0_shape[1];
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j)
                            da.data[static_cast<size_t>(i) * c + j] =
                                n.axis == 1 ? g.data[static_cast<size_t>(i)]
                                            : g.data[static_cast<size_t>(j)];
                }
                acc(n.in0, da);
                return;
            }
            case OpKind::mean: {
                if (n.in0 < 0) return;
                Tensor da(n.in0_shape);
                double v = g.data[0] / static_cast<double>(da.numel());
                std::fill(da.data.begin(), da.data.end(), v);
                acc(n.in0, da);
                return;
            }
            case OpKind::concat: {
                const auto& s0 = n.in0_shape;
                const int rank = static_cast<int>(s0.size());
                if (rank == 1 || n.axis == 0) {
                    size_t n0 = Tensor::numel_of(s0);
                    if (n.in0 >= 0) {
                        Tensor da(s0);
                        std::copy(g.data.begin(), g.data.begin() + static_cast<long>(n0),
                                  da.data.begin());
                        acc(n.in0, da);
                    }
                    if (n.in1 >= 0) {
                        Tensor db(n.in1_shape);
                        std::copy(g.data.begin() + static_cast<long>(n0), g.data.end(),
                                  db.data.begin());
                        acc(n.in1, db);
                    }
                } else {  // rank-2, axis 1
                    const int r = s0[0], c0 = s0[1], c1 = n.in1_shape[1];
                    if (n.in0 >= 0) {
                        Tensor da(s0);
                        for (int i = 0; i < r; ++i)
                            for (int j = 0; j < c0; ++j)
                                da.data[static_cast<size_t>(i) * c0 + j] =
                                    g.data[static_cast<size_t>(i) * (c0 + c1) + j];
                        acc(n.in0, da);
                    }
                    if (n.in1 >= 0) {
                        Tensor db(n.in1_shape);
                        for (int i = 0; i < r; ++i)
                            for (int j = 0; j < c1; ++j)
                                db.data[static_cast<size_t>(i) * c1 + j] =
                                    g.data[static_cast<size_t>(i) * (c0 + c1) + c0 + j];
                        acc(n.in1, db);
                    }
                }
                return;
            }
            case OpKind::reshape: {
                if (n.in0 < 0) return;
                Tensor da(n.in0_shape);
                da.data = g.data;
                acc(n.in0, da);
                return;
            }
            case OpKind::slice: {
                if (n.in0 < 0) return;
                Tensor da(n.in0_shape);  // zeros
                if (n.in0_shape.size() == 1 || n.axis == 0) {
                    size_t row_elems = n.in0_shape.size() == 1
                                           ? 1
                                           : static_cast<size_t>(n.in0_shape[1]);
                    std::copy(g.data.begin(), g.data.end(),
                              da.data.begin() + static_cast<long>(n.start * row_elems));
                } else {  // rank-2, axis 1
                    const int r = n.in0_shape[0], c = n.in0_shape[1];
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < n.len; ++j)
                            da.data[static_cast<size_t>(i) * c + n.start + j] =
                                g.data[static_cast<size_t>(i) * n.len + j];
                }
                acc(n.in0, da);
                return;
            }
            case OpKind::l2norm: {
                if (n.in0 < 0) return;
                // y = x / max(||x||, eps) per row; dx = (g - y * (y . g)) / norm
                const int c = n.in0_shape.back();
                const int r = static_cast<int>(n.out.numel()) / c;
                Tensor da(n.in0_shape);
                for (int i = 0; i < r; ++i) {
                    const double* y = n.out.data.data() + static_cast<size_t>(i) * c;
                    const double* gr = g.data.data() + static_cast<size_t>(i) * c;
                    double* d = da.data.data() + static_cast<size_t>(i) * c;
                    const double norm = n.v1.data[static_cast<size_t>(i)];
                    if (norm > kNormFloor) {
                        double yg = 0.0;
                        for (int j = 0; j < c; ++j) yg += y[j] * gr[j];
                        for (int j = 0; j < c; ++j) d[j] = (gr[j] - y[j] * yg) / norm;
                    } else {
                        // floored row: the map was x / kNormFloor, i.e. linear
                        for (int j = 0; j < c; ++j) d[j] = gr[j] / norm;
                    }
                }
                acc(n.in0, da);
                return;
            }
        }
    }

    uint64_t id_;
    std::vector<TapeNode> nodes_;
    std::vector<Tensor> grads_;

public:
    static constexpr double kNormFloor = 1e-12;
};

// ---------------------------------------------------------------------------
// Forward ops. Pass tape = nullptr for plain evaluation; with a tape, the
// result is recorded whenever any input participates in differentiation.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
    require(t.all_finite(), Err::NonFinite, std::string(op) + " produced a non-finite value");
}

// Resolve a tensor's node id on the given tape. requires_grad tensors that
// are not registered here (fresh, or carrying a stale id from an earlier
// tape) become leaves of this tape; callers that need their gradient use
// watch() to keep the handle.
inline int node_on(Tape* tp, const Tensor& t) {
    if (!tp) return -1;
    if (t.node >= 0 && t.tape_id == tp->id()) return t.node;
    if (t.requires_grad) {
        Tensor copy = t;
        copy.node = -1;
        return tp->watch(copy).node;
    }
    return -1;
}

inline Tensor finish(Tape* tp, Tensor result, TapeNode n) {
    check_finite(result, "op");
    if (tp && (n.in0 >= 0 || n.in1 >= 0)) {
        n.shape = result.shape;
        result.node = tp->record(std::move(n));
        result.tape_id = tp->id();
        result.requires_grad = true;
    }
    return result;
}

inline Tensor binary_elementwise(Tape* tp, OpKind kind, const Tensor& a, const Tensor& b,
                                 const char* name) {
    const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
    require(a.same_shape(b) || a_scalar || b_scalar, Err::ShapeMismatch,
            std::string(name) + ": " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const Tensor& big = b_scalar ? a : b;
    Tensor out(big.shape);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) {
        double av = a_scalar ? a.data[0] : a.data[i];
        double bv = b_scalar ? b.data[0] : b.data[i];
        out.data[i] = kind == OpKind::add ? av + bv : kind == OpKind::sub ? av - bv : av * bv;
    }
    TapeNode node;
    node.kind = kind;
    node.in0 = node_on(tp, a);
    node.in1 = node_on(tp, b);
    node.in0_shape = a.shape;
    node.in1_shape = b.shape;
    if (kind == OpKind::mul) {
        node.v0 = a.detached();
        node.v1 = b.detached();
    }
    return finish(tp, std::move(out), std::move(node));
}

}  // namespace detail

inline Tensor add(Tape* tp, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(tp, OpKind::add, a, b, "add");
}
inline Tensor sub(Tape* tp, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(tp, OpKind::sub, a, b, "sub");
}
inline Tensor mul(Tape* tp, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(tp, OpKind::mul, a, b, "mul");
}

inline Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, Err::ShapeMismatch, "matmul expects rank-2 tensors");
    require(a.shape[1] == b.shape[0], Err::ShapeMismatch,
            "matmul inner dims: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int m = a.shape[0], k = a.shape[1], p = b.shape[1];
    Tensor out({m, p});
    detail::as_mat(out, m, p).noalias() = detail::as_mat(a, m, k) * detail::as_mat(b, k, p);
    TapeNode node;
    node.kind = OpKind::matmul;
    node.in0 = detail::node_on(tp, a);
    node.in1 = detail::node_on(tp, b);
    node.in0_shape = a.shape;
    node.in1_shape = b.shape;
    node.v0 = a.detached();
    node.v1 = b.detached();
    return detail::finish(tp, std::move(out), std::move(node));
}

namespace detail {

template <class F>
Tensor unary_elementwise(Tape* tp, OpKind kind, const Tensor& a, F&& f, bool save_in,
                         bool save_out) {
    Tensor out(a.shape);
    for (size_t i = 0; i < a.numel(); ++i) out.data[i] = f(a.data[i]);
    TapeNode node;
    node.kind = kind;
    node.in0 = node_on(tp, a);
    node.in0_shape = a.shape;
    if (save_in) node.v0 = a.detached();
    if (save_out) node.out = out.detached();
    return finish(tp, std::move(out), std::move(node));
}

}  // namespace detail

inline Tensor relu(Tape* tp, const Tensor& a) {
    return detail::unary_elementwise(
        tp, OpKind::relu, a, [](double v) { return v > 0.0 ? v : 0.0; }, true, false);
}
inline Tensor tanh(Tape* tp, const Tensor& a) {
    return detail::unary_elementwise(
        tp, OpKind::tanh_fn, a, [](double v) { return std::tanh(v); }, false, true);
}
inline Tensor exp(Tape* tp, const Tensor& a) {
    return detail::unary_elementwise(
        tp, OpKind::exp_fn, a, [](double v) { return std::exp(v); }, false, true);
}
inline Tensor log(Tape* tp, const Tensor& a) {
    return detail::unary_elementwise(
        tp, OpKind::log_fn, a, [](double v) { return std::log(v); }, true, false);
}
inline Tensor square(Tape* tp, const Tensor& a) {
    return detail::unary_elementwise(
        tp, OpKind::square, a, [](double v) { return v * v; }, true, false);
}
inline Tensor sqrt(Tape* tp, const Tensor& a) {
    return detail::unary_elementwise(
        tp, OpKind::sqrt_fn, a, [](double v) { return std::sqrt(v); }, false, true);
}

// axis = -1: reduce everything to a scalar. axis 0/1 on rank-2: keep-dims
// row/column sums ([r,c] -> [1,c] or [r,1]).
inline Tensor sum(Tape* tp, const Tensor& a, int axis = -1) {
    require(axis >= -1 && axis < a.rank(), Err::ShapeMismatch, "sum axis out of range");
    Tensor out;
    if (axis < 0 || a.rank() == 1) {
        double s = 0.0;
        for (double v : a.data) s += v;
        out = Tensor::scalar(s);
        axis = -1;
    } else {
        const int r = a.shape[0], c = a.shape[1];
        out = axis == 1 ? Tensor({r, 1}) : Tensor({1, c});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) {
                double v = a.data[static_cast<size_t>(i) * c + j];
                out.data[axis == 1 ? static_cast<size_t>(i) : static_cast<size_t>(j)] += v;
            }
    }
    TapeNode node;
    node.kind = OpKind::sum;
    node.axis = axis;
    node.in0 = detail::node_on(tp, a);
    node.in0_shape = a.shape;
    return detail::finish(tp, std::move(out), std::move(node));
}

inline Tensor mean(Tape* tp, const Tensor& a) {
    require(a.numel() > 0, Err::ShapeMismatch, "mean of empty tensor");
    double s = 0.0;
    for (double v : a.data) s += v;
    Tensor out = Tensor::scalar(s / static_cast<double>(a.numel()));
    TapeNode node;
    node.kind = OpKind::mean;
    node.in0 = detail::node_on(tp, a);
    node.in0_shape = a.shape;
    return detail::finish(tp, std::move(out), std::move(node));
}

inline Tensor concat(Tape* tp, const Tensor& a, const Tensor& b, int axis = 0) {
    require(a.rank() == b.rank() && a.rank() >= 1 && a.rank() <= 2, Err::ShapeMismatch,
            "concat expects equal-rank (1 or 2) tensors");
    require(axis >= 0 && axis < a.rank(), Err::ShapeMismatch, "concat axis out of range");
    Tensor out;
    if (a.rank() == 1 || axis == 0) {
        if (a.rank() == 2)
            require(a.shape[1] == b.shape[1], Err::ShapeMismatch, "concat column mismatch");
        std::vector<int> shp = a.shape;
        shp[0] += b.shape[0];
        out = Tensor(shp);
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<long>(a.numel()));
    } else {
        require(a.shape[0] == b.shape[0], Err::ShapeMismatch, "concat row mismatch");
        const int r = a.shape[0], c0 = a.shape[1], c1 = b.shape[1];
        out = Tensor({r, c0 + c1});
        for (int i = 0; i < r; ++i) {
            std::copy(a.data.begin() + static_cast<long>(i) * c0,
                      a.data.begin() + static_cast<long>(i + 1) * c0,
                      out.data.begin() + static_cast<long>(i) * (c0 + c1));
            std::copy(b.data.begin() + static_cast<long>(i) * c1,
                      b.data.begin() + static_cast<long>(i + 1) * c1,
                      out.data.begin() + static_cast<long>(i) * (c0 + c1) + c0);
        }
    }
    TapeNode node;
    node.kind = OpKind::concat;
    node.axis = axis;
    node.in0 = detail::node_on(tp, a);
    node.in1 = detail::node_on(tp, b);
    node.in0_shape = a.shape;
    node.in1_shape = b.shape;
    return detail::finish(tp, std::move(out), std::move(node));
}

inline Tensor reshape(Tape* tp, const Tensor& a, std::vector<int> new_shape) {
    require(Tensor::numel_of(new_shape) == a.numel(), Err::ShapeMismatch,
            "reshape " + shape_str(a.shape) + " -> " + shape_str(new_shape));
    Tensor out(std::move(new_shape));
    out.data = a.data;
    TapeNode node;
    node.kind = OpKind::reshape;
    node.in0 = detail::node_on(tp, a);
    node.in0_shape = a.shape;
    return detail::finish(tp, std::move(out), std::move(node));
}

inline Tensor slice(Tape* tp, const Tensor& a, int axis, int start, int len) {
    require(a.rank() >= 1 && a.rank() <= 2, Err::ShapeMismatch, "slice expects rank 1 or 2");
    require(axis >= 0 && axis < a.rank(), Err::ShapeMismatch, "slice axis out of range");
    require(start >= 0 && len > 0 && start + len <= a.shape[axis], Err::ShapeMismatch,
            "slice range out of bounds");
    Tensor out;
    if (a.rank() == 1 || axis == 0) {
        std::vector<int> shp = a.shape;
        shp[0] = len;
        out = Tensor(shp);
        size_t row = a.rank() == 2 ? static_cast<size_t>(a.shape[1]) : 1;
        std::copy(a.data.begin() + static_cast<long>(start * row),
                  a.data.begin() + static_cast<long>((start + len) * row), out.data.begin());
    } else {
        const int r = a.shape[0], c = a.shape[1];
        out = Tensor({r, len});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j)
                out.data[static_cast<size_t>(i) * len + j] =
                    a.data[static_cast<size_t>(i) * c + start + j];
    }
    TapeNode node;
    node.kind = OpKind::slice;
    node.axis = a.rank() == 1 ? 0 : axis;
    node.start = start;
    node.len = len;
    node.in0 = detail::node_on(tp, a);
    node.in0_shape = a.shape;
    return detail::finish(tp, std::move(out), std::move(node));
}

// L2 normalization along the last axis: each row of a matrix (the whole of a
// vector) is scaled to unit length. Zero rows fall back to x / kNormFloor so
// the map stays total; generic inputs never hit the floor.
inline Tensor l2norm(Tape* tp, const Tensor& a) {
    require(a.rank() >= 1 && a.rank() <= 2, Err::ShapeMismatch, "l2norm expects rank 1 or 2");
    const int c = a.shape.back();
    const int r = static_cast<int>(a.numel()) / c;
    Tensor out(a.shape);
    Tensor norms({r});
    for (int i = 0; i < r; ++i) {
        const double* x = a.data.data() + static_cast<size_t>(i) * c;
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += x[j] * x[j];
        double norm = std::max(std::sqrt(s), Tape::kNormFloor);
        norms.data[static_cast<size_t>(i)] = norm;
        for (int j = 0; j < c; ++j) out.data[static_cast<size_t>(i) * c + j] = x[j] / norm;
    }
    TapeNode node;
    node.kind = OpKind::l2norm;
    node.in0 = detail::node_on(tp, a);
    node.in0_shape = a.shape;
    node.v1 = std::move(norms);
    node.out = out.detached();
    return detail::finish(tp, std::move(out), std::move(node));
}

}  // namespace steerlab
