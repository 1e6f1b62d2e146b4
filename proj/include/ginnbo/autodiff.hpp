#pragma once

// Reverse-mode automatic differentiation over small dense matrices.
//
// Every node of a Tape holds a row-major matrix. Backward passes are emitted
// as ordinary tape nodes, so the result of grad() is itself differentiable:
// differentiating an expression built from input-gradients with respect to
// network parameters ("double backprop") is just a second call to grad().
//
// A recorded tape can be replayed after leaf values change, which lets a
// training loop build its loss graph once and re-evaluate it every step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ginnbo::ad {

/// Raised when a caller breaks an operation's shape or arity contract.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class OpKind : std::uint8_t {
    Constant,
    Variable,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    MatMul,
    AddRow,
    BroadcastRows,
    ColSum,
    Sum,
    BroadcastScalar,
    MulScalar,
    Tanh,
    OneMinusSquare,
    Square,
    Log,
    Exp,
    Reciprocal,
};

/// Which operand of a MatMul is transposed. Both-transposed is never needed.
enum class Transpose : std::uint8_t { None, Left, Right };

class Tape;

/// Lightweight handle to a tape node.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;
};

class Tape {
public:
    struct Node {
        OpKind kind = OpKind::Constant;
        Transpose trans = Transpose::None;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::int64_t lhs = -1;
        std::int64_t rhs = -1;
        double scalar = 0.0;
        std::vector<double> value;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Drop all nodes. Node buffers are kept for reuse by the next recording.
    void clear() { count_ = 0; }

    std::size_t size() const { return count_; }

    Var constant(std::size_t rows, std::size_t cols, std::span<const double> values) {
        return leaf(OpKind::Constant, rows, cols, values);
    }
    Var constant(double value) { return leaf(OpKind::Constant, 1, 1, std::span<const double>(&value, 1)); }

    /// A leaf that grad() may differentiate with respect to.
    Var variable(std::size_t rows, std::size_t cols, std::span<const double> values) {
        return leaf(OpKind::Variable, rows, cols, values);
    }
    Var variable(double value) { return leaf(OpKind::Variable, 1, 1, std::span<const double>(&value, 1)); }

    /// Overwrite a leaf's payload; call replay() to propagate.
    void set_value(Var leaf_var, std::span<const double> values) {
        Node& n = mutable_node(leaf_var);
        if (n.kind != OpKind::Constant && n.kind != OpKind::Variable) {
            throw ContractViolation("set_value: node is not a leaf");
        }
        if (values.size() != n.value.size()) {
            throw ContractViolation("set_value: size mismatch");
        }
        std::copy(values.begin(), values.end(), n.value.begin());
    }

    /// Recompute every non-leaf node in recording order.
    void replay() {
        for (std::size_t i = 0; i < count_; ++i) {
            if (nodes_[i].kind != OpKind::Constant && nodes_[i].kind != OpKind::Variable) {
                evaluate(i);
            }
        }
    }

    const Node& node(Var v) const { return nodes_.at(checked(v)); }
    std::span<const double> value(Var v) const { return node(v).value; }
    double scalar_value(Var v) const {
        const Node& n = node(v);
        if (n.rows != 1 || n.cols != 1) {
            throw ContractViolation("scalar_value: node is not 1x1");
        }
        return n.value[0];
    }
    std::size_t rows(Var v) const { return node(v).rows; }
    std::size_t cols(Var v) const { return node(v).cols; }

    /// Record a non-leaf op. Shapes are checked here; values computed eagerly.
    Var record(OpKind kind, Var lhs, Var rhs = {}, double scalar = 0.0,
               Transpose trans = Transpose::None, std::size_t extra_rows = 0, std::size_t extra_cols = 0);

private:
    Var leaf(OpKind kind, std::size_t rows, std::size_t cols, std::span<const double> values) {
        if (values.size() != rows * cols) {
            throw ContractViolation("leaf: value count does not match shape");
        }
        Node& n = acquire();
        n.kind = kind;
        n.trans = Transpose::None;
        n.rows = rows;
        n.cols = cols;
        n.lhs = n.rhs = -1;
        n.scalar = 0.0;
        n.value.assign(values.begin(), values.end());
        return Var{this, static_cast<std::uint32_t>(count_ - 1)};
    }

    Node& acquire() {
        if (count_ == nodes_.size()) {
            nodes_.emplace_back();
        }
        return nodes_[count_++];
    }

    std::size_t checked(Var v) const {
        if (v.tape != this || v.id >= count_) {
            throw ContractViolation("variable does not belong to this tape");
        }
        return v.id;
    }
    Node& mutable_node(Var v) { return nodes_.at(checked(v)); }

    void evaluate(std::size_t index);

    std::vector<Node> nodes_;
    std::size_t count_ = 0;
};

namespace detail {

inline void matmul_kernel(const Tape::Node& a, const Tape::Node& b, Transpose trans, Tape::Node& out) {
    std::fill(out.value.begin(), out.value.end(), 0.0);
    double* c = out.value.data();
    const double* pa = a.value.data();
    const double* pb = b.value.data();
    switch (trans) {
    case Transpose::None: {  // (m x k)(k x n)
        const std::size_t m = a.rows, k = a.cols, n = b.cols;
        for (std::size_t i = 0; i < m; ++i) {
            double* ci = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = pa[i * k + p];
                const double* bp = pb + p * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
            }
        }
        break;
    }
    case Transpose::Right: {  // (m x k)(n x k)^T
        const std::size_t m = a.rows, k = a.cols, n = b.rows;
        for (std::size_t i = 0; i < m; ++i) {
            const double* ai = pa + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = pb + j * k;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
                c[i * n + j] = acc;
            }
        }
        break;
    }
    case Transpose::Left: {  // (k x m)^T (k x n)
        const std::size_t k = a.rows, m = a.cols, n = b.cols;
        for (std::size_t p = 0; p < k; ++p) {
            const double* ap = pa + p * m;
            const double* bp = pb + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double api = ap[i];
                double* ci = c + i * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
            }
        }
        break;
    }
    }
}

}  // namespace detail

inline Var Tape::record(OpKind kind, Var lhs, Var rhs, double scalar, Transpose trans, std::size_t extra_rows,
                        std::size_t extra_cols) {
    const std::size_t li = checked(lhs);
    const bool binary = kind == OpKind::Add || kind == OpKind::Sub || kind == OpKind::Mul ||
                        kind == OpKind::MatMul || kind == OpKind::AddRow || kind == OpKind::MulScalar;
    const std::size_t ri = binary ? checked(rhs) : 0;
    const std::size_t lr = nodes_[li].rows, lc = nodes_[li].cols;
    const std::size_t rr = binary ? nodes_[ri].rows : 0, rc = binary ? nodes_[ri].cols : 0;

    std::size_t rows = lr, cols = lc;
    switch (kind) {
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
        if (lr != rr || lc != rc) throw ContractViolation("elementwise op: shape mismatch");
        break;
    case OpKind::MatMul:
        switch (trans) {
        case Transpose::None:
            if (lc != rr) throw ContractViolation("matmul: inner dimension mismatch");
            rows = lr, cols = rc;
            break;
        case Transpose::Right:
            if (lc != rc) throw ContractViolation("matmul: inner dimension mismatch");
            rows = lr, cols = rr;
            break;
        case Transpose::Left:
            if (lr != rr) throw ContractViolation("matmul: inner dimension mismatch");
            rows = lc, cols = rc;
            break;
        }
        break;
    case OpKind::AddRow:
        if (rr != 1 || rc != lc) throw ContractViolation("add_row: expected 1 x cols row");
        break;
    case OpKind::MulScalar:
        if (rr != 1 || rc != 1) throw ContractViolation("mul_scalar: expected 1x1 scalar");
        break;
    case OpKind::BroadcastRows:
        if (lr != 1) throw ContractViolation("broadcast_rows: expected a row");
        rows = extra_rows;
        break;
    case OpKind::BroadcastScalar:
        if (lr != 1 || lc != 1) throw ContractViolation("broadcast_scalar: expected 1x1");
        rows = extra_rows, cols = extra_cols;
        break;
    case OpKind::ColSum:
        rows = 1;
        break;
    case OpKind::Sum:
        rows = cols = 1;
        break;
    case OpKind::Constant:
    case OpKind::Variable:
        throw ContractViolation("record: leaves are created with constant()/variable()");
    default:
        break;
    }

    Node& n = acquire();
    n.kind = kind;
    n.trans = trans;
    n.rows = rows;
    n.cols = cols;
    n.lhs = static_cast<std::int64_t>(li);
    n.rhs = binary ? static_cast<std::int64_t>(ri) : -1;
    n.scalar = scalar;
    n.value.resize(rows * cols);
    evaluate(count_ - 1);
    return Var{this, static_cast<std::uint32_t>(count_ - 1)};
}

inline void Tape::evaluate(std::size_t index) {
    Node& n = nodes_[index];
    const Node& a = nodes_[static_cast<std::size_t>(n.lhs)];
    const Node* b = n.rhs >= 0 ? &nodes_[static_cast<std::size_t>(n.rhs)] : nullptr;
    double* out = n.value.data();
    const double* x = a.value.data();
    const std::size_t size = n.value.size();
    switch (n.kind) {
    case OpKind::Add:
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] + b->value[i];
        break;
    case OpKind::Sub:
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] - b->value[i];
        break;
    case OpKind::Mul:
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] * b->value[i];
        break;
    case OpKind::Scale:
        for (std::size_t i = 0; i < size; ++i) out[i] = n.scalar * x[i];
        break;
    case OpKind::AddScalar:
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] + n.scalar;
        break;
    case OpKind::MatMul:
        detail::matmul_kernel(a, *b, n.trans, n);
        break;
    case OpKind::AddRow:
        for (std::size_t r = 0; r < n.rows; ++r)
            for (std::size_t c = 0; c < n.cols; ++c) out[r * n.cols + c] = x[r * n.cols + c] + b->value[c];
        break;
    case OpKind::BroadcastRows:
        for (std::size_t r = 0; r < n.rows; ++r) std::copy(x, x + n.cols, out + r * n.cols);
        break;
    case OpKind::ColSum:
        std::fill(out, out + n.cols, 0.0);
        for (std::size_t r = 0; r < a.rows; ++r)
            for (std::size_t c = 0; c < n.cols; ++c) out[c] += x[r * n.cols + c];
        break;
    case OpKind::Sum: {
        double acc = 0.0;
        for (double v : a.value) acc += v;
        out[0] = acc;
        break;
    }
    case OpKind::BroadcastScalar:
        std::fill(out, out + size, x[0]);
        break;
    case OpKind::MulScalar: {
        const double s = b->value[0];
        for (std::size_t i = 0; i < size; ++i) out[i] = s * x[i];
        break;
    }
    case OpKind::Tanh:
        for (std::size_t i = 0; i < size; ++i) out[i] = std::tanh(x[i]);
        break;
    case OpKind::OneMinusSquare:
        for (std::size_t i = 0; i < size; ++i) out[i] = 1.0 - x[i] * x[i];
        break;
    case OpKind::Square:
        for (std::size_t i = 0; i < size; ++i) out[i] = x[i] * x[i];
        break;
    case OpKind::Log:
        for (std::size_t i = 0; i < size; ++i) out[i] = std::log(x[i]);
        break;
    case OpKind::Exp:
        for (std::size_t i = 0; i < size; ++i) out[i] = std::exp(x[i]);
        break;
    case OpKind::Reciprocal:
        for (std::size_t i = 0; i < size; ++i) out[i] = 1.0 / x[i];
        break;
    case OpKind::Constant:
    case OpKind::Variable:
        break;
    }
}

// ---------------------------------------------------------------- primitives

inline Var operator+(Var a, Var b) { return a.tape->record(OpKind::Add, a, b); }
inline Var operator-(Var a, Var b) { return a.tape->record(OpKind::Sub, a, b); }
/// Elementwise (Hadamard) product.
inline Var operator*(Var a, Var b) { return a.tape->record(OpKind::Mul, a, b); }
inline Var operator*(double s, Var a) { return a.tape->record(OpKind::Scale, a, {}, s); }
inline Var operator*(Var a, double s) { return s * a; }
inline Var operator-(Var a) { return -1.0 * a; }
inline Var operator+(Var a, double s) { return a.tape->record(OpKind::AddScalar, a, {}, s); }
inline Var operator+(double s, Var a) { return a + s; }
inline Var operator-(Var a, double s) { return a + (-s); }

inline Var matmul(Var a, Var b, Transpose trans = Transpose::None) {
    return a.tape->record(OpKind::MatMul, a, b, 0.0, trans);
}
/// Add a 1 x cols row to every row of a.
inline Var add_row(Var a, Var row) { return a.tape->record(OpKind::AddRow, a, row); }
inline Var broadcast_rows(Var row, std::size_t rows) {
    return row.tape->record(OpKind::BroadcastRows, row, {}, 0.0, Transpose::None, rows);
}
inline Var col_sum(Var a) { return a.tape->record(OpKind::ColSum, a); }
inline Var sum(Var a) { return a.tape->record(OpKind::Sum, a); }
inline Var broadcast_scalar(Var s, std::size_t rows, std::size_t cols) {
    return s.tape->record(OpKind::BroadcastScalar, s, {}, 0.0, Transpose::None, rows, cols);
}
/// Scale every element of a by the 1x1 node s.
inline Var mul_scalar(Var a, Var s) { return a.tape->record(OpKind::MulScalar, a, s); }
inline Var tanh(Var a) { return a.tape->record(OpKind::Tanh, a); }
/// 1 - a^2 elementwise; the derivative factor of tanh expressed through its output.
inline Var one_minus_square(Var a) { return a.tape->record(OpKind::OneMinusSquare, a); }
inline Var square(Var a) { return a.tape->record(OpKind::Square, a); }
inline Var log(Var a) { return a.tape->record(OpKind::Log, a); }
inline Var exp(Var a) { return a.tape->record(OpKind::Exp, a); }
inline Var reciprocal(Var a) { return a.tape->record(OpKind::Reciprocal, a); }
/// Squared L2 norm of all elements, as a 1x1 node.
inline Var squared_norm(Var a) { return sum(square(a)); }

// ---------------------------------------------------------------- backward

namespace detail {

inline void accumulate(std::vector<std::int64_t>& adjoint, std::size_t target, Var contribution) {
    if (adjoint[target] < 0) {
        adjoint[target] = contribution.id;
    } else {
        Var prev{contribution.tape, static_cast<std::uint32_t>(adjoint[target])};
        adjoint[target] = (prev + contribution).id;
    }
}

}  // namespace detail

/// Gradients of the 1x1 node `output` with respect to each leaf in `wrt`.
///
/// The returned gradients are tape nodes shaped like their leaves, so they can
/// take part in further expressions and be differentiated again. A leaf the
/// output does not depend on receives a zero matrix.
inline std::vector<Var> grad(Var output, std::span<const Var> wrt) {
    Tape& tape = *output.tape;
    const Tape::Node& out_node = tape.node(output);
    if (out_node.rows != 1 || out_node.cols != 1) {
        throw ContractViolation("grad: output must be a 1x1 scalar node, got " + std::to_string(out_node.rows) +
                                "x" + std::to_string(out_node.cols));
    }
    const std::size_t end = static_cast<std::size_t>(output.id) + 1;

    // Nodes on a path from some wrt leaf.
    std::vector<char> live(end, 0);
    for (Var w : wrt) {
        const Tape::Node& leaf_node = tape.node(w);
        if (leaf_node.kind != OpKind::Variable && leaf_node.kind != OpKind::Constant) {
            throw ContractViolation("grad: wrt entries must be leaves");
        }
        if (w.id < end) live[w.id] = 1;
    }
    for (std::size_t i = 0; i < end; ++i) {
        const Tape::Node& n = tape.node(Var{&tape, static_cast<std::uint32_t>(i)});
        if ((n.lhs >= 0 && live[static_cast<std::size_t>(n.lhs)]) ||
            (n.rhs >= 0 && live[static_cast<std::size_t>(n.rhs)])) {
            live[i] = 1;
        }
    }

    std::vector<std::int64_t> adjoint(end, -1);
    if (live[output.id]) adjoint[output.id] = tape.constant(1.0).id;

    for (std::size_t idx = end; idx-- > 0;) {
        if (adjoint[idx] < 0 || !live[idx]) continue;
        const Var self{&tape, static_cast<std::uint32_t>(idx)};
        const Var g{&tape, static_cast<std::uint32_t>(adjoint[idx])};
        // Copy what we need: recording new nodes may reallocate node storage.
        const OpKind kind = tape.node(self).kind;
        const Transpose trans = tape.node(self).trans;
        const double scalar = tape.node(self).scalar;
        const std::int64_t li = tape.node(self).lhs;
        const std::int64_t ri = tape.node(self).rhs;
        const Var a{&tape, static_cast<std::uint32_t>(li < 0 ? 0 : li)};
        const Var b{&tape, static_cast<std::uint32_t>(ri < 0 ? 0 : ri)};
        const bool da = li >= 0 && live[static_cast<std::size_t>(li)];
        const bool db = ri >= 0 && live[static_cast<std::size_t>(ri)];
        const std::size_t la = static_cast<std::size_t>(li);
        const std::size_t lb = static_cast<std::size_t>(ri);

        switch (kind) {
        case OpKind::Constant:
        case OpKind::Variable:
            break;
        case OpKind::Add:
            if (da) detail::accumulate(adjoint, la, g);
            if (db) detail::accumulate(adjoint, lb, g);
            break;
        case OpKind::Sub:
            if (da) detail::accumulate(adjoint, la, g);
            if (db) detail::accumulate(adjoint, lb, -g);
            break;
        case OpKind::Mul:
            if (da) detail::accumulate(adjoint, la, g * b);
            if (db) detail::accumulate(adjoint, lb, g * a);
            break;
        case OpKind::Scale:
            if (da) detail::accumulate(adjoint, la, scalar * g);
            break;
        case OpKind::AddScalar:
            if (da) detail::accumulate(adjoint, la, g);
            break;
        case OpKind::MatMul:
            switch (trans) {
            case Transpose::None:  // Y = A B
                if (da) detail::accumulate(adjoint, la, matmul(g, b, Transpose::Right));
                if (db) detail::accumulate(adjoint, lb, matmul(a, g, Transpose::Left));
                break;
            case Transpose::Right:  // Y = A B^T
                if (da) detail::accumulate(adjoint, la, matmul(g, b, Transpose::None));
                if (db) detail::accumulate(adjoint, lb, matmul(g, a, Transpose::Left));
                break;
            case Transpose::Left:  // Y = A^T B
                if (da) detail::accumulate(adjoint, la, matmul(b, g, Transpose::Right));
                if (db) detail::accumulate(adjoint, lb, matmul(a, g, Transpose::None));
                break;
            }
            break;
        case OpKind::AddRow:
            if (da) detail::accumulate(adjoint, la, g);
            if (db) detail::accumulate(adjoint, lb, col_sum(g));
            break;
        case OpKind::BroadcastRows:
            if (da) detail::accumulate(adjoint, la, col_sum(g));
            break;
        case OpKind::ColSum:
            if (da) detail::accumulate(adjoint, la, broadcast_rows(g, tape.rows(a)));
            break;
        case OpKind::Sum:
            if (da) detail::accumulate(adjoint, la, broadcast_scalar(g, tape.rows(a), tape.cols(a)));
            break;
        case OpKind::BroadcastScalar:
            if (da) detail::accumulate(adjoint, la, sum(g));
            break;
        case OpKind::MulScalar:
            if (da) detail::accumulate(adjoint, la, mul_scalar(g, b));
            if (db) detail::accumulate(adjoint, lb, sum(g * a));
            break;
        case OpKind::Tanh:
            if (da) detail::accumulate(adjoint, la, g * one_minus_square(self));
            break;
        case OpKind::OneMinusSquare:
            if (da) detail::accumulate(adjoint, la, g * (-2.0 * a));
            break;
        case OpKind::Square:
            if (da) detail::accumulate(adjoint, la, g * (2.0 * a));
            break;
        case OpKind::Log:
            if (da) detail::accumulate(adjoint, la, g * reciprocal(a));
            break;
        case OpKind::Exp:
            if (da) detail::accumulate(adjoint, la, g * self);
            break;
        case OpKind::Reciprocal:
            if (da) detail::accumulate(adjoint, la, g * (-square(self)));
            break;
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (Var w : wrt) {
        if (w.id < end && adjoint[w.id] >= 0) {
            result.push_back(Var{&tape, static_cast<std::uint32_t>(adjoint[w.id])});
        } else {
            const std::size_t r = tape.rows(w), c = tape.cols(w);
            const std::vector<double> zeros(r * c, 0.0);
            result.push_back(tape.constant(r, c, zeros));
        }
    }
    return result;
}

inline Var grad(Var output, Var wrt) { return grad(output, std::span<const Var>(&wrt, 1)).front(); }

/// Input-gradient of a recorded scalar-per-row output.
///
/// `output` is a rows x 1 column whose row r depends only on row r of the
/// input leaf `inputs`; the result has the shape of `inputs` and row r holds
/// the gradient of output r. The result stays on the tape.
inline Var grad_wrt_inputs(Var output, Var inputs) {
    const Tape& tape = *output.tape;
    if (tape.cols(output) != 1) {
        throw ContractViolation("grad_wrt_inputs: output must be a column of per-row scalars");
    }
    if (tape.rows(output) != tape.rows(inputs)) {
        throw ContractViolation("grad_wrt_inputs: output and input row counts differ");
    }
    return grad(sum(output), inputs);
}

/// Parameter-gradient of a scalar loss, one gradient node per parameter leaf.
inline std::vector<Var> grad_wrt_params(Var loss, std::span<const Var> params) { return grad(loss, params); }

}  // namespace ginnbo::ad
