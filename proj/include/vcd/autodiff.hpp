#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// matrices. Every tensor is two-dimensional: a batch of rows by a feature
// width. Scalars are 1x1.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vcd {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace ad {

struct Shape {
    Index rows = 0;
    Index cols = 0;

    [[nodiscard]] Index size() const { return rows * cols; }
    [[nodiscard]] std::string str() const;
    bool operator==(const Shape&) const = default;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A named trainable tensor. `grad` accumulates across backward passes until
/// zero_grad() is called.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter(std::string n, Matrix v);
    void zero_grad() { grad.setZero(); }
    [[nodiscard]] Shape shape() const { return {value.rows(), value.cols()}; }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] const Matrix& grad() const;
    [[nodiscard]] Shape shape() const;
    [[nodiscard]] Index rows() const { return value().rows(); }
    [[nodiscard]] Index cols() const { return value().cols(); }
    [[nodiscard]] double item() const;
    [[nodiscard]] bool requires_grad() const;
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] int id() const { return id_; }
    [[nodiscard]] bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    /// Called with the node's incoming gradient and its own forward value.
    using BackwardFn = std::function<void(Tape&, const Matrix& grad, const Matrix& value)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Data that never receives a gradient.
    Var constant(Matrix value);
    Var scalar(double value);
    /// Free leaf that receives a gradient readable through Var::grad().
    Var variable(Matrix value);
    /// Leaf bound to a parameter; backward() adds into parameter.grad.
    Var leaf(Parameter& parameter);

    /// Reverse sweep from a 1x1 root. Visits every node once, newest first.
    void backward(const Var& root);

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    // Op-author interface.
    /// Records an op result. Throws std::domain_error if any entry is not finite.
    Var record(const char* op, Matrix value, std::span<const Var> parents, BackwardFn backward);
    Var record(const char* op, Matrix value, std::initializer_list<Var> parents,
               BackwardFn backward) {
        return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                      std::move(backward));
    }
    [[nodiscard]] const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    [[nodiscard]] const Matrix& grad(int id) const;
    [[nodiscard]] bool requires_grad(int id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }

    template <class Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad) return;
        if (!node.has_grad) {
            node.grad = g;
            node.has_grad = true;
        } else {
            node.grad += g;
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        BackwardFn backward;
        Parameter* parameter = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
        bool is_leaf = false;
    };

    Var push(Node node);

    std::deque<Node> nodes_;
    Matrix empty_;
};

// Elementwise binary ops broadcast either operand when it is 1x1, 1xN or Bx1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Row-major reshape.
Var reshape(const Var& a, Index rows, Index cols);

Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(const Var& a, Index start, Index width);
Var slice_rows(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);
/// Inverse of gather_rows: places row r of `a` at row rows[r] of a zero matrix.
Var scatter_rows(const Var& a, std::span<const Index> rows, Index total_rows);
/// Columns [g*stride + offset, g*stride + offset + width) for every group g.
Var grouped_slice(const Var& a, Index groups, Index stride, Index offset, Index width);
/// B x n -> B x (times*n), repeating the row block.
Var tile_cols(const Var& a, Index times);
/// 1 x n -> rows x n.
Var broadcast_rows(const Var& a, Index rows);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
/// max(a, floor) with sub-gradient 0 below the floor.
Var clamp_min(const Var& a, double floor);
Var stop_gradient(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// Row sums, B x 1.
Var sum_cols(const Var& a);
/// (n*period) x c -> period x c, summing rows with equal index modulo period.
Var fold_rows(const Var& a, Index period);

/// Block-diagonal affine map. x is B x (groups*in), w is (groups*in) x out,
/// b is 1 x (groups*out). Group g maps x's g-th block through w's g-th row block.
Var grouped_linear(const Var& x, const Var& w, const Var& b, Index groups);

/// Straight-through Bernoulli sample: forward 1[logits + noise > 0], backward
/// sigmoid'(logits + noise) into logits. noise receives no gradient.
Var sample_mask_st(const Var& logits, const Var& noise);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace ad
}  // namespace vcd
