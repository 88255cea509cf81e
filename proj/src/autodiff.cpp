#include "vcd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace vcd::ad {

std::string Shape::str() const {
    std::ostringstream out;
    out << "[" << rows << "x" << cols << "]";
    return out.str();
}

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
Shape Var::shape() const { return {rows(), cols()}; }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::item() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw ShapeError("item() on non-scalar tensor " + shape().str());
    }
    return v(0, 0);
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
    Node node;
    node.value = std::move(value);
    node.is_leaf = true;
    return push(std::move(node));
}

Var Tape::scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::variable(Matrix value) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = true;
    node.is_leaf = true;
    return push(std::move(node));
}

Var Tape::leaf(Parameter& parameter) {
    Node node;
    node.value = parameter.value;
    node.parameter = &parameter;
    node.requires_grad = true;
    node.is_leaf = true;
    return push(std::move(node));
}

Var Tape::record(const char* op, Matrix value, std::span<const Var> parents, BackwardFn backward) {
    if (!value.allFinite()) {
        throw std::domain_error(std::string("non-finite result in op '") + op + "'");
    }
    Node node;
    node.value = std::move(value);
    for (const Var& p : parents) {
        if (p.tape_ != this) throw std::logic_error(std::string("op '") + op + "' mixes tapes");
        node.requires_grad = node.requires_grad || requires_grad(p.id_);
    }
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
}

const Matrix& Tape::grad(int id) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.has_grad) return empty_;
    return node.grad;
}

void Tape::backward(const Var& root) {
    if (root.tape_ != this) throw std::logic_error("backward root belongs to another tape");
    const Matrix& rv = value(root.id_);
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw ShapeError("backward requires a scalar root, got " + root.shape().str());
    }
    if (!requires_grad(root.id_)) return;
    accumulate(root.id_, Matrix::Ones(1, 1));
    for (int id = root.id_; id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.has_grad) continue;
        if (node.parameter != nullptr) node.parameter->grad += node.grad;
        if (node.backward) {
            node.backward(*this, node.grad, node.value);
            // Intermediate gradients are not needed once propagated.
            node.grad.resize(0, 0);
            node.has_grad = false;
        }
    }
}

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
    throw ShapeError(std::string(op) + ": " + detail);
}

std::string shapes(const Var& a, const Var& b) { return a.shape().str() + " vs " + b.shape().str(); }

bool broadcastable(Index from, Index to) { return from == to || from == 1; }

Matrix expand(const Matrix& m, Index rows, Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    Matrix out(rows, cols);
    if (m.rows() == 1 && m.cols() == 1) {
        out.setConstant(m(0, 0));
    } else if (m.rows() == 1) {
        out = m.replicate(rows, 1);
    } else {
        out = m.replicate(1, cols);
    }
    return out;
}

Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (rows == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

struct Broadcast {
    Index rows;
    Index cols;
};

Broadcast broadcast_shape(const char* op, const Var& a, const Var& b) {
    const Index rows = std::max(a.rows(), b.rows());
    const Index cols = std::max(a.cols(), b.cols());
    if (!broadcastable(a.rows(), rows) || !broadcastable(a.cols(), cols) ||
        !broadcastable(b.rows(), rows) || !broadcastable(b.cols(), cols)) {
        shape_fail(op, "incompatible shapes " + shapes(a, b));
    }
    return {rows, cols};
}

template <class Fn>
Var unary(const char* op, const Var& a, Matrix value, Fn local_grad) {
    const int ia = a.id();
    return a.tape().record(op, std::move(value), {a},
                           [ia, local_grad](Tape& t, const Matrix& g, const Matrix& out) {
                               t.accumulate(ia, local_grad(t.value(ia), out, g));
                           });
}

}  // namespace

Var add(const Var& a, const Var& b) {
    const auto [rows, cols] = broadcast_shape("add", a, b);
    Matrix out = expand(a.value(), rows, cols) + expand(b.value(), rows, cols);
    const int ia = a.id(), ib = b.id();
    const Shape sa = a.shape(), sb = b.shape();
    return a.tape().record("add", std::move(out), {a, b},
                           [=](Tape& t, const Matrix& g, const Matrix&) {
                               if (t.requires_grad(ia)) t.accumulate(ia, reduce_to(g, sa.rows, sa.cols));
                               if (t.requires_grad(ib)) t.accumulate(ib, reduce_to(g, sb.rows, sb.cols));
                           });
}

Var sub(const Var& a, const Var& b) {
    const auto [rows, cols] = broadcast_shape("sub", a, b);
    Matrix out = expand(a.value(), rows, cols) - expand(b.value(), rows, cols);
    const int ia = a.id(), ib = b.id();
    const Shape sa = a.shape(), sb = b.shape();
    return a.tape().record("sub", std::move(out), {a, b},
                           [=](Tape& t, const Matrix& g, const Matrix&) {
                               if (t.requires_grad(ia)) t.accumulate(ia, reduce_to(g, sa.rows, sa.cols));
                               if (t.requires_grad(ib)) t.accumulate(ib, -reduce_to(g, sb.rows, sb.cols));
                           });
}

Var mul(const Var& a, const Var& b) {
    const auto [rows, cols] = broadcast_shape("mul", a, b);
    const bool same = a.shape() == b.shape();
    Matrix out = same ? Matrix(a.value().cwiseProduct(b.value()))
                      : Matrix(expand(a.value(), rows, cols).cwiseProduct(expand(b.value(), rows, cols)));
    const int ia = a.id(), ib = b.id();
    const Shape sa = a.shape(), sb = b.shape();
    return a.tape().record("mul", std::move(out), {a, b},
                           [=](Tape& t, const Matrix& g, const Matrix&) {
                               if (same) {
                                   if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                                   if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                                   return;
                               }
                               if (t.requires_grad(ia)) {
                                   Matrix ga = g.cwiseProduct(expand(t.value(ib), rows, cols));
                                   t.accumulate(ia, reduce_to(ga, sa.rows, sa.cols));
                               }
                               if (t.requires_grad(ib)) {
                                   Matrix gb = g.cwiseProduct(expand(t.value(ia), rows, cols));
                                   t.accumulate(ib, reduce_to(gb, sb.rows, sb.cols));
                               }
                           });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
    return unary("scale", a, a.value() * s,
                 [s](const Matrix&, const Matrix&, const Matrix& g) { return Matrix(g * s); });
}

Var add_scalar(const Var& a, double s) {
    return unary("add_scalar", a, (a.value().array() + s).matrix(),
                 [](const Matrix&, const Matrix&, const Matrix& g) { return g; });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) shape_fail("matmul", "inner dimensions differ " + shapes(a, b));
    Matrix out = a.value() * b.value();
    const int ia = a.id(), ib = b.id();
    return a.tape().record("matmul", std::move(out), {a, b},
                           [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                               if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                               if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                           });
}

Var transpose(const Var& a) {
    return unary("transpose", a, a.value().transpose(),
                 [](const Matrix&, const Matrix&, const Matrix& g) { return Matrix(g.transpose()); });
}

Var reshape(const Var& a, Index rows, Index cols) {
    if (rows * cols != a.value().size()) {
        shape_fail("reshape", a.shape().str() + " cannot become " + Shape{rows, cols}.str());
    }
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
    const Shape sa = a.shape();
    return unary("reshape", a, std::move(out), [sa](const Matrix&, const Matrix&, const Matrix& g) {
        return Matrix(Eigen::Map<const Matrix>(g.data(), sa.rows, sa.cols));
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) shape_fail("concat_cols", "no inputs");
    const Index rows = parts.front().rows();
    Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) shape_fail("concat_cols", "row mismatch " + shapes(parts.front(), p));
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<int> ids;
    std::vector<Index> offsets;
    Index offset = 0;
    for (const Var& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        ids.push_back(p.id());
        offsets.push_back(offset);
        offset += p.cols();
    }
    return parts.front().tape().record(
        "concat_cols", std::move(out), parts,
        [ids = std::move(ids), offsets = std::move(offsets)](Tape& t, const Matrix& g, const Matrix&) {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (!t.requires_grad(ids[i])) continue;
                t.accumulate(ids[i], g.middleCols(offsets[i], t.value(ids[i]).cols()));
            }
        });
}

Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(const Var& a, Index start, Index width) {
    if (start < 0 || width < 0 || start + width > a.cols()) {
        shape_fail("slice_cols", "columns [" + std::to_string(start) + "," + std::to_string(start + width) +
                                     ") out of " + a.shape().str());
    }
    const Shape sa = a.shape();
    return unary("slice_cols", a, a.value().middleCols(start, width),
                 [sa, start, width](const Matrix&, const Matrix&, const Matrix& g) {
                     Matrix full = Matrix::Zero(sa.rows, sa.cols);
                     full.middleCols(start, width) = g;
                     return full;
                 });
}

Var slice_rows(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) {
        shape_fail("slice_rows", "rows [" + std::to_string(start) + "," + std::to_string(start + count) +
                                     ") out of " + a.shape().str());
    }
    const Shape sa = a.shape();
    return unary("slice_rows", a, a.value().middleRows(start, count),
                 [sa, start, count](const Matrix&, const Matrix&, const Matrix& g) {
                     Matrix full = Matrix::Zero(sa.rows, sa.cols);
                     full.middleRows(start, count) = g;
                     return full;
                 });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
    Matrix out(static_cast<Index>(rows.size()), a.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= a.rows()) {
            shape_fail("gather_rows", "row " + std::to_string(rows[r]) + " out of " + a.shape().str());
        }
        out.row(static_cast<Index>(r)) = a.value().row(rows[r]);
    }
    const Shape sa = a.shape();
    std::vector<Index> idx(rows.begin(), rows.end());
    return unary("gather_rows", a, std::move(out),
                 [sa, idx = std::move(idx)](const Matrix&, const Matrix&, const Matrix& g) {
                     Matrix full = Matrix::Zero(sa.rows, sa.cols);
                     for (std::size_t r = 0; r < idx.size(); ++r) full.row(idx[r]) += g.row(static_cast<Index>(r));
                     return full;
                 });
}

Var scatter_rows(const Var& a, std::span<const Index> rows, Index total_rows) {
    if (static_cast<Index>(rows.size()) != a.rows()) {
        shape_fail("scatter_rows", "index count " + std::to_string(rows.size()) + " vs " + a.shape().str());
    }
    Matrix out = Matrix::Zero(total_rows, a.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= total_rows) {
            shape_fail("scatter_rows", "target row " + std::to_string(rows[r]) + " out of " +
                                           std::to_string(total_rows));
        }
        out.row(rows[r]) += a.value().row(static_cast<Index>(r));
    }
    std::vector<Index> idx(rows.begin(), rows.end());
    return unary("scatter_rows", a, std::move(out),
                 [idx = std::move(idx)](const Matrix& in, const Matrix&, const Matrix& g) {
                     Matrix ga(in.rows(), in.cols());
                     for (std::size_t r = 0; r < idx.size(); ++r) ga.row(static_cast<Index>(r)) = g.row(idx[r]);
                     return ga;
                 });
}

Var grouped_slice(const Var& a, Index groups, Index stride, Index offset, Index width) {
    if (groups * stride != a.cols() || offset < 0 || width < 0 || offset + width > stride) {
        shape_fail("grouped_slice", "groups=" + std::to_string(groups) + " stride=" + std::to_string(stride) +
                                        " offset=" + std::to_string(offset) + " width=" + std::to_string(width) +
                                        " on " + a.shape().str());
    }
    Matrix out(a.rows(), groups * width);
    for (Index g = 0; g < groups; ++g) {
        out.middleCols(g * width, width) = a.value().middleCols(g * stride + offset, width);
    }
    const Shape sa = a.shape();
    return unary("grouped_slice", a, std::move(out),
                 [=](const Matrix&, const Matrix&, const Matrix& gout) {
                     Matrix full = Matrix::Zero(sa.rows, sa.cols);
                     for (Index g = 0; g < groups; ++g) {
                         full.middleCols(g * stride + offset, width) = gout.middleCols(g * width, width);
                     }
                     return full;
                 });
}

Var tile_cols(const Var& a, Index times) {
    if (times < 1) shape_fail("tile_cols", "times must be positive");
    const Index w = a.cols();
    return unary("tile_cols", a, a.value().replicate(1, times),
                 [w, times](const Matrix& in, const Matrix&, const Matrix& g) {
                     Matrix ga = Matrix::Zero(in.rows(), w);
                     for (Index k = 0; k < times; ++k) ga += g.middleCols(k * w, w);
                     return ga;
                 });
}

Var broadcast_rows(const Var& a, Index rows) {
    if (a.rows() != 1) shape_fail("broadcast_rows", "expects a single row, got " + a.shape().str());
    return unary("broadcast_rows", a, a.value().replicate(rows, 1),
                 [](const Matrix&, const Matrix&, const Matrix& g) { return Matrix(g.colwise().sum()); });
}

Var sigmoid(const Var& a) {
    Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return unary("sigmoid", a, std::move(out), [](const Matrix&, const Matrix& y, const Matrix& g) {
        return Matrix(g.array() * y.array() * (1.0 - y.array()));
    });
}

Var tanh(const Var& a) {
    return unary("tanh", a, a.value().array().tanh().matrix(),
                 [](const Matrix&, const Matrix& y, const Matrix& g) {
                     return Matrix(g.array() * (1.0 - y.array().square()));
                 });
}

Var relu(const Var& a) {
    return unary("relu", a, a.value().cwiseMax(0.0), [](const Matrix& x, const Matrix&, const Matrix& g) {
        return Matrix((x.array() > 0.0).select(g.array(), 0.0));
    });
}

Var exp(const Var& a) {
    return unary("exp", a, a.value().array().exp().matrix(),
                 [](const Matrix&, const Matrix& y, const Matrix& g) { return Matrix(g.cwiseProduct(y)); });
}

Var log(const Var& a) {
    return unary("log", a, a.value().array().log().matrix(),
                 [](const Matrix& x, const Matrix&, const Matrix& g) { return Matrix(g.array() / x.array()); });
}

Var square(const Var& a) {
    return unary("square", a, a.value().array().square().matrix(),
                 [](const Matrix& x, const Matrix&, const Matrix& g) {
                     return Matrix(2.0 * g.array() * x.array());
                 });
}

Var clamp_min(const Var& a, double floor) {
    return unary("clamp_min", a, a.value().cwiseMax(floor),
                 [floor](const Matrix& x, const Matrix&, const Matrix& g) {
                     return Matrix((x.array() >= floor).select(g.array(), 0.0));
                 });
}

Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

Var sum(const Var& a) {
    const Shape sa = a.shape();
    return unary("sum", a, Matrix::Constant(1, 1, a.value().sum()),
                 [sa](const Matrix&, const Matrix&, const Matrix& g) {
                     return Matrix(Matrix::Constant(sa.rows, sa.cols, g(0, 0)));
                 });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) shape_fail("mean", "empty tensor");
    return scale(sum(a), 1.0 / n);
}

Var sum_cols(const Var& a) {
    const Index cols = a.cols();
    return unary("sum_cols", a, a.value().rowwise().sum(), [cols](const Matrix&, const Matrix&, const Matrix& g) {
        return Matrix(g.replicate(1, cols));
    });
}

Var fold_rows(const Var& a, Index period) {
    if (period < 1 || a.rows() % period != 0) {
        shape_fail("fold_rows", "period " + std::to_string(period) + " does not divide " + a.shape().str());
    }
    const Index blocks = a.rows() / period;
    Matrix out = Matrix::Zero(period, a.cols());
    for (Index k = 0; k < blocks; ++k) out += a.value().middleRows(k * period, period);
    return unary("fold_rows", a, std::move(out), [blocks](const Matrix&, const Matrix&, const Matrix& g) {
        return Matrix(g.replicate(blocks, 1));
    });
}

Var grouped_linear(const Var& x, const Var& w, const Var& b, Index groups) {
    if (groups < 1 || x.cols() % groups != 0 || w.rows() != x.cols() || b.rows() != 1 ||
        b.cols() != groups * w.cols()) {
        shape_fail("grouped_linear", "x " + x.shape().str() + ", w " + w.shape().str() + ", b " + b.shape().str() +
                                         ", groups " + std::to_string(groups));
    }
    const Index in = x.cols() / groups;
    const Index out_w = w.cols();
    const Index batch = x.rows();
    Matrix out(batch, groups * out_w);
    const Matrix& xv = x.value();
    const Matrix& wv = w.value();
    for (Index g = 0; g < groups; ++g) {
        out.middleCols(g * out_w, out_w).noalias() = xv.middleCols(g * in, in) * wv.middleRows(g * in, in);
    }
    out.rowwise() += b.value().row(0);
    const int ix = x.id(), iw = w.id(), ib = b.id();
    return x.tape().record(
        "grouped_linear", std::move(out), {x, w, b},
        [=](Tape& t, const Matrix& g, const Matrix&) {
            const Matrix& xval = t.value(ix);
            const Matrix& wval = t.value(iw);
            if (t.requires_grad(ix)) {
                Matrix gx(batch, groups * in);
                for (Index k = 0; k < groups; ++k) {
                    gx.middleCols(k * in, in).noalias() =
                        g.middleCols(k * out_w, out_w) * wval.middleRows(k * in, in).transpose();
                }
                t.accumulate(ix, gx);
            }
            if (t.requires_grad(iw)) {
                Matrix gw(groups * in, out_w);
                for (Index k = 0; k < groups; ++k) {
                    gw.middleRows(k * in, in).noalias() =
                        xval.middleCols(k * in, in).transpose() * g.middleCols(k * out_w, out_w);
                }
                t.accumulate(iw, gw);
            }
            if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
        });
}

Var sample_mask_st(const Var& logits, const Var& noise) {
    if (logits.shape() != noise.shape()) {
        shape_fail("sample_mask_st", "logits/noise mismatch " + shapes(logits, noise));
    }
    Matrix pre = logits.value() + noise.value();
    Matrix out = (pre.array() > 0.0).cast<double>().matrix();
    const int il = logits.id();
    return logits.tape().record("sample_mask_st", std::move(out), {logits},
                                [il, pre = std::move(pre)](Tape& t, const Matrix& g, const Matrix&) {
                                    const auto s = 1.0 / (1.0 + (-pre.array()).exp());
                                    t.accumulate(il, Matrix(g.array() * s * (1.0 - s)));
                                });
}

}  // namespace vcd::ad
