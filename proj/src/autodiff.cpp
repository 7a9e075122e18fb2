#include "driftlab/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "driftlab/error.hpp"

namespace driftlab::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <class Fwd, class Deriv>
Var unary(const Var& x, Fwd&& fwd, Deriv&& deriv) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& in = x.value().data;
    for (std::size_t i = 0; i < in.size(); ++i) {
        out.data[i] = fwd(in[i]);
    }
    Tape& tape = x.tape();
    const int xid = x.id();
    const int yid = static_cast<int>(tape.size());
    return tape.record(std::move(out), {x}, [&tape, xid, yid, deriv](const Tensor& g, GradSlots gi) {
        const auto& xin = tape.value(xid).data;
        const auto& yout = tape.value(yid).data;
        auto& gx = gi[0]->data;
        for (std::size_t i = 0; i < xin.size(); ++i) {
            gx[i] += g.data[i] * deriv(xin[i], yout[i]);
        }
    });
}

int wrap_index(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

/// Copies one shifted channel: dst[r][c] = src[(r+dy) mod ny][(c+dx) mod nx].
void shifted_copy(const double* src, double* dst, int ny, int nx, int dy, int dx) {
    for (int r = 0; r < ny; ++r) {
        const double* s = src + static_cast<std::size_t>(wrap_index(r + dy, ny)) * nx;
        double* d = dst + static_cast<std::size_t>(r) * nx;
        if (dx == 0) {
            std::copy(s, s + nx, d);
        } else if (dx > 0) {
            std::copy(s + dx, s + nx, d);
            std::copy(s, s + dx, d + nx - dx);
        } else {
            std::copy(s + nx + dx, s + nx, d);
            std::copy(s, s + nx + dx, d - dx);
        }
    }
}

/// Accumulates the adjoint of shifted_copy: acc[(r+dy)][(c+dx)] += src[r][c].
void shifted_accumulate(const double* src, double* acc, int ny, int nx, int dy, int dx) {
    for (int r = 0; r < ny; ++r) {
        double* a = acc + static_cast<std::size_t>(wrap_index(r + dy, ny)) * nx;
        const double* s = src + static_cast<std::size_t>(r) * nx;
        for (int c = 0; c < nx; ++c) {
            a[wrap_index(c + dx, nx)] += s[c];
        }
    }
}

void im2col(const double* x, double* col, int cin, int ny, int nx) {
    const std::size_t n = static_cast<std::size_t>(ny) * nx;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const std::size_t row = static_cast<std::size_t>(ci) * 9 + ky * 3 + kx;
                shifted_copy(x + ci * n, col + row * n, ny, nx, ky - 1, kx - 1);
            }
        }
    }
}

void col2im(const double* col, double* dx, int cin, int ny, int nx) {
    const std::size_t n = static_cast<std::size_t>(ny) * nx;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const std::size_t row = static_cast<std::size_t>(ci) * 9 + ky * 3 + kx;
                shifted_accumulate(col + row * n, dx + ci * n, ny, nx, ky - 1, kx - 1);
            }
        }
    }
}

} // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream s;
    s << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s << (i ? ", " : "") << shape[i];
    }
    s << ')';
    return s.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size()) {
        throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(data.size()) +
                         " values");
    }
}

Tensor Tensor::zeros(Shape s) {
    const std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::filled(Shape s, double value) {
    const std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, value));
}

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Gradients::of(const Var& v) const {
    const auto& g = grads_.at(static_cast<std::size_t>(v.id()));
    if (!g) {
        throw Error("no gradient recorded for node " + std::to_string(v.id()));
    }
    return *g;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (const Var& in : inputs) {
        if (&in.tape() != this) {
            throw Error("op inputs must live on the same tape");
        }
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || in.requires_grad();
    }
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Gradients Tape::backward(const Var& loss) const {
    const Tensor& l = loss.value();
    if (l.size() != 1) {
        throw ShapeError("backward needs a scalar loss, got shape " + shape_str(l.shape));
    }
    if (!std::isfinite(l.data[0])) {
        throw NumericalError("backward: loss is not finite");
    }
    std::vector<std::optional<Tensor>> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].requires_grad && static_cast<int>(i) <= loss.id()) {
            grads[i] = Tensor::zeros(nodes_[i].value.shape);
        }
    }
    if (!nodes_[static_cast<std::size_t>(loss.id())].requires_grad) {
        return Gradients(std::move(grads));
    }
    grads[static_cast<std::size_t>(loss.id())]->data[0] = 1.0;
    std::vector<Tensor*> slots;
    for (int i = loss.id(); i >= 0; --i) {
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        if (!node.requires_grad || !node.backward) {
            continue;
        }
        slots.clear();
        for (int in : node.inputs) {
            auto& g = grads[static_cast<std::size_t>(in)];
            slots.push_back(g ? &*g : nullptr);
        }
        node.backward(*grads[static_cast<std::size_t>(i)], slots);
    }
    return Gradients(std::move(grads));
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] += b.value().data[i];
    }
    return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, GradSlots gi) {
        for (Tensor* t : gi) {
            if (t) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    t->data[i] += g.data[i];
                }
            }
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] -= b.value().data[i];
    }
    return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, GradSlots gi) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (gi[0]) {
                gi[0]->data[i] += g.data[i];
            }
            if (gi[1]) {
                gi[1]->data[i] -= g.data[i];
            }
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] *= b.value().data[i];
    }
    Tape& tape = a.tape();
    const int aid = a.id(), bid = b.id();
    return tape.record(std::move(out), {a, b}, [&tape, aid, bid](const Tensor& g, GradSlots gi) {
        const auto& av = tape.value(aid).data;
        const auto& bv = tape.value(bid).data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (gi[0]) {
                gi[0]->data[i] += g.data[i] * bv[i];
            }
            if (gi[1]) {
                gi[1]->data[i] += g.data[i] * av[i];
            }
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.data) {
        v *= s;
    }
    return a.tape().record(std::move(out), {a}, [s](const Tensor& g, GradSlots gi) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            gi[0]->data[i] += s * g.data[i];
        }
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.data) {
        v += s;
    }
    return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradSlots gi) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            gi[0]->data[i] += g.data[i];
        }
    });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(
        x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
        [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) {
                return 1.0 / (1.0 + std::exp(-v));
            }
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data) {
        s += v;
    }
    return x.tape().record(Tensor::scalar(s), {x}, [](const Tensor& g, GradSlots gi) {
        for (double& v : gi[0]->data) {
            v += g.data[0];
        }
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var sum_squares(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data) {
        s += v * v;
    }
    Tape& tape = x.tape();
    const int xid = x.id();
    return tape.record(Tensor::scalar(s), {x}, [&tape, xid](const Tensor& g, GradSlots gi) {
        const auto& xv = tape.value(xid).data;
        for (std::size_t i = 0; i < xv.size(); ++i) {
            gi[0]->data[i] += 2.0 * xv[i] * g.data[0];
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    if (numel(shape) != x.value().size()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    Tensor out(std::move(shape), x.value().data);
    return x.tape().record(std::move(out), {x}, [](const Tensor& g, GradSlots gi) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            gi[0]->data[i] += g.data[i];
        }
    });
}

namespace {

struct AxisSplit {
    std::size_t outer, axis, inner;
};

AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s{1, static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]), 1};
    for (int i = 0; i < axis; ++i) {
        s.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    }
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
        s.inner *= static_cast<std::size_t>(shape[i]);
    }
    return s;
}

int normalize_axis(int axis, int rank) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return a;
}

} // namespace

Var slice(const Var& x, int axis, int begin, int end) {
    const Shape& in_shape = x.shape();
    axis = normalize_axis(axis, static_cast<int>(in_shape.size()));
    if (begin < 0 || end > in_shape[static_cast<std::size_t>(axis)] || begin >= end) {
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of axis " +
                         std::to_string(axis) + " in " + shape_str(in_shape));
    }
    const AxisSplit s = split_at(in_shape, axis);
    Shape out_shape = in_shape;
    out_shape[static_cast<std::size_t>(axis)] = end - begin;
    const std::size_t len = static_cast<std::size_t>(end - begin) * s.inner;
    const std::size_t offset = static_cast<std::size_t>(begin) * s.inner;
    Tensor out = Tensor::zeros(out_shape);
    const auto& in = x.value().data;
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * s.axis * s.inner + offset), len,
                    out.data.begin() + static_cast<std::ptrdiff_t>(o * len));
    }
    return x.tape().record(std::move(out), {x}, [s, len, offset](const Tensor& g, GradSlots gi) {
        auto& gx = gi[0]->data;
        for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = g.data.data() + o * len;
            double* dst = gx.data() + o * s.axis * s.inner + offset;
            for (std::size_t i = 0; i < len; ++i) {
                dst[i] += src[i];
            }
        }
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) {
        throw ShapeError("concat of zero tensors");
    }
    const Shape& first = parts.front().shape();
    axis = normalize_axis(axis, static_cast<int>(first.size()));
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const Var& p : parts) {
        Shape s = p.shape();
        if (s.size() != first.size()) {
            throw ShapeError("concat rank mismatch");
        }
        out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
        s[static_cast<std::size_t>(axis)] = first[static_cast<std::size_t>(axis)];
        if (s != first) {
            throw ShapeError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(first));
        }
    }
    const AxisSplit so = split_at(out_shape, axis);
    Tensor out = Tensor::zeros(out_shape);
    std::vector<std::size_t> lens, offsets;
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const std::size_t len = static_cast<std::size_t>(p.shape()[static_cast<std::size_t>(axis)]) * so.inner;
        for (std::size_t o = 0; o < so.outer; ++o) {
            std::copy_n(p.value().data.begin() + static_cast<std::ptrdiff_t>(o * len), len,
                        out.data.begin() + static_cast<std::ptrdiff_t>(o * so.axis * so.inner + offset));
        }
        lens.push_back(len);
        offsets.push_back(offset);
        offset += len;
    }
    return parts.front().tape().record(std::move(out), parts, [so, lens, offsets](const Tensor& g, GradSlots gi) {
        for (std::size_t k = 0; k < gi.size(); ++k) {
            if (!gi[k]) {
                continue;
            }
            for (std::size_t o = 0; o < so.outer; ++o) {
                const double* src = g.data.data() + o * so.axis * so.inner + offsets[k];
                double* dst = gi[k]->data.data() + o * lens[k];
                for (std::size_t i = 0; i < lens[k]; ++i) {
                    dst[i] += src[i];
                }
            }
        }
    });
}

Var transpose2d(const Var& x) {
    if (x.shape().size() != 2) {
        throw ShapeError("transpose2d needs a rank-2 tensor, got " + shape_str(x.shape()));
    }
    const int rows = x.shape()[0], cols = x.shape()[1];
    Tensor out = Tensor::zeros({cols, rows});
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            out.data[static_cast<std::size_t>(c) * rows + r] = x.value().data[static_cast<std::size_t>(r) * cols + c];
        }
    }
    return x.tape().record(std::move(out), {x}, [rows, cols](const Tensor& g, GradSlots gi) {
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                gi[0]->data[static_cast<std::size_t>(r) * cols + c] += g.data[static_cast<std::size_t>(c) * rows + r];
            }
        }
    });
}

Var broadcast_leading(const Var& x, int n) {
    if (n < 1) {
        throw ShapeError("broadcast_leading needs n >= 1");
    }
    Shape shape = x.shape();
    shape.insert(shape.begin(), n);
    const std::size_t len = x.value().size();
    Tensor out = Tensor::zeros(shape);
    for (int i = 0; i < n; ++i) {
        std::copy(x.value().data.begin(), x.value().data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * len));
    }
    return x.tape().record(std::move(out), {x}, [n, len](const Tensor& g, GradSlots gi) {
        for (int i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < len; ++j) {
                gi[0]->data[j] += g.data[static_cast<std::size_t>(i) * len + j];
            }
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() < 3 || ws.size() != 4 || ws[2] != 3 || ws[3] != 3) {
        throw ShapeError("conv2d expects x (..., C_in, ny, nx) and w (C_out, C_in, 3, 3), got " + shape_str(xs) +
                         " and " + shape_str(ws));
    }
    const int cin = xs[xs.size() - 3], ny = xs[xs.size() - 2], nx = xs[xs.size() - 1];
    const int cout = ws[0];
    if (ws[1] != cin) {
        throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(ws[1]));
    }
    if (b.valid() && (b.shape().size() != 1 || b.shape()[0] != cout)) {
        throw ShapeError("conv2d: bias must have shape (" + std::to_string(cout) + ")");
    }
    const std::size_t n = static_cast<std::size_t>(ny) * nx;
    const std::size_t batch = x.value().size() / (static_cast<std::size_t>(cin) * n);
    Shape out_shape = xs;
    out_shape[xs.size() - 3] = cout;
    Tensor out = Tensor::zeros(out_shape);

    const ConstMatMap wmat(w.value().data.data(), cout, cin * 9);
    std::vector<double> col(static_cast<std::size_t>(cin) * 9 * n);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        im2col(x.value().data.data() + bi * cin * n, col.data(), cin, ny, nx);
        MatMap omat(out.data.data() + bi * cout * n, cout, static_cast<Eigen::Index>(n));
        omat.noalias() = wmat * ConstMatMap(col.data(), cin * 9, static_cast<Eigen::Index>(n));
        if (b.valid()) {
            for (int co = 0; co < cout; ++co) {
                omat.row(co).array() += b.value().data[static_cast<std::size_t>(co)];
            }
        }
    }

    Tape& tape = x.tape();
    const int xid = x.id(), wid = w.id();
    std::vector<Var> inputs{x, w};
    if (b.valid()) {
        inputs.push_back(b);
    }
    const bool has_bias = b.valid();
    return tape.record(std::move(out), inputs,
                       [&tape, xid, wid, cin, cout, ny, nx, n, batch, has_bias](const Tensor& g, GradSlots gi) {
                           const ConstMatMap wm(tape.value(wid).data.data(), cout, cin * 9);
                           std::vector<double> colbuf(static_cast<std::size_t>(cin) * 9 * n);
                           for (std::size_t bi = 0; bi < batch; ++bi) {
                               const ConstMatMap gmat(g.data.data() + bi * cout * n, cout,
                                                      static_cast<Eigen::Index>(n));
                               if (gi[1]) {
                                   im2col(tape.value(xid).data.data() + bi * cin * n, colbuf.data(), cin, ny, nx);
                                   MatMap gw(gi[1]->data.data(), cout, cin * 9);
                                   gw.noalias() +=
                                       gmat * ConstMatMap(colbuf.data(), cin * 9, static_cast<Eigen::Index>(n))
                                                  .transpose();
                               }
                               if (gi[0]) {
                                   MatMap cm(colbuf.data(), cin * 9, static_cast<Eigen::Index>(n));
                                   cm.noalias() = wm.transpose() * gmat;
                                   col2im(colbuf.data(), gi[0]->data.data() + bi * cin * n, cin, ny, nx);
                               }
                               if (has_bias && gi[2]) {
                                   // plain loop: Eigen's vectorized sum peels by address, which breaks reproducibility
                                   for (int co = 0; co < cout; ++co) {
                                       const double* row = g.data.data() + (bi * cout + co) * n;
                                       double acc = 0.0;
                                       for (std::size_t i = 0; i < n; ++i) {
                                           acc += row[i];
                                       }
                                       gi[2]->data[static_cast<std::size_t>(co)] += acc;
                                   }
                               }
                           }
                       });
}

Var conv1d_time(const Var& x, const Var& w, const Var& b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() < 2 || ws.size() != 3 || ws[2] != 3) {
        throw ShapeError("conv1d_time expects x (..., C_in, K) and w (C_out, C_in, 3), got " + shape_str(xs) +
                         " and " + shape_str(ws));
    }
    const int cin = xs[xs.size() - 2], steps = xs[xs.size() - 1], cout = ws[0];
    if (ws[1] != cin) {
        throw ShapeError("conv1d_time: channel mismatch");
    }
    if (b.valid() && (b.shape().size() != 1 || b.shape()[0] != cout)) {
        throw ShapeError("conv1d_time: bias must have shape (" + std::to_string(cout) + ")");
    }
    const std::size_t batch = x.value().size() / (static_cast<std::size_t>(cin) * steps);
    Shape out_shape = xs;
    out_shape[xs.size() - 2] = cout;
    Tensor out = Tensor::zeros(out_shape);
    const auto& xv = x.value().data;
    const auto& wv = w.value().data;
    auto tap = [steps](int t, int k) { return std::clamp(t + k - 1, 0, steps - 1); };
    for (std::size_t bi = 0; bi < batch; ++bi) {
        for (int co = 0; co < cout; ++co) {
            for (int t = 0; t < steps; ++t) {
                double acc = b.valid() ? b.value().data[static_cast<std::size_t>(co)] : 0.0;
                for (int ci = 0; ci < cin; ++ci) {
                    for (int k = 0; k < 3; ++k) {
                        acc += wv[(static_cast<std::size_t>(co) * cin + ci) * 3 + k] *
                               xv[(bi * cin + ci) * steps + tap(t, k)];
                    }
                }
                out.data[(bi * cout + co) * steps + t] = acc;
            }
        }
    }
    Tape& tape = x.tape();
    const int xid = x.id(), wid = w.id();
    std::vector<Var> inputs{x, w};
    if (b.valid()) {
        inputs.push_back(b);
    }
    const bool has_bias = b.valid();
    return tape.record(std::move(out), inputs,
                       [&tape, xid, wid, cin, cout, steps, batch, has_bias, tap](const Tensor& g, GradSlots gi) {
                           const auto& xv2 = tape.value(xid).data;
                           const auto& wv2 = tape.value(wid).data;
                           for (std::size_t bi = 0; bi < batch; ++bi) {
                               for (int co = 0; co < cout; ++co) {
                                   for (int t = 0; t < steps; ++t) {
                                       const double go = g.data[(bi * cout + co) * steps + t];
                                       if (has_bias && gi[2]) {
                                           gi[2]->data[static_cast<std::size_t>(co)] += go;
                                       }
                                       for (int ci = 0; ci < cin; ++ci) {
                                           for (int k = 0; k < 3; ++k) {
                                               const std::size_t wi = (static_cast<std::size_t>(co) * cin + ci) * 3 + k;
                                               const std::size_t xi = (bi * cin + ci) * steps + tap(t, k);
                                               if (gi[1]) {
                                                   gi[1]->data[wi] += go * xv2[xi];
                                               }
                                               if (gi[0]) {
                                                   gi[0]->data[xi] += go * wv2[wi];
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

Var spatial_softmax(const Var& x, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("spatial_softmax temperature must be positive");
    }
    const Shape& xs = x.shape();
    if (xs.size() < 2) {
        throw ShapeError("spatial_softmax expects (..., ny, nx)");
    }
    const std::size_t n = static_cast<std::size_t>(xs[xs.size() - 2]) * xs[xs.size() - 1];
    const std::size_t maps = x.value().size() / n;
    Tensor out = Tensor::zeros(xs);
    const double inv_t = 1.0 / temperature;
    for (std::size_t m = 0; m < maps; ++m) {
        const double* in = x.value().data.data() + m * n;
        double* p = out.data.data() + m * n;
        const double mx = *std::max_element(in, in + n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = std::exp((in[i] - mx) * inv_t);
            total += p[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            p[i] /= total;
        }
    }
    Tape& tape = x.tape();
    const int yid = static_cast<int>(tape.size());
    return tape.record(std::move(out), {x}, [&tape, yid, n, maps, inv_t](const Tensor& g, GradSlots gi) {
        const auto& p = tape.value(yid).data;
        for (std::size_t m = 0; m < maps; ++m) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                dot += g.data[m * n + i] * p[m * n + i];
            }
            for (std::size_t i = 0; i < n; ++i) {
                gi[0]->data[m * n + i] += p[m * n + i] * (g.data[m * n + i] - dot) * inv_t;
            }
        }
    });
}

Var soft_argmax(const Var& p, PeriodicAxis x_axis, PeriodicAxis y_axis) {
    const Shape& ps = p.shape();
    if (ps.size() < 2) {
        throw ShapeError("soft_argmax expects (..., ny, nx)");
    }
    const int ny = ps[ps.size() - 2], nx = ps[ps.size() - 1];
    const std::size_t n = static_cast<std::size_t>(ny) * nx;
    const std::size_t maps = p.value().size() / n;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    std::vector<double> cx(static_cast<std::size_t>(nx)), sx(static_cast<std::size_t>(nx));
    std::vector<double> cy(static_cast<std::size_t>(ny)), sy(static_cast<std::size_t>(ny));
    for (int c = 0; c < nx; ++c) {
        const double a = two_pi * (c + 0.5) / nx;
        cx[static_cast<std::size_t>(c)] = std::cos(a);
        sx[static_cast<std::size_t>(c)] = std::sin(a);
    }
    for (int r = 0; r < ny; ++r) {
        const double a = two_pi * (r + 0.5) / ny;
        cy[static_cast<std::size_t>(r)] = std::cos(a);
        sy[static_cast<std::size_t>(r)] = std::sin(a);
    }
    // per map: resultant (C, S) per axis, or zeros when the tie rule applies
    std::vector<double> res(maps * 4, 0.0);
    Shape out_shape(ps.begin(), ps.end() - 2);
    out_shape.push_back(2);
    Tensor out = Tensor::zeros(out_shape);
    auto angle_of = [](double s, double c) {
        double a = std::atan2(s, c);
        if (a < 0.0) {
            a += two_pi;
        }
        return a >= two_pi ? 0.0 : a;
    };
    for (std::size_t m = 0; m < maps; ++m) {
        const double* pm = p.value().data.data() + m * n;
        double mass = 0.0, Cx = 0.0, Sx = 0.0, Cy = 0.0, Sy = 0.0;
        for (int r = 0; r < ny; ++r) {
            for (int c = 0; c < nx; ++c) {
                const double v = pm[static_cast<std::size_t>(r) * nx + c];
                mass += v;
                Cx += v * cx[static_cast<std::size_t>(c)];
                Sx += v * sx[static_cast<std::size_t>(c)];
                Cy += v * cy[static_cast<std::size_t>(r)];
                Sy += v * sy[static_cast<std::size_t>(r)];
            }
        }
        if (!(mass > 0.0)) {
            throw DegenerateError("soft_argmax: map has no positive mass");
        }
        const double tie = 1e-9 * mass;
        double x = x_axis.origin, y = y_axis.origin;
        if (std::hypot(Cx, Sx) > tie) {
            x = x_axis.origin + x_axis.extent * angle_of(Sx, Cx) / two_pi;
            res[m * 4 + 0] = Cx;
            res[m * 4 + 1] = Sx;
        }
        if (std::hypot(Cy, Sy) > tie) {
            y = y_axis.origin + y_axis.extent * angle_of(Sy, Cy) / two_pi;
            res[m * 4 + 2] = Cy;
            res[m * 4 + 3] = Sy;
        }
        out.data[m * 2] = x;
        out.data[m * 2 + 1] = y;
    }
    return p.tape().record(
        std::move(out), {p},
        [res = std::move(res), cx, sx, cy, sy, nx, ny, n, maps, x_axis, y_axis](const Tensor& g, GradSlots gi) {
            for (std::size_t m = 0; m < maps; ++m) {
                const double Cx = res[m * 4], Sx = res[m * 4 + 1], Cy = res[m * 4 + 2], Sy = res[m * 4 + 3];
                const double rx = Cx * Cx + Sx * Sx, ry = Cy * Cy + Sy * Sy;
                // d angle / d p_i = (C sin_i - S cos_i) / (C^2 + S^2)
                const double kx = rx > 0.0 ? g.data[m * 2] * x_axis.extent / (two_pi * rx) : 0.0;
                const double ky = ry > 0.0 ? g.data[m * 2 + 1] * y_axis.extent / (two_pi * ry) : 0.0;
                double* gp = gi[0]->data.data() + m * n;
                for (int r = 0; r < ny; ++r) {
                    const double yterm =
                        ky * (Cy * sy[static_cast<std::size_t>(r)] - Sy * cy[static_cast<std::size_t>(r)]);
                    for (int c = 0; c < nx; ++c) {
                        gp[static_cast<std::size_t>(r) * nx + c] +=
                            kx * (Cx * sx[static_cast<std::size_t>(c)] - Sx * cx[static_cast<std::size_t>(c)]) +
                            yterm;
                    }
                }
            }
        });
}

Var wrap_signed(const Var& x, std::vector<double> periods) {
    const std::size_t d = periods.size();
    if (x.shape().empty() || static_cast<std::size_t>(x.shape().back()) != d) {
        throw ShapeError("wrap_signed: trailing axis must match the number of periods");
    }
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double L = periods[i % d];
        out.data[i] -= L * std::round(out.data[i] / L);
    }
    return x.tape().record(std::move(out), {x}, [](const Tensor& g, GradSlots gi) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            gi[0]->data[i] += g.data[i];
        }
    });
}

Var wrap_into(const Var& x, std::vector<double> origins, std::vector<double> periods) {
    const std::size_t d = periods.size();
    if (x.shape().empty() || static_cast<std::size_t>(x.shape().back()) != d || origins.size() != d) {
        throw ShapeError("wrap_into: trailing axis must match the number of periods");
    }
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double L = periods[i % d], o = origins[i % d];
        double r = std::fmod(out.data[i] - o, L);
        if (r < 0.0) {
            r += L;
        }
        out.data[i] = o + (r >= L ? 0.0 : r);
    }
    return x.tape().record(std::move(out), {x}, [](const Tensor& g, GradSlots gi) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            gi[0]->data[i] += g.data[i];
        }
    });
}

Var norm_last(const Var& x) {
    const Shape& xs = x.shape();
    if (xs.empty()) {
        throw ShapeError("norm_last needs rank >= 1");
    }
    const std::size_t d = static_cast<std::size_t>(xs.back());
    const std::size_t rows = x.value().size() / d;
    Tensor out = Tensor::zeros(Shape(xs.begin(), xs.end() - 1));
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = x.value().data[r * d + j];
            s += v * v;
        }
        out.data[r] = std::sqrt(s);
    }
    Tape& tape = x.tape();
    const int xid = x.id();
    const int yid = static_cast<int>(tape.size());
    return tape.record(std::move(out), {x}, [&tape, xid, yid, d, rows](const Tensor& g, GradSlots gi) {
        const auto& xv = tape.value(xid).data;
        const auto& nv = tape.value(yid).data;
        for (std::size_t r = 0; r < rows; ++r) {
            if (nv[r] > 0.0) {
                for (std::size_t j = 0; j < d; ++j) {
                    gi[0]->data[r * d + j] += g.data[r] * xv[r * d + j] / nv[r];
                }
            }
        }
    });
}

} // namespace driftlab::ad
