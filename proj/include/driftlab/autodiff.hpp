#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace driftlab::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);
    static Tensor zeros(Shape s);
    static Tensor filled(Shape s, double value);
    static Tensor scalar(double value) { return Tensor({}, {value}); }

    std::size_t size() const { return data.size(); }
    int dim(int axis) const { return shape.at(static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)); }
    int rank() const { return static_cast<int>(shape.size()); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
  public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    bool requires_grad() const;
    int id() const { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const { return tape_ != nullptr; }

  private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Gradient slots handed to a backward rule, one per input; null when the input needs no gradient.
using GradSlots = std::span<Tensor* const>;
using BackwardFn = std::function<void(const Tensor& grad_out, GradSlots grad_inputs)>;

/// Gradients of a scalar with respect to every node that requires them.
class Gradients {
  public:
    explicit Gradients(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}
    /// Gradient of `v`; zeros when v did not influence the loss. Throws if v does not require grad.
    const Tensor& of(const Var& v) const;

  private:
    std::vector<std::optional<Tensor>> grads_;
};

/**
 * Static reverse-mode tape.
 *
 * Nodes are appended in evaluation order, so reverse insertion order is a
 * reverse topological order. Ops whose inputs need no gradient produce
 * constants and record no backward rule.
 */
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends an op node; `backward` is dropped when no input requires grad.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar, finite loss.
    Gradients backward(const Var& loss) const;

  private:
    struct Node {
        Tensor value;
        std::vector<int> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

// elementwise, operands of identical shape
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);
Var tanh(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
Var sum_squares(const Var& x);

Var reshape(const Var& x, Shape shape);
/// Elements [begin, end) along `axis`.
Var slice(const Var& x, int axis, int begin, int end);
Var concat(const std::vector<Var>& parts, int axis);
Var transpose2d(const Var& x);
/// Repeats x along a new leading axis of length n.
Var broadcast_leading(const Var& x, int n);

/**
 * 3x3 periodic cross-correlation.
 * x: (..., C_in, ny, nx), w: (C_out, C_in, 3, 3), b: (C_out) or invalid Var for no bias.
 */
Var conv2d(const Var& x, const Var& w, const Var& b);

/// Kernel-3 temporal cross-correlation with replication padding. x: (..., C_in, K), w: (C_out, C_in, 3).
Var conv1d_time(const Var& x, const Var& w, const Var& b);

/// Softmax over the trailing (ny, nx) cells of each map, max-subtracted.
Var spatial_softmax(const Var& x, double temperature);

/// Periodic axis for the circular-mean readout: cell j maps to origin + extent (j + 0.5) / n.
struct PeriodicAxis {
    double origin = 0.0;
    double extent = 1.0;
};

/**
 * Circular-mean expected coordinates of (..., ny, nx) maps, returning (..., 2) as (x, y).
 *
 * Each coordinate is the angle of the mass-weighted mean of unit vectors at the
 * cell angles. When that resultant is shorter than 1e-9 of the mass (e.g. a
 * uniform map) the coordinate falls back to the axis origin with zero gradient.
 */
Var soft_argmax(const Var& p, PeriodicAxis x_axis, PeriodicAxis y_axis);

/// Componentwise shortest periodic representative over the trailing axis (periods[i] for component i).
Var wrap_signed(const Var& x, std::vector<double> periods);
/// Componentwise representative in [origin, origin + period) over the trailing axis.
Var wrap_into(const Var& x, std::vector<double> origins, std::vector<double> periods);
/// Euclidean norm over the trailing axis; gradient is taken as zero at the origin.
Var norm_last(const Var& x);

} // namespace driftlab::ad
