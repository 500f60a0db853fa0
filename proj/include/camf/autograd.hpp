#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "camf/tensor.hpp"

namespace camf {

class Rng;
class Tape;

// Named tensors with a stable (sorted) iteration order.
using TensorMap = std::map<std::string, Tensor>;
using ParamStore = TensorMap;
using Gradients = TensorMap;

// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Record-and-replay reverse-mode tape. Nodes are appended in evaluation
// order, which is a topological order, so backward walks them in reverse.
class Tape {
public:
    // Called with the node's own value and the gradient flowing into it.
    using BackwardFn =
        std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);
    // Leaf that reads `external` in place; the tensor must outlive the tape.
    Var parameter(const Tensor& external);
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
    Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

    const Tensor& value(std::size_t id) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

    // Seeds d(loss)/d(loss) = 1 and replays every node once in reverse.
    // Throws InvalidShape if `loss` is not a scalar.
    void backward(Var loss);

    // Gradient accumulated for `v`; an all-zero tensor when unreached.
    Tensor grad(Var v) const;
    bool has_grad(Var v) const { return !nodes_.at(v.id()).grad.empty(); }

    // Accumulation target used by backward functions. Returns nullptr for
    // nodes that do not require gradients.
    Tensor* grad_target(Var v);

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<std::size_t>& last_backward_order() const noexcept { return order_; }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
        const Tensor& value() const { return external ? *external : owned; }
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::vector<std::size_t> order_;
};

// Binds every tensor of a ParamStore as a gradient-tracking leaf on a tape.
class ParamBinding {
public:
    ParamBinding(Tape& tape, const ParamStore& params);

    Var operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return vars_.count(name) != 0; }
    std::vector<std::string> names() const;

    // Gradient per bound parameter after Tape::backward; unused ones are zero.
    Gradients gradients() const;

private:
    Tape* tape_;
    std::map<std::string, Var> vars_;
};

// Differentiable primitives. Every function records onto the tape of its
// first argument.
namespace ag {

enum class Reduction { Mean, Sum };

Var add(Var a, Var b);
Var add_row(Var x, Var bias);  // x[m,n] + bias[n] broadcast over rows
Var scale(Var x, double factor);
Var mul(Var a, Var b);         // elementwise
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);   // a b^T
Var gelu(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var softmax_rows(Var x, bool causal = false);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var table, std::span<const int> ids);
Var dropout(Var x, double p, Rng& rng);
Var sum(Var x);
Var dot(Var a, Var b);

// Cross-entropy of softmax(logits) against the label-smoothed target
// (1 - smoothing on the gold id, smoothing / (V - 1) elsewhere). Positions
// whose target equals `ignore_id` contribute nothing. Mean divides by the
// number of counted positions. Throws IndexError for out-of-range targets.
Var label_smoothed_cross_entropy(Var logits, std::span<const int> targets, double smoothing,
                                 Reduction reduction = Reduction::Mean, int ignore_id = -1);

}  // namespace ag

// Non-recording evaluation of the same loss; returns the reduced value.
double label_smoothed_cross_entropy(const Tensor& logits, std::span<const int> targets,
                                    double smoothing, ag::Reduction reduction = ag::Reduction::Mean,
                                    int ignore_id = -1);

double global_norm(const Gradients& grads);

// Scales every gradient by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns g (the norm before clipping).
double clip_grad_norm(Gradients& grads, double max_norm);

}  // namespace camf
