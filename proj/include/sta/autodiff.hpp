#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sta/tensor.hpp"

namespace sta {

class Graph;
class BackwardCtx;

// Handle to a node on a Graph. Cheap to copy; only valid while the graph
// that produced it is alive.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Tensor& value() const;
    const Shape& shape() const;
};

using BackwardFn = std::function<void(BackwardCtx&)>;

// Records one forward computation as a tape of nodes in topological order
// (parents always precede children). A graph is built fresh for every
// training step; backward() runs one reverse sweep and writes gradients back
// into the parameter tensors bound via leaf().
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Binds a trainable parameter. Repeated calls with the same tensor return
    // the same node. backward() writes the parameter's gradient into
    // `param.grad` (zeros if the loss does not reach it).
    Var leaf(Tensor& param);

    // Owned constant input; never receives a gradient.
    Var constant(Tensor value);

    // External constant input, deduplicated by address; never receives a
    // gradient and is never written back.
    Var constant_ref(const Tensor& value);

    // Registers an op node. `backward` receives the node's output gradient
    // and accumulates into its parents; it may be empty only when no parent
    // requires a gradient. Throws NumericError if `value` holds a non-finite
    // entry, naming `op`.
    Var emit(std::string op, std::vector<Var> parents, Tensor value, BackwardFn backward);

    const Tensor& value(Var v) const;
    const Shape& shape(Var v) const;
    bool needs_grad(Var v) const;

    // Reverse-mode sweep from a scalar loss. Gradients of all leaves on this
    // graph are written into their tensors' `grad` buffers.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

    // Counter of numerically clamped evaluations (e.g. log at its floor),
    // surfaced so training loops can report them.
    long clamp_events() const { return clamp_events_; }
    void note_clamp(long n = 1) { clamp_events_ += n; }

private:
    friend class BackwardCtx;

    struct Node {
        std::string op;
        std::vector<int> parents;
        Tensor value;
        std::vector<double> grad;
        Tensor* leaf_target = nullptr;
        bool needs_grad = false;
        BackwardFn backward;
    };

    const Node& node(Var v) const;
    void check_mine(Var v, const char* what) const;

    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> bound_;
    std::vector<int> leaves_;
    std::vector<char> touched_;
    long clamp_events_ = 0;
};

// View handed to a backward function: the node's output value and incoming
// gradient, plus accumulation access to each parent's gradient buffer.
class BackwardCtx {
public:
    const Tensor& out_value() const;
    std::span<const double> out_grad() const;
    size_t parent_count() const;
    const Tensor& parent_value(size_t k) const;
    // Empty span when the parent does not require a gradient; otherwise a
    // buffer the same size as the parent's value, to be accumulated into.
    std::span<double> parent_grad(size_t k);

private:
    friend class Graph;
    BackwardCtx(Graph& g, int id) : g_(g), id_(id) {}
    Graph& g_;
    int id_;
};

// --- Operations ------------------------------------------------------------
// Binary elementwise ops accept equal shapes, or a right operand that is
// either a single element or a trailing-suffix shape of the left operand (it
// is then tiled over the leading axes, and its gradient reduced over them).

Var matmul(Var a, Var b);                 // [m,k] x [k,n] -> [m,n]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var neg(Var a);
Var concat(Var a, Var b);                 // along the last axis
Var reshape(Var a, Shape shape);
Var leaky_relu(Var a, double slope = 0.2);
Var sigmoid(Var a);
Var softmax(Var a);                       // along the last axis
Var abs(Var a);
Var square(Var a);
Var sum(Var a);                           // full reduction -> [1]
Var mean(Var a);                          // full reduction -> [1]
// log(max(x, floor)); clamped entries get zero gradient and are counted on
// the graph's clamp counter. floor must be positive.
Var log_clamped(Var a, double floor = 1e-12);

}  // namespace sta
