#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string_view>
#include <vector>

#include "pamunet/tensor.hpp"

namespace pamunet {

enum class OpKind {
    leaf,
    conv2d,
    depthwise_conv2d,
    pointwise_conv2d,
    conv_transpose2d,
    add,
    sub,
    mul,
    scale,
    shift,
    relu6,
    sigmoid,
    tanh,
    exp,
    log,
    clamp,
    matmul,
    transpose,
    reshape,
    permute,
    softmax,
    sum,
    mean,
    variance,
    concat,
    split,
    bce,
    additive_scores,
};

std::string_view op_name(OpKind kind);

template <typename T>
class NoGradGuard;

/// Ordered record of the ops executed while the tape is active.
///
/// Constructing a tape makes it the current tape for its element type on this
/// thread; ops executed while it is current, with at least one input that
/// requires a gradient, append a node. Nodes are appended in execution order,
/// which is a topological order of the computation. backward() consumes the tape.
template <typename T>
class Tape {
   public:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        std::shared_ptr<detail::TensorImpl<T>> output;
        std::function<void()> backward;
    };

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Tape receiving new nodes on this thread, or nullptr.
    static Tape* current() { return current_; }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    bool consumed() const { return consumed_; }

    /// Fills the gradient of every requires_grad tensor reachable from `loss`.
    void backward(const Tensor<T>& loss);

    void record(OpKind kind, std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& output,
                std::function<void()> backward_fn);
    void record(OpKind kind, const std::vector<Tensor<T>>& inputs, Tensor<T>& output,
                std::function<void()> backward_fn);

   private:
    std::size_t node_for(const std::shared_ptr<detail::TensorImpl<T>>& impl);
    void deactivate();
    void release();

    std::vector<Node> nodes_;
    Tape* previous_ = nullptr;
    bool active_ = true;
    bool consumed_ = false;

    static thread_local Tape* current_;
    friend class NoGradGuard<T>;
};

template <typename T>
thread_local Tape<T>* Tape<T>::current_ = nullptr;

/// Disables recording for element type T within a scope.
template <typename T>
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    Tape<T>* saved_;
};

/// Backward pass through the tape that produced `loss`.
template <typename T>
void backward(const Tensor<T>& loss);

namespace autograd {

/// True when an op over these inputs would be recorded on the current tape.
template <typename T>
bool is_recording(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = Tape<T>::current();
    if (tape == nullptr) return false;
    for (const Tensor<T>* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
bool is_recording(const std::vector<Tensor<T>>& inputs) {
    Tape<T>* tape = Tape<T>::current();
    if (tape == nullptr) return false;
    for (const Tensor<T>& t : inputs) {
        if (t.defined() && t.requires_grad()) return true;
    }
    return false;
}

/// Adds `values` into the gradient slot of `impl` when it takes part in the graph.
template <typename T, typename Fn>
void accumulate(const std::shared_ptr<detail::TensorImpl<T>>& impl, Fn&& fill) {
    if (!impl->requires_grad) return;
    fill(impl->grad_buffer());
}

}  // namespace autograd
}  // namespace pamunet
