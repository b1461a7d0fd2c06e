#pragma once

#include <memory>
#include <string>

#include "pamunet/autograd.hpp"
#include "pamunet/tensor.hpp"

namespace pamunet::ops::detail {

template <typename T>
using ImplPtr = std::shared_ptr<pamunet::detail::TensorImpl<T>>;

template <typename T>
Tape<T>* active_tape(std::initializer_list<const Tensor<T>*> inputs) {
    return autograd::is_recording(inputs) ? Tape<T>::current() : nullptr;
}

template <typename T>
Tape<T>* active_tape(const std::vector<Tensor<T>>& inputs) {
    return autograd::is_recording(inputs) ? Tape<T>::current() : nullptr;
}

/// Gradient buffer of `impl` when it participates in the graph, else nullptr.
template <typename T>
T* grad_of(const ImplPtr<T>& impl) {
    return impl->requires_grad ? impl->grad_buffer().data() : nullptr;
}

inline void require_rank(const char* op, const char* what, const Shape& shape, std::size_t rank) {
    if (shape.size() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got shape " + to_string(shape));
    }
}

inline void require_axis(const char* op, const char* what_a, const Shape& a, const char* what_b,
                         const Shape& b, int axis_a, int axis_b) {
    if (a[static_cast<std::size_t>(axis_a)] != b[static_cast<std::size_t>(axis_b)]) {
        throw ShapeError(std::string(op) + ": " + what_a + " axis " + std::to_string(axis_a) + " is " +
                         std::to_string(a[static_cast<std::size_t>(axis_a)]) + " but " + what_b +
                         " axis " + std::to_string(axis_b) + " is " +
                         std::to_string(b[static_cast<std::size_t>(axis_b)]) + " " + to_string(a) +
                         " vs " + to_string(b));
    }
}

}  // namespace pamunet::ops::detail
