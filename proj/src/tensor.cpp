#include "pamunet/tensor.hpp"

#include <sstream>

namespace pamunet {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] <= 0) {
            throw ShapeError("tensor axis " + std::to_string(i) + " has non-positive extent " +
                             std::to_string(shape[i]));
        }
    }
    if (data.size() != numel(shape)) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
int Tensor<T>::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
    }
    return impl_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int> index) const {
    if (index.size() != impl_->shape.size()) {
        throw ShapeError("index rank mismatch for shape " + to_string(shape()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (int i : index) {
        const int extent = impl_->shape[axis];
        if (i < 0 || i >= extent) {
            throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                             std::to_string(axis));
        }
        flat = flat * static_cast<std::size_t>(extent) + static_cast<std::size_t>(i);
        ++axis;
    }
    return impl_->data[flat];
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
    if (impl_->grad.empty()) return std::vector<T>(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(impl_->shape, impl_->data);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace pamunet
