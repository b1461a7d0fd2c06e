#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pamunet {

/// Dimension list. Canonical image layout is (N, C, H, W); an empty shape is a scalar.
using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised for incompatible or malformed tensor shapes.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for misuse of the gradient tape (dead tape, repeated backward, non-scalar loss).
class AutogradError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient flows here
    bool requires_grad = false;
    Tape<T>* tape = nullptr;
    std::optional<std::size_t> node;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Dense row-major tensor with an optional gradient slot.
///
/// Copies share storage: a Tensor is a handle, like a framework tensor. Values are
/// treated as immutable once an op has produced them; only initializers and the
/// optimizer write through mutable_data().
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int axis) const;
    std::size_t size() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    std::span<T> mutable_data() { return impl_->data; }
    T item() const;
    T at(std::initializer_list<int> index) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient values; all zeros when nothing has flowed into this tensor yet.
    std::vector<T> grad() const;
    std::span<T> mutable_grad() { return impl_->grad_buffer(); }
    void zero_grad() { impl_->grad.clear(); }

    std::optional<std::size_t> node_id() const { return impl_->node; }

    /// Fresh storage holding a copy of the values, outside any tape.
    Tensor detach() const;

    const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

   private:
    std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Converts element type, dropping any graph information.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
    std::vector<To> values(src.data().begin(), src.data().end());
    return Tensor<To>(src.shape(), std::move(values));
}

}  // namespace pamunet
