#include "pamunet/autograd.hpp"

#include <string>

namespace pamunet {

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::conv2d: return "conv2d";
        case OpKind::depthwise_conv2d: return "depthwise_conv2d";
        case OpKind::pointwise_conv2d: return "pointwise_conv2d";
        case OpKind::conv_transpose2d: return "conv_transpose2d";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::shift: return "shift";
        case OpKind::relu6: return "relu6";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::tanh: return "tanh";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::clamp: return "clamp";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose: return "transpose";
        case OpKind::reshape: return "reshape";
        case OpKind::permute: return "permute";
        case OpKind::softmax: return "softmax";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::variance: return "variance";
        case OpKind::concat: return "concat";
        case OpKind::split: return "split";
        case OpKind::bce: return "bce";
        case OpKind::additive_scores: return "additive_scores";
    }
    return "unknown";
}

template <typename T>
Tape<T>::Tape() : previous_(current_) {
    current_ = this;
}

template <typename T>
Tape<T>::~Tape() {
    deactivate();
    release();
}

template <typename T>
void Tape<T>::deactivate() {
    if (!active_) return;
    active_ = false;
    if (current_ == this) current_ = previous_;
}

template <typename T>
void Tape<T>::release() {
    for (Node& node : nodes_) {
        node.output->tape = nullptr;
        node.output->node.reset();
    }
    nodes_.clear();
}

template <typename T>
std::size_t Tape<T>::node_for(const std::shared_ptr<detail::TensorImpl<T>>& impl) {
    if (impl->tape == this && impl->node) return *impl->node;
    if (impl->tape != nullptr) {
        throw AutogradError("tensor is already recorded on another live tape");
    }
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{OpKind::leaf, {}, impl, {}});
    impl->tape = this;
    impl->node = id;
    return id;
}

template <typename T>
void Tape<T>::record(OpKind kind, std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& output,
                     std::function<void()> backward_fn) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Tensor<T>* t : inputs) {
        if (t->defined() && t->requires_grad()) ids.push_back(node_for(t->impl()));
    }
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{kind, std::move(ids), output.impl(), std::move(backward_fn)});
    output.impl()->requires_grad = true;
    output.impl()->tape = this;
    output.impl()->node = id;
}

template <typename T>
void Tape<T>::record(OpKind kind, const std::vector<Tensor<T>>& inputs, Tensor<T>& output,
                     std::function<void()> backward_fn) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Tensor<T>& t : inputs) {
        if (t.defined() && t.requires_grad()) ids.push_back(node_for(t.impl()));
    }
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{kind, std::move(ids), output.impl(), std::move(backward_fn)});
    output.impl()->requires_grad = true;
    output.impl()->tape = this;
    output.impl()->node = id;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (consumed_) throw AutogradError("backward called twice on the same tape");
    if (!loss.defined() || loss.size() != 1) {
        throw AutogradError("backward requires a scalar loss, got shape " +
                            (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (loss.impl()->tape != this || !loss.impl()->node) {
        throw AutogradError("loss is not recorded on this tape");
    }
    deactivate();
    consumed_ = true;
    const std::size_t root = *loss.impl()->node;
    loss.impl()->grad_buffer()[0] += T(1);
    for (std::size_t i = root + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (node.kind == OpKind::leaf || node.output->grad.empty()) continue;
        node.backward();
    }
    release();
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw AutogradError("backward on an undefined tensor");
    Tape<T>* tape = loss.impl()->tape;
    if (tape == nullptr || !loss.impl()->node) {
        throw AutogradError("backward on a tensor with no live tape");
    }
    tape->backward(loss);
}

template <typename T>
NoGradGuard<T>::NoGradGuard() : saved_(Tape<T>::current_) {
    Tape<T>::current_ = nullptr;
}

template <typename T>
NoGradGuard<T>::~NoGradGuard() {
    Tape<T>::current_ = saved_;
}

template class Tape<float>;
template class Tape<double>;
template class NoGradGuard<float>;
template class NoGradGuard<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace pamunet
