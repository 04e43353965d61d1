#include "calclab/tensor.hpp"

#include <numeric>
#include <sstream>

namespace calclab {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

static std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw shape_error("negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<Data>();
    impl->value.assign(shape_numel(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = value;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({}, {value}, requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw shape_error("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<Data>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = rng.normal(0.0, stddev);
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw shape_error("item() on tensor with shape " + shape_str(shape()));
    return impl_->value[0];
}

std::span<double> Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
    return impl_->grad;
}

std::span<const double> Tensor::grad_view() const { return impl_->grad; }

Tensor Tensor::clone() const {
    auto impl = std::make_shared<Data>(*impl_);
    return Tensor(std::move(impl));
}

Tensor Tensor::detached() const {
    auto impl = std::make_shared<Data>();
    impl->shape = impl_->shape;
    impl->value = impl_->value;
    impl->requires_grad = false;
    return Tensor(std::move(impl));
}

void Tape::backward(Tensor loss) {
    if (loss.numel() != 1) {
        throw numeric_error("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    loss.grad()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

}  // namespace calclab
