#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "calclab/errors.hpp"
#include "calclab/rng.hpp"

namespace calclab {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);

// Dense 64-bit tensor. Copying a Tensor copies the handle, not the storage;
// use clone() for a deep copy. Gradients are allocated lazily on first
// accumulation and live alongside the values.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->value.size()); }

    std::span<double> data() { return impl_->value; }
    std::span<const double> data() const { return impl_->value; }

    double item() const;

    // 2-D accessors (row-major); used pervasively by the model code
    double& at(std::int64_t r, std::int64_t c) { return impl_->value[static_cast<std::size_t>(r * impl_->shape[1] + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return impl_->value[static_cast<std::size_t>(r * impl_->shape[1] + c)]; }
    double& at(std::int64_t i) { return impl_->value[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i) const { return impl_->value[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Allocates (zero-filled) on first use.
    std::span<double> grad();
    std::span<const double> grad_view() const;  // empty span when absent
    void zero_grad() { impl_->grad.clear(); }

    Tensor clone() const;
    Tensor detached() const;  // deep copy with requires_grad = false

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    struct Data {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;  // empty until touched
        bool requires_grad = false;
    };

  private:
    explicit Tensor(std::shared_ptr<Data> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<Data> impl_;
};

// Records backward closures during a forward pass. Single-owner: one tape per
// forward run; never share across threads.
class Tape {
  public:
    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays the recorded closures in exact
    // reverse order, accumulating into .grad of every reachable tensor.
    void backward(Tensor loss);

  private:
    std::vector<std::function<void()>> ops_;
};

}  // namespace calclab
