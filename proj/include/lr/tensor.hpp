#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lr/error.hpp"

namespace lr {

// 32-bit storage everywhere; reductions accumulate in 64-bit internally.
using Real = float;
using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense n-dimensional array with optional gradient buffer. Copies share
// storage; the value of a tensor is immutable once an operation produced it,
// so read-only sharing is always safe. Gradient buffers are bookkeeping
// attached to the same storage and are managed by Tape::backward.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, Real value);
    static Tensor from_data(Shape shape, std::vector<Real> data);
    static Tensor scalar(Real value) { return full({1}, value); }

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return check().shape; }
    int ndim() const { return static_cast<int>(check().shape.size()); }
    int dim(int i) const { return check().shape.at(static_cast<size_t>(i)); }
    int64_t size() const { return static_cast<int64_t>(check().data.size()); }

    std::span<const Real> data() const { return check().data; }
    std::span<Real> mutable_data() { return check().data; }

    bool requires_grad() const { return check().requires_grad; }
    Tensor& set_requires_grad(bool v) {
        check().requires_grad = v;
        return *this;
    }

    bool has_grad() const { return defined() && impl_->has_grad; }
    std::span<const Real> grad() const;
    std::span<Real> grad_mut();  // allocates a zero buffer on first use
    void zero_grad();
    void drop_grad();

    Real item() const;

    Tensor clone() const;  // deep copy of the value (grad not copied)

    bool all_finite() const;

    // Storage identity; two tensors with equal id() alias the same buffer.
    const void* id() const { return impl_.get(); }

  private:
    struct Impl {
        std::vector<Real> data;
        Shape shape;
        bool requires_grad = false;
        bool has_grad = false;
        std::vector<Real> grad;
    };

    Impl& check() {
        if (!impl_) throw UsageError("operation on an undefined tensor");
        return *impl_;
    }
    const Impl& check() const {
        if (!impl_) throw UsageError("operation on an undefined tensor");
        return *impl_;
    }

    std::shared_ptr<Impl> impl_;
};

}  // namespace lr
