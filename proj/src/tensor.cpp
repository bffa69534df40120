#include "lr/tensor.hpp"

#include <cmath>
#include <sstream>

namespace lr {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

static void validate_shape(const Shape& shape) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }
    if (shape.empty()) throw ShapeError("empty shape");
}

Tensor Tensor::zeros(Shape shape) {
    validate_shape(shape);
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->data.assign(static_cast<size_t>(numel(shape)), Real{0});
    t.impl_->shape = std::move(shape);
    return t;
}

Tensor Tensor::full(Shape shape, Real value) {
    Tensor t = zeros(std::move(shape));
    for (Real& x : t.impl_->data) x = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> data) {
    validate_shape(shape);
    if (static_cast<int64_t>(data.size()) != numel(shape)) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->data = std::move(data);
    t.impl_->shape = std::move(shape);
    return t;
}

std::span<const Real> Tensor::grad() const {
    const Impl& im = check();
    if (!im.has_grad) throw UsageError("tensor has no gradient");
    return im.grad;
}

std::span<Real> Tensor::grad_mut() {
    Impl& im = check();
    if (!im.has_grad) {
        im.grad.assign(im.data.size(), Real{0});
        im.has_grad = true;
    }
    return im.grad;
}

void Tensor::zero_grad() {
    Impl& im = check();
    im.grad.assign(im.data.size(), Real{0});
    im.has_grad = true;
}

void Tensor::drop_grad() {
    Impl& im = check();
    im.grad.clear();
    im.grad.shrink_to_fit();
    im.has_grad = false;
}

Real Tensor::item() const {
    const Impl& im = check();
    if (im.data.size() != 1) {
        throw UsageError("item() on tensor of shape " + shape_str(im.shape));
    }
    return im.data[0];
}

Tensor Tensor::clone() const {
    const Impl& im = check();
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->data = im.data;
    t.impl_->shape = im.shape;
    t.impl_->requires_grad = im.requires_grad;
    return t;
}

bool Tensor::all_finite() const {
    for (Real x : check().data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace lr
