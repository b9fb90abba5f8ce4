#include "sta/tensor.hpp"

#include <utility>

#include "sta/errors.hpp"

namespace sta {

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

bool same_shape(const Shape& a, const Shape& b) {
    return a == b;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (shape.empty()) {
        throw ShapeError("tensor shape must have at least one axis");
    }
    for (size_t d : shape) {
        if (d == 0) {
            throw ShapeError("tensor shape " + shape_str(shape) + " has a zero axis");
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor data size " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

Tensor Tensor::zeros(Shape shape) {
    size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
    size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) {
    return from({1}, {value});
}

size_t Tensor::offset(std::initializer_list<size_t> index) const {
    if (index.size() != shape.size()) {
        throw ShapeError("index rank " + std::to_string(index.size()) +
                         " does not match tensor rank " + std::to_string(shape.size()));
    }
    size_t off = 0;
    size_t axis = 0;
    for (size_t i : index) {
        if (i >= shape[axis]) {
            throw ShapeError("index " + std::to_string(i) + " out of range for axis " +
                             std::to_string(axis) + " of " + shape_str(shape));
        }
        off = off * shape[axis] + i;
        ++axis;
    }
    return off;
}

void Tensor::zero_grad() {
    grad.assign(data.size(), 0.0);
}

}  // namespace sta
