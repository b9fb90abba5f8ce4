#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace sta {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. `grad` stays empty until a backward pass
// (or an explicit ensure_grad) allocates it; optimizers require it to be
// present and shape-consistent.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;

    Tensor() = default;

    // Builds a tensor, checking that the element count matches the shape.
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }

    // Row-major offset of a multi-index; bounds-checked.
    size_t offset(std::initializer_list<size_t> index) const;
    double at(std::initializer_list<size_t> index) const { return data[offset(index)]; }
    double& at(std::initializer_list<size_t> index) { return data[offset(index)]; }

    // Allocates a zero gradient buffer if missing; resets it otherwise.
    void zero_grad();
    bool has_grad() const { return grad.size() == data.size(); }
};

bool same_shape(const Shape& a, const Shape& b);

}  // namespace sta
