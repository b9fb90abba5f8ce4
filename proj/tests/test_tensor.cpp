#include <doctest.h>

#include <vector>

#include "sta/errors.hpp"
#include "sta/tensor.hpp"

using namespace sta;

TEST_CASE("shape_numel multiplies axes") {
    // [TRIVIAL] products computed by hand.
    CHECK(shape_numel({1}) == 1);
    CHECK(shape_numel({4}) == 4);
    CHECK(shape_numel({2, 3}) == 6);
    CHECK(shape_numel({2, 3, 4}) == 24);
    CHECK(shape_numel({}) == 1);  // empty product
}

TEST_CASE("shape_str formats like a list") {
    // [TRIVIAL]
    CHECK(shape_str({}) == "[]");
    CHECK(shape_str({5}) == "[5]");
    CHECK(shape_str({2, 3, 4}) == "[2, 3, 4]");
}

TEST_CASE("Tensor::from keeps shape and data") {
    // [TRIVIAL]
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.shape == Shape{2, 3});
    CHECK(t.data == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK_FALSE(t.has_grad());
}

TEST_CASE("Tensor::from rejects inconsistent inputs") {
    // [TRIVIAL] contract checks.
    CHECK_THROWS_AS(Tensor::from({2, 3}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from({}, {}), ShapeError);
    CHECK_THROWS_AS(Tensor::from({2, 0}, {}), ShapeError);
}

TEST_CASE("zeros, full and scalar builders") {
    // [TRIVIAL]
    Tensor z = Tensor::zeros({3, 2});
    CHECK(z.numel() == 6);
    for (double v : z.data) CHECK(v == 0.0);

    Tensor f = Tensor::full({2, 2}, 1.5);
    for (double v : f.data) CHECK(v == 1.5);

    Tensor s = Tensor::scalar(-7.25);
    CHECK(s.shape == Shape{1});
    CHECK(s.data[0] == -7.25);
}

TEST_CASE("offset is row-major") {
    // [DERIVED] strides for shape [2,3,4] are (12,4,1), so
    // offset(1,2,3) = 12 + 8 + 3 = 23 and offset(0,1,2) = 6.
    Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.offset({0, 0, 0}) == 0);
    CHECK(t.offset({0, 1, 2}) == 6);
    CHECK(t.offset({1, 2, 3}) == 23);

    t.at({1, 2, 3}) = 9.0;
    CHECK(t.data[23] == 9.0);
    const Tensor& ct = t;
    CHECK(ct.at({1, 2, 3}) == 9.0);
}

TEST_CASE("offset rejects bad indices") {
    // [TRIVIAL]
    Tensor t = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(t.offset({1}), ShapeError);         // wrong rank
    CHECK_THROWS_AS(t.offset({1, 2, 0}), ShapeError);   // wrong rank
    CHECK_THROWS_AS(t.offset({2, 0}), ShapeError);      // axis 0 out of range
    CHECK_THROWS_AS(t.offset({0, 3}), ShapeError);      // axis 1 out of range
}

TEST_CASE("zero_grad allocates and resets the gradient buffer") {
    // [TRIVIAL]
    Tensor t = Tensor::from({2}, {1, 2});
    CHECK_FALSE(t.has_grad());
    t.zero_grad();
    CHECK(t.has_grad());
    CHECK(t.grad == std::vector<double>{0, 0});

    t.grad[0] = 5.0;
    t.zero_grad();
    CHECK(t.grad == std::vector<double>{0, 0});
}

TEST_CASE("same_shape compares exactly") {
    // [TRIVIAL]
    CHECK(same_shape({2, 3}, {2, 3}));
    CHECK_FALSE(same_shape({2, 3}, {3, 2}));
    CHECK_FALSE(same_shape({2, 3}, {2, 3, 1}));
}
