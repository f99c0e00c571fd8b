#include "catch_amalgamated.hpp"

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"

using namespace vaemech;

TEST_CASE("tensor shape and storage", "[tensor]") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.dim(1) == 3);
    CHECK(t.row_size() == 3);
    for (double v : t.data()) CHECK(v == 1.5);
    CHECK_THROWS_AS(t.dim(2), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
    CHECK_THROWS(t.item());
}

TEST_CASE("reshape keeps data and rejects a different element count", "[tensor]") {
    const Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
    const Tensor r = t.reshaped({3, 2});
    CHECK(r.shape() == Shape{3, 2});
    CHECK(r.storage() == t.storage());
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("row slicing and concatenation are inverse", "[tensor]") {
    const Tensor t({3, 2}, std::vector<double>{0, 1, 2, 3, 4, 5});
    const Tensor a = slice_rows(t, 0, 1), b = slice_rows(t, 1, 2);
    CHECK(b.shape() == Shape{2, 2});
    CHECK(b[0] == 2);
    const std::vector<Tensor> parts{a, b};
    CHECK(concat_rows(parts).storage() == t.storage());
    CHECK_THROWS(slice_rows(t, 2, 2));
}

TEST_CASE("elementwise difference and norms", "[tensor]") {
    const Tensor a = Tensor::vector({3, 4}), b = Tensor::vector({0, 0});
    CHECK((a - b).storage() == a.storage());
    CHECK(l2_norm(a.data()) == 5.0);
    CHECK(max_abs(Tensor::vector({-7, 2}).data()) == 7.0);
    CHECK_THROWS_AS(a - Tensor::vector({1}), ShapeError);
}

TEST_CASE("all_finite detects nan and inf", "[tensor]") {
    Tensor t({2}, 0.0);
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
}
