#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "t4d/tensor.hpp"

using namespace t4d;

namespace {

// Independent triple-loop product used as the matmul oracle.
template <typename T>
Tensor<T> matmul_oracle(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> c({a.extent(0), b.extent(1)});
    for (std::int64_t i = 0; i < a.extent(0); ++i)
        for (std::int64_t j = 0; j < b.extent(1); ++j) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < a.extent(1); ++k)
                acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
            c(i, j) = static_cast<T>(acc);
        }
    return c;
}

template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double x = static_cast<double>(a[i]);
        const double y = static_cast<double>(b[i]);
        worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-12}));
    }
    return worst;
}

}  // namespace

TEST_CASE("construction") {
    SUBCASE("zeros") {
        auto t = Tensor<float>::zeros({2, 3});
        CHECK(t.numel() == 6);
        for (std::int64_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0f);
    }
    SUBCASE("full") {
        auto t = Tensor<double>::full({1}, 2.5);
        CHECK(t.numel() == 1);
        CHECK(t[0] == 2.5);
    }
    SUBCASE("from_data uses C order") {
        auto t = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
        CHECK(t(1, 0) == 3.0);
        CHECK(t(0, 1) == 2.0);
    }
    SUBCASE("buffer length must match shape") {
        CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1, 2, 3}), ShapeError);
    }
    SUBCASE("extents must be positive, rank bounded") {
        CHECK_THROWS_AS(Tensor<float>::zeros({0, 2}), ShapeError);
        CHECK_THROWS_AS(Tensor<float>::zeros({1, 1, 1, 1, 1, 1, 1}), ShapeError);
        CHECK_THROWS_AS(Tensor<float>::zeros({}), ShapeError);
    }
    SUBCASE("round trip through the flat buffer") {
        Rng rng(7);
        auto t = rand_normal<double>(rng, {3, 4, 2});
        auto copy = Tensor<double>::from_data(t.shape(), t.buffer());
        CHECK(copy == t);
    }
}

TEST_CASE("elementwise") {
    SUBCASE("basic values") {
        auto x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0});
        CHECK(relu(x)[0] == 0.0);
        CHECK(relu(x)[2] == 2.0);
        CHECK(sigmoid(Tensor<double>::zeros({1}))[0] == 0.5);
        CHECK(t4d::tanh(Tensor<double>::zeros({1}))[0] == 0.0);
        CHECK(t4d::exp(Tensor<double>::zeros({1}))[0] == 1.0);
        CHECK(ln(Tensor<double>::full({1}, 1.0))[0] == 0.0);
    }
    SUBCASE("binary ops demand identical shapes") {
        auto a = Tensor<float>::zeros({2, 2});
        auto b = Tensor<float>::zeros({4});
        CHECK_THROWS_AS(add(a, b), ShapeError);
        CHECK_THROWS_AS(mul(a, b), ShapeError);
    }
    SUBCASE("inputs never mutate") {
        auto a = Tensor<double>::full({4}, 3.0);
        auto b = Tensor<double>::full({4}, 5.0);
        auto a_copy = a;
        (void)add(a, b);
        (void)mul(a, b);
        (void)relu(a);
        (void)scale(a, 2.0);
        CHECK(a == a_copy);
    }
    SUBCASE("commutativity and associativity are exact on integer-valued floats") {
        Rng rng(11);
        Tensor<double> a({64}), b({64}), c({64});
        for (std::int64_t i = 0; i < 64; ++i) {
            a[i] = static_cast<double>(static_cast<std::int64_t>(rng.uniform_int(201)) - 100);
            b[i] = static_cast<double>(static_cast<std::int64_t>(rng.uniform_int(201)) - 100);
            c[i] = static_cast<double>(static_cast<std::int64_t>(rng.uniform_int(201)) - 100);
        }
        CHECK(add(a, b) == add(b, a));
        CHECK(mul(a, b) == mul(b, a));
        CHECK(add(add(a, b), c) == add(a, add(b, c)));
        CHECK(mul(mul(a, b), c) == mul(a, mul(b, c)));
    }
}

TEST_CASE("matmul") {
    SUBCASE("identity") {
        auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
        auto m = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
        CHECK(matmul(eye, m) == m);
    }
    SUBCASE("row times column") {
        auto a = Tensor<double>::from_data({1, 2}, {1, 2});
        auto b = Tensor<double>::from_data({2, 1}, {3, 4});
        auto c = matmul(a, b);
        CHECK(c.numel() == 1);
        CHECK(c[0] == 11.0);
    }
    SUBCASE("inner extent mismatch") {
        CHECK_THROWS_AS(matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({4, 2})),
                        ShapeError);
    }
    SUBCASE("random case matches the triple-loop oracle") {
        Rng rng(21);
        auto a = rand_normal<double>(rng, {7, 5});
        auto b = rand_normal<double>(rng, {5, 3});
        CHECK(max_rel_diff(matmul(a, b), matmul_oracle(a, b)) <= 1e-12);
    }
}

TEST_CASE("reduce") {
    SUBCASE("mean and population std") {
        auto v = Tensor<double>::from_data({2}, {1, 3});
        CHECK(reduce(Reduce::Mean, v, 0)[0] == 2.0);
        CHECK(reduce(Reduce::StdPopulation, v, 0)[0] == doctest::Approx(1.0));
        CHECK(reduce(Reduce::StdPopulation, Tensor<double>::full({5}, 4.2), 0)[0] == 0.0);
        CHECK(reduce(Reduce::Max, v, 0)[0] == 3.0);
    }
    SUBCASE("axis removed from shape") {
        auto t = Tensor<float>::zeros({2, 3, 4});
        CHECK(reduce(Reduce::Sum, t, 1).shape() == Shape{2, 4});
    }
    SUBCASE("invalid axis") {
        CHECK_THROWS_AS(reduce(Reduce::Sum, Tensor<float>::zeros({2}), 1), ShapeError);
    }
    SUBCASE("sum over all axes tracks sequential summation") {
        Rng rng(5);
        auto t32 = rand_normal<float>(rng, {6, 5, 4});
        auto r = reduce(Reduce::Sum, reduce(Reduce::Sum, reduce(Reduce::Sum, t32, 2), 1), 0);
        double seq = 0.0;
        for (std::int64_t i = 0; i < t32.numel(); ++i) seq += static_cast<double>(t32[i]);
        CHECK(std::abs(static_cast<double>(r[0]) - seq) <= 1e-6 * std::max(1.0, std::abs(seq)));

        auto t64 = rand_normal<double>(rng, {6, 5, 4});
        auto r64 = reduce(Reduce::Sum, reduce(Reduce::Sum, reduce(Reduce::Sum, t64, 2), 1), 0);
        double seq64 = 0.0;
        for (std::int64_t i = 0; i < t64.numel(); ++i) seq64 += t64[i];
        CHECK(std::abs(r64[0] - seq64) <= 1e-12 * std::max(1.0, std::abs(seq64)));
    }
}

TEST_CASE("pad and crop") {
    SUBCASE("zero pad") {
        auto t = pad(Tensor<double>::full({1}, 5.0), {1}, {1});
        CHECK(t.shape() == Shape{3});
        CHECK(t[0] == 0.0);
        CHECK(t[1] == 5.0);
        CHECK(t[2] == 0.0);
    }
    SUBCASE("crop inverts pad on the interior") {
        Rng rng(3);
        auto t = rand_normal<float>(rng, {4, 5});
        auto padded = pad(t, {1, 2}, {3, 0});
        CHECK(crop(padded, {1, 2}, {3, 0}) == t);
    }
    SUBCASE("temporal crop shape") {
        auto img = Tensor<float>::zeros({32, 32, 32, 176});
        auto c = crop(img, {0, 0, 0, 0}, {0, 0, 0, 161});
        CHECK(c.shape() == Shape{32, 32, 32, 15});
    }
    SUBCASE("out-of-range crop") {
        CHECK_THROWS_AS(crop(Tensor<float>::zeros({4}), {2}, {2}), ShapeError);
    }
}

TEST_CASE("rng and rand_normal") {
    SUBCASE("zero stddev collapses to the mean") {
        Rng rng(1);
        auto t = rand_normal<double>(rng, {10}, 1.5, 0.0);
        for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 1.5);
    }
    SUBCASE("same seed, same tensor") {
        Rng a(123), b(123);
        CHECK(rand_normal<float>(a, {32}) == rand_normal<float>(b, {32}));
    }
    SUBCASE("different seeds differ") {
        Rng a(123), b(124);
        CHECK(!(rand_normal<float>(a, {32}) == rand_normal<float>(b, {32})));
    }
    SUBCASE("sample statistics of 1e5 standard normals") {
        Rng rng(42);
        const int n = 100000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = rng.normal();
            sum += x;
            sq += x * x;
        }
        const double mean = sum / n;
        const double stddev = std::sqrt(sq / n - mean * mean);
        CHECK(std::abs(mean) < 0.02);
        CHECK(std::abs(stddev - 1.0) < 0.02);
    }
    SUBCASE("uniform_int stays in range") {
        Rng rng(9);
        for (int i = 0; i < 1000; ++i) CHECK(rng.uniform_int(7) < 7);
    }
    SUBCASE("state round trip") {
        Rng a(77);
        (void)a.next_u64();
        Rng b(0);
        b.set_state(a.state());
        for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
    }
}
