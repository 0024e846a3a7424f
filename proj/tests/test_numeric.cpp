#include <cafusion/numeric.hpp>

#include <catch_amalgamated.hpp>

#include <limits>

using namespace cafusion;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("sigmoid reference points") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(std::log(3.0)) == Catch::Approx(0.75).epsilon(1e-15));
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-40.0, 40.0);
        CHECK(std::abs(sigmoid(x) + sigmoid(-x) - 1.0) <= 1e-15);
    }
}

TEST_CASE("sigmoid and tanh stay finite and bounded at extreme inputs") {
    for (double x : {1e308, -1e308, 745.0, -745.0, 1e-300, -1e-300}) {
        const double s = sigmoid(x);
        CHECK(std::isfinite(s));
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        CHECK(std::isfinite(tanh_act(x)));
        CHECK(std::abs(tanh_act(x)) <= 1.0);
    }
    // Strictly inside (0,1) wherever double resolution allows.
    for (double x : {-30.0, -5.0, 0.3, 5.0, 30.0}) {
        CHECK(sigmoid(x) > 0.0);
        CHECK(sigmoid(x) < 1.0);
    }
}

TEST_CASE("sigmoid is monotone") {
    double prev = sigmoid(-50.0);
    for (double x = -49.5; x <= 50.0; x += 0.5) {
        const double s = sigmoid(x);
        CHECK(s >= prev);
        prev = s;
    }
}

TEST_CASE("tanh is odd and saturates") {
    CHECK(tanh_act(0.0) == 0.0);
    CHECK(std::abs(tanh_act(40.0) - 1.0) < 1e-12);
    Rng rng(4);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-10.0, 10.0);
        CHECK(tanh_act(-x) == -tanh_act(x));
    }
}

TEST_CASE("binomial kernel rows of Pascal's triangle") {
    CHECK(binomial_kernel(1) == Vector{1.0});
    CHECK(binomial_kernel(3) == Vector{0.25, 0.5, 0.25});
    CHECK(binomial_kernel(5) == Vector{0.0625, 0.25, 0.375, 0.25, 0.0625});
}

TEST_CASE("binomial kernel sums to one and is symmetric") {
    for (std::size_t w = 1; w <= 21; w += 2) {
        const auto k = binomial_kernel(w);
        REQUIRE(k.size() == w);
        double s = 0.0;
        for (double x : k) s += x;
        CHECK(std::abs(s - 1.0) <= 1e-15);
        for (std::size_t i = 0; i < w; ++i) CHECK(k[i] == k[w - 1 - i]);
    }
    // Independent check against n choose k for window 11.
    const auto k = binomial_kernel(11);
    double c = 1.0;
    for (std::size_t i = 0; i < 11; ++i) {
        CHECK(k[i] == Catch::Approx(c / 1024.0).epsilon(1e-15));
        c = c * static_cast<double>(10 - i) / static_cast<double>(i + 1);
    }
}

TEST_CASE("binomial kernel rejects even and zero windows") {
    CHECK_THROWS_AS(binomial_kernel(0), std::invalid_argument);
    CHECK_THROWS_AS(binomial_kernel(4), std::invalid_argument);
}

TEST_CASE("matvec, add, hadamard") {
    const auto id = Matrix::identity(3);
    CHECK(matvec(id, Vector{1, 2, 3}) == Vector{1, 2, 3});
    CHECK(hadamard(Vector{1, 2}, Vector{3, 4}) == Vector{3, 8});
    CHECK(add(Vector{1, 2}, Vector{3, 4}) == Vector{4, 6});

    Matrix m(2, 3);
    double v = 1;
    for (double& x : m.data()) x = v++;
    CHECK(matvec(m, Vector{1, 0, -1}) == Vector{-2, -2});
}

TEST_CASE("dimension mismatches report both shapes") {
    Matrix m(2, 3);
    CHECK_THROWS_WITH(matvec(m, Vector{1, 2}), ContainsSubstring("3") && ContainsSubstring("2"));
    CHECK_THROWS_AS(add(Vector{1}, Vector{1, 2}), DimensionError);
    CHECK_THROWS_AS(hadamard(Vector{1}, Vector{1, 2}), DimensionError);
}

TEST_CASE("transposed and outer-product kernels agree with loops") {
    Rng rng(5);
    Matrix m(4, 7);
    for (double& x : m.data()) x = rng.uniform(-1, 1);
    std::vector<double> v(4), w(7);
    for (double& x : v) x = rng.uniform(-1, 1);
    for (double& x : w) x = rng.uniform(-1, 1);

    std::vector<double> out(7, 0.0);
    matvec_t_acc(m, v, out);
    for (std::size_t c = 0; c < 7; ++c) {
        double s = 0;
        for (std::size_t r = 0; r < 4; ++r) s += m(r, c) * v[r];
        CHECK(out[c] == Catch::Approx(s).epsilon(1e-14));
    }
    Matrix o(4, 7);
    outer_acc(o, v, w);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 7; ++c) CHECK(o(r, c) == v[r] * w[c]);

    std::vector<double> long_a(37), long_b(37);
    double s = 0;
    for (std::size_t i = 0; i < 37; ++i) {
        long_a[i] = rng.uniform(-1, 1);
        long_b[i] = rng.uniform(-1, 1);
        s += long_a[i] * long_b[i];
    }
    CHECK(dot(long_a, long_b) == Catch::Approx(s).epsilon(1e-14));
}

TEST_CASE("xavier init is deterministic and bounded") {
    Rng a(7), b(7);
    const auto m1 = xavier_init(10, 10, a);
    const auto m2 = xavier_init(10, 10, b);
    CHECK(m1 == m2);
    const double bound = std::sqrt(6.0 / 20.0);
    for (double x : m1.data()) {
        CHECK(x >= -bound);
        CHECK(x <= bound);
    }
    Rng c(8);
    CHECK_FALSE(xavier_init(10, 10, c) == m1);
}

TEST_CASE("rng streams are reproducible and derived streams differ") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    Rng d1 = Rng::derive(5, 1), d2 = Rng::derive(5, 2), d1b = Rng::derive(5, 1);
    const auto x = d1.next_u64();
    CHECK(x == d1b.next_u64());
    CHECK(x != d2.next_u64());
    Rng p1 = Rng::derive(5, 1, 7), p2 = Rng::derive(5, 7, 1);
    CHECK(p1.next_u64() != p2.next_u64());
}

TEST_CASE("rng distributions have the right moments") {
    Rng rng(99);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    std::vector<int> counts(5, 0);
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        su += u;
        const double g = rng.normal();
        sn += g;
        sn2 += g * g;
        ++counts[rng.below(5)];
    }
    CHECK(su / n == Catch::Approx(0.5).margin(0.005));
    CHECK(sn / n == Catch::Approx(0.0).margin(0.01));
    CHECK(sn2 / n == Catch::Approx(1.0).margin(0.02));
    for (int c : counts) CHECK(c == Catch::Approx(n / 5).margin(n / 100));
    CHECK_THROWS(rng.below(0));
}

TEST_CASE("shuffle is a permutation") {
    Rng rng(1);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    auto w = v;
    rng.shuffle(w);
    CHECK(w != v);
    std::sort(w.begin(), w.end());
    CHECK(w == v);
}

TEST_CASE("concat and all_finite") {
    std::vector<double> a{1, 2}, b{3};
    CHECK(concat({a, b}) == Vector{1, 2, 3});
    CHECK(all_finite(a));
    std::vector<double> bad{1, std::numeric_limits<double>::quiet_NaN()};
    CHECK_FALSE(all_finite(bad));
}
