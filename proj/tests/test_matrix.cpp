#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "metafed/errors.hpp"
#include "metafed/matrix.hpp"
#include "metafed/rng.hpp"

using namespace metafed;

TEST_CASE("matrix construction and element access") {
    Matrix m(2, 3, 1.5);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.size() == 6);
    CHECK(m.at(1, 2) == 1.5);

    m.at(0, 1) = -4.0;
    CHECK(m.at(0, 1) == -4.0);
    CHECK(m.row(0)[1] == -4.0);

    Matrix lit = {{1.0, 2.0}, {3.0, 4.0}};
    CHECK(lit.at(0, 0) == 1.0);
    CHECK(lit.at(1, 1) == 4.0);

    Matrix from_vec(2, 2, std::vector<double>{1.0, 2.0, 3.0, 4.0});
    CHECK(from_vec == lit);
}

TEST_CASE("matrix constructor rejects mismatched shapes") {
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}), shape_error);
    CHECK_THROWS_AS((Matrix{{1.0, 2.0}, {3.0}}), shape_error);
}

TEST_CASE("all_finite flags NaN and infinity") {
    Matrix m(2, 2, 1.0);
    CHECK(m.all_finite());
    m.at(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(m.all_finite());
    m.at(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_FALSE(m.all_finite());
}

TEST_CASE("matmul matches a hand computation") {
    Matrix a = {{1.0, 2.0}, {3.0, 4.0}};
    Matrix b = {{5.0, 6.0, 7.0}, {8.0, 9.0, 10.0}};
    Matrix c = matmul(a, b);
    CHECK(c.rows() == 2);
    CHECK(c.cols() == 3);
    CHECK(c.at(0, 0) == 21.0);
    CHECK(c.at(0, 1) == 24.0);
    CHECK(c.at(0, 2) == 27.0);
    CHECK(c.at(1, 0) == 47.0);
    CHECK(c.at(1, 1) == 54.0);
    CHECK(c.at(1, 2) == 61.0);
}

TEST_CASE("matmul rejects inner-dimension mismatch") {
    Matrix a(2, 3, 1.0);
    Matrix b(2, 2, 1.0);
    CHECK_THROWS_AS(matmul(a, b), shape_error);
}

TEST_CASE("transposed products agree with explicit transposition") {
    Rng rng(11);
    Matrix a(4, 3);
    Matrix b(4, 5);
    for (auto& v : a.data()) v = rng.gaussian();
    for (auto& v : b.data()) v = rng.gaussian();

    Matrix at(3, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) at.at(j, i) = a.at(i, j);
    }
    Matrix want = matmul(at, b);
    Matrix got = matmul_at_b(a, b);
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
    }

    Matrix c(5, 3);
    for (auto& v : c.data()) v = rng.gaussian();
    Matrix ct(3, 5);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 3; ++j) ct.at(j, i) = c.at(i, j);
    }
    Matrix want2 = matmul(a, ct);
    Matrix got2 = matmul_a_bt(a, c);
    REQUIRE(got2.same_shape(want2));
    for (std::size_t i = 0; i < got2.size(); ++i) {
        CHECK(got2.data()[i] == doctest::Approx(want2.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("add_row_vector and col_sum") {
    Matrix m = {{1.0, 2.0}, {3.0, 4.0}};
    std::vector<double> v = {10.0, 20.0};
    add_row_vector(m, v);
    CHECK(m.at(0, 0) == 11.0);
    CHECK(m.at(0, 1) == 22.0);
    CHECK(m.at(1, 0) == 13.0);
    CHECK(m.at(1, 1) == 24.0);

    std::vector<double> s = col_sum(m);
    REQUIRE(s.size() == 2);
    CHECK(s[0] == 24.0);
    CHECK(s[1] == 46.0);
}

TEST_CASE("mix_seed separates tags and preserves determinism") {
    CHECK(mix_seed(7, 1) == mix_seed(7, 1));
    CHECK(mix_seed(7, 1) != mix_seed(7, 2));
    CHECK(mix_seed(7, 1) != mix_seed(8, 1));
}

TEST_CASE("rng streams are deterministic per seed") {
    Rng a(42);
    Rng b(42);
    Rng c(43);
    bool all_equal = true;
    bool any_differs = false;
    for (int i = 0; i < 64; ++i) {
        const double va = a.uniform();
        all_equal = all_equal && va == b.uniform();
        any_differs = any_differs || va != c.uniform();
    }
    CHECK(all_equal);
    CHECK(any_differs);
}

TEST_CASE("uniform stays in [0,1) and index stays below its bound") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (std::size_t n : {std::size_t{1}, std::size_t{2}, std::size_t{7}, std::size_t{100}}) {
        for (int i = 0; i < 200; ++i) CHECK(rng.index(n) < n);
    }
}

TEST_CASE("gaussian sample moments are plausible") {
    Rng rng(9);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sq += g * g;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("dirichlet draws are simplex points") {
    Rng rng(3);
    for (double alpha : {0.1, 1.0, 50.0}) {
        for (int rep = 0; rep < 20; ++rep) {
            const std::vector<double> p = rng.dirichlet(alpha, 6);
            REQUIRE(p.size() == 6);
            double total = 0.0;
            for (double v : p) {
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("shuffle permutes without losing elements") {
    Rng rng(17);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> shuffled = v;
    rng.shuffle(shuffled);
    CHECK(shuffled != v);
    std::vector<int> sorted = shuffled;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);
}
