#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "miditex/kernels.hpp"
#include "miditex/rng.hpp"

using namespace miditex;

namespace {

Mat random_mat(Rng& rng, int r, int c) {
    Mat m(r, c);
    for (auto& e : m.v) e = rng.normal();
    return m;
}

} // namespace

TEST_CASE("parallel kernels are bitwise identical to the serial reference") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        int m = rng.uniform_int(1, 96), k = rng.uniform_int(1, 96), n = rng.uniform_int(1, 96);
        Mat a = random_mat(rng, m, k);
        Mat b = random_mat(rng, k, n);
        Mat bt = random_mat(rng, n, k);
        Mat at = random_mat(rng, k, m);

        CHECK(kernels::matmul(a, b) == kernels::serial::matmul(a, b));
        CHECK(kernels::matmul_nt(a, bt) == kernels::serial::matmul_nt(a, bt));
        CHECK(kernels::matmul_tn(at, b) == kernels::serial::matmul_tn(at, b));
    }
}

TEST_CASE("masked softmax matches serially and renormalizes prefixes") {
    Rng rng(2);
    Mat m = random_mat(rng, 64, 64);
    Mat serial = m, parallel = m;
    kernels::serial::softmax_rows(serial, 0);
    kernels::softmax_rows(parallel, 0);
    CHECK(serial == parallel);

    for (int i = 0; i < serial.rows; ++i) {
        double sum = 0;
        for (int j = 0; j < serial.cols; ++j) {
            if (j > i) CHECK(serial(i, j) == 0.0);
            sum += serial(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("unmasked softmax rows sum to one") {
    Rng rng(3);
    Mat m = random_mat(rng, 17, 33);
    kernels::softmax_rows(m);
    for (int i = 0; i < m.rows; ++i) {
        double sum = 0;
        for (int j = 0; j < m.cols; ++j) sum += m(i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("matmul shapes and a hand example") {
    Mat a(2, 3), b(3, 2);
    // a = [[1,2,3],[4,5,6]], b = [[7,8],[9,10],[11,12]]
    a.v = {1, 2, 3, 4, 5, 6};
    b.v = {7, 8, 9, 10, 11, 12};
    Mat c = kernels::matmul(a, b);
    REQUIRE(c.rows == 2);
    REQUIRE(c.cols == 2);
    CHECK(c(0, 0) == 58);
    CHECK(c(0, 1) == 64);
    CHECK(c(1, 0) == 139);
    CHECK(c(1, 1) == 154);

    // a * b == (a) *_nt (b^T) == ((a^T)) _tn (b) composed checks
    Mat bt(2, 3);
    bt.v = {7, 9, 11, 8, 10, 12};
    CHECK(kernels::matmul_nt(a, bt) == c);
    Mat at(3, 2);
    at.v = {1, 4, 2, 5, 3, 6};
    CHECK(kernels::matmul_tn(at, b) == c);
}
