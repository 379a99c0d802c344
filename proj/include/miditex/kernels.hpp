#pragma once

#include <cassert>
#include <vector>

namespace miditex {

// Dense row-major matrix of doubles. All model math runs on these.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

    double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }
    size_t size() const { return v.size(); }

    friend bool operator==(const Mat&, const Mat&) = default;
};

// Matmul family and row softmax. The unqualified functions are the primary
// implementations: OpenMP-parallel over output rows with a fixed per-element
// accumulation order, so results are bitwise identical to the serial
// reference regardless of thread count. kernels::serial holds the reference
// implementations used by the equivalence tests and the benchmark.
namespace kernels {

namespace serial {
Mat matmul(const Mat& a, const Mat& b);    // a[m,k] * b[k,n]
Mat matmul_nt(const Mat& a, const Mat& b); // a[m,k] * b[n,k]^T
Mat matmul_tn(const Mat& a, const Mat& b); // a[k,m]^T * b[k,n]
void softmax_rows(Mat& m, int prefix_limit = -1);
} // namespace serial

Mat matmul(const Mat& a, const Mat& b);
Mat matmul_nt(const Mat& a, const Mat& b);
Mat matmul_tn(const Mat& a, const Mat& b);
// Row-wise softmax in place; when prefix_limit >= 0, row i is normalized
// over columns [0, min(i + 1 + prefix_limit, cols)) and the rest zeroed
// (prefix_limit 0 = causal self-attention).
void softmax_rows(Mat& m, int prefix_limit = -1);

} // namespace kernels

} // namespace miditex
