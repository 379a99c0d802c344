#include "miditex/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace miditex::kernels {

// The parallel and serial bodies are kept textually identical apart from the
// pragma; every output element is produced by exactly one iteration with a
// fixed accumulation order, which is what makes the two bit-equal.

namespace {

inline void matmul_row(const Mat& a, const Mat& b, Mat& out, int i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < a.cols; ++k) {
        double aik = arow[k];
        if (aik == 0.0) continue;
        const double* brow = b.row(k);
        for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
}

inline void matmul_nt_row(const Mat& a, const Mat& b, Mat& out, int i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
        const double* brow = b.row(j);
        double sum = 0.0;
        for (int k = 0; k < a.cols; ++k) sum += arow[k] * brow[k];
        orow[j] = sum;
    }
}

inline void matmul_tn_col(const Mat& a, const Mat& b, Mat& out, int i) {
    // out[i, :] = sum_k a[k, i] * b[k, :]
    double* orow = out.row(i);
    for (int k = 0; k < a.rows; ++k) {
        double aki = a(k, i);
        if (aki == 0.0) continue;
        const double* brow = b.row(k);
        for (int j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
}

inline void softmax_row(Mat& m, int i, int prefix_limit) {
    int n = prefix_limit >= 0 ? std::min(i + 1 + prefix_limit, m.cols) : m.cols;
    double* row = m.row(i);
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) row[j] *= inv;
    for (int j = n; j < m.cols; ++j) row[j] = 0.0;
}

} // namespace

namespace serial {

Mat matmul(const Mat& a, const Mat& b) {
    assert(a.cols == b.rows);
    Mat out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) matmul_row(a, b, out, i);
    return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    assert(a.cols == b.cols);
    Mat out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) matmul_nt_row(a, b, out, i);
    return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    assert(a.rows == b.rows);
    Mat out(a.cols, b.cols);
    for (int i = 0; i < a.cols; ++i) matmul_tn_col(a, b, out, i);
    return out;
}

void softmax_rows(Mat& m, int prefix_limit) {
    for (int i = 0; i < m.rows; ++i) softmax_row(m, i, prefix_limit);
}

} // namespace serial

Mat matmul(const Mat& a, const Mat& b) {
    assert(a.cols == b.rows);
    Mat out(a.rows, b.cols);
#pragma omp parallel for schedule(static) if (a.rows >= 16)
    for (int i = 0; i < a.rows; ++i) matmul_row(a, b, out, i);
    return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    assert(a.cols == b.cols);
    Mat out(a.rows, b.rows);
#pragma omp parallel for schedule(static) if (a.rows >= 16)
    for (int i = 0; i < a.rows; ++i) matmul_nt_row(a, b, out, i);
    return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    assert(a.rows == b.rows);
    Mat out(a.cols, b.cols);
#pragma omp parallel for schedule(static) if (a.cols >= 16)
    for (int i = 0; i < a.cols; ++i) matmul_tn_col(a, b, out, i);
    return out;
}

void softmax_rows(Mat& m, int prefix_limit) {
#pragma omp parallel for schedule(static) if (m.rows >= 64)
    for (int i = 0; i < m.rows; ++i) softmax_row(m, i, prefix_limit);
}

} // namespace miditex::kernels
