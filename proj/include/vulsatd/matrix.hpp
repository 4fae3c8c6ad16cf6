#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace vulsatd {

/// Dense row-major matrix of doubles. Training runs in double precision
/// throughout; the models are small enough that this costs little and keeps
/// the finite-difference gradient check tight.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double* operator[](int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
    const double* operator[](int r) const {
        return a.data() + static_cast<std::size_t>(r) * cols;
    }
    std::size_t size() const { return a.size(); }
    void zero() { a.assign(a.size(), 0.0); }
};

/// C = A * B (C preallocated to rows_A x cols_B; accumulate adds into C)
inline void matmul(const Matrix& A, const Matrix& B, Matrix& C, bool accumulate = false) {
    assert(A.cols == B.rows && C.rows == A.rows && C.cols == B.cols);
    if (!accumulate) C.zero();
    for (int i = 0; i < A.rows; ++i) {
        const double* ai = A[i];
        double* ci = C[i];
        for (int k = 0; k < A.cols; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = B[k];
            for (int j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
        }
    }
}

/// C = A^T * B
inline void matmul_at_b(const Matrix& A, const Matrix& B, Matrix& C, bool accumulate = false) {
    assert(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols);
    if (!accumulate) C.zero();
    for (int k = 0; k < A.rows; ++k) {
        const double* ak = A[k];
        const double* bk = B[k];
        for (int i = 0; i < A.cols; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = C[i];
            for (int j = 0; j < B.cols; ++j) ci[j] += aki * bk[j];
        }
    }
}

/// C = A * B^T
inline void matmul_a_bt(const Matrix& A, const Matrix& B, Matrix& C, bool accumulate = false) {
    assert(A.cols == B.cols && C.rows == A.rows && C.cols == B.rows);
    if (!accumulate) C.zero();
    for (int i = 0; i < A.rows; ++i) {
        const double* ai = A[i];
        double* ci = C[i];
        for (int j = 0; j < B.rows; ++j) {
            const double* bj = B[j];
            double s = 0.0;
            for (int k = 0; k < A.cols; ++k) s += ai[k] * bj[k];
            ci[j] += s;
        }
    }
}

}  // namespace vulsatd
