#pragma once

#include <cstddef>

// Double-precision arithmetic kernels behind the model, the evaluator and the
// optimizer. A scalar reference implementation always exists; an AVX2 variant
// is selected at runtime when the CPU supports it. All matrices are row-major;
// ld* is the stride between consecutive rows.

namespace gensel::kernels {

struct Ops {
    const char* name;

    double (*dot)(const double* x, const double* y, std::size_t n);
    void (*axpy)(double a, const double* x, double* y, std::size_t n);   // y += a*x
    void (*scale)(double a, double* x, std::size_t n);                   // x *= a
    void (*vadd)(const double* x, double* y, std::size_t n);             // y += x
    void (*vmul)(const double* x, double* y, std::size_t n);             // y *= x
    double (*sum)(const double* x, std::size_t n);
    double (*vmax)(const double* x, std::size_t n);

    // in-place softmax over x[0..n): subtract max, exponentiate, normalize
    void (*softmax)(double* x, std::size_t n);

    void (*relu)(const double* x, double* y, std::size_t n);             // y = max(x, 0)
    void (*relu_bwd)(const double* x, const double* dy, double* dx, std::size_t n); // dx += dy * (x > 0)

    // fused Adam update; c1 = 1/(1-b1^t), c2 = 1/(1-b2^t)
    void (*adam_step)(double* p, double* m, double* v, const double* g, std::size_t n,
                      double lr, double b1, double b2, double eps, double c1, double c2);

    // C(m x n) = alpha * opA(A) * opB(B) + beta * C, op = transpose when flag set
    void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb,
                 double beta, double* c, std::size_t ldc);
};

const Ops& scalar_ops();

bool avx2_available();       // compiled in and supported by this CPU
const Ops& avx2_ops();       // valid only when avx2_available()

// Dispatched table. Env var GENSEL_KERNELS=scalar|avx2 forces a backend.
const Ops& ops();

} // namespace gensel::kernels
