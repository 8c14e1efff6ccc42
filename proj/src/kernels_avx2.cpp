// AVX2+FMA variants of the arithmetic kernels. This translation unit is the
// only one compiled with -mavx2 -mfma; nothing here runs unless the dispatcher
// checked CPU support first.

#include "gensel/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define GENSEL_HAVE_AVX2_TU 1
#include <immintrin.h>
#include <cmath>
#endif

namespace gensel::kernels {

#if GENSEL_HAVE_AVX2_TU

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    const __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double a_dot(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void a_axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void a_scale(double a, double* x, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) x[i] *= a;
}

void a_vadd(const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += x[i];
}

void a_vmul(const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] *= x[i];
}

double a_sum(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double a_vmax(const double* x, std::size_t n) {
    std::size_t i = 0;
    double m;
    if (n >= 4) {
        __m256d acc = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
        __m128d lo = _mm256_castpd256_pd128(acc);
        lo = _mm_max_pd(lo, _mm256_extractf128_pd(acc, 1));
        lo = _mm_max_sd(lo, _mm_unpackhi_pd(lo, lo));
        m = _mm_cvtsd_f64(lo);
    } else {
        m = x[0];
        i = 1;
    }
    for (; i < n; ++i) m = m > x[i] ? m : x[i];
    return m;
}

void a_softmax(double* x, std::size_t n) {
    // exp stays scalar libm; max and the final normalization are vectorized
    const double m = a_vmax(x, n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - m);
        z += x[i];
    }
    a_scale(1.0 / z, x, n);
}

void a_relu(const double* x, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void a_relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
    }
}

void a_adam_step(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double b1, double b2, double eps, double c1, double c2) {
    const __m256d vb1 = _mm256_set1_pd(b1), vnb1 = _mm256_set1_pd(1.0 - b1);
    const __m256d vb2 = _mm256_set1_pd(b2), vnb2 = _mm256_set1_pd(1.0 - b2);
    const __m256d vlr = _mm256_set1_pd(lr), veps = _mm256_set1_pd(eps);
    const __m256d vc1 = _mm256_set1_pd(c1), vc2 = _mm256_set1_pd(c2);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gi = _mm256_loadu_pd(g + i);
        const __m256d mi = _mm256_fmadd_pd(vnb1, gi, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
        const __m256d vi = _mm256_fmadd_pd(vnb2, _mm256_mul_pd(gi, gi), _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vi, vc2)), veps);
        const __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, _mm256_mul_pd(mi, vc1)), den);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    for (; i < n; ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
}

// ---- gemm ----
// Register tile: 4 rows x 8 columns of C. A is read either row-wise (NN) or
// column-wise (TN); B row-major rows are contiguous in both hot paths.

inline void store_tile(double* c, std::size_t ldc, std::size_t rows, __m256d acc[4][2],
                       double alpha, double beta) {
    const __m256d va = _mm256_set1_pd(alpha);
    for (std::size_t r = 0; r < rows; ++r) {
        double* crow = c + r * ldc;
        __m256d lo = _mm256_mul_pd(va, acc[r][0]);
        __m256d hi = _mm256_mul_pd(va, acc[r][1]);
        if (beta != 0.0) {
            const __m256d vb = _mm256_set1_pd(beta);
            lo = _mm256_fmadd_pd(vb, _mm256_loadu_pd(crow), lo);
            hi = _mm256_fmadd_pd(vb, _mm256_loadu_pd(crow + 4), hi);
        }
        _mm256_storeu_pd(crow, lo);
        _mm256_storeu_pd(crow + 4, hi);
    }
}

// C blocks where opA(A) rows are i0..i0+rows, full k, 8 columns of B at j0
template <bool TransA>
inline void kernel_8col(std::size_t rows, std::size_t k,
                        double alpha, const double* a, std::size_t lda, std::size_t i0,
                        const double* b, std::size_t ldb, std::size_t j0,
                        double beta, double* c, std::size_t ldc) {
    __m256d acc[4][2];
    for (std::size_t r = 0; r < 4; ++r) {
        acc[r][0] = _mm256_setzero_pd();
        acc[r][1] = _mm256_setzero_pd();
    }
    for (std::size_t t = 0; t < k; ++t) {
        const double* brow = b + t * ldb + j0;
        const __m256d b0 = _mm256_loadu_pd(brow);
        const __m256d b1 = _mm256_loadu_pd(brow + 4);
        for (std::size_t r = 0; r < rows; ++r) {
            const double av = TransA ? a[t * lda + i0 + r] : a[(i0 + r) * lda + t];
            const __m256d va = _mm256_set1_pd(av);
            acc[r][0] = _mm256_fmadd_pd(va, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_pd(va, b1, acc[r][1]);
        }
    }
    store_tile(c + i0 * ldc + j0, ldc, rows, acc, alpha, beta);
}

// column tail (n - j0 < 8), scalar over j
template <bool TransA>
inline void tail_cols(std::size_t rows, std::size_t k, std::size_t n,
                      double alpha, const double* a, std::size_t lda, std::size_t i0,
                      const double* b, std::size_t ldb, std::size_t j0,
                      double beta, double* c, std::size_t ldc) {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = j0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) {
                const double av = TransA ? a[t * lda + i0 + r] : a[(i0 + r) * lda + t];
                acc += av * b[t * ldb + j];
            }
            double* cj = c + (i0 + r) * ldc + j;
            *cj = alpha * acc + (beta == 0.0 ? 0.0 : beta * *cj);
        }
    }
}

template <bool TransA>
void gemm_bn(std::size_t m, std::size_t n, std::size_t k,
             double alpha, const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double beta, double* c, std::size_t ldc) {
    for (std::size_t i0 = 0; i0 < m; i0 += 4) {
        const std::size_t rows = (m - i0) < 4 ? (m - i0) : 4;
        std::size_t j0 = 0;
        for (; j0 + 8 <= n; j0 += 8) {
            kernel_8col<TransA>(rows, k, alpha, a, lda, i0, b, ldb, j0, beta, c, ldc);
        }
        if (j0 < n) tail_cols<TransA>(rows, k, n, alpha, a, lda, i0, b, ldb, j0, beta, c, ldc);
    }
}

// C = alpha * A * B^T + beta * C: rows of both operands are contiguous, use dots
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             double alpha, const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double beta, double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * lda;
        double* crow = c + i * ldc;
        for (std::size_t j = 0; j < n; ++j) {
            const double acc = a_dot(arow, b + j * ldb, k);
            crow[j] = alpha * acc + (beta == 0.0 ? 0.0 : beta * crow[j]);
        }
    }
}

void a_gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
            double alpha, const double* a, std::size_t lda,
            const double* b, std::size_t ldb,
            double beta, double* c, std::size_t ldc) {
    if (!trans_b) {
        if (!trans_a) {
            gemm_bn<false>(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        } else {
            gemm_bn<true>(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        }
        return;
    }
    if (!trans_a) {
        gemm_nt(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        return;
    }
    // T,T is not on any hot path
    scalar_ops().gemm(true, true, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

} // namespace

bool avx2_available() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

const Ops& avx2_ops() {
    static const Ops table{
        "avx2",
        a_dot, a_axpy, a_scale, a_vadd, a_vmul, a_sum, a_vmax,
        a_softmax, a_relu, a_relu_bwd, a_adam_step, a_gemm,
    };
    return table;
}

#else

bool avx2_available() { return false; }
const Ops& avx2_ops() { return scalar_ops(); }

#endif

} // namespace gensel::kernels
