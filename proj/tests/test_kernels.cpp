#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gensel/kernels.hpp"
#include "gensel/rng.hpp"

using namespace gensel;
namespace k = gensel::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

// reference triple loop, no reassociation tricks
void naive_gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t kk, double alpha,
                const std::vector<double>& a, std::size_t lda, const std::vector<double>& b,
                std::size_t ldb, double beta, std::vector<double>& c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < kk; ++t) {
                const double av = ta ? a[t * lda + i] : a[i * lda + t];
                const double bv = tb ? b[j * ldb + t] : b[t * ldb + j];
                acc += av * bv;
            }
            c[i * ldc + j] = alpha * acc + beta * c[i * ldc + j];
        }
    }
}

bool close(double a, double b, double tol) {
    return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

std::vector<const k::Ops*> backends() {
    std::vector<const k::Ops*> out{&k::scalar_ops()};
    if (k::avx2_available()) out.push_back(&k::avx2_ops());
    return out;
}

} // namespace

TEST_CASE("gemm matches the naive oracle across shapes and transposes") {
    Rng rng(7);
    for (const k::Ops* ops : backends()) {
        for (std::size_t m : {1u, 3u, 4u, 8u, 17u}) {
            for (std::size_t n : {1u, 5u, 8u, 16u, 23u}) {
                for (std::size_t kk : {1u, 2u, 8u, 31u}) {
                    for (const bool ta : {false, true}) {
                        for (const bool tb : {false, true}) {
                            const std::size_t lda = ta ? m + 2 : kk + 2;
                            const std::size_t ldb = tb ? kk + 1 : n + 3;
                            const std::size_t ldc = n + 2;
                            const auto a = random_vec((ta ? kk : m) * lda, rng);
                            const auto b = random_vec((tb ? n : kk) * ldb, rng);
                            auto c0 = random_vec(m * ldc, rng);
                            auto c1 = c0;
                            const double alpha = 1.25, beta = 0.5;
                            naive_gemm(ta, tb, m, n, kk, alpha, a, lda, b, ldb, beta, c0, ldc);
                            ops->gemm(ta, tb, m, n, kk, alpha, a.data(), lda, b.data(), ldb, beta,
                                      c1.data(), ldc);
                            for (std::size_t i = 0; i < m; ++i) {
                                for (std::size_t j = 0; j < n; ++j) {
                                    REQUIRE(close(c0[i * ldc + j], c1[i * ldc + j], 1e-12));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("gemm beta=0 overwrites uninitialized output") {
    Rng rng(9);
    for (const k::Ops* ops : backends()) {
        const auto a = random_vec(6 * 5, rng);
        const auto b = random_vec(5 * 9, rng);
        std::vector<double> c(6 * 9, std::numeric_limits<double>::quiet_NaN());
        ops->gemm(false, false, 6, 9, 5, 1.0, a.data(), 5, b.data(), 9, 0.0, c.data(), 9);
        for (double x : c) REQUIRE(std::isfinite(x));
    }
}

TEST_CASE("elementwise kernels agree between backends") {
    if (!k::avx2_available()) return;
    Rng rng(11);
    const auto& s = k::scalar_ops();
    const auto& a = k::avx2_ops();
    for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 65u, 1000u}) {
        const auto x = random_vec(n, rng);
        const auto y0 = random_vec(n, rng);

        REQUIRE(close(s.dot(x.data(), y0.data(), n), a.dot(x.data(), y0.data(), n), 1e-12));
        REQUIRE(close(s.sum(x.data(), n), a.sum(x.data(), n), 1e-12));
        REQUIRE(s.vmax(x.data(), n) == a.vmax(x.data(), n));

        auto ys = y0, ya = y0;
        s.axpy(0.73, x.data(), ys.data(), n);
        a.axpy(0.73, x.data(), ya.data(), n);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(close(ys[i], ya[i], 1e-13));

        ys = y0;
        ya = y0;
        s.vmul(x.data(), ys.data(), n);
        a.vmul(x.data(), ya.data(), n);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(ys[i] == ya[i]);

        auto rs = x, ra = x;
        s.relu(x.data(), rs.data(), n);
        a.relu(x.data(), ra.data(), n);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(rs[i] == ra[i]);

        auto ds = y0, da = y0;
        s.relu_bwd(x.data(), y0.data(), ds.data(), n);
        a.relu_bwd(x.data(), y0.data(), da.data(), n);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(ds[i] == da[i]);

        auto sm_s = x, sm_a = x;
        s.softmax(sm_s.data(), n);
        a.softmax(sm_a.data(), n);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(close(sm_s[i], sm_a[i], 1e-12));
    }
}

TEST_CASE("softmax normalizes and stays positive") {
    Rng rng(13);
    for (const k::Ops* ops : backends()) {
        for (int trial = 0; trial < 20; ++trial) {
            auto x = random_vec(37, rng);
            for (auto& v : x) v *= 10.0;
            ops->softmax(x.data(), x.size());
            double sum = 0.0;
            for (double v : x) {
                REQUIRE(v > 0.0);
                sum += v;
            }
            REQUIRE(std::fabs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("adam_step matches a hand-rolled update") {
    Rng rng(17);
    for (const k::Ops* ops : backends()) {
        const std::size_t n = 13;
        auto p = random_vec(n, rng), m = random_vec(n, rng), g = random_vec(n, rng);
        auto v = random_vec(n, rng);
        for (auto& x : v) x = std::fabs(x);
        auto pr = p, mr = m, vr = v;

        const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, c1 = 1.0 / (1 - b1), c2 = 1.0 / (1 - b2);
        ops->adam_step(p.data(), m.data(), v.data(), g.data(), n, lr, b1, b2, eps, c1, c2);
        for (std::size_t i = 0; i < n; ++i) {
            mr[i] = b1 * mr[i] + (1 - b1) * g[i];
            vr[i] = b2 * vr[i] + (1 - b2) * g[i] * g[i];
            pr[i] -= lr * (mr[i] * c1) / (std::sqrt(vr[i] * c2) + eps);
        }
        for (std::size_t i = 0; i < n; ++i) {
            REQUIRE(close(p[i], pr[i], 1e-12));
            REQUIRE(close(m[i], mr[i], 1e-12));
            REQUIRE(close(v[i], vr[i], 1e-12));
        }
    }
}

TEST_CASE("dispatch honors the environment override") {
    const auto& selected = k::ops();
    const std::string name = selected.name;
    REQUIRE((name == "scalar" || name == "avx2"));
    if (k::avx2_available()) REQUIRE(name == "avx2");
}
