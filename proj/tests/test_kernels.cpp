#include "doctest.h"

#include <cmath>
#include <vector>

#include "exitlab/kernels.hpp"
#include "exitlab/rng.hpp"

using namespace exitlab;

namespace {

std::vector<float> random_vec(SeqRng& rng, int n, float scale = 1.0f) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = scale * (static_cast<float>(rng.next_uniform()) - 0.5f);
    return v;
}

} // namespace

TEST_CASE("matvec matches serial reference bitwise") {
    SeqRng rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const int rows = 33 + trial * 41;
        const int cols = 17 + trial * 29;
        auto w = random_vec(rng, rows * cols);
        auto x = random_vec(rng, cols);
        std::vector<float> a(static_cast<size_t>(rows)), b(static_cast<size_t>(rows));
        kernels::matvec(w.data(), rows, cols, x.data(), a.data());
        kernels::serial::matvec(w.data(), rows, cols, x.data(), b.data());
        for (int i = 0; i < rows; ++i) CHECK(a[static_cast<size_t>(i)] == b[static_cast<size_t>(i)]);
    }
}

TEST_CASE("softmax basics") {
    std::vector<float> v{0.0f, 0.0f};
    kernels::softmax_inplace(v.data(), 2);
    CHECK(v[0] == doctest::Approx(0.5));
    CHECK(v[1] == doctest::Approx(0.5));

    // shift invariance
    std::vector<float> a{1.0f, 2.0f, 3.0f};
    std::vector<float> b{1.0f + 7.5f, 2.0f + 7.5f, 3.0f + 7.5f};
    kernels::softmax_inplace(a.data(), 3);
    kernels::softmax_inplace(b.data(), 3);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]) < 1e-9);

    // hand-evaluated [1,2,3]
    CHECK(a[0] == doctest::Approx(0.09003).epsilon(1e-3));
    CHECK(a[1] == doctest::Approx(0.24473).epsilon(1e-3));
    CHECK(a[2] == doctest::Approx(0.66524).epsilon(1e-3));
}

TEST_CASE("softmax normalizes random vectors") {
    SeqRng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = random_vec(rng, 100, 10.0f);
        kernels::softmax_inplace(v.data(), 100);
        double sum = 0.0;
        for (float x : v) {
            CHECK(x >= 0.0f);
            sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("rmsnorm matches scalar formula") {
    SeqRng rng(3);
    const int n = 24;
    auto x = random_vec(rng, n);
    auto g = random_vec(rng, n, 2.0f);
    std::vector<float> out(static_cast<size_t>(n));
    const float eps = 1e-5f;
    kernels::rmsnorm(x.data(), g.data(), n, eps, out.data());
    double ss = 0.0;
    for (float v : x) ss += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(ss / n + eps);
    for (int i = 0; i < n; ++i)
        CHECK(out[static_cast<size_t>(i)] ==
              doctest::Approx(g[static_cast<size_t>(i)] * x[static_cast<size_t>(i)] * inv).epsilon(1e-5));
}

TEST_CASE("rope is invertible and position 0 is identity") {
    SeqRng rng(4);
    auto v = random_vec(rng, 16);
    auto orig = v;
    kernels::rope_inplace(v.data(), 2, 8, 0);
    for (size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(orig[i]));

    kernels::rope_inplace(v.data(), 2, 8, 37);
    kernels::rope_inverse_inplace(v.data(), 2, 8, 37);
    for (size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(orig[i]).epsilon(1e-5));
}

TEST_CASE("rope preserves norm") {
    SeqRng rng(5);
    auto v = random_vec(rng, 32);
    double before = 0.0;
    for (float x : v) before += static_cast<double>(x) * x;
    kernels::rope_inplace(v.data(), 4, 8, 111);
    double after = 0.0;
    for (float x : v) after += static_cast<double>(x) * x;
    CHECK(after == doctest::Approx(before).epsilon(1e-5));
}

TEST_CASE("attention matches serial reference and handles empty past") {
    SeqRng rng(6);
    const int heads = 4, dh = 8, dim = heads * dh;
    for (int count : {0, 1, 5, 40}) {
        auto q = random_vec(rng, dim);
        auto kp = random_vec(rng, count * dim);
        auto vp = random_vec(rng, count * dim);
        auto kc = random_vec(rng, dim);
        auto vc = random_vec(rng, dim);
        std::vector<float> a(static_cast<size_t>(dim)), b(static_cast<size_t>(dim));
        kernels::attention(q.data(), kp.data(), vp.data(), count, kc.data(), vc.data(), heads, dh, a.data());
        kernels::serial::attention(q.data(), kp.data(), vp.data(), count, kc.data(), vc.data(), heads, dh,
                                   b.data());
        for (int i = 0; i < dim; ++i) CHECK(a[static_cast<size_t>(i)] == b[static_cast<size_t>(i)]);
        for (int i = 0; i < dim; ++i) CHECK(std::isfinite(a[static_cast<size_t>(i)]));
    }
}

TEST_CASE("attention with no past reduces to v of self") {
    // softmax over a single score is 1, so the context is exactly v_cur
    SeqRng rng(7);
    const int heads = 2, dh = 4, dim = 8;
    auto q = random_vec(rng, dim);
    auto kc = random_vec(rng, dim);
    auto vc = random_vec(rng, dim);
    std::vector<float> out(static_cast<size_t>(dim));
    kernels::attention(q.data(), nullptr, nullptr, 0, kc.data(), vc.data(), heads, dh, out.data());
    for (int i = 0; i < dim; ++i) CHECK(out[static_cast<size_t>(i)] == doctest::Approx(vc[static_cast<size_t>(i)]));
}
