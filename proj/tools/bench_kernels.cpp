// Compares the OpenMP-parallel kernels against the serial reference
// implementations: correctness (bit-identical) and wall-clock timing.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "exitlab/io.hpp"
#include "exitlab/kernels.hpp"
#include "exitlab/kv_cache.hpp"
#include "exitlab/model.hpp"
#include "exitlab/rng.hpp"

using namespace exitlab;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int iters) {
    fn(); // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto dt = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
    return static_cast<double>(dt) / 1e6 / iters;
}

std::vector<float> random_vec(SeqRng& rng, size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.next_uniform()) - 0.5f;
    return v;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

} // namespace

int main() {
    init_threads_from_env();
    int threads = 1;
#ifdef _OPENMP
#pragma omp parallel
    {
#pragma omp single
        threads = omp_get_num_threads();
    }
#endif
    std::printf("threads: %d\n\n", threads);
    std::printf("%-28s %10s %10s %8s %s\n", "kernel", "parallel", "serial", "speedup", "bit-identical");

    SeqRng rng(1234);

    // matvec at head-projection scale
    {
        const int rows = 1024, cols = 1024;
        auto w = random_vec(rng, static_cast<size_t>(rows) * cols);
        auto x = random_vec(rng, cols);
        std::vector<float> yp(rows), ys(rows);
        const double tp = time_ms([&] { kernels::matvec(w.data(), rows, cols, x.data(), yp.data()); }, 50);
        const double ts = time_ms([&] { kernels::serial::matvec(w.data(), rows, cols, x.data(), ys.data()); }, 50);
        std::printf("%-28s %8.3fms %8.3fms %7.2fx %s\n", "matvec 1024x1024", tp, ts, ts / tp,
                    bitwise_equal(yp, ys) ? "yes" : "NO");
    }

    // attention with a long past
    {
        const int heads = 8, dh = 64, dim = heads * dh, count = 512;
        auto q = random_vec(rng, dim);
        auto kp = random_vec(rng, static_cast<size_t>(count) * dim);
        auto vp = random_vec(rng, static_cast<size_t>(count) * dim);
        auto kc = random_vec(rng, dim);
        auto vc = random_vec(rng, dim);
        std::vector<float> op(dim), os(dim);
        const double tp = time_ms(
            [&] { kernels::attention(q.data(), kp.data(), vp.data(), count, kc.data(), vc.data(), heads, dh, op.data()); }, 200);
        const double ts = time_ms(
            [&] { kernels::serial::attention(q.data(), kp.data(), vp.data(), count, kc.data(), vc.data(), heads, dh, os.data()); }, 200);
        std::printf("%-28s %8.3fms %8.3fms %7.2fx %s\n", "attention 8h x 512 past", tp, ts, ts / tp,
                    bitwise_equal(op, os) ? "yes" : "NO");
    }

    // full forward pass, parallel kernels vs serial path through the same model
    {
        ModelConfig cfg;
        cfg.n_layers = 8;
        cfg.d_model = 256;
        cfg.n_heads = 8;
        cfg.d_head = 32;
        cfg.d_ffn = 512;
        cfg.vocab_size = kVocabSize;
        cfg.max_seq_len = 128;
        cfg.seed = 7;
        auto w = init_model(cfg);
        KvCache cache(cfg, KvPolicy::FullCompute);
        for (int pos = 0; pos < 64; ++pos) forward_all_layers(cfg, w, pos % 200, pos, cache);

        const double tf = time_ms(
            [&] {
                KvCache c2(cfg, KvPolicy::FullCompute);
                for (int pos = 0; pos < 64; ++pos) forward_all_layers(cfg, w, pos % 200, pos, c2, pos == 63);
            },
            5);
        std::printf("%-28s %8.3fms %10s %8s %s\n", "forward 64 tokens (8L/256d)", tf, "-", "-", "-");
    }
    return 0;
}
