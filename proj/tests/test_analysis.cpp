#include "doctest.h"

#include <cmath>

#include "exitlab/analysis.hpp"
#include "exitlab/errors.hpp"
#include "exitlab/kv_cache.hpp"
#include "exitlab/model.hpp"
#include "helpers.hpp"

using namespace exitlab;

namespace {

ExitTrace trace_with(int position, int token, int exit_layer, int optimal, bool prefix = false) {
    ExitTrace t;
    t.position = position;
    t.token = token;
    t.exit_layer = exit_layer;
    t.optimal_exit_layer = optimal;
    t.is_word_prefix = prefix;
    return t;
}

} // namespace

TEST_CASE("optimal exit stats arithmetic") {
    std::vector<ExitTrace> traces{trace_with(0, 1, 4, 4), trace_with(1, 2, 4, 2), trace_with(2, 3, 4, 3)};
    auto s = optimal_exit_stats(traces, 4);
    CHECK(s.max_layer == 4);
    CHECK(s.token_count == 3);
    CHECK(s.avg_optimal_exit == doctest::Approx(3.0));
    CHECK(s.perc_early == doctest::Approx(2.0 / 3.0));

    traces[0].optimal_exit_layer.reset();
    CHECK_THROWS_AS(optimal_exit_stats(traces, 4), ConfigError);
    CHECK_THROWS_AS(optimal_exit_stats({}, 4), ConfigError);
}

TEST_CASE("exit-versus-position bucketing omits empty buckets") {
    std::vector<ExitTrace> traces{trace_with(0, 1, 4, 2), trace_with(1, 2, 4, 4), trace_with(9, 3, 4, 3)};
    auto buckets = exit_vs_position(traces, 4);
    REQUIRE(buckets.size() == 2);
    CHECK(buckets[0].first == 0);
    CHECK(buckets[0].second == doctest::Approx(3.0));
    CHECK(buckets[1].first == 8);
    CHECK(buckets[1].second == doctest::Approx(3.0));
    CHECK_THROWS_AS(exit_vs_position(traces, 0), ConfigError);
}

TEST_CASE("confidence curve and crossing layer") {
    std::vector<ExitTrace> traces(2);
    traces[0].layer_confidence = {0.2f, 0.4f, 0.8f};
    traces[1].layer_confidence = {0.4f, 0.6f, 0.9f};
    auto curve = confidence_per_layer(traces, 3);
    CHECK(curve[0] == doctest::Approx(0.3));
    CHECK(curve[1] == doctest::Approx(0.5));
    CHECK(curve[2] == doctest::Approx(0.85));

    auto cross = confidence_crossing_layer(curve, 0.45);
    REQUIRE(cross.has_value());
    CHECK(*cross == 2);
    CHECK_FALSE(confidence_crossing_layer(curve, 0.95).has_value());
}

TEST_CASE("gate distance aligns until the first token mismatch") {
    std::vector<ExitTrace> full{trace_with(0, 5, 4, 2), trace_with(1, 6, 4, 3), trace_with(2, 7, 4, 4),
                                trace_with(3, 8, 4, 1)};
    std::vector<ExitTrace> gate{trace_with(0, 5, 3, 0), trace_with(1, 6, 1, 0), trace_with(2, 9, 4, 0),
                                trace_with(3, 8, 2, 0)};
    auto d = gate_distance(full, gate);
    CHECK(d.aligned_tokens == 2);
    CHECK(d.excluded_fraction == doctest::Approx(0.5));
    // diffs: 3-2 = +1, 1-3 = -2
    CHECK(d.mean_abs == doctest::Approx(1.5));
    CHECK(d.mean_signed == doctest::Approx(-0.5));

    gate[0].token = 99;
    CHECK_THROWS_AS(gate_distance(full, gate), ConfigError);
}

TEST_CASE("js divergence closed forms and bounds") {
    std::vector<float> p{1.0f, 0.0f}, q{0.0f, 1.0f};
    CHECK(js_divergence(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-6)); // disjoint support
    CHECK(js_divergence(p, p) == doctest::Approx(0.0));

    // symmetric and bounded on random pairs
    SeqRng rng(61);
    for (int trial = 0; trial < 200; ++trial) {
        auto a = testutil::random_dist(rng, 12);
        auto b = testutil::random_dist(rng, 12);
        const double ab = js_divergence(a, b);
        CHECK(ab == doctest::Approx(js_divergence(b, a)).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(ab <= std::log(2.0) + 1e-9);
    }
    CHECK_THROWS_AS(js_divergence(p, {0.5f}), ConfigError);
}

TEST_CASE("cosine similarity basics") {
    CHECK(cosine_similarity({1.0f, 0.0f}, {0.0f, 1.0f}) == doctest::Approx(0.0));
    CHECK(cosine_similarity({1.0f, 2.0f}, {2.0f, 4.0f}) == doctest::Approx(1.0));
    CHECK(cosine_similarity({1.0f, 0.0f}, {-3.0f, 0.0f}) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(cosine_similarity({0.0f, 0.0f}, {1.0f, 0.0f}), ConfigError);
}

TEST_CASE("similarity matrices are symmetric with unit diagonals") {
    auto cfg = testutil::micro_config(3, 8, 2, 16, 16);
    auto w = init_model(cfg);
    KvCache cache(cfg, KvPolicy::FullCompute);
    auto st = forward_all_layers(cfg, w, 3, 0, cache, /*with_logits=*/true);

    auto m = similarity_matrices(st);
    REQUIRE(m.cosine.size() == 4);
    REQUIRE(m.jsd.size() == 3);
    for (size_t i = 0; i < m.cosine.size(); ++i) {
        CHECK(m.cosine[i][i] == doctest::Approx(1.0));
        for (size_t j = 0; j < m.cosine.size(); ++j) {
            CHECK(m.cosine[i][j] == m.cosine[j][i]);
            CHECK(std::abs(m.cosine[i][j]) <= 1.0 + 1e-9);
        }
    }
    for (size_t i = 0; i < m.jsd.size(); ++i) {
        CHECK(m.jsd[i][i] == 0.0);
        for (size_t j = 0; j < m.jsd.size(); ++j) {
            CHECK(m.jsd[i][j] == m.jsd[j][i]);
            CHECK(m.jsd[i][j] >= 0.0);
        }
    }
    // cross-check one entry against the standalone functions
    CHECK(m.cosine[0][2] == doctest::Approx(cosine_similarity(st.h_in, st.h_out[1])));
    CHECK(m.jsd[0][2] == doctest::Approx(js_divergence(st.dists[0], st.dists[2])));
}

TEST_CASE("subword stats split by word-prefix flag") {
    std::vector<ExitTrace> traces{trace_with(0, 1, 9, 2, true), trace_with(1, 2, 9, 4, true),
                                  trace_with(2, 3, 9, 6, false)};
    auto s = subword_exit_stats(traces, /*use_optimal=*/true);
    REQUIRE(s.prefix.has_value());
    REQUIRE(s.suffix.has_value());
    CHECK(s.prefix->first == doctest::Approx(3.0));
    CHECK(s.prefix->second == doctest::Approx(2.0 / 3.0));
    CHECK(s.suffix->first == doctest::Approx(6.0));
    CHECK(s.suffix->second == doctest::Approx(1.0 / 3.0));

    auto g = subword_exit_stats(traces, /*use_optimal=*/false);
    CHECK(g.prefix->first == doctest::Approx(9.0));

    std::vector<ExitTrace> all_prefix{trace_with(0, 1, 9, 2, true)};
    auto p = subword_exit_stats(all_prefix);
    CHECK(p.prefix.has_value());
    CHECK_FALSE(p.suffix.has_value());
}

TEST_CASE("sub-layer projections in identity mode are additive") {
    // With the final norm skipped, the shared head is linear, so the logits
    // of a block output decompose exactly into module plus skip logits.
    auto cfg = testutil::micro_config(3, 8, 2, 16, 16);
    auto w = init_model(cfg);
    KvCache cache(cfg, KvPolicy::FullCompute);
    auto st = forward_all_layers(cfg, w, 5, 0, cache, /*with_logits=*/true);

    for (int l = 0; l < cfg.n_layers; ++l) {
        auto z_out = project_logits_identity(cfg, w, st.h_out[static_cast<size_t>(l)]);
        auto z_skip = project_logits_identity(cfg, w, st.h_attn[static_cast<size_t>(l)]);
        auto z_ffn = project_logits_identity(cfg, w, st.ffn_out[static_cast<size_t>(l)]);
        for (size_t i = 0; i < z_out.size(); ++i)
            CHECK(std::abs(z_out[i] - (z_skip[i] + z_ffn[i])) < 1e-5);

        // attention sub-layer: h_attn = attn_out + h_prev
        const auto& h_prev = l == 0 ? st.h_in : st.h_out[static_cast<size_t>(l - 1)];
        auto z_prev = project_logits_identity(cfg, w, h_prev);
        auto z_attn = project_logits_identity(cfg, w, st.attn_out[static_cast<size_t>(l)]);
        for (size_t i = 0; i < z_skip.size(); ++i)
            CHECK(std::abs(z_skip[i] - (z_prev[i] + z_attn[i])) < 1e-5);
    }
}

TEST_CASE("sub-layer top-k agrees with a direct projection") {
    auto cfg = testutil::micro_config(2, 8, 2, 16, 16);
    auto w = init_model(cfg);
    KvCache cache(cfg, KvPolicy::FullCompute);
    auto st = forward_all_layers(cfg, w, 2, 0, cache, /*with_logits=*/true);

    auto tr = sublayer_topk(cfg, w, st, 3, /*identity_mode=*/true);
    REQUIRE(tr.layers.size() == 2);
    for (int l = 0; l < 2; ++l) {
        const auto& taps = tr.layers[static_cast<size_t>(l)];
        REQUIRE(taps.block_out.size() == 3);
        auto z = project_logits_identity(cfg, w, st.h_out[static_cast<size_t>(l)]);
        // the reported top entry really is the max logit
        float mx = z[0];
        for (float v : z) mx = std::max(mx, v);
        CHECK(taps.block_out[0].prob == doctest::Approx(mx));
        // descending order
        CHECK(taps.block_out[0].prob >= taps.block_out[1].prob);
        CHECK(taps.block_out[1].prob >= taps.block_out[2].prob);
    }

    auto pr = sublayer_topk(cfg, w, st, 3, /*identity_mode=*/false);
    CHECK_FALSE(pr.identity_mode);
    for (const auto& taps : pr.layers)
        for (const auto& e : taps.block_out) CHECK(e.prob <= 1.0f);
}

TEST_CASE("repetition rate counts duplicated n-grams") {
    // tokens 1 2 3 4 1 2 3 4: 4-grams are 1234,2341,3412,4123,1234 -> 1 of 5 duplicated
    CHECK(repetition_rate({1, 2, 3, 4, 1, 2, 3, 4}) == doctest::Approx(0.2));
    CHECK(repetition_rate({7, 7, 7, 7, 7, 7, 7, 7}) == doctest::Approx(4.0 / 5.0));
    CHECK(repetition_rate({1, 2, 3, 4}) == doctest::Approx(0.0)); // single 4-gram
    CHECK(repetition_rate({1, 2}) == doctest::Approx(0.0));
    CHECK(repetition_rate({1, 1, 1, 1}, 2) == doctest::Approx(2.0 / 3.0));
}
