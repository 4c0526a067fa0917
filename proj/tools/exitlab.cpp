// Command-line surface for the early-exit experiment engine.
//
// Subcommands:
//   train            corpus + regime + settings -> model file (+ manifest)
//   decode           model + prompts + gate + kv policy -> text + trace files
//   measure-optimal  model + prompts -> traces with optimal exits + exit stats
//   gate-search      model + eval prompts + gate family -> best-threshold report
//   analyze          trace files -> exit statistics reports
//   similarity       model + prompt -> cosine / JSD matrices as dense CSV
//   trace-sublayers  model + prompt + k -> per-sub-layer top-k projections
//   compare-joint    two models + shared settings -> paired directional report

#include <cmath>
#include <cstdio>
#include <map>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "exitlab/analysis.hpp"
#include "exitlab/decoder.hpp"
#include "exitlab/errors.hpp"
#include "exitlab/gating.hpp"
#include "exitlab/io.hpp"
#include "exitlab/model.hpp"
#include "exitlab/trainer.hpp"

using namespace exitlab;
using nlohmann::json;

namespace {

struct GateOpts {
    std::string family = "confidence";
    double tau = 0.9;
    int patience = 1;

    GateKind to_gate() const {
        GateKind g;
        g.family = gate_family_from_string(family);
        g.tau = tau;
        g.patience = patience;
        return g;
    }
};

struct SamplerOpts {
    std::string kind = "greedy";
    int k = 10;
    float temperature = 1.0f;
    uint64_t seed = 0;

    Sampler to_sampler() const {
        Sampler s;
        if (kind == "greedy") {
            s.kind = Sampler::Kind::Greedy;
        } else if (kind == "top-k") {
            s.kind = Sampler::Kind::TopK;
        } else {
            throw ConfigError("unknown sampler: " + kind);
        }
        s.k = k;
        s.temperature = temperature;
        s.seed = seed;
        return s;
    }
};

std::vector<std::vector<int>> load_prompt_tokens(const std::string& path) {
    std::vector<std::vector<int>> out;
    for (const auto& line : read_prompt_lines(path)) out.push_back(tokenize(line).ids);
    if (out.empty()) throw ConfigError("no prompts in " + path);
    return out;
}

std::string settings_manifest(const DecodeSettings& s, const std::string& model_hash,
                              const std::string& prompt_hash) {
    json j;
    j["gate"] = to_string(s.gate.family);
    j["tau"] = s.gate.tau;
    j["patience"] = s.gate.patience;
    j["kv_policy"] = to_string(s.kv_policy);
    j["max_new_tokens"] = s.max_new_tokens;
    j["warmup_tokens"] = s.warmup_tokens;
    j["sampler"] = s.sampler.kind == Sampler::Kind::Greedy ? "greedy" : "top-k";
    j["sampler_k"] = s.sampler.k;
    j["temperature"] = s.sampler.temperature;
    j["model_hash"] = model_hash;
    j["prompt_hash"] = prompt_hash;
    return j.dump();
}

void write_trace_file(const std::string& path, const LoadedModel& m, const DecodeSettings& s,
                      const std::string& prompt_hash, const DecodeResult& r) {
    TraceFileHeader h;
    h.model_hash = m.body_checksum_hex;
    h.settings_json = settings_manifest(s, m.body_checksum_hex, prompt_hash);
    h.seed = s.sampler.seed;
    h.n_layers = m.config.n_layers;
    store_traces(path, h, r.traces);
}

std::string indexed_path(const std::string& base, size_t i, size_t total) {
    if (total == 1) return base;
    const auto dot = base.rfind('.');
    if (dot == std::string::npos) return base + "." + std::to_string(i);
    return base.substr(0, dot) + "." + std::to_string(i) + base.substr(dot);
}

void write_matrix_csv(const std::string& path, const std::vector<std::vector<double>>& m, int first_index) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "layer";
    for (size_t j = 0; j < m.size(); ++j) f << ',' << (first_index + static_cast<int>(j));
    f << "\n";
    for (size_t i = 0; i < m.size(); ++i) {
        f << (first_index + static_cast<int>(i));
        for (size_t j = 0; j < m[i].size(); ++j) f << ',' << format_g6(m[i][j]);
        f << "\n";
    }
}

// --- train -------------------------------------------------------------------

int cmd_train(const std::string& corpus_path, const std::string& regime, int steps, int batch_size,
              int seq_len, float lr, uint64_t seed, int n_layers, int d_model, int n_heads, int d_ffn,
              int max_seq_len, const std::string& out_path) {
    ModelConfig cfg;
    cfg.n_layers = n_layers;
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.d_head = d_model / n_heads;
    cfg.d_ffn = d_ffn;
    cfg.vocab_size = kVocabSize;
    cfg.max_seq_len = max_seq_len;
    cfg.seed = seed;
    validate_config(cfg);

    const std::string corpus_text = read_text_file(corpus_path);
    const auto corpus = tokenize(corpus_text).ids;

    TrainSettings s;
    s.regime = train_regime_from_string(regime);
    s.steps = steps;
    s.batch_size = batch_size;
    s.seq_len = seq_len;
    s.learning_rate = lr;
    s.seed = seed;
    s.validate(cfg);

    auto res = train_run(cfg, corpus, s);
    store_model(res.weights, cfg, out_path);

    json manifest;
    manifest["regime"] = regime;
    manifest["steps"] = steps;
    manifest["batch_size"] = batch_size;
    manifest["seq_len"] = seq_len;
    manifest["learning_rate"] = lr;
    manifest["seed"] = seed;
    manifest["corpus_hash"] = file_hash_hex(corpus_path);
    manifest["model_hash"] = file_hash_hex(out_path);
    manifest["final_step"] = res.loss_curve.empty() ? 0 : res.loss_curve.back().first;
    manifest["final_loss"] = res.loss_curve.empty() ? 0.0 : res.loss_curve.back().second;
    std::ofstream mf(out_path + ".manifest.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";

    std::printf("trained %s model: %d steps, final loss %s -> %s\n", regime.c_str(), steps,
                format_g6(manifest["final_loss"].get<double>()).c_str(), out_path.c_str());
    return 0;
}

// --- decode ------------------------------------------------------------------

int cmd_decode(const std::string& model_path, const std::string& prompt_path, const GateOpts& gate,
               const std::string& kv_policy, const SamplerOpts& sampler, int max_new_tokens, int warmup,
               const std::string& trace_out, const std::string& text_out) {
    auto m = load_model(model_path);
    auto prompts = load_prompt_tokens(prompt_path);
    const std::string prompt_hash = file_hash_hex(prompt_path);

    DecodeSettings s;
    s.max_new_tokens = max_new_tokens;
    s.warmup_tokens = warmup;
    s.gate = gate.to_gate();
    s.kv_policy = kv_policy_from_string(kv_policy);
    s.sampler = sampler.to_sampler();
    s.validate(m.config);

    std::ostream* out = &std::cout;
    std::ofstream file_out;
    if (!text_out.empty()) {
        file_out.open(text_out, std::ios::binary);
        if (!file_out) throw IoError("cannot open for writing: " + text_out);
        out = &file_out;
    }

    for (size_t i = 0; i < prompts.size(); ++i) {
        auto r = decode_early_exit(m.config, m.weights, prompts[i], s);
        (*out) << detokenize(r.tokens) << "\n";
        if (!trace_out.empty())
            write_trace_file(indexed_path(trace_out, i, prompts.size()), m, s, prompt_hash, r);
    }
    return 0;
}

// --- measure-optimal -----------------------------------------------------------

int cmd_measure_optimal(const std::string& model_path, const std::string& prompt_path, int max_new_tokens,
                        const std::string& trace_out, const std::string& report_path,
                        const std::string& format) {
    auto m = load_model(model_path);
    auto prompts = load_prompt_tokens(prompt_path);
    const std::string prompt_hash = file_hash_hex(prompt_path);
    const std::string provenance = m.body_checksum_hex + "+" + prompt_hash;

    DecodeSettings s;
    s.max_new_tokens = max_new_tokens;
    s.validate(m.config);

    std::vector<ExitTrace> all;
    for (size_t i = 0; i < prompts.size(); ++i) {
        auto r = decode_full(m.config, m.weights, prompts[i], s);
        if (!trace_out.empty())
            write_trace_file(indexed_path(trace_out, i, prompts.size()), m, s, prompt_hash, r);
        all.insert(all.end(), r.traces.begin(), r.traces.end());
    }

    auto stats = optimal_exit_stats(all, m.config.n_layers);
    std::vector<ReportRow> rows;
    rows.push_back({"measure-optimal", "max_layer", {static_cast<double>(stats.max_layer)}, "layers", provenance});
    rows.push_back({"measure-optimal", "avg_optimal_exit", {stats.avg_optimal_exit}, "layers", provenance});
    rows.push_back({"measure-optimal", "perc_early", {stats.perc_early * 100.0}, "percent", provenance});
    rows.push_back({"measure-optimal", "token_count", {static_cast<double>(stats.token_count)}, "tokens", provenance});
    emit_report(rows, format, report_path);
    std::printf("Max %d  Avg %s  Perc %s%%  (%d tokens)\n", stats.max_layer,
                format_g6(stats.avg_optimal_exit).c_str(), format_g6(stats.perc_early * 100.0).c_str(),
                stats.token_count);
    return 0;
}

// --- gate-search ----------------------------------------------------------------

int cmd_gate_search(const std::string& model_path, const std::string& eval_path, const std::string& family,
                    std::vector<double> grid, double floor, const std::string& kv_policy, int max_new_tokens,
                    const std::string& report_path, const std::string& format) {
    auto m = load_model(model_path);
    auto prompts = load_prompt_tokens(eval_path);
    const std::string provenance = m.body_checksum_hex + "+" + file_hash_hex(eval_path);

    const GateFamily fam = gate_family_from_string(family);
    if (grid.empty()) grid = default_grid(fam, m.config.n_layers);

    DecodeSettings base;
    base.max_new_tokens = max_new_tokens;
    base.kv_policy = kv_policy_from_string(kv_policy);

    auto best = threshold_search(m.config, m.weights, prompts, fam, grid, floor, base);

    std::vector<ReportRow> rows;
    rows.push_back({"gate-search", "family", {}, family, provenance});
    rows.push_back({"gate-search", "best_tau", {best.tau}, family == "patience" ? "layers" : "nats-or-prob", provenance});
    rows.push_back({"gate-search", "exact_match_rate", {best.metric}, "fraction", provenance});
    rows.push_back({"gate-search", "theoretical_speedup", {best.speedup}, "x", provenance});
    rows.push_back({"gate-search", "floor_met", {best.floor_met ? 1.0 : 0.0}, "bool", provenance});
    emit_report(rows, format, report_path);
    std::printf("%s gate: best tau %s, exact-match %s, speed-up %sx, floor %s\n", family.c_str(),
                format_g6(best.tau).c_str(), format_g6(best.metric).c_str(), format_g6(best.speedup).c_str(),
                best.floor_met ? "met" : "NOT met");
    return 0;
}

// --- analyze --------------------------------------------------------------------

int cmd_analyze(const std::vector<std::string>& trace_paths, int bucket_size,
                const std::string& report_path, const std::string& format) {
    std::vector<ExitTrace> all;
    std::vector<int> tokens;
    int n_layers = 0;
    std::string provenance;
    for (const auto& p : trace_paths) {
        auto t = load_traces(p);
        if (n_layers == 0) n_layers = t.header.n_layers;
        if (t.header.n_layers != n_layers) throw ConfigError("trace files disagree on layer count");
        for (const auto& tr : t.traces) tokens.push_back(tr.token);
        all.insert(all.end(), t.traces.begin(), t.traces.end());
        if (!provenance.empty()) provenance += "+";
        provenance += file_hash_hex(p);
    }
    if (all.empty()) throw ConfigError("no traces to analyze");

    std::vector<ReportRow> rows;
    const bool has_optimal = all.front().optimal_exit_layer.has_value();
    if (has_optimal) {
        auto stats = optimal_exit_stats(all, n_layers);
        rows.push_back({"exit-stats", "max_layer", {static_cast<double>(stats.max_layer)}, "layers", provenance});
        rows.push_back({"exit-stats", "avg_optimal_exit", {stats.avg_optimal_exit}, "layers", provenance});
        rows.push_back({"exit-stats", "perc_early", {stats.perc_early * 100.0}, "percent", provenance});

        std::vector<double> by_pos;
        for (const auto& [bucket, mean] : exit_vs_position(all, bucket_size)) {
            by_pos.push_back(static_cast<double>(bucket));
            by_pos.push_back(mean);
        }
        rows.push_back({"exit-vs-position", "bucket_start_and_mean", by_pos, "layers", provenance});

        auto sw = subword_exit_stats(all, true);
        if (sw.prefix)
            rows.push_back({"subword", "prefix_mean_exit_and_share", {sw.prefix->first, sw.prefix->second}, "layers;fraction", provenance});
        if (sw.suffix)
            rows.push_back({"subword", "suffix_mean_exit_and_share", {sw.suffix->first, sw.suffix->second}, "layers;fraction", provenance});
    }

    if (!all.front().layer_confidence.empty()) {
        auto curve = confidence_per_layer(all, n_layers);
        rows.push_back({"confidence", "mean_confidence_per_layer", curve, "probability", provenance});
        auto cross = confidence_crossing_layer(curve, 0.5);
        rows.push_back({"confidence", "crossing_layer_0.5",
                        {cross ? static_cast<double>(*cross) : -1.0}, "layer", provenance});
    }

    rows.push_back({"generation", "exit_layer_speedup",
                    {theoretical_speedup(all, n_layers)}, "x", provenance});
    rows.push_back({"generation", "repetition_rate_4gram", {repetition_rate(tokens)}, "fraction", provenance});
    emit_report(rows, format, report_path);
    std::printf("analyzed %zu traces from %zu file(s) -> %s\n", all.size(), trace_paths.size(),
                report_path.c_str());
    return 0;
}

// --- similarity -----------------------------------------------------------------

int cmd_similarity(const std::string& model_path, const std::string& prompt, const std::string& cosine_out,
                   const std::string& jsd_out) {
    auto m = load_model(model_path);
    auto ids = tokenize(prompt).ids;
    if (ids.empty()) throw ConfigError("empty prompt");
    if (static_cast<int>(ids.size()) > m.config.max_seq_len) throw ConfigError("prompt exceeds max_seq_len");

    KvCache cache(m.config, KvPolicy::FullCompute);
    PerLayerStates st;
    for (size_t i = 0; i < ids.size(); ++i)
        st = forward_all_layers(m.config, m.weights, ids[i], static_cast<int>(i), cache,
                                /*with_logits=*/i + 1 == ids.size());

    auto mats = similarity_matrices(st);
    write_matrix_csv(cosine_out, mats.cosine, 0); // row/col 0 is the embedding
    write_matrix_csv(jsd_out, mats.jsd, 1);
    std::printf("similarity matrices for %zu layers -> %s, %s\n", mats.jsd.size(), cosine_out.c_str(),
                jsd_out.c_str());
    return 0;
}

// --- trace-sublayers --------------------------------------------------------------

int cmd_trace_sublayers(const std::string& model_path, const std::string& prompt, int k, bool identity,
                        const std::string& out_path) {
    auto m = load_model(model_path);
    auto ids = tokenize(prompt).ids;
    if (ids.empty()) throw ConfigError("empty prompt");
    if (static_cast<int>(ids.size()) > m.config.max_seq_len) throw ConfigError("prompt exceeds max_seq_len");

    KvCache cache(m.config, KvPolicy::FullCompute);
    PerLayerStates st;
    for (size_t i = 0; i < ids.size(); ++i)
        st = forward_all_layers(m.config, m.weights, ids[i], static_cast<int>(i), cache,
                                /*with_logits=*/i + 1 == ids.size());

    auto tr = sublayer_topk(m.config, m.weights, st, k, identity);
    json j;
    j["identity_mode"] = tr.identity_mode;
    j["model_hash"] = m.body_checksum_hex;
    j["k"] = k;
    auto entries = [](const std::vector<TopEntry>& v) {
        json arr = json::array();
        for (const auto& e : v) arr.push_back({{"token", e.token}, {"value", format_g6(e.prob)}});
        return arr;
    };
    j["layers"] = json::array();
    for (size_t l = 0; l < tr.layers.size(); ++l) {
        const auto& taps = tr.layers[l];
        j["layers"].push_back({{"layer", l + 1},
                               {"block_out", entries(taps.block_out)},
                               {"skip", entries(taps.skip)},
                               {"ffn", entries(taps.ffn_module)},
                               {"attn", entries(taps.attn_module)}});
    }
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + out_path);
    f << j.dump(2) << "\n";
    std::printf("sub-layer top-%d projections for %zu layers -> %s\n", k, tr.layers.size(), out_path.c_str());
    return 0;
}

// --- compare-joint -----------------------------------------------------------------

int cmd_compare_joint(const std::string& model_a, const std::string& model_b, const std::string& prompt_path,
                      double floor, int max_new_tokens, int long_tokens, int warmup, double rep_tau,
                      uint64_t sampler_seed, const std::string& report_path, const std::string& format) {
    auto a = load_model(model_a); // standard-trained
    auto b = load_model(model_b); // joint-trained
    if (a.config.n_layers != b.config.n_layers) throw ConfigError("models disagree on layer count");
    auto prompts = load_prompt_tokens(prompt_path);
    const std::string provenance =
        a.body_checksum_hex + "+" + b.body_checksum_hex + "+" + file_hash_hex(prompt_path);
    const int n_layers = a.config.n_layers;

    struct Side {
        double crossing = -1.0;
        double gate_dist = 0.0;
        double best_tau = 0.0;
        double repetition = 0.0;
    };
    // Confidence curve and gate distances come from teacher-forced traces over
    // the prompt lines: free-running toy generations drift into repetitive
    // text that makes every layer look confident, masking the difference
    // between the two regimes.
    auto eval_side = [&](const LoadedModel& m) {
        Side side;
        std::vector<ExitTrace> all;
        for (const auto& p : prompts) {
            auto t = trace_forced(m.config, m.weights, p);
            all.insert(all.end(), t.begin(), t.end());
        }
        auto curve = confidence_per_layer(all, n_layers);
        auto cross = confidence_crossing_layer(curve, 0.5);
        side.crossing = cross ? static_cast<double>(*cross) : static_cast<double>(n_layers + 1);

        DecodeSettings base;
        base.max_new_tokens = max_new_tokens;
        auto best = threshold_search(m.config, m.weights, prompts,
                                     GateFamily::Confidence, default_grid(GateFamily::Confidence, n_layers),
                                     floor, base);
        side.best_tau = best.tau;

        double dist = 0.0;
        for (const auto& t : all) {
            int g = n_layers;
            for (int l = 0; l < n_layers; ++l)
                if (t.layer_confidence[static_cast<size_t>(l)] > best.tau) {
                    g = l + 1;
                    break;
                }
            dist += std::abs(g - *t.optimal_exit_layer);
        }
        side.gate_dist = dist / static_cast<double>(all.size());

        // Long sampled generations under the approximate Recompute policy use
        // the same threshold and sampler seed for both sides.
        DecodeSettings rec;
        rec.max_new_tokens = long_tokens;
        rec.kv_policy = KvPolicy::Recompute;
        rec.warmup_tokens = warmup;
        rec.gate.family = GateFamily::Confidence;
        rec.gate.tau = rep_tau;
        rec.sampler.kind = Sampler::Kind::TopK;
        rec.sampler.k = 5;
        rec.sampler.seed = sampler_seed;
        long dup = 0, total = 0;
        for (const auto& p : prompts) {
            auto run = decode_early_exit(m.config, m.weights, p, rec);
            std::map<std::vector<int>, int> seen;
            for (size_t j = 0; j + 4 <= run.tokens.size(); ++j) {
                std::vector<int> gram(run.tokens.begin() + static_cast<long>(j),
                                      run.tokens.begin() + static_cast<long>(j) + 4);
                if (seen[gram]++ > 0) ++dup;
                ++total;
            }
        }
        side.repetition = total > 0 ? static_cast<double>(dup) / static_cast<double>(total) : 0.0;
        return side;
    };

    const Side sa = eval_side(a);
    const Side sb = eval_side(b);

    std::vector<ReportRow> rows;
    rows.push_back({"compare-joint", "confidence_crossing_layer", {sa.crossing, sb.crossing}, "layer(std;joint)", provenance});
    rows.push_back({"compare-joint", "searched_tau", {sa.best_tau, sb.best_tau}, "prob(std;joint)", provenance});
    rows.push_back({"compare-joint", "mean_abs_gate_minus_optimal", {sa.gate_dist, sb.gate_dist}, "layers(std;joint)", provenance});
    rows.push_back({"compare-joint", "recompute_repetition_rate", {sa.repetition, sb.repetition}, "fraction(std;joint)", provenance});
    rows.push_back({"compare-joint", "joint_crosses_earlier", {sb.crossing < sa.crossing ? 1.0 : 0.0}, "bool", provenance});
    rows.push_back({"compare-joint", "joint_gate_closer_to_optimal", {sb.gate_dist < sa.gate_dist ? 1.0 : 0.0}, "bool", provenance});
    rows.push_back({"compare-joint", "joint_repeats_more_under_recompute", {sb.repetition > sa.repetition ? 1.0 : 0.0}, "bool", provenance});
    emit_report(rows, format, report_path);
    std::printf("crossing std %s vs joint %s | gate-dist std %s vs joint %s | recompute repetition std %s vs joint %s\n",
                format_g6(sa.crossing).c_str(), format_g6(sb.crossing).c_str(), format_g6(sa.gate_dist).c_str(),
                format_g6(sb.gate_dist).c_str(), format_g6(sa.repetition).c_str(), format_g6(sb.repetition).c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    init_threads_from_env();
    CLI::App app{"early-exit transformer experiment engine"};
    app.require_subcommand(1);

    // train
    std::string corpus, regime = "standard", out = "model.bin";
    int steps = 400, batch_size = 8, seq_len = 64;
    float lr = 1e-3f;
    uint64_t seed = 0;
    int n_layers = 8, d_model = 64, n_heads = 4, d_ffn = 128, max_seq_len = 512;
    auto* t = app.add_subcommand("train", "train a model on a byte-level corpus");
    t->add_option("--corpus", corpus, "text corpus file")->required();
    t->add_option("--regime", regime, "standard|joint");
    t->add_option("--steps", steps);
    t->add_option("--batch-size", batch_size);
    t->add_option("--seq-len", seq_len);
    t->add_option("--lr", lr);
    t->add_option("--seed", seed);
    t->add_option("--layers", n_layers);
    t->add_option("--d-model", d_model);
    t->add_option("--heads", n_heads);
    t->add_option("--d-ffn", d_ffn);
    t->add_option("--max-seq", max_seq_len);
    t->add_option("--out", out, "output model file");

    // shared decode-ish options
    std::string model_path, prompt_path, trace_out, text_out, report = "report.csv", format = "csv";
    GateOpts gate;
    SamplerOpts sampler;
    std::string kv_policy = "full-compute";
    int max_new_tokens = 64, warmup = 0;

    auto* d = app.add_subcommand("decode", "generate with a gate and kv policy");
    d->add_option("--model", model_path)->required();
    d->add_option("--prompts", prompt_path, "one prompt per line")->required();
    d->add_option("--gate", gate.family, "confidence|entropy|patience|ideal");
    d->add_option("--tau", gate.tau);
    d->add_option("--patience", gate.patience);
    d->add_option("--kv-policy", kv_policy, "full-compute|copy-lower|recompute");
    d->add_option("--sampler", sampler.kind, "greedy|top-k");
    d->add_option("--k", sampler.k);
    d->add_option("--temperature", sampler.temperature);
    d->add_option("--seed", sampler.seed);
    d->add_option("--max-new-tokens", max_new_tokens);
    d->add_option("--warmup", warmup);
    d->add_option("--trace-out", trace_out, "trace file (indexed when several prompts)");
    d->add_option("--text-out", text_out, "generated text file (default stdout)");

    auto* mo = app.add_subcommand("measure-optimal", "full decoding with optimal exit layers");
    mo->add_option("--model", model_path)->required();
    mo->add_option("--prompts", prompt_path)->required();
    mo->add_option("--max-new-tokens", max_new_tokens);
    mo->add_option("--trace-out", trace_out);
    mo->add_option("--report", report);
    mo->add_option("--format", format, "csv|json");

    std::string family = "confidence";
    std::vector<double> grid;
    double floor = 0.98;
    auto* gs = app.add_subcommand("gate-search", "grid-search a gate threshold");
    gs->add_option("--model", model_path)->required();
    gs->add_option("--eval", prompt_path, "eval prompts, one per line")->required();
    gs->add_option("--family", family, "confidence|entropy|patience");
    gs->add_option("--grid", grid, "threshold grid (default: built-in)");
    gs->add_option("--floor", floor, "quality floor on exact-match rate");
    gs->add_option("--kv-policy", kv_policy);
    gs->add_option("--max-new-tokens", max_new_tokens);
    gs->add_option("--report", report);
    gs->add_option("--format", format);

    std::vector<std::string> trace_paths;
    int bucket_size = 16;
    auto* an = app.add_subcommand("analyze", "aggregate statistics from trace files");
    an->add_option("--traces", trace_paths, "trace files")->required();
    an->add_option("--bucket-size", bucket_size);
    an->add_option("--report", report);
    an->add_option("--format", format);

    std::string prompt_text, cosine_out = "cosine.csv", jsd_out = "jsd.csv";
    auto* si = app.add_subcommand("similarity", "layer state / distribution similarity matrices");
    si->add_option("--model", model_path)->required();
    si->add_option("--prompt", prompt_text)->required();
    si->add_option("--cosine-out", cosine_out);
    si->add_option("--jsd-out", jsd_out);

    int topk = 5;
    bool identity = false;
    std::string sub_out = "sublayers.json";
    auto* ts = app.add_subcommand("trace-sublayers", "per-sub-layer top-k vocabulary projections");
    ts->add_option("--model", model_path)->required();
    ts->add_option("--prompt", prompt_text)->required();
    ts->add_option("--k", topk);
    ts->add_flag("--identity", identity, "skip the final norm so logits are additive");
    ts->add_option("--out", sub_out);

    std::string model_b;
    int long_tokens = 256;
    int cj_warmup = 4;
    double rep_tau = 0.6;
    uint64_t cj_sampler_seed = 9;
    auto* cj = app.add_subcommand("compare-joint", "paired directional comparison of two models");
    cj->add_option("--model-standard", model_path)->required();
    cj->add_option("--model-joint", model_b)->required();
    cj->add_option("--prompts", prompt_path)->required();
    cj->add_option("--floor", floor);
    cj->add_option("--max-new-tokens", max_new_tokens);
    cj->add_option("--long-tokens", long_tokens);
    cj->add_option("--warmup", cj_warmup);
    cj->add_option("--rep-tau", rep_tau, "shared confidence threshold for the long runs");
    cj->add_option("--sampler-seed", cj_sampler_seed);
    cj->add_option("--report", report);
    cj->add_option("--format", format);

    CLI11_PARSE(app, argc, argv);

    try {
        if (t->parsed())
            return cmd_train(corpus, regime, steps, batch_size, seq_len, lr, seed, n_layers, d_model,
                             n_heads, d_ffn, max_seq_len, out);
        if (d->parsed())
            return cmd_decode(model_path, prompt_path, gate, kv_policy, sampler, max_new_tokens, warmup,
                              trace_out, text_out);
        if (mo->parsed())
            return cmd_measure_optimal(model_path, prompt_path, max_new_tokens, trace_out, report, format);
        if (gs->parsed())
            return cmd_gate_search(model_path, prompt_path, family, grid, floor, kv_policy, max_new_tokens,
                                   report, format);
        if (an->parsed()) return cmd_analyze(trace_paths, bucket_size, report, format);
        if (si->parsed()) return cmd_similarity(model_path, prompt_text, cosine_out, jsd_out);
        if (ts->parsed()) return cmd_trace_sublayers(model_path, prompt_text, topk, identity, sub_out);
        if (cj->parsed())
            return cmd_compare_joint(model_path, model_b, prompt_path, floor, max_new_tokens, long_tokens,
                                     cj_warmup, rep_tau, cj_sampler_seed, report, format);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
