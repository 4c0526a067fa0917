#include "doctest.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "exitlab/errors.hpp"
#include "exitlab/io.hpp"
#include "exitlab/model.hpp"
#include "helpers.hpp"

#include "json.hpp"

using namespace exitlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("exitlab_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void corrupt_byte_at(const std::string& path, std::streamoff offset_from_end) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    REQUIRE(f.good());
    f.seekg(0, std::ios::end);
    const std::streamoff size = f.tellg();
    f.seekg(size - offset_from_end);
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x5a);
    f.seekp(size - offset_from_end);
    f.write(&c, 1);
}

} // namespace

TEST_CASE("tokenizer: byte ids and word-prefix flags") {
    auto t = tokenize("ab");
    REQUIRE(t.ids.size() == 2);
    CHECK(t.ids[0] == 'a');
    CHECK(t.ids[1] == 'b');
    CHECK(t.word_prefix[0]);
    CHECK_FALSE(t.word_prefix[1]);

    auto u = tokenize("a b");
    REQUIRE(u.ids.size() == 3);
    CHECK(u.word_prefix[0]);
    CHECK_FALSE(u.word_prefix[1]); // the space itself follows 'a'
    CHECK(u.word_prefix[2]);

    auto v = tokenize("x\ny\tz");
    CHECK(v.word_prefix[0]);
    CHECK(v.word_prefix[2]); // after newline
    CHECK(v.word_prefix[4]); // after tab

    CHECK(tokenize("").ids.empty());
}

TEST_CASE("tokenizer round-trips all byte values and drops markers") {
    std::string all;
    for (int i = 0; i < 256; ++i) all.push_back(static_cast<char>(i));
    auto t = tokenize(all);
    REQUIRE(t.ids.size() == 256);
    for (int i = 0; i < 256; ++i) CHECK(t.ids[static_cast<size_t>(i)] == i);
    CHECK(detokenize(t.ids) == all);

    std::vector<int> with_markers{kBos, 'h', 'i', kEos};
    CHECK(detokenize(with_markers) == "hi");
}

TEST_CASE("model file round-trip is bitwise exact") {
    TempDir tmp;
    auto cfg = testutil::micro_config(3, 8, 2, 16, 32);
    auto w = init_model(cfg);
    const std::string path = tmp.file("model.bin");
    store_model(w, cfg, path);

    auto m = load_model(path);
    CHECK(m.config.n_layers == cfg.n_layers);
    CHECK(m.config.d_model == cfg.d_model);
    CHECK(m.config.vocab_size == cfg.vocab_size);
    CHECK_FALSE(m.body_checksum_hex.empty());

    auto ta = tensor_list(w), tb = tensor_list(m.weights);
    REQUIRE(ta.size() == tb.size());
    for (size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i].name == tb[i].name);
        REQUIRE(ta[i].data->size() == tb[i].data->size());
        for (size_t j = 0; j < ta[i].data->size(); ++j) CHECK((*ta[i].data)[j] == (*tb[i].data)[j]);
    }

    // repeated stores are byte-identical
    const std::string path2 = tmp.file("model2.bin");
    store_model(w, cfg, path2);
    CHECK(read_text_file(path) == read_text_file(path2));
    CHECK(file_hash_hex(path) == file_hash_hex(path2));
}

TEST_CASE("a flipped body byte raises a checksum error") {
    TempDir tmp;
    auto cfg = testutil::micro_config();
    auto w = init_model(cfg);
    const std::string path = tmp.file("model.bin");
    store_model(w, cfg, path);
    corrupt_byte_at(path, 8); // inside the weight body
    CHECK_THROWS_AS(load_model(path), ChecksumError);
}

TEST_CASE("a truncated file raises a truncation error") {
    TempDir tmp;
    auto cfg = testutil::micro_config();
    auto w = init_model(cfg);
    const std::string path = tmp.file("model.bin");
    store_model(w, cfg, path);
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 100);
    CHECK_THROWS_AS(load_model(path), TruncatedError);
}

TEST_CASE("a bad magic raises a version error") {
    TempDir tmp;
    const std::string path = tmp.file("bogus.bin");
    std::ofstream(path, std::ios::binary) << "NOTAMODELFILE_____________";
    CHECK_THROWS_AS(load_model(path), VersionError);
}

TEST_CASE("a manifest that disagrees with the header config is rejected") {
    TempDir tmp;
    auto cfg = testutil::micro_config();
    auto w = init_model(cfg);
    const std::string path = tmp.file("model.bin");
    store_model(w, cfg, path);

    // rewrite the header with a mismatched tensor shape, keeping the header
    // length identical so only the manifest is perturbed
    std::string bytes = read_text_file(path);
    uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, sizeof(hlen));
    std::string header = bytes.substr(16, hlen);
    auto j = nlohmann::json::parse(header);
    j["manifest"][0]["shape"][0] = j["manifest"][0]["shape"][0].get<int>() + 1;
    std::string new_header = j.dump();
    REQUIRE(new_header.size() == header.size()); // single-digit change keeps the length
    bytes.replace(16, hlen, new_header);
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_model(path), ManifestError);
}

TEST_CASE("megabyte-scale model round-trip") {
    TempDir tmp;
    auto cfg = testutil::micro_config(2, 128, 4, 256, 258, 64, 23);
    auto w = init_model(cfg);
    const std::string path = tmp.file("model.bin");
    store_model(w, cfg, path);
    CHECK(fs::file_size(path) > (1u << 20));
    auto m = load_model(path);
    CHECK(weights_checksum(m.weights) == weights_checksum(w));
}

TEST_CASE("trace file round-trip") {
    TempDir tmp;
    TraceFileHeader h;
    h.model_hash = "abc123";
    h.settings_json = R"({"gate":"confidence","tau":0.9})";
    h.seed = 42;
    h.n_layers = 4;

    std::vector<ExitTrace> traces(2);
    traces[0].position = 0;
    traces[0].token = 'h';
    traces[0].exit_layer = 2;
    traces[0].optimal_exit_layer = 1;
    traces[0].layer_argmax = {5, 5, 7, 7};
    traces[0].layer_confidence = {0.2f, 0.5f, 0.7f, 0.9f};
    traces[0].wall_ns = 1234;
    traces[0].is_word_prefix = true;
    traces[1].position = 1;
    traces[1].token = 'i';
    traces[1].exit_layer = 4;

    const std::string path = tmp.file("traces.ndjson");
    store_traces(path, h, traces);
    auto back = load_traces(path);
    CHECK(back.header.model_hash == "abc123");
    CHECK(back.header.seed == 42);
    CHECK(back.header.n_layers == 4);
    REQUIRE(back.traces.size() == 2);
    CHECK(back.traces[0].token == 'h');
    CHECK(back.traces[0].exit_layer == 2);
    REQUIRE(back.traces[0].optimal_exit_layer.has_value());
    CHECK(*back.traces[0].optimal_exit_layer == 1);
    CHECK(back.traces[0].layer_argmax == traces[0].layer_argmax);
    CHECK(back.traces[0].layer_confidence == traces[0].layer_confidence);
    CHECK(back.traces[0].wall_ns == 1234);
    CHECK(back.traces[0].is_word_prefix);
    CHECK_FALSE(back.traces[1].optimal_exit_layer.has_value());

    // the first line parses as standalone json and records the schema version
    std::ifstream f(path);
    std::string first;
    std::getline(f, first);
    auto j = nlohmann::json::parse(first);
    CHECK(j.at("schema_version").get<int>() == kTraceSchemaVersion);
}

TEST_CASE("trace schema version mismatch is rejected") {
    TempDir tmp;
    const std::string path = tmp.file("traces.ndjson");
    std::ofstream(path) << R"({"schema_version":99,"n_layers":2})" << "\n";
    CHECK_THROWS_AS(load_traces(path), VersionError);
}

TEST_CASE("report emission is deterministic and cross-parses") {
    TempDir tmp;
    std::vector<ReportRow> rows{
        {"expA", "avg_exit", {23.4912345, 1.0 / 3.0}, "layers", "hash1+hash2"},
        {"expB", "speedup", {1.5}, "x", "hash3"},
    };
    const std::string csv1 = tmp.file("r1.csv"), csv2 = tmp.file("r2.csv");
    emit_report(rows, "csv", csv1);
    emit_report(rows, "csv", csv2);
    CHECK(read_text_file(csv1) == read_text_file(csv2));

    const std::string text = read_text_file(csv1);
    CHECK(text.rfind("experiment,metric,values,units,provenance\n", 0) == 0);
    CHECK(text.find("23.4912;0.333333") != std::string::npos); // 6 significant digits
    CHECK(text.find("expB,speedup,1.5,x,hash3") != std::string::npos);

    const std::string jsonf = tmp.file("r.json");
    emit_report(rows, "json", jsonf);
    auto j = nlohmann::json::parse(read_text_file(jsonf));
    REQUIRE(j.size() == 2);
    CHECK(j[0].at("experiment") == "expA");
    CHECK(j[0].at("values")[0] == "23.4912");
    CHECK(j[1].at("metric") == "speedup");

    CHECK_THROWS_AS(emit_report(rows, "xml", tmp.file("r.xml")), ConfigError);
}

TEST_CASE("format_g6 pins six significant digits") {
    CHECK(format_g6(23.4912345) == "23.4912");
    CHECK(format_g6(0.000123456789) == "0.000123457");
    CHECK(format_g6(1.0) == "1");
    CHECK(format_g6(1234567.0) == "1.23457e+06");
}

TEST_CASE("prompt lines skip empties") {
    TempDir tmp;
    const std::string path = tmp.file("prompts.txt");
    std::ofstream(path) << "first prompt\n\nsecond prompt\n";
    auto lines = read_prompt_lines(path);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0] == "first prompt");
    CHECK(lines[1] == "second prompt");
}

TEST_CASE("file hashing is content addressed") {
    TempDir tmp;
    const std::string a = tmp.file("a.txt"), b = tmp.file("b.txt"), c = tmp.file("c.txt");
    std::ofstream(a) << "same bytes";
    std::ofstream(b) << "same bytes";
    std::ofstream(c) << "other bytes";
    CHECK(file_hash_hex(a) == file_hash_hex(b));
    CHECK(file_hash_hex(a) != file_hash_hex(c));
    CHECK_THROWS_AS(file_hash_hex(tmp.file("missing.txt")), IoError);
}
