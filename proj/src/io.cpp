#include "exitlab/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "exitlab/errors.hpp"
#include "exitlab/rng.hpp"

#include "json.hpp"

namespace exitlab {

using nlohmann::json;

// --- tokenizer --------------------------------------------------------------

namespace {

bool is_ws_byte(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

} // namespace

Tokenized tokenize(const std::string& text) {
    Tokenized t;
    t.ids.reserve(text.size());
    for (size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        t.ids.push_back(static_cast<int>(c));
        const bool prefix = (i == 0) || is_ws_byte(static_cast<unsigned char>(text[i - 1]));
        t.word_prefix.push_back(prefix);
    }
    return t;
}

std::string detokenize(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id >= 0 && id < kByteVocab) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

// --- model file --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'X', 'L', 'A', 'B', 'M', 'D', 'L', '1'};
constexpr size_t kAlign = 64;

size_t align_up(size_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json config_to_json(const ModelConfig& c) {
    return json{{"n_layers", c.n_layers},   {"d_model", c.d_model},     {"n_heads", c.n_heads},
                {"d_head", c.d_head},       {"d_ffn", c.d_ffn},         {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len}, {"norm_epsilon", c.norm_epsilon}, {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers");
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.d_head = j.at("d_head");
    c.d_ffn = j.at("d_ffn");
    c.vocab_size = j.at("vocab_size");
    c.max_seq_len = j.at("max_seq_len");
    c.norm_epsilon = j.at("norm_epsilon");
    c.seed = j.at("seed");
    return c;
}

} // namespace

void store_model(const Weights& w, const ModelConfig& cfg, const std::string& path) {
    auto tensors = tensor_list(const_cast<Weights&>(w));

    json manifest = json::array();
    size_t offset = 0;
    for (const auto& t : tensors) {
        manifest.push_back({{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}});
        offset = align_up(offset + t.data->size() * sizeof(float));
    }
    const size_t body_size = offset;

    std::vector<char> body(body_size, 0);
    offset = 0;
    for (const auto& t : tensors) {
        std::memcpy(body.data() + offset, t.data->data(), t.data->size() * sizeof(float));
        offset = align_up(offset + t.data->size() * sizeof(float));
    }

    json header;
    header["format_version"] = kModelFormatVersion;
    header["config"] = config_to_json(cfg);
    header["manifest"] = manifest;
    header["body_size"] = body_size;
    header["body_checksum"] = hex64(fnv1a64(body.data(), body.size()));
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    // pad so the body starts 64-byte aligned
    const size_t pos = sizeof(kMagic) + sizeof(hlen) + hs.size();
    const size_t pad = align_up(pos) - pos;
    const char zeros[kAlign] = {};
    f.write(zeros, static_cast<std::streamsize>(pad));
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw IoError("write failed: " + path);
}

LoadedModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);

    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw VersionError("bad magic in " + path);
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f) throw TruncatedError(path);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw TruncatedError(path);

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw IoError("bad header json: " + std::string(e.what()));
    }
    if (header.at("format_version").get<int>() != kModelFormatVersion)
        throw VersionError("model format version " + header.at("format_version").dump());

    LoadedModel m;
    m.config = config_from_json(header.at("config"));
    validate_config(m.config);

    const size_t pos = sizeof(kMagic) + sizeof(hlen) + hs.size();
    f.seekg(static_cast<std::streamoff>(align_up(pos)));
    const size_t body_size = header.at("body_size");
    std::vector<char> body(body_size);
    f.read(body.data(), static_cast<std::streamsize>(body_size));
    if (static_cast<size_t>(f.gcount()) != body_size) throw TruncatedError(path);

    const std::string sum = hex64(fnv1a64(body.data(), body.size()));
    if (sum != header.at("body_checksum").get<std::string>()) throw ChecksumError(path);
    m.body_checksum_hex = sum;

    m.weights = zeros_like(m.config);
    auto tensors = tensor_list(m.weights);
    const auto& manifest = header.at("manifest");
    if (manifest.size() != tensors.size()) throw ManifestError("tensor count differs from config");
    for (size_t i = 0; i < tensors.size(); ++i) {
        const auto& e = manifest[i];
        if (e.at("name").get<std::string>() != tensors[i].name)
            throw ManifestError("tensor name " + e.at("name").get<std::string>());
        if (e.at("shape").get<std::vector<int>>() != tensors[i].shape)
            throw ManifestError("tensor shape for " + tensors[i].name);
        if (e.at("dtype").get<std::string>() != "f32") throw ManifestError("dtype for " + tensors[i].name);
        const size_t off = e.at("offset");
        if (off % kAlign != 0) throw ManifestError("unaligned offset for " + tensors[i].name);
        const size_t bytes = tensors[i].data->size() * sizeof(float);
        if (off + bytes > body_size) throw TruncatedError("tensor " + tensors[i].name);
        std::memcpy(tensors[i].data->data(), body.data() + off, bytes);
    }
    if (!weights_finite(m.weights)) throw IoError("non-finite weights in " + path);
    return m;
}

// --- trace file --------------------------------------------------------------

void store_traces(const std::string& path, const TraceFileHeader& header,
                  const std::vector<ExitTrace>& traces) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    json h;
    h["schema_version"] = header.schema_version;
    h["model_hash"] = header.model_hash;
    h["settings"] = header.settings_json.empty() ? json::object() : json::parse(header.settings_json);
    h["seed"] = header.seed;
    h["n_layers"] = header.n_layers;
    f << h.dump() << "\n";
    for (const auto& t : traces) {
        json j;
        j["position"] = t.position;
        j["token"] = t.token;
        j["exit_layer"] = t.exit_layer;
        if (t.optimal_exit_layer) j["optimal_exit_layer"] = *t.optimal_exit_layer;
        j["layer_argmax"] = t.layer_argmax;
        j["layer_confidence"] = t.layer_confidence;
        j["wall_ns"] = t.wall_ns;
        j["is_word_prefix"] = t.is_word_prefix;
        f << j.dump() << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

LoadedTraces load_traces(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw TruncatedError(path);
    json h;
    try {
        h = json::parse(line);
    } catch (const json::exception& e) {
        throw IoError("bad trace header: " + std::string(e.what()));
    }
    LoadedTraces out;
    out.header.schema_version = h.at("schema_version");
    if (out.header.schema_version != kTraceSchemaVersion)
        throw VersionError("trace schema version " + std::to_string(out.header.schema_version));
    out.header.model_hash = h.value("model_hash", "");
    out.header.settings_json = h.value("settings", json::object()).dump();
    out.header.seed = h.value("seed", 0ull);
    out.header.n_layers = h.value("n_layers", 0);

    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("bad trace line: " + std::string(e.what()));
        }
        ExitTrace t;
        t.position = j.at("position");
        t.token = j.at("token");
        t.exit_layer = j.at("exit_layer");
        if (j.contains("optimal_exit_layer")) t.optimal_exit_layer = j.at("optimal_exit_layer").get<int>();
        t.layer_argmax = j.at("layer_argmax").get<std::vector<int>>();
        t.layer_confidence = j.at("layer_confidence").get<std::vector<float>>();
        t.wall_ns = j.at("wall_ns");
        t.is_word_prefix = j.at("is_word_prefix");
        out.traces.push_back(std::move(t));
    }
    return out;
}

// --- reports ------------------------------------------------------------------

std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void emit_report(const std::vector<ReportRow>& rows, const std::string& format, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    if (format == "csv") {
        f << "experiment,metric,values,units,provenance\n";
        for (const auto& r : rows) {
            std::string vals;
            for (size_t i = 0; i < r.values.size(); ++i) {
                if (i) vals += ';';
                vals += format_g6(r.values[i]);
            }
            f << r.experiment << ',' << r.metric << ',' << vals << ',' << r.units << ',' << r.provenance << "\n";
        }
    } else if (format == "json") {
        json arr = json::array();
        for (const auto& r : rows) {
            json vals = json::array();
            for (double v : r.values) vals.push_back(format_g6(v));
            arr.push_back({{"experiment", r.experiment},
                           {"metric", r.metric},
                           {"values", vals},
                           {"units", r.units},
                           {"provenance", r.provenance}});
        }
        f << arr.dump(2) << "\n";
    } else {
        throw ConfigError("unknown report format: " + format);
    }
    if (!f) throw IoError("write failed: " + path);
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string s = ss.str();
    return hex64(fnv1a64(s.data(), s.size()));
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> read_prompt_lines(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

void init_threads_from_env() {
#ifdef _OPENMP
    const char* env = std::getenv("EXITLAB_THREADS");
    if (env && *env) {
        const int n = std::atoi(env);
        if (n > 0) omp_set_num_threads(n);
    }
#endif
}

} // namespace exitlab
