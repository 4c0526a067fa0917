#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exitlab/decoder.hpp"
#include "exitlab/model.hpp"

namespace exitlab {

// --- byte-level tokenizer -------------------------------------------------

constexpr int kByteVocab = 256;
constexpr int kBos = 256;
constexpr int kEos = 257;
constexpr int kVocabSize = 258;

struct Tokenized {
    std::vector<int> ids;
    std::vector<bool> word_prefix; // whitespace word-boundary rule
};

Tokenized tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& ids); // drops BOS/EOS markers

// --- model file -----------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

void store_model(const Weights& w, const ModelConfig& cfg, const std::string& path);

struct LoadedModel {
    ModelConfig config;
    Weights weights;
    std::string body_checksum_hex; // also serves as the model fingerprint
};

LoadedModel load_model(const std::string& path);

// --- trace file (newline-delimited JSON) -----------------------------------

inline constexpr int kTraceSchemaVersion = 1;

struct TraceFileHeader {
    int schema_version = kTraceSchemaVersion;
    std::string model_hash;
    std::string settings_json; // run manifest
    uint64_t seed = 0;
    int n_layers = 0;
};

void store_traces(const std::string& path, const TraceFileHeader& header,
                  const std::vector<ExitTrace>& traces);

struct LoadedTraces {
    TraceFileHeader header;
    std::vector<ExitTrace> traces;
};

LoadedTraces load_traces(const std::string& path);

// --- report emission --------------------------------------------------------

struct ReportRow {
    std::string experiment;
    std::string metric;
    std::vector<double> values;
    std::string units;
    std::string provenance; // input file hashes, '+'-joined
};

// Stable column order, floats at 6 significant digits, deterministic bytes.
void emit_report(const std::vector<ReportRow>& rows, const std::string& format, const std::string& path);

std::string format_g6(double v);

// FNV-1a of a file's bytes, hex-encoded; used for provenance chains.
std::string file_hash_hex(const std::string& path);

std::string read_text_file(const std::string& path);

// One prompt per line.
std::vector<std::string> read_prompt_lines(const std::string& path);

// Honors EXITLAB_THREADS (0 or unset = automatic).
void init_threads_from_env();

} // namespace exitlab
