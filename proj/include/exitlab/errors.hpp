#pragma once

#include <stdexcept>
#include <string>

namespace exitlab {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

struct CacheProtocolError : std::runtime_error {
    explicit CacheProtocolError(const std::string& msg) : std::runtime_error("kv-cache: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io: " + msg) {}
};

struct ChecksumError : IoError {
    explicit ChecksumError(const std::string& msg) : IoError("checksum mismatch: " + msg) {}
};

struct VersionError : IoError {
    explicit VersionError(const std::string& msg) : IoError("version mismatch: " + msg) {}
};

struct TruncatedError : IoError {
    explicit TruncatedError(const std::string& msg) : IoError("truncated file: " + msg) {}
};

struct ManifestError : IoError {
    explicit ManifestError(const std::string& msg) : IoError("manifest mismatch: " + msg) {}
};

} // namespace exitlab
