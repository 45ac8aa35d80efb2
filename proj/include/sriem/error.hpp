#pragma once

#include <stdexcept>
#include <string>

namespace sriem {

// Base of every error thrown by the library. `kind()` is a stable tag the CLI
// uses to pick exit codes and tests use to tell failures apart.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

struct DegenerateRowError : Error {
    explicit DegenerateRowError(const std::string& what) : Error("degenerate-row", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io", what) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error("format", what) {}
};

struct PreprocessError : Error {
    explicit PreprocessError(const std::string& what) : Error("preprocess", what) {}
};

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& what) : Error("checkpoint", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

} // namespace sriem
