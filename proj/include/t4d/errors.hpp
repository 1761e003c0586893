#pragma once

#include <stdexcept>
#include <string>

namespace t4d {

// Shape or argument violations on tensor operations.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid configuration (CLI flags, config files, model specs).
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Dataset, manifest or container-file problems. `kind()` distinguishes the
// failure classes so callers and tests can tell a bad magic from a short read.
struct IoError : std::runtime_error {
    enum class Kind {
        Open,
        BadMagic,
        BadVersion,
        BadDtype,
        BadRank,
        Truncated,
        Format,
    };

    IoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

// Non-finite values, failed numerical checks, optimizer blow-ups.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace t4d
