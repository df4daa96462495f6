#pragma once

#include <stdexcept>
#include <string>

namespace memrehearse {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct RunError : std::runtime_error {
    explicit RunError(const std::string& msg) : std::runtime_error("run error: " + msg) {}
};

}  // namespace memrehearse
