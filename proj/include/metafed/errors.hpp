#pragma once

#include <stdexcept>
#include <string>

namespace metafed {

// Error taxonomy. Each failure class gets its own type so callers and tests
// can distinguish a bad config from a bad file from a numeric blow-up.

struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

struct partition_error : std::runtime_error {
    explicit partition_error(const std::string& msg) : std::runtime_error("partition error: " + msg) {}
};

struct protocol_error : std::runtime_error {
    explicit protocol_error(const std::string& msg) : std::runtime_error("protocol error: " + msg) {}
};

} // namespace metafed
