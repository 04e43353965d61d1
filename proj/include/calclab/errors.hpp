#pragma once

#include <stdexcept>
#include <string>

namespace calclab {

// Exit-code mapping used by the CLI: usage -> 1, data/config -> 2, numeric -> 3.
struct usage_error : std::runtime_error {
    explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatches are contract violations of the tensor layer.
struct shape_error : numeric_error {
    explicit shape_error(const std::string& msg) : numeric_error(msg) {}
};

}  // namespace calclab
