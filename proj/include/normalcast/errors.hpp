#pragma once

#include <stdexcept>
#include <string>

namespace ncast {

// Error categories map 1:1 onto CLI exit codes (see tools/main.cpp).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training failures carry the step index so a run can be replayed from the seed.
struct TrainingError : std::runtime_error {
    long long step = -1;
    TrainingError(const std::string& msg, long long step_idx)
        : std::runtime_error(msg + " (step " + std::to_string(step_idx) + ")"), step(step_idx) {}
};

struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ncast
