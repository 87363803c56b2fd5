#pragma once

#include <stdexcept>
#include <string>

namespace pigeon {

// Error taxonomy shared across modules. Every failure mode maps onto one of
// these so the CLI can translate them into stable exit codes.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : error {
    explicit config_error(const std::string& msg) : error("config error: " + msg) {}
};

struct data_error : error {
    explicit data_error(const std::string& msg) : error("data error: " + msg) {}
};

struct shape_error : error {
    explicit shape_error(const std::string& msg) : error("shape error: " + msg) {}
};

struct index_error : error {
    explicit index_error(const std::string& msg) : error("index error: " + msg) {}
};

struct capacity_error : error {
    explicit capacity_error(const std::string& msg) : error("capacity error: " + msg) {}
};

struct vocabulary_error : error {
    explicit vocabulary_error(const std::string& msg) : error("vocabulary error: " + msg) {}
};

struct degenerate_vector_error : error {
    explicit degenerate_vector_error(const std::string& msg)
        : error("degenerate vector: " + msg) {}
};

struct undefined_score_error : error {
    explicit undefined_score_error(const std::string& msg)
        : error("undefined score: " + msg) {}
};

struct training_error : error {
    explicit training_error(const std::string& msg) : error("training error: " + msg) {}
};

struct io_error : error {
    explicit io_error(const std::string& msg) : error("io error: " + msg) {}
};

struct usage_error : error {
    explicit usage_error(const std::string& msg) : error("usage error: " + msg) {}
};

}  // namespace pigeon
