#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace pigeon::serialize {

using json = nlohmann::json;

std::string base64_encode(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Matrices travel as base64-encoded little-endian float64, row-major.
json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);

json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

// FNV-1a over bytes; used for config and parameter fingerprints.
std::uint64_t fnv1a(const std::uint8_t* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(const std::string& text, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hash_hex(std::uint64_t h);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace pigeon::serialize
