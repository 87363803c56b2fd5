#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pigeon/synthworld.hpp"

namespace pigeon::config {

using json = nlohmann::json;

struct ModelConfig {
    int maskgen_layers = 2;
    int maskgen_heads = 4;
    int maskgen_ffn = 64;
    int maskgen_max_len = 256;
    int lmm_layers = 4;
    int lmm_heads = 4;
    int d_model = 64;
    int lmm_ffn = 256;
    int max_ctx = 160;
    int lora_rank = 4;
    double lora_alpha = 8.0;
    int preamble_len = 4;
    int decoder_hidden = 32;
};

struct Stage1Config {
    double learning_rate = 1e-5;
    int steps = 1200;
    int batch_size = 16;
    double alpha_h = 0.2;
    double gumbel_temperature = 1.0;
    int log_every = 100;
};

struct Stage2Config {
    double learning_rate = 5e-6;
    int steps = 150;
    int batch_size = 4;
    double beta = 0.1;
    int max_prompts = 48;
    int log_every = 25;
    std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
};

struct EvalSection {
    double alpha_h = 0.2;
    std::string alpha_r_policy = "fixed";  // fixed | select
    double alpha_r = 0.5;
    std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::string mode = "greedy";
    int max_len = 16;
    std::uint64_t gen_seed = 0;
    std::uint64_t embedder_seed = 99;
    int max_samples = 0;
};

struct Config {
    std::uint64_t seed = 7;
    std::string scenario = "sticker-like";
    int window = 6;
    int interactions_per_user = 12;
    std::vector<double> split_ratios = {8.0, 1.0, 1.0};
    synthworld::WorldConfig world;
    ModelConfig model;
    Stage1Config stage1;
    Stage2Config stage2;
    EvalSection eval;
};

Config default_config();
// Strict: unknown keys are configuration errors naming the key; missing keys
// keep their defaults.
Config config_from_json(const json& j);
Config load_config(const std::string& path);
json config_to_json(const Config& cfg);
std::string config_hash(const Config& cfg);

}  // namespace pigeon::config
