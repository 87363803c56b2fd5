#pragma once

#include <string>

#include "json.hpp"
#include "pigeon/config.hpp"
#include "pigeon/personalize.hpp"

namespace pigeon::checkpoint {

using json = nlohmann::json;
using personalize::PigeonModel;

// Model factory: shapes from config, weights seeded from config.seed, visual
// vocabulary tied to the world codebook.
PigeonModel init_model(const config::Config& cfg, const synthworld::World& world);

// Shape-correct zero model used when loading checkpoints.
PigeonModel model_skeleton(const config::Config& cfg);

struct Checkpoint {
    std::string stage = "init";  // init | stage1 | stage2
    std::string config_hash;
    std::string ref_policy_hash;  // stage-2 only: hash of the frozen LoRA snapshot
    config::Config config;
    PigeonModel model;
    json metrics;
};

void save_checkpoint(const std::string& path, Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string params_hash(PigeonModel& model);       // all arrays
std::string frozen_base_hash(PigeonModel& model);  // everything outside stage-1 trainables
std::string lora_hash(PigeonModel& model);

}  // namespace pigeon::checkpoint
