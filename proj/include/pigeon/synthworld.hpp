#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pigeon/tokenizer.hpp"

namespace pigeon::synthworld {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct WorldConfig {
    int users = 50;
    int items = 200;
    int codebook_size = 64;  // K
    int dim = 16;
    int tokens_per_item = 16;
    int themes = 8;
    int emotions = 4;
    double noise_rate = 0.2;       // fraction of uniform draws in user histories
    double temperature = 0.2;      // softmax temperature for affinity sampling
    double theme_spread = 0.25;    // per-item offset from its theme direction
    double patch_noise = 0.35;     // per-patch jitter before quantization
    double emotion_weight = 0.35;  // emotion contribution to item features
    double user_spread = 0.25;     // user latent offset from home theme
};

struct UserProfile {
    int user_id = -1;
    Vector latent;            // unit norm
    double noise_rate = 0.0;  // in [0,1]
};

struct ItemRecord {
    int item_id = -1;
    tokenizer::TokenSequence tokens;
    std::vector<int> attributes;  // {theme, emotion}
    Vector feature;               // mean of token render vectors
};

enum class Scenario { sticker_like, poster_like };

std::string scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct Sample {
    std::vector<ItemRecord> history;
    ItemRecord reference;                // x_0; empty until a reference is attached
    std::vector<int> text_instruction;   // caption word ids of the reference
    ItemRecord target;
    Scenario scenario = Scenario::poster_like;
    bool has_reference = false;
    int user_id = -1;
};

struct World {
    std::uint64_t seed = 0;
    int dim = 0;
    std::vector<UserProfile> users;
    std::vector<ItemRecord> items;
    Matrix render_codebook;  // K x dim
    Matrix theme_dirs;       // themes x dim
    Matrix emotion_dirs;     // emotions x dim
    WorldConfig config;
};

World gen_world(const WorldConfig& cfg, std::uint64_t seed);

// mean of the codebook rows selected by the token ids
Vector render(const Matrix& codebook, const std::vector<int>& token_ids);

std::vector<ItemRecord> sample_interactions(const World& world, const UserProfile& user,
                                            int count, std::uint64_t rng_seed);

std::vector<Sample> build_samples(const std::vector<ItemRecord>& sequence, int window = 6,
                                  int user_id = -1);

Sample attach_reference(const Sample& sample, Scenario scenario, std::uint64_t rng_seed,
                        const World& world);

struct SplitResult {
    std::vector<Sample> train, valid, test;
};

SplitResult split_samples(const std::vector<Sample>& samples,
                          std::array<double, 3> ratios, std::uint64_t seed);

double oracle_preference_score(const World& world, const UserProfile& user,
                               const tokenizer::TokenSequence& tokens);

// attribute-caption word ids; layout: 0 = theme label, 1 = emotion label,
// 2..2+T theme words, 2+T..2+T+E emotion words
std::vector<int> caption_ids(int theme, int emotion, int themes, int emotions);
int caption_vocab_size(int themes, int emotions);
// inverse of caption_ids; throws on malformed captions
std::pair<int, int> parse_caption(const std::vector<int>& ids, int themes, int emotions);

int classify_theme(const World& world, const Vector& feature);
int classify_emotion(const World& world, const Vector& feature);

// --- persistence ---------------------------------------------------------

std::string world_to_json(const World& world);
World world_from_json(const std::string& text);

std::string samples_to_jsonl(const std::vector<Sample>& samples);
std::vector<Sample> samples_from_jsonl(const std::string& text, const World& world);

}  // namespace pigeon::synthworld
