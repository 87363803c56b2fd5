#pragma once

#include "pigeon/checkpoint.hpp"
#include "pigeon/config.hpp"
#include "pigeon/synthworld.hpp"

namespace fixtures {

using namespace pigeon;

// Small-but-real pipeline fixture: a compact world, a model sized for fast
// forward passes, and ready-made samples with references attached.
struct Mini {
    config::Config cfg;
    synthworld::World world;
    personalize::PigeonModel model;
    std::vector<synthworld::Sample> train;
    std::vector<synthworld::Sample> test;
};

inline config::Config mini_config() {
    config::Config cfg;
    cfg.seed = 2024;
    cfg.world.users = 8;
    cfg.world.items = 48;
    cfg.world.codebook_size = 24;
    cfg.world.dim = 8;
    cfg.world.tokens_per_item = 4;
    cfg.world.themes = 4;
    cfg.world.emotions = 2;
    cfg.model.maskgen_layers = 1;
    cfg.model.maskgen_ffn = 16;
    cfg.model.maskgen_max_len = 64;
    cfg.model.lmm_layers = 2;
    cfg.model.lmm_heads = 4;
    cfg.model.d_model = 32;
    cfg.model.lmm_ffn = 64;
    cfg.model.max_ctx = 64;
    cfg.model.decoder_hidden = 12;
    cfg.eval.max_len = 4;
    cfg.interactions_per_user = 9;
    return cfg;
}

inline Mini make_mini(synthworld::Scenario test_scenario = synthworld::Scenario::poster_like) {
    Mini m;
    m.cfg = mini_config();
    m.world = synthworld::gen_world(m.cfg.world, m.cfg.seed);
    m.model = checkpoint::init_model(m.cfg, m.world);

    Rng rng(m.cfg.seed ^ 0xf00du);
    std::vector<synthworld::Sample> pool;
    for (const synthworld::UserProfile& user : m.world.users) {
        auto inter = synthworld::sample_interactions(m.world, user,
                                                     m.cfg.interactions_per_user,
                                                     rng.fork(user.user_id).next_u64());
        auto samples = synthworld::build_samples(inter, m.cfg.window, user.user_id);
        pool.insert(pool.end(), samples.begin(), samples.end());
    }
    synthworld::SplitResult split = synthworld::split_samples(pool, {8, 1, 1}, 5);
    for (std::size_t i = 0; i < split.train.size(); ++i)
        m.train.push_back(synthworld::attach_reference(
            split.train[i], synthworld::Scenario::poster_like, 100 + i, m.world));
    for (std::size_t i = 0; i < split.test.size(); ++i)
        m.test.push_back(
            synthworld::attach_reference(split.test[i], test_scenario, 900 + i, m.world));
    return m;
}

}  // namespace fixtures
