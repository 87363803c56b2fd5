#include "pigeon/config.hpp"

#include <set>

#include "pigeon/errors.hpp"
#include "pigeon/serialize.hpp"

namespace pigeon::config {

namespace {

// Pulls known keys out of an object and rejects anything left over.
class StrictObject {
public:
    StrictObject(const json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j.is_object()) throw config_error("section '" + section_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        known_.insert(key);
        if (j_.contains(key)) {
            try {
                out = j_.at(key).get<T>();
            } catch (const json::exception&) {
                throw config_error("bad value for key '" + qualify(key) + "'");
            }
        }
    }

    const json* child(const char* key) {
        known_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!known_.count(it.key()))
                throw config_error("unknown key '" + qualify(it.key()) + "'");
        }
    }

private:
    std::string qualify(const std::string& key) const {
        return section_.empty() ? key : section_ + "." + key;
    }
    const json& j_;
    std::string section_;
    std::set<std::string> known_;
};

void parse_world(const json& j, synthworld::WorldConfig& w) {
    StrictObject o(j, "world");
    o.get("users", w.users);
    o.get("items", w.items);
    o.get("codebook_size", w.codebook_size);
    o.get("dim", w.dim);
    o.get("tokens_per_item", w.tokens_per_item);
    o.get("themes", w.themes);
    o.get("emotions", w.emotions);
    o.get("noise_rate", w.noise_rate);
    o.get("temperature", w.temperature);
    o.get("theme_spread", w.theme_spread);
    o.get("patch_noise", w.patch_noise);
    o.get("emotion_weight", w.emotion_weight);
    o.get("user_spread", w.user_spread);
    o.finish();
}

void parse_model(const json& j, ModelConfig& m) {
    StrictObject o(j, "model");
    o.get("maskgen_layers", m.maskgen_layers);
    o.get("maskgen_heads", m.maskgen_heads);
    o.get("maskgen_ffn", m.maskgen_ffn);
    o.get("maskgen_max_len", m.maskgen_max_len);
    o.get("lmm_layers", m.lmm_layers);
    o.get("lmm_heads", m.lmm_heads);
    o.get("d_model", m.d_model);
    o.get("lmm_ffn", m.lmm_ffn);
    o.get("max_ctx", m.max_ctx);
    o.get("lora_rank", m.lora_rank);
    o.get("lora_alpha", m.lora_alpha);
    o.get("preamble_len", m.preamble_len);
    o.get("decoder_hidden", m.decoder_hidden);
    o.finish();
}

void parse_stage1(const json& j, Stage1Config& s) {
    StrictObject o(j, "stage1");
    o.get("learning_rate", s.learning_rate);
    o.get("steps", s.steps);
    o.get("batch_size", s.batch_size);
    o.get("alpha_h", s.alpha_h);
    o.get("gumbel_temperature", s.gumbel_temperature);
    o.get("log_every", s.log_every);
    o.finish();
}

void parse_stage2(const json& j, Stage2Config& s) {
    StrictObject o(j, "stage2");
    o.get("learning_rate", s.learning_rate);
    o.get("steps", s.steps);
    o.get("batch_size", s.batch_size);
    o.get("beta", s.beta);
    o.get("max_prompts", s.max_prompts);
    o.get("log_every", s.log_every);
    o.get("grid", s.grid);
    o.finish();
}

void parse_eval(const json& j, EvalSection& e) {
    StrictObject o(j, "eval");
    o.get("alpha_h", e.alpha_h);
    o.get("alpha_r_policy", e.alpha_r_policy);
    o.get("alpha_r", e.alpha_r);
    o.get("grid", e.grid);
    o.get("mode", e.mode);
    o.get("max_len", e.max_len);
    o.get("gen_seed", e.gen_seed);
    o.get("embedder_seed", e.embedder_seed);
    o.get("max_samples", e.max_samples);
    o.finish();
}

void validate(const Config& c) {
    if (c.stage1.learning_rate <= 0.0 || c.stage2.learning_rate <= 0.0)
        throw config_error("learning rates must be positive");
    if (c.stage1.alpha_h < 0.0 || c.stage1.alpha_h > 1.0)
        throw config_error("alpha_h outside [0,1]");
    if (c.stage2.beta <= 0.0) throw config_error("beta must be positive");
    if (c.window < 2) throw config_error("window must be >= 2");
    if (c.eval.alpha_r_policy != "fixed" && c.eval.alpha_r_policy != "select")
        throw config_error("alpha_r_policy must be 'fixed' or 'select'");
    synthworld::scenario_from_name(c.scenario);
    if (c.split_ratios.size() != 3) throw config_error("split_ratios needs three entries");
}

}  // namespace

Config default_config() { return Config{}; }

Config config_from_json(const json& j) {
    Config c;
    {
        StrictObject o(j, "");
        o.get("seed", c.seed);
        o.get("scenario", c.scenario);
        o.get("window", c.window);
        o.get("interactions_per_user", c.interactions_per_user);
        o.get("split_ratios", c.split_ratios);
        if (const json* w = o.child("world")) parse_world(*w, c.world);
        if (const json* m = o.child("model")) parse_model(*m, c.model);
        if (const json* s1 = o.child("stage1")) parse_stage1(*s1, c.stage1);
        if (const json* s2 = o.child("stage2")) parse_stage2(*s2, c.stage2);
        if (const json* e = o.child("eval")) parse_eval(*e, c.eval);
        o.finish();
    }
    validate(c);
    return c;
}

Config load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(serialize::read_file(path));
    } catch (const json::exception& e) {
        throw config_error("cannot parse " + path + ": " + e.what());
    }
    return config_from_json(j);
}

json config_to_json(const Config& c) {
    json j;
    j["seed"] = c.seed;
    j["scenario"] = c.scenario;
    j["window"] = c.window;
    j["interactions_per_user"] = c.interactions_per_user;
    j["split_ratios"] = c.split_ratios;
    j["world"] = {{"users", c.world.users},
                  {"items", c.world.items},
                  {"codebook_size", c.world.codebook_size},
                  {"dim", c.world.dim},
                  {"tokens_per_item", c.world.tokens_per_item},
                  {"themes", c.world.themes},
                  {"emotions", c.world.emotions},
                  {"noise_rate", c.world.noise_rate},
                  {"temperature", c.world.temperature},
                  {"theme_spread", c.world.theme_spread},
                  {"patch_noise", c.world.patch_noise},
                  {"emotion_weight", c.world.emotion_weight},
                  {"user_spread", c.world.user_spread}};
    j["model"] = {{"maskgen_layers", c.model.maskgen_layers},
                  {"maskgen_heads", c.model.maskgen_heads},
                  {"maskgen_ffn", c.model.maskgen_ffn},
                  {"maskgen_max_len", c.model.maskgen_max_len},
                  {"lmm_layers", c.model.lmm_layers},
                  {"lmm_heads", c.model.lmm_heads},
                  {"d_model", c.model.d_model},
                  {"lmm_ffn", c.model.lmm_ffn},
                  {"max_ctx", c.model.max_ctx},
                  {"lora_rank", c.model.lora_rank},
                  {"lora_alpha", c.model.lora_alpha},
                  {"preamble_len", c.model.preamble_len},
                  {"decoder_hidden", c.model.decoder_hidden}};
    j["stage1"] = {{"learning_rate", c.stage1.learning_rate},
                   {"steps", c.stage1.steps},
                   {"batch_size", c.stage1.batch_size},
                   {"alpha_h", c.stage1.alpha_h},
                   {"gumbel_temperature", c.stage1.gumbel_temperature},
                   {"log_every", c.stage1.log_every}};
    j["stage2"] = {{"learning_rate", c.stage2.learning_rate},
                   {"steps", c.stage2.steps},
                   {"batch_size", c.stage2.batch_size},
                   {"beta", c.stage2.beta},
                   {"max_prompts", c.stage2.max_prompts},
                   {"log_every", c.stage2.log_every},
                   {"grid", c.stage2.grid}};
    j["eval"] = {{"alpha_h", c.eval.alpha_h},
                 {"alpha_r_policy", c.eval.alpha_r_policy},
                 {"alpha_r", c.eval.alpha_r},
                 {"grid", c.eval.grid},
                 {"mode", c.eval.mode},
                 {"max_len", c.eval.max_len},
                 {"gen_seed", c.eval.gen_seed},
                 {"embedder_seed", c.eval.embedder_seed},
                 {"max_samples", c.eval.max_samples}};
    return j;
}

std::string config_hash(const Config& c) {
    return serialize::hash_hex(serialize::fnv1a(config_to_json(c).dump()));
}

}  // namespace pigeon::config
