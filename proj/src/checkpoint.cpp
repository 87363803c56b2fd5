#include "pigeon/checkpoint.hpp"

#include <cstring>

#include "pigeon/errors.hpp"
#include "pigeon/serialize.hpp"

namespace pigeon::checkpoint {

namespace {

maskgen::MaskGenConfig maskgen_config(const config::Config& cfg) {
    maskgen::MaskGenConfig m;
    m.dim = cfg.world.dim;
    m.layers = cfg.model.maskgen_layers;
    m.heads = cfg.model.maskgen_heads;
    m.ffn_hidden = cfg.model.maskgen_ffn;
    m.max_len = cfg.model.maskgen_max_len;
    return m;
}

personalize::LmmConfig lmm_config(const config::Config& cfg) {
    personalize::LmmConfig l;
    l.visual_vocab = cfg.world.codebook_size;
    l.word_vocab = synthworld::caption_vocab_size(cfg.world.themes, cfg.world.emotions);
    l.preamble_len = cfg.model.preamble_len;
    l.d_model = cfg.model.d_model;
    l.layers = cfg.model.lmm_layers;
    l.heads = cfg.model.lmm_heads;
    l.ffn_hidden = cfg.model.lmm_ffn;
    l.max_ctx = cfg.model.max_ctx;
    l.lora_rank = cfg.model.lora_rank;
    l.lora_alpha = cfg.model.lora_alpha;
    return l;
}

}  // namespace

PigeonModel init_model(const config::Config& cfg, const synthworld::World& world) {
    if (world.render_codebook.rows() != cfg.world.codebook_size ||
        world.render_codebook.cols() != cfg.world.dim)
        throw config_error("world codebook does not match the configuration");

    Rng root(cfg.seed ^ 0x9d2c5680ull);
    PigeonModel m;
    m.codebook = tokenizer::Codebook{world.render_codebook};
    {
        Rng r = root.fork(11);
        m.decoder = tokenizer::random_decoder(cfg.world.dim, cfg.model.decoder_hidden, r);
    }
    {
        Rng r = root.fork(12);
        m.mask_generator = maskgen::init_maskgen(maskgen_config(cfg), r);
    }
    {
        Rng r = root.fork(13);
        m.lmm = personalize::init_lmm(lmm_config(cfg), m.codebook, r);
    }
    // adapter starts as the transpose of the same orthonormal lift the token
    // embeddings use, so pooled reference features land in a meaningful spot
    {
        Rng r = root.fork(13);  // same stream: reproduce the lift
        Eigen::MatrixXd g = r.gaussian(cfg.model.d_model, cfg.world.dim, 1.0);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd lift =
            qr.householderQ() * Eigen::MatrixXd::Identity(cfg.model.d_model, cfg.world.dim);
        m.adapter.w = lift.transpose();
        m.adapter.b = Eigen::MatrixXd::Zero(1, cfg.model.d_model);
    }
    m.vocab = personalize::VocabConfig{cfg.world.themes, cfg.world.emotions};
    return m;
}

PigeonModel model_skeleton(const config::Config& cfg) {
    PigeonModel m;
    const int d = cfg.world.dim;
    m.codebook.entries = Eigen::MatrixXd::Zero(cfg.world.codebook_size, d);
    m.decoder = tokenizer::identity_decoder(d, cfg.model.decoder_hidden);

    maskgen::MaskGenConfig mg = maskgen_config(cfg);
    m.mask_generator.cfg = mg;
    m.mask_generator.pos_emb = Eigen::MatrixXd::Zero(mg.max_len, d);
    m.mask_generator.type_emb = Eigen::MatrixXd::Zero(2, d);
    for (int l = 0; l < mg.layers; ++l) {
        maskgen::EncoderLayerParams lp;
        lp.wq = lp.wk = lp.wv = lp.wo = Eigen::MatrixXd::Zero(d, d);
        lp.ln1_g = lp.ln1_b = lp.ln2_g = lp.ln2_b = Eigen::MatrixXd::Zero(1, d);
        lp.w1 = Eigen::MatrixXd::Zero(d, mg.ffn_hidden);
        lp.b1 = Eigen::MatrixXd::Zero(1, mg.ffn_hidden);
        lp.w2 = Eigen::MatrixXd::Zero(mg.ffn_hidden, d);
        lp.b2 = Eigen::MatrixXd::Zero(1, d);
        m.mask_generator.layers.push_back(std::move(lp));
    }

    personalize::LmmConfig lc = lmm_config(cfg);
    m.lmm.cfg = lc;
    m.lmm.tok_emb = Eigen::MatrixXd::Zero(lc.vocab_size(), lc.d_model);
    m.lmm.pos_emb = Eigen::MatrixXd::Zero(lc.max_ctx, lc.d_model);
    for (int l = 0; l < lc.layers; ++l) {
        personalize::LmmBlockParams b;
        b.wq = b.wk = b.wv = b.wo = Eigen::MatrixXd::Zero(lc.d_model, lc.d_model);
        b.lora_qa = Eigen::MatrixXd::Zero(lc.d_model, lc.lora_rank);
        b.lora_qb = Eigen::MatrixXd::Zero(lc.lora_rank, lc.d_model);
        b.lora_va = Eigen::MatrixXd::Zero(lc.d_model, lc.lora_rank);
        b.lora_vb = Eigen::MatrixXd::Zero(lc.lora_rank, lc.d_model);
        b.ln1_g = b.ln1_b = b.ln2_g = b.ln2_b = Eigen::MatrixXd::Zero(1, lc.d_model);
        b.w1 = Eigen::MatrixXd::Zero(lc.d_model, lc.ffn_hidden);
        b.b1 = Eigen::MatrixXd::Zero(1, lc.ffn_hidden);
        b.w2 = Eigen::MatrixXd::Zero(lc.ffn_hidden, lc.d_model);
        b.b2 = Eigen::MatrixXd::Zero(1, lc.d_model);
        m.lmm.blocks.push_back(std::move(b));
    }
    m.lmm.lnf_g = Eigen::MatrixXd::Zero(1, lc.d_model);
    m.lmm.lnf_b = Eigen::MatrixXd::Zero(1, lc.d_model);
    m.lmm.head = Eigen::MatrixXd::Zero(lc.visual_vocab, lc.d_model);
    m.adapter.w = Eigen::MatrixXd::Zero(d, lc.d_model);
    m.adapter.b = Eigen::MatrixXd::Zero(1, lc.d_model);
    m.vocab = personalize::VocabConfig{cfg.world.themes, cfg.world.emotions};
    return m;
}

namespace {

std::uint64_t hash_matrix(const Eigen::MatrixXd& m, std::uint64_t h) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = m(i, j);
            std::uint8_t bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            h = serialize::fnv1a(bytes, sizeof(double), h);
        }
    }
    return h;
}

template <typename Filter>
std::string filtered_hash(PigeonModel& model, Filter&& keep) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    model.visit_params([&](const std::string& name, Eigen::MatrixXd& value) {
        if (!keep(name)) return;
        h = serialize::fnv1a(name, h);
        h = hash_matrix(value, h);
    });
    return serialize::hash_hex(h);
}

}  // namespace

std::string params_hash(PigeonModel& model) {
    return filtered_hash(model, [](const std::string&) { return true; });
}

std::string frozen_base_hash(PigeonModel& model) {
    return filtered_hash(model,
                         [](const std::string& n) { return !personalize::stage1_trainable(n); });
}

std::string lora_hash(PigeonModel& model) {
    return filtered_hash(model,
                         [](const std::string& n) { return personalize::stage2_trainable(n); });
}

void save_checkpoint(const std::string& path, Checkpoint& ckpt) {
    json j;
    j["manifest"] = {{"version", 1},
                     {"stage", ckpt.stage},
                     {"config_hash", config::config_hash(ckpt.config)},
                     {"ref_policy_hash", ckpt.ref_policy_hash},
                     {"params_hash", params_hash(ckpt.model)},
                     {"metrics", ckpt.metrics}};
    j["config"] = config::config_to_json(ckpt.config);
    json params = json::object();
    ckpt.model.visit_params([&](const std::string& name, Eigen::MatrixXd& value) {
        params[name] = serialize::matrix_to_json(value);
    });
    j["params"] = params;
    serialize::write_file(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    json j;
    try {
        j = json::parse(serialize::read_file(path));
    } catch (const json::exception& e) {
        throw io_error("cannot parse checkpoint " + path + ": " + e.what());
    }
    Checkpoint ckpt;
    ckpt.config = config::config_from_json(j.at("config"));
    const json& manifest = j.at("manifest");
    ckpt.stage = manifest.at("stage");
    ckpt.ref_policy_hash = manifest.value("ref_policy_hash", "");
    ckpt.metrics = manifest.value("metrics", json());
    ckpt.config_hash = manifest.at("config_hash");
    if (ckpt.config_hash != config::config_hash(ckpt.config))
        throw io_error("checkpoint config hash mismatch");

    ckpt.model = model_skeleton(ckpt.config);
    const json& params = j.at("params");
    std::size_t filled = 0;
    ckpt.model.visit_params([&](const std::string& name, Eigen::MatrixXd& value) {
        if (!params.contains(name)) throw io_error("checkpoint missing parameter " + name);
        Eigen::MatrixXd loaded = serialize::matrix_from_json(params.at(name));
        if (loaded.rows() != value.rows() || loaded.cols() != value.cols())
            throw io_error("checkpoint parameter shape mismatch for " + name);
        value = loaded;
        ++filled;
    });
    if (filled != params.size()) throw io_error("checkpoint carries unknown parameters");

    std::string expect = manifest.at("params_hash");
    if (params_hash(ckpt.model) != expect) throw io_error("checkpoint parameter hash mismatch");
    return ckpt;
}

}  // namespace pigeon::checkpoint
