#include "pigeon/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pigeon/errors.hpp"
#include "pigeon/rng.hpp"
#include "pigeon/serialize.hpp"

namespace pigeon::synthworld {

using json = nlohmann::json;

std::string scenario_name(Scenario s) {
    return s == Scenario::sticker_like ? "sticker-like" : "poster-like";
}

Scenario scenario_from_name(const std::string& name) {
    if (name == "sticker-like") return Scenario::sticker_like;
    if (name == "poster-like") return Scenario::poster_like;
    throw config_error("unknown scenario '" + name + "'");
}

Vector render(const Matrix& codebook, const std::vector<int>& token_ids) {
    if (token_ids.empty()) throw undefined_score_error("cannot render an empty token list");
    Vector v = Vector::Zero(codebook.cols());
    for (int id : token_ids) {
        if (id < 0 || id >= codebook.rows()) throw index_error("render token id out of range");
        v += codebook.row(id).transpose();
    }
    return v / static_cast<double>(token_ids.size());
}

namespace {

ItemRecord make_item(int item_id, int theme, int emotion, const Matrix& theme_dirs,
                     const Matrix& emotion_dirs, const tokenizer::Codebook& cb,
                     const WorldConfig& cfg, Rng& rng) {
    const int d = cfg.dim;
    Vector center = theme_dirs.row(theme).transpose() +
                    cfg.emotion_weight * emotion_dirs.row(emotion).transpose() +
                    cfg.theme_spread * rng.gaussian(d, 1, 1.0 / std::sqrt(double(d))).col(0);
    center.normalize();

    Matrix patches(cfg.tokens_per_item, d);
    for (int j = 0; j < cfg.tokens_per_item; ++j) {
        patches.row(j) =
            (center + cfg.patch_noise * rng.gaussian(d, 1, 1.0 / std::sqrt(double(d))).col(0))
                .transpose();
    }

    ItemRecord item;
    item.item_id = item_id;
    item.tokens = tokenizer::tokenize(patches, cb);
    item.attributes = {theme, emotion};
    item.feature = render(cb.entries, item.tokens.ids);
    return item;
}

}  // namespace

World gen_world(const WorldConfig& cfg, std::uint64_t seed) {
    if (cfg.dim < 2) throw config_error("dim must be >= 2");
    if (cfg.codebook_size < 2) throw config_error("codebook_size must be >= 2");
    if (cfg.users < 1) throw config_error("users must be >= 1");
    if (cfg.items < 1) throw config_error("items must be >= 1");
    if (cfg.themes < 1 || cfg.emotions < 1) throw config_error("themes/emotions must be >= 1");
    if (cfg.tokens_per_item < 1) throw config_error("tokens_per_item must be >= 1");
    if (cfg.noise_rate < 0.0 || cfg.noise_rate > 1.0)
        throw config_error("noise_rate outside [0,1]");

    Rng root(seed);
    World w;
    w.seed = seed;
    w.dim = cfg.dim;
    w.config = cfg;

    tokenizer::Codebook cb = tokenizer::random_codebook(cfg.codebook_size, cfg.dim,
                                                        root.fork(1).next_u64());
    w.render_codebook = cb.entries;

    Rng dir_rng = root.fork(2);
    w.theme_dirs.resize(cfg.themes, cfg.dim);
    for (int t = 0; t < cfg.themes; ++t)
        w.theme_dirs.row(t) = dir_rng.unit_vector(cfg.dim).transpose();
    w.emotion_dirs.resize(cfg.emotions, cfg.dim);
    for (int e = 0; e < cfg.emotions; ++e)
        w.emotion_dirs.row(e) = dir_rng.unit_vector(cfg.dim).transpose();

    Rng item_rng = root.fork(3);
    w.items.reserve(cfg.items);
    for (int i = 0; i < cfg.items; ++i) {
        int theme = i % cfg.themes;
        int emotion = static_cast<int>(item_rng.uniform_int(cfg.emotions));
        w.items.push_back(make_item(i, theme, emotion, w.theme_dirs, w.emotion_dirs, cb, cfg,
                                    item_rng));
    }

    Rng user_rng = root.fork(4);
    w.users.reserve(cfg.users);
    for (int u = 0; u < cfg.users; ++u) {
        UserProfile p;
        p.user_id = u;
        int home = u % cfg.themes;
        Vector latent =
            w.theme_dirs.row(home).transpose() +
            cfg.user_spread * user_rng.gaussian(cfg.dim, 1, 1.0 / std::sqrt(double(cfg.dim))).col(0);
        p.latent = latent.normalized();
        p.noise_rate = cfg.noise_rate;
        w.users.push_back(std::move(p));
    }
    return w;
}

std::vector<ItemRecord> sample_interactions(const World& world, const UserProfile& user,
                                            int count, std::uint64_t rng_seed) {
    if (count < 1) throw config_error("interaction count must be >= 1");
    Rng rng(rng_seed);

    const int n = static_cast<int>(world.items.size());
    Eigen::VectorXd affinity(n);
    for (int i = 0; i < n; ++i) affinity(i) = user.latent.dot(world.items[i].feature);
    Eigen::VectorXd logits = affinity / world.config.temperature;
    double mx = logits.maxCoeff();
    Eigen::VectorXd probs = (logits.array() - mx).exp();
    probs /= probs.sum();
    Eigen::VectorXd cdf(n);
    std::partial_sum(probs.data(), probs.data() + n, cdf.data());

    std::vector<ItemRecord> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        double gate = rng.uniform();
        int pick;
        if (gate < user.noise_rate) {
            pick = static_cast<int>(rng.uniform_int(n));
        } else {
            double u = rng.uniform();
            pick = static_cast<int>(std::lower_bound(cdf.data(), cdf.data() + n, u) - cdf.data());
            if (pick >= n) pick = n - 1;
        }
        out.push_back(world.items[pick]);
    }
    return out;
}

std::vector<Sample> build_samples(const std::vector<ItemRecord>& sequence, int window,
                                  int user_id) {
    if (window < 2) throw config_error("window must be >= 2");
    std::vector<Sample> out;
    if (static_cast<int>(sequence.size()) < window) return out;
    const int n_samples = static_cast<int>(sequence.size()) - window + 1;
    out.reserve(n_samples);
    for (int s = 0; s < n_samples; ++s) {
        Sample sample;
        sample.history.assign(sequence.begin() + s, sequence.begin() + s + window - 1);
        sample.target = sequence[s + window - 1];
        sample.user_id = user_id;
        out.push_back(std::move(sample));
    }
    return out;
}

std::vector<int> caption_ids(int theme, int emotion, int themes, int emotions) {
    if (theme < 0 || theme >= themes)
        throw vocabulary_error("theme attribute " + std::to_string(theme) + " outside vocabulary");
    if (emotion < 0 || emotion >= emotions)
        throw vocabulary_error("emotion attribute " + std::to_string(emotion) +
                               " outside vocabulary");
    return {0, 2 + theme, 1, 2 + themes + emotion};
}

int caption_vocab_size(int themes, int emotions) { return 2 + themes + emotions; }

std::pair<int, int> parse_caption(const std::vector<int>& ids, int themes, int emotions) {
    if (ids.size() != 4 || ids[0] != 0 || ids[2] != 1)
        throw data_error("malformed caption token sequence");
    int theme = ids[1] - 2;
    int emotion = ids[3] - 2 - themes;
    if (theme < 0 || theme >= themes || emotion < 0 || emotion >= emotions)
        throw vocabulary_error("caption ids outside vocabulary");
    return {theme, emotion};
}

Sample attach_reference(const Sample& sample, Scenario scenario, std::uint64_t rng_seed,
                        const World& world) {
    if (world.items.empty()) throw data_error("world has no items");
    Sample out = sample;
    out.scenario = scenario;
    if (scenario == Scenario::poster_like) {
        out.reference = sample.target;
    } else {
        std::vector<int> history_themes;
        for (const ItemRecord& h : sample.history) history_themes.push_back(h.attributes.at(0));
        std::vector<int> candidates;
        for (std::size_t i = 0; i < world.items.size(); ++i) {
            int theme = world.items[i].attributes.at(0);
            if (std::find(history_themes.begin(), history_themes.end(), theme) ==
                history_themes.end())
                candidates.push_back(static_cast<int>(i));
        }
        if (candidates.empty())
            throw data_error("no cross-theme reference candidates available");
        Rng rng(rng_seed);
        out.reference = world.items[candidates[rng.uniform_int(candidates.size())]];
    }
    out.text_instruction = caption_ids(out.reference.attributes.at(0),
                                       out.reference.attributes.at(1), world.config.themes,
                                       world.config.emotions);
    out.has_reference = true;
    return out;
}

SplitResult split_samples(const std::vector<Sample>& samples, std::array<double, 3> ratios,
                          std::uint64_t seed) {
    for (double r : ratios)
        if (r <= 0.0) throw config_error("split ratios must be positive");
    const int n = static_cast<int>(samples.size());
    double total = ratios[0] + ratios[1] + ratios[2];

    // largest-remainder apportionment keeps every split within 1 of exact
    std::array<int, 3> counts{};
    std::array<double, 3> frac{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = n * ratios[i] / total;
        counts[i] = static_cast<int>(std::floor(exact));
        frac[i] = exact - counts[i];
        assigned += counts[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (frac[a] != frac[b]) return frac[a] > frac[b];
        return a < b;
    });
    for (int k = 0; assigned < n; ++k, ++assigned) counts[order[k % 3]]++;

    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);

    SplitResult out;
    int pos = 0;
    for (int i = 0; i < counts[0]; ++i) out.train.push_back(samples[idx[pos++]]);
    for (int i = 0; i < counts[1]; ++i) out.valid.push_back(samples[idx[pos++]]);
    for (int i = 0; i < counts[2]; ++i) out.test.push_back(samples[idx[pos++]]);
    return out;
}

double oracle_preference_score(const World& world, const UserProfile& user,
                               const tokenizer::TokenSequence& tokens) {
    if (tokens.ids.empty()) throw undefined_score_error("empty token sequence");
    Vector r = render(world.render_codebook, tokens.ids);
    double rn = r.norm();
    if (rn < 1e-12) throw undefined_score_error("token render has zero norm");
    return user.latent.dot(r) / (user.latent.norm() * rn);
}

int classify_theme(const World& world, const Vector& feature) {
    int best = 0;
    double best_v = -1e300;
    for (int t = 0; t < world.theme_dirs.rows(); ++t) {
        double v = world.theme_dirs.row(t).dot(feature);
        if (v > best_v) {
            best_v = v;
            best = t;
        }
    }
    return best;
}

int classify_emotion(const World& world, const Vector& feature) {
    int best = 0;
    double best_v = -1e300;
    for (int e = 0; e < world.emotion_dirs.rows(); ++e) {
        double v = world.emotion_dirs.row(e).dot(feature);
        if (v > best_v) {
            best_v = v;
            best = e;
        }
    }
    return best;
}

// --- persistence ----------------------------------------------------------

namespace {

json config_to_json(const WorldConfig& c) {
    return json{{"users", c.users},
                {"items", c.items},
                {"codebook_size", c.codebook_size},
                {"dim", c.dim},
                {"tokens_per_item", c.tokens_per_item},
                {"themes", c.themes},
                {"emotions", c.emotions},
                {"noise_rate", c.noise_rate},
                {"temperature", c.temperature},
                {"theme_spread", c.theme_spread},
                {"patch_noise", c.patch_noise},
                {"emotion_weight", c.emotion_weight},
                {"user_spread", c.user_spread}};
}

WorldConfig config_from_json(const json& j) {
    WorldConfig c;
    c.users = j.at("users");
    c.items = j.at("items");
    c.codebook_size = j.at("codebook_size");
    c.dim = j.at("dim");
    c.tokens_per_item = j.at("tokens_per_item");
    c.themes = j.at("themes");
    c.emotions = j.at("emotions");
    c.noise_rate = j.at("noise_rate");
    c.temperature = j.at("temperature");
    c.theme_spread = j.at("theme_spread");
    c.patch_noise = j.at("patch_noise");
    c.emotion_weight = j.at("emotion_weight");
    c.user_spread = j.at("user_spread");
    return c;
}

}  // namespace

std::string world_to_json(const World& w) {
    json j;
    j["seed"] = w.seed;
    j["dim"] = w.dim;
    j["config"] = config_to_json(w.config);
    j["render_codebook"] = serialize::matrix_to_json(w.render_codebook);
    j["theme_dirs"] = serialize::matrix_to_json(w.theme_dirs);
    j["emotion_dirs"] = serialize::matrix_to_json(w.emotion_dirs);
    json users = json::array();
    for (const UserProfile& u : w.users) {
        users.push_back(json{{"user_id", u.user_id},
                             {"latent", serialize::vector_to_json(u.latent)},
                             {"noise_rate", u.noise_rate}});
    }
    j["users"] = users;
    json items = json::array();
    for (const ItemRecord& it : w.items) {
        items.push_back(json{{"item_id", it.item_id},
                             {"tokens", it.tokens.ids},
                             {"attributes", it.attributes}});
    }
    j["items"] = items;
    return j.dump(2) + "\n";
}

World world_from_json(const std::string& text) {
    json j = json::parse(text);
    World w;
    w.seed = j.at("seed");
    w.dim = j.at("dim");
    w.config = config_from_json(j.at("config"));
    w.render_codebook = serialize::matrix_from_json(j.at("render_codebook"));
    w.theme_dirs = serialize::matrix_from_json(j.at("theme_dirs"));
    w.emotion_dirs = serialize::matrix_from_json(j.at("emotion_dirs"));
    tokenizer::Codebook cb{w.render_codebook};
    for (const json& ju : j.at("users")) {
        UserProfile u;
        u.user_id = ju.at("user_id");
        u.latent = serialize::vector_from_json(ju.at("latent"));
        u.noise_rate = ju.at("noise_rate");
        w.users.push_back(std::move(u));
    }
    for (const json& ji : j.at("items")) {
        ItemRecord it;
        it.item_id = ji.at("item_id");
        std::vector<int> ids = ji.at("tokens").get<std::vector<int>>();
        it.tokens = tokenizer::sequence_from_ids(ids, cb);
        it.attributes = ji.at("attributes").get<std::vector<int>>();
        it.feature = render(w.render_codebook, ids);
        w.items.push_back(std::move(it));
    }
    return w;
}

std::string samples_to_jsonl(const std::vector<Sample>& samples) {
    std::ostringstream out;
    for (const Sample& s : samples) {
        json j;
        json hist = json::array();
        for (const ItemRecord& h : s.history) hist.push_back(h.tokens.ids);
        j["history"] = hist;
        j["reference"] = s.has_reference ? json(s.reference.tokens.ids) : json(json::array());
        j["text"] = s.text_instruction;
        j["target"] = s.target.tokens.ids;
        j["scenario"] = scenario_name(s.scenario);
        j["user_id"] = s.user_id;
        out << j.dump() << "\n";
    }
    return out.str();
}

namespace {

ItemRecord item_from_ids(const std::vector<int>& ids, const World& world,
                         const tokenizer::Codebook& cb) {
    ItemRecord it;
    it.item_id = -1;
    it.tokens = tokenizer::sequence_from_ids(ids, cb);
    it.feature = render(world.render_codebook, ids);
    it.attributes = {classify_theme(world, it.feature), classify_emotion(world, it.feature)};
    return it;
}

}  // namespace

std::vector<Sample> samples_from_jsonl(const std::string& text, const World& world) {
    std::vector<Sample> out;
    tokenizer::Codebook cb{world.render_codebook};
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Sample s;
        for (const json& h : j.at("history"))
            s.history.push_back(item_from_ids(h.get<std::vector<int>>(), world, cb));
        std::vector<int> ref_ids = j.at("reference").get<std::vector<int>>();
        s.text_instruction = j.at("text").get<std::vector<int>>();
        s.target = item_from_ids(j.at("target").get<std::vector<int>>(), world, cb);
        s.scenario = scenario_from_name(j.at("scenario"));
        s.user_id = j.at("user_id");
        if (!ref_ids.empty()) {
            s.reference = item_from_ids(ref_ids, world, cb);
            s.has_reference = true;
            if (!s.text_instruction.empty()) {
                // the caption is authoritative for reference attributes
                auto [theme, emotion] = parse_caption(s.text_instruction, world.config.themes,
                                                      world.config.emotions);
                s.reference.attributes = {theme, emotion};
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pigeon::synthworld
