#include "pigeon/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pigeon/errors.hpp"
#include "pigeon/rng.hpp"

namespace pigeon::evalsuite {

Eigen::VectorXd EmbedderSet::embed_caption(const std::vector<int>& caption) const {
    auto [theme, emotion] = synthworld::parse_caption(caption, themes, emotions);
    Eigen::VectorXd attr = theme_dirs.row(theme).transpose() +
                           emotion_weight * emotion_dirs.row(emotion).transpose();
    return clip_like.projection * attr.normalized();
}

Eigen::VectorXd EmbedderSet::embed_image(const std::vector<int>& token_ids) const {
    return clip_like.embed_tokens(token_ids);
}

EmbedderSet make_embedders(const World& world, std::uint64_t seed) {
    Rng rng(seed);
    const int d = world.dim;
    const int q = d + 8;  // mild over-complete projections
    EmbedderSet set;
    set.clip_like = Embedder{"clip-like", world.render_codebook,
                             rng.gaussian(q, d, 1.0 / std::sqrt(double(q)))};
    set.dino_like = Embedder{"dino-like", world.render_codebook,
                             rng.gaussian(q, d, 1.0 / std::sqrt(double(q)))};
    set.plain = Embedder::plain(world.render_codebook);
    set.theme_dirs = world.theme_dirs;
    set.emotion_dirs = world.emotion_dirs;
    set.emotion_weight = world.config.emotion_weight;
    set.themes = world.config.themes;
    set.emotions = world.config.emotions;
    return set;
}

double similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw shape_error("similarity dims differ");
    double na = a.norm();
    double nb = b.norm();
    if (na < 1e-12 || nb < 1e-12) throw degenerate_vector_error("zero vector in similarity");
    return 100.0 * a.dot(b) / (na * nb);
}

double history_metric(const tokenizer::TokenSequence& generated,
                      const std::vector<synthworld::ItemRecord>& history,
                      const EmbedderSet& embedders, MetricKind kind) {
    if (history.empty()) throw data_error("history metric needs history items");
    double total = 0.0;
    for (const synthworld::ItemRecord& item : history) {
        switch (kind) {
            case MetricKind::cs: {
                std::vector<int> cap = synthworld::caption_ids(
                    item.attributes.at(0), item.attributes.at(1), embedders.themes,
                    embedders.emotions);
                total += similarity(embedders.embed_image(generated.ids),
                                    embedders.embed_caption(cap));
                break;
            }
            case MetricKind::cis:
                total += similarity(embedders.clip_like.embed_tokens(generated.ids),
                                    embedders.clip_like.embed_tokens(item.tokens.ids));
                break;
            case MetricKind::dis:
                total += similarity(embedders.dino_like.embed_tokens(generated.ids),
                                    embedders.dino_like.embed_tokens(item.tokens.ids));
                break;
        }
    }
    return total / static_cast<double>(history.size());
}

double overall_score(double history_cis, double reference_cs) {
    if (!std::isfinite(history_cis) || !std::isfinite(reference_cs))
        throw data_error("overall score needs finite inputs");
    double mean = 0.5 * (history_cis + reference_cs);
    return std::round(mean * 100.0) / 100.0;
}

namespace {

personalize::MaskSettings eval_masks(const EvalConfig& cfg, double alpha_r) {
    personalize::MaskSettings m;
    m.alpha_h = cfg.alpha_h;
    m.alpha_r = alpha_r;
    m.history_mask = cfg.history_mask;
    m.reference_mask = cfg.reference_mask;
    m.scheme = cfg.scheme;
    m.training = false;
    m.gumbel = false;
    return m;
}

tokenizer::TokenSequence gen_at(const PigeonModel& model, const Sample& sample,
                                const EvalConfig& cfg, double alpha_r) {
    return personalize::generate_for_sample(model, sample, eval_masks(cfg, alpha_r),
                                            cfg.variant, cfg.gen);
}

}  // namespace

AlphaSelection select_alpha_r(const PigeonModel& model, const Sample& sample,
                              const std::vector<double>& grid, const EmbedderSet& embedders,
                              const EvalConfig& cfg) {
    if (grid.empty()) throw config_error("alpha_r grid is empty");
    AlphaSelection out;
    bool first = true;
    double best = 0.0;
    for (double alpha : grid) {
        tokenizer::TokenSequence seq = gen_at(model, sample, cfg, alpha);
        double hist_cis = history_metric(seq, sample.history, embedders, MetricKind::cis);
        double ref_cs = similarity(embedders.embed_image(seq.ids),
                                   embedders.embed_caption(sample.text_instruction));
        double combined = 0.5 * (hist_cis + ref_cs);
        out.table.emplace_back(alpha, combined);
        if (first || combined > best) {  // strict > keeps the lowest alpha on ties
            best = combined;
            out.alpha_r = alpha;
            first = false;
        }
    }
    return out;
}

MetricsReport evaluate(const PigeonModel& model, const std::vector<Sample>& samples,
                       const EvalConfig& cfg, const World* world) {
    if (samples.empty()) throw data_error("empty evaluation set");
    EmbedderSet embedders;
    if (world) {
        embedders = make_embedders(*world, cfg.embedder_seed);
    } else {
        throw data_error("evaluation requires the world for embedders");
    }

    const int n = cfg.max_samples > 0 ? std::min<int>(cfg.max_samples, samples.size())
                                      : static_cast<int>(samples.size());

    MetricsReport report;
    report.alpha_h = cfg.alpha_h;
    report.alpha_policy = cfg.policy == EvalConfig::AlphaPolicy::fixed ? "fixed" : "select";
    report.alpha_r = cfg.alpha_r;
    report.seed = cfg.gen.seed;

    double sum_pcs = 0, sum_pcis = 0, sum_pdis = 0, sum_pref = 0, sum_oracle = 0;
    double sum_acs = 0, sum_acis = 0, sum_adis = 0;
    int oracle_count = 0;

    for (int i = 0; i < n; ++i) {
        const Sample& sample = samples[i];
        if (!sample.has_reference) throw data_error("evaluation sample has no reference");

        double alpha_r = cfg.alpha_r;
        if (cfg.policy == EvalConfig::AlphaPolicy::select)
            alpha_r = select_alpha_r(model, sample, cfg.grid, embedders, cfg).alpha_r;

        tokenizer::TokenSequence gen = gen_at(model, sample, cfg, alpha_r);

        MetricsReport::PerSample row;
        row.index = i;
        row.alpha_r = alpha_r;
        row.p_cs = history_metric(gen, sample.history, embedders, MetricKind::cs);
        row.p_cis = history_metric(gen, sample.history, embedders, MetricKind::cis);
        row.p_dis = history_metric(gen, sample.history, embedders, MetricKind::dis);
        std::vector<tokenizer::TokenSequence> hist_tokens;
        for (const synthworld::ItemRecord& h : sample.history) hist_tokens.push_back(h.tokens);
        row.pref = align::preference_score(gen, hist_tokens, embedders.plain);

        row.a_cs = similarity(embedders.embed_image(gen.ids),
                              embedders.embed_caption(sample.text_instruction));
        row.a_cis = similarity(embedders.clip_like.embed_tokens(gen.ids),
                               embedders.clip_like.embed_tokens(sample.reference.tokens.ids));
        row.a_dis = similarity(embedders.dino_like.embed_tokens(gen.ids),
                               embedders.dino_like.embed_tokens(sample.reference.tokens.ids));

        if (world && sample.user_id >= 0 &&
            sample.user_id < static_cast<int>(world->users.size())) {
            row.oracle =
                synthworld::oracle_preference_score(*world, world->users[sample.user_id], gen);
            row.has_oracle = true;
            sum_oracle += row.oracle;
            oracle_count++;
        }

        sum_pcs += row.p_cs;
        sum_pcis += row.p_cis;
        sum_pdis += row.p_dis;
        sum_pref += row.pref;
        sum_acs += row.a_cs;
        sum_acis += row.a_cis;
        sum_adis += row.a_dis;
        report.per_sample.push_back(row);
    }

    report.personalization = {sum_pcs / n, sum_pcis / n, sum_pdis / n};
    report.preference_score = sum_pref / n;
    report.semantic_alignment = {sum_acs / n, sum_acis / n, sum_adis / n};
    if (oracle_count > 0) {
        report.oracle_score = sum_oracle / oracle_count;
        report.has_oracle = true;
    }
    report.overall = overall_score(report.personalization.cis, report.semantic_alignment.cs);
    return report;
}

SweepAxis sweep_axis_from_name(const std::string& name) {
    if (name == "alpha_h") return SweepAxis::alpha_h;
    if (name == "alpha_r") return SweepAxis::alpha_r;
    if (name == "no_history_mask") return SweepAxis::no_history_mask;
    if (name == "ref_mask_scheme") return SweepAxis::ref_mask_scheme;
    if (name == "stage") return SweepAxis::stage;
    throw config_error("unknown sweep axis '" + name + "'");
}

std::string sweep_axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::alpha_h: return "alpha_h";
        case SweepAxis::alpha_r: return "alpha_r";
        case SweepAxis::no_history_mask: return "no_history_mask";
        case SweepAxis::ref_mask_scheme: return "ref_mask_scheme";
        case SweepAxis::stage: return "stage";
    }
    return "unknown";
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw data_error("rank correlation needs pairs");
    auto ranks = [](const std::vector<double>& v) {
        const int n = static_cast<int>(v.size());
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        int i = 0;
        while (i < n) {
            int j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            double avg = 0.5 * (i + j) + 1.0;  // average rank for ties
            for (int k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> rx = ranks(x), ry = ranks(y);
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx < 1e-12 || dy < 1e-12) return 0.0;
    return num / std::sqrt(dx * dy);
}

SweepResult run_sweep(const PigeonModel& model, const PigeonModel* stage2_model, SweepAxis axis,
                      const std::vector<double>& grid, const std::vector<Sample>& samples,
                      const EvalConfig& cfg, const World* world) {
    SweepResult out;
    out.axis = axis;

    auto eval_point = [&](const PigeonModel& m, const EvalConfig& point_cfg,
                          const std::string& label, double numeric) {
        SweepPoint p;
        p.label = label;
        p.numeric = numeric;
        p.report = evaluate(m, samples, point_cfg, world);
        out.points.push_back(std::move(p));
    };

    switch (axis) {
        case SweepAxis::alpha_h: {
            std::vector<double> g = grid;
            std::sort(g.begin(), g.end());
            for (double v : g) {
                EvalConfig c = cfg;
                c.alpha_h = v;
                eval_point(model, c, "alpha_h=" + std::to_string(v), v);
            }
            break;
        }
        case SweepAxis::alpha_r: {
            std::vector<double> g = grid;
            std::sort(g.begin(), g.end());
            for (double v : g) {
                EvalConfig c = cfg;
                c.policy = EvalConfig::AlphaPolicy::fixed;
                c.alpha_r = v;
                eval_point(model, c, "alpha_r=" + std::to_string(v), v);
            }
            break;
        }
        case SweepAxis::no_history_mask: {
            for (int v = 0; v <= 1; ++v) {
                EvalConfig c = cfg;
                c.history_mask = (v == 0);
                eval_point(model, c, v == 0 ? "history_mask=on" : "history_mask=off", v);
            }
            break;
        }
        case SweepAxis::ref_mask_scheme: {
            const std::pair<maskgen::RefMaskScheme, std::string> schemes[] = {
                {maskgen::RefMaskScheme::dual, "dual"},
                {maskgen::RefMaskScheme::low_score, "low-score"},
                {maskgen::RefMaskScheme::high_score, "high-score"}};
            int i = 0;
            for (const auto& [scheme, name] : schemes) {
                EvalConfig c = cfg;
                c.scheme = scheme;
                eval_point(model, c, name, i++);
            }
            break;
        }
        case SweepAxis::stage: {
            if (!stage2_model) throw config_error("stage sweep needs a stage-2 checkpoint");
            eval_point(model, cfg, "stage1", 1);
            eval_point(*stage2_model, cfg, "stage2", 2);
            break;
        }
    }

    if (out.points.size() >= 2) {
        std::vector<double> axis_vals, pcis, acs, overall, pref;
        for (const SweepPoint& p : out.points) {
            axis_vals.push_back(p.numeric);
            pcis.push_back(p.report.personalization.cis);
            acs.push_back(p.report.semantic_alignment.cs);
            overall.push_back(p.report.overall);
            pref.push_back(p.report.preference_score);
        }
        out.rank_correlations["personalization_cis"] = spearman(axis_vals, pcis);
        out.rank_correlations["alignment_cs"] = spearman(axis_vals, acs);
        out.rank_correlations["overall"] = spearman(axis_vals, overall);
        out.rank_correlations["preference_score"] = spearman(axis_vals, pref);
    }
    return out;
}

json report_to_json(const MetricsReport& r) {
    json j;
    j["overall"] = r.overall;
    j["personalization"] = {{"cs", r.personalization.cs},
                            {"cis", r.personalization.cis},
                            {"dis", r.personalization.dis},
                            {"preference_score", r.preference_score}};
    if (r.has_oracle) j["personalization"]["oracle_score"] = r.oracle_score;
    j["semantic_alignment"] = {{"cs", r.semantic_alignment.cs},
                               {"cis", r.semantic_alignment.cis},
                               {"dis", r.semantic_alignment.dis}};
    j["config"] = {{"alpha_h", r.alpha_h},
                   {"alpha_policy", r.alpha_policy},
                   {"alpha_r", r.alpha_r},
                   {"seed", r.seed}};
    json rows = json::array();
    for (const auto& s : r.per_sample) {
        json row{{"index", s.index},     {"alpha_r", s.alpha_r}, {"p_cs", s.p_cs},
                 {"p_cis", s.p_cis},     {"p_dis", s.p_dis},     {"pref", s.pref},
                 {"a_cs", s.a_cs},       {"a_cis", s.a_cis},     {"a_dis", s.a_dis}};
        if (s.has_oracle) row["oracle"] = s.oracle;
        rows.push_back(row);
    }
    j["per_sample"] = rows;
    return j;
}

namespace {
std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}
}  // namespace

std::string report_to_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << "overall,personalization_cs,personalization_cis,personalization_dis,"
           "alignment_cs,alignment_cis,alignment_dis\n";
    out << fmt2(r.overall) << "," << fmt2(r.personalization.cs) << ","
        << fmt2(r.personalization.cis) << "," << fmt2(r.personalization.dis) << ","
        << fmt2(r.semantic_alignment.cs) << "," << fmt2(r.semantic_alignment.cis) << ","
        << fmt2(r.semantic_alignment.dis) << "\n";
    return out.str();
}

json sweep_to_json(const SweepResult& s) {
    json j;
    j["axis"] = sweep_axis_name(s.axis);
    json points = json::array();
    for (const SweepPoint& p : s.points) {
        points.push_back(json{{"label", p.label},
                              {"value", p.numeric},
                              {"report", report_to_json(p.report)}});
    }
    j["points"] = points;
    j["rank_correlations"] = s.rank_correlations;
    return j;
}

std::string sweep_to_csv(const SweepResult& s) {
    std::ostringstream out;
    out << "label,value,overall,personalization_cs,personalization_cis,personalization_dis,"
           "alignment_cs,alignment_cis,alignment_dis,preference_score\n";
    for (const SweepPoint& p : s.points) {
        const MetricsReport& r = p.report;
        out << p.label << "," << p.numeric << "," << fmt2(r.overall) << ","
            << fmt2(r.personalization.cs) << "," << fmt2(r.personalization.cis) << ","
            << fmt2(r.personalization.dis) << "," << fmt2(r.semantic_alignment.cs) << ","
            << fmt2(r.semantic_alignment.cis) << "," << fmt2(r.semantic_alignment.dis) << ","
            << fmt2(r.preference_score) << "\n";
    }
    return out.str();
}

}  // namespace pigeon::evalsuite
