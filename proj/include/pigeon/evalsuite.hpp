#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pigeon/align.hpp"
#include "pigeon/embedder.hpp"
#include "pigeon/personalize.hpp"

namespace pigeon::evalsuite {

using json = nlohmann::json;
using personalize::PigeonModel;
using synthworld::Sample;
using synthworld::World;

// Two independent image-feature spaces plus a caption space shared with the
// first one; stands in for the CLIP/DINO extractor pair.
struct EmbedderSet {
    Embedder clip_like;
    Embedder dino_like;
    Embedder plain;                // identity projection; reward embedder default
    Eigen::MatrixXd theme_dirs;    // caption attribute vectors
    Eigen::MatrixXd emotion_dirs;
    double emotion_weight = 0.35;
    int themes = 0;
    int emotions = 0;

    Eigen::VectorXd embed_caption(const std::vector<int>& caption) const;
    Eigen::VectorXd embed_image(const std::vector<int>& token_ids) const;
};

EmbedderSet make_embedders(const World& world, std::uint64_t seed);

// 100 x cosine similarity.
double similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

enum class MetricKind { cs, cis, dis };

double history_metric(const tokenizer::TokenSequence& generated,
                      const std::vector<synthworld::ItemRecord>& history,
                      const EmbedderSet& embedders, MetricKind kind);

// Arithmetic mean of history CIS and reference CS, rounded to 2 decimals.
double overall_score(double history_cis, double reference_cs);

struct EvalConfig {
    double alpha_h = 0.2;
    enum class AlphaPolicy { fixed, select };
    AlphaPolicy policy = AlphaPolicy::fixed;
    double alpha_r = 0.5;
    std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    personalize::GenConfig gen;
    bool history_mask = true;
    bool reference_mask = true;
    maskgen::RefMaskScheme scheme = maskgen::RefMaskScheme::dual;
    personalize::PromptVariant variant = personalize::PromptVariant::full;
    std::uint64_t embedder_seed = 99;
    int max_samples = 0;  // 0 = all
};

struct MetricsBlock {
    double cs = 0.0;
    double cis = 0.0;
    double dis = 0.0;
};

struct MetricsReport {
    MetricsBlock personalization;
    double preference_score = 0.0;   // mean Eq-style reward against history
    double oracle_score = 0.0;       // ground-truth personalization, when known
    bool has_oracle = false;
    MetricsBlock semantic_alignment;
    double overall = 0.0;

    struct PerSample {
        int index = 0;
        double alpha_r = 0.0;
        double p_cs = 0, p_cis = 0, p_dis = 0, pref = 0;
        double a_cs = 0, a_cis = 0, a_dis = 0;
        double oracle = 0.0;
        bool has_oracle = false;
    };
    std::vector<PerSample> per_sample;

    // config echo
    double alpha_h = 0.0;
    std::string alpha_policy;
    double alpha_r = 0.0;
    std::uint64_t seed = 0;
};

struct AlphaSelection {
    double alpha_r = 0.0;
    std::vector<std::pair<double, double>> table;  // (alpha, combined score)
};

AlphaSelection select_alpha_r(const PigeonModel& model, const Sample& sample,
                              const std::vector<double>& grid, const EmbedderSet& embedders,
                              const EvalConfig& cfg);

MetricsReport evaluate(const PigeonModel& model, const std::vector<Sample>& samples,
                       const EvalConfig& cfg, const World* world);

enum class SweepAxis { alpha_h, alpha_r, no_history_mask, ref_mask_scheme, stage };
SweepAxis sweep_axis_from_name(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

struct SweepPoint {
    std::string label;
    double numeric = 0.0;
    MetricsReport report;
};

struct SweepResult {
    SweepAxis axis;
    std::vector<SweepPoint> points;
    std::map<std::string, double> rank_correlations;  // metric -> spearman vs axis
};

// One evaluate per grid point. The stage axis needs the stage-2 model.
SweepResult run_sweep(const PigeonModel& model, const PigeonModel* stage2_model, SweepAxis axis,
                      const std::vector<double>& grid, const std::vector<Sample>& samples,
                      const EvalConfig& cfg, const World* world);

double spearman(const std::vector<double>& x, const std::vector<double>& y);

json report_to_json(const MetricsReport& report);
std::string report_to_csv(const MetricsReport& report);
json sweep_to_json(const SweepResult& sweep);
std::string sweep_to_csv(const SweepResult& sweep);

}  // namespace pigeon::evalsuite
