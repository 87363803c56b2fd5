#include "pigeon/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pigeon/align.hpp"
#include "pigeon/checkpoint.hpp"
#include "pigeon/config.hpp"
#include "pigeon/errors.hpp"
#include "pigeon/evalsuite.hpp"
#include "pigeon/serialize.hpp"

namespace pigeon::cli {

namespace {

namespace fs = std::filesystem;

// Relative paths resolve against PIGEON_BENCH_HOME when it is set.
std::string resolve(const std::string& path) {
    if (path.empty()) return path;
    const char* home = std::getenv("PIGEON_BENCH_HOME");
    if (!home || *home == '\0') return path;
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(home) / p).string();
}

config::Config load_or_default(const std::string& config_path) {
    if (config_path.empty()) return config::default_config();
    return config::load_config(resolve(config_path));
}

synthworld::World load_world(const std::string& path) {
    if (path.empty()) throw usage_error("missing --world");
    return synthworld::world_from_json(serialize::read_file(resolve(path)));
}

std::vector<synthworld::Sample> load_samples(const std::string& path,
                                             const synthworld::World& world) {
    if (path.empty()) throw usage_error("missing --data");
    return synthworld::samples_from_jsonl(serialize::read_file(resolve(path)), world);
}

checkpoint::Checkpoint load_ckpt(const std::string& path, const std::string& expect_stage = "") {
    if (path.empty()) throw usage_error("missing --checkpoint");
    checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(resolve(path));
    if (!expect_stage.empty() && ckpt.stage != expect_stage)
        throw data_error("checkpoint is " + ckpt.stage + ", expected " + expect_stage);
    return ckpt;
}

evalsuite::EvalConfig eval_config(const config::Config& cfg) {
    evalsuite::EvalConfig e;
    e.alpha_h = cfg.eval.alpha_h;
    e.policy = cfg.eval.alpha_r_policy == "select"
                   ? evalsuite::EvalConfig::AlphaPolicy::select
                   : evalsuite::EvalConfig::AlphaPolicy::fixed;
    e.alpha_r = cfg.eval.alpha_r;
    e.grid = cfg.eval.grid;
    e.gen.mode = personalize::gen_mode_from_name(cfg.eval.mode);
    e.gen.max_len = cfg.eval.max_len;
    e.gen.seed = cfg.eval.gen_seed;
    e.embedder_seed = cfg.eval.embedder_seed;
    e.max_samples = cfg.eval.max_samples;
    return e;
}

align::TrainConfig stage1_config(const config::Config& cfg) {
    align::TrainConfig t;
    t.learning_rate = cfg.stage1.learning_rate;
    t.steps = cfg.stage1.steps;
    t.batch_size = cfg.stage1.batch_size;
    t.seed = cfg.seed ^ 0x5151u;
    t.alpha_h = cfg.stage1.alpha_h;
    t.gumbel_temperature = cfg.stage1.gumbel_temperature;
    t.log_every = cfg.stage1.log_every;
    return t;
}

align::DPOConfig stage2_config(const config::Config& cfg) {
    align::DPOConfig d;
    d.beta = cfg.stage2.beta;
    d.learning_rate = cfg.stage2.learning_rate;
    d.steps = cfg.stage2.steps;
    d.batch_size = cfg.stage2.batch_size;
    d.seed = cfg.seed ^ 0x5252u;
    d.alpha_h = cfg.stage1.alpha_h;
    d.log_every = cfg.stage2.log_every;
    return d;
}

struct DatasetPaths {
    std::string train, valid, test;
};

DatasetPaths dataset_paths(const std::string& dir) {
    fs::path base(resolve(dir));
    return {(base / "train.jsonl").string(), (base / "valid.jsonl").string(),
            (base / "test.jsonl").string()};
}

std::string csv_sibling(const std::string& json_path) {
    fs::path p(json_path);
    p.replace_extension(".csv");
    return p.string();
}

int cmd_gen_world(const std::string& config_path, std::optional<std::uint64_t> seed,
                  const std::string& out) {
    config::Config cfg = load_or_default(config_path);
    std::uint64_t s = seed.value_or(cfg.seed);
    synthworld::World world = synthworld::gen_world(cfg.world, s);
    serialize::write_file(resolve(out), synthworld::world_to_json(world));
    std::cout << "event=gen-world seed=" << s << " users=" << world.users.size()
              << " items=" << world.items.size() << " out=" << out << "\n";
    return 0;
}

int cmd_build_dataset(const std::string& config_path, const std::string& world_path,
                      const std::string& out_dir) {
    config::Config cfg = load_or_default(config_path);
    synthworld::World world = load_world(world_path);
    Rng rng(cfg.seed ^ 0xdadau);

    std::vector<synthworld::Sample> pool;
    for (const synthworld::UserProfile& user : world.users) {
        auto interactions = synthworld::sample_interactions(
            world, user, cfg.interactions_per_user, rng.fork(user.user_id + 1).next_u64());
        auto samples = synthworld::build_samples(interactions, cfg.window, user.user_id);
        pool.insert(pool.end(), samples.begin(), samples.end());
    }

    std::array<double, 3> ratios{cfg.split_ratios[0], cfg.split_ratios[1], cfg.split_ratios[2]};
    synthworld::SplitResult split =
        synthworld::split_samples(pool, ratios, cfg.seed ^ 0xbeefu);

    // training and validation always reconstruct the target; the test split
    // follows the configured scenario
    synthworld::Scenario test_scenario = synthworld::scenario_from_name(cfg.scenario);
    auto attach_all = [&](std::vector<synthworld::Sample>& samples,
                          synthworld::Scenario scenario, std::uint64_t salt) {
        for (std::size_t i = 0; i < samples.size(); ++i)
            samples[i] = synthworld::attach_reference(samples[i], scenario,
                                                      rng.fork(salt + i).next_u64(), world);
    };
    attach_all(split.train, synthworld::Scenario::poster_like, 1000000);
    attach_all(split.valid, synthworld::Scenario::poster_like, 2000000);
    attach_all(split.test, test_scenario, 3000000);

    fs::create_directories(resolve(out_dir));
    DatasetPaths paths = dataset_paths(out_dir);
    serialize::write_file(paths.train, synthworld::samples_to_jsonl(split.train));
    serialize::write_file(paths.valid, synthworld::samples_to_jsonl(split.valid));
    serialize::write_file(paths.test, synthworld::samples_to_jsonl(split.test));
    std::cout << "event=build-dataset train=" << split.train.size()
              << " valid=" << split.valid.size() << " test=" << split.test.size()
              << " scenario=" << cfg.scenario << "\n";
    return 0;
}

int cmd_train_stage1(const std::string& config_path, const std::string& world_path,
                     const std::string& data_dir, const std::string& out) {
    config::Config cfg = load_or_default(config_path);
    synthworld::World world = load_world(world_path);
    DatasetPaths paths = dataset_paths(data_dir);
    auto train = synthworld::samples_from_jsonl(serialize::read_file(paths.train), world);

    personalize::PigeonModel model = checkpoint::init_model(cfg, world);
    align::TrainResult result = align::train_stage1(train, model, stage1_config(cfg));

    checkpoint::Checkpoint ckpt;
    ckpt.stage = "stage1";
    ckpt.config = cfg;
    ckpt.model = std::move(model);
    ckpt.metrics = {{"final_loss", result.loss_curve.back()},
                    {"initial_loss", result.loss_curve.front()},
                    {"steps", result.loss_curve.size()}};
    checkpoint::save_checkpoint(resolve(out), ckpt);
    std::cout << "event=train-stage1 steps=" << result.loss_curve.size()
              << " final_loss=" << result.loss_curve.back() << " out=" << out << "\n";
    return 0;
}

int cmd_build_prefs(const std::string& config_path, const std::string& ckpt_path,
                    const std::string& world_path, const std::string& data_dir,
                    const std::string& out) {
    config::Config cfg = load_or_default(config_path);
    checkpoint::Checkpoint ckpt = load_ckpt(ckpt_path);
    synthworld::World world = load_world(world_path);
    DatasetPaths paths = dataset_paths(data_dir);
    auto prompts = synthworld::samples_from_jsonl(serialize::read_file(paths.train), world);

    align::PairBuildConfig pb;
    pb.grid = cfg.stage2.grid;
    pb.alpha_h = cfg.stage1.alpha_h;
    pb.gen.mode = personalize::gen_mode_from_name(cfg.eval.mode);
    pb.gen.max_len = cfg.eval.max_len;
    pb.max_prompts = cfg.stage2.max_prompts;
    Embedder embedder = Embedder::plain(world.render_codebook);
    align::PairBuildResult result =
        align::build_preference_pairs(ckpt.model, prompts, pb, embedder, cfg.seed ^ 0xabcdu);

    serialize::write_file(resolve(out), align::pairs_to_jsonl(result.pairs));
    std::cout << "event=build-prefs pairs=" << result.pairs.size()
              << " skipped=" << result.skipped << " out=" << out << "\n";
    return 0;
}

int cmd_train_stage2(const std::string& config_path, const std::string& ckpt_path,
                     const std::string& world_path, const std::string& data_dir,
                     const std::string& prefs_path, const std::string& out) {
    config::Config cfg = load_or_default(config_path);
    checkpoint::Checkpoint ckpt = load_ckpt(ckpt_path);
    if (ckpt.stage != "stage1") throw data_error("train-stage2 needs a stage-1 checkpoint");
    synthworld::World world = load_world(world_path);
    DatasetPaths paths = dataset_paths(data_dir);
    auto prompts = synthworld::samples_from_jsonl(serialize::read_file(paths.train), world);
    if (prefs_path.empty()) throw usage_error("missing --prefs");
    auto pairs = align::pairs_from_jsonl(serialize::read_file(resolve(prefs_path)));

    align::LoraState reference = align::snapshot_lora(ckpt.model);
    std::string ref_hash = checkpoint::lora_hash(ckpt.model);
    align::TrainResult result =
        align::train_stage2(pairs, prompts, ckpt.model, reference, stage2_config(cfg));

    checkpoint::Checkpoint out_ckpt;
    out_ckpt.stage = "stage2";
    out_ckpt.config = cfg;
    out_ckpt.ref_policy_hash = ref_hash;
    out_ckpt.model = std::move(ckpt.model);
    out_ckpt.metrics = {{"final_loss", result.loss_curve.back()},
                        {"initial_loss", result.loss_curve.front()},
                        {"steps", result.loss_curve.size()}};
    checkpoint::save_checkpoint(resolve(out), out_ckpt);
    std::cout << "event=train-stage2 steps=" << result.loss_curve.size()
              << " final_loss=" << result.loss_curve.back() << " out=" << out << "\n";
    return 0;
}

int cmd_generate(const std::string& config_path, const std::string& ckpt_path,
                 const std::string& world_path, const std::string& data_path,
                 std::optional<double> alpha_r, std::optional<double> alpha_h,
                 const std::string& mode, std::optional<int> max_len,
                 std::optional<std::uint64_t> seed, int max_samples, const std::string& stage,
                 const std::string& out) {
    config::Config cfg = load_or_default(config_path);
    checkpoint::Checkpoint ckpt = load_ckpt(ckpt_path, stage);
    synthworld::World world = load_world(world_path);
    auto samples = load_samples(data_path, world);

    personalize::MaskSettings masks;
    masks.alpha_h = alpha_h.value_or(cfg.eval.alpha_h);
    masks.alpha_r = alpha_r.value_or(cfg.eval.alpha_r);
    personalize::GenConfig gen;
    gen.mode = personalize::gen_mode_from_name(mode.empty() ? cfg.eval.mode : mode);
    gen.max_len = max_len.value_or(cfg.eval.max_len);
    gen.seed = seed.value_or(cfg.eval.gen_seed);

    const int n = max_samples > 0 ? std::min<int>(max_samples, samples.size())
                                  : static_cast<int>(samples.size());
    std::ostringstream lines;
    for (int i = 0; i < n; ++i) {
        tokenizer::TokenSequence seq = personalize::generate_for_sample(
            ckpt.model, samples[i], masks, personalize::PromptVariant::full, gen);
        nlohmann::json j{{"index", i},
                         {"user_id", samples[i].user_id},
                         {"alpha_r", masks.alpha_r},
                         {"tokens", seq.ids}};
        lines << j.dump() << "\n";
    }
    serialize::write_file(resolve(out), lines.str());
    std::cout << "event=generate samples=" << n << " alpha_r=" << masks.alpha_r
              << " out=" << out << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt_path,
                 const std::string& world_path, const std::string& data_path,
                 std::optional<double> alpha_r, std::optional<double> alpha_h,
                 const std::string& policy, int max_samples, const std::string& stage,
                 const std::string& out) {
    config::Config cfg = load_or_default(config_path);
    checkpoint::Checkpoint ckpt = load_ckpt(ckpt_path, stage);
    synthworld::World world = load_world(world_path);
    auto samples = load_samples(data_path, world);

    evalsuite::EvalConfig ec = eval_config(cfg);
    if (alpha_r) ec.alpha_r = *alpha_r;
    if (alpha_h) ec.alpha_h = *alpha_h;
    if (!policy.empty())
        ec.policy = policy == "select" ? evalsuite::EvalConfig::AlphaPolicy::select
                                       : evalsuite::EvalConfig::AlphaPolicy::fixed;
    if (max_samples > 0) ec.max_samples = max_samples;

    evalsuite::MetricsReport report = evalsuite::evaluate(ckpt.model, samples, ec, &world);
    serialize::write_file(resolve(out), evalsuite::report_to_json(report).dump(2) + "\n");
    serialize::write_file(csv_sibling(resolve(out)), evalsuite::report_to_csv(report));
    std::cout << "event=evaluate overall=" << report.overall
              << " personalization_cis=" << report.personalization.cis
              << " alignment_cs=" << report.semantic_alignment.cs << " out=" << out << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& ckpt_path,
              const std::string& stage2_path, const std::string& world_path,
              const std::string& data_path, const std::string& axis_name,
              const std::vector<double>& grid, int max_samples, const std::string& out) {
    config::Config cfg = load_or_default(config_path);
    checkpoint::Checkpoint ckpt = load_ckpt(ckpt_path);
    synthworld::World world = load_world(world_path);
    auto samples = load_samples(data_path, world);

    evalsuite::SweepAxis axis = evalsuite::sweep_axis_from_name(axis_name);
    std::optional<checkpoint::Checkpoint> stage2;
    if (!stage2_path.empty()) stage2 = checkpoint::load_checkpoint(resolve(stage2_path));

    evalsuite::EvalConfig ec = eval_config(cfg);
    if (max_samples > 0) ec.max_samples = max_samples;
    std::vector<double> g = grid.empty() ? cfg.eval.grid : grid;

    evalsuite::SweepResult sweep =
        evalsuite::run_sweep(ckpt.model, stage2 ? &stage2->model : nullptr, axis, g, samples,
                             ec, &world);
    serialize::write_file(resolve(out), evalsuite::sweep_to_json(sweep).dump(2) + "\n");
    serialize::write_file(csv_sibling(resolve(out)), evalsuite::sweep_to_csv(sweep));
    std::cout << "event=sweep axis=" << axis_name << " points=" << sweep.points.size()
              << " out=" << out << "\n";
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"desk-scale personalized generation pipeline"};
    app.require_subcommand(1);

    std::string config_path, world_path, data_path, data_dir, out_path, prefs_path;
    std::string ckpt_path, stage2_path, mode, axis, policy, stage;
    std::optional<std::uint64_t> seed_opt;
    std::optional<double> alpha_r_opt, alpha_h_opt;
    std::optional<int> max_len_opt;
    int max_samples = 0;
    std::vector<double> grid;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "configuration file");
    };

    CLI::App* genw = app.add_subcommand("gen-world", "generate a synthetic world");
    add_common(genw);
    genw->add_option("--seed", seed_opt, "world seed (overrides config)");
    genw->add_option("--out", out_path, "output world file")->required();

    CLI::App* bds = app.add_subcommand("build-dataset", "build train/valid/test splits");
    add_common(bds);
    bds->add_option("--world", world_path, "world file")->required();
    bds->add_option("--out-dir", data_dir, "output directory")->required();

    CLI::App* ts1 = app.add_subcommand("train-stage1", "masked reconstruction fine-tuning");
    add_common(ts1);
    ts1->add_option("--world", world_path)->required();
    ts1->add_option("--data-dir", data_dir)->required();
    ts1->add_option("--out", out_path, "output checkpoint")->required();

    CLI::App* bpf = app.add_subcommand("build-prefs", "rank generations into preference pairs");
    add_common(bpf);
    bpf->add_option("--checkpoint", ckpt_path)->required();
    bpf->add_option("--world", world_path)->required();
    bpf->add_option("--data-dir", data_dir)->required();
    bpf->add_option("--out", out_path, "output pairs file")->required();

    CLI::App* ts2 = app.add_subcommand("train-stage2", "preference optimization on LoRA");
    add_common(ts2);
    ts2->add_option("--checkpoint", ckpt_path, "stage-1 checkpoint")->required();
    ts2->add_option("--world", world_path)->required();
    ts2->add_option("--data-dir", data_dir)->required();
    ts2->add_option("--prefs", prefs_path, "preference pairs file")->required();
    ts2->add_option("--out", out_path, "output checkpoint")->required();

    CLI::App* gen = app.add_subcommand("generate", "generate token sequences");
    add_common(gen);
    gen->add_option("--checkpoint", ckpt_path)->required();
    gen->add_option("--world", world_path)->required();
    gen->add_option("--data", data_path)->required();
    gen->add_option("--alpha-r", alpha_r_opt);
    gen->add_option("--alpha-h", alpha_h_opt);
    gen->add_option("--mode", mode, "greedy | top-k | temperature");
    gen->add_option("--max-len", max_len_opt);
    gen->add_option("--seed", seed_opt);
    gen->add_option("--max-samples", max_samples);
    gen->add_option("--stage", stage, "require this checkpoint stage");
    gen->add_option("--out", out_path)->required();

    CLI::App* ev = app.add_subcommand("evaluate", "run the metric suite");
    add_common(ev);
    ev->add_option("--checkpoint", ckpt_path)->required();
    ev->add_option("--world", world_path)->required();
    ev->add_option("--data", data_path)->required();
    ev->add_option("--alpha-r", alpha_r_opt);
    ev->add_option("--alpha-h", alpha_h_opt);
    ev->add_option("--alpha-r-policy", policy, "fixed | select");
    ev->add_option("--max-samples", max_samples);
    ev->add_option("--stage", stage, "require this checkpoint stage");
    ev->add_option("--out", out_path)->required();

    CLI::App* sw = app.add_subcommand("sweep", "evaluate across a grid");
    add_common(sw);
    sw->add_option("--checkpoint", ckpt_path)->required();
    sw->add_option("--stage2-checkpoint", stage2_path, "needed for the stage axis");
    sw->add_option("--world", world_path)->required();
    sw->add_option("--data", data_path)->required();
    sw->add_option("--axis", axis, "alpha_h | alpha_r | no_history_mask | ref_mask_scheme | stage")
        ->required();
    sw->add_option("--grid", grid, "grid values")->delimiter(',');
    sw->add_option("--max-samples", max_samples);
    sw->add_option("--out", out_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (genw->parsed()) return cmd_gen_world(config_path, seed_opt, out_path);
        if (bds->parsed()) return cmd_build_dataset(config_path, world_path, data_dir);
        if (ts1->parsed()) return cmd_train_stage1(config_path, world_path, data_dir, out_path);
        if (bpf->parsed())
            return cmd_build_prefs(config_path, ckpt_path, world_path, data_dir, out_path);
        if (ts2->parsed())
            return cmd_train_stage2(config_path, ckpt_path, world_path, data_dir, prefs_path,
                                    out_path);
        if (gen->parsed())
            return cmd_generate(config_path, ckpt_path, world_path, data_path, alpha_r_opt,
                                alpha_h_opt, mode, max_len_opt, seed_opt, max_samples, stage,
                                out_path);
        if (ev->parsed())
            return cmd_evaluate(config_path, ckpt_path, world_path, data_path, alpha_r_opt,
                                alpha_h_opt, policy, max_samples, stage, out_path);
        if (sw->parsed())
            return cmd_sweep(config_path, ckpt_path, stage2_path, world_path, data_path, axis,
                             grid, max_samples, out_path);
        throw usage_error("no command given");
    } catch (const usage_error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const pigeon::error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace pigeon::cli
