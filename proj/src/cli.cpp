#include "prefdrive/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>

#include "prefdrive/dqn.hpp"
#include "prefdrive/env.hpp"
#include "prefdrive/hdca.hpp"
#include "prefdrive/io.hpp"
#include "prefdrive/metrics.hpp"
#include "prefdrive/nn.hpp"
#include "prefdrive/reward.hpp"
#include "prefdrive/synth.hpp"
#include "prefdrive/tag.hpp"

namespace prefdrive::cli {

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    bool seed_given = false;
    bool strict_repro = false;
    std::string preset;  // paper | desk ("" = config or paper)
    std::string subject; // 1..10 | control | measured | tpr,fpr
    std::string checkpoint;
    int episodes = 0;
    std::string episodes_csv;
    std::string train_log;
    std::string qtrace_csv;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "key=value config file");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "global seed")->each([&](const std::string&) {
        opts.seed_given = true;
    });
    cmd->add_flag("--strict-repro", opts.strict_repro, "require an explicit seed");
}

void add_run_opts(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--preset", opts.preset, "paper (3x64x64) or desk (3x32x32)");
    cmd->add_option("--subject", opts.subject,
                    "1..10 (study table), control, measured (from the tag stage), or tpr,fpr");
}

io::KeyValueConfig load_config(const CommonOpts& opts) {
    io::KeyValueConfig cfg;
    if (!opts.config_path.empty()) cfg = io::KeyValueConfig::parse_file(opts.config_path);
    if (opts.strict_repro && !opts.seed_given)
        throw ConfigError("--strict-repro requires an explicit --seed");
    return cfg;
}

std::string out_path(const CommonOpts& opts, const std::string& name) {
    return opts.out_dir + "/" + name;
}

void require_file(const std::string& path, const std::string& stage) {
    if (!std::filesystem::exists(path))
        throw ConfigError(stage + ": missing input file " + path);
}

void write_manifest(const CommonOpts& opts, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    std::string body;
    body += "command=" + command + "\n";
    body += "seed=" + std::to_string(opts.seed) + "\n";
    body += "version=1\n";
    if (!opts.config_path.empty()) {
        std::ostringstream hash;
        hash << std::hex << io::fnv1a_file(opts.config_path);
        body += "config_hash=" + hash.str() + "\n";
    }
    for (const auto& [key, value] : extra) body += key + "=" + value + "\n";
    io::write_text_file(out_path(opts, "manifest_" + command + ".txt"), body);
}

std::string resolve_preset(const CommonOpts& opts, const io::KeyValueConfig& cfg) {
    const std::string preset =
        !opts.preset.empty() ? opts.preset : cfg.get_string("run.preset", "paper");
    if (preset != "paper" && preset != "desk")
        throw ConfigError("unknown preset '" + preset + "' (expected paper or desk)");
    return preset;
}

env::WorldConfig world_for(const io::KeyValueConfig& cfg, const std::string& preset) {
    auto world = env::world_from_config(cfg);
    if (!cfg.has("env.frame_size")) world.frame_size = preset == "desk" ? 32 : 64;
    world.validate();
    return world;
}

nn::NetConfig net_for(const std::string& preset) {
    return preset == "desk" ? nn::NetConfig::desk() : nn::NetConfig::paper();
}

struct SubjectChoice {
    reward::SubjectProfile profile;
    std::string describe;
};

SubjectChoice resolve_subject(const CommonOpts& opts, const io::KeyValueConfig& cfg,
                              const std::string& fallback) {
    std::string spec = !opts.subject.empty() ? opts.subject
                                             : cfg.get_string("reward.subject", fallback);
    if (spec == "control") return {reward::control_profile(), "control"};
    if (spec == "measured") {
        const std::string path = out_path(opts, "tag_summary.txt");
        require_file(path, "subject 'measured'");
        const auto summary = io::KeyValueConfig::parse_file(path);
        reward::SubjectProfile profile;
        profile.tpr = summary.get_double("tag.tpr", -1.0);
        profile.fpr = summary.get_double("tag.fpr", -1.0);
        if (profile.tpr < 0.0 || profile.fpr < 0.0)
            throw ConfigError("subject 'measured': " + path + " lacks tag.tpr / tag.fpr");
        profile.validate();
        return {profile, "measured tpr=" + io::fmt(profile.tpr) + " fpr=" + io::fmt(profile.fpr)};
    }
    if (spec.rfind("custom:", 0) == 0) spec = spec.substr(7);
    const auto comma = spec.find(',');
    if (comma != std::string::npos) {
        try {
            reward::SubjectProfile profile;
            profile.tpr = std::stod(spec.substr(0, comma));
            profile.fpr = std::stod(spec.substr(comma + 1));
            profile.validate();
            return {profile, "custom tpr=" + io::fmt(profile.tpr) +
                                 " fpr=" + io::fmt(profile.fpr)};
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad custom subject '" + spec + "' (expected tpr,fpr)");
        }
    }
    try {
        const int id = std::stoi(spec);
        return {reward::subject_preset(id), "table:" + std::to_string(id)};
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("unknown subject '" + spec +
                          "' (expected 1..10, control, measured, or tpr,fpr)");
    }
}

dqn::TrainConfig traincfg_from(const io::KeyValueConfig& cfg, std::uint64_t seed) {
    dqn::TrainConfig tc;
    tc.gamma = cfg.get_double("dqn.gamma", tc.gamma);
    tc.eps.start = cfg.get_double("dqn.eps_start", tc.eps.start);
    tc.eps.end = cfg.get_double("dqn.eps_end", tc.eps.end);
    tc.eps.decay_steps = cfg.get_int("dqn.eps_decay_steps", tc.eps.decay_steps);
    tc.batch_size = static_cast<int>(cfg.get_int("dqn.batch_size", tc.batch_size));
    tc.sync_period = cfg.get_int("dqn.sync_period", tc.sync_period);
    tc.buffer_capacity = static_cast<std::size_t>(
        cfg.get_int("dqn.buffer_capacity", static_cast<std::int64_t>(tc.buffer_capacity)));
    tc.warmup_steps = cfg.get_int("dqn.warmup_steps", tc.warmup_steps);
    tc.total_steps = cfg.get_int("dqn.total_steps", tc.total_steps);
    tc.train_period = cfg.get_int("dqn.train_period", tc.train_period);
    tc.probe_size = static_cast<int>(cfg.get_int("dqn.probe_size", tc.probe_size));
    tc.qtrace_period = cfg.get_int("dqn.qtrace_period", tc.qtrace_period);
    tc.seed = seed;
    tc.alpha = cfg.get_double("dqn.alpha", tc.alpha);
    const auto rule = cfg.get_string("dqn.target_rule", "double");
    if (rule == "double")
        tc.target_rule = dqn::TargetRule::double_q;
    else if (rule == "paper_literal")
        tc.target_rule = dqn::TargetRule::paper_literal;
    else
        throw ConfigError("dqn.target_rule must be double or paper_literal, got '" + rule + "'");
    const auto update = cfg.get_string("dqn.update_rule", "adam");
    if (update == "adam")
        tc.update_rule = nn::UpdateRule::adam;
    else if (update == "plain")
        tc.update_rule = nn::UpdateRule::plain;
    else
        throw ConfigError("dqn.update_rule must be adam or plain, got '" + update + "'");
    tc.validate();
    return tc;
}

reward::RewardConfig reward_from(const io::KeyValueConfig& cfg) {
    reward::RewardConfig rc;
    rc.weights.w1 = cfg.get_double("reward.w1", rc.weights.w1);
    rc.weights.w2 = cfg.get_double("reward.w2", rc.weights.w2);
    rc.weights.w3 = cfg.get_double("reward.w3", rc.weights.w3);
    rc.per_frame_omega = cfg.get_bool("reward.per_frame_omega", rc.per_frame_omega);
    return rc;
}

Category category_from(const std::string& text, const std::string& what) {
    if (text == "target") return Category::target;
    if (text == "nontarget") return Category::nontarget;
    throw ConfigError(what + ": unknown category '" + text + "'");
}

// split one CSV line on commas
std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    return cells;
}

// Assigned labels for the world's fixed placement. Sources:
//   true     perfect labeler
//   subject  per-object draw against the subject's tpr/fpr
//   tag      sample an assigned label among tag-stage objects of the same
//            true category (reproduces the measured labeler on new objects)
std::vector<Category> world_labels(const env::WorldConfig& world, std::uint64_t seed,
                                   const std::string& source, const std::string& tag_labels_path,
                                   const reward::SubjectProfile& subject) {
    const auto objects = env::place_objects(world, seed);
    std::vector<Category> labels;
    labels.reserve(objects.size());

    if (source == "true") {
        for (const auto& obj : objects) labels.push_back(obj.true_category);
        return labels;
    }
    if (source == "subject") {
        Rng rng = Rng(seed).derive("labels");
        for (const auto& obj : objects) {
            const double omega = rng.uniform01();
            const double rate = obj.true_category == Category::target ? subject.tpr : subject.fpr;
            labels.push_back(omega < rate ? Category::target : Category::nontarget);
        }
        return labels;
    }
    if (source == "tag") {
        require_file(tag_labels_path, "labels source 'tag'");
        std::istringstream in(io::read_text_file(tag_labels_path));
        std::string line;
        if (!std::getline(in, line) || line != "object_id,true_category,assigned_label,score")
            throw ConfigError("labels source 'tag': unexpected header in " + tag_labels_path);
        std::vector<Category> pool[2];
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = split_line(line);
            if (cells.size() != 4)
                throw ConfigError("labels source 'tag': bad row '" + line + "'");
            const auto truth = category_from(cells[1], "tag labels");
            pool[static_cast<int>(truth)].push_back(category_from(cells[2], "tag labels"));
        }
        Rng rng = Rng(seed).derive("labels");
        for (const auto& obj : objects) {
            const auto& candidates = pool[static_cast<int>(obj.true_category)];
            if (candidates.empty())
                throw ConfigError("labels source 'tag': no labeled objects of category " +
                                  std::string(to_string(obj.true_category)));
            labels.push_back(candidates[rng.uniform_int(candidates.size())]);
        }
        return labels;
    }
    throw ConfigError("train.label_source must be tag, subject, or true, got '" + source + "'");
}

std::string labels_csv(const env::WorldConfig& world, std::uint64_t seed,
                       const std::vector<Category>& labels) {
    const auto objects = env::place_objects(world, seed);
    std::ostringstream out;
    out << "alley_index,position,true_category,assigned_label\n";
    for (std::size_t i = 0; i < objects.size(); ++i)
        out << objects[i].alley_index << ',' << io::fmt(objects[i].position) << ','
            << to_string(objects[i].true_category) << ',' << to_string(labels[i]) << '\n';
    return out.str();
}

std::vector<Category> labels_from_csv(const std::string& path) {
    std::istringstream in(io::read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "alley_index,position,true_category,assigned_label")
        throw ConfigError("labels file: unexpected header in " + path);
    std::vector<Category> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != 4) throw ConfigError("labels file: bad row '" + line + "'");
        labels.push_back(category_from(cells[3], "labels file"));
    }
    return labels;
}

// shared by train and eval so both stages see the same world labeling
std::vector<Category> resolve_labels(const CommonOpts& opts, const io::KeyValueConfig& cfg,
                                     const env::WorldConfig& world,
                                     const reward::SubjectProfile& subject,
                                     std::string* source_used) {
    const std::string tag_path = out_path(opts, "tag_labels.csv");
    std::string source = cfg.get_string("train.label_source", "");
    if (source.empty())
        source = std::filesystem::exists(tag_path) ? "tag" : "subject";
    const auto labels = world_labels(world, opts.seed, source, tag_path, subject);
    if (source_used) *source_used = source;
    return labels;
}

synth::SeparabilityConfig sep_from_config(const io::KeyValueConfig& cfg) {
    synth::SeparabilityConfig sep;
    sep.eeg_effect = cfg.get_double("synth.eeg_effect", sep.eeg_effect);
    sep.pupil_effect = cfg.get_double("synth.pupil_effect", sep.pupil_effect);
    sep.gaze_effect = cfg.get_double("synth.gaze_effect", sep.gaze_effect);
    sep.eeg_noise = cfg.get_double("synth.eeg_noise", sep.eeg_noise);
    sep.pupil_noise = cfg.get_double("synth.pupil_noise", sep.pupil_noise);
    sep.gaze_noise = cfg.get_double("synth.gaze_noise", sep.gaze_noise);
    sep.correlation = cfg.get_double("synth.correlation", sep.correlation);
    sep.n_components = static_cast<int>(cfg.get_int("synth.n_components", sep.n_components));
    return sep;
}

int cmd_synth(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const int n_trials = static_cast<int>(cfg.get_int("synth.n_trials", 2000));
    const int n_objects = static_cast<int>(cfg.get_int("synth.n_objects", 400));
    const double target_rate = cfg.get_double("synth.target_rate", 0.25);
    const double cluster_sep = cfg.get_double("synth.cluster_sep", 4.0);
    const auto sep = sep_from_config(cfg);

    io::ensure_directory(opts.out_dir);
    const auto trials = synth::gen_trials(n_trials, target_rate, sep, opts.seed);
    io::write_text_file(out_path(opts, "trials.csv"), synth::trials_to_csv(trials));
    const auto objs = synth::gen_object_features(n_objects, target_rate, cluster_sep, opts.seed);
    io::write_text_file(out_path(opts, "object_features.csv"), synth::features_to_csv(objs));
    write_manifest(opts, "synth");
    return 0;
}

int cmd_hdca(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const std::string trials_path = cfg.get_string("hdca.trials", out_path(opts, "trials.csv"));
    require_file(trials_path, "trials");
    const auto trials = synth::trials_from_csv(io::read_text_file(trials_path));

    hdca::FitConfig fc;
    fc.train_frac = cfg.get_double("hdca.train_frac", fc.train_frac);
    fc.eval_frac = cfg.get_double("hdca.eval_frac", fc.eval_frac);
    fc.lambda = cfg.get_double("hdca.lambda", fc.lambda);
    fc.ridge_scale = cfg.get_double("hdca.ridge_scale", fc.ridge_scale);
    fc.max_iters = static_cast<int>(cfg.get_int("hdca.max_iters", fc.max_iters));
    fc.tol = cfg.get_double("hdca.tol", fc.tol);

    const auto result = hdca::fit(trials, fc, opts.seed);

    io::ensure_directory(opts.out_dir);
    io::write_text_file(out_path(opts, "hdca_model.txt"), hdca::save_model(result.model));

    const std::set<int> predicted(result.test.predicted.begin(), result.test.predicted.end());
    std::ostringstream scores;
    scores << "trial,category,score,predicted\n";
    for (std::size_t i = 0; i < result.test_scores.size(); ++i)
        scores << result.split.test[i] << ',' << to_string(result.test_categories[i]) << ','
               << io::fmt(result.test_scores[i]) << ','
               << (predicted.count(static_cast<int>(i)) ? 1 : 0) << '\n';
    io::write_text_file(out_path(opts, "hdca_scores.csv"), scores.str());

    const auto f1 = metrics::f1_from_rates(result.test.tpr, result.test.fpr);
    std::string summary;
    summary += "hdca.tpr=" + io::fmt(result.test.tpr) + "\n";
    summary += "hdca.fpr=" + io::fmt(result.test.fpr) + "\n";
    summary += "hdca.threshold=" + io::fmt(result.test.threshold) + "\n";
    summary += "hdca.auc=" + io::fmt(result.test_auc) + "\n";
    summary += "hdca.f1=" + io::fmt(f1.f1) + "\n";
    io::write_text_file(out_path(opts, "hdca_summary.txt"), summary);
    write_manifest(opts, "hdca");
    std::fprintf(stderr, "hdca: auc %.4f tpr %.4f fpr %.4f over %zu test trials\n",
                 result.test_auc, result.test.tpr, result.test.fpr, result.test_scores.size());
    return 0;
}

int cmd_tag(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const std::string feats_path = out_path(opts, "object_features.csv");
    const std::string scores_path = out_path(opts, "hdca_scores.csv");
    require_file(feats_path, "object features");
    require_file(scores_path, "classifier scores");

    const auto objects = synth::features_from_csv(io::read_text_file(feats_path));
    if (objects.empty()) throw ConfigError("tag: no object features in " + feats_path);

    // test-split hBCI verdicts, pooled by true category
    std::vector<int> verdicts[2]; // per category: predicted flags
    {
        std::istringstream in(io::read_text_file(scores_path));
        std::string line;
        if (!std::getline(in, line) || line != "trial,category,score,predicted")
            throw ConfigError("tag: unexpected header in " + scores_path);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = split_line(line);
            if (cells.size() != 4) throw ConfigError("tag: bad row '" + line + "'");
            const auto category = category_from(cells[1], "tag");
            verdicts[static_cast<int>(category)].push_back(cells[3] == "1" ? 1 : 0);
        }
    }

    const double seen_fraction = cfg.get_double("tag.seen_fraction", 0.1);
    if (seen_fraction <= 0.0 || seen_fraction > 1.0)
        throw ConfigError("tag.seen_fraction outside (0,1]");
    const int k = static_cast<int>(cfg.get_int("tag.k", 0));
    const double alpha = cfg.get_double("tag.alpha", 0.15);

    const auto graph = k > 0 ? tag::build_graph(objects, k) : tag::build_graph_auto(objects);

    // the passenger "sees" a random subset; each seen object inherits the
    // hBCI verdict of a matched same-category trial
    Rng rng = Rng(opts.seed).derive("tag-seen");
    std::vector<int> order(objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
    const std::size_t n_seen = std::min<std::size_t>(
        objects.size(),
        std::max<std::size_t>(1, static_cast<std::size_t>(
                                     std::lround(seen_fraction * static_cast<double>(objects.size())))));

    std::vector<int> predicted_positive;
    for (std::size_t s = 0; s < n_seen; ++s) {
        const int index = order[s];
        const auto& pool = verdicts[static_cast<int>(objects[static_cast<std::size_t>(index)].category)];
        if (pool.empty())
            throw ConfigError("tag: no test trials of category " +
                              std::string(to_string(objects[static_cast<std::size_t>(index)].category)));
        if (pool[rng.uniform_int(pool.size())]) predicted_positive.push_back(index);
    }
    if (predicted_positive.empty())
        throw ConfigError("tag: matched hBCI verdicts contain no positives; "
                          "increase tag.seen_fraction or improve the classifier");
    std::sort(predicted_positive.begin(), predicted_positive.end());

    const auto tuned = tag::tune_labels(graph, predicted_positive);
    std::vector<double> residuals;
    const auto scores = tag::propagate(graph, tuned, alpha, 1e-8, 1000, &residuals);
    const auto gmm = tag::fit_gmm2(scores);

    std::vector<Category> truth;
    truth.reserve(objects.size());
    for (const auto& obj : objects) truth.push_back(obj.category);
    const auto cv = tag::cv_predicted_targets(scores, gmm, truth);

    io::ensure_directory(opts.out_dir);
    std::ostringstream labels_out;
    labels_out << "object_id,true_category,assigned_label,score\n";
    for (std::size_t i = 0; i < objects.size(); ++i)
        labels_out << objects[i].object_id << ',' << to_string(objects[i].category) << ','
                   << to_string(cv.labels[i]) << ',' << io::fmt(scores[i]) << '\n';
    io::write_text_file(out_path(opts, "tag_labels.csv"), labels_out.str());
    io::write_text_file(out_path(opts, "tag_graph.csv"), tag::graph_to_csv(graph));
    io::write_text_file(out_path(opts, "tag_gmm.json"), tag::gmm_to_json(gmm));

    std::string summary;
    summary += "tag.tpr=" + io::fmt(cv.tpr) + "\n";
    summary += "tag.fpr=" + io::fmt(cv.fpr) + "\n";
    summary += "tag.f1=" + io::fmt(cv.f1) + "\n";
    summary += "tag.k=" + std::to_string(graph.k) + "\n";
    summary += "tag.edges=" + std::to_string(graph.edge_count()) + "\n";
    summary += "tag.seen=" + std::to_string(n_seen) + "\n";
    summary += "tag.seeds=" + std::to_string(predicted_positive.size()) + "\n";
    summary += "tag.propagate_iters=" + std::to_string(residuals.size()) + "\n";
    io::write_text_file(out_path(opts, "tag_summary.txt"), summary);
    write_manifest(opts, "tag");
    std::fprintf(stderr, "tag: tpr %.4f fpr %.4f f1 %.4f (%zu objects, %zu seen)\n", cv.tpr,
                 cv.fpr, cv.f1, objects.size(), n_seen);
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const auto preset = resolve_preset(opts, cfg);
    const auto world = world_for(cfg, preset);
    const auto netcfg = net_for(preset);
    const auto subject = resolve_subject(opts, cfg, "control");
    const auto rewards = reward_from(cfg);
    const auto tc = traincfg_from(cfg, opts.seed);

    std::string label_source;
    const auto labels = resolve_labels(opts, cfg, world, subject.profile, &label_source);
    io::ensure_directory(opts.out_dir);
    io::write_text_file(out_path(opts, "train_labels.csv"),
                        labels_csv(world, opts.seed, labels));

    const auto start = std::chrono::steady_clock::now();
    const auto result = dqn::run_training(world, labels, subject.profile, rewards, netcfg, tc);
    const double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    nn::save(result.online, out_path(opts, "qnet.ckpt"));
    io::write_text_file(out_path(opts, "episode_log.csv"),
                        dqn::episode_log_to_csv(result.episodes));
    io::write_text_file(out_path(opts, "qtrace.csv"), dqn::qtrace_to_csv(result.qtrace));

    std::string summary;
    summary += "train.preset=" + preset + "\n";
    summary += "train.subject=" + subject.describe + "\n";
    summary += "train.tpr=" + io::fmt(subject.profile.tpr) + "\n";
    summary += "train.fpr=" + io::fmt(subject.profile.fpr) + "\n";
    summary += "train.label_source=" + label_source + "\n";
    summary += "train.episodes=" + std::to_string(result.episodes.size()) + "\n";
    summary += "train.steps=" + io::fmt(static_cast<std::int64_t>(tc.total_steps)) + "\n";
    io::write_text_file(out_path(opts, "train_summary.txt"), summary);
    write_manifest(opts, "train",
                   {{"preset", preset}, {"subject", subject.describe},
                    {"label_source", label_source}});
    std::fprintf(stderr, "train: %zu episodes over %lld steps in %.1f s\n",
                 result.episodes.size(), static_cast<long long>(tc.total_steps), wall_s);
    return 0;
}

int cmd_eval(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const auto preset = resolve_preset(opts, cfg);
    const auto world = world_for(cfg, preset);
    const auto subject = resolve_subject(opts, cfg, "control");
    const auto rewards = reward_from(cfg);

    const std::string ckpt =
        !opts.checkpoint.empty() ? opts.checkpoint : out_path(opts, "qnet.ckpt");
    require_file(ckpt, "checkpoint");
    const auto net = nn::load(ckpt);
    if (net.cfg.in_h != world.frame_size || net.cfg.in_w != world.frame_size)
        throw ConfigError("eval: checkpoint expects " + std::to_string(net.cfg.in_h) +
                          "px frames but the world renders " +
                          std::to_string(world.frame_size) + "px");

    const std::string saved_labels = out_path(opts, "train_labels.csv");
    std::vector<Category> labels;
    std::string label_source;
    if (std::filesystem::exists(saved_labels)) {
        labels = labels_from_csv(saved_labels);
        label_source = "train_labels.csv";
        if (labels.size() != static_cast<std::size_t>(env::occupied_count(world)))
            throw ConfigError("eval: " + saved_labels + " holds " +
                              std::to_string(labels.size()) + " labels but the world has " +
                              std::to_string(env::occupied_count(world)) + " occupied alleys");
    } else {
        labels = resolve_labels(opts, cfg, world, subject.profile, &label_source);
    }

    const int episodes = opts.episodes > 0
                             ? opts.episodes
                             : static_cast<int>(cfg.get_int("eval.episodes", 50));
    if (episodes < 1) throw ConfigError("eval: episode count must be positive");

    Rng seeds = Rng(opts.seed).derive("eval-seeds");
    std::vector<dqn::EpisodeLogRow> rows;
    rows.reserve(static_cast<std::size_t>(episodes));
    for (int i = 0; i < episodes; ++i) {
        auto row = dqn::evaluate_episode(world, labels, subject.profile, rewards, net, opts.seed,
                                         seeds.next_u64());
        row.episode = i;
        rows.push_back(std::move(row));
    }

    io::ensure_directory(opts.out_dir);
    io::write_text_file(out_path(opts, "eval_episodes.csv"), dqn::episode_log_to_csv(rows));
    double mean_run = 0.0;
    for (const auto& row : rows) mean_run += row.run_time_s;
    mean_run /= static_cast<double>(rows.size());
    std::string summary;
    summary += "eval.episodes=" + std::to_string(episodes) + "\n";
    summary += "eval.subject=" + subject.describe + "\n";
    summary += "eval.label_source=" + label_source + "\n";
    summary += "eval.mean_run_time_s=" + io::fmt(mean_run) + "\n";
    io::write_text_file(out_path(opts, "eval_summary.txt"), summary);
    write_manifest(opts, "eval", {{"checkpoint", ckpt}, {"subject", subject.describe}});
    std::fprintf(stderr, "eval: %d greedy episodes, mean run time %.1f s\n", episodes, mean_run);
    return 0;
}

int cmd_report(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const std::string episodes_path =
        !opts.episodes_csv.empty() ? opts.episodes_csv : out_path(opts, "eval_episodes.csv");
    require_file(episodes_path, "episode log");
    const auto rows = dqn::episode_log_from_csv(io::read_text_file(episodes_path));

    // Dwell totals scale with how many objects of each kind the road holds, so
    // compare per-object means; the world is rebuilt from the same config and
    // seed the eval stage used.
    const auto world = world_for(cfg, resolve_preset(opts, cfg));
    const auto objects = env::place_objects(world, opts.seed);
    int n_target = 0;
    for (const auto& object : objects)
        if (object.true_category == Category::target) ++n_target;
    const int n_nontarget = static_cast<int>(objects.size()) - n_target;
    const int n_empty = world.alley_count - static_cast<int>(objects.size());
    const auto dwell = metrics::dwell_times(rows, n_target, n_nontarget, n_empty);

    io::ensure_directory(opts.out_dir);
    std::ostringstream dwell_csv;
    dwell_csv << "category,n,mean_s,sd_s,se_s\n";
    const double root_n = std::sqrt(static_cast<double>(rows.size()));
    dwell_csv << "target," << rows.size() << ',' << io::fmt(dwell.mean_target) << ','
              << io::fmt(dwell.sd_target) << ',' << io::fmt(dwell.sd_target / root_n) << '\n';
    dwell_csv << "nontarget," << rows.size() << ',' << io::fmt(dwell.mean_nontarget) << ','
              << io::fmt(dwell.sd_nontarget) << ',' << io::fmt(dwell.sd_nontarget / root_n)
              << '\n';
    dwell_csv << "empty," << rows.size() << ',' << io::fmt(dwell.mean_empty) << ','
              << io::fmt(dwell.sd_empty) << ',' << io::fmt(dwell.sd_empty / root_n) << '\n';
    io::write_text_file(out_path(opts, "report_dwell.csv"), dwell_csv.str());
    io::write_text_file(out_path(opts, "dwell_chart.svg"), metrics::dwell_chart_svg(dwell));

    const double p = metrics::significance(dwell.target_samples, dwell.nontarget_samples);
    std::string summary;
    summary += "report.episodes=" + std::to_string(rows.size()) + "\n";
    summary += "report.mean_target_s=" + io::fmt(dwell.mean_target) + "\n";
    summary += "report.mean_nontarget_s=" + io::fmt(dwell.mean_nontarget) + "\n";
    summary += "report.separation_pct=" + io::fmt(dwell.percent_separation) + "\n";
    summary += "report.p_value=" + io::fmt(p) + "\n";
    summary += std::string("report.significant=") + (p < 0.05 ? "1" : "0") + "\n";

    const std::string train_log_path =
        !opts.train_log.empty() ? opts.train_log : out_path(opts, "episode_log.csv");
    if (std::filesystem::exists(train_log_path)) {
        const auto train_rows = dqn::episode_log_from_csv(io::read_text_file(train_log_path));
        std::vector<double> run_times;
        run_times.reserve(train_rows.size());
        for (const auto& row : train_rows) run_times.push_back(row.run_time_s);
        io::write_text_file(out_path(opts, "runtime_chart.svg"),
                            metrics::runtime_chart_svg(run_times));
        const std::size_t tenth = std::max<std::size_t>(1, train_rows.size() / 10);
        double first = 0.0, last = 0.0;
        for (std::size_t i = 0; i < tenth; ++i) {
            first += run_times[i];
            last += run_times[run_times.size() - 1 - i];
        }
        summary += "report.first_tenth_run_s=" + io::fmt(first / static_cast<double>(tenth)) + "\n";
        summary += "report.last_tenth_run_s=" + io::fmt(last / static_cast<double>(tenth)) + "\n";
    }

    const std::string qtrace_path =
        !opts.qtrace_csv.empty() ? opts.qtrace_csv : out_path(opts, "qtrace.csv");
    if (std::filesystem::exists(qtrace_path)) {
        const auto trace = dqn::qtrace_from_csv(io::read_text_file(qtrace_path));
        if (trace.size() >= 2) {
            const auto qsummary = metrics::qtrace_summary(trace);
            io::write_text_file(out_path(opts, "qtrace_chart.svg"),
                                metrics::qtrace_chart_svg(trace));
            summary += std::string("report.q_plateau=") + (qsummary.plateau ? "1" : "0") + "\n";
            summary += "report.q_drift=" + io::fmt(qsummary.drift) + "\n";
            summary += "report.q_range=" + io::fmt(qsummary.range) + "\n";
        }
    }

    io::write_text_file(out_path(opts, "report_summary.txt"), summary);
    write_manifest(opts, "report");
    std::fprintf(stderr, "report: separation %.1f%% p %.4g over %zu episodes\n",
                 dwell.percent_separation, p, rows.size());
    return 0;
}

int cmd_pipeline(CommonOpts opts) {
    if (opts.subject.empty()) opts.subject = "measured";
    struct Stage {
        const char* name;
        int (*fn)(const CommonOpts&);
    };
    const Stage stages[] = {{"synth", cmd_synth}, {"hdca", cmd_hdca}, {"tag", cmd_tag},
                            {"train", cmd_train}, {"eval", cmd_eval}, {"report", cmd_report}};
    for (const auto& stage : stages) {
        try {
            const int rc = stage.fn(opts);
            if (rc != 0) return rc;
        } catch (const std::exception& e) {
            throw ConfigError("stage " + std::string(stage.name) + ": " + e.what());
        }
    }
    write_manifest(opts, "pipeline", {{"subject", opts.subject}});
    return 0;
}

} // namespace

int run(int argc, char** argv) {
    CLI::App app{"preference-aware driving pipeline"};
    app.require_subcommand(1);

    CommonOpts synth_opts, hdca_opts, tag_opts, train_opts, eval_opts, report_opts, pipe_opts;

    auto* synth_cmd = app.add_subcommand("synth", "generate synthetic trials and object features");
    add_common(synth_cmd, synth_opts);

    auto* hdca_cmd = app.add_subcommand("hdca", "fit the physiology classifier on trials.csv");
    add_common(hdca_cmd, hdca_opts);

    auto* tag_cmd = app.add_subcommand("tag", "tune and propagate labels over the object graph");
    add_common(tag_cmd, tag_opts);

    auto* train_cmd = app.add_subcommand("train", "train the driving agent");
    add_common(train_cmd, train_opts);
    add_run_opts(train_cmd, train_opts);

    auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation episodes from a checkpoint");
    add_common(eval_cmd, eval_opts);
    add_run_opts(eval_cmd, eval_opts);
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint path");
    eval_cmd->add_option("--episodes", eval_opts.episodes, "number of evaluation episodes");

    auto* report_cmd = app.add_subcommand("report", "dwell statistics and charts from logs");
    add_common(report_cmd, report_opts);
    report_cmd->add_option("--episodes-csv", report_opts.episodes_csv,
                           "evaluation episode log to analyze");
    report_cmd->add_option("--train-log", report_opts.train_log, "training episode log");
    report_cmd->add_option("--qtrace", report_opts.qtrace_csv, "Q-trace CSV");

    auto* pipe_cmd = app.add_subcommand("pipeline", "run all stages in order");
    add_common(pipe_cmd, pipe_opts);
    add_run_opts(pipe_cmd, pipe_opts);
    pipe_cmd->add_option("--episodes", pipe_opts.episodes, "evaluation episode count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const char* stage = "cli";
    try {
        if (synth_cmd->parsed()) return (stage = "synth", cmd_synth(synth_opts));
        if (hdca_cmd->parsed()) return (stage = "hdca", cmd_hdca(hdca_opts));
        if (tag_cmd->parsed()) return (stage = "tag", cmd_tag(tag_opts));
        if (train_cmd->parsed()) return (stage = "train", cmd_train(train_opts));
        if (eval_cmd->parsed()) return (stage = "eval", cmd_eval(eval_opts));
        if (report_cmd->parsed()) return (stage = "report", cmd_report(report_opts));
        if (pipe_cmd->parsed()) return (stage = "pipeline", cmd_pipeline(pipe_opts));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s: %s\n", stage, e.what());
        return 1;
    }
    return 1;
}

} // namespace prefdrive::cli
