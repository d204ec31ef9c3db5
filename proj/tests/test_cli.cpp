#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "prefdrive/cli.hpp"
#include "prefdrive/io.hpp"

using namespace prefdrive;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "prefdrive");
    std::vector<char*> argv;
    argv.reserve(args.size());
    for (auto& arg : args) argv.push_back(arg.data());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("prefdrive_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// small but complete: enough trials for a clean classifier, a short road,
// and a brief desk-preset training run
std::string tiny_config(const fs::path& dir) {
    const std::string path = (dir / "tiny.cfg").string();
    io::write_text_file(path, "synth.n_trials = 400\n"
                              "synth.n_objects = 120\n"
                              "synth.eeg_effect = 2.0\n"
                              "env.road_length = 240\n"
                              "env.alley_count = 6\n"
                              "env.alley_spacing = 30\n"
                              "env.occupancy = 0.5\n"
                              "env.frame_size = 32\n"
                              "dqn.total_steps = 200\n"
                              "dqn.warmup_steps = 48\n"
                              "dqn.batch_size = 8\n"
                              "dqn.buffer_capacity = 1024\n"
                              "dqn.sync_period = 64\n"
                              "dqn.probe_size = 8\n"
                              "dqn.qtrace_period = 50\n"
                              "eval.episodes = 8\n");
    return path;
}

std::string slurp(const fs::path& path) { return io::read_text_file(path.string()); }

} // namespace

TEST_SUITE("cli") {

TEST_CASE("pipeline writes every artifact and is byte deterministic") {
    const auto base = fresh_dir("pipe");
    const auto cfg = tiny_config(base);
    const auto out_a = (base / "a").string();
    const auto out_b = (base / "b").string();

    REQUIRE(run_cli({"pipeline", "--config", cfg, "--out", out_a, "--seed", "7", "--preset",
                     "desk"}) == 0);
    REQUIRE(run_cli({"pipeline", "--config", cfg, "--out", out_b, "--seed", "7", "--preset",
                     "desk"}) == 0);

    const char* expected[] = {"trials.csv",       "object_features.csv", "hdca_model.txt",
                              "hdca_scores.csv",  "hdca_summary.txt",    "tag_labels.csv",
                              "tag_graph.csv",    "tag_gmm.json",        "tag_summary.txt",
                              "train_labels.csv", "qnet.ckpt",           "episode_log.csv",
                              "qtrace.csv",       "train_summary.txt",   "eval_episodes.csv",
                              "eval_summary.txt", "report_dwell.csv",    "report_summary.txt",
                              "dwell_chart.svg",  "runtime_chart.svg",   "qtrace_chart.svg",
                              "manifest_pipeline.txt"};
    for (const char* name : expected) {
        INFO("missing ", name);
        CHECK(fs::exists(fs::path(out_a) / name));
    }

    const char* compared[] = {"trials.csv",      "object_features.csv", "hdca_scores.csv",
                              "tag_labels.csv",  "train_labels.csv",    "episode_log.csv",
                              "qtrace.csv",      "eval_episodes.csv",   "report_dwell.csv",
                              "dwell_chart.svg", "qnet.ckpt"};
    for (const char* name : compared) {
        INFO("differs ", name);
        CHECK(slurp(fs::path(out_a) / name) == slurp(fs::path(out_b) / name));
    }
}

TEST_CASE("train manifest records command, seed, config hash, and label source") {
    const auto base = fs::temp_directory_path() / "prefdrive_cli_pipe" / "a";
    REQUIRE(fs::exists(base / "manifest_train.txt")); // produced by the pipeline case
    const auto manifest = io::KeyValueConfig::parse_file((base / "manifest_train.txt").string());
    CHECK(manifest.get_string("command", "") == "train");
    CHECK(manifest.get_int("seed", -1) == 7);
    CHECK(manifest.get_string("config_hash", "").size() > 0);
    CHECK(manifest.get_string("preset", "") == "desk");
    CHECK(manifest.get_string("label_source", "") == "tag");
    // the pipeline default subject comes from the tag stage
    CHECK(manifest.get_string("subject", "").rfind("measured", 0) == 0);
}

TEST_CASE("eval fails with nonzero exit when the checkpoint is missing") {
    const auto dir = fresh_dir("nockpt");
    CHECK(run_cli({"eval", "--out", dir.string()}) != 0);
    CHECK_FALSE(fs::exists(dir / "eval_episodes.csv"));
}

TEST_CASE("report fails with nonzero exit when the episode log is missing") {
    const auto dir = fresh_dir("nolog");
    CHECK(run_cli({"report", "--out", dir.string()}) != 0);
}

TEST_CASE("strict repro requires an explicit seed") {
    const auto dir = fresh_dir("strict");
    CHECK(run_cli({"synth", "--strict-repro", "--out", dir.string()}) != 0);
    CHECK(run_cli({"synth", "--strict-repro", "--seed", "3", "--out", dir.string()}) == 0);
    CHECK(fs::exists(dir / "trials.csv"));
}

TEST_CASE("unknown subject and preset are rejected before any work happens") {
    const auto dir = fresh_dir("badopts");
    CHECK(run_cli({"train", "--subject", "bogus", "--out", dir.string()}) != 0);
    CHECK(run_cli({"train", "--preset", "huge", "--out", dir.string()}) != 0);
    CHECK_FALSE(fs::exists(dir / "qnet.ckpt"));
}

TEST_CASE("control subject evaluation reports no strong preference") {
    const auto pipe_out = fs::temp_directory_path() / "prefdrive_cli_pipe";
    const auto cfg = (pipe_out / "tiny.cfg").string();
    const auto ckpt = (pipe_out / "a" / "qnet.ckpt").string();
    REQUIRE(fs::exists(ckpt)); // produced by the pipeline case
    const auto dir = fresh_dir("control");

    REQUIRE(run_cli({"eval", "--config", cfg, "--out", dir.string(), "--seed", "9", "--preset",
                     "desk", "--subject", "control", "--checkpoint", ckpt}) == 0);
    REQUIRE(run_cli({"report", "--config", cfg, "--out", dir.string(), "--seed", "9"}) == 0);

    const auto summary = io::KeyValueConfig::parse_file((dir / "report_summary.txt").string());
    const double p = summary.get_double("report.p_value", -1.0);
    const double sep = summary.get_double("report.separation_pct", 1e9);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(summary.get_int("report.significant", -1) == (p < 0.05 ? 1 : 0));
    // a control labeler must not register as a strong, significant preference
    CHECK((p > 0.05 || std::abs(sep) < 5.0));
}

TEST_CASE("custom subject string reaches the evaluation summary") {
    const auto pipe_out = fs::temp_directory_path() / "prefdrive_cli_pipe";
    const auto cfg = (pipe_out / "tiny.cfg").string();
    const auto ckpt = (pipe_out / "a" / "qnet.ckpt").string();
    REQUIRE(fs::exists(ckpt));
    const auto dir = fresh_dir("custom");

    REQUIRE(run_cli({"eval", "--config", cfg, "--out", dir.string(), "--seed", "5", "--preset",
                     "desk", "--subject", "0.9,0.1", "--episodes", "2", "--checkpoint",
                     ckpt}) == 0);
    const auto summary = io::KeyValueConfig::parse_file((dir / "eval_summary.txt").string());
    CHECK(summary.get_int("eval.episodes", 0) == 2);
    CHECK(summary.get_string("eval.subject", "").find("0.9") != std::string::npos);

    CHECK(run_cli({"eval", "--config", cfg, "--out", dir.string(), "--subject", "2,3",
                   "--checkpoint", ckpt}) != 0); // rates outside [0,1]
}

} // TEST_SUITE
