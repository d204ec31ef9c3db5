#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <vector>

#include "prefdrive/common.hpp"
#include "prefdrive/env.hpp"
#include "prefdrive/rng.hpp"

using namespace prefdrive;
using env::Action;
using env::EpisodeState;
using env::WorldConfig;

namespace {

WorldConfig quiet_config() {
    WorldConfig cfg;
    cfg.lead_speed.sigma = 0.0;
    cfg.lead_speed.kappa = 0.0;
    return cfg;
}

std::vector<Category> true_labels(const WorldConfig& cfg, std::uint64_t seed) {
    std::vector<Category> labels;
    for (const auto& obj : env::place_objects(cfg, seed)) labels.push_back(obj.true_category);
    return labels;
}

std::set<float> frame_values(const env::Frame& f) {
    return std::set<float>(f.px.begin(), f.px.end());
}

} // namespace

TEST_SUITE("env") {

TEST_CASE("config validation rejects broken invariants") {
    WorldConfig cfg;
    cfg.min_gap = 70.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = WorldConfig{};
    cfg.alley_occupancy = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = WorldConfig{};
    cfg.frame_size = 8;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = WorldConfig{};
    cfg.sim_dt = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(WorldConfig{}.validate());
}

TEST_CASE("world ingestion from key=value text") {
    const auto kv = io::KeyValueConfig::parse_text(
        "env.alley_count = 20\nenv.frame_size = 32\nenv.lead_mean = 10.5\n");
    const auto cfg = env::world_from_config(kv);
    CHECK(cfg.alley_count == 20);
    CHECK(cfg.frame_size == 32);
    CHECK(cfg.lead_speed.mean == 10.5);
    CHECK(cfg.alley_spacing == 25.0); // untouched default
}

TEST_CASE("occupancy and prevalence follow the config within rounding") {
    const WorldConfig cfg; // 40 alleys, 40% occupied, 1:3 targets
    const auto objects = env::place_objects(cfg, 7);
    CHECK(objects.size() == 16);
    int targets = 0;
    for (const auto& obj : objects) targets += obj.true_category == Category::target;
    CHECK(targets == 4); // 4 targets : 12 nontargets

    WorldConfig odd = cfg;
    odd.alley_count = 17;
    const auto few = env::place_objects(odd, 7);
    CHECK(std::fabs(static_cast<double>(few.size()) / 17.0 - 0.4) <= 1.0 / 17.0);
}

TEST_CASE("placement is deterministic and within the road") {
    const WorldConfig cfg;
    const auto a = env::place_objects(cfg, 7);
    const auto b = env::place_objects(cfg, 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].alley_index == b[i].alley_index);
        CHECK(a[i].position == b[i].position);
        CHECK(a[i].side == b[i].side);
        CHECK(a[i].true_category == b[i].true_category);
        CHECK(a[i].position > 0.0);
        CHECK(a[i].position <= cfg.road_length);
    }
    const auto c = env::place_objects(cfg, 8);
    bool same_layout = true;
    for (std::size_t i = 0; i < a.size(); ++i)
        same_layout = same_layout && a[i].alley_index == c[i].alley_index &&
                      a[i].true_category == c[i].true_category;
    CHECK_FALSE(same_layout);
}

TEST_CASE("init_episode is deterministic in the seed") {
    const WorldConfig cfg;
    const auto labels = true_labels(cfg, 7);
    auto a = env::init_episode(cfg, labels, 7);
    auto b = env::init_episode(cfg, labels, 7);
    CHECK(a.passenger.position == 0.0);
    CHECK(a.lead.position == cfg.start_gap);
    CHECK_FALSE(a.terminal);
    CHECK(a.objects.size() == b.objects.size());
    CHECK(a.frames[0]->px == b.frames[0]->px);

    // identical dynamics afterwards as well
    for (int i = 0; i < 25; ++i) {
        const auto action = static_cast<Action>(i % 3);
        env::step(cfg, a, action);
        env::step(cfg, b, action);
        CHECK(a.lead.position == b.lead.position);
        CHECK(a.passenger.position == b.passenger.position);
    }
    CHECK(a.frames[2]->px == b.frames[2]->px);
}

TEST_CASE("init_episode rejects a label-count mismatch") {
    const WorldConfig cfg;
    std::vector<Category> labels(3, Category::target);
    CHECK_THROWS_AS(env::init_episode(cfg, labels, 7), ConfigError);
}

TEST_CASE("labels control luminance, true categories control nothing visual") {
    WorldConfig cfg;
    cfg.alley_count = 1;
    cfg.alley_spacing = 10.0;
    cfg.alley_occupancy = 1.0;
    cfg.target_ratio = 1.0; // the single object is a true target
    auto state = env::init_episode(cfg, {Category::nontarget}, 3);
    REQUIRE(state.objects.size() == 1);
    CHECK(state.objects[0].true_category == Category::target);
    CHECK(state.objects[0].assigned_label == Category::nontarget);
    CHECK(state.objects[0].luminance == cfg.lum.nontarget_disc);

    const auto frame = env::render_topdown(cfg, state);
    const auto values = frame_values(frame);
    CHECK(values.count(static_cast<float>(cfg.lum.nontarget_disc)) == 1);
    CHECK(values.count(static_cast<float>(cfg.lum.target_disc)) == 0);
}

TEST_CASE("lead speed process: zero variance holds speed, seeds reproduce") {
    env::LeadSpeedParams p;
    p.sigma = 0.0;
    Rng rng(1);
    double v = 9.0;
    for (int i = 0; i < 200; ++i) v = env::lead_speed_update(v, p, rng);
    CHECK(v == doctest::Approx(p.mean).epsilon(1e-3)); // mean reversion, no noise
    p.kappa = 0.0;
    v = 9.0;
    for (int i = 0; i < 100; ++i) v = env::lead_speed_update(v, p, rng);
    CHECK(v == 9.0);

    p = env::LeadSpeedParams{};
    Rng r1(5), r2(5), r3(6);
    double a = p.mean, b = p.mean, c = p.mean;
    bool differs = false;
    for (int i = 0; i < 50; ++i) {
        a = env::lead_speed_update(a, p, r1);
        b = env::lead_speed_update(b, p, r2);
        c = env::lead_speed_update(c, p, r3);
        CHECK(a == b);
        differs = differs || a != c;
    }
    CHECK(differs);
}

TEST_CASE("lead speed long-run mean stays near the process mean") {
    const env::LeadSpeedParams p;
    Rng rng(11);
    double v = p.mean, sum = 0.0;
    constexpr int kSteps = 10000;
    for (int i = 0; i < kSteps; ++i) {
        v = env::lead_speed_update(v, p, rng);
        sum += v;
    }
    const double mean = sum / kSteps;
    CHECK(std::fabs(mean - p.mean) / p.mean < 0.05);
}

TEST_CASE("gap bounds decide termination strictly") {
    WorldConfig cfg = quiet_config();
    cfg.alley_occupancy = 0.0; // no labels needed
    for (const auto& [gap, terminal] : std::vector<std::pair<double, bool>>{
             {4.9, true}, {30.0, false}, {60.1, true}, {5.0, true}, {59.99, false}}) {
        auto state = env::init_episode(cfg, {}, 1);
        state.lead = {100.0 + gap, 0.0};
        state.passenger = {100.0, 0.0};
        const auto result = env::step(cfg, state, Action::maintain_speed);
        CHECK(result.terminal == terminal);
        CHECK(state.terminal == terminal);
        CHECK(state.gap() == doctest::Approx(gap).epsilon(1e-12));
    }
}

TEST_CASE("stepping a finished episode is a usage error") {
    WorldConfig cfg = quiet_config();
    cfg.alley_occupancy = 0.0;
    auto state = env::init_episode(cfg, {}, 1);
    state.lead = {104.0, 0.0};
    state.passenger = {100.0, 0.0};
    env::step(cfg, state, Action::maintain_speed);
    REQUIRE(state.terminal);
    CHECK_THROWS_AS(env::step(cfg, state, Action::maintain_speed), UsageError);
}

TEST_CASE("actions move the passenger speed by speed_delta, floored at zero") {
    WorldConfig cfg = quiet_config();
    cfg.alley_occupancy = 0.0;
    auto state = env::init_episode(cfg, {}, 1);
    const double v0 = state.passenger.speed;
    env::step(cfg, state, Action::increase_speed);
    CHECK(state.passenger.speed == v0 + cfg.speed_delta);
    env::step(cfg, state, Action::decrease_speed);
    CHECK(state.passenger.speed == v0);
    env::step(cfg, state, Action::maintain_speed);
    CHECK(state.passenger.speed == v0);

    state.passenger.speed = 0.4; // below one delta
    env::step(cfg, state, Action::decrease_speed);
    CHECK(state.passenger.speed == 0.0);
}

TEST_CASE("reaching the road end truncates without terminating") {
    WorldConfig cfg = quiet_config();
    cfg.alley_occupancy = 0.0;
    cfg.road_length = 40.0;
    cfg.start_gap = 30.0;
    auto state = env::init_episode(cfg, {}, 1);
    bool truncated = false;
    for (int i = 0; i < 100 && !truncated; ++i) {
        const auto result = env::step(cfg, state, Action::maintain_speed);
        CHECK_FALSE(result.terminal);
        truncated = result.truncated;
    }
    CHECK(truncated);
    CHECK(state.lead.position >= cfg.road_length);
    CHECK_FALSE(state.terminal);
    CHECK_THROWS_AS(env::step(cfg, state, Action::maintain_speed), UsageError);
}

TEST_CASE("visibility events track the visual radius inclusively") {
    WorldConfig cfg = quiet_config();
    cfg.alley_count = 1;
    cfg.alley_spacing = 10.0; // one object at 10 m
    cfg.alley_occupancy = 1.0;
    cfg.target_ratio = 1.0;
    cfg.visual_radius = 9.0;
    cfg.sim_dt = 0.5;
    cfg.lead_speed.mean = 2.0; // passenger starts at 2 m/s -> 1 m per step
    auto state = env::init_episode(cfg, {Category::target}, 2);

    // passenger position after step k is exactly k meters
    auto result = env::step(cfg, state, Action::maintain_speed); // at 1: |10-1| = 9
    REQUIRE(result.events.size() == 1);
    CHECK(result.events[0].object_index == 0);
    CHECK(result.events[0].is_target);
    CHECK(result.events[0].entered);

    result = env::step(cfg, state, Action::maintain_speed); // at 2: inside
    REQUIRE(result.events.size() == 1);
    CHECK_FALSE(result.events[0].entered);

    for (int pos = 3; pos <= 19; ++pos) {
        result = env::step(cfg, state, Action::maintain_speed);
        REQUIRE(result.events.size() == 1); // |10 - pos| <= 9 through pos = 19
    }
    result = env::step(cfg, state, Action::maintain_speed); // at 20: out of range
    CHECK(result.events.empty());
    CHECK_FALSE(state.objects[0].in_view);
}

TEST_CASE("render: empty view holds exactly road, background, and two vehicle blocks") {
    WorldConfig cfg = quiet_config();
    cfg.alley_occupancy = 0.0;
    const auto state = env::init_episode(cfg, {}, 1);
    const auto frame = env::render_topdown(cfg, state);
    REQUIRE(frame.size == cfg.frame_size);
    REQUIRE(frame.px.size() == static_cast<std::size_t>(cfg.frame_size) * cfg.frame_size);

    const auto values = frame_values(frame);
    CHECK(values == std::set<float>{static_cast<float>(cfg.lum.background),
                                    static_cast<float>(cfg.lum.road),
                                    static_cast<float>(cfg.lum.vehicle)});

    // white pixels form two row-contiguous blocks (lead ahead, passenger below)
    std::vector<int> white_rows;
    for (int r = 0; r < frame.size; ++r)
        for (int c = 0; c < frame.size; ++c)
            if (frame.px[static_cast<std::size_t>(r) * frame.size + c] ==
                static_cast<float>(cfg.lum.vehicle)) {
                white_rows.push_back(r);
                break;
            }
    REQUIRE_FALSE(white_rows.empty());
    int blocks = 1;
    for (std::size_t i = 1; i < white_rows.size(); ++i)
        blocks += white_rows[i] > white_rows[i - 1] + 1;
    CHECK(blocks == 2);
}

TEST_CASE("render: both disc luminances appear when both labels are in view") {
    WorldConfig cfg = quiet_config();
    cfg.alley_count = 2;
    cfg.alley_spacing = 10.0; // objects at 10 and 20, both well inside the view
    cfg.alley_occupancy = 1.0;
    cfg.target_ratio = 0.5;
    std::vector<Category> labels = {Category::target, Category::nontarget};
    const auto state = env::init_episode(cfg, labels, 4);
    const auto frame = env::render_topdown(cfg, state);
    const auto values = frame_values(frame);
    CHECK(values.count(static_cast<float>(cfg.lum.target_disc)) == 1);
    CHECK(values.count(static_cast<float>(cfg.lum.nontarget_disc)) == 1);
    CHECK(values.size() == 5); // background, road, two discs, vehicles
}

TEST_CASE("render is a pure function of the state") {
    const WorldConfig cfg;
    const auto labels = true_labels(cfg, 9);
    const auto state = env::init_episode(cfg, labels, 9);
    const auto f1 = env::render_topdown(cfg, state);
    const auto f2 = env::render_topdown(cfg, state);
    CHECK(f1.px == f2.px);
}

TEST_CASE("observe replicates the initial frame and then slides") {
    WorldConfig cfg = quiet_config();
    cfg.alley_occupancy = 0.0;
    auto state = env::init_episode(cfg, {}, 5);
    auto obs = env::observe(state);
    CHECK(obs[0] == obs[1]); // same shared frame, by construction
    CHECK(obs[1] == obs[2]);
    CHECK(obs[0]->px.size() ==
          static_cast<std::size_t>(cfg.frame_size) * cfg.frame_size);

    std::vector<env::FramePtr> rendered;
    for (int i = 0; i < 3; ++i) {
        env::step(cfg, state, Action::maintain_speed);
        rendered.push_back(state.frames[2]);
    }
    obs = env::observe(state);
    CHECK(obs[0] == rendered[0]);
    CHECK(obs[1] == rendered[1]);
    CHECK(obs[2] == rendered[2]);

    const auto input = env::observation_input(obs);
    CHECK(input.size() == 3u * cfg.frame_size * cfg.frame_size);
}

TEST_CASE("episode trace is reproducible and exports as CSV") {
    const WorldConfig cfg;
    const auto labels = true_labels(cfg, 13);
    std::vector<std::string> csv;
    for (int rep = 0; rep < 2; ++rep) {
        auto state = env::init_episode(cfg, labels, 13);
        std::vector<env::TraceRow> rows;
        for (int i = 0; i < 40 && !state.terminal && !state.truncated; ++i) {
            const auto action = static_cast<Action>((i / 5) % 3);
            const auto result = env::step(cfg, state, action);
            env::TraceRow row;
            row.step = state.step_count;
            row.d = state.gap();
            row.lead_speed = state.lead.speed;
            row.passenger_speed = state.passenger.speed;
            row.action = action;
            row.terminal = result.terminal;
            for (const auto& ev : result.events) (ev.is_target ? row.wvd_a : row.wvd_b) += 1;
            rows.push_back(row);
        }
        csv.push_back(env::trace_to_csv(rows));
    }
    CHECK(csv[0] == csv[1]);
    CHECK(csv[0].rfind("step,d,lead_speed,passenger_speed,action,terminal,wvd_a,wvd_b\n", 0) ==
          0);
    CHECK(std::count(csv[0].begin(), csv[0].end(), '\n') == 41);
}

TEST_CASE("frames export as binary PGM") {
    WorldConfig cfg = quiet_config();
    cfg.alley_occupancy = 0.0;
    cfg.frame_size = 16;
    const auto state = env::init_episode(cfg, {}, 5);
    const auto frame = env::render_topdown(cfg, state);
    const std::string path = "env_frame_test.pgm";
    env::frame_to_pgm(frame, path);

    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::string header;
    std::getline(f, header);
    CHECK(header == "P5");
    std::getline(f, header);
    CHECK(header == "16 16");
    std::getline(f, header);
    CHECK(header == "255");
    std::string data(std::istreambuf_iterator<char>(f), {});
    CHECK(data.size() == 256);
    // road gray maps to round(0.25 * 255) = 64
    CHECK(data.find(static_cast<char>(64)) != std::string::npos);
    std::remove(path.c_str());
}

} // TEST_SUITE
