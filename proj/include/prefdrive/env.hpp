#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "prefdrive/common.hpp"
#include "prefdrive/io.hpp"
#include "prefdrive/rng.hpp"

namespace prefdrive::env {

enum class Action { increase_speed = 0, maintain_speed = 1, decrease_speed = 2 };
inline constexpr int kNumActions = 3;

const char* to_string(Action a);

// Mean-reverting lead-vehicle speed process:
//   v <- clamp(v + kappa * (mean - v) + sigma * N(0,1), 0, v_max)
struct LeadSpeedParams {
    double mean = 12.0;
    double kappa = 0.05;
    double sigma = 0.3;
    double v_max = 20.0;
};

// Gray levels used by the renderer; distinct by construction.
struct Luminances {
    double background = 0.0;
    double road = 0.25;
    double nontarget_disc = 0.5;
    double target_disc = 0.75;
    double vehicle = 1.0;
};

struct WorldConfig {
    double road_length = 1050.0;
    int alley_count = 40;
    double alley_spacing = 25.0; // first alley sits one spacing down the road
    double alley_occupancy = 0.4;
    double target_ratio = 0.25; // fraction of occupied alleys holding targets
    double visual_radius = 10.0;
    double min_gap = 5.0;
    double max_gap = 60.0;
    double sim_dt = 0.1;
    double speed_delta = 1.0; // m/s change per speed action
    LeadSpeedParams lead_speed;
    int frame_size = 64;
    double start_gap = 30.0;
    Luminances lum;

    void validate() const; // throws ConfigError on a broken invariant
};

// Reads env.* keys from a parsed key=value file, falling back to defaults.
WorldConfig world_from_config(const io::KeyValueConfig& cfg);

// Exact object counts implied by the config (round-half-away rounding).
int occupied_count(const WorldConfig& cfg);
int target_count(const WorldConfig& cfg);

struct VehicleState {
    double position = 0.0;
    double speed = 0.0;
};

struct ObjectInstance {
    int alley_index = 0;
    double position = 0.0; // meters along the road
    int side = 1;          // -1 = left alley, +1 = right alley
    Category true_category = Category::nontarget;
    Category assigned_label = Category::nontarget;
    double luminance = 0.0;
    bool in_view = false;
    double omega_draw = -1.0; // cached uniform(0,1); negative = no draw yet
};

// Deterministic placement for (config, seed); true categories only, labels
// and luminances are applied by init_episode.
std::vector<ObjectInstance> place_objects(const WorldConfig& cfg, std::uint64_t seed);

struct Frame {
    int size = 0;
    std::vector<float> px; // row-major, values in [0,1], row 0 = farthest ahead
};

using FramePtr = std::shared_ptr<const Frame>;

// Three most recent frames, oldest first.
using Observation = std::array<FramePtr, 3>;

struct EpisodeState {
    VehicleState lead;
    VehicleState passenger;
    std::vector<ObjectInstance> objects;
    double elapsed = 0.0;
    std::int64_t step_count = 0;
    bool terminal = false;  // gap left (min_gap, max_gap)
    bool truncated = false; // lead vehicle reached the end of the road
    Rng rng{0};             // episode dynamics stream, re-seeded by init_episode
    Observation frames;     // rolling window for observe()

    double gap() const { return lead.position - passenger.position; }
};

EpisodeState init_episode(const WorldConfig& cfg, const std::vector<Category>& labels,
                          std::uint64_t seed);

// One update of the lead-speed process alone (exposed for direct testing).
double lead_speed_update(double v, const LeadSpeedParams& p, Rng& rng);

// Advances only the lead vehicle by one tick.
void lead_step(const WorldConfig& cfg, EpisodeState& state);

struct WvdEvent {
    int object_index = 0;
    bool is_target = false; // true category: WVD_a when true, WVD_b when false
    bool entered = false;   // first in-view step of this encounter
};

struct StepResult {
    bool terminal = false;
    bool truncated = false;
    std::vector<WvdEvent> events; // one per object currently in visual range
};

// Applies the action, advances both vehicles, re-evaluates the gap bounds,
// collects visibility events, and pushes a fresh frame into the window.
StepResult step(const WorldConfig& cfg, EpisodeState& state, Action action);

// Passenger-centered orthographic top-down view.
Frame render_topdown(const WorldConfig& cfg, const EpisodeState& state);

Observation observe(const EpisodeState& state);

// Concatenates the three frames (oldest first) into a 3 x size x size input.
std::vector<float> observation_input(const Observation& obs);

struct TraceRow {
    std::int64_t step = 0;
    double d = 0.0;
    double lead_speed = 0.0;
    double passenger_speed = 0.0;
    Action action = Action::maintain_speed;
    bool terminal = false;
    int wvd_a = 0; // true targets in view this step
    int wvd_b = 0; // true nontargets in view this step
};

std::string trace_to_csv(const std::vector<TraceRow>& rows);

void frame_to_pgm(const Frame& frame, const std::string& path);

} // namespace prefdrive::env
