#include "prefdrive/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace prefdrive::env {

namespace {

// viewport and marker geometry (meters); the view keeps most of the gap range
// ahead of the passenger so the lead vehicle stays on screen
constexpr double kViewAhead = 70.0;
constexpr double kViewBehind = 10.0;
constexpr double kViewLateral = 32.0; // half-width
constexpr double kRoadHalfWidth = 4.0;
constexpr double kAlleyOffset = 8.0; // lateral center of alley markers
constexpr double kDiscRadius = 2.5;
constexpr double kVehicleLength = 4.5;
constexpr double kVehicleHalfWidth = 1.0;

void shuffle(std::vector<int>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.uniform_int(i)]);
}

} // namespace

const char* to_string(Action a) {
    switch (a) {
        case Action::increase_speed: return "increase";
        case Action::maintain_speed: return "maintain";
        case Action::decrease_speed: return "decrease";
    }
    return "?";
}

void WorldConfig::validate() const {
    if (!(min_gap > 0.0) || !(min_gap < max_gap))
        throw ConfigError("world config: need 0 < min_gap < max_gap");
    if (alley_occupancy < 0.0 || alley_occupancy > 1.0)
        throw ConfigError("world config: alley_occupancy outside [0,1]");
    if (target_ratio < 0.0 || target_ratio > 1.0)
        throw ConfigError("world config: target_ratio outside [0,1]");
    if (frame_size < 16) throw ConfigError("world config: frame_size below 16");
    if (!(sim_dt > 0.0)) throw ConfigError("world config: sim_dt must be positive");
    if (alley_count < 1) throw ConfigError("world config: need at least one alley");
    if (!(alley_spacing > 0.0)) throw ConfigError("world config: alley_spacing must be positive");
    if (!(road_length > 0.0)) throw ConfigError("world config: road_length must be positive");
    if (!(visual_radius > 0.0)) throw ConfigError("world config: visual_radius must be positive");
    if (speed_delta < 0.0) throw ConfigError("world config: speed_delta must be non-negative");
    if (!(lead_speed.v_max > 0.0) || lead_speed.sigma < 0.0 || lead_speed.kappa < 0.0 ||
        lead_speed.kappa > 1.0 || lead_speed.mean < 0.0)
        throw ConfigError("world config: bad lead speed process");
    if (!(start_gap > min_gap) || !(start_gap < max_gap))
        throw ConfigError("world config: start_gap must lie inside the gap bounds");
}

WorldConfig world_from_config(const io::KeyValueConfig& cfg) {
    WorldConfig w;
    w.road_length = cfg.get_double("env.road_length", w.road_length);
    w.alley_count = static_cast<int>(cfg.get_int("env.alley_count", w.alley_count));
    w.alley_spacing = cfg.get_double("env.alley_spacing", w.alley_spacing);
    w.alley_occupancy = cfg.get_double("env.alley_occupancy", w.alley_occupancy);
    w.target_ratio = cfg.get_double("env.target_ratio", w.target_ratio);
    w.visual_radius = cfg.get_double("env.visual_radius", w.visual_radius);
    w.min_gap = cfg.get_double("env.min_gap", w.min_gap);
    w.max_gap = cfg.get_double("env.max_gap", w.max_gap);
    w.sim_dt = cfg.get_double("env.sim_dt", w.sim_dt);
    w.speed_delta = cfg.get_double("env.speed_delta", w.speed_delta);
    w.frame_size = static_cast<int>(cfg.get_int("env.frame_size", w.frame_size));
    w.start_gap = cfg.get_double("env.start_gap", w.start_gap);
    w.lead_speed.mean = cfg.get_double("env.lead_mean", w.lead_speed.mean);
    w.lead_speed.kappa = cfg.get_double("env.lead_kappa", w.lead_speed.kappa);
    w.lead_speed.sigma = cfg.get_double("env.lead_sigma", w.lead_speed.sigma);
    w.lead_speed.v_max = cfg.get_double("env.lead_vmax", w.lead_speed.v_max);
    w.lum.background = cfg.get_double("env.lum_background", w.lum.background);
    w.lum.road = cfg.get_double("env.lum_road", w.lum.road);
    w.lum.nontarget_disc = cfg.get_double("env.lum_nontarget", w.lum.nontarget_disc);
    w.lum.target_disc = cfg.get_double("env.lum_target", w.lum.target_disc);
    w.lum.vehicle = cfg.get_double("env.lum_vehicle", w.lum.vehicle);
    w.validate();
    return w;
}

int occupied_count(const WorldConfig& cfg) {
    return static_cast<int>(std::lround(cfg.alley_count * cfg.alley_occupancy));
}

int target_count(const WorldConfig& cfg) {
    return static_cast<int>(std::lround(occupied_count(cfg) * cfg.target_ratio));
}

std::vector<ObjectInstance> place_objects(const WorldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = Rng(seed).derive("world");
    const int occupied = occupied_count(cfg);
    const int targets = target_count(cfg);

    std::vector<int> alleys(static_cast<std::size_t>(cfg.alley_count));
    std::iota(alleys.begin(), alleys.end(), 0);
    shuffle(alleys, rng);
    alleys.resize(static_cast<std::size_t>(occupied));
    std::sort(alleys.begin(), alleys.end());

    std::vector<int> cats(static_cast<std::size_t>(occupied), 0);
    std::fill_n(cats.begin(), targets, 1);
    shuffle(cats, rng);

    std::vector<ObjectInstance> objects;
    objects.reserve(static_cast<std::size_t>(occupied));
    for (int i = 0; i < occupied; ++i) {
        ObjectInstance obj;
        obj.alley_index = alleys[static_cast<std::size_t>(i)];
        obj.position = (obj.alley_index + 1) * cfg.alley_spacing;
        obj.side = rng.uniform_int(2) == 0 ? -1 : 1;
        obj.true_category = cats[static_cast<std::size_t>(i)] ? Category::target
                                                              : Category::nontarget;
        obj.assigned_label = obj.true_category;
        objects.push_back(obj);
    }
    return objects;
}

EpisodeState init_episode(const WorldConfig& cfg, const std::vector<Category>& labels,
                          std::uint64_t seed) {
    EpisodeState state;
    state.objects = place_objects(cfg, seed);
    if (labels.size() != state.objects.size())
        throw ConfigError("init_episode: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(state.objects.size()) + " occupied alleys");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& obj = state.objects[i];
        obj.assigned_label = labels[i];
        obj.luminance = obj.assigned_label == Category::target ? cfg.lum.target_disc
                                                               : cfg.lum.nontarget_disc;
    }
    state.passenger = {0.0, cfg.lead_speed.mean};
    state.lead = {cfg.start_gap, cfg.lead_speed.mean};
    state.rng = Rng(seed).derive("episode");
    const auto first = std::make_shared<const Frame>(render_topdown(cfg, state));
    state.frames = {first, first, first};
    return state;
}

double lead_speed_update(double v, const LeadSpeedParams& p, Rng& rng) {
    const double next = v + p.kappa * (p.mean - v) + p.sigma * rng.normal();
    return std::clamp(next, 0.0, p.v_max);
}

void lead_step(const WorldConfig& cfg, EpisodeState& state) {
    state.lead.speed = lead_speed_update(state.lead.speed, cfg.lead_speed, state.rng);
    state.lead.position += state.lead.speed * cfg.sim_dt;
}

StepResult step(const WorldConfig& cfg, EpisodeState& state, Action action) {
    if (state.terminal) throw UsageError("step: episode already terminal");
    if (state.truncated) throw UsageError("step: episode already truncated");

    switch (action) {
        case Action::increase_speed: state.passenger.speed += cfg.speed_delta; break;
        case Action::decrease_speed: state.passenger.speed -= cfg.speed_delta; break;
        case Action::maintain_speed: break;
    }
    state.passenger.speed = std::max(0.0, state.passenger.speed);

    lead_step(cfg, state);
    state.passenger.position += state.passenger.speed * cfg.sim_dt;
    state.step_count += 1;
    state.elapsed = static_cast<double>(state.step_count) * cfg.sim_dt;

    const double d = state.gap();
    state.terminal = !(d > cfg.min_gap && d < cfg.max_gap);
    state.truncated = !state.terminal && state.lead.position >= cfg.road_length;

    StepResult result;
    result.terminal = state.terminal;
    result.truncated = state.truncated;
    for (std::size_t i = 0; i < state.objects.size(); ++i) {
        auto& obj = state.objects[i];
        const bool in_view =
            std::fabs(obj.position - state.passenger.position) <= cfg.visual_radius;
        const bool entered = in_view && !obj.in_view;
        obj.in_view = in_view;
        if (in_view)
            result.events.push_back({static_cast<int>(i),
                                     obj.true_category == Category::target, entered});
    }

    state.frames[0] = state.frames[1];
    state.frames[1] = state.frames[2];
    state.frames[2] = std::make_shared<const Frame>(render_topdown(cfg, state));
    return result;
}

Frame render_topdown(const WorldConfig& cfg, const EpisodeState& state) {
    const int n = cfg.frame_size;
    Frame frame;
    frame.size = n;
    frame.px.assign(static_cast<std::size_t>(n) * n, static_cast<float>(cfg.lum.background));

    const double span_x = kViewAhead + kViewBehind; // meters covered top to bottom
    const double span_y = 2.0 * kViewLateral;
    const double px_h = span_x / n;
    const double px_w = span_y / n;
    const double top_x = state.passenger.position + kViewAhead;

    auto row_center = [&](int r) { return top_x - (r + 0.5) * px_h; };
    auto col_center = [&](int c) { return -kViewLateral + (c + 0.5) * px_w; };
    // pixel rows whose centers fall inside [x_lo, x_hi], clamped to the frame
    auto row_range = [&](double x_lo, double x_hi, int& r_lo, int& r_hi) {
        r_lo = static_cast<int>(std::ceil((top_x - x_hi) / px_h - 0.5));
        r_hi = static_cast<int>(std::floor((top_x - x_lo) / px_h - 0.5));
        r_lo = std::max(r_lo, 0);
        r_hi = std::min(r_hi, n - 1);
    };
    auto col_range = [&](double y_lo, double y_hi, int& c_lo, int& c_hi) {
        c_lo = static_cast<int>(std::ceil((y_lo + kViewLateral) / px_w - 0.5));
        c_hi = static_cast<int>(std::floor((y_hi + kViewLateral) / px_w - 0.5));
        c_lo = std::max(c_lo, 0);
        c_hi = std::min(c_hi, n - 1);
    };
    auto fill = [&](int r_lo, int r_hi, int c_lo, int c_hi, double lum) {
        for (int r = r_lo; r <= r_hi; ++r)
            for (int c = c_lo; c <= c_hi; ++c)
                frame.px[static_cast<std::size_t>(r) * n + c] = static_cast<float>(lum);
    };

    int c_lo = 0, c_hi = 0, r_lo = 0, r_hi = 0;
    col_range(-kRoadHalfWidth, kRoadHalfWidth, c_lo, c_hi);
    fill(0, n - 1, c_lo, c_hi, cfg.lum.road);

    for (const auto& obj : state.objects) {
        const double cy = obj.side * kAlleyOffset;
        row_range(obj.position - kDiscRadius, obj.position + kDiscRadius, r_lo, r_hi);
        col_range(cy - kDiscRadius, cy + kDiscRadius, c_lo, c_hi);
        for (int r = r_lo; r <= r_hi; ++r)
            for (int c = c_lo; c <= c_hi; ++c) {
                const double dx = row_center(r) - obj.position;
                const double dy = col_center(c) - cy;
                if (dx * dx + dy * dy <= kDiscRadius * kDiscRadius)
                    frame.px[static_cast<std::size_t>(r) * n + c] =
                        static_cast<float>(obj.luminance);
            }
    }

    for (const auto* veh : {&state.lead, &state.passenger}) {
        row_range(veh->position - kVehicleLength / 2, veh->position + kVehicleLength / 2, r_lo,
                  r_hi);
        col_range(-kVehicleHalfWidth, kVehicleHalfWidth, c_lo, c_hi);
        fill(r_lo, r_hi, c_lo, c_hi, cfg.lum.vehicle);
    }
    return frame;
}

Observation observe(const EpisodeState& state) { return state.frames; }

std::vector<float> observation_input(const Observation& obs) {
    std::vector<float> input;
    for (const auto& frame : obs) {
        if (!frame) throw UsageError("observation_input: empty frame");
        input.insert(input.end(), frame->px.begin(), frame->px.end());
    }
    return input;
}

std::string trace_to_csv(const std::vector<TraceRow>& rows) {
    std::ostringstream out;
    out << "step,d,lead_speed,passenger_speed,action,terminal,wvd_a,wvd_b\n";
    for (const auto& row : rows)
        out << row.step << ',' << io::fmt(row.d) << ',' << io::fmt(row.lead_speed) << ','
            << io::fmt(row.passenger_speed) << ',' << to_string(row.action) << ','
            << (row.terminal ? 1 : 0) << ',' << row.wvd_a << ',' << row.wvd_b << '\n';
    return out.str();
}

void frame_to_pgm(const Frame& frame, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("frame_to_pgm: cannot open " + path);
    f << "P5\n" << frame.size << ' ' << frame.size << "\n255\n";
    for (float v : frame.px) {
        const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
        f.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
    }
    if (!f) throw std::runtime_error("frame_to_pgm: short write to " + path);
}

} // namespace prefdrive::env
