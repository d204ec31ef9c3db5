#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefdrive/env.hpp"
#include "prefdrive/rng.hpp"

namespace prefdrive::reward {

struct SubjectProfile {
    double tpr = 0.5;
    double fpr = 0.5;

    void validate() const; // throws ConfigError when a rate leaves [0,1]
};

inline constexpr int kSubjectCount = 10;

// Classification quality per recorded subject; subject ids are 1-based.
SubjectProfile subject_preset(int subject_id);
SubjectProfile control_profile(); // tpr = fpr = 0.5: category-blind rewards

struct RewardWeights {
    double w1 = 1.0;
    double w2 = 1.0;
    double w3 = 1.0;
};

struct RewardConfig {
    RewardWeights weights;
    // false: one omega draw per contiguous in-view encounter (default);
    // true: fresh draw every frame the object stays in view.
    bool per_frame_omega = false;
};

// Driving-bounds term: +1 inside the open interval, -10 outside.
double r1(double d, double min_gap = 5.0, double max_gap = 60.0);

// Preference terms; the omega = rate boundary lands in the reward branch.
double r2(bool wvd_a, double omega, double tpr);
double r3(bool wvd_b, double omega, double fpr);

double combine(double r1_value, double r2_sum, double r3_sum,
               const RewardWeights& w = RewardWeights{});

struct Breakdown {
    double r1 = 0.0;
    double r2_sum = 0.0;
    double r3_sum = 0.0;
    double total = 0.0;
};

// Stateful per-episode evaluator: owns the omega stream and maintains the
// per-object draw caches on the episode state.
struct Evaluator {
    SubjectProfile subject;
    RewardConfig cfg;
    Rng rng;

    Evaluator(const SubjectProfile& s, const RewardConfig& c, std::uint64_t episode_seed);

    Breakdown evaluate(const env::WorldConfig& world, env::EpisodeState& state,
                       const env::StepResult& result);
};

struct TraceRow {
    std::int64_t step = 0;
    Breakdown values;
};

std::string trace_to_csv(const std::vector<TraceRow>& rows);

} // namespace prefdrive::reward
