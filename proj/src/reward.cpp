#include "prefdrive/reward.hpp"

#include <array>
#include <sstream>

#include "prefdrive/common.hpp"
#include "prefdrive/io.hpp"

namespace prefdrive::reward {

void SubjectProfile::validate() const {
    if (tpr < 0.0 || tpr > 1.0 || fpr < 0.0 || fpr > 1.0)
        throw ConfigError("subject profile: rates must lie in [0,1]");
}

namespace {

constexpr std::array<SubjectProfile, kSubjectCount> kSubjects = {{
    {0.8343, 0.0125},
    {0.9823, 0.9495},
    {1.0000, 0.0063},
    {0.8745, 0.0115},
    {0.8454, 0.0077},
    {0.8783, 0.0074},
    {0.8257, 0.0177},
    {1.0000, 0.9905},
    {0.7793, 0.0070},
    {0.6250, 0.0269},
}};

} // namespace

SubjectProfile subject_preset(int subject_id) {
    if (subject_id < 1 || subject_id > kSubjectCount)
        throw ConfigError("subject_preset: subject id " + std::to_string(subject_id) +
                          " outside 1.." + std::to_string(kSubjectCount));
    return kSubjects[static_cast<std::size_t>(subject_id - 1)];
}

SubjectProfile control_profile() { return {0.5, 0.5}; }

double r1(double d, double min_gap, double max_gap) {
    return (d > min_gap && d < max_gap) ? 1.0 : -10.0;
}

namespace {

// The omega = rate boundary joins the reward branch, except at rate = 0 where
// a reward must stay impossible; either way P(reward) = rate exactly.
bool classifier_hit(double omega, double rate) {
    return omega < rate || (omega == rate && rate > 0.0);
}

} // namespace

double r2(bool wvd_a, double omega, double tpr) {
    if (!wvd_a) return 0.0;
    return classifier_hit(omega, tpr) ? 3.0 : -1.0;
}

double r3(bool wvd_b, double omega, double fpr) {
    if (!wvd_b) return 0.0;
    return classifier_hit(omega, fpr) ? 3.0 : -1.0;
}

double combine(double r1_value, double r2_sum, double r3_sum, const RewardWeights& w) {
    return w.w1 * r1_value + w.w2 * r2_sum + w.w3 * r3_sum;
}

Evaluator::Evaluator(const SubjectProfile& s, const RewardConfig& c, std::uint64_t episode_seed)
    : subject(s), cfg(c), rng(Rng(episode_seed).derive("reward")) {
    subject.validate();
}

Breakdown Evaluator::evaluate(const env::WorldConfig& world, env::EpisodeState& state,
                              const env::StepResult& result) {
    Breakdown out;
    out.r1 = r1(state.gap(), world.min_gap, world.max_gap);
    for (const auto& event : result.events) {
        auto& obj = state.objects[static_cast<std::size_t>(event.object_index)];
        if (cfg.per_frame_omega || event.entered || obj.omega_draw < 0.0)
            obj.omega_draw = rng.uniform01();
        if (event.is_target)
            out.r2_sum += r2(true, obj.omega_draw, subject.tpr);
        else
            out.r3_sum += r3(true, obj.omega_draw, subject.fpr);
    }
    out.total = combine(out.r1, out.r2_sum, out.r3_sum, cfg.weights);
    return out;
}

std::string trace_to_csv(const std::vector<TraceRow>& rows) {
    std::ostringstream out;
    out << "step,r1,r2_sum,r3_sum,total\n";
    for (const auto& row : rows)
        out << row.step << ',' << io::fmt(row.values.r1) << ',' << io::fmt(row.values.r2_sum)
            << ',' << io::fmt(row.values.r3_sum) << ',' << io::fmt(row.values.total) << '\n';
    return out.str();
}

} // namespace prefdrive::reward
