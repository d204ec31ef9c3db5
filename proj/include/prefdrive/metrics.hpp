#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefdrive/common.hpp"
#include "prefdrive/dqn.hpp"

namespace prefdrive::metrics {

// Rank-based AUC (ties get average ranks). Labels map target -> positive.
double auc(const std::vector<double>& scores, const std::vector<Category>& labels);

// Per-episode dwell seconds aggregated across an episode log. Categories are
// the object's true category; "empty" covers in-view time near unoccupied
// alleys and open road.
struct DwellReport {
    std::vector<double> target_samples;    // one entry per episode
    std::vector<double> nontarget_samples; // same length
    std::vector<double> empty_samples;     // same length
    double mean_target = 0.0;
    double sd_target = 0.0;
    double mean_nontarget = 0.0;
    double sd_nontarget = 0.0;
    double mean_empty = 0.0;
    double sd_empty = 0.0;
    // 100 * (mean_target - mean_nontarget) / mean_nontarget; 0 when the
    // denominator is zero
    double percent_separation = 0.0;
};

DwellReport dwell_times(const std::vector<dqn::EpisodeLogRow>& episodes);

// Same, but each sample is divided by how many objects (or empty alleys) of
// that category the world holds, so the means compare per-object lingering
// rather than category population. Counts below one are treated as one.
DwellReport dwell_times(const std::vector<dqn::EpisodeLogRow>& episodes, int n_target,
                        int n_nontarget, int n_empty);

struct F1Result {
    double f1 = 0.0;
    bool undefined = false; // tpr = fpr = 0 leaves precision with no support
};

// Precision from (tpr, fpr) at the given target prevalence; recall = tpr.
F1Result f1_from_rates(double tpr, double fpr, double target_prevalence = 0.25);

// Two-sided Mann-Whitney rank test (normal approximation with tie and
// continuity corrections). Identical samples give p = 1. Intended for
// sample sizes of 10 and up.
double significance(const std::vector<double>& a, const std::vector<double>& b);

struct QTraceSummary {
    bool plateau = false;         // drift over the last fifth < 10% of the range
    std::vector<double> normalized; // min-max normalized trace values
    double slope = 0.0;           // OLS slope (q per step) over the last fifth
    double drift = 0.0;           // |slope| * step span of the last fifth
    double range = 0.0;           // global max - min of the raw trace
};

// Intended for traces of 100+ points; throws UsageError below 2 points.
QTraceSummary qtrace_summary(const std::vector<dqn::QTracePoint>& trace);

// Self-contained SVG charts for the report bundle.
std::string dwell_chart_svg(const DwellReport& report);
std::string runtime_chart_svg(const std::vector<double>& run_times_s);
std::string qtrace_chart_svg(const std::vector<dqn::QTracePoint>& trace);

} // namespace prefdrive::metrics
