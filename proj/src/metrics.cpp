#include "prefdrive/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "prefdrive/io.hpp"

namespace prefdrive::metrics {

namespace {

std::string fixed(double x, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, x);
    return buf;
}

// average ranks (1-based) with ties shared
std::vector<double> ranks_of(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j - 1) + 1.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
        i = j;
    }
    return ranks;
}

double mean_of(const std::vector<double>& x) {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(const std::vector<double>& x) {
    if (x.size() < 2) return 0.0;
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

} // namespace

double auc(const std::vector<double>& scores, const std::vector<Category>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("auc: scores/labels size mismatch");
    const auto ranks = ranks_of(scores);
    double rank_sum = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == Category::target) {
            rank_sum += ranks[i];
            ++n_pos;
        } else {
            ++n_neg;
        }
    }
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auc: need both classes");
    return (rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

DwellReport dwell_times(const std::vector<dqn::EpisodeLogRow>& episodes) {
    return dwell_times(episodes, 1, 1, 1);
}

DwellReport dwell_times(const std::vector<dqn::EpisodeLogRow>& episodes, int n_target,
                        int n_nontarget, int n_empty) {
    if (episodes.empty()) throw UsageError("dwell_times: needs at least one episode");
    const double per_target = std::max(1, n_target);
    const double per_nontarget = std::max(1, n_nontarget);
    const double per_empty = std::max(1, n_empty);
    DwellReport report;
    for (const auto& row : episodes) {
        if (row.dwell_target_s < 0.0 || row.dwell_nontarget_s < 0.0 || row.dwell_empty_s < 0.0)
            throw ConfigError("dwell_times: negative dwell in the episode log");
        report.target_samples.push_back(row.dwell_target_s / per_target);
        report.nontarget_samples.push_back(row.dwell_nontarget_s / per_nontarget);
        report.empty_samples.push_back(row.dwell_empty_s / per_empty);
    }
    report.mean_target = mean_of(report.target_samples);
    report.sd_target = sample_sd(report.target_samples);
    report.mean_nontarget = mean_of(report.nontarget_samples);
    report.sd_nontarget = sample_sd(report.nontarget_samples);
    report.mean_empty = mean_of(report.empty_samples);
    report.sd_empty = sample_sd(report.empty_samples);
    if (report.mean_nontarget > 0.0)
        report.percent_separation =
            100.0 * (report.mean_target - report.mean_nontarget) / report.mean_nontarget;
    return report;
}

F1Result f1_from_rates(double tpr, double fpr, double target_prevalence) {
    if (tpr < 0.0 || tpr > 1.0 || fpr < 0.0 || fpr > 1.0)
        throw ConfigError("f1_from_rates: rates outside [0,1]");
    if (target_prevalence <= 0.0 || target_prevalence >= 1.0)
        throw ConfigError("f1_from_rates: prevalence outside (0,1)");
    if (tpr == 0.0 && fpr == 0.0) return {0.0, true};
    if (tpr == 0.0) return {0.0, false}; // catches nothing: recall 0, F1 0
    const double p = target_prevalence;
    const double precision = tpr * p / (tpr * p + fpr * (1.0 - p));
    const double recall = tpr;
    return {2.0 * precision * recall / (precision + recall), false};
}

double significance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw UsageError("significance: empty sample");
    const double n1 = static_cast<double>(a.size());
    const double n2 = static_cast<double>(b.size());
    const double n = n1 + n2;

    std::vector<double> pooled;
    pooled.reserve(a.size() + b.size());
    pooled.insert(pooled.end(), a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto ranks = ranks_of(pooled);

    double rank_sum_a = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) rank_sum_a += ranks[i];
    const double u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    const double mu = n1 * n2 / 2.0;

    // tie correction over pooled value groups
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if (var <= 0.0) return 1.0; // every pooled value identical

    const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

QTraceSummary qtrace_summary(const std::vector<dqn::QTracePoint>& trace) {
    if (trace.size() < 2) throw UsageError("qtrace_summary: needs at least two points");
    QTraceSummary summary;

    double lo = trace.front().mean_max_q, hi = lo;
    for (const auto& point : trace) {
        lo = std::min(lo, point.mean_max_q);
        hi = std::max(hi, point.mean_max_q);
    }
    summary.range = hi - lo;
    summary.normalized.reserve(trace.size());
    for (const auto& point : trace)
        summary.normalized.push_back(summary.range > 0.0
                                         ? (point.mean_max_q - lo) / summary.range
                                         : 0.0);

    const std::size_t tail = std::max<std::size_t>(2, (trace.size() + 4) / 5);
    const std::size_t start = trace.size() - tail;
    double s_mean = 0.0, v_mean = 0.0;
    for (std::size_t k = start; k < trace.size(); ++k) {
        s_mean += static_cast<double>(trace[k].step);
        v_mean += trace[k].mean_max_q;
    }
    s_mean /= static_cast<double>(tail);
    v_mean /= static_cast<double>(tail);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t k = start; k < trace.size(); ++k) {
        const double ds = static_cast<double>(trace[k].step) - s_mean;
        sxx += ds * ds;
        sxy += ds * (trace[k].mean_max_q - v_mean);
    }
    summary.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    const double span = static_cast<double>(trace.back().step - trace[start].step);
    summary.drift = std::abs(summary.slope) * span;
    summary.plateau = summary.range > 0.0 ? summary.drift < 0.1 * summary.range : true;
    return summary;
}

namespace {

constexpr int kChartW = 480;
constexpr int kChartH = 320;
constexpr int kMarginL = 60;
constexpr int kMarginR = 20;
constexpr int kMarginT = 34;
constexpr int kMarginB = 48;

std::string svg_open(const std::string& title) {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kChartW << "\" height=\""
        << kChartH << "\" viewBox=\"0 0 " << kChartW << ' ' << kChartH << "\">\n"
        << "<rect width=\"" << kChartW << "\" height=\"" << kChartH
        << "\" fill=\"white\"/>\n"
        << "<text x=\"" << kChartW / 2 << "\" y=\"20\" font-size=\"14\" text-anchor=\"middle\""
        << " font-family=\"sans-serif\">" << title << "</text>\n";
    return out.str();
}

std::string svg_axes() {
    std::ostringstream out;
    const int x0 = kMarginL, y0 = kChartH - kMarginB, x1 = kChartW - kMarginR, y1 = kMarginT;
    out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
        << "\" stroke=\"black\"/>\n";
    return out.str();
}

// y pixel for a value in [0, y_max]
double y_px(double v, double y_max) {
    const double h = kChartH - kMarginT - kMarginB;
    return (kChartH - kMarginB) - (y_max > 0.0 ? v / y_max : 0.0) * h;
}

std::string polyline_chart(const std::string& title, const std::vector<double>& xs,
                           const std::vector<double>& ys, const std::string& x_label,
                           const std::string& y_label, double y_max) {
    std::ostringstream out;
    out << svg_open(title) << svg_axes();
    const double x_lo = xs.front(), x_hi = xs.back();
    const double x_span = x_hi > x_lo ? x_hi - x_lo : 1.0;
    const double w = kChartW - kMarginL - kMarginR;
    out << "<polyline fill=\"none\" stroke=\"#2060a0\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out << ' ';
        out << io::fmt(kMarginL + (xs[i] - x_lo) / x_span * w) << ','
            << io::fmt(y_px(ys[i], y_max));
    }
    out << "\"/>\n";
    out << "<text x=\"" << (kMarginL + (kChartW - kMarginR)) / 2 << "\" y=\"" << kChartH - 12
        << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">" << x_label
        << "</text>\n";
    out << "<text x=\"16\" y=\"" << (kMarginT + kChartH - kMarginB) / 2
        << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\""
        << " transform=\"rotate(-90 16 " << (kMarginT + kChartH - kMarginB) / 2 << ")\">"
        << y_label << "</text>\n";
    out << "<text x=\"" << kMarginL - 6 << "\" y=\"" << kMarginT + 4
        << "\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">"
        << fixed(y_max, 2) << "</text>\n";
    out << "</svg>\n";
    return out.str();
}

} // namespace

std::string dwell_chart_svg(const DwellReport& report) {
    const std::size_t n = report.target_samples.size();
    const double root_n = std::sqrt(static_cast<double>(std::max<std::size_t>(n, 1)));
    const double se[3] = {report.sd_target / root_n, report.sd_nontarget / root_n,
                          report.sd_empty / root_n};
    const double means[3] = {report.mean_target, report.mean_nontarget, report.mean_empty};
    const char* names[3] = {"target", "non-target", "empty"};
    const char* fills[3] = {"#c04040", "#4060c0", "#808080"};

    double y_max = 0.0;
    for (int i = 0; i < 3; ++i) y_max = std::max(y_max, means[i] + se[i]);
    y_max = y_max > 0.0 ? y_max * 1.15 : 1.0;

    std::ostringstream out;
    out << svg_open("dwell time by category (s)") << svg_axes();
    const double w = kChartW - kMarginL - kMarginR;
    const double slot = w / 3.0;
    for (int i = 0; i < 3; ++i) {
        const double cx = kMarginL + slot * (i + 0.5);
        const double bar_w = slot * 0.5;
        const double top = y_px(means[i], y_max);
        const double base = y_px(0.0, y_max);
        out << "<rect x=\"" << io::fmt(cx - bar_w / 2) << "\" y=\"" << io::fmt(top)
            << "\" width=\"" << io::fmt(bar_w) << "\" height=\"" << io::fmt(base - top)
            << "\" fill=\"" << fills[i] << "\"/>\n";
        if (se[i] > 0.0) {
            const double lo = y_px(means[i] - se[i], y_max);
            const double hi = y_px(means[i] + se[i], y_max);
            out << "<line x1=\"" << io::fmt(cx) << "\" y1=\"" << io::fmt(lo) << "\" x2=\""
                << io::fmt(cx) << "\" y2=\"" << io::fmt(hi) << "\" stroke=\"black\"/>\n";
            for (double y : {lo, hi})
                out << "<line x1=\"" << io::fmt(cx - 5) << "\" y1=\"" << io::fmt(y)
                    << "\" x2=\"" << io::fmt(cx + 5) << "\" y2=\"" << io::fmt(y)
                    << "\" stroke=\"black\"/>\n";
        }
        out << "<text x=\"" << io::fmt(cx) << "\" y=\"" << kChartH - kMarginB + 16
            << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">"
            << names[i] << "</text>\n";
        out << "<text x=\"" << io::fmt(cx) << "\" y=\"" << io::fmt(top - 4)
            << "\" font-size=\"10\" text-anchor=\"middle\" font-family=\"sans-serif\">"
            << fixed(means[i], 2) << "</text>\n";
    }
    out << "<text x=\"" << kChartW - kMarginR << "\" y=\"" << kMarginT + 4
        << "\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">separation "
        << fixed(report.percent_separation, 1) << "%</text>\n";
    out << "</svg>\n";
    return out.str();
}

std::string runtime_chart_svg(const std::vector<double>& run_times_s) {
    if (run_times_s.empty()) throw UsageError("runtime_chart_svg: no episodes");
    std::vector<double> xs(run_times_s.size());
    std::iota(xs.begin(), xs.end(), 0.0);
    double y_max = 0.0;
    for (double v : run_times_s) y_max = std::max(y_max, v);
    y_max = y_max > 0.0 ? y_max * 1.1 : 1.0;
    return polyline_chart("episode run time", xs, run_times_s, "episode", "seconds", y_max);
}

std::string qtrace_chart_svg(const std::vector<dqn::QTracePoint>& trace) {
    const auto summary = qtrace_summary(trace); // validates length
    std::vector<double> xs;
    xs.reserve(trace.size());
    for (const auto& point : trace) xs.push_back(static_cast<double>(point.step));
    return polyline_chart("normalized Q trace", xs, summary.normalized, "step", "normalized q",
                          1.0);
}

} // namespace prefdrive::metrics
