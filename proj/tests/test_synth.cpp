#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "prefdrive/synth.hpp"

using namespace prefdrive;
using namespace prefdrive::synth;

namespace {

// rank-based AUC of a single scalar feature
double auc_of(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    std::size_t i = 0;
    std::vector<double> ranks(scores.size());
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (i + j - 1) + 1.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg_rank;
        i = j;
    }
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (labels[k]) {
            rank_sum += ranks[k];
            ++n_pos;
        } else {
            ++n_neg;
        }
    }
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (static_cast<double>(n_pos) * n_neg);
}

} // namespace

TEST_SUITE("synth") {

TEST_CASE("gen_trials: exact target count and shape") {
    SeparabilityConfig sep;
    const auto trials = gen_trials(1000, 0.25, sep, 1);
    REQUIRE(trials.size() == 1000);
    int n_targets = 0;
    for (const auto& t : trials) {
        REQUIRE(t.eeg.size() == kEegBins);
        for (const auto& bin : t.eeg) REQUIRE(bin.size() == 16);
        REQUIRE(t.pupil.size() == kPupilBins);
        REQUIRE(t.gaze_time >= 0.0);
        if (t.category == Category::target) ++n_targets;
    }
    CHECK(n_targets == 250);
}

TEST_CASE("gen_trials: zero effects leave class means indistinguishable") {
    SeparabilityConfig sep;
    sep.eeg_effect = sep.pupil_effect = sep.gaze_effect = 0.0;
    const auto trials = gen_trials(10000, 0.25, sep, 2);

    auto mean_diff = [&](auto&& extract) {
        double st = 0.0, sn = 0.0;
        int nt = 0, nn = 0;
        for (const auto& t : trials) {
            const double x = extract(t);
            if (t.category == Category::target) {
                st += x;
                ++nt;
            } else {
                sn += x;
                ++nn;
            }
        }
        return std::abs(st / nt - sn / nn);
    };

    // pooled SD is 1.0 for eeg, sep.pupil_noise for pupil
    for (int j = 0; j < kEegBins; ++j)
        CHECK(mean_diff([&](const PhysioTrial& t) { return t.eeg[j][0]; }) < 0.1);
    for (int k = 0; k < kPupilBins; ++k)
        CHECK(mean_diff([&](const PhysioTrial& t) { return t.pupil[k]; }) < 0.1);
    CHECK(mean_diff([&](const PhysioTrial& t) { return t.gaze_time; }) < 0.1 * 0.25);
}

TEST_CASE("gen_trials: eeg_effect 2 gives a strong single-feature discriminant on bin 4") {
    SeparabilityConfig sep;
    sep.eeg_effect = 2.0;
    sep.pupil_effect = sep.gaze_effect = 0.0;
    const auto trials = gen_trials(4000, 0.25, sep, 3);
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& t : trials) {
        scores.push_back(t.eeg[3][0]); // bin 4, first component
        labels.push_back(t.category == Category::target ? 1 : 0);
    }
    const double auc = auc_of(scores, labels);
    // closed form for a 2-SD shift: Phi(2/sqrt(2)) ~ 0.921
    CHECK(auc >= 0.9);
    CHECK(auc == doctest::Approx(0.9214).epsilon(0.02));
}

TEST_CASE("gen_trials: shifted window is bins 3-5 only") {
    SeparabilityConfig sep;
    sep.eeg_effect = 3.0;
    sep.pupil_effect = sep.gaze_effect = 0.0;
    const auto trials = gen_trials(8000, 0.25, sep, 4);
    for (int j = 0; j < kEegBins; ++j) {
        double st = 0.0, sn = 0.0;
        int nt = 0, nn = 0;
        for (const auto& t : trials) {
            double m = 0.0;
            for (double x : t.eeg[j]) m += x;
            m /= t.eeg[j].size();
            if (t.category == Category::target) {
                st += m;
                ++nt;
            } else {
                sn += m;
                ++nn;
            }
        }
        const double diff = st / nt - sn / nn;
        if (j >= 2 && j <= 4)
            CHECK(diff > 2.5);
        else
            CHECK(std::abs(diff) < 0.2);
    }
}

TEST_CASE("gen_trials: determinism and seed sensitivity") {
    SeparabilityConfig sep;
    const auto a = gen_trials(50, 0.25, sep, 77);
    const auto b = gen_trials(50, 0.25, sep, 77);
    const auto c = gen_trials(50, 0.25, sep, 78);
    CHECK(trials_to_csv(a) == trials_to_csv(b));
    CHECK(trials_to_csv(a) != trials_to_csv(c));
}

TEST_CASE("gen_trials: rejects bad arguments") {
    SeparabilityConfig sep;
    CHECK_THROWS_AS(gen_trials(0, 0.25, sep, 1), ConfigError);
    CHECK_THROWS_AS(gen_trials(10, 0.0, sep, 1), ConfigError);
    CHECK_THROWS_AS(gen_trials(10, 1.0, sep, 1), ConfigError);
    sep.eeg_noise = 0.0;
    CHECK_THROWS_AS(gen_trials(10, 0.25, sep, 1), ConfigError);
}

TEST_CASE("trials csv round-trip") {
    SeparabilityConfig sep;
    sep.n_components = 4;
    const auto trials = gen_trials(20, 0.25, sep, 5);
    const auto csv = trials_to_csv(trials);
    const auto back = trials_from_csv(csv);
    REQUIRE(back.size() == trials.size());
    CHECK(trials_to_csv(back) == csv);
    for (std::size_t i = 0; i < trials.size(); ++i) {
        CHECK(back[i].category == trials[i].category);
        CHECK(back[i].gaze_time == trials[i].gaze_time);
        CHECK(back[i].eeg[2][1] == trials[i].eeg[2][1]);
    }
}

TEST_CASE("gen_object_features: cluster_sep 0 is chance, 6 is separable") {
    auto accuracy = [](const std::vector<ObjectFeatures>& objs) {
        const std::size_t d = objs.front().vec.size();
        std::vector<double> ct(d, 0.0), cn(d, 0.0);
        int nt = 0, nn = 0;
        for (const auto& o : objs) {
            auto& c = o.category == Category::target ? ct : cn;
            for (std::size_t k = 0; k < d; ++k) c[k] += o.vec[k];
            (o.category == Category::target ? nt : nn)++;
        }
        for (std::size_t k = 0; k < d; ++k) {
            ct[k] /= nt;
            cn[k] /= nn;
        }
        int correct = 0;
        for (const auto& o : objs) {
            double dt = 0.0, dn = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                dt += (o.vec[k] - ct[k]) * (o.vec[k] - ct[k]);
                dn += (o.vec[k] - cn[k]) * (o.vec[k] - cn[k]);
            }
            const Category pred = dt < dn ? Category::target : Category::nontarget;
            if (pred == o.category) ++correct;
        }
        return static_cast<double>(correct) / objs.size();
    };

    const auto sep0 = gen_object_features(1000, 0.25, 0.0, 11);
    const auto sep6 = gen_object_features(1000, 0.25, 6.0, 11);
    // with identical clusters, nearest-centroid fits noise; the majority class
    // baseline is 0.75 and anything within 5% of it counts as chance here
    const double acc0 = accuracy(sep0);
    CHECK(acc0 < 0.80);
    CHECK(accuracy(sep6) >= 0.99);
}

TEST_CASE("gen_object_features: exact target fraction and determinism") {
    const auto objs = gen_object_features(400, 0.25, 4.0, 13);
    int nt = 0;
    for (const auto& o : objs) nt += o.category == Category::target;
    CHECK(nt == 100);
    const auto objs2 = gen_object_features(400, 0.25, 4.0, 13);
    CHECK(features_to_csv(objs) == features_to_csv(objs2));
}

TEST_CASE("gen_object_features_for: honors the given category sequence") {
    std::vector<Category> cats{Category::target, Category::nontarget, Category::nontarget,
                               Category::target, Category::nontarget};
    const auto objs = gen_object_features_for(cats, 3.0, 17, 8);
    REQUIRE(objs.size() == cats.size());
    for (std::size_t i = 0; i < cats.size(); ++i) {
        CHECK(objs[i].category == cats[i]);
        CHECK(objs[i].object_id == static_cast<int>(i));
        CHECK(objs[i].vec.size() == 8);
    }
}

TEST_CASE("features csv round-trip") {
    const auto objs = gen_object_features(24, 0.25, 2.0, 19, 16);
    const auto csv = features_to_csv(objs);
    const auto back = features_from_csv(csv);
    REQUIRE(back.size() == objs.size());
    CHECK(features_to_csv(back) == csv);
}

TEST_CASE("correlation couples modalities") {
    SeparabilityConfig sep;
    sep.eeg_effect = sep.pupil_effect = sep.gaze_effect = 0.0;
    sep.correlation = 0.9;
    const auto trials = gen_trials(4000, 0.25, sep, 21);
    double sxy = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0;
    const int n = static_cast<int>(trials.size());
    for (const auto& t : trials) {
        const double x = t.eeg[0][0];
        const double y = t.pupil[0];
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    const double corr = cov / std::sqrt(vx * vy);
    CHECK(corr > 0.7); // expected rho = 0.9
}

} // TEST_SUITE
