#include "prefdrive/hdca.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "prefdrive/io.hpp"
#include "prefdrive/linalg.hpp"
#include "prefdrive/metrics.hpp"

namespace prefdrive::hdca {

namespace {

std::vector<double> col_mean(const std::vector<std::vector<double>>& xs) {
    const std::size_t d = xs.front().size();
    std::vector<double> m(d, 0.0);
    for (const auto& x : xs)
        for (std::size_t k = 0; k < d; ++k) m[k] += x[k];
    for (auto& v : m) v /= static_cast<double>(xs.size());
    return m;
}

// sample covariance (n-1 denominator)
linalg::Matrix covariance(const std::vector<std::vector<double>>& xs,
                          const std::vector<double>& mean) {
    const std::size_t d = mean.size();
    linalg::Matrix c(d, d);
    for (const auto& x : xs)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j) c(i, j) += (x[i] - mean[i]) * (x[j] - mean[j]);
    const double denom = static_cast<double>(xs.size() - 1);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            c(i, j) /= denom;
            c(j, i) = c(i, j);
        }
    return c;
}

std::vector<double> flda_core(const std::vector<std::vector<double>>& pos,
                              const std::vector<std::vector<double>>& neg, double ridge,
                              bool relative) {
    if (pos.size() < 2 || neg.size() < 2)
        throw ConfigError("flda_weights: need at least 2 trials per class");
    const std::size_t d = pos.front().size();
    for (const auto& x : pos)
        if (x.size() != d) throw ConfigError("flda_weights: inconsistent dimensions");
    for (const auto& x : neg)
        if (x.size() != d) throw ConfigError("flda_weights: inconsistent dimensions");
    if (ridge < 0) throw ConfigError("flda_weights: ridge must be >= 0");

    const auto mp = col_mean(pos);
    const auto mn = col_mean(neg);
    auto s = covariance(pos, mp);
    const auto sn = covariance(neg, mn);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) s(i, j) += sn(i, j);

    double eps = ridge;
    if (relative) {
        double trace = 0.0;
        for (std::size_t i = 0; i < d; ++i) trace += s(i, i);
        eps = ridge * trace / static_cast<double>(d);
    }
    for (std::size_t i = 0; i < d; ++i) s(i, i) += eps;

    std::vector<double> diff(d);
    for (std::size_t k = 0; k < d; ++k) diff[k] = mp[k] - mn[k];
    try {
        return linalg::cholesky_solve(s, diff);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string("flda_weights: singular covariance (set ridge > 0): ") +
                                 e.what());
    }
}

} // namespace

std::vector<double> flda_weights(const std::vector<std::vector<double>>& pos,
                                 const std::vector<std::vector<double>>& neg, double ridge) {
    return flda_core(pos, neg, ridge, false);
}

std::vector<double> flda_weights_rel(const std::vector<std::vector<double>>& pos,
                                     const std::vector<std::vector<double>>& neg,
                                     double ridge_scale) {
    return flda_core(pos, neg, ridge_scale, true);
}

std::vector<double> within_bin_scores(const std::vector<double>& w,
                                      const std::vector<std::vector<double>>& xs) {
    std::vector<double> z;
    z.reserve(xs.size());
    for (const auto& x : xs) z.push_back(linalg::dot(w, x));
    return z;
}

namespace {

std::string feature_name(int i) {
    if (i < synth::kEegBins) return "eeg bin " + std::to_string(i + 1);
    if (i < synth::kEegBins + synth::kPupilBins)
        return "pupil bin " + std::to_string(i - synth::kEegBins + 1);
    return "gaze";
}

} // namespace

std::vector<double> raw_features(const HdcaModel& m, const synth::PhysioTrial& t) {
    if (m.eeg_w.size() != synth::kEegBins || m.pupil_w.size() != synth::kPupilBins)
        throw ConfigError("raw_features: model lacks per-bin discriminants");
    std::vector<double> f(kNumFeatures);
    for (int j = 0; j < synth::kEegBins; ++j) f[j] = linalg::dot(m.eeg_w[j], t.eeg[j]);
    for (int k = 0; k < synth::kPupilBins; ++k)
        f[synth::kEegBins + k] = m.pupil_w[k] * t.pupil[k];
    f[kNumFeatures - 1] = m.gaze_w * t.gaze_time;
    return f;
}

std::vector<std::vector<double>> assemble_features(HdcaModel& m,
                                                   const std::vector<synth::PhysioTrial>& eval_trials) {
    std::vector<std::vector<double>> raw;
    raw.reserve(eval_trials.size());
    for (const auto& t : eval_trials) raw.push_back(raw_features(m, t));

    m.rescale.assign(kNumFeatures, 0.0);
    for (int i = 0; i < kNumFeatures; ++i) {
        std::vector<double> col;
        col.reserve(raw.size());
        for (const auto& f : raw) col.push_back(f[i]);
        const double sd = stats::sample_sd(col);
        if (!(sd > 0.0) || !std::isfinite(sd))
            throw ConfigError("assemble_features: degenerate feature (zero SD): " +
                              feature_name(i));
        m.rescale[i] = sd;
    }
    for (auto& f : raw)
        for (int i = 0; i < kNumFeatures; ++i) f[i] /= m.rescale[i];
    return raw;
}

std::vector<double> featurize(const HdcaModel& m, const synth::PhysioTrial& t) {
    if (m.rescale.size() != kNumFeatures)
        throw ConfigError("featurize: model has no rescale SDs");
    auto f = raw_features(m, t);
    for (int i = 0; i < kNumFeatures; ++i) f[i] /= m.rescale[i];
    return f;
}

namespace {

// log(1 + exp(a)) without overflow
double log1pexp(double a) {
    if (a <= -37.0) return std::exp(a);
    if (a <= 18.0) return std::log1p(std::exp(a));
    if (a <= 33.3) return a + std::exp(-a);
    return a;
}

// 1 / (1 + exp(t))
double inv1pexp(double t) {
    if (t > 0) {
        const double e = std::exp(-t);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(t));
}

double max_norm(const std::vector<double>& g) {
    double m = 0.0;
    for (double x : g) m = std::max(m, std::abs(x));
    return m;
}

void check_logistic_inputs(const std::vector<std::vector<double>>& z, const std::vector<int>& c) {
    if (z.empty() || z.size() != c.size())
        throw ConfigError("logistic: features/labels size mismatch");
    bool any_pos = false, any_neg = false;
    for (int ci : c) {
        if (ci == 1)
            any_pos = true;
        else if (ci == -1)
            any_neg = true;
        else
            throw ConfigError("logistic: labels must be +1 or -1");
    }
    if (!any_pos || !any_neg) throw ConfigError("logistic: both classes required");
    const std::size_t d = z.front().size();
    for (const auto& zi : z) {
        if (zi.size() != d) throw ConfigError("logistic: inconsistent feature dimensions");
        for (double x : zi)
            if (!std::isfinite(x)) throw ConfigError("logistic: non-finite feature");
    }
}

} // namespace

double logistic_objective(const std::vector<std::vector<double>>& z, const std::vector<int>& c,
                          double lambda, const std::vector<double>& v) {
    double f = lambda * linalg::dot(v, v);
    for (std::size_t i = 0; i < z.size(); ++i)
        f += log1pexp(-c[i] * linalg::dot(v, z[i]));
    return f;
}

std::vector<double> logistic_gradient(const std::vector<std::vector<double>>& z,
                                      const std::vector<int>& c, double lambda,
                                      const std::vector<double>& v) {
    std::vector<double> g(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) g[k] = 2.0 * lambda * v[k];
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double margin = c[i] * linalg::dot(v, z[i]);
        const double p = inv1pexp(margin); // sigmoid(-margin)
        const double scale = -c[i] * p;
        for (std::size_t k = 0; k < v.size(); ++k) g[k] += scale * z[i][k];
    }
    return g;
}

std::vector<double> logistic_train(const std::vector<std::vector<double>>& z,
                                   const std::vector<int>& c, double lambda, int max_iters,
                                   double tol) {
    check_logistic_inputs(z, c);
    const std::size_t d = z.front().size();

    // accelerated gradient descent with backtracking and objective restarts
    std::vector<double> x(d, 0.0), y(d, 0.0);
    double t = 1.0;
    double step_l = 1.0;
    double f_prev = logistic_objective(z, c, lambda, x);

    for (int iter = 0; iter < max_iters; ++iter) {
        const auto g = logistic_gradient(z, c, lambda, y);
        const double fy = logistic_objective(z, c, lambda, y);
        const double gg = linalg::dot(g, g);

        std::vector<double> x_new(d);
        double fx = 0.0;
        for (;;) {
            for (std::size_t k = 0; k < d; ++k) x_new[k] = y[k] - g[k] / step_l;
            fx = logistic_objective(z, c, lambda, x_new);
            if (fx <= fy - gg / (2.0 * step_l) + 1e-12 * std::abs(fy) || step_l > 1e18) break;
            step_l *= 2.0;
        }

        const auto gx = logistic_gradient(z, c, lambda, x_new);
        if (max_norm(gx) < tol) return x_new;

        double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if (fx > f_prev) {
            // objective went up: drop momentum
            t_new = 1.0;
            y = x_new;
        } else {
            const double beta = (t - 1.0) / t_new;
            for (std::size_t k = 0; k < d; ++k) y[k] = x_new[k] + beta * (x_new[k] - x[k]);
        }
        x = x_new;
        f_prev = fx;
        t = t_new;
        step_l *= 0.9; // let the step size re-grow if the local curvature allows
    }

    const auto g = logistic_gradient(z, c, lambda, x);
    std::fprintf(stderr, "logistic_train: no convergence after %d iterations (grad max-norm %g)\n",
                 max_iters, max_norm(g));
    return x;
}

double cross_bin_score(const std::vector<double>& v, const std::vector<double>& z) {
    return linalg::dot(v, z);
}

Prediction predict_targets(const std::vector<double>& scores,
                           const std::vector<Category>& categories) {
    if (scores.size() < 2) throw ConfigError("predict_targets: need at least 2 scores");
    if (scores.size() != categories.size())
        throw ConfigError("predict_targets: scores/categories size mismatch");

    Prediction p;
    p.threshold = stats::mean(scores) + stats::sample_sd(scores);
    int tp = 0, fp = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] > p.threshold;
        if (predicted) p.predicted.push_back(static_cast<int>(i));
        if (categories[i] == Category::target) {
            ++pos;
            tp += predicted;
        } else {
            ++neg;
            fp += predicted;
        }
    }
    p.tpr = pos ? static_cast<double>(tp) / pos : std::nan("");
    p.fpr = neg ? static_cast<double>(fp) / neg : std::nan("");
    return p;
}

SplitSpec make_split(const std::vector<Category>& categories, double train_frac, double eval_frac,
                     Rng rng) {
    if (train_frac <= 0 || eval_frac <= 0 || train_frac + eval_frac >= 1)
        throw ConfigError("make_split: fractions must be positive and sum below 1");

    SplitSpec split;
    for (const Category cls : {Category::target, Category::nontarget}) {
        std::vector<int> idx;
        for (std::size_t i = 0; i < categories.size(); ++i)
            if (categories[i] == cls) idx.push_back(static_cast<int>(i));
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_int(i)]);

        const auto n = static_cast<long>(idx.size());
        const long n_train = std::lround(train_frac * n);
        const long n_eval = std::lround(eval_frac * n);
        if (n_train < 2 || n_eval < 2 || n - n_train - n_eval < 2)
            throw ConfigError("make_split: a split would hold fewer than 2 trials of class " +
                              std::string(to_string(cls)));
        split.train.insert(split.train.end(), idx.begin(), idx.begin() + n_train);
        split.evaluation.insert(split.evaluation.end(), idx.begin() + n_train,
                                idx.begin() + n_train + n_eval);
        split.test.insert(split.test.end(), idx.begin() + n_train + n_eval, idx.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.evaluation.begin(), split.evaluation.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

FitResult fit(const std::vector<synth::PhysioTrial>& trials, const FitConfig& cfg,
              std::uint64_t seed) {
    std::vector<Category> categories;
    categories.reserve(trials.size());
    for (const auto& t : trials) categories.push_back(t.category);

    FitResult r;
    r.split = make_split(categories, cfg.train_frac, cfg.eval_frac, Rng(seed).derive("hdca-split"));
    r.model.lambda = cfg.lambda;

    auto gather = [&](const std::vector<int>& idx, auto&& extract) {
        std::vector<std::vector<double>> pos, neg;
        for (int i : idx) {
            auto x = extract(trials[static_cast<std::size_t>(i)]);
            (trials[static_cast<std::size_t>(i)].category == Category::target ? pos : neg)
                .push_back(std::move(x));
        }
        return std::pair{std::move(pos), std::move(neg)};
    };

    // per-bin discriminants from the training split only
    r.model.eeg_w.resize(synth::kEegBins);
    for (int j = 0; j < synth::kEegBins; ++j) {
        auto [pos, neg] = gather(r.split.train, [&](const synth::PhysioTrial& t) {
            return t.eeg[static_cast<std::size_t>(j)];
        });
        r.model.eeg_w[static_cast<std::size_t>(j)] = flda_weights_rel(pos, neg, cfg.ridge_scale);
    }
    r.model.pupil_w.resize(synth::kPupilBins);
    for (int k = 0; k < synth::kPupilBins; ++k) {
        auto [pos, neg] = gather(r.split.train, [&](const synth::PhysioTrial& t) {
            return std::vector<double>{t.pupil[static_cast<std::size_t>(k)]};
        });
        r.model.pupil_w[static_cast<std::size_t>(k)] = flda_weights_rel(pos, neg, cfg.ridge_scale)[0];
    }
    {
        auto [pos, neg] = gather(r.split.train, [&](const synth::PhysioTrial& t) {
            return std::vector<double>{t.gaze_time};
        });
        r.model.gaze_w = flda_weights_rel(pos, neg, cfg.ridge_scale)[0];
    }

    // rescaling SDs and cross-bin weights from the evaluation split only
    std::vector<synth::PhysioTrial> eval_trials;
    std::vector<int> labels;
    for (int i : r.split.evaluation) {
        eval_trials.push_back(trials[static_cast<std::size_t>(i)]);
        labels.push_back(trials[static_cast<std::size_t>(i)].category == Category::target ? 1 : -1);
    }
    const auto eval_z = assemble_features(r.model, eval_trials);
    r.model.v = logistic_train(eval_z, labels, cfg.lambda, cfg.max_iters, cfg.tol);

    // report on the test split only
    for (int i : r.split.test) {
        r.test_scores.push_back(
            cross_bin_score(r.model.v, featurize(r.model, trials[static_cast<std::size_t>(i)])));
        r.test_categories.push_back(trials[static_cast<std::size_t>(i)].category);
    }
    r.test = predict_targets(r.test_scores, r.test_categories);
    r.model.threshold = r.test.threshold;
    r.test_auc = metrics::auc(r.test_scores, r.test_categories);
    return r;
}

std::string save_model(const HdcaModel& m) {
    std::ostringstream out;
    out << "hdca_model 1\n";
    out << "lambda " << io::fmt(m.lambda) << '\n';
    out << "threshold " << io::fmt(m.threshold) << '\n';
    out << "components " << (m.eeg_w.empty() ? 0 : m.eeg_w.front().size()) << '\n';
    out << "eeg_w\n";
    for (const auto& w : m.eeg_w) {
        for (std::size_t k = 0; k < w.size(); ++k) out << (k ? " " : "") << io::fmt(w[k]);
        out << '\n';
    }
    out << "pupil_w";
    for (double w : m.pupil_w) out << ' ' << io::fmt(w);
    out << '\n';
    out << "gaze_w " << io::fmt(m.gaze_w) << '\n';
    out << "rescale";
    for (double s : m.rescale) out << ' ' << io::fmt(s);
    out << '\n';
    out << "v";
    for (double x : m.v) out << ' ' << io::fmt(x);
    out << '\n';
    return out.str();
}

HdcaModel load_model(const std::string& text) {
    std::istringstream in(text);
    std::string tag;
    int version = 0;
    in >> tag >> version;
    if (tag != "hdca_model" || version != 1)
        throw ConfigError("load_model: not an hdca_model v1 file");

    HdcaModel m;
    std::size_t components = 0;
    auto expect = [&](const char* key) {
        in >> tag;
        if (tag != key) throw ConfigError(std::string("load_model: expected '") + key + "', got '" + tag + "'");
    };
    expect("lambda");
    in >> m.lambda;
    expect("threshold");
    in >> m.threshold;
    expect("components");
    in >> components;
    expect("eeg_w");
    m.eeg_w.assign(synth::kEegBins, std::vector<double>(components));
    for (auto& w : m.eeg_w)
        for (auto& x : w) in >> x;
    expect("pupil_w");
    m.pupil_w.resize(synth::kPupilBins);
    for (auto& x : m.pupil_w) in >> x;
    expect("gaze_w");
    in >> m.gaze_w;
    expect("rescale");
    m.rescale.resize(kNumFeatures);
    for (auto& x : m.rescale) in >> x;
    expect("v");
    m.v.resize(kNumFeatures);
    for (auto& x : m.v) in >> x;
    if (!in) throw ConfigError("load_model: truncated file");
    return m;
}

} // namespace prefdrive::hdca
