#include "prefdrive/tag.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include <json.hpp>

#include "prefdrive/io.hpp"
#include "prefdrive/rng.hpp"

namespace prefdrive::tag {

double SimilarityGraph::weight(int i, int j) const {
    for (const auto& [nb, w] : adj[static_cast<std::size_t>(i)])
        if (nb == j) return w;
    return 0.0;
}

std::size_t SimilarityGraph::edge_count() const {
    std::size_t total = 0;
    for (const auto& nbrs : adj) total += nbrs.size();
    return total / 2;
}

bool SimilarityGraph::connected() const {
    if (n == 0) return true;
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::deque<int> queue{0};
    seen[0] = 1;
    int visited = 1;
    while (!queue.empty()) {
        const int i = queue.front();
        queue.pop_front();
        for (const auto& [j, w] : adj[static_cast<std::size_t>(i)]) {
            (void)w;
            if (!seen[static_cast<std::size_t>(j)]) {
                seen[static_cast<std::size_t>(j)] = 1;
                ++visited;
                queue.push_back(j);
            }
        }
    }
    return visited == n;
}

namespace {

double dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace

SimilarityGraph build_graph(const std::vector<synth::ObjectFeatures>& features, int k) {
    const int n = static_cast<int>(features.size());
    if (k < 1 || k >= n)
        throw ConfigError("build_graph: need n > k >= 1");
    for (const auto& o : features)
        for (double x : o.vec)
            if (!std::isfinite(x)) throw ConfigError("build_graph: non-finite feature");

    const int bw_rank = (k + 1) / 2; // ceil(k/2), 1-based neighbor rank
    std::vector<double> sigma(static_cast<std::size_t>(n), 0.0);
    std::vector<double> knn_dist(static_cast<std::size_t>(n), 0.0);
    std::vector<double> row(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            row[static_cast<std::size_t>(j)] =
                i == j ? std::numeric_limits<double>::infinity()
                       : dist(features[static_cast<std::size_t>(i)].vec,
                              features[static_cast<std::size_t>(j)].vec);
        auto sorted = row;
        std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
        knn_dist[static_cast<std::size_t>(i)] = sorted[static_cast<std::size_t>(k - 1)];
        std::nth_element(sorted.begin(), sorted.begin() + (bw_rank - 1), sorted.end());
        sigma[static_cast<std::size_t>(i)] = sorted[static_cast<std::size_t>(bw_rank - 1)];
    }

    if (std::any_of(sigma.begin(), sigma.end(), [](double s) { return s <= 0.0; })) {
        // duplicates collapsed some bandwidths; use the global median distance
        std::vector<double> positive;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double d = dist(features[static_cast<std::size_t>(i)].vec,
                                      features[static_cast<std::size_t>(j)].vec);
                if (d > 0.0) positive.push_back(d);
            }
        const double fallback = positive.empty() ? 1.0 : stats::median(positive);
        for (auto& s : sigma)
            if (s <= 0.0) s = fallback;
    }

    SimilarityGraph g;
    g.n = n;
    g.k = k;
    g.adj.assign(static_cast<std::size_t>(n), {});
    g.degree.assign(static_cast<std::size_t>(n), 0.0);

    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = dist(features[static_cast<std::size_t>(i)].vec,
                                  features[static_cast<std::size_t>(j)].vec);
            // union kNN, ties at the k-th distance included
            if (d > knn_dist[static_cast<std::size_t>(i)] &&
                d > knn_dist[static_cast<std::size_t>(j)])
                continue;
            const double w = std::exp(-d * d / (sigma[static_cast<std::size_t>(i)] *
                                                sigma[static_cast<std::size_t>(j)]));
            g.adj[static_cast<std::size_t>(i)].push_back({j, w});
            g.adj[static_cast<std::size_t>(j)].push_back({i, w});
            g.degree[static_cast<std::size_t>(i)] += w;
            g.degree[static_cast<std::size_t>(j)] += w;
        }
    return g;
}

SimilarityGraph build_graph_auto(const std::vector<synth::ObjectFeatures>& features) {
    const int n = static_cast<int>(features.size());
    if (n < 2) throw ConfigError("build_graph: need at least 2 objects");
    int k = static_cast<int>(std::ceil(std::log2(static_cast<double>(n)))) + 1;
    k = std::min(k, n - 1);
    for (;;) {
        auto g = build_graph(features, k);
        if (g.connected() || k >= n - 1) return g;
        k = std::min(2 * k, n - 1);
    }
}

namespace {

// connectivity of every node to the set S (members exclude their own term)
std::vector<double> connectivity(const SimilarityGraph& g, const std::vector<char>& member) {
    std::vector<double> c(static_cast<std::size_t>(g.n), 0.0);
    for (int i = 0; i < g.n; ++i)
        for (const auto& [j, w] : g.adj[static_cast<std::size_t>(i)])
            if (member[static_cast<std::size_t>(j)]) c[static_cast<std::size_t>(i)] += w;
    return c;
}

} // namespace

std::vector<int> tune_labels(const SimilarityGraph& g, const std::vector<int>& predicted,
                             int max_swaps) {
    if (predicted.empty() || static_cast<int>(predicted.size()) >= g.n)
        throw ConfigError("tune_labels: need 0 < |predicted| < n");

    std::vector<char> member(static_cast<std::size_t>(g.n), 0);
    for (int id : predicted) {
        if (id < 0 || id >= g.n) throw ConfigError("tune_labels: id out of range");
        member[static_cast<std::size_t>(id)] = 1;
    }

    for (int swap = 0; swap < max_swaps; ++swap) {
        const auto c = connectivity(g, member);
        int worst = -1, best = -1;
        for (int i = 0; i < g.n; ++i) {
            if (member[static_cast<std::size_t>(i)]) {
                if (worst < 0 || c[static_cast<std::size_t>(i)] < c[static_cast<std::size_t>(worst)])
                    worst = i;
            } else {
                if (best < 0 || c[static_cast<std::size_t>(i)] > c[static_cast<std::size_t>(best)])
                    best = i;
            }
        }
        // swapping changes the set's internal weight by c(best) - w(best,worst) - c(worst);
        // the edge correction keeps the objective monotone
        const double gain = c[static_cast<std::size_t>(best)] - g.weight(best, worst) -
                            c[static_cast<std::size_t>(worst)];
        if (gain <= 0.0) break;
        member[static_cast<std::size_t>(worst)] = 0;
        member[static_cast<std::size_t>(best)] = 1;
    }

    std::vector<int> tuned;
    for (int i = 0; i < g.n; ++i)
        if (member[static_cast<std::size_t>(i)]) tuned.push_back(i);
    return tuned;
}

std::vector<int> tune_labels(const SimilarityGraph& g, const std::vector<int>& predicted) {
    return tune_labels(g, predicted, static_cast<int>(predicted.size()));
}

std::vector<double> propagate(const SimilarityGraph& g, const std::vector<int>& tuned,
                              double alpha, double tol, int max_iter,
                              std::vector<double>* residual_trace) {
    if (alpha <= 0.0 || alpha > 1.0)
        throw ConfigError("propagate: alpha must be in (0, 1]");
    if (tuned.empty()) throw ConfigError("propagate: empty seed set");

    std::vector<double> y(static_cast<std::size_t>(g.n), 0.0);
    for (int id : tuned) {
        if (id < 0 || id >= g.n) throw ConfigError("propagate: id out of range");
        y[static_cast<std::size_t>(id)] = 1.0 / static_cast<double>(tuned.size());
    }

    std::vector<double> s = y, next(static_cast<std::size_t>(g.n));
    for (int it = 0; it < max_iter; ++it) {
        // column-stochastic walk matrix keeps the iterate on the simplex
        for (int i = 0; i < g.n; ++i) {
            double acc = 0.0;
            for (const auto& [j, w] : g.adj[static_cast<std::size_t>(i)]) {
                const double dj = g.degree[static_cast<std::size_t>(j)];
                if (dj > 0.0) acc += w * s[static_cast<std::size_t>(j)] / dj;
            }
            // an isolated-in-weight node keeps its own mass
            if (g.degree[static_cast<std::size_t>(i)] <= 0.0)
                acc += s[static_cast<std::size_t>(i)];
            next[static_cast<std::size_t>(i)] =
                (1.0 - alpha) * acc + alpha * y[static_cast<std::size_t>(i)];
        }
        double max_change = 0.0, l1_change = 0.0;
        for (int i = 0; i < g.n; ++i) {
            const double d = std::abs(next[static_cast<std::size_t>(i)] - s[static_cast<std::size_t>(i)]);
            max_change = std::max(max_change, d);
            l1_change += d;
        }
        // the iteration contracts the L1 error by (1-alpha) per step, so the
        // traced residual is provably monotone; stopping uses the max change
        if (residual_trace) residual_trace->push_back(l1_change);
        s.swap(next);
        if (max_change < tol) return s;
    }
    double residual = 0.0;
    for (int i = 0; i < g.n; ++i)
        residual = std::max(residual, std::abs(next[static_cast<std::size_t>(i)] - s[static_cast<std::size_t>(i)]));
    throw std::runtime_error("propagate: no convergence after " + std::to_string(max_iter) +
                             " iterations (residual " + io::fmt(residual) + ")");
}

namespace {

double gauss_pdf(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
}

struct EmState {
    double pi1, mu1, s1, pi2, mu2, s2;
};

double em_loglik(const std::vector<double>& x, const EmState& st) {
    double ll = 0.0;
    for (double xi : x)
        ll += std::log(st.pi1 * gauss_pdf(xi, st.mu1, st.s1) +
                       st.pi2 * gauss_pdf(xi, st.mu2, st.s2) + 1e-300);
    return ll;
}

} // namespace

GmmFit fit_gmm2(const std::vector<double>& scores, std::vector<double>* ll_trace) {
    std::vector<double> distinct = scores;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 4)
        throw ConfigError("fit_gmm2: need at least 4 distinct values");

    const double med = stats::median(scores);
    const double global_sd = stats::sample_sd(scores);

    for (int restart = 0; restart <= 5; ++restart) {
        if (ll_trace) ll_trace->clear();
        // median split init, nudged on restarts
        Rng perturb(0x67u + static_cast<std::uint64_t>(restart));
        std::vector<double> lo, hi;
        for (double x : scores)
            (x <= med ? lo : hi).push_back(x);
        if (lo.empty() || hi.empty()) {
            lo.assign(scores.begin(), scores.begin() + scores.size() / 2);
            hi.assign(scores.begin() + scores.size() / 2, scores.end());
        }
        EmState st;
        st.pi1 = st.pi2 = 0.5;
        st.mu1 = stats::mean(lo);
        st.mu2 = stats::mean(hi);
        st.s1 = st.s2 = std::max(global_sd, 1e-6);
        if (restart > 0) {
            st.mu1 += 0.3 * global_sd * perturb.normal();
            st.mu2 += 0.3 * global_sd * perturb.normal();
            st.s1 *= 1.0 + 0.2 * perturb.uniform01();
            st.s2 *= 1.0 + 0.2 * perturb.uniform01();
        }

        double prev_ll = -std::numeric_limits<double>::infinity();
        bool collapsed = false;
        int iters = 0;
        for (; iters < 500; ++iters) {
            // E step
            double n1 = 0.0, sum1 = 0.0, sum2 = 0.0, n2 = 0.0;
            std::vector<double> r1(scores.size());
            for (std::size_t i = 0; i < scores.size(); ++i) {
                const double p1 = st.pi1 * gauss_pdf(scores[i], st.mu1, st.s1);
                const double p2 = st.pi2 * gauss_pdf(scores[i], st.mu2, st.s2);
                const double denom = p1 + p2;
                r1[i] = denom > 0.0 ? p1 / denom : 0.5;
                n1 += r1[i];
                n2 += 1.0 - r1[i];
                sum1 += r1[i] * scores[i];
                sum2 += (1.0 - r1[i]) * scores[i];
            }
            // M step
            st.pi1 = n1 / static_cast<double>(scores.size());
            st.pi2 = 1.0 - st.pi1;
            st.mu1 = n1 > 0.0 ? sum1 / n1 : st.mu1;
            st.mu2 = n2 > 0.0 ? sum2 / n2 : st.mu2;
            double v1 = 0.0, v2 = 0.0;
            for (std::size_t i = 0; i < scores.size(); ++i) {
                v1 += r1[i] * (scores[i] - st.mu1) * (scores[i] - st.mu1);
                v2 += (1.0 - r1[i]) * (scores[i] - st.mu2) * (scores[i] - st.mu2);
            }
            st.s1 = n1 > 0.0 ? std::sqrt(v1 / n1) : 0.0;
            st.s2 = n2 > 0.0 ? std::sqrt(v2 / n2) : 0.0;
            if (st.s1 < 1e-12 || st.s2 < 1e-12 || st.pi1 < 1e-12 || st.pi2 < 1e-12) {
                collapsed = true;
                break;
            }

            const double ll = em_loglik(scores, st);
            if (ll_trace) ll_trace->push_back(ll);
            if (std::abs(ll - prev_ll) < 1e-9) {
                prev_ll = ll;
                break;
            }
            prev_ll = ll;
        }
        if (collapsed) continue;

        GmmFit fit;
        if (st.mu1 <= st.mu2) {
            fit.pi1 = st.pi1;
            fit.mu1 = st.mu1;
            fit.sigma1 = st.s1;
            fit.pi2 = st.pi2;
            fit.mu2 = st.mu2;
            fit.sigma2 = st.s2;
        } else {
            fit.pi1 = st.pi2;
            fit.mu1 = st.mu2;
            fit.sigma1 = st.s2;
            fit.pi2 = st.pi1;
            fit.mu2 = st.mu1;
            fit.sigma2 = st.s1;
        }
        fit.log_likelihood = prev_ll;
        fit.iterations = iters;
        fit.cutoff = gmm_cutoff(fit.pi1, fit.mu1, fit.sigma1, fit.pi2, fit.mu2, fit.sigma2);
        return fit;
    }
    throw std::runtime_error("fit_gmm2: component collapse persisted across restarts");
}

double gmm_cutoff(double pi1, double mu1, double sigma1, double pi2, double mu2, double sigma2) {
    if (mu1 > mu2)
        throw ConfigError("gmm_cutoff: mu1 must not exceed mu2");
    // difference of weighted log densities; a sign change inside (mu1, mu2)
    // brackets the intersection
    auto diff = [&](double x) {
        return std::log(pi1 * gauss_pdf(x, mu1, sigma1) + 1e-300) -
               std::log(pi2 * gauss_pdf(x, mu2, sigma2) + 1e-300);
    };
    double a = mu1, b = mu2;
    if (b - a < 1e-15) return 0.5 * (a + b);
    if (diff(a) > 0.0 && diff(b) < 0.0) {
        while (b - a > 1e-10) {
            const double mid = 0.5 * (a + b);
            if (diff(mid) > 0.0)
                a = mid;
            else
                b = mid;
        }
        return 0.5 * (a + b);
    }
    return 0.5 * (mu1 + mu2);
}

CvResult cv_predicted_targets(const std::vector<double>& scores, const GmmFit& fit,
                              const std::vector<Category>& truth) {
    if (scores.size() != truth.size())
        throw ConfigError("cv_predicted_targets: scores/truth size mismatch");
    CvResult r;
    r.labels.reserve(scores.size());
    int tp = 0, fp = 0, fn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] > fit.cutoff;
        r.labels.push_back(predicted ? Category::target : Category::nontarget);
        const bool is_target = truth[i] == Category::target;
        pos += is_target;
        neg += !is_target;
        tp += predicted && is_target;
        fp += predicted && !is_target;
        fn += !predicted && is_target;
    }
    r.tpr = pos ? static_cast<double>(tp) / pos : std::nan("");
    r.fpr = neg ? static_cast<double>(fp) / neg : std::nan("");
    const double denom = 2.0 * tp + fp + fn;
    r.f1 = denom > 0.0 ? 2.0 * tp / denom : std::nan("");
    return r;
}

std::string graph_to_csv(const SimilarityGraph& g) {
    std::ostringstream out;
    out << "i,j,w\n";
    for (int i = 0; i < g.n; ++i)
        for (const auto& [j, w] : g.adj[static_cast<std::size_t>(i)])
            if (j > i) out << i << ',' << j << ',' << io::fmt(w) << '\n';
    return out.str();
}

std::string scores_to_csv(const std::vector<double>& scores, const std::vector<Category>& labels) {
    std::ostringstream out;
    out << "object_id,cv_score,label\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        out << i << ',' << io::fmt(scores[i]) << ',' << to_string(labels[i]) << '\n';
    return out.str();
}

std::string gmm_to_json(const GmmFit& f) {
    nlohmann::json j;
    j["components"] = {{{"pi", f.pi1}, {"mu", f.mu1}, {"sigma", f.sigma1}},
                       {{"pi", f.pi2}, {"mu", f.mu2}, {"sigma", f.sigma2}}};
    j["cutoff"] = f.cutoff;
    j["log_likelihood"] = f.log_likelihood;
    j["iterations"] = f.iterations;
    return j.dump(2) + "\n";
}

} // namespace prefdrive::tag
