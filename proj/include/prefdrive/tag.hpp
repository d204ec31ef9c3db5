#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prefdrive/common.hpp"
#include "prefdrive/synth.hpp"

namespace prefdrive::tag {

struct SimilarityGraph {
    int n = 0;
    int k = 0; // neighbor count the graph was built with
    std::vector<std::vector<std::pair<int, double>>> adj; // per node: (neighbor, weight)
    std::vector<double> degree;

    double weight(int i, int j) const;
    std::size_t edge_count() const; // undirected edges
    bool connected() const;
};

// Gaussian-kernel union-kNN graph with adaptive bandwidths: sigma_i is the
// distance to i's ceil(k/2)-th neighbor; w_ij = exp(-d_ij^2 / (sigma_i sigma_j)).
// Zero bandwidths (duplicate points) fall back to the global median distance.
SimilarityGraph build_graph(const std::vector<synth::ObjectFeatures>& features, int k);

// k = ceil(log2 n) + 1, doubled until the graph is connected.
SimilarityGraph build_graph_auto(const std::vector<synth::ObjectFeatures>& features);

// Connectivity-based swap tuning: repeatedly exchange the least-connected
// member with the best-connected non-member while that increases the set's
// internal weight. Cardinality is preserved.
std::vector<int> tune_labels(const SimilarityGraph& g, const std::vector<int>& predicted,
                             int max_swaps);
std::vector<int> tune_labels(const SimilarityGraph& g, const std::vector<int>& predicted);

// Random walk with restart: s = (1-alpha) P s + alpha y with column-stochastic
// P and y uniform over the tuned set; returns the fixed point. residual_trace,
// when given, receives the per-iteration L1 change (contracts by 1-alpha each
// step); the stopping rule is max change < tol.
std::vector<double> propagate(const SimilarityGraph& g, const std::vector<int>& tuned,
                              double alpha = 0.15, double tol = 1e-8, int max_iter = 1000,
                              std::vector<double>* residual_trace = nullptr);

struct GmmFit {
    double pi1 = 0.5, mu1 = 0.0, sigma1 = 1.0;
    double pi2 = 0.5, mu2 = 0.0, sigma2 = 1.0;
    double cutoff = 0.0;
    double log_likelihood = 0.0;
    int iterations = 0;
};

// Two-component 1-D Gaussian mixture via EM (median-split init, restart on
// component collapse); cutoff is the density intersection inside (mu1, mu2).
// ll_trace, when given, receives the log-likelihood after each EM step of the
// accepted run.
GmmFit fit_gmm2(const std::vector<double>& scores, std::vector<double>* ll_trace = nullptr);

// Density-intersection cutoff between mu1 < mu2 (bisection to 1e-10; midpoint
// of the means when the weighted densities never cross inside the interval).
double gmm_cutoff(double pi1, double mu1, double sigma1, double pi2, double mu2, double sigma2);

struct CvResult {
    std::vector<Category> labels;
    double tpr = 0.0, fpr = 0.0, f1 = 0.0;
};

CvResult cv_predicted_targets(const std::vector<double>& scores, const GmmFit& fit,
                              const std::vector<Category>& truth);

std::string graph_to_csv(const SimilarityGraph& g);
std::string scores_to_csv(const std::vector<double>& scores, const std::vector<Category>& labels);
std::string gmm_to_json(const GmmFit& f);

} // namespace prefdrive::tag
