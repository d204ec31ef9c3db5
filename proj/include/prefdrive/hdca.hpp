#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefdrive/common.hpp"
#include "prefdrive/rng.hpp"
#include "prefdrive/synth.hpp"

namespace prefdrive::hdca {

// feature order: 9 eeg bin scores, 6 pupil bin scores, 1 gaze score
inline constexpr int kNumFeatures = synth::kEegBins + synth::kPupilBins + 1;

struct HdcaModel {
    std::vector<std::vector<double>> eeg_w; // per-bin weight vectors, 9 x C
    std::vector<double> pupil_w;            // per-bin scalar discriminants, 6
    double gaze_w = 0.0;
    std::vector<double> rescale; // 16 per-feature SDs from the evaluation split
    std::vector<double> v;       // 16 cross-bin weights
    double lambda = 10.0;
    double threshold = 0.0; // test-score cutoff (mean + 1 SD)
};

struct SplitSpec {
    std::vector<int> train, evaluation, test;
};

// Stratified split; throws ConfigError unless every split holds at least two
// trials of each class.
SplitSpec make_split(const std::vector<Category>& categories, double train_frac, double eval_frac,
                     Rng rng);

// Fisher discriminant: w = (cov_pos + cov_neg + ridge*I)^-1 (mean_pos - mean_neg),
// sample covariances (n-1) across the given trials. ridge is absolute.
std::vector<double> flda_weights(const std::vector<std::vector<double>>& pos,
                                 const std::vector<std::vector<double>>& neg, double ridge);

// Same, with ridge = ridge_scale * trace(cov_pos + cov_neg) / dim, which keeps
// the solution invariant under a common rescaling of the inputs.
std::vector<double> flda_weights_rel(const std::vector<std::vector<double>>& pos,
                                     const std::vector<std::vector<double>>& neg,
                                     double ridge_scale);

std::vector<double> within_bin_scores(const std::vector<double>& w,
                                      const std::vector<std::vector<double>>& xs);

// 16 unrescaled per-bin discriminant outputs for one trial
std::vector<double> raw_features(const HdcaModel& m, const synth::PhysioTrial& t);

// Computes m.rescale from the evaluation split and returns its rescaled
// features. Throws ConfigError naming the feature if any SD is zero.
std::vector<std::vector<double>> assemble_features(HdcaModel& m,
                                                   const std::vector<synth::PhysioTrial>& eval_trials);

// raw_features / rescale, for use once the model is assembled
std::vector<double> featurize(const HdcaModel& m, const synth::PhysioTrial& t);

// Regularized logistic regression, labels in {+1,-1}, no intercept:
// minimize sum_i log(1 + exp(-c_i v.z_i)) + lambda ||v||^2.
// Accelerated gradient descent with backtracking; stops when the gradient
// max-norm drops below tol (warns on stderr if max_iters is hit first).
std::vector<double> logistic_train(const std::vector<std::vector<double>>& z,
                                   const std::vector<int>& c, double lambda = 10.0,
                                   int max_iters = 500, double tol = 1e-6);

double logistic_objective(const std::vector<std::vector<double>>& z, const std::vector<int>& c,
                          double lambda, const std::vector<double>& v);
std::vector<double> logistic_gradient(const std::vector<std::vector<double>>& z,
                                      const std::vector<int>& c, double lambda,
                                      const std::vector<double>& v);

double cross_bin_score(const std::vector<double>& v, const std::vector<double>& z);

struct Prediction {
    std::vector<int> predicted; // indices with score > mean + 1 SD
    double threshold = 0.0;
    double tpr = 0.0; // NaN if no positives among categories
    double fpr = 0.0; // NaN if no negatives
};

Prediction predict_targets(const std::vector<double>& scores,
                           const std::vector<Category>& categories);

struct FitConfig {
    double train_frac = 0.4;
    double eval_frac = 0.3;
    double lambda = 10.0;
    double ridge_scale = 1e-6;
    int max_iters = 500;
    double tol = 1e-6;
};

struct FitResult {
    HdcaModel model;
    SplitSpec split;
    std::vector<double> test_scores;
    std::vector<Category> test_categories;
    Prediction test;
    double test_auc = 0.0;
};

FitResult fit(const std::vector<synth::PhysioTrial>& trials, const FitConfig& cfg,
              std::uint64_t seed);

std::string save_model(const HdcaModel& m);
HdcaModel load_model(const std::string& text);

} // namespace prefdrive::hdca
