#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefdrive/common.hpp"
#include "prefdrive/rng.hpp"

namespace prefdrive::synth {

inline constexpr int kEegBins = 9;   // 100 ms bins over 100-1000 ms
inline constexpr int kPupilBins = 6; // 500 ms bins over 0-3000 ms

// One synthetic viewing trial: per-bin EEG component activations, binned
// pupil means, and gaze time.
struct PhysioTrial {
    std::vector<std::vector<double>> eeg; // kEegBins x n_components
    std::vector<double> pupil;            // kPupilBins
    double gaze_time = 0.0;
    Category category = Category::nontarget;
};

struct ObjectFeatures {
    int object_id = 0;
    std::vector<double> vec;
    Category category = Category::nontarget;
};

// Class separation knobs. Effects are standardized mean shifts (in units of
// the modality noise SD) applied to target trials only.
struct SeparabilityConfig {
    double eeg_effect = 1.0;   // applied to EEG bins 3-5 (300-600 ms window)
    double pupil_effect = 1.0; // applied to pupil bins 3-6
    double gaze_effect = 1.0;  // mean dwell increase
    double eeg_noise = 1.0;
    double pupil_noise = 1.0;
    double gaze_noise = 0.25;
    double correlation = 0.0; // cross-modality coupling in [0,1]
    int n_components = 16;    // EEG components per bin
    double pupil_base = 3.0;
    double gaze_base = 0.8;
};

void validate(const SeparabilityConfig& sep);

std::vector<PhysioTrial> gen_trials(int n, double target_rate, const SeparabilityConfig& sep,
                                    std::uint64_t seed);

std::vector<ObjectFeatures> gen_object_features(int n_objects, double target_rate,
                                                double cluster_sep, std::uint64_t seed,
                                                int dims = 64);

// Variant used by the pipeline: feature clusters for a category sequence that
// already exists (the objects placed in the world).
std::vector<ObjectFeatures> gen_object_features_for(const std::vector<Category>& categories,
                                                    double cluster_sep, std::uint64_t seed,
                                                    int dims = 64);

std::string trials_to_csv(const std::vector<PhysioTrial>& trials);
std::vector<PhysioTrial> trials_from_csv(const std::string& csv);

std::string features_to_csv(const std::vector<ObjectFeatures>& objs);
std::vector<ObjectFeatures> features_from_csv(const std::string& csv);

} // namespace prefdrive::synth
