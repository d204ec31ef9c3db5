#include "prefdrive/synth.hpp"

#include <sstream>

#include "prefdrive/io.hpp"

namespace prefdrive::synth {

namespace {

// deterministic category sequence: exact count, positions shuffled
std::vector<Category> draw_categories(int n, double target_rate, Rng& rng) {
    const int n_targets = static_cast<int>(std::lround(n * target_rate));
    std::vector<Category> cats(static_cast<std::size_t>(n), Category::nontarget);
    for (int i = 0; i < n_targets; ++i) cats[static_cast<std::size_t>(i)] = Category::target;
    for (std::size_t i = cats.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(cats[i - 1], cats[j]);
    }
    return cats;
}

} // namespace

void validate(const SeparabilityConfig& sep) {
    if (sep.eeg_noise <= 0 || sep.pupil_noise <= 0 || sep.gaze_noise <= 0)
        throw ConfigError("synth: noise_scale must be > 0");
    if (sep.correlation < 0 || sep.correlation > 1)
        throw ConfigError("synth: correlation must be in [0,1]");
    if (sep.n_components < 1)
        throw ConfigError("synth: n_components must be >= 1");
}

std::vector<PhysioTrial> gen_trials(int n, double target_rate, const SeparabilityConfig& sep,
                                    std::uint64_t seed) {
    if (n <= 0)
        throw ConfigError("gen_trials: n must be > 0");
    if (target_rate <= 0 || target_rate >= 1)
        throw ConfigError("gen_trials: target_rate must be in (0,1)");
    validate(sep);

    Rng cat_rng = Rng(seed).derive("trial-cats");
    Rng noise_rng = Rng(seed).derive("trial-noise");
    const auto cats = draw_categories(n, target_rate, cat_rng);

    const double rho = sep.correlation;
    const double ind = std::sqrt(1.0 - rho);
    const double shared = std::sqrt(rho);

    std::vector<PhysioTrial> trials;
    trials.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        PhysioTrial t;
        t.category = cats[static_cast<std::size_t>(i)];
        const bool is_target = t.category == Category::target;
        const double u = noise_rng.normal(); // trial-level latent, couples modalities

        t.eeg.assign(kEegBins, std::vector<double>(static_cast<std::size_t>(sep.n_components)));
        for (int j = 0; j < kEegBins; ++j) {
            // bins numbered 1..9; the P300-like window is bins 3-5 (300-600 ms)
            const bool p300_bin = j >= 2 && j <= 4;
            const double shift = (is_target && p300_bin) ? sep.eeg_effect * sep.eeg_noise : 0.0;
            for (int c = 0; c < sep.n_components; ++c) {
                const double eps = ind * noise_rng.normal() + shared * u;
                t.eeg[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] =
                    shift + sep.eeg_noise * eps;
            }
        }

        t.pupil.resize(kPupilBins);
        for (int k = 0; k < kPupilBins; ++k) {
            const bool late_bin = k >= 2; // bins 3-6 (1000-3000 ms)
            const double shift = (is_target && late_bin) ? sep.pupil_effect * sep.pupil_noise : 0.0;
            const double eps = ind * noise_rng.normal() + shared * u;
            t.pupil[static_cast<std::size_t>(k)] = sep.pupil_base + shift + sep.pupil_noise * eps;
        }

        const double gaze_shift = is_target ? sep.gaze_effect * sep.gaze_noise : 0.0;
        const double eps = ind * noise_rng.normal() + shared * u;
        t.gaze_time = std::max(0.0, sep.gaze_base + gaze_shift + sep.gaze_noise * eps);

        trials.push_back(std::move(t));
    }
    return trials;
}

std::vector<ObjectFeatures> gen_object_features_for(const std::vector<Category>& categories,
                                                    double cluster_sep, std::uint64_t seed,
                                                    int dims) {
    if (categories.size() < 4)
        throw ConfigError("gen_object_features: need at least 4 objects");
    if (dims < 1)
        throw ConfigError("gen_object_features: dims must be >= 1");

    Rng rng = Rng(seed).derive("object-features");

    // random unit separation axis; centroid distance is cluster_sep times the
    // within-cluster radial SD (sqrt(dims) for unit isotropic noise), so the
    // contrast between clusters does not wash out in high dimensions
    std::vector<double> axis(static_cast<std::size_t>(dims));
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& a : axis) {
            a = rng.normal();
            norm += a * a;
        }
        norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (auto& a : axis) a /= norm;
    const double half_gap = 0.5 * cluster_sep * std::sqrt(static_cast<double>(dims));

    std::vector<ObjectFeatures> objs;
    objs.reserve(categories.size());
    for (std::size_t i = 0; i < categories.size(); ++i) {
        ObjectFeatures o;
        o.object_id = static_cast<int>(i);
        o.category = categories[i];
        const double sign = o.category == Category::target ? 1.0 : -1.0;
        o.vec.resize(static_cast<std::size_t>(dims));
        for (int d = 0; d < dims; ++d) {
            o.vec[static_cast<std::size_t>(d)] =
                sign * half_gap * axis[static_cast<std::size_t>(d)] + rng.normal();
        }
        objs.push_back(std::move(o));
    }
    return objs;
}

std::vector<ObjectFeatures> gen_object_features(int n_objects, double target_rate,
                                                double cluster_sep, std::uint64_t seed,
                                                int dims) {
    if (n_objects < 4)
        throw ConfigError("gen_object_features: need at least 4 objects");
    Rng cat_rng = Rng(seed).derive("object-cats");
    const auto cats = draw_categories(n_objects, target_rate, cat_rng);
    return gen_object_features_for(cats, cluster_sep, seed, dims);
}

std::string trials_to_csv(const std::vector<PhysioTrial>& trials) {
    std::ostringstream out;
    const int n_comp = trials.empty() ? 0 : static_cast<int>(trials.front().eeg.front().size());
    out << "trial";
    for (int j = 1; j <= kEegBins; ++j)
        for (int c = 1; c <= n_comp; ++c) out << ",eeg_b" << j << "_c" << c;
    for (int k = 1; k <= kPupilBins; ++k) out << ",pupil_b" << k;
    out << ",gaze,label\n";
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto& t = trials[i];
        out << i;
        for (const auto& bin : t.eeg)
            for (double x : bin) out << ',' << io::fmt(x);
        for (double x : t.pupil) out << ',' << io::fmt(x);
        out << ',' << io::fmt(t.gaze_time) << ',' << to_string(t.category) << '\n';
    }
    return out.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

Category parse_category(const std::string& s) {
    if (s == "target") return Category::target;
    if (s == "nontarget") return Category::nontarget;
    throw ConfigError("bad category label: '" + s + "'");
}

} // namespace

std::vector<PhysioTrial> trials_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line))
        throw ConfigError("trials csv: empty input");
    const auto header = split_csv_line(line);
    int n_comp = 0;
    for (const auto& h : header)
        if (h.rfind("eeg_b1_", 0) == 0) ++n_comp;
    if (n_comp == 0)
        throw ConfigError("trials csv: no eeg columns in header");
    const std::size_t expected = 1 + static_cast<std::size_t>(kEegBins * n_comp) + kPupilBins + 2;

    std::vector<PhysioTrial> trials;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != expected)
            throw ConfigError("trials csv: row has " + std::to_string(f.size()) +
                              " fields, expected " + std::to_string(expected));
        PhysioTrial t;
        std::size_t idx = 1;
        t.eeg.assign(kEegBins, std::vector<double>(static_cast<std::size_t>(n_comp)));
        for (int j = 0; j < kEegBins; ++j)
            for (int c = 0; c < n_comp; ++c)
                t.eeg[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] = std::stod(f[idx++]);
        t.pupil.resize(kPupilBins);
        for (int k = 0; k < kPupilBins; ++k) t.pupil[static_cast<std::size_t>(k)] = std::stod(f[idx++]);
        t.gaze_time = std::stod(f[idx++]);
        t.category = parse_category(f[idx]);
        trials.push_back(std::move(t));
    }
    return trials;
}

std::string features_to_csv(const std::vector<ObjectFeatures>& objs) {
    std::ostringstream out;
    const std::size_t dims = objs.empty() ? 0 : objs.front().vec.size();
    out << "object_id";
    for (std::size_t d = 0; d < dims; ++d) out << ",f" << d;
    out << ",label\n";
    for (const auto& o : objs) {
        out << o.object_id;
        for (double x : o.vec) out << ',' << io::fmt(x);
        out << ',' << to_string(o.category) << '\n';
    }
    return out.str();
}

std::vector<ObjectFeatures> features_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line))
        throw ConfigError("features csv: empty input");
    const auto header = split_csv_line(line);
    if (header.size() < 3)
        throw ConfigError("features csv: bad header");
    const std::size_t dims = header.size() - 2;

    std::vector<ObjectFeatures> objs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != dims + 2)
            throw ConfigError("features csv: bad row width");
        ObjectFeatures o;
        o.object_id = std::stoi(f[0]);
        o.vec.resize(dims);
        for (std::size_t d = 0; d < dims; ++d) o.vec[d] = std::stod(f[d + 1]);
        o.category = parse_category(f[dims + 1]);
        objs.push_back(std::move(o));
    }
    return objs;
}

} // namespace prefdrive::synth
