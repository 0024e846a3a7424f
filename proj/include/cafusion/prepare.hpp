#pragma once

// Turns recordings into model-ready sequences and maps model outputs back
// onto the original frame grid for scoring.

#include <cafusion/data.hpp>

namespace cafusion {

struct PreparedSequence {
    std::string id;
    Matrix audio, visual;           // normalized, delay-aligned: T - N rows
    std::vector<double> target;     // labels[N, T)
    std::vector<double> g_a, g_v;   // reliability of the aligned feature frames
    std::vector<double> labels;     // full-length labels for scoring
    std::size_t original_len = 0;

    std::size_t length() const { return target.size(); }
};

using PreparedCorpus = std::vector<PreparedSequence>;

/// Statistics fitted on the training split only.
struct Preprocessor {
    NormStats audio, visual;
    EnergyStats energy;
    DelaySpec delay;
    Target target = Target::valence;

    static Preprocessor fit(const std::vector<const Recording*>& train, DelaySpec delay, Target target) {
        if (train.empty()) throw std::invalid_argument("Preprocessor: empty training split");
        std::vector<const Matrix*> a, v;
        std::vector<std::span<const double>> e;
        for (const auto* r : train) {
            a.push_back(&r->audio);
            v.push_back(&r->visual);
            e.emplace_back(r->energy);
        }
        return {fit_norm(a), fit_norm(v), fit_energy(e), delay, target};
    }

    PreparedSequence operator()(const Recording& r) const {
        PreparedSequence p;
        p.id = r.id;
        p.original_len = r.length();
        const auto& lab = r.labels(target);
        p.labels = lab;
        auto aligned_a = shift_for_delay(r.audio, lab, delay);
        p.target = std::move(aligned_a.labels);
        p.audio = apply_norm(audio, aligned_a.features);
        p.visual = apply_norm(visual, first_rows(r.visual, p.length()));
        auto ga = energy_to_ga(r.energy, energy);
        p.g_a.assign(ga.begin(), ga.begin() + static_cast<std::ptrdiff_t>(p.length()));
        p.g_v.resize(p.length());
        for (std::size_t t = 0; t < p.length(); ++t) p.g_v[t] = detect_face(r.visual.row(t));
        return p;
    }

    PreparedCorpus operator()(const std::vector<const Recording*>& recs) const {
        PreparedCorpus out;
        for (const auto* r : recs) out.push_back((*this)(*r));
        return out;
    }
};

struct SequenceScore {
    std::string id;
    MetricsReport metrics;
    std::vector<double> prediction;  // post-processed, full length
};

/// Unshift, smooth and score one sequence's aligned predictions.
inline SequenceScore score_sequence(const PreparedSequence& s, std::span<const double> aligned_preds,
                                    const PostProcess& pp) {
    SequenceScore out{s.id, {}, postprocess(aligned_preds, pp, s.original_len)};
    out.metrics = evaluate(out.prediction, s.labels);
    return out;
}

}  // namespace cafusion
