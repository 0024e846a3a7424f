#pragma once

// Pre- and post-processing around the networks: [-1,1] feature scaling,
// annotation-delay shift and unshift, binomial smoothing, reliability
// scaling of acoustic energy, and the regression metrics.

#include <cafusion/numeric.hpp>

#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace cafusion {

struct NormStats {
    Vector min, max;
    std::size_t dim() const { return min.size(); }
};

/// Per-dimension min/max over every frame of every matrix.
inline NormStats fit_norm(std::span<const Matrix* const> features) {
    NormStats s;
    bool first = true;
    for (const Matrix* m : features) {
        if (first) {
            s.min = Vector(m->cols(), std::numeric_limits<double>::infinity());
            s.max = Vector(m->cols(), -std::numeric_limits<double>::infinity());
            first = false;
        }
        check_same(m->cols(), s.dim(), "fit_norm");
        for (std::size_t t = 0; t < m->rows(); ++t) {
            auto r = m->row(t);
            for (std::size_t k = 0; k < r.size(); ++k) {
                s.min[k] = std::min(s.min[k], r[k]);
                s.max[k] = std::max(s.max[k], r[k]);
            }
        }
    }
    if (first) throw std::invalid_argument("fit_norm: no training features");
    for (std::size_t k = 0; k < s.dim(); ++k)
        if (s.min[k] > s.max[k]) s.min[k] = s.max[k] = 0.0;  // zero-row input
    return s;
}

inline NormStats fit_norm(const std::vector<Matrix>& features) {
    std::vector<const Matrix*> ptrs;
    for (const auto& m : features) ptrs.push_back(&m);
    return fit_norm(std::span<const Matrix* const>(ptrs));
}

inline double normalize_value(double x, double lo, double hi) {
    if (hi <= lo) return 0.0;
    return std::clamp(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0);
}

/// Maps each dimension's training range onto [-1,1]; constant dimensions
/// map to 0, out-of-range values clip.
inline Matrix apply_norm(const NormStats& s, const Matrix& x) {
    check_same(x.cols(), s.dim(), "apply_norm");
    Matrix out(x.rows(), x.cols());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto src = x.row(t);
        auto dst = out.row(t);
        for (std::size_t k = 0; k < src.size(); ++k) dst[k] = normalize_value(src[k], s.min[k], s.max[k]);
    }
    return out;
}

struct DelaySpec {
    std::size_t n_frames = 20;
};

template <class T>
std::vector<T> first_n(std::span<const T> xs, std::size_t n) {
    return std::vector<T>(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(n));
}

inline Matrix first_rows(const Matrix& m, std::size_t n) {
    Matrix out(n, m.cols());
    std::copy_n(m.data().begin(), n * m.cols(), out.data().begin());
    return out;
}

struct Aligned {
    Matrix features;
    std::vector<double> labels;
};

/// Pairs features[0, T-N) with labels[N, T).
inline Aligned shift_for_delay(const Matrix& features, std::span<const double> labels, DelaySpec spec) {
    check_same(features.rows(), labels.size(), "shift_for_delay");
    const std::size_t T = labels.size(), N = spec.n_frames;
    if (T <= N)
        throw std::invalid_argument("shift_for_delay: sequence length " + std::to_string(T) +
                                    " must exceed delay " + std::to_string(N));
    Aligned a{first_rows(features, T - N), std::vector<double>(labels.begin() + static_cast<std::ptrdiff_t>(N),
                                                               labels.end())};
    return a;
}

/// Shifts predictions back by N frames; the first N are filled with zeros.
inline std::vector<double> unshift_predictions(std::span<const double> preds, DelaySpec spec,
                                               std::size_t original_len) {
    if (original_len < spec.n_frames || preds.size() != original_len - spec.n_frames)
        throw std::invalid_argument("unshift_predictions: expected " +
                                    std::to_string(original_len - std::min(original_len, spec.n_frames)) +
                                    " predictions, got " + std::to_string(preds.size()));
    std::vector<double> out(original_len, 0.0);
    std::copy(preds.begin(), preds.end(), out.begin() + static_cast<std::ptrdiff_t>(spec.n_frames));
    return out;
}

/// Binomial smoothing; near the edges the kernel is truncated to in-range
/// taps and renormalized.
inline std::vector<double> smooth(std::span<const double> x, std::size_t window) {
    const Vector k = binomial_kernel(window);
    const auto half = static_cast<std::ptrdiff_t>(window / 2);
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    std::vector<double> out(x.size());
    for (std::ptrdiff_t t = 0; t < n; ++t) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - half);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, t + half);
        double acc = 0.0, wsum = 0.0;
        for (std::ptrdiff_t s = lo; s <= hi; ++s) {
            const double w = k[static_cast<std::size_t>(s - t + half)];
            acc += w * x[static_cast<std::size_t>(s)];
            wsum += w;
        }
        out[static_cast<std::size_t>(t)] = (lo == t - half && hi == t + half) ? acc : acc / wsum;
    }
    return out;
}

// --- metrics -----------------------------------------------------------------

namespace detail {

struct Moments {
    double mean_p = 0, mean_t = 0, var_p = 0, var_t = 0, cov = 0;
};

inline Moments moments(std::span<const double> p, std::span<const double> t) {
    const double n = static_cast<double>(p.size());
    Moments m;
    for (std::size_t i = 0; i < p.size(); ++i) {
        m.mean_p += p[i];
        m.mean_t += t[i];
    }
    m.mean_p /= n;
    m.mean_t /= n;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double dp = p[i] - m.mean_p, dt = t[i] - m.mean_t;
        m.var_p += dp * dp;
        m.var_t += dt * dt;
        m.cov += dp * dt;
    }
    m.var_p /= n;
    m.var_t /= n;
    m.cov /= n;
    return m;
}

inline bool is_constant(std::span<const double> x) {
    return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

inline void check_metric_input(std::span<const double> p, std::span<const double> t, const char* what) {
    check_same(p.size(), t.size(), what);
    if (p.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least 2 frames");
}

}  // namespace detail

/// Concordance correlation with population moments. Two identical constant
/// sequences are taken to agree perfectly (1.0).
inline double ccc(std::span<const double> pred, std::span<const double> truth) {
    detail::check_metric_input(pred, truth, "ccc");
    const bool cp = detail::is_constant(pred), ct = detail::is_constant(truth);
    if (cp && ct) return pred.front() == truth.front() ? 1.0 : 0.0;
    if (cp || ct) return 0.0;
    const auto m = detail::moments(pred, truth);
    const double d = m.mean_p - m.mean_t;
    const double denom = m.var_p + m.var_t + d * d;
    if (denom == 0.0) return 1.0;
    return 2.0 * m.cov / denom;
}

/// Pearson correlation; nullopt when either input is constant.
inline std::optional<double> pcc(std::span<const double> pred, std::span<const double> truth) {
    detail::check_metric_input(pred, truth, "pcc");
    // Exact test: accumulated means leave a round-off variance on constants.
    if (detail::is_constant(pred) || detail::is_constant(truth)) return std::nullopt;
    const auto m = detail::moments(pred, truth);
    return std::clamp(m.cov / std::sqrt(m.var_p * m.var_t), -1.0, 1.0);
}

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
    check_same(pred.size(), truth.size(), "rmse");
    if (pred.empty()) throw std::invalid_argument("rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - truth[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

struct MetricsReport {
    double rmse = 0.0;
    std::optional<double> pcc;  // undefined for constant inputs
    double ccc = 0.0;
};

inline MetricsReport evaluate(std::span<const double> pred, std::span<const double> truth) {
    return {rmse(pred, truth), pcc(pred, truth), ccc(pred, truth)};
}

// --- reliability --------------------------------------------------------------

struct EnergyStats {
    double min = 0.0;
    double max = 1.0;
};

inline EnergyStats fit_energy(std::span<const std::span<const double>> energies) {
    EnergyStats s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (auto e : energies)
        for (double x : e) {
            s.min = std::min(s.min, x);
            s.max = std::max(s.max, x);
        }
    if (s.min > s.max) s = {0.0, 0.0};
    return s;
}

/// Min-max scaling of acoustic energy into [0,1] with clipping.
inline std::vector<double> energy_to_ga(std::span<const double> energy, EnergyStats stats) {
    std::vector<double> g(energy.size());
    const double range = stats.max - stats.min;
    for (std::size_t t = 0; t < energy.size(); ++t)
        g[t] = range > 0.0 ? std::clamp((energy[t] - stats.min) / range, 0.0, 1.0) : 0.0;
    return g;
}

/// Delay and smoothing applied on the way out of a model.
struct PostProcess {
    DelaySpec delay;
    std::size_t smooth_window = 11;
};

inline std::vector<double> postprocess(std::span<const double> aligned_preds, const PostProcess& pp,
                                       std::size_t original_len) {
    return smooth(unshift_predictions(aligned_preds, pp.delay, original_len), pp.smooth_window);
}

}  // namespace cafusion
