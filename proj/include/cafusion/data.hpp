#pragma once

// Recordings and their CSV layout, face-detection flags, subject splits,
// the synthetic bimodal corpus generator, BPTT windowing and the delay
// search.
//
// On-disk layout of one recording (all files comma-separated with a header):
//   <id>_audio.csv   76 columns; column 0 ("loudness") is the acoustic energy
//   <id>_visual.csv  400 columns; an all-zero row means no face was detected
//   <id>_labels.csv  2 columns: arousal,valence in [-1,1]

#include <cafusion/pipeline.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace cafusion {

inline constexpr std::size_t kAudioDim = 76;
inline constexpr std::size_t kVisualDim = 400;
inline constexpr std::size_t kEnergyColumn = 0;
inline constexpr double kFramePeriodMs = 40.0;
inline constexpr double kFaceThreshold = 1e-12;

enum class Target { arousal, valence };

inline std::string_view to_string(Target t) { return t == Target::arousal ? "arousal" : "valence"; }

inline Target parse_target(std::string_view s) {
    if (s == "arousal") return Target::arousal;
    if (s == "valence") return Target::valence;
    throw std::invalid_argument("unknown target '" + std::string(s) + "' (expected arousal or valence)");
}

enum class Modality { audio, visual };

struct Recording {
    std::string id;
    double frame_period_ms = kFramePeriodMs;
    Matrix audio;   // T x D_a
    Matrix visual;  // T x D_v
    std::vector<double> arousal, valence;
    std::vector<double> energy;  // raw acoustic energy column
    std::vector<double> g_a;     // energy scaled into [0,1]
    std::vector<double> g_v;     // 1 if a face was detected

    std::size_t length() const { return audio.rows(); }
    const std::vector<double>& labels(Target t) const { return t == Target::arousal ? arousal : valence; }
    const Matrix& features(Modality m) const { return m == Modality::audio ? audio : visual; }
};

class DataError : public std::runtime_error {
public:
    enum class Kind { missing_file, ragged_row, bad_cell, length_mismatch, out_of_range, invariant };
    DataError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// 0 when every entry is below the zero-fill threshold, else 1.
inline int detect_face(std::span<const double> visual_frame) {
    for (double x : visual_frame)
        if (std::abs(x) >= kFaceThreshold) return 1;
    return 0;
}

inline void validate(const Recording& r) {
    const std::size_t T = r.length();
    auto fail = [&](const std::string& m) { throw DataError(DataError::Kind::invariant, r.id + ": " + m); };
    if (r.visual.rows() != T || r.arousal.size() != T || r.valence.size() != T || r.g_a.size() != T ||
        r.g_v.size() != T || r.energy.size() != T)
        fail("per-frame arrays differ in length");
    for (std::size_t t = 0; t < T; ++t) {
        if (std::abs(r.arousal[t]) > 1.0 || std::abs(r.valence[t]) > 1.0) fail("label outside [-1,1] at frame " + std::to_string(t));
        if (!(r.g_a[t] >= 0.0 && r.g_a[t] <= 1.0)) fail("g_a outside [0,1] at frame " + std::to_string(t));
        if (r.g_v[t] != 0.0 && r.g_v[t] != 1.0) fail("g_v not a flag at frame " + std::to_string(t));
        if (r.g_v[t] == 1.0 && detect_face(r.visual.row(t)) == 0)
            fail("all-zero visual frame flagged as face at frame " + std::to_string(t));
    }
}

/// Fills g_v from the visual rows and g_a from energy with the given scaling.
inline void assign_reliability(Recording& r, EnergyStats stats) {
    r.g_v.resize(r.length());
    for (std::size_t t = 0; t < r.length(); ++t) r.g_v[t] = detect_face(r.visual.row(t));
    r.g_a = energy_to_ga(r.energy, stats);
}

// --- CSV --------------------------------------------------------------------

namespace csv {

struct Table {
    std::vector<std::string> header;
    Matrix values;
};

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline Table read(const std::filesystem::path& path, std::size_t expected_cols) {
    std::ifstream in(path);
    if (!in) throw DataError(DataError::Kind::missing_file, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(DataError::Kind::ragged_row, path.string() + ": missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Table t;
    for (auto h : split(line)) t.header.emplace_back(h);
    if (t.header.size() != expected_cols)
        throw DataError(DataError::Kind::ragged_row, path.string() + ": header has " + std::to_string(t.header.size()) +
                                                         " columns, expected " + std::to_string(expected_cols));
    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != expected_cols)
            throw DataError(DataError::Kind::ragged_row, path.string() + ":" + std::to_string(lineno) + ": " +
                                                             std::to_string(cells.size()) + " columns, expected " +
                                                             std::to_string(expected_cols));
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double v = 0.0;
            auto cell = cells[c];
            while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
            while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
                throw DataError(DataError::Kind::bad_cell, path.string() + ":" + std::to_string(lineno) + " column " +
                                                               std::to_string(c) + ": invalid value '" +
                                                               std::string(cell) + "'");
            values.push_back(v);
        }
        ++rows;
    }
    t.values = Matrix(rows, expected_cols);
    std::copy(values.begin(), values.end(), t.values.data().begin());
    return t;
}

/// Shortest representation that parses back to the same double.
inline void put(std::string& out, double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

inline void write(const std::filesystem::path& path, const std::vector<std::string>& header,
                  const std::vector<std::span<const double>>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError(DataError::Kind::missing_file, "cannot write " + path.string());
    std::string buf;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c) buf += ',';
        buf += header[c];
    }
    buf += '\n';
    for (auto r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c) buf += ',';
            put(buf, r[c]);
        }
        buf += '\n';
    }
    os << buf;
    if (!os) throw DataError(DataError::Kind::missing_file, "write failed for " + path.string());
}

}  // namespace csv

inline std::vector<std::string> feature_header(char prefix, std::size_t dim, bool audio) {
    std::vector<std::string> h;
    for (std::size_t k = 0; k < dim; ++k)
        h.push_back(audio && k == kEnergyColumn ? "loudness" : std::string(1, prefix) + std::to_string(k));
    return h;
}

struct RecordingPaths {
    std::string id;
    std::filesystem::path audio, visual, labels;
};

/// Reads and validates one recording. g_a is scaled by this recording's own
/// energy range; pass `energy` to use corpus-level statistics instead.
inline Recording load_recording(const RecordingPaths& paths, std::optional<EnergyStats> energy = std::nullopt,
                                std::size_t audio_dim = kAudioDim, std::size_t visual_dim = kVisualDim) {
    auto a = csv::read(paths.audio, audio_dim);
    auto v = csv::read(paths.visual, visual_dim);
    auto l = csv::read(paths.labels, 2);
    if (a.values.rows() != v.values.rows() || a.values.rows() != l.values.rows())
        throw DataError(DataError::Kind::length_mismatch,
                        paths.id + ": frame counts differ (audio " + std::to_string(a.values.rows()) + ", visual " +
                            std::to_string(v.values.rows()) + ", labels " + std::to_string(l.values.rows()) + ")");
    if (a.values.rows() == 0) throw DataError(DataError::Kind::length_mismatch, paths.id + ": no frames");
    Recording r;
    r.id = paths.id;
    r.audio = std::move(a.values);
    r.visual = std::move(v.values);
    const std::size_t T = r.audio.rows();
    r.arousal.resize(T);
    r.valence.resize(T);
    r.energy.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        r.arousal[t] = l.values(t, 0);
        r.valence[t] = l.values(t, 1);
        for (std::size_t c = 0; c < 2; ++c)
            if (std::abs(l.values(t, c)) > 1.0)
                throw DataError(DataError::Kind::out_of_range, paths.labels.string() + ": row " + std::to_string(t + 1) +
                                                                   " label " + std::to_string(l.values(t, c)) +
                                                                   " outside [-1,1]");
        r.energy[t] = r.audio(t, kEnergyColumn);
        if (r.energy[t] < 0.0)
            throw DataError(DataError::Kind::out_of_range,
                            paths.audio.string() + ": row " + std::to_string(t + 1) + " negative energy");
    }
    assign_reliability(r, energy ? *energy : fit_energy(std::vector<std::span<const double>>{r.energy}));
    validate(r);
    return r;
}

inline RecordingPaths recording_paths(const std::filesystem::path& dir, const std::string& id) {
    return {id, dir / (id + "_audio.csv"), dir / (id + "_visual.csv"), dir / (id + "_labels.csv")};
}

inline void write_recording(const Recording& r, const std::filesystem::path& dir) {
    const auto p = recording_paths(dir, r.id);
    std::vector<std::span<const double>> rows;
    for (std::size_t t = 0; t < r.length(); ++t) rows.push_back(r.audio.row(t));
    csv::write(p.audio, feature_header('a', r.audio.cols(), true), rows);
    rows.clear();
    for (std::size_t t = 0; t < r.length(); ++t) rows.push_back(r.visual.row(t));
    csv::write(p.visual, feature_header('v', r.visual.cols(), false), rows);
    Matrix lab(r.length(), 2);
    for (std::size_t t = 0; t < r.length(); ++t) {
        lab(t, 0) = r.arousal[t];
        lab(t, 1) = r.valence[t];
    }
    rows.clear();
    for (std::size_t t = 0; t < r.length(); ++t) rows.push_back(lab.row(t));
    csv::write(p.labels, {"arousal", "valence"}, rows);
}

/// Corpus manifest: one "id audio visual labels" line per recording, paths
/// relative to the manifest's directory.
inline void write_manifest(const std::vector<Recording>& recs, const std::filesystem::path& dir) {
    std::ofstream os(dir / "manifest.txt", std::ios::binary);
    if (!os) throw DataError(DataError::Kind::missing_file, "cannot write manifest in " + dir.string());
    os << "# id audio visual labels\n";
    for (const auto& r : recs) os << r.id << ' ' << r.id << "_audio.csv " << r.id << "_visual.csv " << r.id << "_labels.csv\n";
}

inline std::vector<RecordingPaths> read_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw DataError(DataError::Kind::missing_file, "cannot open manifest " + manifest.string());
    const auto dir = manifest.parent_path();
    std::vector<RecordingPaths> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        RecordingPaths p;
        std::string a, v, l;
        if (!(ls >> p.id >> a >> v >> l))
            throw DataError(DataError::Kind::ragged_row, manifest.string() + ": malformed line '" + line + "'");
        p.audio = dir / a;
        p.visual = dir / v;
        p.labels = dir / l;
        out.push_back(std::move(p));
    }
    return out;
}

/// Loads every recording of a manifest, then rescales g_a with statistics
/// over the whole corpus.
inline std::vector<Recording> load_corpus(const std::filesystem::path& manifest, std::size_t audio_dim = kAudioDim,
                                          std::size_t visual_dim = kVisualDim) {
    std::vector<Recording> recs;
    for (const auto& p : read_manifest(manifest)) recs.push_back(load_recording(p, std::nullopt, audio_dim, visual_dim));
    return recs;
}

// --- splits -----------------------------------------------------------------

struct SplitPlan {
    std::vector<std::string> train_ids, dev_ids, test_ids;
    std::uint64_t fold_seed = 0;
};

/// Random dev and test subsets; everything else trains.
inline SplitPlan make_split(std::vector<std::string> ids, std::size_t n_dev, std::size_t n_test, std::uint64_t seed) {
    if (n_dev + n_test >= ids.size())
        throw std::invalid_argument("make_split: " + std::to_string(n_dev) + " dev + " + std::to_string(n_test) +
                                    " test leaves no training recordings out of " + std::to_string(ids.size()));
    std::sort(ids.begin(), ids.end());
    Rng rng(seed);
    rng.shuffle(ids);
    SplitPlan p;
    p.fold_seed = seed;
    p.dev_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_dev));
    p.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_dev),
                      ids.begin() + static_cast<std::ptrdiff_t>(n_dev + n_test));
    p.train_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_dev + n_test), ids.end());
    return p;
}

/// Repeated random dev/test draws (5 dev and 4 test, 8 repetitions in the
/// reference protocol).
inline std::vector<SplitPlan> cross_validation(const std::vector<std::string>& ids, std::size_t n_dev,
                                               std::size_t n_test, std::size_t repeats, std::uint64_t seed) {
    std::vector<SplitPlan> plans;
    for (std::size_t k = 0; k < repeats; ++k) plans.push_back(make_split(ids, n_dev, n_test, seed + k));
    return plans;
}

template <class Rec>
std::vector<const Rec*> select(const std::vector<Rec>& recs, const std::vector<std::string>& ids) {
    std::vector<const Rec*> out;
    for (const auto& id : ids) {
        auto it = std::find_if(recs.begin(), recs.end(), [&](const Rec& r) { return r.id == id; });
        if (it == recs.end()) throw std::invalid_argument("split references unknown recording '" + id + "'");
        out.push_back(&*it);
    }
    return out;
}

// --- synthetic corpus ---------------------------------------------------------

struct SynthConfig {
    std::size_t n_recordings = 27;
    std::size_t frames_per_recording = 7500;
    std::size_t audio_dim = kAudioDim;
    std::size_t visual_dim = kVisualDim;
    std::size_t informative_audio = 16;
    std::size_t informative_visual = 40;
    double smoothness = 150.0;  // mean-reversion time of the latent affect, frames
    double audio_informativeness = 1.0;
    double visual_informativeness = 1.0;
    double face_dropout_rate = 0.15;
    double face_dropout_mean_len = 75.0;
    double silence_rate = 0.2;  // fraction of frames where the subject is not speaking
    double silence_mean_len = 60.0;
    double audio_noise = 0.1;
    double visual_noise = 0.1;
    std::size_t lag = 20;  // labels trail the behaviour by this many frames
    std::uint64_t seed = 0;

    void validate() const {
        auto prob = [](double v, const char* key) {
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument(std::string("synth config: ") + key + " must lie in [0,1], got " +
                                            std::to_string(v));
        };
        prob(audio_informativeness, "audio_informativeness");
        prob(visual_informativeness, "visual_informativeness");
        prob(face_dropout_rate, "face_dropout_rate");
        prob(silence_rate, "silence_rate");
        if (face_dropout_rate >= 1.0) throw std::invalid_argument("synth config: face_dropout_rate must be < 1");
        if (silence_rate >= 1.0) throw std::invalid_argument("synth config: silence_rate must be < 1");
        if (n_recordings < 1 || frames_per_recording < 1)
            throw std::invalid_argument("synth config: n_recordings and frames_per_recording must be >= 1");
        if (face_dropout_mean_len < 1.0 || silence_mean_len < 1.0)
            throw std::invalid_argument("synth config: segment mean lengths must be >= 1");
        if (informative_audio >= audio_dim || informative_visual > visual_dim || audio_dim < 1)
            throw std::invalid_argument("synth config: informative dimensions exceed feature dimensions");
        if (!(smoothness >= 1.0)) throw std::invalid_argument("synth config: smoothness must be >= 1");
        if (audio_noise < 0 || visual_noise < 0) throw std::invalid_argument("synth config: noise must be >= 0");
    }
};

namespace detail {

/// Mean-reverting random walk, binomially smoothed and scaled into [-0.95, 0.95].
inline std::vector<double> latent_trajectory(std::size_t T, double smoothness, Rng& rng) {
    const double keep = 1.0 - 1.0 / smoothness;
    const double step = std::sqrt(1.0 - keep * keep);
    std::vector<double> z(T);
    double x = rng.normal();
    for (auto& v : z) {
        x = keep * x + step * rng.normal();
        v = x;
    }
    z = smooth(z, 41);
    double peak = 1e-12;
    for (double v : z) peak = std::max(peak, std::abs(v));
    for (double& v : z) v = 0.95 * v / peak;
    return z;
}

/// Two-state Markov chain with stationary on-probability `rate` and mean
/// on-segment length `mean_len`.
inline std::vector<char> segments(std::size_t T, double rate, double mean_len, Rng& rng) {
    std::vector<char> on(T, 0);
    if (rate <= 0.0) return on;
    const double exit = 1.0 / mean_len;
    const double enter = std::min(1.0, rate * exit / (1.0 - rate));
    bool state = rng.uniform() < rate;
    for (std::size_t t = 0; t < T; ++t) {
        on[t] = state;
        state = state ? rng.uniform() >= exit : rng.uniform() < enter;
    }
    return on;
}

}  // namespace detail

/// Deterministic synthetic corpus. Informative feature dimensions are fixed
/// random mixtures of the two latent affect trajectories; the remaining
/// dimensions follow unrelated smooth processes. Audio is uninformative
/// while the subject is silent (low energy) and visual rows are zeroed
/// during face-dropout segments.
inline std::vector<Recording> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    // Mixing weights are shared by every recording, like a fixed extractor.
    auto mixing = [&](std::size_t n) {
        Matrix w(n, 2);
        for (double& x : w.data()) x = rng.uniform(-1.0, 1.0);
        return w;
    };
    const Matrix mix_a = mixing(cfg.informative_audio);
    const Matrix mix_v = mixing(cfg.informative_visual);
    // Visual descriptors sit away from the origin, so zero-filled frames
    // are distinguishable from a neutral face.
    std::vector<double> offset_v(cfg.visual_dim);
    for (double& o : offset_v) o = rng.uniform(1.0, 2.0);

    std::vector<Recording> out;
    const std::size_t T = cfg.frames_per_recording;
    for (std::size_t r = 0; r < cfg.n_recordings; ++r) {
        Rng rr = Rng::derive(cfg.seed, r + 1);
        Recording rec;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "rec%03zu", r);
        rec.id = idbuf;
        const auto val = detail::latent_trajectory(T + cfg.lag, cfg.smoothness, rr);
        const auto aro = detail::latent_trajectory(T + cfg.lag, cfg.smoothness, rr);
        const auto silent = detail::segments(T, cfg.silence_rate, cfg.silence_mean_len, rr);
        const auto no_face = detail::segments(T, cfg.face_dropout_rate, cfg.face_dropout_mean_len, rr);

        // Behaviour at frame t reflects the latent at t + lag; labels at t
        // reflect the latent at t, so labels trail behaviour by `lag`.
        rec.audio = Matrix(T, cfg.audio_dim);
        rec.visual = Matrix(T, cfg.visual_dim);
        rec.arousal.assign(aro.begin(), aro.begin() + static_cast<std::ptrdiff_t>(T));
        rec.valence.assign(val.begin(), val.begin() + static_cast<std::ptrdiff_t>(T));
        rec.energy.resize(T);

        std::vector<std::vector<double>> distract_a, distract_v;
        for (std::size_t k = cfg.informative_audio + 1; k < cfg.audio_dim; ++k)
            distract_a.push_back(detail::latent_trajectory(T, cfg.smoothness, rr));
        for (std::size_t k = cfg.informative_visual; k < cfg.visual_dim; ++k)
            distract_v.push_back(detail::latent_trajectory(T, cfg.smoothness, rr));

        for (std::size_t t = 0; t < T; ++t) {
            const double zv = val[t + cfg.lag], za = aro[t + cfg.lag];
            const bool speaking = !silent[t];
            auto a = rec.audio.row(t);
            const double activity = 0.5 * (std::abs(zv) + std::abs(za));
            double e = speaking ? 0.3 + 0.7 * activity : 0.05 * activity;
            e += 0.02 * std::abs(rr.normal()) * (cfg.audio_noise > 0 ? 1.0 : 0.0);
            rec.energy[t] = e;
            a[kEnergyColumn] = e;
            for (std::size_t k = 0; k < cfg.informative_audio; ++k) {
                const double signal = cfg.audio_informativeness * (mix_a(k, 0) * zv + mix_a(k, 1) * za);
                const double noise = cfg.audio_noise * rr.normal();
                // Silent frames carry background noise instead of the subject's voice.
                a[k + 1] = speaking ? signal + noise : 0.5 * rr.normal() + noise;
            }
            std::size_t d = 0;
            for (std::size_t k = cfg.informative_audio + 1; k < cfg.audio_dim; ++k, ++d)
                a[k] = distract_a[d][t] + cfg.audio_noise * rr.normal();

            auto v = rec.visual.row(t);
            for (std::size_t k = 0; k < cfg.informative_visual; ++k)
                v[k] = offset_v[k] + cfg.visual_informativeness * (mix_v(k, 0) * zv + mix_v(k, 1) * za) +
                       cfg.visual_noise * rr.normal();
            d = 0;
            for (std::size_t k = cfg.informative_visual; k < cfg.visual_dim; ++k, ++d)
                v[k] = offset_v[k] + distract_v[d][t] + cfg.visual_noise * rr.normal();
            if (no_face[t]) std::fill(v.begin(), v.end(), 0.0);
            else if (detect_face(v) == 0) v[0] = 1e-6;
        }
        out.push_back(std::move(rec));
    }
    EnergyStats es = fit_energy([&] {
        std::vector<std::span<const double>> e;
        for (const auto& r : out) e.emplace_back(r.energy);
        return e;
    }());
    for (auto& r : out) {
        assign_reliability(r, es);
        validate(r);
    }
    return out;
}

// --- windows ------------------------------------------------------------------

/// A fixed-length BPTT window over one aligned sequence. Frames at or past
/// `valid` are padding and carry mask 0.
struct Window {
    std::size_t sequence = 0;
    std::size_t start = 0;
    std::size_t valid = 0;
    std::vector<double> mask;
};

using Batch = std::vector<Window>;

/// Cuts every sequence into consecutive bptt_len windows, shuffles them and
/// groups them into batches. Each frame lands in exactly one window.
inline std::vector<Batch> make_windows(std::span<const std::size_t> lengths, std::size_t bptt_len,
                                       std::size_t batch_size, Rng& rng) {
    if (bptt_len == 0) throw std::invalid_argument("make_windows: bptt_len must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("make_windows: batch_size must be >= 1");
    std::vector<Window> all;
    for (std::size_t s = 0; s < lengths.size(); ++s) {
        for (std::size_t start = 0; start < lengths[s]; start += bptt_len) {
            Window w{s, start, std::min(bptt_len, lengths[s] - start), std::vector<double>(bptt_len, 0.0)};
            std::fill_n(w.mask.begin(), w.valid, 1.0);
            all.push_back(std::move(w));
        }
    }
    rng.shuffle(all);
    std::vector<Batch> batches;
    for (std::size_t i = 0; i < all.size(); i += batch_size)
        batches.emplace_back(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(i)),
                             std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), i + batch_size))));
    return batches;
}

}  // namespace cafusion
