#pragma once

// The cafusion command-line tool: synth | train | evaluate | predict |
// gradcheck | delay-search. Exit codes: 0 success, 1 verification or
// training failure, 2 usage or configuration error.

#include <cafusion/checkpoint.hpp>
#include <cafusion/delay_search.hpp>
#include <cafusion/training.hpp>

#include <CLI11.hpp>

#include <functional>
#include <iomanip>
#include <map>

namespace cafusion {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when a check the user asked for does not hold (exit code 1).
class VerificationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace cfg_parse {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(out)) throw ConfigError("config key '" + key + "': value must be finite");
    return out;
}

inline bool boolean(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (auto cell : csv::split(v)) out.push_back(number<std::size_t>(key, trim(cell)));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

inline std::string real(double d) {
    std::string s;
    csv::put(s, d);
    return s;
}

inline std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

}  // namespace cfg_parse

/// Flat key=value experiment description. Lines starting with '#' are
/// comments. Unknown keys are errors.
struct ExperimentConfig {
    std::string data = "data";  // corpus directory holding manifest.txt
    std::string out = "out";
    std::string audio_checkpoint, visual_checkpoint;  // optional pretrained stacks
    FusionKind variant = FusionKind::conditional_attention;
    Target target = Target::valence;
    std::size_t delay = 20;
    std::size_t smooth_window = 11;
    std::size_t n_dev = 5, n_test = 4;
    std::uint64_t split_seed = 0;
    std::uint64_t seed = 0;

    TrainConfig train;
    std::optional<double> alpha, beta;  // unset: per-target defaults
    ModelShape shape;

    SynthConfig synth;

    std::size_t gc_hidden = 4, gc_audio_dim = 3, gc_visual_dim = 5, gc_length = 8;
    double gc_eps = 1e-5, gc_tol = 1e-4;

    std::vector<std::size_t> ds_candidates = [] {
        std::vector<std::size_t> c(41);
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = i;
        return c;
    }();
    double ds_ridge = 1e-3;
    std::size_t ds_folds = 3;

    struct Field {
        std::string key;
        std::function<std::string()> get;
        std::function<void(const std::string&)> set;
    };

    std::vector<Field> fields() {
        using namespace cfg_parse;
        std::vector<Field> f;
        auto str = [&](const char* k, std::string& x) {
            f.push_back({k, [&x] { return x; }, [&x](const std::string& v) { x = v; }});
        };
        auto size = [&](const char* k, std::size_t& x) {
            f.push_back({k, [&x] { return std::to_string(x); },
                         [&x, k](const std::string& v) { x = number<std::size_t>(k, v); }});
        };
        auto u64 = [&](const char* k, std::uint64_t& x) {
            f.push_back({k, [&x] { return std::to_string(x); },
                         [&x, k](const std::string& v) { x = number<std::uint64_t>(k, v); }});
        };
        auto dbl = [&](const char* k, double& x) {
            f.push_back({k, [&x] { return real(x); }, [&x, k](const std::string& v) { x = number<double>(k, v); }});
        };
        auto opt = [&](const char* k, std::optional<double>& x) {
            f.push_back({k, [&x] { return x ? real(*x) : std::string("auto"); },
                         [&x, k](const std::string& v) {
                             if (v == "auto") x.reset();
                             else x = number<double>(k, v);
                         }});
        };
        auto list = [&](const char* k, std::vector<std::size_t>& x) {
            f.push_back({k, [&x] { return join(x); }, [&x, k](const std::string& v) { x = sizes(k, v); }});
        };
        auto flag = [&](const char* k, bool& x) {
            f.push_back({k, [&x] { return std::string(x ? "true" : "false"); },
                         [&x, k](const std::string& v) { x = boolean(k, v); }});
        };

        str("data", data);
        str("out", out);
        str("audio_checkpoint", audio_checkpoint);
        str("visual_checkpoint", visual_checkpoint);
        f.push_back({"variant", [this] { return std::string(to_string(variant)); },
                     [this](const std::string& v) {
                         try {
                             variant = parse_fusion_kind(v);
                         } catch (const std::exception& e) {
                             throw ConfigError(std::string("config key 'variant': ") + e.what());
                         }
                     }});
        f.push_back({"target", [this] { return std::string(to_string(target)); },
                     [this](const std::string& v) {
                         try {
                             target = parse_target(v);
                         } catch (const std::exception& e) {
                             throw ConfigError(std::string("config key 'target': ") + e.what());
                         }
                     }});
        size("delay", delay);
        size("smooth_window", smooth_window);
        size("n_dev", n_dev);
        size("n_test", n_test);
        u64("split_seed", split_seed);
        u64("seed", seed);

        dbl("lr_init", train.lr_init);
        dbl("lr_decay", train.lr_decay);
        size("epochs", train.epochs);
        size("finetune_epochs", train.finetune_epochs);
        dbl("finetune_lr", train.finetune_lr);
        size("batch_size", train.batch_size);
        size("bptt_len", train.bptt_len);
        dbl("dropout_rate", train.dropout_rate);
        opt("alpha", alpha);
        opt("beta", beta);
        dbl("grad_clip", train.grad_clip);
        size("threads", train.threads);
        list("audio_hidden", shape.audio_hidden);
        list("visual_hidden", shape.visual_hidden);
        list("early_hidden", shape.early_hidden);
        flag("gate_bias", shape.gate_bias);

        size("synth.n_recordings", synth.n_recordings);
        size("synth.frames_per_recording", synth.frames_per_recording);
        size("synth.audio_dim", synth.audio_dim);
        size("synth.visual_dim", synth.visual_dim);
        size("synth.informative_audio", synth.informative_audio);
        size("synth.informative_visual", synth.informative_visual);
        dbl("synth.smoothness", synth.smoothness);
        dbl("synth.audio_informativeness", synth.audio_informativeness);
        dbl("synth.visual_informativeness", synth.visual_informativeness);
        dbl("synth.face_dropout_rate", synth.face_dropout_rate);
        dbl("synth.face_dropout_mean_len", synth.face_dropout_mean_len);
        dbl("synth.silence_rate", synth.silence_rate);
        dbl("synth.silence_mean_len", synth.silence_mean_len);
        dbl("synth.audio_noise", synth.audio_noise);
        dbl("synth.visual_noise", synth.visual_noise);
        size("synth.lag", synth.lag);

        size("gradcheck.hidden", gc_hidden);
        size("gradcheck.audio_dim", gc_audio_dim);
        size("gradcheck.visual_dim", gc_visual_dim);
        size("gradcheck.length", gc_length);
        dbl("gradcheck.eps", gc_eps);
        dbl("gradcheck.tol", gc_tol);

        list("delay_search.candidates", ds_candidates);
        dbl("delay_search.ridge", ds_ridge);
        size("delay_search.folds", ds_folds);
        return f;
    }

    void set(const std::string& key, const std::string& value) {
        for (auto& f : fields())
            if (f.key == key) return f.set(value);
        throw ConfigError("unknown config key '" + key + "'");
    }

    /// Applies "key=value" (one per line) on top of the current values.
    void merge_text(std::string_view text, const std::string& origin) {
        std::size_t lineno = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto nl = text.find('\n', pos);
            const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
            pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
            ++lineno;
            const auto line = cfg_parse::trim(raw);
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
            try {
                set(cfg_parse::trim(line.substr(0, eq)), cfg_parse::trim(line.substr(eq + 1)));
            } catch (const ConfigError& e) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    void merge_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot read config file " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        merge_text(ss.str(), path.string());
    }

    std::string to_text() {
        std::string s;
        for (auto& f : fields()) s += f.key + "=" + f.get() + "\n";
        return s;
    }

    /// Training settings with the loss weights resolved for the target.
    TrainConfig train_config() const {
        TrainConfig t = train;
        const auto [a, b] = TrainConfig::default_loss_weights(target);
        t.alpha = alpha.value_or(a);
        t.beta = beta.value_or(b);
        t.seed = seed;
        return t;
    }

    SynthConfig synth_config() const {
        SynthConfig s = synth;
        s.seed = seed;
        return s;
    }

    PostProcess postprocess() const { return {DelaySpec{delay}, smooth_window}; }

    void validate() const {
        try {
            train_config().validate();
            synth_config().validate();
            if (smooth_window % 2 == 0) throw ConfigError("smooth_window must be odd");
            if (train.threads < 1) throw ConfigError("threads must be >= 1");
            for (const auto* h : {&shape.audio_hidden, &shape.visual_hidden, &shape.early_hidden})
                for (auto n : *h)
                    if (n == 0) throw ConfigError("hidden layer sizes must be >= 1");
            if (!(gc_eps > 0.0) || !(gc_tol > 0.0)) throw ConfigError("gradcheck.eps and gradcheck.tol must be > 0");
            if (ds_candidates.empty()) throw ConfigError("delay_search.candidates must not be empty");
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
};

// --- shared helpers ------------------------------------------------------------------

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + path.string());
    os << text;
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

/// Re-runnable record of a command: its name and the full effective config,
/// followed by result lines as comments.
inline void write_run_manifest(const std::filesystem::path& dir, const std::string& command, ExperimentConfig cfg,
                               const std::vector<std::string>& results = {}) {
    std::string s = "# cafusion " + command + " --config run.cfg\n";
    s += "# optimizer=sgd, global-norm clipping at grad_clip, lr=lr_init*lr_decay^epoch\n";
    s += cfg.to_text();
    for (const auto& r : results) s += "# " + r + "\n";
    write_text(dir / "run.cfg", s);
}

inline void ensure_out_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw ConfigError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

inline std::filesystem::path manifest_path(const ExperimentConfig& cfg) {
    const auto p = std::filesystem::path(cfg.data) / "manifest.txt";
    if (!std::filesystem::exists(p)) throw ConfigError("corpus manifest not found: " + p.string());
    return p;
}

inline void require_file(const std::string& what, const std::filesystem::path& p) {
    if (!std::filesystem::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
}

struct LoadedCorpus {
    std::vector<Recording> recordings;
    SplitPlan plan;
    Preprocessor pre;

    std::vector<const Recording*> subset(const std::string& split) const {
        if (split == "all") {
            std::vector<const Recording*> all;
            for (const auto& r : recordings) all.push_back(&r);
            return all;
        }
        if (split == "train") return select(recordings, plan.train_ids);
        if (split == "dev") return select(recordings, plan.dev_ids);
        if (split == "test") return select(recordings, plan.test_ids);
        throw ConfigError("unknown split '" + split + "' (expected train, dev, test or all)");
    }
};

/// Loads the corpus, draws the split and fits preprocessing on the training
/// part. Deterministic, so evaluation reproduces the training-time statistics.
inline LoadedCorpus load_experiment(const ExperimentConfig& cfg, std::size_t audio_dim, std::size_t visual_dim) {
    LoadedCorpus c;
    c.recordings = load_corpus(manifest_path(cfg), audio_dim, visual_dim);
    std::vector<std::string> ids;
    for (const auto& r : c.recordings) {
        if (r.length() <= cfg.delay)
            throw ConfigError("recording " + r.id + " has " + std::to_string(r.length()) +
                              " frames, not more than delay=" + std::to_string(cfg.delay));
        ids.push_back(r.id);
    }
    try {
        c.plan = make_split(ids, cfg.n_dev, cfg.n_test, cfg.split_seed);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    c.pre = Preprocessor::fit(select(c.recordings, c.plan.train_ids), DelaySpec{cfg.delay}, cfg.target);
    return c;
}

inline std::string format_ccc(double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(4) << v;
    return ss.str();
}

// --- commands --------------------------------------------------------------------------

inline int cmd_synth(ExperimentConfig cfg, std::ostream& out) {
    cfg.validate();
    const std::filesystem::path dir = cfg.out;
    ensure_out_dir(dir);
    const auto recs = synth_generate(cfg.synth_config());
    for (const auto& r : recs) write_recording(r, dir);
    write_manifest(recs, dir);
    write_run_manifest(dir, "synth", cfg);
    out << "wrote " << recs.size() << " recordings of " << cfg.synth.frames_per_recording << " frames to "
        << dir.string() << "\n";
    return 0;
}

inline std::string checkpoint_name(FusionKind k) { return "model_" + std::string(to_string(k)) + ".ckpt"; }

inline int cmd_train(ExperimentConfig cfg, std::ostream& out) {
    cfg.validate();
    manifest_path(cfg);
    const bool needs_pretrained = cfg.variant != FusionKind::early;
    if (!cfg.audio_checkpoint.empty()) require_file("audio checkpoint", cfg.audio_checkpoint);
    if (!cfg.visual_checkpoint.empty()) require_file("visual checkpoint", cfg.visual_checkpoint);
    const std::filesystem::path dir = cfg.out;
    ensure_out_dir(dir);

    const auto tc = cfg.train_config();
    const auto corpus = load_experiment(cfg, kAudioDim, kVisualDim);
    const auto train = corpus.pre(corpus.subset("train"));
    const auto dev = corpus.pre(corpus.subset("dev"));
    if (dev.empty()) throw ConfigError("n_dev must be >= 1 for model selection");
    const auto pp = cfg.postprocess();
    out << "train " << corpus.plan.train_ids.size() << " / dev " << corpus.plan.dev_ids.size() << " / test "
        << corpus.plan.test_ids.size() << " recordings, target " << to_string(cfg.target) << ", variant "
        << to_string(cfg.variant) << ", alpha " << tc.alpha << ", beta " << tc.beta << "\n";

    auto progress = [&out](const char* tag) {
        return [&out, tag](const EpochRecord& e) {
            out << tag << " epoch " << e.epoch << " loss " << e.loss << " dev_ccc " << format_ccc(e.dev_ccc) << "\n";
        };
    };
    std::vector<std::string> results;
    std::optional<LstmStack> pre_a, pre_v;
    if (needs_pretrained) {
        for (auto modality : {Modality::audio, Modality::visual}) {
            const bool audio = modality == Modality::audio;
            const auto& given = audio ? cfg.audio_checkpoint : cfg.visual_checkpoint;
            auto& slot = audio ? pre_a : pre_v;
            if (!given.empty()) {
                slot = load_stack(given);
                results.push_back(std::string(audio ? "audio" : "visual") + " stack loaded from " + given);
                continue;
            }
            auto res = train_unimodal(train, dev, modality, tc, cfg.shape, pp, progress(audio ? "audio" : "visual"));
            const std::string tag = audio ? "audio" : "visual";
            save_checkpoint(dir / (tag + ".ckpt"), res.model);
            write_history_csv(res.history, dir / ("history_" + tag + ".csv"));
            if (res.history.best_epoch)
                results.push_back(tag + " best_epoch=" + std::to_string(*res.history.best_epoch) +
                                  " dev_ccc=" + cfg_parse::real(res.history.best_dev_ccc()));
            slot = std::move(res.model);
        }
    }
    auto fused = train_fusion(cfg.variant, pre_a, pre_v, train, dev, tc, cfg.shape, pp,
                              progress(to_string(cfg.variant).data()));
    save_checkpoint(dir / checkpoint_name(cfg.variant), fused.model);
    write_history_csv(fused.history, dir / ("history_" + std::string(to_string(cfg.variant)) + ".csv"));
    if (fused.history.best_epoch)
        results.push_back(std::string(to_string(cfg.variant)) + " best_epoch=" + std::to_string(*fused.history.best_epoch) +
                          " dev_ccc=" + cfg_parse::real(fused.history.best_dev_ccc()));
    write_run_manifest(dir, "train", cfg, results);
    for (const auto& r : results) out << r << "\n";
    return 0;
}

/// A model loaded for inference: either a bare stack or a fusion model.
struct LoadedModel {
    std::optional<LstmStack> stack;
    Modality modality = Modality::audio;
    std::optional<FusionModel> fusion;

    /// Aligned predictions and, for conditional attention, the gate values.
    std::pair<std::vector<double>, std::vector<double>> run(const PreparedSequence& s) const {
        Rng unused(0);
        if (stack)
            return {stack_forward(*stack, modality == Modality::audio ? s.audio : s.visual, Mode::infer, unused)
                        .predictions,
                    {}};
        auto f = fusion_forward(*fusion, s.audio, s.visual, Mode::infer, unused);
        return {std::move(f.predictions), std::move(f.lambdas)};
    }
};

inline LoadedModel load_model(const ExperimentConfig& cfg, const std::string& checkpoint) {
    require_file("checkpoint", checkpoint);
    std::uint8_t kind = 0;
    {
        auto is = open_checkpoint(checkpoint);
        kind = checkpoint_kind(is);
    }
    LoadedModel m;
    if (kind == 0) {
        m.stack = load_stack(checkpoint);
        if (m.stack->input_dim() == kAudioDim) m.modality = Modality::audio;
        else if (m.stack->input_dim() == kVisualDim) m.modality = Modality::visual;
        else throw ConfigError("checkpoint stack input dimension matches neither modality");
        return m;
    }
    if (static_cast<FusionKind>(kind) != cfg.variant)
        throw ConfigError("checkpoint holds variant '" + std::string(to_string(static_cast<FusionKind>(kind))) +
                          "' but the configured variant is '" + std::string(to_string(cfg.variant)) + "'");
    m.fusion = load_fusion(checkpoint);
    return m;
}

inline std::string default_checkpoint(const ExperimentConfig& cfg) {
    return (std::filesystem::path(cfg.out) / checkpoint_name(cfg.variant)).string();
}

/// Full pipeline per recording, metrics CSV, plot-data CSVs. In identity
/// mode the labels themselves stand in for the model output.
inline int cmd_evaluate(ExperimentConfig cfg, std::string checkpoint, const std::string& split, bool identity,
                        std::ostream& out) {
    cfg.validate();
    manifest_path(cfg);
    if (checkpoint.empty()) checkpoint = default_checkpoint(cfg);
    std::optional<LoadedModel> model;
    if (!identity) model = load_model(cfg, checkpoint);
    const std::filesystem::path dir = cfg.out;
    ensure_out_dir(dir);

    const auto corpus = load_experiment(cfg, kAudioDim, kVisualDim);
    const auto seqs = corpus.pre(corpus.subset(split));
    if (seqs.empty()) throw ConfigError("split '" + split + "' is empty");
    const auto pp = cfg.postprocess();
    std::string metrics = "recording_id,rmse,pcc,ccc\n";
    auto row = [&](const std::string& id, const MetricsReport& m) {
        metrics += id + ",";
        csv::put(metrics, m.rmse);
        metrics += ",";
        if (m.pcc) csv::put(metrics, *m.pcc);
        metrics += ",";
        csv::put(metrics, m.ccc);
        metrics += "\n";
    };
    std::vector<double> all_pred, all_label;
    for (const auto& s : seqs) {
        std::vector<double> pred, lambda;
        if (identity) {
            pred = s.labels;
        } else {
            auto [p, l] = model->run(s);
            pred = score_sequence(s, p, pp).prediction;
            lambda = std::move(l);
        }
        const auto m = evaluate(pred, s.labels);
        row(s.id, m);
        out << s.id << " rmse " << m.rmse << " ccc " << format_ccc(m.ccc) << "\n";
        all_pred.insert(all_pred.end(), pred.begin(), pred.end());
        all_label.insert(all_label.end(), s.labels.begin(), s.labels.end());

        std::string plot = "frame_index,prediction,label,lambda\n";
        for (std::size_t t = 0; t < pred.size(); ++t) {
            plot += std::to_string(t) + ",";
            csv::put(plot, pred[t]);
            plot += ",";
            csv::put(plot, s.labels[t]);
            plot += ",";
            // Gate values live on the aligned grid; frame t used aligned frame t - N.
            if (!lambda.empty() && t >= pp.delay.n_frames) csv::put(plot, lambda[t - pp.delay.n_frames]);
            plot += "\n";
        }
        write_text(dir / ("plot_" + s.id + ".csv"), plot);
    }
    const auto pooled = evaluate(all_pred, all_label);
    row("pooled", pooled);
    write_text(dir / "metrics.csv", metrics);
    out << "pooled rmse " << pooled.rmse << " ccc " << format_ccc(pooled.ccc) << "\n";
    write_run_manifest(dir, "evaluate --split " + split + (identity ? " --identity" : " --checkpoint " + checkpoint),
                       cfg, {"pooled ccc=" + cfg_parse::real(pooled.ccc)});
    return 0;
}

inline int cmd_predict(ExperimentConfig cfg, std::string checkpoint, const std::string& split, std::ostream& out) {
    cfg.validate();
    manifest_path(cfg);
    if (checkpoint.empty()) checkpoint = default_checkpoint(cfg);
    const auto model = load_model(cfg, checkpoint);
    const std::filesystem::path dir = cfg.out;
    ensure_out_dir(dir);
    const auto corpus = load_experiment(cfg, kAudioDim, kVisualDim);
    const auto pp = cfg.postprocess();
    for (const auto& s : corpus.pre(corpus.subset(split))) {
        auto [aligned, lambda] = model.run(s);
        const auto pred = postprocess(aligned, pp, s.original_len);
        std::string text = "frame_index,prediction,lambda\n";
        for (std::size_t t = 0; t < pred.size(); ++t) {
            text += std::to_string(t) + ",";
            csv::put(text, pred[t]);
            text += ",";
            if (!lambda.empty() && t >= pp.delay.n_frames) csv::put(text, lambda[t - pp.delay.n_frames]);
            text += "\n";
        }
        write_text(dir / ("pred_" + s.id + ".csv"), text);
        out << "wrote pred_" << s.id << ".csv\n";
    }
    write_run_manifest(dir, "predict --split " + split + " --checkpoint " + checkpoint, cfg);
    return 0;
}

inline constexpr std::size_t kGradCheckParamCap = 50000;

/// Central-difference check of every model type at small dimensions.
inline int cmd_gradcheck(ExperimentConfig cfg, bool inject_fault, std::ostream& out, std::ostream& err) {
    cfg.validate();
    if (cfg.gc_eps < 1e-7 || cfg.gc_eps > 1e-4)
        err << "warning: gradcheck.eps=" << cfg.gc_eps << " is outside the validated range [1e-7, 1e-4]\n";
    const std::size_t H = cfg.gc_hidden, da = cfg.gc_audio_dim, dv = cfg.gc_visual_dim, T = cfg.gc_length;
    if (H == 0 || da == 0 || dv == 0 || T == 0) throw ConfigError("gradcheck dimensions must be >= 1");
    if (T > 32) err << "warning: gradcheck.length=" << T << " exceeds the recommended 32 frames\n";

    struct Case {
        std::string name;
        std::function<GradCheckReport(const GradCheckOptions&)> run;
        std::size_t params;
        std::string first_block;
    };
    std::vector<Case> cases;
    auto add_stack = [&](const std::string& name, std::size_t in, std::uint64_t k) {
        Rng rng = Rng::derive(cfg.seed, k);
        auto s = LstmStack::create(in, {H, H}, rng);
        auto sample = random_sample(in, dv, T, rng);
        const auto first = param_blocks(s).front().first;
        const auto n = parameter_count(s);
        cases.push_back({name, [s, sample](const GradCheckOptions& o) { return grad_check(s, sample, o); }, n, first});
    };
    add_stack("audio stack", da, 1);
    add_stack("visual stack", dv, 2);
    auto add_fusion = [&](FusionKind kind, double alpha, double beta, std::uint64_t k) {
        Rng rng = Rng::derive(cfg.seed, k);
        FusionModel m;
        if (kind == FusionKind::early) {
            FusionShape fs{da, dv, {}, {}, {H, H}, 0.2, true};
            m = make_early_fusion(fs, rng);
        } else {
            auto a = LstmStack::create(da, {H, H}, rng);
            auto v = LstmStack::create(dv, {H, H}, rng);
            m = make_fusion(kind, a, v, rng, cfg.shape.gate_bias);
        }
        auto sample = random_sample(da, dv, T, rng, alpha, beta);
        std::string name = std::string(to_string(kind)) + " fusion";
        if (alpha > 0.0 || beta > 0.0) name += " (alpha " + cfg_parse::real(alpha) + ", beta " + cfg_parse::real(beta) + ")";
        const auto first = param_blocks(m).front().first;
        const auto n = parameter_count(m);
        cases.push_back({name, [m, sample](const GradCheckOptions& o) { return grad_check(m, sample, o); }, n, first});
    };
    add_fusion(FusionKind::early, 0, 0, 3);
    add_fusion(FusionKind::model_level, 0, 0, 4);
    add_fusion(FusionKind::late, 0, 0, 5);
    add_fusion(FusionKind::conditional_attention, 0, 0, 6);
    add_fusion(FusionKind::conditional_attention, 0.04, 0.02, 7);

    for (const auto& c : cases)
        if (c.params > kGradCheckParamCap)
            throw ConfigError(c.name + " has " + std::to_string(c.params) + " parameters, above the cap of " +
                              std::to_string(kGradCheckParamCap));

    bool all_pass = true;
    out << std::scientific << std::setprecision(3);
    for (const auto& c : cases) {
        GradCheckOptions o{cfg.gc_eps, cfg.gc_tol, std::nullopt};
        if (inject_fault) o.corrupt_block = c.first_block;
        const auto rep = c.run(o);
        all_pass = all_pass && rep.pass;
        out << (rep.pass ? "PASS " : "FAIL ") << c.name << " (" << c.params << " params)\n";
        for (const auto& b : rep.blocks)
            out << "  " << std::left << std::setw(22) << b.name << std::right << " max rel err " << b.max_rel_error
                << " at " << b.argmax << (b.max_rel_error < rep.tol ? "" : "  <-- over tolerance") << "\n";
    }
    out << std::defaultfloat;
    out << (all_pass ? "gradient check passed" : "gradient check FAILED") << " (eps " << cfg.gc_eps << ", tol "
        << cfg.gc_tol << ")\n";
    return all_pass ? 0 : 1;
}

inline int cmd_delay_search(ExperimentConfig cfg, std::ostream& out) {
    cfg.validate();
    manifest_path(cfg);
    const std::filesystem::path dir = cfg.out;
    ensure_out_dir(dir);
    auto recs = load_corpus(manifest_path(cfg));
    std::vector<std::string> ids;
    for (const auto& r : recs) ids.push_back(r.id);
    SplitPlan plan;
    try {
        plan = make_split(ids, cfg.n_dev, cfg.n_test, cfg.split_seed);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    DelaySearchResult res;
    try {
        res = delay_search(select(recs, plan.train_ids), cfg.ds_candidates,
                           DelaySearchOptions{cfg.target, cfg.ds_ridge, cfg.ds_folds});
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    std::string csvtext = "delay,ccc\n";
    for (const auto& [n, score] : res.scores) {
        csvtext += std::to_string(n) + ",";
        csv::put(csvtext, score);
        csvtext += "\n";
    }
    write_text(dir / "delay_search.csv", csvtext);
    cfg.delay = res.best;
    write_run_manifest(dir, "delay-search", cfg, {"best delay=" + std::to_string(res.best)});
    out << "best delay " << res.best << " frames\n";
    return 0;
}

// --- entry point -----------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Audio-visual fusion for continuous emotion prediction", "cafusion"};
    app.require_subcommand(1);

    struct Common {
        std::string config, out, checkpoint, variant, target;
        std::uint64_t seed = 0;
        std::vector<std::string> sets;
        CLI::Option* seed_opt = nullptr;
    };
    std::map<std::string, Common> common;
    std::string split;
    bool identity = false, inject_fault = false;

    auto add_common = [&](CLI::App* sub, bool model_flags) {
        auto& c = common[sub->get_name()];
        sub->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
        c.seed_opt = sub->add_option("--seed", c.seed, "random seed");
        sub->add_option("--out", c.out, "output directory");
        sub->add_option("--set", c.sets, "override one config key (key=value), repeatable");
        if (model_flags) {
            sub->add_option("--variant", c.variant, "fusion variant")->check(CLI::IsMember({"early", "model", "late", "ca"}));
            sub->add_option("--target", c.target, "predicted dimension")->check(CLI::IsMember({"arousal", "valence"}));
            sub->add_option("--checkpoint", c.checkpoint, "model checkpoint");
        }
    };
    auto* synth = app.add_subcommand("synth", "generate a synthetic bimodal corpus");
    add_common(synth, false);
    auto* train = app.add_subcommand("train", "pretrain unimodal stacks and train a fusion model");
    add_common(train, true);
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score a checkpoint and write metrics and plot data");
    add_common(evaluate_cmd, true);
    evaluate_cmd->add_option("--split", split, "train, dev, test or all")->default_val("test");
    evaluate_cmd->add_flag("--identity", identity, "score the labels against themselves (pipeline sanity check)");
    auto* predict = app.add_subcommand("predict", "write post-processed predictions per recording");
    add_common(predict, true);
    predict->add_option("--split", split, "train, dev, test or all")->default_val("all");
    auto* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients against central differences");
    add_common(gradcheck, false);
    gradcheck->add_flag("--inject-fault", inject_fault, "corrupt one gradient entry per model (must fail)");
    auto* dsearch = app.add_subcommand("delay-search", "choose the annotation delay on the training split");
    add_common(dsearch, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    const auto& c = common[sub->get_name()];
    try {
        ExperimentConfig cfg;
        if (!c.config.empty()) cfg.merge_file(c.config);
        for (const auto& kv : c.sets) cfg.merge_text(kv, "--set");
        if (c.seed_opt->count()) cfg.seed = c.seed;
        if (!c.out.empty()) cfg.out = c.out;
        if (!c.variant.empty()) cfg.set("variant", c.variant);
        if (!c.target.empty()) cfg.set("target", c.target);

        const std::string name = sub->get_name();
        if (name == "synth") return cmd_synth(cfg, out);
        if (name == "train") return cmd_train(cfg, out);
        if (name == "evaluate") return cmd_evaluate(cfg, c.checkpoint, split, identity, out);
        if (name == "predict") return cmd_predict(cfg, c.checkpoint, split, out);
        if (name == "gradcheck") return cmd_gradcheck(cfg, inject_fault, out, err);
        if (name == "delay-search") return cmd_delay_search(cfg, out);
        err << "unknown command " << name << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        err << "dimension error: " << e.what() << "\n";
        return 2;
    } catch (const VerificationFailure& e) {
        err << "verification failed: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cafusion
