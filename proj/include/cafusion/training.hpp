#pragma once

// Mini-batch SGD over truncated-BPTT windows, per-epoch learning-rate
// decay, best-development-CCC model selection, and a central-difference
// gradient checker for every model type.

#include <cafusion/checkpoint.hpp>
#include <cafusion/prepare.hpp>

#include <functional>
#include <thread>

namespace cafusion {

struct TrainConfig {
    double lr_init = 0.01;
    double lr_decay = 0.98;
    std::size_t epochs = 100;
    std::size_t finetune_epochs = 10;
    double finetune_lr = 0.001;
    std::size_t batch_size = 256;
    std::size_t bptt_len = 80;
    double dropout_rate = 0.2;
    double alpha = 0.0;
    double beta = 0.0;
    std::uint64_t seed = 0;
    double grad_clip = 5.0;
    std::size_t threads = 1;

    /// Gate-supervision weights used for each target by default.
    static std::pair<double, double> default_loss_weights(Target t) {
        return t == Target::valence ? std::pair{0.04, 0.02} : std::pair{0.0, 0.0};
    }

    void validate() const {
        if (!(lr_init > 0.0) || !(finetune_lr > 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be > 0");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("TrainConfig: lr_decay must lie in (0,1]");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (bptt_len < 1) throw std::invalid_argument("TrainConfig: bptt_len must be >= 1");
        if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("TrainConfig: alpha and beta must be >= 0");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("TrainConfig: dropout_rate must lie in [0,1)");
        if (!(grad_clip > 0.0)) throw std::invalid_argument("TrainConfig: grad_clip must be > 0");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;     // mean per-frame training loss
    double dev_ccc = 0.0;  // mean over development sequences
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::optional<std::size_t> best_epoch;

    double best_dev_ccc() const { return best_epoch ? epochs[*best_epoch].dev_ccc : 0.0; }
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    std::string buf = "epoch,loss,dev_ccc,lr\n";
    for (const auto& e : h.epochs) {
        buf += std::to_string(e.epoch);
        buf += ',';
        csv::put(buf, e.loss);
        buf += ',';
        csv::put(buf, e.dev_ccc);
        buf += ',';
        csv::put(buf, e.lr);
        buf += '\n';
    }
    os << buf;
}

/// lr_init * lr_decay^epoch
inline double learning_rate(double lr_init, double lr_decay, std::size_t epoch) {
    return lr_init * std::pow(lr_decay, static_cast<double>(epoch));
}

// --- parameter-space helpers ---------------------------------------------------------

template <class Model>
std::vector<std::pair<std::string, std::span<double>>> param_blocks(Model& m) {
    std::vector<std::pair<std::string, std::span<double>>> out;
    visit_params(m, [&](const std::string& name, std::span<double> b) { out.emplace_back(name, b); });
    return out;
}

template <class Model>
std::vector<std::pair<std::string, std::span<const double>>> param_blocks(const Model& m) {
    std::vector<std::pair<std::string, std::span<const double>>> out;
    visit_params(m, [&](const std::string& name, std::span<const double> b) { out.emplace_back(name, b); });
    return out;
}

template <class Model>
std::size_t parameter_count(const Model& m) {
    std::size_t n = 0;
    for (const auto& [name, b] : param_blocks(m)) n += b.size();
    return n;
}

template <class Model>
double global_norm(const Model& m) {
    double s = 0.0;
    for (const auto& [name, b] : param_blocks(m))
        for (double x : b) s += x * x;
    return std::sqrt(s);
}

template <class Model>
void zero_params(Model& m) {
    for (auto& [name, b] : param_blocks(m)) std::fill(b.begin(), b.end(), 0.0);
}

/// target += scale * source, blockwise.
template <class Model>
void axpy_params(Model& target, const Model& source, double scale) {
    auto t = param_blocks(target);
    auto s = param_blocks(source);
    if (t.size() != s.size()) throw DimensionError("parameter block count mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) {
        check_same(t[i].second.size(), s[i].second.size(), t[i].first.c_str());
        for (std::size_t k = 0; k < t[i].second.size(); ++k) t[i].second[k] += scale * s[i].second[k];
    }
}

/// Global-norm clipping at grad_clip, then params -= lr * grads.
/// Returns the applied (post-clip) gradient norm.
template <class Model>
double sgd_step(Model& params, const Model& grads, double lr, double grad_clip) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
    const double norm = global_norm(grads);
    const double scale = norm > grad_clip ? grad_clip / norm : 1.0;
    axpy_params(params, grads, -lr * scale);
    return norm * scale;
}

// --- generic training loop ------------------------------------------------------------

using EpochCallback = std::function<void(const EpochRecord&)>;

struct Schedule {
    std::size_t epochs = 0;
    double lr_init = 0.01;
    double lr_decay = 0.98;
    std::size_t batch_size = 256;
    std::size_t bptt_len = 80;
    double grad_clip = 5.0;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    EpochCallback on_epoch = {};
};

template <class Model>
struct Objective {
    /// Loss of one window [start, start+len) of a sequence, gradient
    /// accumulated into `grads`.
    std::function<double(const Model&, const PreparedSequence&, std::size_t, std::size_t, Rng&, Model&)> window;
    /// Aligned predictions over a whole sequence in infer mode.
    std::function<std::vector<double>(const Model&, const PreparedSequence&)> predict;
};

template <class Model>
double mean_dev_ccc(const Model& m, const Objective<Model>& obj, const PreparedCorpus& dev, const PostProcess& pp) {
    if (dev.empty()) return 0.0;
    double s = 0.0;
    for (const auto& seq : dev) s += score_sequence(seq, obj.predict(m, seq), pp).metrics.ccc;
    return s / static_cast<double>(dev.size());
}

template <class Model>
struct FitResult {
    Model model;
    TrainHistory history;
};

template <class Model>
FitResult<Model> fit(Model model, const Objective<Model>& obj, const PreparedCorpus& train, const PreparedCorpus& dev,
                     const Schedule& sched, const PostProcess& pp) {
    FitResult<Model> out{model, {}};
    if (sched.epochs == 0) return out;
    if (train.empty()) throw TrainingError("training split is empty");

    std::vector<std::size_t> lengths;
    for (const auto& s : train) lengths.push_back(s.length());
    std::size_t frames = 0;
    for (auto l : lengths) frames += l;

    // Fixed chunking keeps the reduction order independent of thread count.
    constexpr std::size_t kChunks = 4;
    std::vector<Model> chunk_grads(kChunks, model);
    Model total = model;
    Rng shuffle_rng = Rng::derive(sched.seed, 0x5eed);
    double best = -std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
        const double lr = learning_rate(sched.lr_init, sched.lr_decay, epoch);
        const auto batches = make_windows(lengths, sched.bptt_len, sched.batch_size, shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& batch = batches[b];
            std::vector<double> chunk_loss(kChunks, 0.0);
            auto run_chunk = [&](std::size_t c) {
                zero_params(chunk_grads[c]);
                const std::size_t lo = c * batch.size() / kChunks, hi = (c + 1) * batch.size() / kChunks;
                for (std::size_t w = lo; w < hi; ++w) {
                    const auto& win = batch[w];
                    Rng rng = Rng::derive(sched.seed, (epoch << 20) + b + 1, w);
                    chunk_loss[c] += obj.window(model, train[win.sequence], win.start, win.valid, rng, chunk_grads[c]);
                }
            };
            if (sched.threads > 1) {
                std::vector<std::jthread> pool;
                for (std::size_t c = 0; c < kChunks; ++c) pool.emplace_back(run_chunk, c);
            } else {
                for (std::size_t c = 0; c < kChunks; ++c) run_chunk(c);
            }
            zero_params(total);
            double batch_loss = 0.0;
            for (std::size_t c = 0; c < kChunks; ++c) {
                axpy_params(total, chunk_grads[c], 1.0 / static_cast<double>(batch.size()));
                batch_loss += chunk_loss[c];
            }
            if (!std::isfinite(batch_loss) || !std::isfinite(global_norm(total)))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
            epoch_loss += batch_loss;
            sgd_step(model, total, lr, sched.grad_clip);
        }
        EpochRecord rec{epoch, epoch_loss / static_cast<double>(frames), mean_dev_ccc(model, obj, dev, pp), lr};
        out.history.epochs.push_back(rec);
        if (sched.on_epoch) sched.on_epoch(rec);
        if (!out.history.best_epoch || rec.dev_ccc > best) {
            best = rec.dev_ccc;
            out.history.best_epoch = epoch;
            out.model = model;
        }
    }
    return out;
}

// --- objectives ----------------------------------------------------------------------

inline SeqView window_view(const Matrix& m, std::size_t start, std::size_t len) {
    return SeqView(m).slice(start, len);
}

inline Objective<LstmStack> unimodal_objective(Modality modality) {
    Objective<LstmStack> obj;
    obj.window = [modality](const LstmStack& s, const PreparedSequence& seq, std::size_t start, std::size_t len,
                            Rng& rng, LstmStack& grads) {
        const Matrix& x = modality == Modality::audio ? seq.audio : seq.visual;
        auto fwd = stack_forward(s, window_view(x, start, len), Mode::train, rng);
        std::vector<double> d(len);
        double loss = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
            d[t] = fwd.predictions[t] - seq.target[start + t];
            loss += 0.5 * d[t] * d[t];
        }
        stack_backward_acc(s, fwd.tape, d, nullptr, grads);
        return loss;
    };
    obj.predict = [modality](const LstmStack& s, const PreparedSequence& seq) {
        Rng unused(0);
        return stack_forward(s, modality == Modality::audio ? seq.audio : seq.visual, Mode::infer, unused).predictions;
    };
    return obj;
}

inline Objective<FusionModel> fusion_objective(double alpha, double beta) {
    check_loss_weights(alpha, beta);
    Objective<FusionModel> obj;
    obj.window = [alpha, beta](const FusionModel& m, const PreparedSequence& seq, std::size_t start, std::size_t len,
                               Rng& rng, FusionModel& grads) {
        auto fwd = fusion_forward(m, window_view(seq.audio, start, len), window_view(seq.visual, start, len),
                                  Mode::train, rng);
        const auto sub = [&](const std::vector<double>& v) { return std::span<const double>(v).subspan(start, len); };
        LossTerms terms{sub(seq.target), {}, sub(seq.g_a), sub(seq.g_v), alpha, beta};
        const double loss = fusion_loss(fwd, terms);
        fusion_backward_acc(m, fwd, terms, grads);
        return loss;
    };
    obj.predict = [](const FusionModel& m, const PreparedSequence& seq) {
        Rng unused(0);
        return fusion_forward(m, seq.audio, seq.visual, Mode::infer, unused).predictions;
    };
    return obj;
}

inline Schedule pretrain_schedule(const TrainConfig& cfg, EpochCallback cb = {}) {
    return {cfg.epochs, cfg.lr_init, cfg.lr_decay, cfg.batch_size, cfg.bptt_len,
            cfg.grad_clip, cfg.seed, cfg.threads, std::move(cb)};
}

inline Schedule finetune_schedule(const TrainConfig& cfg, EpochCallback cb = {}) {
    return {cfg.finetune_epochs, cfg.finetune_lr, cfg.lr_decay, cfg.batch_size, cfg.bptt_len,
            cfg.grad_clip,       cfg.seed,        cfg.threads,  std::move(cb)};
}

/// Network widths per modality.
struct ModelShape {
    std::vector<std::size_t> audio_hidden{100, 100};
    std::vector<std::size_t> visual_hidden{120, 120};
    std::vector<std::size_t> early_hidden{150, 150};
    bool gate_bias = true;
};

inline void check_corpus(const PreparedCorpus& c, const char* what) {
    for (const auto& s : c) {
        if (s.audio.rows() != s.length() || s.visual.rows() != s.length() || s.g_a.size() != s.length() ||
            s.g_v.size() != s.length())
            throw DimensionError(std::string(what) + " sequence " + s.id + " has inconsistent lengths");
        if (!c.empty() && (s.audio.cols() != c.front().audio.cols() || s.visual.cols() != c.front().visual.cols()))
            throw DimensionError(std::string(what) + " sequence " + s.id + " has inconsistent feature dimensions");
    }
}

inline FitResult<LstmStack> train_unimodal(const PreparedCorpus& train, const PreparedCorpus& dev, Modality modality,
                                           const TrainConfig& cfg, const ModelShape& shape = {},
                                           const PostProcess& pp = {}, EpochCallback cb = {}) {
    cfg.validate();
    if (train.empty()) throw TrainingError("train_unimodal: empty training data");
    check_corpus(train, "train");
    check_corpus(dev, "dev");
    const std::size_t in = modality == Modality::audio ? train.front().audio.cols() : train.front().visual.cols();
    Rng init = Rng::derive(cfg.seed, modality == Modality::audio ? 0xa0 : 0xb0);
    auto stack = LstmStack::create(in, modality == Modality::audio ? shape.audio_hidden : shape.visual_hidden, init,
                                   cfg.dropout_rate);
    return fit(std::move(stack), unimodal_objective(modality), train, dev, pretrain_schedule(cfg, std::move(cb)), pp);
}

/// Early fusion trains from scratch on the full schedule; the other variants
/// start from the given unimodal stacks and fine-tune everything jointly.
inline FitResult<FusionModel> train_fusion(FusionKind kind, const std::optional<LstmStack>& pre_audio,
                                           const std::optional<LstmStack>& pre_visual, const PreparedCorpus& train,
                                           const PreparedCorpus& dev, const TrainConfig& cfg,
                                           const ModelShape& shape = {}, const PostProcess& pp = {},
                                           EpochCallback cb = {}) {
    cfg.validate();
    if (train.empty()) throw TrainingError("train_fusion: empty training data");
    check_corpus(train, "train");
    check_corpus(dev, "dev");
    Rng init = Rng::derive(cfg.seed, 0xf0 + static_cast<std::uint64_t>(kind));
    const auto obj = fusion_objective(cfg.alpha, cfg.beta);
    if (kind == FusionKind::early) {
        FusionShape fs;
        fs.audio_dim = train.front().audio.cols();
        fs.visual_dim = train.front().visual.cols();
        fs.early_hidden = shape.early_hidden;
        fs.dropout_rate = cfg.dropout_rate;
        return fit(make_early_fusion(fs, init), obj, train, dev, pretrain_schedule(cfg, std::move(cb)), pp);
    }
    if (!pre_audio || !pre_visual)
        throw TrainingError(std::string("train_fusion: variant '") + std::string(to_string(kind)) +
                            "' needs pretrained audio and visual stacks");
    check_same(pre_audio->input_dim(), train.front().audio.cols(), "pretrained audio stack input");
    check_same(pre_visual->input_dim(), train.front().visual.cols(), "pretrained visual stack input");
    return fit(make_fusion(kind, *pre_audio, *pre_visual, init, shape.gate_bias), obj, train, dev,
               finetune_schedule(cfg, std::move(cb)), pp);
}

// --- gradient checking -------------------------------------------------------------

/// A short bimodal training example. Bare stacks read `audio` as input.
struct GradCheckSample {
    Matrix audio, visual;
    std::vector<double> targets, g_a, g_v;
    double alpha = 0.0, beta = 0.0;
    Mode mode = Mode::infer;  // train mode replays the same dropout masks on every probe
    std::uint64_t seed = 0;
};

struct BlockCheck {
    std::string name;
    std::size_t size = 0;
    double max_rel_error = 0.0;
    std::size_t argmax = 0;
    double analytic = 0.0, numeric = 0.0;
    double max_abs_error = 0.0;  // max |a - n| over the block
    double max_abs_grad = 0.0;   // max |a| over the block
};

struct GradCheckReport {
    std::vector<BlockCheck> blocks;
    double tol = 0.0;
    bool pass = true;

    /// Largest |a - n| anywhere, divided by max(1, largest |a| anywhere).
    /// Central-difference round-off is roughly 1e-16 * loss / eps in absolute
    /// terms, so this stays meaningful where the per-entry ratio cannot.
    double scaled_abs_error() const {
        double e = 0.0, g = 1.0;
        for (const auto& b : blocks) e = std::max(e, b.max_abs_error), g = std::max(g, b.max_abs_grad);
        return e / g;
    }

    const BlockCheck* worst() const {
        const BlockCheck* w = nullptr;
        for (const auto& b : blocks)
            if (!w || b.max_rel_error > w->max_rel_error) w = &b;
        return w;
    }
};

struct GradCheckOptions {
    double eps = 1e-5;
    double tol = 1e-4;
    /// Fault injection: doubles the largest-magnitude analytic entry of the
    /// named block before comparison.
    std::optional<std::string> corrupt_block;
};

inline double sample_loss(const LstmStack& s, const GradCheckSample& x, LstmStack* grads) {
    Rng rng(x.seed);
    auto fwd = stack_forward(s, x.audio, x.mode, rng);
    std::vector<double> d(fwd.predictions.size());
    double loss = 0.0;
    for (std::size_t t = 0; t < d.size(); ++t) {
        d[t] = fwd.predictions[t] - x.targets[t];
        loss += 0.5 * d[t] * d[t];
    }
    if (grads) stack_backward_acc(s, fwd.tape, d, nullptr, *grads);
    return loss;
}

inline double sample_loss(const FusionModel& m, const GradCheckSample& x, FusionModel* grads) {
    Rng rng(x.seed);
    auto fwd = fusion_forward(m, x.audio, x.visual, x.mode, rng);
    LossTerms terms{x.targets, {}, x.g_a, x.g_v, x.alpha, x.beta};
    const double loss = fusion_loss(fwd, terms);
    if (grads) fusion_backward_acc(m, fwd, terms, *grads);
    return loss;
}

/// Central differences against the analytic gradient. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8).
template <class Model>
GradCheckReport grad_check(Model model, const GradCheckSample& sample, const GradCheckOptions& opt = {}) {
    GradCheckReport rep;
    rep.tol = opt.tol;
    Model grads = zeros_like(model);
    sample_loss(model, sample, &grads);
    auto pb = param_blocks(model);
    auto gb = param_blocks(grads);
    if (opt.corrupt_block) {
        bool found = false;
        for (auto& [name, g] : gb) {
            if (name != *opt.corrupt_block || g.empty()) continue;
            auto it = std::max_element(g.begin(), g.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
            *it = *it == 0.0 ? 1.0 : 2.0 * *it;
            found = true;
        }
        if (!found) throw std::invalid_argument("grad_check: no parameter block named " + *opt.corrupt_block);
    }
    for (std::size_t b = 0; b < pb.size(); ++b) {
        BlockCheck bc{pb[b].first, pb[b].second.size()};
        auto p = pb[b].second;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double orig = p[k];
            p[k] = orig + opt.eps;
            const double lp = sample_loss(model, sample, nullptr);
            p[k] = orig - opt.eps;
            const double lm = sample_loss(model, sample, nullptr);
            p[k] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw std::runtime_error("grad_check: non-finite loss probing " + bc.name + "[" + std::to_string(k) + "]");
            const double num = (lp - lm) / (2.0 * opt.eps);
            const double ana = gb[b].second[k];
            const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
            bc.max_abs_error = std::max(bc.max_abs_error, std::abs(ana - num));
            bc.max_abs_grad = std::max(bc.max_abs_grad, std::abs(ana));
            if (err > bc.max_rel_error || k == 0) {
                bc.max_rel_error = err;
                bc.argmax = k;
                bc.analytic = ana;
                bc.numeric = num;
            }
        }
        rep.pass = rep.pass && bc.max_rel_error < opt.tol;
        rep.blocks.push_back(std::move(bc));
    }
    return rep;
}

/// Random sample of the given shape with labels in [-1,1] and a few
/// zero-filled visual frames.
inline GradCheckSample random_sample(std::size_t da, std::size_t dv, std::size_t T, Rng& rng, double alpha = 0.0,
                                     double beta = 0.0) {
    GradCheckSample s;
    s.audio = Matrix(T, da);
    s.visual = Matrix(T, dv);
    for (double& x : s.audio.data()) x = rng.uniform(-1.0, 1.0);
    for (double& x : s.visual.data()) x = rng.uniform(-1.0, 1.0);
    for (std::size_t t = 0; t < T; ++t) {
        s.targets.push_back(rng.uniform(-1.0, 1.0));
        s.g_a.push_back(rng.uniform());
        const bool face = rng.uniform() >= 0.25;
        s.g_v.push_back(face ? 1.0 : 0.0);
        if (!face) std::fill(s.visual.row(t).begin(), s.visual.row(t).end(), 0.0);
    }
    s.alpha = alpha;
    s.beta = beta;
    return s;
}

}  // namespace cafusion
