#pragma once

// Bimodal fusion strategies over unimodal LSTM stacks: early (feature
// concatenation), model-level (hidden concatenation), late (prediction
// mixing) and conditional attention, where a per-frame gate
//   lambda_t = sigmoid(w_g . [h_a | h_v | x_a | x_v] + b_g)
// blends the two unimodal predictions convexly.

#include <cafusion/lstm.hpp>

#include <string_view>
#include <variant>

namespace cafusion {

enum class FusionKind : std::uint8_t { early = 1, model_level = 2, late = 3, conditional_attention = 4 };

inline std::string_view to_string(FusionKind k) {
    switch (k) {
        case FusionKind::early: return "early";
        case FusionKind::model_level: return "model";
        case FusionKind::late: return "late";
        case FusionKind::conditional_attention: return "ca";
    }
    return "?";
}

inline FusionKind parse_fusion_kind(std::string_view s) {
    if (s == "early") return FusionKind::early;
    if (s == "model") return FusionKind::model_level;
    if (s == "late") return FusionKind::late;
    if (s == "ca") return FusionKind::conditional_attention;
    throw std::invalid_argument("unknown fusion variant '" + std::string(s) +
                                "' (expected early, model, late or ca)");
}

struct GateParams {
    Vector w_g;  // over [h_a | h_v | x_a | x_v]
    double b_g = 0.0;
    bool use_bias = true;  // false: strictly bias-free gate
};

struct EarlyFusion {
    LstmStack stack;  // over [x_a | x_v]
    std::size_t audio_dim = 0;
};

struct ModelLevelFusion {
    LstmStack audio, visual;  // heads unused
    Vector joint_out;         // over [h_a | h_v]
    double joint_b = 0.0;
};

struct LateFusion {
    LstmStack audio, visual;
    Vector mix_w{1.0, 0.0};
    double mix_b = 0.0;
};

struct ConditionalAttention {
    LstmStack audio, visual;
    GateParams gate;
};

using FusionModel = std::variant<EarlyFusion, ModelLevelFusion, LateFusion, ConditionalAttention>;

inline FusionKind kind_of(const FusionModel& m) {
    return static_cast<FusionKind>(m.index() + 1);
}

// --- parameter visitation ---------------------------------------------------

namespace detail {
template <class T, class U>
using like_const = std::conditional_t<std::is_const_v<T>, const U, U>;
}

template <class M, class F>
    requires std::same_as<std::remove_const_t<M>, EarlyFusion>
void visit_params(M& m, F&& f) {
    visit_params(m.stack, f, "early.");
}

template <class M, class F>
    requires std::same_as<std::remove_const_t<M>, ModelLevelFusion>
void visit_params(M& m, F&& f) {
    visit_params(m.audio, f, "audio.");
    visit_params(m.visual, f, "visual.");
    f(std::string("joint_out"), m.joint_out.data());
    f(std::string("joint_b"), std::span<detail::like_const<M, double>>(&m.joint_b, 1));
}

template <class M, class F>
    requires std::same_as<std::remove_const_t<M>, LateFusion>
void visit_params(M& m, F&& f) {
    visit_params(m.audio, f, "audio.");
    visit_params(m.visual, f, "visual.");
    f(std::string("mix_w"), m.mix_w.data());
    f(std::string("mix_b"), std::span<detail::like_const<M, double>>(&m.mix_b, 1));
}

template <class M, class F>
    requires std::same_as<std::remove_const_t<M>, ConditionalAttention>
void visit_params(M& m, F&& f) {
    visit_params(m.audio, f, "audio.");
    visit_params(m.visual, f, "visual.");
    f(std::string("gate.w_g"), m.gate.w_g.data());
    if (m.gate.use_bias) f(std::string("gate.b_g"), std::span<detail::like_const<M, double>>(&m.gate.b_g, 1));
}

template <class M, class F>
    requires std::same_as<std::remove_const_t<M>, FusionModel>
void visit_params(M& m, F&& f) {
    std::visit([&](auto& v) { visit_params(v, f); }, m);
}

/// Gradient accumulator with the same shape as the model.
inline LstmStack zeros_like(const LstmStack& s) { return s.zeros_like(); }

inline FusionModel zeros_like(const FusionModel& m) {
    return std::visit(
        [](const auto& v) -> FusionModel {
            using T = std::decay_t<decltype(v)>;
            T z = v;
            visit_params(z, [](const std::string&, std::span<double> b) { std::fill(b.begin(), b.end(), 0.0); });
            return z;
        },
        m);
}

// --- construction -----------------------------------------------------------

struct FusionShape {
    std::size_t audio_dim = 76;
    std::size_t visual_dim = 400;
    std::vector<std::size_t> audio_hidden{100, 100};
    std::vector<std::size_t> visual_hidden{120, 120};
    std::vector<std::size_t> early_hidden{150, 150};
    double dropout_rate = 0.2;
    bool gate_bias = true;
};

/// zero: lambda starts at exactly 0.5 everywhere. xavier: random w_g.
enum class GateInit { zero, xavier };

inline GateParams make_gate(std::size_t ha, std::size_t hv, std::size_t da, std::size_t dv, Rng& rng,
                            bool use_bias = true, GateInit init = GateInit::zero) {
    GateParams g;
    g.w_g = Vector(ha + hv + da + dv);
    if (init == GateInit::xavier) {
        Matrix w = xavier_init(1, g.w_g.size(), rng);
        std::copy(w.data().begin(), w.data().end(), g.w_g.data().begin());
    }
    g.use_bias = use_bias;
    return g;
}

/// Fresh model of the requested kind around the given unimodal stacks
/// (pretrained or random). Every variant starts from the equal-weight blend
/// of the two heads: late mixes 0.5/0.5, model-level halves the two heads
/// into joint_out, and the gate outputs 0.5 unless xavier init is asked for.
inline FusionModel make_fusion(FusionKind kind, const LstmStack& audio, const LstmStack& visual, Rng& rng,
                               bool gate_bias = true, GateInit gate_init = GateInit::zero) {
    audio.validate();
    visual.validate();
    switch (kind) {
        case FusionKind::model_level: {
            ModelLevelFusion m{audio, visual, Vector(audio.hidden_dim() + visual.hidden_dim()),
                               0.5 * (audio.out_b + visual.out_b)};
            auto j = m.joint_out.data();
            for (std::size_t k = 0; k < audio.hidden_dim(); ++k) j[k] = 0.5 * audio.out_w[k];
            for (std::size_t k = 0; k < visual.hidden_dim(); ++k) j[audio.hidden_dim() + k] = 0.5 * visual.out_w[k];
            return m;
        }
        case FusionKind::late: return LateFusion{audio, visual, Vector{0.5, 0.5}, 0.0};
        case FusionKind::conditional_attention:
            return ConditionalAttention{
                audio, visual,
                make_gate(audio.hidden_dim(), visual.hidden_dim(), audio.input_dim(), visual.input_dim(), rng,
                          gate_bias, gate_init)};
        case FusionKind::early: break;
    }
    throw std::invalid_argument("make_fusion: early fusion is built with make_early_fusion");
}

inline FusionModel make_early_fusion(const FusionShape& shape, Rng& rng) {
    EarlyFusion e{LstmStack::create(shape.audio_dim + shape.visual_dim, shape.early_hidden, rng, shape.dropout_rate),
                  shape.audio_dim};
    return e;
}

inline FusionModel make_fusion(FusionKind kind, const FusionShape& shape, Rng& rng) {
    if (kind == FusionKind::early) return make_early_fusion(shape, rng);
    auto a = LstmStack::create(shape.audio_dim, shape.audio_hidden, rng, shape.dropout_rate);
    auto v = LstmStack::create(shape.visual_dim, shape.visual_hidden, rng, shape.dropout_rate);
    return make_fusion(kind, a, v, rng, shape.gate_bias);
}

// --- gate and losses ---------------------------------------------------------

inline double gate_preactivation(const GateParams& gate, std::span<const double> h_a, std::span<const double> h_v,
                                 std::span<const double> x_a, std::span<const double> x_v) {
    check_same(gate.w_g.size(), h_a.size() + h_v.size() + x_a.size() + x_v.size(), "attention_gate");
    auto w = gate.w_g.data();
    std::size_t off = 0;
    double z = gate.use_bias ? gate.b_g : 0.0;
    for (auto part : {h_a, h_v, x_a, x_v}) {
        z += dot(w.subspan(off, part.size()), part);
        off += part.size();
    }
    return z;
}

inline double attention_gate(const GateParams& gate, std::span<const double> h_a, std::span<const double> h_v,
                             std::span<const double> x_a, std::span<const double> x_v) {
    return sigmoid(gate_preactivation(gate, h_a, h_v, x_a, x_v));
}

inline void check_loss_weights(double alpha, double beta) {
    if (!(alpha >= 0.0)) throw std::invalid_argument("gate loss: alpha must be >= 0");
    if (!(beta >= 0.0)) throw std::invalid_argument("gate loss: beta must be >= 0");
}

/// 1/2 (alpha (g_a - lambda)^2 + beta (g_v - (1 - lambda))^2)
inline double gate_loss(double lambda, double g_a, double g_v, double alpha, double beta) {
    check_loss_weights(alpha, beta);
    const double ra = g_a - lambda;
    const double rv = g_v - (1.0 - lambda);
    return 0.5 * (alpha * ra * ra + beta * rv * rv);
}

/// d gate_loss / d lambda = beta g_v - alpha g_a - beta + (alpha + beta) lambda
inline double gate_loss_grad(double lambda, double g_a, double g_v, double alpha, double beta) {
    check_loss_weights(alpha, beta);
    return beta * g_v - alpha * g_a - beta + (alpha + beta) * lambda;
}

struct ReliabilitySignals {
    std::vector<double> g_a;  // scaled acoustic energy in [0,1]
    std::vector<double> g_v;  // face detected, 0 or 1
};

/// Sum over t of 1/2 (yhat_t - y_t)^2 + gate_loss(lambda_t).
inline double total_loss(std::span<const double> yhat, std::span<const double> y, std::span<const double> lambdas,
                         std::span<const double> g_a, std::span<const double> g_v, double alpha, double beta) {
    check_same(yhat.size(), y.size(), "total_loss labels");
    check_same(yhat.size(), lambdas.size(), "total_loss lambdas");
    check_same(yhat.size(), g_a.size(), "total_loss g_a");
    check_same(yhat.size(), g_v.size(), "total_loss g_v");
    check_loss_weights(alpha, beta);
    double l = 0.0;
    for (std::size_t t = 0; t < yhat.size(); ++t) {
        const double e = yhat[t] - y[t];
        l += 0.5 * e * e + gate_loss(lambdas[t], g_a[t], g_v[t], alpha, beta);
    }
    return l;
}

inline double total_loss(std::span<const double> yhat, std::span<const double> y, std::span<const double> lambdas,
                         const ReliabilitySignals& s, double alpha, double beta) {
    return total_loss(yhat, y, lambdas, s.g_a, s.g_v, alpha, beta);
}

// --- forward ------------------------------------------------------------------

struct FusionForward {
    std::vector<double> predictions;
    std::vector<double> lambdas;         // conditional attention only
    std::optional<StackForward> audio;   // all but early
    std::optional<StackForward> visual;  // all but early
    std::optional<StackForward> joint;   // early only
    SeqView audio_in, visual_in;         // caller-owned inputs seen by the gate
};

inline void check_pair(SeqView a, SeqView v) {
    if (a.length != v.length)
        throw DimensionError("fusion: audio length " + std::to_string(a.length) + " != visual length " +
                             std::to_string(v.length));
    if (a.length == 0) throw std::invalid_argument("fusion: empty sequence");
}

inline FusionForward early_forward(const EarlyFusion& m, SeqView a, SeqView v, Mode mode, Rng& rng) {
    check_pair(a, v);
    check_same(a.dim, m.audio_dim, "early fusion audio dim");
    Matrix joint(a.length, a.dim + v.dim);
    for (std::size_t t = 0; t < a.length; ++t) {
        auto dst = joint.row(t);
        std::copy(a[t].begin(), a[t].end(), dst.begin());
        std::copy(v[t].begin(), v[t].end(), dst.begin() + static_cast<std::ptrdiff_t>(a.dim));
    }
    FusionForward out;
    out.joint = stack_forward(m.stack, joint, mode, rng);
    out.predictions = out.joint->predictions;
    return out;
}

inline FusionForward model_level_forward(const ModelLevelFusion& m, SeqView a, SeqView v, Mode mode, Rng& rng) {
    check_pair(a, v);
    check_same(m.joint_out.size(), m.audio.hidden_dim() + m.visual.hidden_dim(), "model-level joint_out");
    FusionForward out;
    out.audio = stack_forward(m.audio, a, mode, rng);
    out.visual = stack_forward(m.visual, v, mode, rng);
    const std::size_t ha = m.audio.hidden_dim();
    auto w = m.joint_out.data();
    out.predictions.resize(a.length);
    for (std::size_t t = 0; t < a.length; ++t)
        out.predictions[t] = dot(w.first(ha), out.audio->hidden.row(t)) +
                             dot(w.subspan(ha), out.visual->hidden.row(t)) + m.joint_b;
    return out;
}

inline FusionForward late_forward(const LateFusion& m, SeqView a, SeqView v, Mode mode, Rng& rng) {
    check_pair(a, v);
    check_same(m.mix_w.size(), 2, "late fusion mix_w");
    FusionForward out;
    out.audio = stack_forward(m.audio, a, mode, rng);
    out.visual = stack_forward(m.visual, v, mode, rng);
    out.predictions.resize(a.length);
    for (std::size_t t = 0; t < a.length; ++t)
        out.predictions[t] = m.mix_w[0] * out.audio->predictions[t] + m.mix_w[1] * out.visual->predictions[t] + m.mix_b;
    return out;
}

inline FusionForward ca_forward(const ConditionalAttention& m, SeqView a, SeqView v, Mode mode, Rng& rng) {
    check_pair(a, v);
    FusionForward out;
    // The unimodal stacks never see lambda, so each can run over the whole
    // sequence before the gate is evaluated frame by frame.
    out.audio = stack_forward(m.audio, a, mode, rng);
    out.visual = stack_forward(m.visual, v, mode, rng);
    out.audio_in = a;
    out.visual_in = v;
    out.predictions.resize(a.length);
    out.lambdas.resize(a.length);
    for (std::size_t t = 0; t < a.length; ++t) {
        const double lam = attention_gate(m.gate, out.audio->hidden.row(t), out.visual->hidden.row(t), a[t], v[t]);
        out.lambdas[t] = lam;
        out.predictions[t] = lam * out.audio->predictions[t] + (1.0 - lam) * out.visual->predictions[t];
    }
    return out;
}

inline FusionForward fusion_forward(const FusionModel& model, SeqView a, SeqView v, Mode mode, Rng& rng) {
    return std::visit(
        [&](const auto& m) -> FusionForward {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, EarlyFusion>) return early_forward(m, a, v, mode, rng);
            else if constexpr (std::is_same_v<T, ModelLevelFusion>) return model_level_forward(m, a, v, mode, rng);
            else if constexpr (std::is_same_v<T, LateFusion>) return late_forward(m, a, v, mode, rng);
            else return ca_forward(m, a, v, mode, rng);
        },
        model);
}

// --- loss and backward -----------------------------------------------------------

/// Targets and per-frame weights of one training sequence. An empty mask
/// means every frame counts. Gate terms apply to conditional attention only.
struct LossTerms {
    std::span<const double> targets;
    std::span<const double> mask;
    std::span<const double> g_a;
    std::span<const double> g_v;
    double alpha = 0.0;
    double beta = 0.0;

    double weight(std::size_t t) const { return mask.empty() ? 1.0 : mask[t]; }
};

inline void check_terms(const FusionForward& fwd, const LossTerms& terms, bool gated) {
    const std::size_t T = fwd.predictions.size();
    check_same(terms.targets.size(), T, "loss targets");
    if (!terms.mask.empty()) check_same(terms.mask.size(), T, "loss mask");
    if (gated && (terms.alpha > 0.0 || terms.beta > 0.0)) {
        check_same(terms.g_a.size(), T, "loss g_a");
        check_same(terms.g_v.size(), T, "loss g_v");
    }
    check_loss_weights(terms.alpha, terms.beta);
}

inline double fusion_loss(const FusionForward& fwd, const LossTerms& terms) {
    const bool gated = !fwd.lambdas.empty();
    check_terms(fwd, terms, gated);
    const bool supervised = gated && (terms.alpha > 0.0 || terms.beta > 0.0);
    double l = 0.0;
    for (std::size_t t = 0; t < fwd.predictions.size(); ++t) {
        const double w = terms.weight(t);
        if (w == 0.0) continue;
        const double e = fwd.predictions[t] - terms.targets[t];
        double lt = 0.5 * e * e;
        if (supervised) lt += gate_loss(fwd.lambdas[t], terms.g_a[t], terms.g_v[t], terms.alpha, terms.beta);
        l += w * lt;
    }
    return l;
}

/// Gradient of fusion_loss accumulated into `grads` (same variant as model).
inline void ca_backward_acc(const ConditionalAttention& m, const FusionForward& fwd, const LossTerms& terms,
                            ConditionalAttention& grads) {
    check_terms(fwd, terms, true);
    if (!fwd.audio || !fwd.visual || fwd.lambdas.size() != fwd.predictions.size())
        throw std::invalid_argument("ca_backward: forward record is not from ca_forward");
    const std::size_t T = fwd.predictions.size();
    const std::size_t ha = m.audio.hidden_dim(), hv = m.visual.hidden_dim();
    const bool supervised = terms.alpha > 0.0 || terms.beta > 0.0;
    const auto& fa = fwd.audio->predictions;
    const auto& fv = fwd.visual->predictions;
    // Gradients w.r.t. the gate's x inputs are dropped: inputs are data.
    const SeqView xa = fwd.audio_in, xv = fwd.visual_in;
    if (xa.length != T || xv.length != T) throw std::invalid_argument("ca_backward: missing gate inputs");

    std::vector<double> d_fa(T), d_fv(T);
    Matrix extra_a(T, ha), extra_v(T, hv);
    auto w = m.gate.w_g.data();
    auto gw = grads.gate.w_g.data();
    for (std::size_t t = 0; t < T; ++t) {
        const double wt = terms.weight(t);
        if (wt == 0.0) continue;
        const double lam = fwd.lambdas[t];
        const double e = fwd.predictions[t] - terms.targets[t];
        d_fa[t] = wt * e * lam;
        d_fv[t] = wt * e * (1.0 - lam);
        double d_lam = e * (fa[t] - fv[t]);
        if (supervised) d_lam += gate_loss_grad(lam, terms.g_a[t], terms.g_v[t], terms.alpha, terms.beta);
        const double d_pre = wt * d_lam * lam * (1.0 - lam);
        if (d_pre == 0.0) continue;
        auto h_a = fwd.audio->hidden.row(t);
        auto h_v = fwd.visual->hidden.row(t);
        auto x_a = xa[t];
        auto x_v = xv[t];
        std::size_t off = 0;
        for (auto part : {std::span<const double>(h_a), std::span<const double>(h_v), std::span<const double>(x_a),
                          std::span<const double>(x_v)}) {
            for (std::size_t k = 0; k < part.size(); ++k) gw[off + k] += d_pre * part[k];
            off += part.size();
        }
        if (m.gate.use_bias) grads.gate.b_g += d_pre;
        auto ea = extra_a.row(t);
        auto ev = extra_v.row(t);
        for (std::size_t k = 0; k < ha; ++k) ea[k] = d_pre * w[k];
        for (std::size_t k = 0; k < hv; ++k) ev[k] = d_pre * w[ha + k];
    }
    stack_backward_acc(m.audio, fwd.audio->tape, d_fa, &extra_a, grads.audio);
    stack_backward_acc(m.visual, fwd.visual->tape, d_fv, &extra_v, grads.visual);
}

inline void early_backward_acc(const EarlyFusion& m, const FusionForward& fwd, const LossTerms& terms,
                               EarlyFusion& grads) {
    check_terms(fwd, terms, false);
    if (!fwd.joint) throw std::invalid_argument("early_backward: forward record is not from early_forward");
    std::vector<double> d(fwd.predictions.size());
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = terms.weight(t) * (fwd.predictions[t] - terms.targets[t]);
    stack_backward_acc(m.stack, fwd.joint->tape, d, nullptr, grads.stack);
}

inline void model_level_backward_acc(const ModelLevelFusion& m, const FusionForward& fwd, const LossTerms& terms,
                                     ModelLevelFusion& grads) {
    check_terms(fwd, terms, false);
    if (!fwd.audio || !fwd.visual) throw std::invalid_argument("model_level_backward: bad forward record");
    const std::size_t T = fwd.predictions.size();
    const std::size_t ha = m.audio.hidden_dim(), hv = m.visual.hidden_dim();
    Matrix extra_a(T, ha), extra_v(T, hv);
    std::vector<double> zero(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double d = terms.weight(t) * (fwd.predictions[t] - terms.targets[t]);
        if (d == 0.0) continue;
        auto h_a = fwd.audio->hidden.row(t);
        auto h_v = fwd.visual->hidden.row(t);
        for (std::size_t k = 0; k < ha; ++k) {
            grads.joint_out[k] += d * h_a[k];
            extra_a(t, k) = d * m.joint_out[k];
        }
        for (std::size_t k = 0; k < hv; ++k) {
            grads.joint_out[ha + k] += d * h_v[k];
            extra_v(t, k) = d * m.joint_out[ha + k];
        }
        grads.joint_b += d;
    }
    stack_backward_acc(m.audio, fwd.audio->tape, zero, &extra_a, grads.audio);
    stack_backward_acc(m.visual, fwd.visual->tape, zero, &extra_v, grads.visual);
}

inline void late_backward_acc(const LateFusion& m, const FusionForward& fwd, const LossTerms& terms,
                              LateFusion& grads) {
    check_terms(fwd, terms, false);
    if (!fwd.audio || !fwd.visual) throw std::invalid_argument("late_backward: bad forward record");
    const std::size_t T = fwd.predictions.size();
    std::vector<double> d_fa(T), d_fv(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double d = terms.weight(t) * (fwd.predictions[t] - terms.targets[t]);
        d_fa[t] = d * m.mix_w[0];
        d_fv[t] = d * m.mix_w[1];
        grads.mix_w[0] += d * fwd.audio->predictions[t];
        grads.mix_w[1] += d * fwd.visual->predictions[t];
        grads.mix_b += d;
    }
    stack_backward_acc(m.audio, fwd.audio->tape, d_fa, nullptr, grads.audio);
    stack_backward_acc(m.visual, fwd.visual->tape, d_fv, nullptr, grads.visual);
}

inline void fusion_backward_acc(const FusionModel& model, const FusionForward& fwd, const LossTerms& terms,
                                FusionModel& grads) {
    if (model.index() != grads.index()) throw std::invalid_argument("fusion_backward: gradient variant mismatch");
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            auto& g = std::get<T>(grads);
            if constexpr (std::is_same_v<T, EarlyFusion>) early_backward_acc(m, fwd, terms, g);
            else if constexpr (std::is_same_v<T, ModelLevelFusion>) model_level_backward_acc(m, fwd, terms, g);
            else if constexpr (std::is_same_v<T, LateFusion>) late_backward_acc(m, fwd, terms, g);
            else ca_backward_acc(m, fwd, terms, g);
        },
        model);
}

inline FusionModel fusion_backward(const FusionModel& model, const FusionForward& fwd, const LossTerms& terms) {
    FusionModel grads = zeros_like(model);
    fusion_backward_acc(model, fwd, terms, grads);
    return grads;
}

inline ConditionalAttention ca_backward(const ConditionalAttention& m, const FusionForward& fwd,
                                        const LossTerms& terms) {
    FusionModel g = zeros_like(FusionModel{m});
    ca_backward_acc(m, fwd, terms, std::get<ConditionalAttention>(g));
    return std::get<ConditionalAttention>(std::move(g));
}

}  // namespace cafusion
