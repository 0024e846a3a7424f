#pragma once

// Peephole LSTM layers, stacks with a scalar linear head, and the exact
// backward pass through time.
//
// Cell (peepholes are diagonal and read the previous cell state):
//   i = sigma(Wxi x + Whi h' + wci . c' + bi)
//   f = sigma(Wxf x + Whf h' + wcf . c' + bf)
//   c = f . c' + i . tanh(Wxc x + Whc h' + bc)
//   o = sigma(Wxo x + Who h' + wco . c' + bo)
//   h = o . tanh(c)

#include <cafusion/numeric.hpp>

#include <concepts>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

namespace cafusion {

enum class Mode { train, infer };

struct LstmLayerParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Matrix wx_i, wx_f, wx_c, wx_o;  // hidden x input
    Matrix wh_i, wh_f, wh_c, wh_o;  // hidden x hidden
    Vector peep_i, peep_f, peep_o;  // diagonal peepholes
    Vector b_i, b_f, b_c, b_o;

    static LstmLayerParams zeros(std::size_t input_dim, std::size_t hidden_dim) {
        LstmLayerParams p;
        p.input_dim = input_dim;
        p.hidden_dim = hidden_dim;
        for (Matrix* m : {&p.wx_i, &p.wx_f, &p.wx_c, &p.wx_o}) *m = Matrix(hidden_dim, input_dim);
        for (Matrix* m : {&p.wh_i, &p.wh_f, &p.wh_c, &p.wh_o}) *m = Matrix(hidden_dim, hidden_dim);
        for (Vector* v : {&p.peep_i, &p.peep_f, &p.peep_o, &p.b_i, &p.b_f, &p.b_c, &p.b_o})
            *v = Vector(hidden_dim);
        return p;
    }

    /// Xavier-uniform weights and peepholes, zero biases.
    static LstmLayerParams random(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
        LstmLayerParams p = zeros(input_dim, hidden_dim);
        for (Matrix* m : {&p.wx_i, &p.wx_f, &p.wx_c, &p.wx_o}) *m = xavier_init(hidden_dim, input_dim, rng);
        for (Matrix* m : {&p.wh_i, &p.wh_f, &p.wh_c, &p.wh_o}) *m = xavier_init(hidden_dim, hidden_dim, rng);
        for (Vector* v : {&p.peep_i, &p.peep_f, &p.peep_o}) {
            Matrix d = xavier_init(hidden_dim, 1, rng);
            *v = Vector(std::vector<double>(d.data().begin(), d.data().end()));
        }
        return p;
    }
};

/// Calls f(name, span) for every parameter block, in checkpoint order.
template <class Layer, class F>
    requires std::same_as<std::remove_const_t<Layer>, LstmLayerParams>
void visit_params(Layer& p, F&& f, const std::string& prefix = "") {
    f(prefix + "wx_i", p.wx_i.data());
    f(prefix + "wx_f", p.wx_f.data());
    f(prefix + "wx_c", p.wx_c.data());
    f(prefix + "wx_o", p.wx_o.data());
    f(prefix + "wh_i", p.wh_i.data());
    f(prefix + "wh_f", p.wh_f.data());
    f(prefix + "wh_c", p.wh_c.data());
    f(prefix + "wh_o", p.wh_o.data());
    f(prefix + "peep_i", p.peep_i.data());
    f(prefix + "peep_f", p.peep_f.data());
    f(prefix + "peep_o", p.peep_o.data());
    f(prefix + "b_i", p.b_i.data());
    f(prefix + "b_f", p.b_f.data());
    f(prefix + "b_c", p.b_c.data());
    f(prefix + "b_o", p.b_o.data());
}

struct LayerState {
    Vector h;
    Vector c;
};
using LstmState = std::vector<LayerState>;

/// Intermediates of one lstm_step, enough to backpropagate it.
struct StepRecord {
    Vector i, f, o, g, c, tanh_c, h;
};

/// One timestep of one layer.
inline StepRecord lstm_step(const LstmLayerParams& p, const LayerState& prev,
                            std::span<const double> x) {
    check_same(x.size(), p.input_dim, "lstm_step input");
    check_same(prev.h.size(), p.hidden_dim, "lstm_step h");
    check_same(prev.c.size(), p.hidden_dim, "lstm_step c");
    const std::size_t H = p.hidden_dim;
    StepRecord r{Vector(H), Vector(H), Vector(H), Vector(H), Vector(H), Vector(H), Vector(H)};
    auto pre = [&](const Matrix& wx, const Matrix& wh, const Vector& b, Vector& out) {
        for (std::size_t k = 0; k < H; ++k) out[k] = b[k];
        matvec_acc(wx, x, out.data());
        matvec_acc(wh, prev.h.data(), out.data());
    };
    pre(p.wx_i, p.wh_i, p.b_i, r.i);
    pre(p.wx_f, p.wh_f, p.b_f, r.f);
    pre(p.wx_c, p.wh_c, p.b_c, r.g);
    pre(p.wx_o, p.wh_o, p.b_o, r.o);
    for (std::size_t k = 0; k < H; ++k) {
        const double cp = prev.c[k];
        r.i[k] = sigmoid(r.i[k] + p.peep_i[k] * cp);
        r.f[k] = sigmoid(r.f[k] + p.peep_f[k] * cp);
        r.o[k] = sigmoid(r.o[k] + p.peep_o[k] * cp);
        r.g[k] = tanh_act(r.g[k]);
        r.c[k] = r.f[k] * cp + r.i[k] * r.g[k];
        r.tanh_c[k] = tanh_act(r.c[k]);
        r.h[k] = r.o[k] * r.tanh_c[k];
    }
    return r;
}

struct LstmStack {
    std::vector<LstmLayerParams> layers;
    Vector out_w;
    double out_b = 0.0;
    double dropout_rate = 0.2;   // between stacked layers
    double input_dropout = 0.0;  // on the first layer's input

    static LstmStack create(std::size_t input_dim, const std::vector<std::size_t>& hidden, Rng& rng,
                            double dropout_rate = 0.2) {
        if (hidden.empty()) throw std::invalid_argument("LstmStack: at least one layer required");
        LstmStack s;
        std::size_t in = input_dim;
        for (std::size_t h : hidden) {
            s.layers.push_back(LstmLayerParams::random(in, h, rng));
            in = h;
        }
        Matrix w = xavier_init(1, in, rng);
        s.out_w = Vector(std::vector<double>(w.data().begin(), w.data().end()));
        s.dropout_rate = dropout_rate;
        return s;
    }

    /// Same shape, every parameter zero. Also the gradient accumulator type.
    LstmStack zeros_like() const {
        LstmStack z;
        for (const auto& l : layers) z.layers.push_back(LstmLayerParams::zeros(l.input_dim, l.hidden_dim));
        z.out_w = Vector(out_w.size());
        z.dropout_rate = dropout_rate;
        z.input_dropout = input_dropout;
        return z;
    }

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().input_dim; }
    std::size_t hidden_dim() const { return layers.empty() ? 0 : layers.back().hidden_dim; }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("LstmStack: no layers");
        for (std::size_t l = 1; l < layers.size(); ++l)
            if (layers[l].input_dim != layers[l - 1].hidden_dim)
                throw DimensionError("LstmStack: layer " + std::to_string(l) + " input_dim " +
                                     std::to_string(layers[l].input_dim) + " != previous hidden_dim " +
                                     std::to_string(layers[l - 1].hidden_dim));
        check_same(out_w.size(), hidden_dim(), "LstmStack head");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0) || !(input_dropout >= 0.0 && input_dropout < 1.0))
            throw std::invalid_argument("LstmStack: dropout rates must lie in [0,1)");
    }
};

template <class Stack, class F>
    requires std::same_as<std::remove_const_t<Stack>, LstmStack>
void visit_params(Stack& s, F&& f, const std::string& prefix = "") {
    for (std::size_t l = 0; l < s.layers.size(); ++l)
        visit_params(s.layers[l], f, prefix + "layer" + std::to_string(l) + ".");
    f(prefix + "out_w", s.out_w.data());
    using Elem = std::conditional_t<std::is_const_v<Stack>, const double, double>;
    f(prefix + "out_b", std::span<Elem>(&s.out_b, 1));
}

/// Read-only view of a T x D feature sequence (row t is frame t).
struct SeqView {
    const double* ptr = nullptr;
    std::size_t length = 0;
    std::size_t dim = 0;

    SeqView() = default;
    SeqView(const double* p, std::size_t t, std::size_t d) : ptr(p), length(t), dim(d) {}
    SeqView(const Matrix& m) : ptr(m.data().data()), length(m.rows()), dim(m.cols()) {}  // NOLINT

    std::span<const double> operator[](std::size_t t) const { return {ptr + t * dim, dim}; }
    SeqView slice(std::size_t start, std::size_t len) const { return {ptr + start * dim, len, dim}; }
};

inline Matrix to_matrix(const std::vector<Vector>& frames) {
    if (frames.empty()) return {};
    Matrix m(frames.size(), frames.front().size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        check_same(frames[t].size(), m.cols(), "sequence frame");
        std::copy(frames[t].begin(), frames[t].end(), m.row(t).begin());
    }
    return m;
}

/// Per-layer flat storage of a forward pass; rows are timesteps.
struct LayerTape {
    Matrix x;     // layer input after dropout
    Matrix mask;  // dropout multipliers for x; empty when no dropout was drawn
    Matrix i, f, o, g, c, tanh_c, h;
    Vector h0, c0;
};

struct BpttTape {
    std::vector<LayerTape> layers;
    std::size_t steps = 0;
};

struct StackForward {
    std::vector<double> predictions;
    Matrix hidden;  // last layer h_t, T x H
    BpttTape tape;
    LstmState final_state;
};

inline LstmState zero_state(const LstmStack& s) {
    LstmState st;
    for (const auto& l : s.layers) st.push_back({Vector(l.hidden_dim), Vector(l.hidden_dim)});
    return st;
}

namespace detail {

inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
    Matrix m(rows, cols);
    const double keep = 1.0 / (1.0 - rate);
    for (double& v : m.data()) v = rng.uniform() >= rate ? keep : 0.0;
    return m;
}

}  // namespace detail

/// Runs the stack over a sequence from `initial` (zero state if absent).
/// Inverted dropout is drawn from `rng` only in train mode.
inline StackForward stack_forward(const LstmStack& stack, SeqView seq, Mode mode, Rng& rng,
                                  const LstmState* initial = nullptr) {
    if (seq.length == 0) throw std::invalid_argument("stack_forward: empty sequence");
    check_same(seq.dim, stack.input_dim(), "stack_forward input");
    const std::size_t T = seq.length;
    const std::size_t L = stack.layers.size();

    StackForward out;
    out.tape.steps = T;
    out.tape.layers.resize(L);
    LstmState state = initial ? *initial : zero_state(stack);
    if (state.size() != L) throw DimensionError("stack_forward: initial state has wrong layer count");

    for (std::size_t l = 0; l < L; ++l) {
        const auto& p = stack.layers[l];
        auto& lt = out.tape.layers[l];
        const std::size_t H = p.hidden_dim;
        lt.x = Matrix(T, p.input_dim);
        for (Matrix* m : {&lt.i, &lt.f, &lt.o, &lt.g, &lt.c, &lt.tanh_c, &lt.h}) *m = Matrix(T, H);
        lt.h0 = state[l].h;
        lt.c0 = state[l].c;
        const double rate = l == 0 ? stack.input_dropout : stack.dropout_rate;
        if (mode == Mode::train && rate > 0.0) lt.mask = detail::dropout_mask(T, p.input_dim, rate, rng);
    }

    // Layer-major order: each layer consumes the whole output of the one below.
    for (std::size_t l = 0; l < L; ++l) {
        const auto& p = stack.layers[l];
        auto& lt = out.tape.layers[l];
        const std::size_t H = p.hidden_dim;
        for (std::size_t t = 0; t < T; ++t) {
            auto xrow = lt.x.row(t);
            auto src = l == 0 ? seq[t] : std::span<const double>(out.tape.layers[l - 1].h.row(t));
            std::copy(src.begin(), src.end(), xrow.begin());
            if (!lt.mask.data().empty()) {
                auto mrow = lt.mask.row(t);
                for (std::size_t k = 0; k < xrow.size(); ++k) xrow[k] *= mrow[k];
            }
            std::span<const double> h_prev = t == 0 ? lt.h0.data() : std::span<const double>(lt.h.row(t - 1));
            std::span<const double> c_prev = t == 0 ? lt.c0.data() : std::span<const double>(lt.c.row(t - 1));
            auto ai = lt.i.row(t), af = lt.f.row(t), ag = lt.g.row(t), ao = lt.o.row(t);
            for (std::size_t k = 0; k < H; ++k) {
                ai[k] = p.b_i[k];
                af[k] = p.b_f[k];
                ag[k] = p.b_c[k];
                ao[k] = p.b_o[k];
            }
            matvec_acc(p.wx_i, xrow, ai);
            matvec_acc(p.wx_f, xrow, af);
            matvec_acc(p.wx_c, xrow, ag);
            matvec_acc(p.wx_o, xrow, ao);
            matvec_acc(p.wh_i, h_prev, ai);
            matvec_acc(p.wh_f, h_prev, af);
            matvec_acc(p.wh_c, h_prev, ag);
            matvec_acc(p.wh_o, h_prev, ao);
            auto c = lt.c.row(t), tc = lt.tanh_c.row(t), h = lt.h.row(t);
            for (std::size_t k = 0; k < H; ++k) {
                const double cp = c_prev[k];
                ai[k] = sigmoid(ai[k] + p.peep_i[k] * cp);
                af[k] = sigmoid(af[k] + p.peep_f[k] * cp);
                ao[k] = sigmoid(ao[k] + p.peep_o[k] * cp);
                ag[k] = tanh_act(ag[k]);
                c[k] = af[k] * cp + ai[k] * ag[k];
                tc[k] = tanh_act(c[k]);
                h[k] = ao[k] * tc[k];
            }
        }
        auto last_h = lt.h.row(T - 1), last_c = lt.c.row(T - 1);
        state[l].h = Vector(std::vector<double>(last_h.begin(), last_h.end()));
        state[l].c = Vector(std::vector<double>(last_c.begin(), last_c.end()));
    }

    const auto& top = out.tape.layers.back();
    out.hidden = top.h;
    out.predictions.resize(T);
    for (std::size_t t = 0; t < T; ++t)
        out.predictions[t] = dot(stack.out_w.data(), top.h.row(t)) + stack.out_b;
    out.final_state = std::move(state);
    return out;
}

/// Accumulates into `grads` the gradient of a scalar loss whose partials
/// w.r.t. each prediction are `d_predictions` and w.r.t. each last-layer h_t
/// are `extra_d_hidden` (T x H, optional). Writes dL/dx_t into `d_inputs`
/// when given.
inline void stack_backward_acc(const LstmStack& stack, const BpttTape& tape,
                               std::span<const double> d_predictions, const Matrix* extra_d_hidden,
                               LstmStack& grads, Matrix* d_inputs = nullptr) {
    const std::size_t L = stack.layers.size();
    const std::size_t T = tape.steps;
    if (tape.layers.size() != L || grads.layers.size() != L)
        throw DimensionError("stack_backward: tape/stack layer count mismatch");
    for (std::size_t l = 0; l < L; ++l) {
        if (tape.layers[l].h.cols() != stack.layers[l].hidden_dim ||
            tape.layers[l].x.cols() != stack.layers[l].input_dim || tape.layers[l].h.rows() != T)
            throw DimensionError("stack_backward: tape does not match layer " + std::to_string(l));
    }
    check_same(d_predictions.size(), T, "stack_backward d_predictions");
    if (extra_d_hidden) {
        check_same(extra_d_hidden->rows(), T, "stack_backward extra_d_hidden rows");
        check_same(extra_d_hidden->cols(), stack.hidden_dim(), "stack_backward extra_d_hidden cols");
    }
    if (d_inputs) *d_inputs = Matrix(T, stack.input_dim());

    std::vector<Vector> dh_rec, dc_rec, from_above;
    for (const auto& p : stack.layers) {
        dh_rec.emplace_back(p.hidden_dim);
        dc_rec.emplace_back(p.hidden_dim);
        from_above.emplace_back(p.hidden_dim);
    }
    std::vector<Vector> da_i, da_f, da_g, da_o, dh;
    for (const auto& p : stack.layers) {
        for (auto* v : {&da_i, &da_f, &da_g, &da_o, &dh}) v->emplace_back(p.hidden_dim);
    }
    Vector dx_buf;

    for (std::size_t t = T; t-- > 0;) {
        // Head and external contributions to the top layer.
        {
            Vector& top = from_above[L - 1];
            const double dp = d_predictions[t];
            for (std::size_t k = 0; k < top.size(); ++k) top[k] = dp * stack.out_w[k];
            if (extra_d_hidden) {
                auto e = extra_d_hidden->row(t);
                for (std::size_t k = 0; k < top.size(); ++k) top[k] += e[k];
            }
            if (dp != 0.0) {
                auto h = tape.layers[L - 1].h.row(t);
                for (std::size_t k = 0; k < h.size(); ++k) grads.out_w[k] += dp * h[k];
                grads.out_b += dp;
            }
        }
        for (std::size_t l = L; l-- > 0;) {
            const auto& p = stack.layers[l];
            const auto& lt = tape.layers[l];
            auto& g = grads.layers[l];
            const std::size_t H = p.hidden_dim;
            auto i = lt.i.row(t), f = lt.f.row(t), o = lt.o.row(t), gg = lt.g.row(t);
            auto tc = lt.tanh_c.row(t);
            std::span<const double> h_prev = t == 0 ? lt.h0.data() : std::span<const double>(lt.h.row(t - 1));
            std::span<const double> c_prev = t == 0 ? lt.c0.data() : std::span<const double>(lt.c.row(t - 1));

            for (std::size_t k = 0; k < H; ++k) {
                const double dhk = from_above[l][k] + dh_rec[l][k];
                const double d_o = dhk * tc[k];
                const double dc = dc_rec[l][k] + dhk * o[k] * (1.0 - tc[k] * tc[k]);
                da_o[l][k] = d_o * o[k] * (1.0 - o[k]);
                da_i[l][k] = dc * gg[k] * i[k] * (1.0 - i[k]);
                da_f[l][k] = dc * c_prev[k] * f[k] * (1.0 - f[k]);
                da_g[l][k] = dc * i[k] * (1.0 - gg[k] * gg[k]);
                dc_rec[l][k] = dc * f[k] + da_i[l][k] * p.peep_i[k] + da_f[l][k] * p.peep_f[k] +
                               da_o[l][k] * p.peep_o[k];
                g.peep_i[k] += da_i[l][k] * c_prev[k];
                g.peep_f[k] += da_f[l][k] * c_prev[k];
                g.peep_o[k] += da_o[l][k] * c_prev[k];
                g.b_i[k] += da_i[l][k];
                g.b_f[k] += da_f[l][k];
                g.b_c[k] += da_g[l][k];
                g.b_o[k] += da_o[l][k];
            }
            auto x = lt.x.row(t);
            outer_acc(g.wx_i, da_i[l].data(), x);
            outer_acc(g.wx_f, da_f[l].data(), x);
            outer_acc(g.wx_c, da_g[l].data(), x);
            outer_acc(g.wx_o, da_o[l].data(), x);
            outer_acc(g.wh_i, da_i[l].data(), h_prev);
            outer_acc(g.wh_f, da_f[l].data(), h_prev);
            outer_acc(g.wh_c, da_g[l].data(), h_prev);
            outer_acc(g.wh_o, da_o[l].data(), h_prev);

            dh_rec[l].fill(0.0);
            matvec_t_acc(p.wh_i, da_i[l].data(), dh_rec[l].data());
            matvec_t_acc(p.wh_f, da_f[l].data(), dh_rec[l].data());
            matvec_t_acc(p.wh_c, da_g[l].data(), dh_rec[l].data());
            matvec_t_acc(p.wh_o, da_o[l].data(), dh_rec[l].data());

            if (l == 0 && !d_inputs) continue;
            dx_buf = Vector(p.input_dim);
            matvec_t_acc(p.wx_i, da_i[l].data(), dx_buf.data());
            matvec_t_acc(p.wx_f, da_f[l].data(), dx_buf.data());
            matvec_t_acc(p.wx_c, da_g[l].data(), dx_buf.data());
            matvec_t_acc(p.wx_o, da_o[l].data(), dx_buf.data());
            if (!lt.mask.data().empty()) {
                auto m = lt.mask.row(t);
                for (std::size_t k = 0; k < dx_buf.size(); ++k) dx_buf[k] *= m[k];
            }
            if (l > 0) {
                from_above[l - 1] = dx_buf;
            } else {
                auto dst = d_inputs->row(t);
                std::copy(dx_buf.begin(), dx_buf.end(), dst.begin());
            }
        }
    }
}

struct StackGradients {
    LstmStack grads;
    Matrix d_inputs;
};

inline StackGradients stack_backward(const LstmStack& stack, const BpttTape& tape,
                                     std::span<const double> d_predictions,
                                     const Matrix* extra_d_hidden = nullptr) {
    StackGradients out{stack.zeros_like(), {}};
    stack_backward_acc(stack, tape, d_predictions, extra_d_hidden, out.grads, &out.d_inputs);
    return out;
}

inline std::size_t param_count(const LstmStack& s) {
    std::size_t n = 0;
    visit_params(s, [&](const std::string&, std::span<const double> b) { n += b.size(); });
    return n;
}

}  // namespace cafusion
