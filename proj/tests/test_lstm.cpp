#include <cafusion/lstm.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace cafusion;

namespace {

Matrix random_seq(std::size_t T, std::size_t D, Rng& rng) {
    Matrix m(T, D);
    for (double& x : m.data()) x = rng.uniform(-1.0, 1.0);
    return m;
}

LstmStack scalar_stack(double w) {
    LstmStack s;
    auto p = LstmLayerParams::zeros(1, 1);
    for (Matrix* m : {&p.wx_i, &p.wx_f, &p.wx_c, &p.wx_o, &p.wh_i, &p.wh_f, &p.wh_c, &p.wh_o}) m->data()[0] = w;
    for (Vector* v : {&p.peep_i, &p.peep_f, &p.peep_o}) (*v)[0] = w;
    s.layers.push_back(p);
    s.out_w = Vector{1.0};
    return s;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("zero parameters are a fixed point at zero") {
    auto p = LstmLayerParams::zeros(3, 4);
    LayerState st{Vector(4), Vector(4)};
    auto r = lstm_step(p, st, Vector{0.3, -2.0, 7.0}.data());
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(r.h[k] == 0.0);
        CHECK(r.c[k] == 0.0);
        CHECK(r.i[k] == 0.5);
        CHECK(r.f[k] == 0.5);
        CHECK(r.o[k] == 0.5);
    }
}

TEST_CASE("saturated forget gate preserves the cell") {
    auto p = LstmLayerParams::zeros(1, 1);
    p.b_f[0] = 50.0;
    LayerState st{Vector(1), Vector{2.0}};
    auto r = lstm_step(p, st, Vector{0.8}.data());
    CHECK(std::abs(r.c[0] - 2.0) <= 1e-12);
}

TEST_CASE("scalar cell matches hand evaluation") {
    // Weights 0.1, zero biases, x = 1 from zero state. Values from a separate
    // scalar script.
    auto s = scalar_stack(0.1);
    Matrix x(2, 1);
    x(0, 0) = 1.0;
    x(1, 0) = 1.0;
    Rng rng(0);
    auto f = stack_forward(s, x, Mode::infer, rng);
    CHECK(f.tape.layers[0].h(0, 0) == Catch::Approx(0.02744377273738812).epsilon(1e-14));
    CHECK(f.tape.layers[0].c(0, 0) == Catch::Approx(0.05232362283586467).epsilon(1e-14));
    // Second step exercises the recurrent and peephole weights.
    CHECK(f.tape.layers[0].h(1, 0) == Catch::Approx(0.042866744288931585).epsilon(1e-14));
    CHECK(f.tape.layers[0].c(1, 0) == Catch::Approx(0.08152615462606003).epsilon(1e-14));
    CHECK(f.predictions[1] == f.tape.layers[0].h(1, 0));

    auto r = lstm_step(s.layers[0], {Vector(1), Vector(1)}, Vector{1.0}.data());
    CHECK(r.h[0] == f.tape.layers[0].h(0, 0));
}

TEST_CASE("lstm_step rejects mismatched dimensions") {
    auto p = LstmLayerParams::zeros(3, 2);
    CHECK_THROWS_AS(lstm_step(p, {Vector(2), Vector(2)}, Vector(4).data()), DimensionError);
    CHECK_THROWS_AS(lstm_step(p, {Vector(3), Vector(2)}, Vector(3).data()), DimensionError);
    CHECK_THROWS_AS(lstm_step(p, {Vector(2), Vector(1)}, Vector(3).data()), DimensionError);
}

TEST_CASE("stack_forward basics") {
    Rng rng(1);
    auto s = LstmStack::create(3, {4, 4}, rng);
    auto x = random_seq(12, 3, rng);

    SECTION("zero stack predicts zeros") {
        auto z = s.zeros_like();
        auto f = stack_forward(z, x, Mode::infer, rng);
        REQUIRE(f.predictions.size() == 12);
        for (double p : f.predictions) CHECK(p == 0.0);
    }
    SECTION("infer mode is deterministic") {
        Rng r1(5), r2(6);
        CHECK(stack_forward(s, x, Mode::infer, r1).predictions == stack_forward(s, x, Mode::infer, r2).predictions);
    }
    SECTION("train mode without dropout equals infer mode") {
        s.dropout_rate = 0.0;
        Rng r1(5), r2(5);
        CHECK(stack_forward(s, x, Mode::train, r1).predictions == stack_forward(s, x, Mode::infer, r2).predictions);
    }
    SECTION("train mode with dropout changes outputs") {
        s.dropout_rate = 0.5;
        Rng r1(5), r2(5);
        CHECK(stack_forward(s, x, Mode::train, r1).predictions != stack_forward(s, x, Mode::infer, r2).predictions);
    }
    SECTION("empty and mis-sized input rejected") {
        CHECK_THROWS_AS(stack_forward(s, SeqView(x.data().data(), 0, 3), Mode::infer, rng), std::invalid_argument);
        auto bad = random_seq(5, 4, rng);
        CHECK_THROWS_AS(stack_forward(s, bad, Mode::infer, rng), DimensionError);
    }
}

TEST_CASE("gates stay in (0,1) and h in (-1,1)") {
    Rng rng(2);
    auto s = LstmStack::create(6, {5, 3}, rng);
    for (auto& l : s.layers)
        visit_params(l, [&](const std::string&, std::span<double> b) {
            for (double& v : b) v = rng.uniform(-3.0, 3.0);
        });
    auto x = random_seq(40, 6, rng);
    for (double& v : x.data()) v *= 4.0;
    auto f = stack_forward(s, x, Mode::infer, rng);
    for (const auto& lt : f.tape.layers) {
        for (const Matrix* m : {&lt.i, &lt.f, &lt.o})
            for (double v : m->data()) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
        for (double v : lt.h.data()) CHECK(std::abs(v) < 1.0);
    }
}

TEST_CASE("chunked forward with carried state equals the unchunked pass") {
    Rng rng(3);
    auto s = LstmStack::create(4, {6, 5}, rng);
    auto x = random_seq(50, 4, rng);
    auto full = stack_forward(s, x, Mode::infer, rng);

    LstmState st = zero_state(s);
    std::size_t t0 = 0;
    for (std::size_t len : {7u, 13u, 1u, 20u, 9u}) {
        auto part = stack_forward(s, SeqView(x).slice(t0, len), Mode::infer, rng, &st);
        for (std::size_t t = 0; t < len; ++t)
            CHECK(std::abs(part.predictions[t] - full.predictions[t0 + t]) <= 1e-12);
        st = part.final_state;
        t0 += len;
    }
    REQUIRE(t0 == 50);
}

TEST_CASE("inverted dropout keeps the expected activation") {
    Rng rng(4);
    auto s = LstmStack::create(3, {8, 4}, rng, 0.3);
    auto x = random_seq(5, 3, rng);
    Rng r0(0);
    const auto base = stack_forward(s, x, Mode::infer, r0);
    const Matrix& h0 = base.tape.layers[0].h;

    const int draws = 20000;
    Matrix sum(h0.rows(), h0.cols());
    for (int d = 0; d < draws; ++d) {
        auto f = stack_forward(s, x, Mode::train, rng);
        const auto& lt = f.tape.layers[1];
        for (double m : lt.mask.data()) CHECK((m == 0.0 || std::abs(m - 1.0 / 0.7) < 1e-15));
        for (std::size_t k = 0; k < sum.data().size(); ++k) sum.data()[k] += lt.x.data()[k];
    }
    for (std::size_t k = 0; k < sum.data().size(); ++k) {
        const double h = h0.data()[k];
        // Standard error of the mean of h*m with m in {0, 1/0.7}.
        const double se = std::abs(h) * std::sqrt(0.3 / 0.7) / std::sqrt(double(draws));
        CHECK(std::abs(sum.data()[k] / draws - h) <= 5.0 * se + 1e-15);
    }
}

TEST_CASE("zero output partials give exactly zero gradients") {
    Rng rng(5);
    auto s = LstmStack::create(3, {4, 4}, rng);
    auto x = random_seq(10, 3, rng);
    auto f = stack_forward(s, x, Mode::infer, rng);
    std::vector<double> dp(10, 0.0);
    auto g = stack_backward(s, f.tape, dp);
    visit_params(g.grads, [](const std::string& name, std::span<const double> b) {
        for (double v : b) {
            INFO(name);
            CHECK(v == 0.0);
        }
    });
    for (double v : g.d_inputs.data()) CHECK(v == 0.0);
}

TEST_CASE("one-step scalar net matches the hand-expanded chain rule") {
    LstmStack s;
    auto p = LstmLayerParams::zeros(1, 1);
    p.wx_i(0, 0) = 0.3;
    p.wx_f(0, 0) = -0.2;
    p.wx_c(0, 0) = 0.5;
    p.wx_o(0, 0) = 0.1;
    p.wh_i(0, 0) = 0.2;
    p.wh_f(0, 0) = 0.4;
    p.wh_c(0, 0) = -0.3;
    p.wh_o(0, 0) = 0.6;
    p.peep_i[0] = 0.1;
    p.peep_f[0] = -0.5;
    p.peep_o[0] = 0.25;
    p.b_i[0] = 0.05;
    p.b_f[0] = 0.5;
    p.b_c[0] = -0.1;
    p.b_o[0] = 0.2;
    s.layers.push_back(p);
    s.out_w = Vector{1.5};
    s.out_b = 0.1;

    const double x = 0.7, h0 = 0.3, c0 = 0.5, y = 0.2;
    LstmState init{{Vector{h0}, Vector{c0}}};
    Matrix xs(1, 1);
    xs(0, 0) = x;
    Rng rng(0);
    auto f = stack_forward(s, xs, Mode::infer, rng, &init);

    // Scalar forward, written out independently.
    const double i = sig(0.3 * x + 0.2 * h0 + 0.1 * c0 + 0.05);
    const double fg = sig(-0.2 * x + 0.4 * h0 - 0.5 * c0 + 0.5);
    const double o = sig(0.1 * x + 0.6 * h0 + 0.25 * c0 + 0.2);
    const double g = std::tanh(0.5 * x - 0.3 * h0 - 0.1);
    const double c = fg * c0 + i * g;
    const double h = o * std::tanh(c);
    const double yhat = 1.5 * h + 0.1;
    REQUIRE(f.predictions[0] == Catch::Approx(yhat).epsilon(1e-14));

    // L = 1/2 (yhat - y)^2
    const double e = yhat - y;
    const double dh = e * 1.5;
    const double dc = dh * o * (1 - std::tanh(c) * std::tanh(c));
    const double ao = dh * std::tanh(c) * o * (1 - o);
    const double ai = dc * g * i * (1 - i);
    const double af = dc * c0 * fg * (1 - fg);
    const double ag = dc * i * (1 - g * g);

    auto gr = stack_backward(s, f.tape, std::vector<double>{e}).grads;
    const auto& q = gr.layers[0];
    auto near = [](double a, double b) { return Catch::Approx(b).epsilon(1e-13).margin(1e-16) == a; };
    CHECK(near(gr.out_b, e));
    CHECK(near(gr.out_w[0], e * h));
    CHECK(near(q.b_i[0], ai));
    CHECK(near(q.b_f[0], af));
    CHECK(near(q.b_c[0], ag));
    CHECK(near(q.b_o[0], ao));
    CHECK(near(q.wx_i(0, 0), ai * x));
    CHECK(near(q.wx_f(0, 0), af * x));
    CHECK(near(q.wx_c(0, 0), ag * x));
    CHECK(near(q.wx_o(0, 0), ao * x));
    CHECK(near(q.wh_i(0, 0), ai * h0));
    CHECK(near(q.wh_f(0, 0), af * h0));
    CHECK(near(q.wh_c(0, 0), ag * h0));
    CHECK(near(q.wh_o(0, 0), ao * h0));
    CHECK(near(q.peep_i[0], ai * c0));
    CHECK(near(q.peep_f[0], af * c0));
    CHECK(near(q.peep_o[0], ao * c0));
}

TEST_CASE("input gradients match finite differences") {
    Rng rng(6);
    auto s = LstmStack::create(3, {4, 3}, rng);
    auto x = random_seq(6, 3, rng);
    std::vector<double> y(6);
    for (double& v : y) v = rng.uniform(-1, 1);
    auto loss = [&](const Matrix& in) {
        Rng r(0);
        auto f = stack_forward(s, in, Mode::infer, r);
        double l = 0;
        for (std::size_t t = 0; t < 6; ++t) l += 0.5 * (f.predictions[t] - y[t]) * (f.predictions[t] - y[t]);
        return l;
    };
    Rng r(0);
    auto f = stack_forward(s, x, Mode::infer, r);
    std::vector<double> dp(6);
    for (std::size_t t = 0; t < 6; ++t) dp[t] = f.predictions[t] - y[t];
    auto g = stack_backward(s, f.tape, dp);
    const double eps = 1e-6;
    for (std::size_t k = 0; k < x.data().size(); ++k) {
        Matrix xp = x, xm = x;
        xp.data()[k] += eps;
        xm.data()[k] -= eps;
        const double num = (loss(xp) - loss(xm)) / (2 * eps);
        CHECK(std::abs(num - g.d_inputs.data()[k]) <= 1e-8);
    }
}

TEST_CASE("extra hidden partials add to the head path") {
    Rng rng(7);
    auto s = LstmStack::create(2, {3}, rng);
    auto x = random_seq(5, 2, rng);
    auto f = stack_forward(s, x, Mode::infer, rng);
    std::vector<double> dp(5);
    for (double& v : dp) v = rng.uniform(-1, 1);
    Matrix extra(5, 3);
    for (double& v : extra.data()) v = rng.uniform(-1, 1);

    auto both = stack_backward(s, f.tape, dp, &extra).grads;
    auto head = stack_backward(s, f.tape, dp).grads;
    auto side = stack_backward(s, f.tape, std::vector<double>(5, 0.0), &extra).grads;
    auto a = both.layers[0].wx_i.data(), b = head.layers[0].wx_i.data(), c = side.layers[0].wx_i.data();
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k] - c[k]) <= 1e-14);
    CHECK(side.out_b == 0.0);
}

TEST_CASE("backward rejects a mismatched tape") {
    Rng rng(8);
    auto s = LstmStack::create(3, {4, 4}, rng);
    auto other = LstmStack::create(3, {5, 4}, rng);
    auto x = random_seq(4, 3, rng);
    auto f = stack_forward(s, x, Mode::infer, rng);
    std::vector<double> dp(4, 1.0);
    CHECK_THROWS_AS(stack_backward(other, f.tape, dp), DimensionError);
    CHECK_THROWS_AS(stack_backward(s, f.tape, std::vector<double>(3, 1.0)), DimensionError);
    auto one = LstmStack::create(3, {4}, rng);
    CHECK_THROWS_AS(stack_backward(one, f.tape, dp), DimensionError);
}

TEST_CASE("stack validation") {
    Rng rng(9);
    auto s = LstmStack::create(3, {4, 2}, rng);
    CHECK_NOTHROW(s.validate());
    CHECK(param_count(s) == (4 * 4 * 3 + 4 * 4 * 4 + 7 * 4) + (4 * 2 * 4 + 4 * 2 * 2 + 7 * 2) + 2 + 1);
    s.dropout_rate = 1.0;
    CHECK_THROWS(s.validate());
    s.dropout_rate = 0.2;
    s.out_w = Vector(3);
    CHECK_THROWS_AS(s.validate(), DimensionError);
    CHECK_THROWS_AS(LstmStack::create(3, {}, rng), std::invalid_argument);
}
