#include <cafusion/training.hpp>

#include <catch_amalgamated.hpp>

#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

using namespace cafusion;
using Catch::Matchers::ContainsSubstring;

namespace {

struct Scalars {
    std::vector<double> v;
};

template <class M, class F>
    requires std::same_as<std::remove_const_t<M>, Scalars>
void visit_params(M& m, F&& f) {
    using Span = std::conditional_t<std::is_const_v<M>, std::span<const double>, std::span<double>>;
    f(std::string("v"), Span(m.v));
}

template <class M>
std::vector<std::uint64_t> bits_of(const M& m) {
    std::vector<std::uint64_t> out;
    for (const auto& [name, b] : param_blocks(m))
        for (double x : b) out.push_back(std::bit_cast<std::uint64_t>(x));
    return out;
}

struct Splits {
    PreparedCorpus train, dev;
};

// Six short recordings, one held out for development. With silence and face
// dropout disabled and no noise, the label is a linear function of the
// informative audio dimensions.
Splits linear_audio_corpus(std::uint64_t seed, std::size_t frames = 1500) {
    SynthConfig c;
    c.n_recordings = 6;
    c.frames_per_recording = frames;
    c.audio_dim = 12;
    c.visual_dim = 20;
    c.informative_audio = 6;
    c.informative_visual = 8;
    c.audio_noise = 0.0;
    c.visual_noise = 0.0;
    c.visual_informativeness = 0.0;
    c.silence_rate = 0.0;
    c.face_dropout_rate = 0.0;
    c.lag = 0;
    c.seed = seed;
    const auto recs = synth_generate(c);
    std::vector<std::string> ids;
    for (const auto& r : recs) ids.push_back(r.id);
    const auto plan = make_split(ids, 1, 0, seed);
    const auto tr = select(recs, plan.train_ids), dv = select(recs, plan.dev_ids);
    const auto pre = Preprocessor::fit(tr, DelaySpec{0}, Target::arousal);
    return {pre(tr), pre(dv)};
}

// Realistic corpus: silence, face dropout, noise, and a 20-frame lag.
Splits bimodal_corpus(std::uint64_t seed) {
    SynthConfig c;
    c.n_recordings = 4;
    c.frames_per_recording = 600;
    c.audio_dim = 6;
    c.visual_dim = 8;
    c.informative_audio = 3;
    c.informative_visual = 4;
    c.seed = seed;
    const auto recs = synth_generate(c);
    std::vector<std::string> ids;
    for (const auto& r : recs) ids.push_back(r.id);
    const auto plan = make_split(ids, 1, 0, seed);
    const auto tr = select(recs, plan.train_ids), dv = select(recs, plan.dev_ids);
    const auto pre = Preprocessor::fit(tr, DelaySpec{20}, Target::valence);
    return {pre(tr), pre(dv)};
}

TrainConfig small_config(std::size_t epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.finetune_epochs = 2;
    cfg.batch_size = 8;
    cfg.bptt_len = 40;
    return cfg;
}

const ModelShape kSmall{{4}, {5}, {6}, true};

}  // namespace

TEST_CASE("sgd_step leaves parameters alone for zero gradients") {
    Rng rng(1);
    auto s = LstmStack::create(3, {4, 2}, rng);
    auto g = s;
    zero_params(g);
    const auto before = bits_of(s);
    CHECK(sgd_step(s, g, 0.1, 5.0) == 0.0);
    CHECK(bits_of(s) == before);
}

TEST_CASE("sgd_step applies a plain step below the clip threshold") {
    Scalars p{{2.0}}, g{{0.5}};
    sgd_step(p, g, 1.0, std::numeric_limits<double>::infinity());
    CHECK(p.v[0] == 1.5);
}

TEST_CASE("sgd_step clips to the global norm") {
    Scalars p{{1.0, -2.0, 0.5, 3.0}};
    Scalars g{{6.0, 0.0, -8.0, 0.0}};  // norm 10
    const auto start = p;
    const double lr = 0.3;
    const double applied = sgd_step(p, g, lr, 5.0);
    CHECK(applied == Catch::Approx(5.0).epsilon(1e-15));
    double norm = 0.0;
    for (std::size_t i = 0; i < p.v.size(); ++i) norm += (p.v[i] - start.v[i]) * (p.v[i] - start.v[i]);
    CHECK(std::abs(std::sqrt(norm) - 5.0 * lr) < 1e-12);
    // Direction is preserved.
    CHECK(std::abs((p.v[0] - start.v[0]) / (p.v[2] - start.v[2]) - 6.0 / -8.0) < 1e-12);
}

TEST_CASE("sgd_step rejects bad input") {
    Scalars p{{1.0}}, g{{1.0, 2.0}}, ok{{1.0}};
    CHECK_THROWS_AS(sgd_step(p, g, 0.1, 5.0), DimensionError);
    CHECK_THROWS_AS(sgd_step(p, ok, 0.0, 5.0), std::invalid_argument);
}

TEST_CASE("learning rate decays geometrically") {
    CHECK(learning_rate(0.01, 0.98, 0) == 0.01);
    CHECK(learning_rate(0.01, 0.98, 3) == Catch::Approx(0.01 * 0.98 * 0.98 * 0.98).epsilon(1e-15));
    CHECK(learning_rate(0.5, 1.0, 40) == 0.5);
}

TEST_CASE("configuration invariants are enforced") {
    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    };
    bad([](TrainConfig& c) { c.lr_init = 0; });
    bad([](TrainConfig& c) { c.lr_decay = 0; });
    bad([](TrainConfig& c) { c.lr_decay = 1.01; });
    bad([](TrainConfig& c) { c.batch_size = 0; });
    bad([](TrainConfig& c) { c.bptt_len = 0; });
    bad([](TrainConfig& c) { c.alpha = -0.1; });
    bad([](TrainConfig& c) { c.beta = std::nan(""); });
    TrainConfig{}.validate();
    CHECK(TrainConfig::default_loss_weights(Target::arousal) == std::pair{0.0, 0.0});
    CHECK(TrainConfig::default_loss_weights(Target::valence) == std::pair{0.04, 0.02});
}

TEST_CASE("zero epochs returns the untrained model") {
    const auto d = bimodal_corpus(2);
    auto cfg = small_config(0);
    const auto r = train_unimodal(d.train, d.dev, Modality::audio, cfg, kSmall);
    CHECK(r.history.epochs.empty());
    CHECK_FALSE(r.history.best_epoch);
    Rng init = Rng::derive(cfg.seed, 0xa0);
    const auto fresh = LstmStack::create(6, {4}, init, cfg.dropout_rate);
    CHECK(bits_of(r.model) == bits_of(fresh));
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto d = bimodal_corpus(3);
    auto cfg = small_config(3);
    cfg.seed = 11;
    const auto a = train_unimodal(d.train, d.dev, Modality::visual, cfg, kSmall);
    const auto b = train_unimodal(d.train, d.dev, Modality::visual, cfg, kSmall);
    REQUIRE(a.history.epochs.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
        CHECK(a.history.epochs[e].loss == b.history.epochs[e].loss);
        CHECK(a.history.epochs[e].dev_ccc == b.history.epochs[e].dev_ccc);
    }
    CHECK(a.history.best_epoch == b.history.best_epoch);
    CHECK(bits_of(a.model) == bits_of(b.model));

    // The gradient reduction order does not depend on the thread count.
    cfg.threads = 3;
    const auto c = train_unimodal(d.train, d.dev, Modality::visual, cfg, kSmall);
    CHECK(bits_of(c.model) == bits_of(a.model));

    cfg.threads = 1;
    cfg.seed = 12;
    const auto other = train_unimodal(d.train, d.dev, Modality::visual, cfg, kSmall);
    CHECK(bits_of(other.model) != bits_of(a.model));
}

TEST_CASE("history records the schedule and selects the best epoch") {
    const auto d = bimodal_corpus(4);
    auto cfg = small_config(5);
    cfg.lr_init = 0.02;
    cfg.lr_decay = 0.9;
    std::vector<EpochRecord> seen;
    const auto r = train_unimodal(d.train, d.dev, Modality::audio, cfg, kSmall, {},
                                  [&](const EpochRecord& e) { seen.push_back(e); });
    REQUIRE(r.history.epochs.size() == 5);
    REQUIRE(seen.size() == 5);
    for (std::size_t e = 0; e < 5; ++e) {
        CHECK(r.history.epochs[e].epoch == e);
        CHECK(r.history.epochs[e].lr == learning_rate(0.02, 0.9, e));
        CHECK(seen[e].loss == r.history.epochs[e].loss);
        CHECK(std::isfinite(r.history.epochs[e].loss));
    }
    REQUIRE(r.history.best_epoch);
    for (const auto& e : r.history.epochs) CHECK(e.dev_ccc <= r.history.best_dev_ccc());

    // The returned model is the best epoch's, reproducible from its checkpoint.
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_checkpoint(buf, r.model);
    const auto back = read_stack_checkpoint(buf);
    const double ccc = mean_dev_ccc(back, unimodal_objective(Modality::audio), d.dev, PostProcess{});
    CHECK(std::abs(ccc - r.history.best_dev_ccc()) < 1e-12);
}

TEST_CASE("history csv has a header and one row per epoch") {
    TrainHistory h;
    h.epochs = {{0, 0.5, 0.25, 0.01}, {1, 0.25, 0.5, 0.0098}};
    h.best_epoch = 1;
    const auto path = std::filesystem::temp_directory_path() / ("cafusion_hist_" + std::to_string(::getpid()) + ".csv");
    write_history_csv(h, path);
    std::ifstream is(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(is, line)) lines.push_back(line);
    std::filesystem::remove(path);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "epoch,loss,dev_ccc,lr");
    CHECK(lines[1].starts_with("0,0.5,0.25,0.01"));
    CHECK(lines[2].starts_with("1,0.25,0.5,"));
}

TEST_CASE("non-finite loss reports epoch and batch") {
    auto d = bimodal_corpus(5);
    d.train[0].target[7] = std::numeric_limits<double>::quiet_NaN();
    auto cfg = small_config(2);
    CHECK_THROWS_WITH(train_unimodal(d.train, d.dev, Modality::audio, cfg, kSmall),
                      ContainsSubstring("epoch 0") && ContainsSubstring("batch"));
}

TEST_CASE("bad training input is rejected") {
    auto d = bimodal_corpus(6);
    auto cfg = small_config(1);
    CHECK_THROWS_AS(train_unimodal({}, d.dev, Modality::audio, cfg, kSmall), TrainingError);
    CHECK_THROWS_AS(train_fusion(FusionKind::early, std::nullopt, std::nullopt, {}, d.dev, cfg, kSmall), TrainingError);

    auto ragged = d.train;
    ragged[0].g_v.pop_back();
    CHECK_THROWS_AS(train_unimodal(ragged, d.dev, Modality::audio, cfg, kSmall), DimensionError);

    Rng rng(1);
    const auto a = LstmStack::create(6, {4}, rng), v = LstmStack::create(8, {5}, rng);
    for (auto kind : {FusionKind::model_level, FusionKind::late, FusionKind::conditional_attention}) {
        CHECK_THROWS_WITH(train_fusion(kind, std::nullopt, v, d.train, d.dev, cfg, kSmall),
                          ContainsSubstring("pretrained"));
        CHECK_THROWS_AS(train_fusion(kind, a, std::nullopt, d.train, d.dev, cfg, kSmall), TrainingError);
        CHECK_THROWS_AS(train_fusion(kind, v, a, d.train, d.dev, cfg, kSmall), DimensionError);
    }
}

TEST_CASE("zero fine-tuning epochs keeps pretrained stacks and the initial gate") {
    const auto d = bimodal_corpus(7);
    Rng rng(9);
    const auto a = LstmStack::create(6, {4}, rng), v = LstmStack::create(8, {5}, rng);
    auto cfg = small_config(1);
    cfg.finetune_epochs = 0;
    const auto r = train_fusion(FusionKind::conditional_attention, a, v, d.train, d.dev, cfg, kSmall);
    CHECK(r.history.epochs.empty());
    const auto& ca = std::get<ConditionalAttention>(r.model);
    CHECK(bits_of(ca.audio) == bits_of(a));
    CHECK(bits_of(ca.visual) == bits_of(v));
    Rng init = Rng::derive(cfg.seed, 0xf0 + static_cast<std::uint64_t>(FusionKind::conditional_attention));
    const auto fresh = std::get<ConditionalAttention>(make_fusion(FusionKind::conditional_attention, a, v, init));
    CHECK(ca.gate.w_g == fresh.gate.w_g);
    CHECK(ca.gate.b_g == fresh.gate.b_g);
    CHECK(ca.gate.use_bias);
}

TEST_CASE("fusion fine-tuning runs every variant") {
    const auto d = bimodal_corpus(8);
    auto cfg = small_config(2);
    const auto a = train_unimodal(d.train, d.dev, Modality::audio, cfg, kSmall).model;
    const auto v = train_unimodal(d.train, d.dev, Modality::visual, cfg, kSmall).model;
    for (auto kind : {FusionKind::early, FusionKind::model_level, FusionKind::late,
                      FusionKind::conditional_attention}) {
        INFO(to_string(kind));
        const auto r = train_fusion(kind, a, v, d.train, d.dev, cfg, kSmall);
        CHECK(kind_of(r.model) == kind);
        // Early fusion uses the full schedule, the others the fine-tuning one.
        const std::size_t expect = kind == FusionKind::early ? cfg.epochs : cfg.finetune_epochs;
        REQUIRE(r.history.epochs.size() == expect);
        CHECK(r.history.epochs[0].lr == (kind == FusionKind::early ? cfg.lr_init : cfg.finetune_lr));
        for (const auto& e : r.history.epochs) CHECK(std::isfinite(e.loss));
    }
}

TEST_CASE("zero gate weights make the fusion loss pure MSE") {
    const auto d = bimodal_corpus(9);
    Rng rng(10);
    const auto a = LstmStack::create(6, {4}, rng), v = LstmStack::create(8, {5}, rng);
    auto cfg = small_config(1);
    cfg.finetune_epochs = 3;
    cfg.alpha = cfg.beta = 0.0;
    const auto ref = train_fusion(FusionKind::conditional_attention, a, v, d.train, d.dev, cfg, kSmall);

    // Same run, but the reliability signals fed to the gate loss are garbage:
    // with zero weights they must have no influence at all.
    auto scrambled = d.train;
    Rng noise(77);
    for (auto& s : scrambled)
        for (std::size_t t = 0; t < s.length(); ++t) {
            s.g_a[t] = noise.uniform();
            s.g_v[t] = noise.uniform();
        }
    // The gate inputs are features, not g_a/g_v, so predictions are unchanged.
    const auto alt = train_fusion(FusionKind::conditional_attention, a, v, scrambled, d.dev, cfg, kSmall);
    REQUIRE(ref.history.epochs.size() == alt.history.epochs.size());
    for (std::size_t e = 0; e < ref.history.epochs.size(); ++e)
        CHECK(ref.history.epochs[e].loss == alt.history.epochs[e].loss);
    CHECK(bits_of(ref.model) == bits_of(alt.model));

    // And the loss of a window is exactly half the summed squared error.
    const auto obj = fusion_objective(0.0, 0.0);
    auto grads = ref.model;
    zero_params(grads);
    Rng win_rng(3);
    const auto& seq = d.train[0];
    const double l = obj.window(ref.model, seq, 10, 30, win_rng, grads);
    Rng again(3);
    const auto f = fusion_forward(ref.model, SeqView(seq.audio).slice(10, 30), SeqView(seq.visual).slice(10, 30),
                                  Mode::train, again);
    double mse = 0.0;
    for (std::size_t t = 0; t < 30; ++t) mse += 0.5 * (f.predictions[t] - seq.target[10 + t]) * (f.predictions[t] - seq.target[10 + t]);
    CHECK(l == Catch::Approx(mse).epsilon(1e-14));
}

TEST_CASE("a linearly predictable target is learned") {
    const auto d = linear_audio_corpus(1);
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 8;
    cfg.dropout_rate = 0.0;
    const auto r =
        train_unimodal(d.train, d.dev, Modality::audio, cfg, ModelShape{{8}, {8}, {8}, true}, PostProcess{DelaySpec{0}});
    REQUIRE(r.history.epochs.size() == 15);
    for (std::size_t e = 1; e < 10; ++e) {
        INFO("epoch " << e);
        CHECK(r.history.epochs[e].loss < r.history.epochs[e - 1].loss);
    }
    CHECK(r.history.epochs.back().dev_ccc > 0.9);
    CHECK(r.history.best_dev_ccc() > 0.9);
}
