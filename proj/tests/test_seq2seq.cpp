#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "t2t/error.hpp"
#include "t2t/seq2seq.hpp"

using namespace t2t;

namespace {

ModelConfig tiny_config(std::size_t vs = 6, std::size_t vt = 6) {
    ModelConfig cfg;
    cfg.vocab_src = vs;
    cfg.vocab_tgt = vt;
    cfg.embed_dim = 3;
    cfg.hidden_dim = 4;
    cfg.output_dim = 4;
    cfg.max_src_len = 16;
    cfg.max_tgt_len = 16;
    return cfg;
}

struct Fixture {
    Seq2Seq model;
    ParameterStore store;
    Fixture(ModelConfig cfg, std::uint64_t seed, const std::string& prefix = "m/")
        : model(cfg, prefix) {
        model.init_params(store, Rng(seed, "init"));
    }
};

void zero_all(ParameterStore& store) {
    for (const auto& name : store.names())
        for (double& v : store.value(name).values()) v = 0.0;
}

}  // namespace

TEST_CASE("model config validation") {
    ModelConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.hidden_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("lstm cell: zero weights give zero state update") {
    Fixture f(tiny_config(), 1);
    zero_all(f.store);
    Tape tape(&f.store);
    auto b = f.model.bind(tape);
    const std::size_t H = f.model.config().hidden_dim;
    Value x = tape.constant(Tensor({f.model.config().embed_dim}, {0.7, -0.3, 1.1}));
    Value h0 = tape.constant(Tensor({H}));
    Value c0 = tape.constant(Tensor({H}));
    auto [h1, c1] = b.lstm_step(x, h0, c0, b.enc_w_ih, b.enc_w_hh, b.enc_b);
    for (double v : c1.tensor().values()) CHECK(v == 0.0);  // i*g = 0.5*tanh(0)
    for (double v : h1.tensor().values()) CHECK(v == 0.0);  // o*tanh(0)
}

TEST_CASE("lstm cell: large positive forget bias alone still remembers nothing") {
    Fixture f(tiny_config(), 2);
    zero_all(f.store);
    const std::size_t H = f.model.config().hidden_dim;
    for (std::size_t j = H; j < 2 * H; ++j) f.store.value("m/enc.b")[j] = 10.0;
    Tape tape(&f.store);
    auto b = f.model.bind(tape);
    Value x = tape.constant(Tensor({f.model.config().embed_dim}));
    Value h0 = tape.constant(Tensor({H}));
    Value c0 = tape.constant(Tensor({H}));
    auto [h1, c1] = b.lstm_step(x, h0, c0, b.enc_w_ih, b.enc_w_hh, b.enc_b);
    for (double v : c1.tensor().values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("lstm cell gradient check over all weights") {
    Fixture f(tiny_config(), 3);
    Tensor x({f.model.config().embed_dim});
    Rng rng(5);
    for (double& v : x.values()) v = rng.normal();
    const double err = gradient_check(f.store, [&](Tape& t) {
        auto b = f.model.bind(t);
        const std::size_t H = f.model.config().hidden_dim;
        Value h0 = t.constant(Tensor({H}));
        Value c0 = t.constant(Tensor({H}));
        auto [h1, c1] = b.lstm_step(t.constant(x), h0, c0, b.enc_w_ih, b.enc_w_hh, b.enc_b);
        return reduce_sum(h1);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("encode: empty source is an error; length-1 equals a single cell step") {
    Fixture f(tiny_config(), 4);
    Tape tape(&f.store);
    auto b = f.model.bind(tape);
    CHECK_THROWS_AS(b.encode(std::vector<int>{}), Error);

    const std::vector<int> one{4};
    Value h_enc = b.encode(one);
    CHECK(h_enc.tensor().shape()[0] == 1);

    const std::size_t H = f.model.config().hidden_dim;
    Value x = row(embedding(b.src_emb, one), 0);
    Value h0 = tape.constant(Tensor({H}));
    Value c0 = tape.constant(Tensor({H}));
    auto [h1, c1] = b.lstm_step(x, h0, c0, b.enc_w_ih, b.enc_w_hh, b.enc_b);
    for (std::size_t j = 0; j < H; ++j) CHECK(h_enc.tensor().at2(0, j) == h1.tensor()[j]);

    // Purity: same input twice gives the same states.
    Value again = b.encode(one);
    for (std::size_t j = 0; j < H; ++j)
        CHECK(again.tensor().at2(0, j) == h_enc.tensor().at2(0, j));

    const std::vector<int> bad{7};
    CHECK_THROWS_AS(b.encode(bad), Error);
}

TEST_CASE("attention: single source position gets full weight regardless of weights") {
    Fixture f(tiny_config(), 6);
    Tape tape(&f.store);
    auto b = f.model.bind(tape);
    const std::vector<int> src{4};
    auto d = b.begin(src);
    Value ctx = b.attention_context(d.h, d);
    for (std::size_t j = 0; j < f.model.config().hidden_dim; ++j)
        CHECK(ctx.tensor()[j] == doctest::Approx(d.h_enc.tensor().at2(0, j)).epsilon(1e-12));
}

TEST_CASE("attention: identical encoder states make the context that state; off-mode matches") {
    ModelConfig on = tiny_config();
    ModelConfig off = on;
    off.attention = false;
    Seq2Seq model_on(on, "m/");
    Seq2Seq model_off(off, "m/");
    ParameterStore store;
    model_on.init_params(store, Rng(7, "init"));

    Tape tape(&store);
    auto b_on = model_on.bind(tape);
    auto b_off = model_off.bind(tape);
    const std::vector<int> src{5, 5, 5};
    auto d_on = b_on.begin(src);
    auto d_off = b_off.begin(src);

    // Overwrite the encoder outputs with three identical rows.
    Tensor he({src.size(), on.hidden_dim});
    Rng rowrng(21);
    for (std::size_t j = 0; j < on.hidden_dim; ++j) {
        const double v = rowrng.normal();
        for (std::size_t i = 0; i < src.size(); ++i) he.at2(i, j) = v;
    }
    d_on.h_enc = tape.constant(he);
    d_on.u_enc = matmul_nt(d_on.h_enc, b_on.att_u);
    d_off.h_enc = d_on.h_enc;

    Value ctx_on = b_on.attention_context(d_on.h, d_on);
    Value ctx_off = b_off.attention_context(d_off.h, d_off);
    for (std::size_t j = 0; j < on.hidden_dim; ++j)
        CHECK(ctx_on.tensor()[j] == doctest::Approx(ctx_off.tensor()[j]).epsilon(1e-12));

    // Same per-step output distribution in both modes.
    Value p_on = softmax(b_on.step_logits(d_on, kBosId));
    Value p_off = softmax(b_off.step_logits(d_off, kBosId));
    for (std::size_t j = 0; j < on.vocab_tgt; ++j)
        CHECK(p_on.tensor()[j] == doctest::Approx(p_off.tensor()[j]).epsilon(1e-12));
}

TEST_CASE("attention: masked positions get exactly zero weight") {
    Fixture f(tiny_config(), 8);
    Tape tape(&f.store);
    auto b = f.model.bind(tape);
    const std::vector<int> src{4, 5, 4, 5, 4};
    const std::vector<char> mask{1, 0, 1, 1, 0};
    auto d = b.begin(src, mask);
    // Random previous decoder state.
    Tensor hp({f.model.config().hidden_dim});
    Rng rng(9);
    for (double& v : hp.values()) v = rng.normal();
    Value h_prev = tape.constant(hp);
    Value ctx = b.attention_context(h_prev, d);

    // Oracle: recompute unmasked scores and renormalize over the unmasked set.
    Value w = matvec(b.att_w, h_prev);
    Value pre = tanh(add_rowvec(d.u_enc, w));
    Value scores = matvec(pre, b.att_v);
    const Tensor& s = scores.tensor();
    double mx = -1e300;
    for (std::size_t i = 0; i < src.size(); ++i)
        if (mask[i] && s[i] > mx) mx = s[i];
    double z = 0.0;
    std::vector<double> alpha(src.size(), 0.0);
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!mask[i]) continue;
        alpha[i] = std::exp(s[i] - mx);
        z += alpha[i];
    }
    for (double& a : alpha) a /= z;
    for (std::size_t j = 0; j < f.model.config().hidden_dim; ++j) {
        double expect = 0.0;
        for (std::size_t i = 0; i < src.size(); ++i)
            if (mask[i]) expect += alpha[i] * d.h_enc.tensor().at2(i, j);
        CHECK(ctx.tensor()[j] == doctest::Approx(expect).epsilon(1e-12));
    }

    const std::vector<char> all_masked(5, 0);
    auto d2 = b.begin(src, all_masked);
    CHECK_THROWS_AS(b.attention_context(d2.h, d2), Error);
}

TEST_CASE("decode step: zero weights give the uniform distribution") {
    Fixture f(tiny_config(), 10);
    zero_all(f.store);
    Tape tape(&f.store);
    auto b = f.model.bind(tape);
    const std::vector<int> src{4, 5};
    auto d = b.begin(src);
    Value p = softmax(b.step_logits(d, kBosId));
    for (double v : p.tensor().values()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("decode step: distributions are valid at every step") {
    Fixture f(tiny_config(), 11);
    Tape tape(&f.store);
    auto b = f.model.bind(tape);
    const std::vector<int> src{4, 5, 4};
    auto d = b.begin(src);
    int prev = kBosId;
    for (int t = 0; t < 6; ++t) {
        Value p = softmax(b.step_logits(d, prev));
        double sum = 0.0;
        for (double v : p.tensor().values()) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
        prev = 4;
    }
    CHECK_THROWS_AS(b.step_logits(d, 99), Error);
}

TEST_CASE("decode step: gradient of a fixed token's log-prob w.r.t. output weights") {
    Fixture f(tiny_config(), 12);
    const std::vector<int> src{4, 5};
    const double err = gradient_check(f.store, [&](Tape& t) {
        auto b = f.model.bind(t);
        auto d = b.begin(src);
        Value lp = log_softmax(b.step_logits(d, kBosId));
        return pick(lp, 3);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("sequence_log_prob: uniform model scores 3 ln(1/4) for a 3-token target") {
    ModelConfig cfg = tiny_config(4, 4);
    Fixture f(cfg, 13);
    zero_all(f.store);
    Tape tape(&f.store);
    const std::vector<int> src{1, 3};
    const std::vector<int> tgt{3, 3, kEosId};
    const double lp = f.model.sequence_log_prob(tape, src, tgt).item();
    CHECK(lp == doctest::Approx(3.0 * std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("sequence_log_prob: non-positive, pad-invariant, matches per-step product") {
    Fixture f(tiny_config(), 14);
    const std::vector<int> src{4, 5, 4};
    const std::vector<int> tgt{5, 4, 5, 4, kEosId};

    Tape tape(&f.store);
    const double lp = f.model.sequence_log_prob(tape, src, tgt).item();
    CHECK(lp <= 0.0);

    // Invariant to padding beyond EOS and after the source.
    std::vector<int> src_pad = src;
    src_pad.insert(src_pad.end(), {kPadId, kPadId});
    std::vector<int> tgt_pad = tgt;
    tgt_pad.insert(tgt_pad.end(), {kPadId, kPadId, kPadId});
    Tape tape2(&f.store);
    CHECK(f.model.sequence_log_prob(tape2, src_pad, tgt_pad).item() == doctest::Approx(lp));

    // exp(sum of log probs) equals the product of per-step probabilities.
    NeuralSeqModel nm(f.model, f.store);
    auto session = nm.begin(src);
    double prod = 1.0;
    for (int tok : tgt) {
        prod *= session->next_distribution()[static_cast<std::size_t>(tok)];
        session->advance(tok);
    }
    CHECK(std::exp(lp) == doctest::Approx(prod).epsilon(1e-12));

    // Missing EOS violates the precondition.
    Tape tape3(&f.store);
    const std::vector<int> no_eos{4, 5};
    CHECK_THROWS_AS(f.model.sequence_log_prob(tape3, src, no_eos), Error);
}

TEST_CASE("greedy decode: uniform model emits token 0 up to max_len") {
    Fixture f(tiny_config(), 15);
    zero_all(f.store);
    NeuralSeqModel nm(f.model, f.store);
    const std::vector<int> src{4};
    const auto out = greedy_decode(nm, src, 7);
    CHECK(out.size() == 7);
    for (int tok : out) CHECK(tok == 0);  // tie broken toward the lowest id
    CHECK(greedy_decode(nm, src, 7) == out);
}

TEST_CASE("sampling: seeded reproducibility and the greedy limit") {
    Fixture f(tiny_config(), 16);
    NeuralSeqModel nm(f.model, f.store);
    const std::vector<int> src{4, 5};
    const auto a = sample_sequence(nm, src, 1.0, 10, Rng(123, "sample"));
    const auto b = sample_sequence(nm, src, 1.0, 10, Rng(123, "sample"));
    CHECK(a == b);

    const auto cold = sample_sequence(nm, src, 1e-6, 10, Rng(7, "s"));
    const auto greedy = greedy_decode(nm, src, 10);
    CHECK(cold == greedy);

    CHECK_THROWS_AS(sample_sequence(nm, src, 0.0, 10, Rng(1)), Error);
}

TEST_CASE("sampling: first-token frequencies match the model distribution (3 sigma)") {
    Fixture f(tiny_config(), 17);
    NeuralSeqModel nm(f.model, f.store);
    const std::vector<int> src{4, 5};
    auto session = nm.begin(src);
    const std::vector<double> p = session->next_distribution();

    const int n = 10000;
    std::map<int, int> counts;
    Rng rng(99, "freq");
    for (int i = 0; i < n; ++i) {
        const auto y = sample_sequence(nm, src, 1.0, 1, rng.at(static_cast<std::uint64_t>(i)));
        REQUIRE(y.size() == 1);
        counts[y[0]] += 1;
    }
    for (std::size_t v = 0; v < p.size(); ++v) {
        const double freq = counts[static_cast<int>(v)] / static_cast<double>(n);
        const double sigma = std::sqrt(p[v] * (1.0 - p[v]) / n);
        CHECK(std::abs(freq - p[v]) <= 3.0 * sigma + 1e-9);
    }
}

TEST_CASE("full-model gradient check on a short example") {
    // Two usable tokens, three decode steps.
    ModelConfig cfg = tiny_config(4, 4);
    Fixture f(cfg, 18);
    const std::vector<int> src{1, 3};
    const std::vector<int> tgt{3, 3, kEosId};
    const double err =
        gradient_check(f.store, [&](Tape& t) { return f.model.sequence_log_prob(t, src, tgt); });
    CHECK(err < 1e-4);
}

TEST_CASE("projection head is used when output_dim differs and is differentiable") {
    ModelConfig cfg = tiny_config();
    cfg.output_dim = 5;  // != hidden_dim
    Fixture f(cfg, 19);
    CHECK(f.store.has("m/out.proj_w"));
    const std::vector<int> src{4};
    const std::vector<int> tgt{5, kEosId};
    const double err =
        gradient_check(f.store, [&](Tape& t) { return f.model.sequence_log_prob(t, src, tgt); });
    CHECK(err < 1e-4);
}
