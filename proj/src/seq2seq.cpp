#include "t2t/seq2seq.hpp"

#include <cmath>

#include "t2t/error.hpp"

namespace t2t {

namespace {
constexpr double kMaskedScore = -1e30;
}

void ModelConfig::validate() const {
    require(vocab_src >= 1, "model config: vocab_src must be >= 1");
    require(vocab_tgt >= 1, "model config: vocab_tgt must be >= 1");
    require(embed_dim >= 1, "model config: embed_dim must be >= 1");
    require(hidden_dim >= 1, "model config: hidden_dim must be >= 1");
    require(output_dim >= 1, "model config: output_dim must be >= 1");
    require(max_src_len >= 1, "model config: max_src_len must be >= 1");
    require(max_tgt_len >= 1, "model config: max_tgt_len must be >= 1");
}

std::vector<int> strip_trailing_pad(std::span<const int> x) {
    std::size_t n = x.size();
    while (n > 0 && x[n - 1] == kPadId) --n;
    return std::vector<int>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n));
}

std::vector<int> clip_to_eos(std::span<const int> y) {
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == kEosId)
            return std::vector<int>(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    }
    fail("target sequence does not end with EOS");
}

// ---------------------------------------------------------------------------
// interface helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<double> apply_temperature(const std::vector<double>& p, double temperature) {
    if (temperature == 1.0) return p;
    std::vector<double> w(p.size(), 0.0);
    double mx = 0.0;
    for (double v : p) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        // p^{1/T} renormalized == softmax(logits / T)
        w[i] = p[i] > 0.0 ? std::exp(std::log(p[i] / mx) / temperature) : 0.0;
        z += w[i];
    }
    for (double& v : w) v /= z;
    return w;
}

}  // namespace

std::vector<int> sample_sequence(const ConditionalSequenceModel& m, std::span<const int> src,
                                 double temperature, std::size_t max_len, Rng rng) {
    require(temperature > 0.0, "sample_sequence: temperature must be > 0");
    auto session = m.begin(src);
    std::vector<int> out;
    for (std::size_t t = 0; t < max_len; ++t) {
        const std::vector<double> p = apply_temperature(session->next_distribution(), temperature);
        const int tok = static_cast<int>(rng.categorical(p));
        out.push_back(tok);
        if (tok == m.eos_id()) break;
        session->advance(tok);
    }
    return out;
}

std::vector<int> greedy_decode(const ConditionalSequenceModel& m, std::span<const int> src,
                               std::size_t max_len) {
    auto session = m.begin(src);
    std::vector<int> out;
    for (std::size_t t = 0; t < max_len; ++t) {
        const std::vector<double> p = session->next_distribution();
        std::size_t best = 0;
        for (std::size_t i = 1; i < p.size(); ++i)
            if (p[i] > p[best]) best = i;
        const int tok = static_cast<int>(best);
        out.push_back(tok);
        if (tok == m.eos_id()) break;
        session->advance(tok);
    }
    return out;
}

double sequence_log_prob_value(const ConditionalSequenceModel& m, std::span<const int> src,
                               std::span<const int> tgt) {
    auto session = m.begin(src);
    double logp = 0.0;
    for (std::size_t t = 0; t < tgt.size(); ++t) {
        const std::vector<double> p = session->next_distribution();
        const int tok = tgt[t];
        require(tok >= 0 && static_cast<std::size_t>(tok) < p.size(),
                "sequence_log_prob: token out of range");
        logp += std::log(p[static_cast<std::size_t>(tok)]);
        session->advance(tok);
    }
    return logp;
}

// ---------------------------------------------------------------------------
// Seq2Seq
// ---------------------------------------------------------------------------

Seq2Seq::Seq2Seq(ModelConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();
}

std::vector<std::string> Seq2Seq::param_names() const {
    std::vector<std::string> n{
        name("src_emb"),  name("tgt_emb"),  name("enc.w_ih"), name("enc.w_hh"),
        name("enc.b"),    name("dec.w_ih"), name("dec.w_hh"), name("dec.b"),
        name("att.w"),    name("att.u"),    name("att.v"),    name("out.w"),
        name("out.b"),
    };
    if (has_projection()) {
        n.push_back(name("out.proj_w"));
        n.push_back(name("out.proj_b"));
    }
    return n;
}

void Seq2Seq::init_params(ParameterStore& store, Rng rng) const {
    const std::size_t E = cfg_.embed_dim, H = cfg_.hidden_dim, O = cfg_.output_dim;
    const std::size_t Vs = cfg_.vocab_src, Vt = cfg_.vocab_tgt;
    const double mat_scale = cfg_.paper_init ? 1.0 : 0.1;
    const double bias_scale = cfg_.paper_init ? 1.0 : 0.0;

    auto init = [&](const char* suffix, std::vector<std::size_t> shape, double stddev) {
        const std::string full = name(suffix);
        store.create(full, std::move(shape));
        if (stddev != 0.0) store.gaussian_init(full, rng.stream(full), stddev);
    };

    init("src_emb", {Vs, E}, 1.0);
    init("tgt_emb", {Vt, E}, 1.0);
    init("enc.w_ih", {4 * H, E}, mat_scale);
    init("enc.w_hh", {4 * H, H}, mat_scale);
    init("enc.b", {4 * H}, bias_scale);
    init("dec.w_ih", {4 * H, E + H}, mat_scale);
    init("dec.w_hh", {4 * H, H}, mat_scale);
    init("dec.b", {4 * H}, bias_scale);
    init("att.w", {H, H}, 1.0);
    init("att.u", {H, H}, 1.0);
    init("att.v", {H}, 1.0);
    if (has_projection()) {
        init("out.proj_w", {O, H}, 1.0);
        init("out.proj_b", {O}, bias_scale);
        init("out.w", {Vt, O}, 1.0);
    } else {
        init("out.w", {Vt, H}, 1.0);
    }
    init("out.b", {Vt}, bias_scale);
}

Seq2Seq::Bound Seq2Seq::bind(Tape& tape) const {
    Bound b;
    b.model = this;
    b.tape = &tape;
    b.src_emb = tape.param(name("src_emb"));
    b.tgt_emb = tape.param(name("tgt_emb"));
    b.enc_w_ih = tape.param(name("enc.w_ih"));
    b.enc_w_hh = tape.param(name("enc.w_hh"));
    b.enc_b = tape.param(name("enc.b"));
    b.dec_w_ih = tape.param(name("dec.w_ih"));
    b.dec_w_hh = tape.param(name("dec.w_hh"));
    b.dec_b = tape.param(name("dec.b"));
    b.att_w = tape.param(name("att.w"));
    b.att_u = tape.param(name("att.u"));
    b.att_v = tape.param(name("att.v"));
    b.out_w = tape.param(name("out.w"));
    b.out_b = tape.param(name("out.b"));
    if (has_projection()) {
        b.proj_w = tape.param(name("out.proj_w"));
        b.proj_b = tape.param(name("out.proj_b"));
    }
    return b;
}

std::pair<Value, Value> Seq2Seq::Bound::lstm_step(Value x, Value h, Value c, Value w_ih,
                                                  Value w_hh, Value b) const {
    const std::size_t H = model->config().hidden_dim;
    // Gate layout: input, forget, candidate, output.
    Value gates = add(add(matvec(w_ih, x), matvec(w_hh, h)), b);
    Value gi = sigmoid(slice(gates, 0, H));
    Value gf = sigmoid(slice(gates, H, 2 * H));
    Value gg = tanh(slice(gates, 2 * H, 3 * H));
    Value go = sigmoid(slice(gates, 3 * H, 4 * H));
    Value c_new = add(mul(gf, c), mul(gi, gg));
    Value h_new = mul(go, tanh(c_new));
    return {h_new, c_new};
}

Value Seq2Seq::Bound::encode(std::span<const int> src) const {
    require(!src.empty(), "encode: empty source sequence");
    const std::size_t H = model->config().hidden_dim;
    Value x_emb = embedding(src_emb, src);  // [L x E]
    Value h = tape->constant(Tensor({H}));
    Value c = tape->constant(Tensor({H}));
    std::vector<Value> states;
    states.reserve(src.size());
    for (std::size_t t = 0; t < src.size(); ++t) {
        auto [h2, c2] = lstm_step(row(x_emb, t), h, c, enc_w_ih, enc_w_hh, enc_b);
        h = h2;
        c = c2;
        states.push_back(h);
    }
    return stack_rows(states);
}

Value Seq2Seq::Bound::attention_context(Value h_prev, const Decode& d) const {
    const std::size_t L = d.h_enc.tensor().shape()[0];
    std::size_t last_real = L;
    for (std::size_t i = 0; i < L; ++i)
        if (d.mask[i]) last_real = i;
    require(last_real != L, "attention: every source position is masked");

    if (!model->config().attention) return row(d.h_enc, last_real);

    // e_i = v . tanh(W h_prev + U h_i); masked scores get -1e30 before the
    // softmax so their weight underflows to exactly zero.
    Value w = matvec(att_w, h_prev);           // [H]
    Value pre = tanh(add_rowvec(d.u_enc, w));  // [L x H]
    Value scores = matvec(pre, att_v);         // [L]
    bool any_masked = false;
    Tensor mask_add({L});
    for (std::size_t i = 0; i < L; ++i) {
        if (!d.mask[i]) {
            mask_add[i] = kMaskedScore;
            any_masked = true;
        }
    }
    if (any_masked) scores = add(scores, tape->constant(std::move(mask_add)));
    Value alpha = softmax(scores);
    return weighted_row_sum(alpha, d.h_enc);
}

Seq2Seq::Decode Seq2Seq::Bound::begin(std::span<const int> src,
                                      std::span<const char> src_mask) const {
    Decode d;
    d.h_enc = encode(src);
    if (model->config().attention) d.u_enc = matmul_nt(d.h_enc, att_u);  // row i = (U h_i)^T
    if (src_mask.empty()) {
        d.mask.assign(src.size(), 1);
    } else {
        require(src_mask.size() == src.size(), "decode: mask length != source length");
        d.mask.assign(src_mask.begin(), src_mask.end());
    }
    const std::size_t H = model->config().hidden_dim;
    d.h = tape->constant(Tensor({H}));
    d.c = tape->constant(Tensor({H}));
    return d;
}

Value Seq2Seq::Bound::step_logits(Decode& d, int y_prev) const {
    const std::size_t E = model->config().embed_dim;
    Value ctx = attention_context(d.h, d);
    Value e_prev;
    if (d.t == 0) {
        e_prev = tape->constant(Tensor({E}));  // e_{y_0} is the zero vector
    } else {
        const int ids[1] = {y_prev};
        e_prev = row(embedding(tgt_emb, ids), 0);
    }
    auto [h2, c2] = lstm_step(concat(e_prev, ctx), d.h, d.c, dec_w_ih, dec_w_hh, dec_b);
    d.h = h2;
    d.c = c2;
    d.t += 1;
    Value hidden = d.h;
    if (model->has_projection()) hidden = tanh(add(matvec(proj_w, hidden), proj_b));
    return add(matvec(out_w, hidden), out_b);
}

Value Seq2Seq::Bound::sequence_log_prob(std::span<const int> src,
                                        std::span<const int> tgt) const {
    const std::vector<int> x = strip_trailing_pad(src);
    const std::vector<int> y = clip_to_eos(tgt);
    Decode d = begin(x);
    Value total = tape->scalar(0.0);
    int prev = kBosId;
    for (std::size_t t = 0; t < y.size(); ++t) {
        require(y[t] >= 0 && static_cast<std::size_t>(y[t]) < model->config().vocab_tgt,
                "sequence_log_prob: target token out of range");
        Value logp = log_softmax(step_logits(d, prev));
        total = add(total, pick(logp, static_cast<std::size_t>(y[t])));
        prev = y[t];
    }
    return total;
}

Value Seq2Seq::sequence_log_prob(Tape& tape, std::span<const int> src,
                                 std::span<const int> tgt) const {
    return bind(tape).sequence_log_prob(src, tgt);
}

// ---------------------------------------------------------------------------
// NeuralSeqModel
// ---------------------------------------------------------------------------

namespace {

class NeuralSession final : public StepSession {
public:
    NeuralSession(const Seq2Seq& model, const ParameterStore& store, std::span<const int> src)
        // Gradients are disabled, so the store is only read.
        : tape_(const_cast<ParameterStore*>(&store), /*grad_enabled=*/false),
          bound_(model.bind(tape_)) {
        decode_ = bound_.begin(strip_trailing_pad(src));
    }

    std::vector<double> next_distribution() override {
        if (!have_probs_) {
            Value p = softmax(bound_.step_logits(decode_, last_token_));
            const Tensor& pt = p.tensor();
            probs_.assign(pt.values().begin(), pt.values().end());
            have_probs_ = true;
        }
        return probs_;
    }

    void advance(int token) override {
        if (!have_probs_) next_distribution();
        last_token_ = token;
        have_probs_ = false;
    }

private:
    Tape tape_;
    Seq2Seq::Bound bound_;
    Seq2Seq::Decode decode_;
    int last_token_ = kBosId;
    std::vector<double> probs_;
    bool have_probs_ = false;
};

}  // namespace

std::unique_ptr<StepSession> NeuralSeqModel::begin(std::span<const int> src) const {
    return std::make_unique<NeuralSession>(*model_, *store_, src);
}

}  // namespace t2t
