#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "t2t/rng.hpp"
#include "t2t/tape.hpp"

namespace t2t {

// Reserved token ids shared by both vocabularies.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

struct ModelConfig {
    std::size_t vocab_src = 0;
    std::size_t vocab_tgt = 0;
    std::size_t embed_dim = 64;
    std::size_t hidden_dim = 128;
    std::size_t output_dim = 128;
    std::size_t max_src_len = 100;
    std::size_t max_tgt_len = 100;
    bool attention = true;
    // N(0,1) everywhere when set; default keeps N(0,1) embeddings but scales
    // the LSTM weight matrices by 0.1 and zeroes biases, which keeps gates
    // unsaturated at these widths.
    bool paper_init = false;

    void validate() const;
};

// Drop trailing PAD ids.
std::vector<int> strip_trailing_pad(std::span<const int> x);
// Keep tokens up to and including the first EOS; error if no EOS present.
std::vector<int> clip_to_eos(std::span<const int> y);

// ---------------------------------------------------------------------------
// Inference-facing interface: per-step conditional distributions for a fixed
// source. Implemented by the LSTM model below and by the tabular lab models,
// so decoders, samplers and estimators can run against either.
// ---------------------------------------------------------------------------

class StepSession {
public:
    virtual ~StepSession() = default;
    // Distribution over the target vocabulary for the current position.
    // Idempotent until advance() is called.
    virtual std::vector<double> next_distribution() = 0;
    virtual void advance(int token) = 0;
};

class ConditionalSequenceModel {
public:
    virtual ~ConditionalSequenceModel() = default;
    virtual std::size_t target_vocab() const = 0;
    // Token that terminates generation, or -1 when sequences never stop early
    // (fixed-length tabular models).
    virtual int eos_id() const { return kEosId; }
    virtual std::unique_ptr<StepSession> begin(std::span<const int> src) const = 0;
};

// Autoregressive draw; logits are divided by temperature (> 0). Stops after
// eos_id or max_len tokens. Deterministic for a given rng.
std::vector<int> sample_sequence(const ConditionalSequenceModel& m, std::span<const int> src,
                                 double temperature, std::size_t max_len, Rng rng);

// Argmax decode, ties broken toward the lowest token id.
std::vector<int> greedy_decode(const ConditionalSequenceModel& m, std::span<const int> src,
                               std::size_t max_len);

// Teacher-forced log probability of tgt (every token, including its EOS if
// present) under the model.
double sequence_log_prob_value(const ConditionalSequenceModel& m, std::span<const int> src,
                               std::span<const int> tgt);

// ---------------------------------------------------------------------------
// LSTM encoder-decoder with additive attention.
// ---------------------------------------------------------------------------

// Declares parameter names/shapes under a prefix and builds tape graphs for
// them. The same instance can serve many tapes; all state lives in the
// ParameterStore and on tapes.
class Seq2Seq {
public:
    Seq2Seq(ModelConfig cfg, std::string prefix);

    const ModelConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }
    bool has_projection() const { return cfg_.output_dim != cfg_.hidden_dim; }

    // Creates every parameter entry (error if already present) and applies
    // the Gaussian initialization scheme.
    void init_params(ParameterStore& store, Rng rng) const;
    std::vector<std::string> param_names() const;

    struct Bound;

    // Decoder state for one source sequence on one tape.
    struct Decode {
        Value h_enc;             // [L x H]
        Value u_enc;             // precomputed attention keys [L x H]
        Value h, c;              // decoder LSTM state
        std::vector<char> mask;  // 1 = attend, 0 = padding
        int t = 0;               // completed steps
    };

    // Parameter handles bound to one tape.
    struct Bound {
        const Seq2Seq* model = nullptr;
        Tape* tape = nullptr;
        Value src_emb, tgt_emb;
        Value enc_w_ih, enc_w_hh, enc_b;
        Value dec_w_ih, dec_w_hh, dec_b;
        Value att_w, att_u, att_v;
        Value out_w, out_b;
        Value proj_w, proj_b;  // only when output_dim != hidden_dim

        // One LSTM cell update; returns the new (h, c).
        std::pair<Value, Value> lstm_step(Value x, Value h, Value c, Value w_ih, Value w_hh,
                                          Value b) const;

        // Encoder pass; src must be non-empty, ids < vocab_src.
        Value encode(std::span<const int> src) const;

        // Additive-attention context for the previous decoder state; errors
        // if every position is masked. With attention disabled the context is
        // the last unmasked encoder state.
        Value attention_context(Value h_prev, const Decode& d) const;

        Decode begin(std::span<const int> src, std::span<const char> src_mask = {}) const;

        // Advances the decoder one step and returns the output logits [V].
        // At t=0 the previous-token embedding is the zero vector and y_prev
        // is ignored (BOS is a step marker only).
        Value step_logits(Decode& d, int y_prev) const;

        // Teacher-forced sum of per-token log probabilities. src: trailing
        // PADs stripped; tgt: clipped at its EOS (which must exist).
        Value sequence_log_prob(std::span<const int> src, std::span<const int> tgt) const;
    };

    Bound bind(Tape& tape) const;

    // Convenience wrapper building a throwaway graph on the given tape.
    Value sequence_log_prob(Tape& tape, std::span<const int> src,
                            std::span<const int> tgt) const;

private:
    std::string name(const char* suffix) const { return prefix_ + suffix; }

    ModelConfig cfg_;
    std::string prefix_;
};

// Read-only adapter exposing (model, store) through the inference interface.
// The store is only ever read; sessions build gradient-free tapes.
class NeuralSeqModel : public ConditionalSequenceModel {
public:
    NeuralSeqModel(const Seq2Seq& model, const ParameterStore& store)
        : model_(&model), store_(&store) {}

    std::size_t target_vocab() const override { return model_->config().vocab_tgt; }
    std::unique_ptr<StepSession> begin(std::span<const int> src) const override;

private:
    const Seq2Seq* model_;
    const ParameterStore* store_;
};

}  // namespace t2t
