#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "t2t/pipeline.hpp"
#include "t2t/seq2seq.hpp"

namespace t2t {

inline constexpr const char* kGeneratorPrefix = "gen/";
inline constexpr const char* kJudgerPrefix = "judger/";

struct TrainingConfig {
    int judger_steps_per_round = 1;     // m
    int generator_steps_per_round = 1;  // g
    double lr = 1e-3;
    int batch_size = 64;
    int pretrain_epochs = 2;
    int max_rounds = 1000;
    std::uint64_t seed = 1;

    enum class GradEstimator {
        // The literal per-token objective: log g - log m evaluated at the
        // sampled tokens, gradients through the log g terms only.
        SampledToken,
        // Default: exact per-step KL over the full vocabulary, prefixes
        // sampled without gradient. Same expectation, lower variance.
        PerStepExpected,
    };
    GradEstimator grad_estimator = GradEstimator::PerStepExpected;
    std::size_t rollout_max_len = 100;

    int eval_every = 0;  // rounds (t2t) / steps (mle) between validation runs; 0 = off
    int patience = 10;   // stop after this many non-improving evaluations
    int checkpoint_every = 0;  // rounds between snapshot callbacks; 0 = final only

    void validate() const;
};

const char* grad_estimator_name(TrainingConfig::GradEstimator e);
TrainingConfig::GradEstimator parse_grad_estimator(const std::string& s);

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean over the batch of -log model(Y|X) / |Y| (per-token normalization keeps
// the learning rate comparable across sequence lengths).
Value mle_loss(Tape& tape, const Seq2Seq& model, std::span<const EncodedExample> batch);

// One Adam step on the judger maximizing E[log M(Y|X)] over real pairs
// (implemented as mle_loss minimization); returns the loss value.
double judger_update(const Seq2Seq& judger, ParameterStore& judger_store,
                     std::span<const EncodedExample> batch, double lr);

// Inverse-KL generator objective. Rollouts are drawn from the generator
// (temperature 1); the judger is evaluated on a gradient-free tape, so no
// gradient ever reaches its parameters. Mean over the batch of the per-
// example sum of step terms.
Value inverse_kl_loss(Tape& gen_tape, const Seq2Seq& generator, const Seq2Seq& judger,
                      const ParameterStore& judger_store,
                      std::span<const EncodedExample> contexts, std::size_t rollout_max_len,
                      TrainingConfig::GradEstimator estimator, Rng rng);

// Monte-Carlo estimate of KL(G || M) for one conditioning context through the
// inference interface; mirrors the training-time estimators value-for-value.
struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    int samples = 0;
};
McEstimate mc_inverse_kl(
    const ConditionalSequenceModel& g, const ConditionalSequenceModel& m,
    std::span<const int> src, int n_samples, std::size_t max_len, Rng rng,
    TrainingConfig::GradEstimator estimator = TrainingConfig::GradEstimator::PerStepExpected);

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

struct RoundStats {
    int round = 0;  // t2t: round index (0 during pretraining); mle: step index
    double mle_loss = std::numeric_limits<double>::quiet_NaN();
    double judger_loss = std::numeric_limits<double>::quiet_NaN();
    double ikl_loss = std::numeric_limits<double>::quiet_NaN();
    double val_fppl = std::numeric_limits<double>::quiet_NaN();
    double wall_time = 0.0;  // seconds since the trainer started
};

// Resumable between-rounds snapshot. Serialization embeds both checkpoint
// documents and is byte-deterministic.
struct TrainSnapshot {
    ParameterStore generator;
    ParameterStore judger;
    bool has_judger = false;
    bool pretrained = false;
    int rounds_done = 0;
    std::int64_t mle_steps_done = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int bad_evals = 0;

    std::string to_json() const;
    static TrainSnapshot from_json(const std::string& text);
    void save(const std::string& path) const;
    static TrainSnapshot load(const std::string& path);
};

// Optional validation scoring. With an eval LM present the metric is forward
// perplexity of generator samples under that LM; otherwise it is the
// generator's own teacher-forced perplexity on the validation set.
struct EvalHook {
    const Seq2Seq* lm_model = nullptr;
    const ParameterStore* lm_store = nullptr;
    std::span<const EncodedExample> val_set;
    int samples_per_context = 1;
    std::size_t max_len = 100;
};

struct TrainCallbacks {
    std::function<void(const RoundStats&)> on_stats;
    std::function<void(const TrainSnapshot&)> on_checkpoint;
};

struct TrainResult {
    TrainSnapshot state;
    std::vector<RoundStats> history;
    std::vector<double> epoch_losses;  // epoch-mean MLE losses (pretraining / mle)
    bool stopped_early = false;
};

// Alternating judger/generator training: optional MLE pretraining of the
// generator, then per round m judger updates on real pairs and g generator
// updates on the inverse-KL objective, until max_rounds or the validation
// metric stops improving.
TrainResult t2t_train(const TrainingConfig& cfg, const ModelConfig& model_cfg,
                      std::span<const EncodedExample> train, const EvalHook& eval = {},
                      const TrainCallbacks& cb = {}, const TrainSnapshot* resume = nullptr);

// Plain MLE epochs over the same generator with the exact same total update
// budget as t2t_train given an identical config (pretraining steps plus
// max_rounds * g steps).
TrainResult mle_train(const TrainingConfig& cfg, const ModelConfig& model_cfg,
                      std::span<const EncodedExample> train, const EvalHook& eval = {},
                      const TrainCallbacks& cb = {}, const TrainSnapshot* resume = nullptr);

// CSV row for the metrics log: round,mle_loss,judger_loss,ikl_loss,val_fppl,
// wall_time (NaN fields render empty).
std::string stats_csv_header();
std::string stats_csv_row(const RoundStats& s);

}  // namespace t2t
