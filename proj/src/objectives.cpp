#include "t2t/objectives.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "t2t/error.hpp"
#include "t2t/metrics.hpp"

namespace t2t {

void TrainingConfig::validate() const {
    require(judger_steps_per_round >= 1,
            "training config: m (judger_steps_per_round) must be >= 1");
    require(generator_steps_per_round >= 1,
            "training config: g (generator_steps_per_round) must be >= 1");
    require(lr > 0.0, "training config: lr must be > 0");
    require(batch_size >= 1, "training config: batch_size must be >= 1");
    require(pretrain_epochs >= 0, "training config: pretrain_epochs must be >= 0");
    require(max_rounds >= 0, "training config: max_rounds must be >= 0");
    require(rollout_max_len >= 1, "training config: rollout_max_len must be >= 1");
    require(eval_every >= 0, "training config: eval_every must be >= 0");
    require(patience >= 1, "training config: patience must be >= 1");
}

const char* grad_estimator_name(TrainingConfig::GradEstimator e) {
    return e == TrainingConfig::GradEstimator::SampledToken ? "sampled-token"
                                                            : "per-step-expected";
}

TrainingConfig::GradEstimator parse_grad_estimator(const std::string& s) {
    if (s == "sampled-token") return TrainingConfig::GradEstimator::SampledToken;
    if (s == "per-step-expected") return TrainingConfig::GradEstimator::PerStepExpected;
    fail("training config: unknown grad_estimator '" + s + "'");
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Value mle_loss(Tape& tape, const Seq2Seq& model, std::span<const EncodedExample> batch) {
    require(!batch.empty(), "mle_loss: empty batch");
    auto bound = model.bind(tape);
    Value total = tape.scalar(0.0);
    for (const EncodedExample& ex : batch) {
        const std::vector<int> y = clip_to_eos(ex.y);
        Value lp = bound.sequence_log_prob(ex.x, y);
        total = add(total, scale(lp, -1.0 / static_cast<double>(y.size())));
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

double judger_update(const Seq2Seq& judger, ParameterStore& judger_store,
                     std::span<const EncodedExample> batch, double lr) {
    Tape tape(&judger_store);
    Value loss = mle_loss(tape, judger, batch);
    const double value = loss.item();
    tape.backward(loss);
    judger_store.adam_step(lr);
    return value;
}

Value inverse_kl_loss(Tape& gen_tape, const Seq2Seq& generator, const Seq2Seq& judger,
                      const ParameterStore& judger_store,
                      std::span<const EncodedExample> contexts, std::size_t rollout_max_len,
                      TrainingConfig::GradEstimator estimator, Rng rng) {
    require(!contexts.empty(), "inverse_kl_loss: empty context batch");
    require(generator.config().vocab_tgt == judger.config().vocab_tgt &&
                generator.config().vocab_src == judger.config().vocab_src,
            "inverse_kl_loss: generator and judger vocabularies differ");

    auto gb = generator.bind(gen_tape);
    // The judger lives on a gradient-free tape; its per-step log-probs enter
    // the generator graph as constants, so no gradient can reach it.
    Tape judger_tape(const_cast<ParameterStore*>(&judger_store), /*grad_enabled=*/false);
    auto jb = judger.bind(judger_tape);

    Value total = gen_tape.scalar(0.0);
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const std::vector<int> x = strip_trailing_pad(contexts[i].x);
        auto gd = gb.begin(x);
        auto jd = jb.begin(x);
        Rng ex_rng = rng.at(i);

        Value example = gen_tape.scalar(0.0);
        int prev = kBosId;
        for (std::size_t t = 0; t < rollout_max_len; ++t) {
            Value glogits = gb.step_logits(gd, prev);
            Value jlogits = jb.step_logits(jd, prev);
            Value jlogp = gen_tape.constant(log_softmax(jlogits).tensor());
            Value glogp = log_softmax(glogits);
            Value gprobs = softmax(glogits);

            // Sample the continuation from the generator's distribution.
            const int tok = static_cast<int>(ex_rng.categorical(gprobs.tensor().values()));

            Value term;
            if (estimator == TrainingConfig::GradEstimator::PerStepExpected) {
                term = reduce_sum(mul(gprobs, sub(glogp, jlogp)));
            } else {
                term = sub(pick(glogp, static_cast<std::size_t>(tok)),
                           pick(jlogp, static_cast<std::size_t>(tok)));
            }
            example = add(example, term);
            prev = tok;
            if (tok == kEosId) break;
        }
        total = add(total, example);
    }
    return scale(total, 1.0 / static_cast<double>(contexts.size()));
}

McEstimate mc_inverse_kl(const ConditionalSequenceModel& g, const ConditionalSequenceModel& m,
                         std::span<const int> src, int n_samples, std::size_t max_len, Rng rng,
                         TrainingConfig::GradEstimator estimator) {
    require(n_samples >= 1, "mc_inverse_kl: n_samples must be >= 1");
    require(g.target_vocab() == m.target_vocab(), "mc_inverse_kl: vocabulary mismatch");
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        Rng draw = rng.at(static_cast<std::uint64_t>(s));
        auto gs = g.begin(src);
        auto ms = m.begin(src);
        double value = 0.0;
        for (std::size_t t = 0; t < max_len; ++t) {
            const std::vector<double> gp = gs->next_distribution();
            const std::vector<double> mp = ms->next_distribution();
            const int tok = static_cast<int>(draw.categorical(gp));
            if (estimator == TrainingConfig::GradEstimator::PerStepExpected) {
                for (std::size_t v = 0; v < gp.size(); ++v) {
                    if (gp[v] <= 0.0) continue;
                    value += gp[v] * (std::log(gp[v]) - std::log(mp[v]));
                }
            } else {
                value += std::log(gp[static_cast<std::size_t>(tok)]) -
                         std::log(mp[static_cast<std::size_t>(tok)]);
            }
            if (tok == g.eos_id()) break;
            gs->advance(tok);
            ms->advance(tok);
        }
        sum += value;
        sum_sq += value * value;
    }
    McEstimate est;
    est.samples = n_samples;
    est.mean = sum / n_samples;
    const double var = std::max(0.0, sum_sq / n_samples - est.mean * est.mean);
    est.std_error = n_samples > 1 ? std::sqrt(var / (n_samples - 1)) : 0.0;
    return est;
}

// ---------------------------------------------------------------------------
// snapshots
// ---------------------------------------------------------------------------

std::string TrainSnapshot::to_json() const {
    std::string out = "{\"format\":\"t2t-state-v1\"";
    out += ",\"pretrained\":" + std::string(pretrained ? "true" : "false");
    out += ",\"rounds_done\":" + std::to_string(rounds_done);
    out += ",\"mle_steps_done\":" + std::to_string(mle_steps_done);
    out += ",\"best_val\":";
    out += std::isfinite(best_val) ? format_double(best_val) : std::string("\"inf\"");
    out += ",\"bad_evals\":" + std::to_string(bad_evals);
    out += ",\"generator\":" + generator.to_json();
    if (has_judger) out += ",\"judger\":" + judger.to_json();
    out += "}";
    return out;
}

TrainSnapshot TrainSnapshot::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("train state: parse error: ") + e.what());
    }
    require(j.value("format", "") == "t2t-state-v1", "train state: unsupported format");
    TrainSnapshot s;
    s.pretrained = j.value("pretrained", false);
    s.rounds_done = j.value("rounds_done", 0);
    s.mle_steps_done = j.value("mle_steps_done", std::int64_t{0});
    if (j.contains("best_val") && j["best_val"].is_number())
        s.best_val = j["best_val"].get<double>();
    s.bad_evals = j.value("bad_evals", 0);
    s.generator = ParameterStore::from_json(j.at("generator").dump());
    if (j.contains("judger")) {
        s.judger = ParameterStore::from_json(j.at("judger").dump());
        s.has_judger = true;
    }
    return s;
}

void TrainSnapshot::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "train state: cannot open '" + path + "' for writing");
    const std::string doc = to_json();
    f.write(doc.data(), static_cast<std::streamsize>(doc.size()));
    f.put('\n');
    require(f.good(), "train state: write failed for '" + path + "'");
}

TrainSnapshot TrainSnapshot::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "train state: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<EncodedExample> take(std::span<const EncodedExample> data,
                                 std::span<const std::size_t> idx) {
    std::vector<EncodedExample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(data[i]);
    return out;
}

// Uniform batch with replacement (Algorithm-1 style round sampling).
std::vector<EncodedExample> sample_batch(std::span<const EncodedExample> data, int batch_size,
                                         Rng rng) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
    for (std::size_t& i : idx) i = static_cast<std::size_t>(rng.uniform_int(data.size()));
    return take(data, idx);
}

std::vector<std::size_t> epoch_order(std::size_t n, Rng rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    return order;
}

double validation_metric(const EvalHook& eval, const Seq2Seq& gen_model,
                         const ParameterStore& gen_store, std::uint64_t seed, int round) {
    NeuralSeqModel generator(gen_model, gen_store);
    Rng rng = Rng(seed, "eval").at(static_cast<std::uint64_t>(round));
    if (eval.lm_model != nullptr && eval.lm_store != nullptr) {
        NeuralSeqModel lm(*eval.lm_model, *eval.lm_store);
        return forward_perplexity(lm, generator, eval.val_set, eval.samples_per_context,
                                  eval.max_len, rng);
    }
    // Teacher-forced perplexity of the generator itself.
    double log_sum = 0.0;
    std::size_t tokens = 0;
    for (const EncodedExample& ex : eval.val_set) {
        const std::vector<int> y = clip_to_eos(ex.y);
        log_sum += sequence_log_prob_value(generator, strip_trailing_pad(ex.x), y);
        tokens += y.size();
    }
    require(tokens > 0, "validation: no tokens");
    return std::exp(-log_sum / static_cast<double>(tokens));
}

struct EvalTracker {
    double best;
    int bad;

    bool observe(double value, int patience) {  // true -> stop
        if (value < best - 1e-12) {
            best = value;
            bad = 0;
        } else {
            bad += 1;
        }
        return bad >= patience;
    }
};

void pretrain_generator(const TrainingConfig& cfg, const Seq2Seq& gen, TrainSnapshot& st,
                        std::span<const EncodedExample> train, TrainResult& result,
                        Clock::time_point start, const TrainCallbacks& cb) {
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        const std::vector<std::size_t> order = epoch_order(
            train.size(),
            Rng(cfg.seed, "pretrain-shuffle").at(static_cast<std::uint64_t>(epoch)));
        double sum = 0.0;
        int batches = 0;
        for (std::size_t pos = 0; pos < order.size();
             pos += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<EncodedExample> batch =
                take(train, std::span<const std::size_t>(order).subspan(pos, end - pos));
            Tape tape(&st.generator);
            Value loss = mle_loss(tape, gen, batch);
            sum += loss.item();
            tape.backward(loss);
            st.generator.adam_step(cfg.lr);
            ++batches;
        }
        RoundStats row;
        row.round = 0;
        row.mle_loss = sum / batches;
        row.wall_time = seconds_since(start);
        result.history.push_back(row);
        result.epoch_losses.push_back(row.mle_loss);
        if (cb.on_stats) cb.on_stats(row);
    }
}

}  // namespace

TrainResult t2t_train(const TrainingConfig& cfg, const ModelConfig& model_cfg,
                      std::span<const EncodedExample> train, const EvalHook& eval,
                      const TrainCallbacks& cb, const TrainSnapshot* resume) {
    cfg.validate();
    require(train.size() >= static_cast<std::size_t>(cfg.batch_size),
            "t2t_train: dataset smaller than one batch");
    const auto start = Clock::now();

    const Seq2Seq gen(model_cfg, kGeneratorPrefix);
    const Seq2Seq judger(model_cfg, kJudgerPrefix);  // same configuration as the generator

    TrainResult result;
    TrainSnapshot& st = result.state;
    if (resume != nullptr) {
        st = *resume;
        require(st.has_judger, "t2t_train: resume state lacks a judger");
    } else {
        gen.init_params(st.generator, Rng(cfg.seed, "init/gen"));
        judger.init_params(st.judger, Rng(cfg.seed, "init/judger"));
        st.has_judger = true;
    }

    if (!st.pretrained) {
        pretrain_generator(cfg, gen, st, train, result, start, cb);
        st.pretrained = true;
    }

    EvalTracker tracker{st.best_val, st.bad_evals};
    const bool do_eval = cfg.eval_every > 0 && !eval.val_set.empty();

    for (int round = st.rounds_done + 1; round <= cfg.max_rounds; ++round) {
        double judger_loss = 0.0;
        for (int j = 0; j < cfg.judger_steps_per_round; ++j) {
            const auto batch = sample_batch(
                train, cfg.batch_size,
                Rng(cfg.seed, "judger-batch")
                    .at(static_cast<std::uint64_t>(round - 1) *
                            static_cast<std::uint64_t>(cfg.judger_steps_per_round) +
                        static_cast<std::uint64_t>(j)));
            judger_loss += judger_update(judger, st.judger, batch, cfg.lr);
        }
        judger_loss /= cfg.judger_steps_per_round;

        double ikl = 0.0;
        for (int k = 0; k < cfg.generator_steps_per_round; ++k) {
            const std::uint64_t step_key =
                static_cast<std::uint64_t>(round - 1) *
                    static_cast<std::uint64_t>(cfg.generator_steps_per_round) +
                static_cast<std::uint64_t>(k);
            const auto contexts =
                sample_batch(train, cfg.batch_size, Rng(cfg.seed, "gen-batch").at(step_key));
            Tape tape(&st.generator);
            Value loss =
                inverse_kl_loss(tape, gen, judger, st.judger, contexts, cfg.rollout_max_len,
                                cfg.grad_estimator, Rng(cfg.seed, "rollout").at(step_key));
            ikl += loss.item();
            tape.backward(loss);
            st.generator.adam_step(cfg.lr);
        }
        ikl /= cfg.generator_steps_per_round;
        st.rounds_done = round;

        RoundStats row;
        row.round = round;
        row.judger_loss = judger_loss;
        row.ikl_loss = ikl;
        row.wall_time = seconds_since(start);

        bool stop = false;
        if (do_eval && round % cfg.eval_every == 0) {
            row.val_fppl = validation_metric(eval, gen, st.generator, cfg.seed, round);
            stop = tracker.observe(row.val_fppl, cfg.patience);
            st.best_val = tracker.best;
            st.bad_evals = tracker.bad;
        }
        result.history.push_back(row);
        if (cb.on_stats) cb.on_stats(row);
        if (cb.on_checkpoint && cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0)
            cb.on_checkpoint(st);
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

TrainResult mle_train(const TrainingConfig& cfg, const ModelConfig& model_cfg,
                      std::span<const EncodedExample> train, const EvalHook& eval,
                      const TrainCallbacks& cb, const TrainSnapshot* resume) {
    cfg.validate();
    require(train.size() >= static_cast<std::size_t>(cfg.batch_size),
            "mle_train: dataset smaller than one batch");
    const auto start = Clock::now();

    const Seq2Seq gen(model_cfg, kGeneratorPrefix);
    TrainResult result;
    TrainSnapshot& st = result.state;
    if (resume != nullptr) {
        st = *resume;
    } else {
        gen.init_params(st.generator, Rng(cfg.seed, "init/gen"));
    }
    st.pretrained = true;  // the whole run is MLE

    const std::size_t n = train.size();
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>((n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                  static_cast<std::size_t>(cfg.batch_size));
    // Equal update budget with t2t_train under the same config.
    const std::int64_t budget =
        static_cast<std::int64_t>(cfg.pretrain_epochs) * steps_per_epoch +
        static_cast<std::int64_t>(cfg.max_rounds) *
            static_cast<std::int64_t>(cfg.generator_steps_per_round);

    EvalTracker tracker{st.best_val, st.bad_evals};
    const bool do_eval = cfg.eval_every > 0 && !eval.val_set.empty();

    double epoch_sum = 0.0;
    int epoch_batches = 0;
    double window_sum = 0.0;
    int window_batches = 0;

    while (st.mle_steps_done < budget) {
        const std::int64_t epoch = st.mle_steps_done / steps_per_epoch;
        const std::int64_t pos_in_epoch = st.mle_steps_done % steps_per_epoch;
        const std::vector<std::size_t> order = epoch_order(
            n, Rng(cfg.seed, "mle-shuffle").at(static_cast<std::uint64_t>(epoch)));

        bool stop = false;
        for (std::int64_t b = pos_in_epoch; b < steps_per_epoch && st.mle_steps_done < budget;
             ++b) {
            const std::size_t lo =
                static_cast<std::size_t>(b) * static_cast<std::size_t>(cfg.batch_size);
            const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<EncodedExample> batch =
                take(train, std::span<const std::size_t>(order).subspan(lo, hi - lo));
            Tape tape(&st.generator);
            Value loss = mle_loss(tape, gen, batch);
            const double value = loss.item();
            tape.backward(loss);
            st.generator.adam_step(cfg.lr);
            st.mle_steps_done += 1;
            epoch_sum += value;
            epoch_batches += 1;
            window_sum += value;
            window_batches += 1;

            if (do_eval && st.mle_steps_done % cfg.eval_every == 0) {
                RoundStats row;
                row.round = static_cast<int>(st.mle_steps_done);
                row.mle_loss = window_sum / window_batches;
                window_sum = 0.0;
                window_batches = 0;
                row.val_fppl = validation_metric(eval, gen, st.generator, cfg.seed,
                                                 static_cast<int>(st.mle_steps_done));
                stop = tracker.observe(row.val_fppl, cfg.patience);
                st.best_val = tracker.best;
                st.bad_evals = tracker.bad;
                row.wall_time = seconds_since(start);
                result.history.push_back(row);
                if (cb.on_stats) cb.on_stats(row);
                if (stop) break;
            }
            if (cb.on_checkpoint && cfg.checkpoint_every > 0 &&
                st.mle_steps_done % cfg.checkpoint_every == 0)
                cb.on_checkpoint(st);
        }
        // Epoch boundary (or budget end): record the epoch-mean loss.
        if (epoch_batches > 0 &&
            (st.mle_steps_done % steps_per_epoch == 0 || st.mle_steps_done >= budget || stop)) {
            result.epoch_losses.push_back(epoch_sum / epoch_batches);
            RoundStats row;
            row.round = static_cast<int>(st.mle_steps_done);
            row.mle_loss = result.epoch_losses.back();
            row.wall_time = seconds_since(start);
            result.history.push_back(row);
            if (cb.on_stats) cb.on_stats(row);
            epoch_sum = 0.0;
            epoch_batches = 0;
        }
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

std::string stats_csv_header() {
    return "round,mle_loss,judger_loss,ikl_loss,val_fppl,wall_time";
}

std::string stats_csv_row(const RoundStats& s) {
    auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    return std::to_string(s.round) + "," + cell(s.mle_loss) + "," + cell(s.judger_loss) + "," +
           cell(s.ikl_loss) + "," + cell(s.val_fppl) + "," + format_double(s.wall_time);
}

}  // namespace t2t
