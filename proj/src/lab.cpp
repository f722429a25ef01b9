#include "t2t/lab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"
#include "t2t/error.hpp"
#include "t2t/kernels.hpp"
#include "t2t/tape.hpp"

namespace t2t {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNegBig = -1e30;  // logit standing in for log 0
}  // namespace

// ---------------------------------------------------------------------------
// TabularAR
// ---------------------------------------------------------------------------

std::size_t TabularAR::rows(int t) const {
    switch (tying) {
        case Tying::Independent: return 1;
        case Tying::Markov1: return t == 0 ? 1 : static_cast<std::size_t>(vocab);
        case Tying::Full: {
            std::size_t r = 1;
            for (int i = 0; i < t; ++i) r *= static_cast<std::size_t>(vocab);
            return r;
        }
    }
    return 1;
}

std::size_t TabularAR::joint_size() const {
    std::size_t n = 1;
    for (int t = 0; t < length; ++t) n *= static_cast<std::size_t>(vocab);
    return n;
}

void TabularAR::validate() const {
    require(vocab >= 2 && vocab <= 10, "tabular model: vocab must be in [2, 10]");
    require(length >= 1 && length <= 5, "tabular model: length must be in [1, 5]");
    require(joint_size() <= 100000, "tabular model: joint too large to enumerate");
    require(step_logits.size() == static_cast<std::size_t>(length),
            "tabular model: wrong number of step tables");
    for (int t = 0; t < length; ++t) {
        const Tensor& s = step_logits[static_cast<std::size_t>(t)];
        require(s.rank() == 2 && s.shape()[0] == rows(t) &&
                    s.shape()[1] == static_cast<std::size_t>(vocab),
                "tabular model: step " + std::to_string(t) + " table has shape " +
                    s.shape_str());
    }
}

TabularAR TabularAR::uniform(int V, int T, Tying tying) {
    TabularAR m;
    m.vocab = V;
    m.length = T;
    m.tying = tying;
    for (int t = 0; t < T; ++t)
        m.step_logits.emplace_back(
            std::vector<std::size_t>{m.rows(t), static_cast<std::size_t>(V)});
    m.validate();
    return m;
}

std::vector<int> index_to_seq(std::size_t index, int V, int T) {
    std::vector<int> seq(static_cast<std::size_t>(T));
    for (int t = T - 1; t >= 0; --t) {
        seq[static_cast<std::size_t>(t)] = static_cast<int>(index % static_cast<std::size_t>(V));
        index /= static_cast<std::size_t>(V);
    }
    return seq;
}

std::size_t seq_to_index(std::span<const int> seq, int V) {
    std::size_t idx = 0;
    for (int tok : seq) idx = idx * static_cast<std::size_t>(V) + static_cast<std::size_t>(tok);
    return idx;
}

TabularAR TabularAR::from_joint(int V, int T, std::span<const double> joint) {
    TabularAR m = uniform(V, T, Tying::Full);
    require(joint.size() == m.joint_size(), "from_joint: joint has wrong size");

    // Conditional at prefix r, symbol y = mass(prefix+y+*) / mass(prefix+*).
    for (int t = 0; t < T; ++t) {
        Tensor& table = m.step_logits[static_cast<std::size_t>(t)];
        const std::size_t nrows = m.rows(t);
        std::size_t tail = 1;  // continuations after step t
        for (int i = t + 1; i < T; ++i) tail *= static_cast<std::size_t>(V);
        for (std::size_t r = 0; r < nrows; ++r) {
            double row_mass = 0.0;
            std::vector<double> sym(static_cast<std::size_t>(V), 0.0);
            for (int y = 0; y < V; ++y) {
                const std::size_t base =
                    (r * static_cast<std::size_t>(V) + static_cast<std::size_t>(y)) * tail;
                double s = 0.0;
                for (std::size_t k = 0; k < tail; ++k) s += joint[base + k];
                sym[static_cast<std::size_t>(y)] = s;
                row_mass += s;
            }
            for (int y = 0; y < V; ++y) {
                const double p = row_mass > 0.0 ? sym[static_cast<std::size_t>(y)] / row_mass
                                                : 1.0 / static_cast<double>(V);
                table.at2(r, static_cast<std::size_t>(y)) = p > 0.0 ? std::log(p) : kNegBig;
            }
        }
    }
    return m;
}

std::size_t TabularAR::prefix_row(int t, std::span<const int> prefix) const {
    switch (tying) {
        case Tying::Independent: return 0;
        case Tying::Markov1:
            return t == 0 ? 0
                          : static_cast<std::size_t>(prefix[static_cast<std::size_t>(t - 1)]);
        case Tying::Full: {
            std::size_t r = 0;
            for (int i = 0; i < t; ++i)
                r = r * static_cast<std::size_t>(vocab) +
                    static_cast<std::size_t>(prefix[static_cast<std::size_t>(i)]);
            return r;
        }
    }
    return 0;
}

std::vector<double> TabularAR::conditional(int t, std::span<const int> prefix) const {
    require(t >= 0 && t < length, "tabular model: step out of range");
    const Tensor& table = step_logits[static_cast<std::size_t>(t)];
    const std::size_t r = prefix_row(t, prefix);
    std::vector<double> p(static_cast<std::size_t>(vocab));
    kernels::serial::softmax_rows(table.data() + r * static_cast<std::size_t>(vocab), p.data(),
                                  1, static_cast<std::size_t>(vocab));
    return p;
}

double TabularAR::log_prob(std::span<const int> seq) const {
    require(seq.size() == static_cast<std::size_t>(length), "tabular model: wrong length");
    double lp = 0.0;
    std::vector<double> ls(static_cast<std::size_t>(vocab));
    for (int t = 0; t < length; ++t) {
        const Tensor& table = step_logits[static_cast<std::size_t>(t)];
        const std::size_t r = prefix_row(t, seq.subspan(0, static_cast<std::size_t>(t)));
        kernels::serial::log_softmax_rows(table.data() + r * static_cast<std::size_t>(vocab),
                                          ls.data(), 1, static_cast<std::size_t>(vocab));
        lp += ls[static_cast<std::size_t>(seq[static_cast<std::size_t>(t)])];
    }
    return lp;
}

std::vector<double> TabularAR::enumerate_joint() const {
    // Precompute the log-softmax of every table row once.
    std::vector<Tensor> logsm;
    logsm.reserve(step_logits.size());
    for (const Tensor& s : step_logits) {
        Tensor l(s.shape());
        kernels::log_softmax_rows(s.data(), l.data(), s.shape()[0], s.shape()[1]);
        logsm.push_back(std::move(l));
    }
    const std::size_t n = joint_size();
    std::vector<double> joint(n);
    const int V = vocab, T = length;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled() && n >= 4096)
#endif
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const std::vector<int> seq = index_to_seq(static_cast<std::size_t>(i), V, T);
        double lp = 0.0;
        for (int t = 0; t < T; ++t) {
            const std::size_t r =
                prefix_row(t, std::span<const int>(seq).subspan(0, static_cast<std::size_t>(t)));
            lp += logsm[static_cast<std::size_t>(t)].at2(
                r, static_cast<std::size_t>(seq[static_cast<std::size_t>(t)]));
        }
        joint[static_cast<std::size_t>(i)] = std::exp(lp);
    }
    return joint;
}

// ---------------------------------------------------------------------------
// exact divergences
// ---------------------------------------------------------------------------

const char* divergence_name(DivergenceKind k) {
    switch (k) {
        case DivergenceKind::ForwardKl: return "forward_kl";
        case DivergenceKind::InverseKl: return "inverse_kl";
        case DivergenceKind::Jsd: return "jsd";
    }
    return "?";
}

double exact_divergence_joint(DivergenceKind kind, std::span<const double> p,
                              std::span<const double> g) {
    require(p.size() == g.size(), "exact_divergence: joint size mismatch");
    const std::size_t n = p.size();
    switch (kind) {
        case DivergenceKind::ForwardKl: {
            const double bad = kernels::blocked_sum(n, [&](std::size_t i) {
                return (p[i] > kZeroMassEps && g[i] <= kZeroMassEps) ? 1.0 : 0.0;
            });
            if (bad > 0.0) return kInf;
            return kernels::blocked_sum(n, [&](std::size_t i) {
                return p[i] > kZeroMassEps ? p[i] * std::log(p[i] / g[i]) : 0.0;
            });
        }
        case DivergenceKind::InverseKl: {
            const double bad = kernels::blocked_sum(n, [&](std::size_t i) {
                return (g[i] > kZeroMassEps && p[i] <= kZeroMassEps) ? 1.0 : 0.0;
            });
            if (bad > 0.0) return kInf;
            return kernels::blocked_sum(n, [&](std::size_t i) {
                return g[i] > kZeroMassEps ? g[i] * std::log(g[i] / p[i]) : 0.0;
            });
        }
        case DivergenceKind::Jsd: {
            return kernels::blocked_sum(n, [&](std::size_t i) {
                const double m = 0.5 * (p[i] + g[i]);
                double term = 0.0;
                if (p[i] > 0.0) term += 0.5 * p[i] * std::log(p[i] / m);
                if (g[i] > 0.0) term += 0.5 * g[i] * std::log(g[i] / m);
                return term;
            });
        }
    }
    return 0.0;
}

double exact_divergence(DivergenceKind kind, const TabularAR& p, const TabularAR& g) {
    require(p.vocab == g.vocab && p.length == g.length,
            "exact_divergence: models have different (V, T)");
    const std::vector<double> pj = p.enumerate_joint();
    const std::vector<double> gj = g.enumerate_joint();
    return exact_divergence_joint(kind, pj, gj);
}

// ---------------------------------------------------------------------------
// shell
// ---------------------------------------------------------------------------

namespace {

class TabularSession final : public StepSession {
public:
    explicit TabularSession(const TabularAR& m) : model_(&m) {}

    std::vector<double> next_distribution() override {
        require(static_cast<int>(prefix_.size()) < model_->length,
                "tabular session: past the end of the sequence");
        return model_->conditional(static_cast<int>(prefix_.size()), prefix_);
    }

    void advance(int token) override {
        require(token >= 0 && token < model_->vocab, "tabular session: token out of range");
        prefix_.push_back(token);
    }

private:
    const TabularAR* model_;
    std::vector<int> prefix_;
};

}  // namespace

std::unique_ptr<StepSession> TabularShell::begin(std::span<const int>) const {
    return std::make_unique<TabularSession>(*model_);
}

// ---------------------------------------------------------------------------
// planted target
// ---------------------------------------------------------------------------

PlantedTarget make_planted_bimodal(int V, int T, double mode_mass, Rng rng) {
    require(V >= 2, "planted target: vocab too small");
    require(mode_mass > 0.0 && 2.0 * mode_mass < 1.0,
            "planted target: mode_mass must be in (0, 0.5)");
    PlantedTarget out;
    const int a = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(V)));
    int b = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(V)));
    while (b == a) b = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(V)));
    out.modes.push_back(std::vector<int>(static_cast<std::size_t>(T), a));
    out.modes.push_back(std::vector<int>(static_cast<std::size_t>(T), b));
    out.mode_mass = mode_mass;

    std::size_t n = 1;
    for (int t = 0; t < T; ++t) n *= static_cast<std::size_t>(V);
    out.background_each = (1.0 - 2.0 * mode_mass) / static_cast<double>(n - 2);

    std::vector<double> joint(n, out.background_each);
    joint[seq_to_index(out.modes[0], V)] = mode_mass;
    joint[seq_to_index(out.modes[1], V)] = mode_mass;
    out.model = TabularAR::from_joint(V, T, joint);
    return out;
}

// ---------------------------------------------------------------------------
// fits
// ---------------------------------------------------------------------------

const char* fit_objective_name(FitObjective o) {
    switch (o) {
        case FitObjective::ForwardKlMle: return "forward_kl_mle";
        case FitObjective::InverseKlVsJudger: return "inverse_kl_vs_judger";
        case FitObjective::JsdMixture: return "jsd_mixture";
    }
    return "?";
}

namespace {

std::string step_param(int t) { return "step" + std::to_string(t); }

TabularAR materialize(const ParameterStore& store, int V, int T, const FitConfig& cfg) {
    TabularAR g;
    g.vocab = V;
    g.length = T;
    g.tying = cfg.tying;
    g.rank = cfg.rank;
    for (int t = 0; t < T; ++t) {
        const std::size_t r = g.rows(t);
        if (cfg.rank > 0) {
            const Tensor& a = store.value(step_param(t) + ".a");
            const Tensor& b = store.value(step_param(t) + ".b");
            Tensor logits({r, static_cast<std::size_t>(V)});
            kernels::matmul(a.data(), b.data(), logits.data(), r,
                            static_cast<std::size_t>(cfg.rank), static_cast<std::size_t>(V));
            g.step_logits.push_back(std::move(logits));
        } else {
            g.step_logits.push_back(store.value(step_param(t)));
        }
    }
    g.validate();
    return g;
}

std::vector<double> empirical_joint(std::span<const std::vector<int>> samples, int V, int T) {
    std::size_t n = 1;
    for (int t = 0; t < T; ++t) n *= static_cast<std::size_t>(V);
    std::vector<double> joint(n, 0.0);
    for (const auto& s : samples) {
        require(s.size() == static_cast<std::size_t>(T), "empirical joint: wrong sample length");
        joint[seq_to_index(s, V)] += 1.0;
    }
    for (double& v : joint) v /= static_cast<double>(samples.size());
    return joint;
}

}  // namespace

FitResult fit_tabular(FitObjective obj, const TabularAR& target, const FitConfig& cfg, Rng rng,
                      std::span<const std::vector<int>> samples) {
    target.validate();
    require(cfg.steps >= 1, "fit: steps must be >= 1");
    const int V = target.vocab, T = target.length;
    const std::size_t n = target.joint_size();

    const std::vector<double> target_joint = target.enumerate_joint();
    std::vector<double> p_joint = target_joint;
    if (obj == FitObjective::ForwardKlMle && !samples.empty())
        p_joint = empirical_joint(samples, V, T);

    FitResult result;

    // Judger: full-capacity table fit by MLE on draws from the target.
    std::vector<double> log_m;
    if (obj == FitObjective::InverseKlVsJudger) {
        std::vector<std::vector<int>> draws;
        draws.reserve(static_cast<std::size_t>(cfg.judger_samples));
        TabularShell shell(target);
        Rng srng = rng.stream("judger-samples");
        for (int i = 0; i < cfg.judger_samples; ++i)
            draws.push_back(sample_sequence(shell, {}, 1.0, static_cast<std::size_t>(T),
                                            srng.at(static_cast<std::uint64_t>(i))));
        FitConfig jcfg;
        jcfg.tying = TabularAR::Tying::Full;
        jcfg.rank = 0;
        jcfg.steps = cfg.judger_steps;
        jcfg.lr = 0.1;
        jcfg.init_stddev = 0.1;
        jcfg.curve_every = cfg.judger_steps + 1;  // no curve
        result.judger =
            fit_tabular(FitObjective::ForwardKlMle, target, jcfg, rng.stream("judger"), draws)
                .model;
        result.has_judger = true;
        log_m.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            log_m[i] = result.judger.log_prob(index_to_seq(i, V, T));
    }

    // Trainable logits.
    ParameterStore store;
    {
        TabularAR shape;
        shape.vocab = V;
        shape.length = T;
        shape.tying = cfg.tying;
        Rng init = rng.stream("init");
        for (int t = 0; t < T; ++t) {
            const std::size_t r = shape.rows(t);
            if (cfg.rank > 0) {
                store.create(step_param(t) + ".a", {r, static_cast<std::size_t>(cfg.rank)});
                store.create(step_param(t) + ".b",
                             {static_cast<std::size_t>(cfg.rank), static_cast<std::size_t>(V)});
                store.gaussian_init(step_param(t) + ".a", init.stream(step_param(t) + ".a"),
                                    cfg.init_stddev);
                store.gaussian_init(step_param(t) + ".b", init.stream(step_param(t) + ".b"),
                                    cfg.init_stddev);
            } else {
                store.create(step_param(t), {r, static_cast<std::size_t>(V)});
                store.gaussian_init(step_param(t), init.stream(step_param(t)), cfg.init_stddev);
            }
        }
    }

    TabularAR probe;  // prefix_row helper with the fitted tying
    probe.vocab = V;
    probe.length = T;
    probe.tying = cfg.tying;

    auto build_loss = [&](Tape& tape) -> Value {
        std::vector<Value> logsm;
        logsm.reserve(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            Value logits;
            if (cfg.rank > 0)
                logits =
                    matmul(tape.param(step_param(t) + ".a"), tape.param(step_param(t) + ".b"));
            else
                logits = tape.param(step_param(t));
            logsm.push_back(log_softmax(logits));
        }
        auto seq_logp = [&](const std::vector<int>& seq) -> Value {
            Value lp;
            for (int t = 0; t < T; ++t) {
                const std::size_t r = probe.prefix_row(
                    t, std::span<const int>(seq).subspan(0, static_cast<std::size_t>(t)));
                Value term = pick(row(logsm[static_cast<std::size_t>(t)], r),
                                  static_cast<std::size_t>(seq[static_cast<std::size_t>(t)]));
                lp = t == 0 ? term : add(lp, term);
            }
            return lp;
        };

        Value loss = tape.scalar(0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::vector<int> seq = index_to_seq(i, V, T);
            switch (obj) {
                case FitObjective::ForwardKlMle: {
                    // Cross-entropy piece of KL(P||G); H(P) is constant.
                    if (p_joint[i] <= 0.0) continue;
                    loss = add(loss, scale(seq_logp(seq), -p_joint[i]));
                    break;
                }
                case FitObjective::InverseKlVsJudger: {
                    Value lp = seq_logp(seq);
                    Value g = exp(lp);
                    loss = add(loss, mul(g, sub(lp, tape.scalar(log_m[i]))));
                    break;
                }
                case FitObjective::JsdMixture: {
                    Value lp = seq_logp(seq);
                    Value g = exp(lp);
                    Value mix = add(scale(g, 0.5), tape.scalar(0.5 * target_joint[i]));
                    Value lmix = log(mix);
                    Value term = mul(scale(g, 0.5), sub(lp, lmix));
                    if (target_joint[i] > 0.0) {
                        const double pc = 0.5 * target_joint[i];
                        term = add(term, add(scale(lmix, -pc),
                                             tape.scalar(pc * std::log(target_joint[i]))));
                    }
                    loss = add(loss, term);
                    break;
                }
            }
        }
        return loss;
    };

    auto record = [&](int step, double objective) {
        const TabularAR g = materialize(store, V, T, cfg);
        const std::vector<double> gj = g.enumerate_joint();
        FitCurvePoint pt;
        pt.step = step;
        pt.objective = objective;
        pt.forward_kl = exact_divergence_joint(DivergenceKind::ForwardKl, target_joint, gj);
        pt.inverse_kl = exact_divergence_joint(DivergenceKind::InverseKl, target_joint, gj);
        pt.jsd = exact_divergence_joint(DivergenceKind::Jsd, target_joint, gj);
        result.curve.push_back(pt);
    };

    for (int step = 0; step < cfg.steps; ++step) {
        store.zero_grads();
        Tape tape(&store);
        Value loss = build_loss(tape);
        const double objective = loss.item();
        require(std::isfinite(objective), "fit: non-finite loss");
        if (step % cfg.curve_every == 0) record(step, objective);
        tape.backward(loss);
        store.adam_step(cfg.lr);
    }
    {
        Tape tape(&store, /*grad_enabled=*/false);
        record(cfg.steps, build_loss(tape).item());
    }
    result.model = materialize(store, V, T, cfg);
    return result;
}

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

namespace {

TabularAR::Tying parse_tying(const std::string& s) {
    if (s == "full") return TabularAR::Tying::Full;
    if (s == "markov1") return TabularAR::Tying::Markov1;
    if (s == "independent") return TabularAR::Tying::Independent;
    fail("lab spec: unknown tying '" + s + "'");
}

FitObjective parse_objective(const std::string& s) {
    if (s == "forward_kl_mle") return FitObjective::ForwardKlMle;
    if (s == "inverse_kl_vs_judger") return FitObjective::InverseKlVsJudger;
    if (s == "jsd_mixture") return FitObjective::JsdMixture;
    fail("lab spec: unknown objective '" + s + "'");
}

}  // namespace

LabSpec parse_lab_spec(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("lab spec: invalid JSON: ") + e.what());
    }
    LabSpec s;
    s.vocab = j.value("vocab", s.vocab);
    s.length = j.value("length", s.length);
    s.mode_mass = j.value("mode_mass", s.mode_mass);
    s.target_seed = j.value("target_seed", s.target_seed);
    s.junk_eps = j.value("junk_eps", s.junk_eps);
    if (j.contains("capacity")) {
        s.fit.tying = parse_tying(j["capacity"].value("tying", "independent"));
        s.fit.rank = j["capacity"].value("rank", 0);
    }
    s.fit.steps = j.value("steps", s.fit.steps);
    s.fit.lr = j.value("lr", s.fit.lr);
    s.fit.init_stddev = j.value("init_stddev", s.fit.init_stddev);
    s.fit.judger_samples = j.value("judger_samples", s.fit.judger_samples);
    s.fit.judger_steps = j.value("judger_steps", s.fit.judger_steps);
    s.fit.curve_every = j.value("curve_every", s.fit.curve_every);
    require(j.contains("objectives") && j["objectives"].is_array() && !j["objectives"].empty(),
            "lab spec: \"objectives\" must be a non-empty array");
    for (const auto& o : j["objectives"]) s.objectives.push_back(parse_objective(o));
    require(j.contains("seeds") && j["seeds"].is_array() && !j["seeds"].empty(),
            "lab spec: \"seeds\" must be a non-empty array");
    for (const auto& o : j["seeds"]) s.seeds.push_back(o.get<std::uint64_t>());
    require(s.vocab >= 2 && s.vocab <= 10, "lab spec: vocab must be in [2, 10]");
    require(s.length >= 1 && s.length <= 5, "lab spec: length must be in [1, 5]");
    require(s.mode_mass > 0.0 && s.mode_mass < 0.5, "lab spec: mode_mass must be in (0, 0.5)");
    require(s.fit.steps >= 1, "lab spec: steps must be >= 1");
    return s;
}

namespace {

nlohmann::json record_json(const LabSeedRecord& r) {
    nlohmann::json j;
    j["objective"] = fit_objective_name(r.objective);
    j["seed"] = r.seed;
    auto num = [](double v) {
        return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf");
    };
    j["forward_kl"] = num(r.forward_kl);
    j["inverse_kl"] = num(r.inverse_kl);
    j["jsd"] = num(r.jsd);
    j["junk_mass"] = r.junk_mass;
    j["mode_masses"] = r.mode_masses;
    j["modes_covered"] = r.modes_covered;
    return j;
}

}  // namespace

std::string LabReport::to_json() const {
    nlohmann::json j;
    j["format"] = "t2t-lab-report-v1";
    j["vocab"] = spec.vocab;
    j["length"] = spec.length;
    j["mode_mass"] = spec.mode_mass;
    j["target_seed"] = spec.target_seed;
    j["tau"] = tau;
    j["junk_eps"] = junk_eps;
    j["records"] = nlohmann::json::array();
    for (const LabSeedRecord& r : records) j["records"].push_back(record_json(r));
    return j.dump(2);
}

LabReport run_lab_experiment(const LabSpec& spec, const std::string& out_dir) {
    LabReport report;
    report.spec = spec;

    const PlantedTarget target =
        make_planted_bimodal(spec.vocab, spec.length, spec.mode_mass, Rng(spec.target_seed));
    const std::vector<double> pj = target.model.enumerate_joint();
    report.tau = 1.0 / (2.0 * static_cast<double>(target.modes.size()));
    report.junk_eps = spec.junk_eps > 0.0
                          ? spec.junk_eps
                          : 1.0 / (2.0 * static_cast<double>(target.model.joint_size()));

    struct CurveRow {
        std::uint64_t seed;
        FitCurvePoint pt;
    };
    std::map<std::string, std::vector<CurveRow>> curves;

    for (FitObjective obj : spec.objectives) {
        for (std::uint64_t seed : spec.seeds) {
            const FitResult fit =
                fit_tabular(obj, target.model, spec.fit, Rng(seed, fit_objective_name(obj)));
            const std::vector<double> gj = fit.model.enumerate_joint();

            LabSeedRecord rec;
            rec.objective = obj;
            rec.seed = seed;
            rec.forward_kl = exact_divergence_joint(DivergenceKind::ForwardKl, pj, gj);
            rec.inverse_kl = exact_divergence_joint(DivergenceKind::InverseKl, pj, gj);
            rec.jsd = exact_divergence_joint(DivergenceKind::Jsd, pj, gj);
            rec.junk_mass = kernels::blocked_sum(gj.size(), [&](std::size_t i) {
                return pj[i] < report.junk_eps ? gj[i] : 0.0;
            });
            for (const auto& mode : target.modes) {
                const double mass = gj[seq_to_index(mode, spec.vocab)];
                rec.mode_masses.push_back(mass);
                if (mass >= report.tau) rec.modes_covered += 1;
            }
            report.records.push_back(rec);
            for (const FitCurvePoint& pt : fit.curve)
                curves[fit_objective_name(obj)].push_back(CurveRow{seed, pt});
        }
    }

    if (!out_dir.empty()) {
        {
            std::ofstream f(out_dir + "/report.json", std::ios::binary);
            require(f.good(), "lab: cannot write report.json in '" + out_dir + "'");
            f << report.to_json() << '\n';
        }
        for (const auto& [name, rows] : curves) {
            std::ofstream f(out_dir + "/curves_" + name + ".csv", std::ios::binary);
            require(f.good(), "lab: cannot write curves CSV in '" + out_dir + "'");
            f << "seed,step,objective,forward_kl,inverse_kl,jsd\n";
            auto cell = [](double v) {
                return std::isfinite(v) ? format_double(v) : std::string("inf");
            };
            for (const CurveRow& r : rows) {
                f << r.seed << ',' << r.pt.step << ',' << cell(r.pt.objective) << ','
                  << cell(r.pt.forward_kl) << ',' << cell(r.pt.inverse_kl) << ','
                  << cell(r.pt.jsd) << '\n';
            }
            // One chart per objective: exact divergences vs step, per seed.
            std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
            for (std::uint64_t seed : spec.seeds) {
                std::vector<std::pair<double, double>> fkl, ikl;
                for (const CurveRow& r : rows) {
                    if (r.seed != seed) continue;
                    if (std::isfinite(r.pt.forward_kl))
                        fkl.emplace_back(r.pt.step, r.pt.forward_kl);
                    if (std::isfinite(r.pt.inverse_kl))
                        ikl.emplace_back(r.pt.step, r.pt.inverse_kl);
                }
                series.emplace_back("KL(P||G) seed " + std::to_string(seed), std::move(fkl));
                series.emplace_back("KL(G||P) seed " + std::to_string(seed), std::move(ikl));
            }
            write_svg_curves(out_dir + "/curves_" + name + ".svg", name, series);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// SVG helper
// ---------------------------------------------------------------------------

void write_svg_curves(
    const std::string& path, const std::string& title,
    const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series) {
    const int W = 760, H = 420, ml = 60, mr = 170, mt = 40, mb = 40;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& [name, pts] : series) {
        for (const auto& [x, y] : pts) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
                                    "#bcbd22", "#e377c2"};
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "svg: cannot open '" + path + "'");
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << ml << "\" y=\"" << H - mb + 16 << "\" font-size=\"10\">"
      << format_double(xmin) << "</text>\n";
    f << "<text x=\"" << W - mr << "\" y=\"" << H - mb + 16
      << "\" text-anchor=\"end\" font-size=\"10\">" << format_double(xmax) << "</text>\n";
    f << "<text x=\"" << ml - 6 << "\" y=\"" << H - mb
      << "\" text-anchor=\"end\" font-size=\"10\">" << format_double(ymin) << "</text>\n";
    f << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 4
      << "\" text-anchor=\"end\" font-size=\"10\">" << format_double(ymax) << "</text>\n";
    int idx = 0;
    for (const auto& [name, pts] : series) {
        const char* color = palette[idx % 10];
        if (!pts.empty()) {
            f << "<polyline fill=\"none\" stroke=\"" << color
              << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& [x, y] : pts) f << px(x) << ',' << py(y) << ' ';
            f << "\"/>\n";
        }
        f << "<text x=\"" << W - mr + 10 << "\" y=\"" << mt + 14 * idx + 10
          << "\" font-size=\"10\" fill=\"" << color << "\">" << name << "</text>\n";
        ++idx;
    }
    f << "</svg>\n";
    require(f.good(), "svg: write failed for '" + path + "'");
}

}  // namespace t2t
