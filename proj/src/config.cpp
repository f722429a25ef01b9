#include "t2t/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "t2t/error.hpp"

namespace t2t {

namespace {

const char* tokenizer_name(TokenizerMode m) {
    return m == TokenizerMode::Word ? "word" : "char";
}

TokenizerMode parse_tokenizer(const std::string& s) {
    if (s == "word") return TokenizerMode::Word;
    if (s == "char") return TokenizerMode::Char;
    fail("config: unknown tokenizer '" + s + "' (expected \"word\" or \"char\")");
}

}  // namespace

void RunConfig::validate() const {
    training.validate();
    require(pipeline.max_src_len >= 1 && pipeline.max_tgt_len >= 2,
            "config: pipeline max lengths too small");
    require(generate.temperature > 0.0, "config: generate.temperature must be > 0");
    require(generate.max_len >= 1, "config: generate.max_len must be >= 1");
}

std::string RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["dataset"] = dataset;
    j["val_dataset"] = val_dataset;
    j["out_dir"] = out_dir;
    j["eval_lm"] = eval_lm;

    nlohmann::json m;
    m["embed_dim"] = model.embed_dim;
    m["hidden_dim"] = model.hidden_dim;
    m["output_dim"] = model.output_dim;
    m["attention"] = model.attention;
    m["paper_init"] = model.paper_init;
    j["model"] = m;

    nlohmann::json t;
    t["m"] = training.judger_steps_per_round;
    t["g"] = training.generator_steps_per_round;
    t["lr"] = training.lr;
    t["batch_size"] = training.batch_size;
    t["pretrain_epochs"] = training.pretrain_epochs;
    t["max_rounds"] = training.max_rounds;
    t["grad_estimator"] = grad_estimator_name(training.grad_estimator);
    t["rollout_max_len"] = training.rollout_max_len;
    t["eval_every"] = training.eval_every;
    t["patience"] = training.patience;
    t["checkpoint_every"] = training.checkpoint_every;
    j["training"] = t;

    nlohmann::json p;
    p["tokenizer"] = tokenizer_name(pipeline.tokenizer);
    p["max_perms"] = pipeline.max_perms;
    p["min_freq"] = pipeline.min_freq;
    p["max_src_len"] = pipeline.max_src_len;
    p["max_tgt_len"] = pipeline.max_tgt_len;
    p["augment"] = pipeline.augment;
    j["pipeline"] = p;

    nlohmann::json g;
    g["decode"] = generate.greedy ? "greedy" : "sample";
    g["temperature"] = generate.temperature;
    g["max_len"] = generate.max_len;
    j["generate"] = g;

    nlohmann::json e;
    e["fppl"] = evaluate.with_fppl;
    e["fppl_samples"] = evaluate.fppl_samples_per_context;
    e["predicate_accuracy"] = evaluate.with_predicate_accuracy;
    e["smooth_bleu"] = evaluate.smooth_bleu;
    j["evaluate"] = e;

    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("config: invalid JSON: ") + e.what());
    }
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.dataset = j.value("dataset", c.dataset);
    c.val_dataset = j.value("val_dataset", c.val_dataset);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.eval_lm = j.value("eval_lm", c.eval_lm);

    if (j.contains("model")) {
        const auto& m = j["model"];
        c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
        c.model.hidden_dim = m.value("hidden_dim", c.model.hidden_dim);
        c.model.output_dim = m.value("output_dim", c.model.output_dim);
        c.model.attention = m.value("attention", c.model.attention);
        c.model.paper_init = m.value("paper_init", c.model.paper_init);
    }
    if (j.contains("training")) {
        const auto& t = j["training"];
        c.training.judger_steps_per_round = t.value("m", c.training.judger_steps_per_round);
        c.training.generator_steps_per_round =
            t.value("g", c.training.generator_steps_per_round);
        c.training.lr = t.value("lr", c.training.lr);
        c.training.batch_size = t.value("batch_size", c.training.batch_size);
        c.training.pretrain_epochs = t.value("pretrain_epochs", c.training.pretrain_epochs);
        c.training.max_rounds = t.value("max_rounds", c.training.max_rounds);
        if (t.contains("grad_estimator"))
            c.training.grad_estimator =
                parse_grad_estimator(t["grad_estimator"].get<std::string>());
        c.training.rollout_max_len = t.value("rollout_max_len", c.training.rollout_max_len);
        c.training.eval_every = t.value("eval_every", c.training.eval_every);
        c.training.patience = t.value("patience", c.training.patience);
        c.training.checkpoint_every = t.value("checkpoint_every", c.training.checkpoint_every);
    }
    if (j.contains("pipeline")) {
        const auto& p = j["pipeline"];
        if (p.contains("tokenizer"))
            c.pipeline.tokenizer = parse_tokenizer(p["tokenizer"].get<std::string>());
        c.pipeline.max_perms = p.value("max_perms", c.pipeline.max_perms);
        c.pipeline.min_freq = p.value("min_freq", c.pipeline.min_freq);
        c.pipeline.max_src_len = p.value("max_src_len", c.pipeline.max_src_len);
        c.pipeline.max_tgt_len = p.value("max_tgt_len", c.pipeline.max_tgt_len);
        c.pipeline.augment = p.value("augment", c.pipeline.augment);
    }
    if (j.contains("generate")) {
        const auto& g = j["generate"];
        if (g.contains("decode")) {
            const std::string d = g["decode"].get<std::string>();
            require(d == "greedy" || d == "sample",
                    "config: generate.decode must be \"greedy\" or \"sample\"");
            c.generate.greedy = d == "greedy";
        }
        c.generate.temperature = g.value("temperature", c.generate.temperature);
        c.generate.max_len = g.value("max_len", c.generate.max_len);
    }
    if (j.contains("evaluate")) {
        const auto& e = j["evaluate"];
        c.evaluate.with_fppl = e.value("fppl", c.evaluate.with_fppl);
        c.evaluate.fppl_samples_per_context =
            e.value("fppl_samples", c.evaluate.fppl_samples_per_context);
        c.evaluate.with_predicate_accuracy =
            e.value("predicate_accuracy", c.evaluate.with_predicate_accuracy);
        c.evaluate.smooth_bleu = e.value("smooth_bleu", c.evaluate.smooth_bleu);
    }
    // Pipeline lengths bound the model's sequence lengths.
    c.model.max_src_len = c.pipeline.max_src_len;
    c.model.max_tgt_len = c.pipeline.max_tgt_len;
    c.pipeline.seed = c.seed;
    c.training.seed = c.seed;
    c.evaluate.seed = c.seed;
    c.evaluate.tokenizer = c.pipeline.tokenizer;
    c.evaluate.max_len = c.generate.max_len;
    c.evaluate.greedy = c.generate.greedy;
    c.evaluate.temperature = c.generate.temperature;
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

void RunConfig::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "config: cannot write '" + path + "'");
    f << to_json() << '\n';
}

ModelConfig infer_model_config(const ParameterStore& store, const std::string& prefix,
                               std::size_t max_src_len, std::size_t max_tgt_len) {
    auto shape = [&](const char* name) -> const std::vector<std::size_t>& {
        return store.value(prefix + name).shape();
    };
    ModelConfig cfg;
    cfg.vocab_src = shape("src_emb")[0];
    cfg.vocab_tgt = shape("tgt_emb")[0];
    cfg.embed_dim = shape("src_emb")[1];
    cfg.hidden_dim = shape("enc.w_hh")[1];
    cfg.output_dim = shape("out.w")[1];
    cfg.max_src_len = max_src_len;
    cfg.max_tgt_len = max_tgt_len;
    cfg.attention = true;
    cfg.validate();
    return cfg;
}

std::string version_stamp() { return "triple2text 0.1.0"; }

}  // namespace t2t
