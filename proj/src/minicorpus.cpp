#include "t2t/minicorpus.hpp"

#include <algorithm>

#include "json.hpp"
#include "t2t/error.hpp"
#include "t2t/rng.hpp"

namespace t2t {

void MiniCorpusSpec::validate() const {
    require(!predicates.empty(), "corpus spec: no predicates");
    require(train_count >= 1 && test_count >= 0, "corpus spec: bad counts");
    require(min_triples >= 1 && min_triples <= max_triples && max_triples <= 7,
            "corpus spec: triple range must satisfy 1 <= min <= max <= 7");
    for (const auto& p : predicates) {
        require(!p.name.empty(), "corpus spec: unnamed predicate");
        require(!p.clauses.empty(), "corpus spec: predicate '" + p.name + "' has no clauses");
        for (const auto& c : p.clauses)
            require(c.find("{S}") != std::string::npos && c.find("{O}") != std::string::npos,
                    "corpus spec: clause of '" + p.name + "' must contain {S} and {O}");
        for (const std::string* type : {&p.subject_type, &p.object_type}) {
            auto it = entity_pools.find(*type);
            require(it != entity_pools.end() && !it->second.empty(),
                    "corpus spec: empty entity pool for type '" + *type + "'");
        }
    }
    require(static_cast<int>(predicates.size()) >= max_triples,
            "corpus spec: need at least max_triples distinct predicates");
}

std::string MiniCorpusSpec::to_json() const {
    nlohmann::json j;
    j["train_count"] = train_count;
    j["test_count"] = test_count;
    j["min_triples"] = min_triples;
    j["max_triples"] = max_triples;
    j["predicates"] = nlohmann::json::array();
    for (const auto& p : predicates) {
        nlohmann::json pj;
        pj["name"] = p.name;
        pj["subject_type"] = p.subject_type;
        pj["object_type"] = p.object_type;
        pj["clauses"] = p.clauses;
        j["predicates"].push_back(pj);
    }
    nlohmann::json pools = nlohmann::json::object();
    for (const auto& [type, surfaces] : entity_pools) pools[type] = surfaces;
    j["entity_pools"] = pools;
    return j.dump(2);
}

MiniCorpusSpec MiniCorpusSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("corpus spec: invalid JSON: ") + e.what());
    }
    MiniCorpusSpec s;
    s.train_count = j.value("train_count", s.train_count);
    s.test_count = j.value("test_count", s.test_count);
    s.min_triples = j.value("min_triples", s.min_triples);
    s.max_triples = j.value("max_triples", s.max_triples);
    require(j.contains("predicates"), "corpus spec: missing \"predicates\"");
    for (const auto& pj : j["predicates"]) {
        PredicateRule p;
        p.name = pj.at("name").get<std::string>();
        p.subject_type = pj.at("subject_type").get<std::string>();
        p.object_type = pj.at("object_type").get<std::string>();
        p.clauses = pj.at("clauses").get<std::vector<std::string>>();
        s.predicates.push_back(std::move(p));
    }
    require(j.contains("entity_pools"), "corpus spec: missing \"entity_pools\"");
    for (auto it = j["entity_pools"].begin(); it != j["entity_pools"].end(); ++it)
        s.entity_pools[it.key()] = it.value().get<std::vector<std::string>>();
    s.validate();
    return s;
}

MiniCorpusSpec MiniCorpusSpec::default_spec() {
    MiniCorpusSpec s;
    s.entity_pools["PERSON"] = {
        "Ada Lovelace",   "Alan Turing",    "Grace Hopper",  "Kurt Goedel",
        "Emmy Noether",   "Leonhard Euler", "Sofia Kovalevskaya", "David Hilbert",
        "Mary Jackson",   "Katherine Johnson", "John von Neumann", "Claude Shannon",
        "Barbara Liskov", "Donald Knuth",   "Edsger Dijkstra",    "Margaret Hamilton",
        "Niklaus Wirth",  "Dennis Ritchie", "Radia Perlman",      "Tim Berners-Lee",
    };
    s.entity_pools["CITY"] = {
        "Paris",  "London", "Vienna",  "Boston", "Madrid",   "Lisbon",
        "Zurich", "Oslo",   "Kyoto",   "Turin",  "Krakow",   "Porto",
    };
    s.entity_pools["COUNTRY"] = {
        "France", "England", "Austria", "Spain",  "Portugal", "Switzerland",
        "Norway", "Japan",   "Italy",   "Poland",
    };
    s.entity_pools["TEAM"] = {
        "Acme Labs",     "Nimbus Works", "Vector Guild", "Quartz Union",
        "Falcon Bureau", "Cobalt House", "Aurora Forge", "Zephyr Society",
    };
    s.entity_pools["FOOD"] = {
        "ratatouille", "goulash",  "paella", "risotto",
        "pierogi",     "fondue",   "ramen",  "pastel de nata",
    };
    s.entity_pools["LANGUAGE"] = {
        "French", "German", "Spanish", "Japanese", "Italian", "Polish", "Norwegian",
    };

    auto add = [&s](const char* name, const char* st, const char* ot,
                    std::vector<std::string> clauses) {
        s.predicates.push_back(PredicateRule{name, st, ot, std::move(clauses)});
    };
    add("bornIn", "PERSON", "CITY", {"{S} was born in {O}", "{S} comes from {O}"});
    add("livesIn", "PERSON", "CITY", {"{S} lives in {O}", "{S} resides in {O}"});
    add("mayorOf", "PERSON", "CITY", {"{S} is the mayor of {O}", "{S} governs {O}"});
    add("studiedIn", "PERSON", "CITY",
        {"{S} studied in {O}", "{S} completed school in {O}"});
    add("leaderOf", "PERSON", "COUNTRY", {"{S} is the leader of {O}", "{S} leads {O}"});
    add("visited", "PERSON", "COUNTRY", {"{S} visited {O}", "{S} traveled to {O}"});
    add("worksFor", "PERSON", "TEAM", {"{S} works for {O}", "{S} is employed by {O}"});
    add("founded", "PERSON", "TEAM", {"{S} founded {O}", "{S} established {O}"});
    add("speaks", "PERSON", "LANGUAGE", {"{S} speaks {O}", "{S} is fluent in {O}"});
    add("capitalOf", "CITY", "COUNTRY",
        {"{S} is the capital of {O}", "{S} serves as the capital city of {O}"});
    add("locatedIn", "CITY", "COUNTRY",
        {"{S} is located in {O}", "{S} can be found in {O}"});
    add("knownFor", "CITY", "FOOD", {"{S} is known for {O}", "{S} is famous for {O}"});
    add("dishOf", "FOOD", "COUNTRY",
        {"{S} is a traditional dish of {O}", "{S} originates from {O}"});
    add("officialLanguage", "COUNTRY", "LANGUAGE",
        {"the official language of {S} is {O}", "{S} uses {O} in official documents"});
    add("twinnedWith", "CITY", "CITY", {"{S} is twinned with {O}", "{S} partners with {O}"});
    s.validate();
    return s;
}

MiniCorpusSpec MiniCorpusSpec::predicate_probe_spec() {
    MiniCorpusSpec s;
    s.entity_pools["PERSON"] = {
        "Ada Lovelace", "Alan Turing",   "Grace Hopper",   "Kurt Goedel",
        "Emmy Noether", "Donald Knuth",  "Radia Perlman",  "Claude Shannon",
    };
    s.entity_pools["CITY"] = {"Paris", "London", "Vienna", "Boston", "Madrid", "Oslo"};
    auto add = [&s](const char* name, std::vector<std::string> clauses) {
        s.predicates.push_back(PredicateRule{name, "PERSON", "CITY", std::move(clauses)});
    };
    // One template per predicate, pairwise disjoint content words.
    add("bornIn", {"{S} was born in {O}"});
    add("livesIn", {"{S} currently lives near {O}"});
    add("mayorOf", {"{S} governs the city of {O}"});
    add("studiedIn", {"{S} completed school around {O}"});
    add("avoided", {"{S} never wanted to visit {O}"});
    s.train_count = 300;
    s.test_count = 100;
    s.min_triples = 1;
    s.max_triples = 1;
    s.validate();
    return s;
}

namespace {

std::string instantiate(const std::string& tmpl, const std::string& subject,
                        const std::string& object) {
    std::string out = tmpl;
    const auto s_pos = out.find("{S}");
    out.replace(s_pos, 3, subject);
    const auto o_pos = out.find("{O}");
    out.replace(o_pos, 3, object);
    return out;
}

Record make_record(const MiniCorpusSpec& spec, std::size_t index, Rng rng) {
    const std::size_t n_preds = spec.predicates.size();
    const int n =
        spec.min_triples +
        static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(spec.max_triples - spec.min_triples + 1)));

    // First predicate cycles round-robin; the rest are drawn distinct.
    std::vector<std::size_t> chosen{index % n_preds};
    while (static_cast<int>(chosen.size()) < n) {
        const std::size_t c = rng.uniform_int(n_preds);
        if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) chosen.push_back(c);
    }

    Record r;
    std::vector<std::string> clauses;
    for (std::size_t pi : chosen) {
        const auto& rule = spec.predicates[pi];
        const auto& spool = spec.entity_pools.at(rule.subject_type);
        const auto& opool = spec.entity_pools.at(rule.object_type);
        std::string subject = spool[rng.uniform_int(spool.size())];
        std::string object = opool[rng.uniform_int(opool.size())];
        while (object == subject) object = opool[rng.uniform_int(opool.size())];
        const std::string& clause =
            rule.clauses[rng.uniform_int(rule.clauses.size())];
        clauses.push_back(instantiate(clause, subject, object));
        r.kb.triples.push_back(Triple{subject, rule.name, object});
        auto note = [&r](const std::string& surface, const std::string& type) {
            for (const auto& [s, t] : r.entities)
                if (s == surface) return;
            r.entities.emplace_back(surface, type);
        };
        note(subject, rule.subject_type);
        note(object, rule.object_type);
    }
    std::string sentence = clauses[0];
    for (std::size_t i = 1; i < clauses.size(); ++i) sentence += " and " + clauses[i];
    sentence += " .";
    r.text = sentence;
    return r;
}

}  // namespace

MiniCorpus make_mini_corpus(const MiniCorpusSpec& spec, std::uint64_t seed) {
    spec.validate();
    MiniCorpus out;
    Rng root(seed, "mini-corpus");
    for (int i = 0; i < spec.train_count + spec.test_count; ++i) {
        Record r = make_record(spec, static_cast<std::size_t>(i),
                               root.at(static_cast<std::uint64_t>(i)));
        if (i < spec.train_count)
            out.train.push_back(std::move(r));
        else
            out.test.push_back(std::move(r));
    }
    return out;
}

}  // namespace t2t
