#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "t2t/pipeline.hpp"

namespace t2t {

// Grammar for deterministic synthetic (knowledge base, sentence) pairs: each
// predicate has typed slots and clause templates; sentences are conjunctions
// of the clauses of their triples, so every pair is consistent by
// construction.
struct MiniCorpusSpec {
    struct PredicateRule {
        std::string name;
        std::string subject_type;
        std::string object_type;
        std::vector<std::string> clauses;  // templates with {S} and {O}
    };

    std::vector<PredicateRule> predicates;
    std::map<std::string, std::vector<std::string>> entity_pools;  // type -> surfaces
    int train_count = 500;
    int test_count = 100;
    int min_triples = 1;
    int max_triples = 3;

    void validate() const;
    std::string to_json() const;
    static MiniCorpusSpec from_json(const std::string& text);

    // Stand-in for a small data-to-text corpus: ~15 predicates over a few
    // entity types, 1-3 triples per example.
    static MiniCorpusSpec default_spec();
    // Five single-triple predicates with strongly separable templates, for
    // predicate-accuracy probes.
    static MiniCorpusSpec predicate_probe_spec();
};

struct MiniCorpus {
    std::vector<Record> train;
    std::vector<Record> test;
};

// Deterministic for (spec, seed). The first triple's predicate cycles
// round-robin so every predicate appears at least floor(count/P) times.
MiniCorpus make_mini_corpus(const MiniCorpusSpec& spec, std::uint64_t seed);

}  // namespace t2t
