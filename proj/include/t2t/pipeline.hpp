#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t2t/rng.hpp"
#include "t2t/seq2seq.hpp"

namespace t2t {

struct Triple {
    std::string subject;
    std::string predicate;
    std::string object;

    bool operator==(const Triple&) const = default;
};

struct KnowledgeBase {
    std::vector<Triple> triples;

    // 1..7 triples, all elements non-empty, no duplicate triples.
    void validate() const;
    bool operator==(const KnowledgeBase&) const = default;
};

// Ordered surface -> placeholder pairs for one example. Placeholders are
// unique within the map; reversible by construction.
struct EntityMap {
    std::vector<std::pair<std::string, std::string>> pairs;  // (surface, placeholder)

    const std::string* placeholder_for(const std::string& surface) const;
    const std::string* surface_for(const std::string& placeholder) const;
};

enum class TokenizerMode {
    Word,  // whitespace + punctuation splitting
    Char,  // one token per (non-space) UTF-8 codepoint
};

std::vector<std::string> tokenize(const std::string& text, TokenizerMode mode);
std::string join_tokens(std::span<const std::string> tokens);

// ---------------------------------------------------------------------------
// dataset records
// ---------------------------------------------------------------------------

struct Record {
    KnowledgeBase kb;
    std::string text;
    // surface -> type, as given by the dataset ("entities" field, optional).
    std::vector<std::pair<std::string, std::string>> entities;
};

// JSON-lines: {"triples":[[s,p,o],...],"text":"...","entities":{surface:type}}.
// Malformed lines raise t2t::Error naming the line number.
std::vector<Record> parse_dataset(const std::string& path);
Record parse_record(const std::string& line, std::size_t line_no);
void write_dataset(const std::string& path, std::span<const Record> records);
std::string record_to_json(const Record& r);

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

struct DelexExample {
    KnowledgeBase kb;      // typed triples
    std::string sentence;  // typed sentence
    std::string raw;       // original sentence, kept for evaluation
    EntityMap entities;
};

// Replaces entity surfaces by type placeholders in triples and sentence,
// longest surface first. Entities sharing a type get _1/_2... suffixes in
// order of first appearance. Subjects/objects without a type entry are left
// verbatim and recorded as identity pairs. With no typed entities at all this
// degenerates to identity delexicalization.
DelexExample delexicalize(const KnowledgeBase& kb, const std::string& sentence,
                          std::span<const std::pair<std::string, std::string>> entities);

// Inverse substitution; placeholder-shaped tokens missing from the map are
// left as-is and counted into *unknown when given.
std::string relexicalize(const std::string& sentence, const EntityMap& map,
                         std::size_t* unknown = nullptr);

// Up to max_perms distinct triple orderings, the original first, the rest
// drawn without replacement via a seeded shuffle. Sentence and entity map are
// shared unchanged.
std::vector<DelexExample> permute_augment(const DelexExample& ex, std::size_t max_perms,
                                          Rng rng);

// "s , p , o ; s , p , o" with multi-word elements split on whitespace.
std::string linearize(const KnowledgeBase& kb);

// Source-side tokens of the linearized triples. Char mode splits non-ASCII
// element words per codepoint but keeps separators and placeholders whole.
std::vector<std::string> source_tokens(const KnowledgeBase& kb, TokenizerMode mode);

// ---------------------------------------------------------------------------
// vocabulary and encoding
// ---------------------------------------------------------------------------

class Vocab {
public:
    Vocab();

    static Vocab build(std::span<const std::vector<std::string>> corpus, std::size_t min_freq);
    // Reconstruct from the id -> token table (reserved entries included).
    static Vocab from_tokens(std::vector<std::string> tokens);

    int id(const std::string& token) const;  // kUnkId when unknown
    const std::string& token(int id) const;
    bool contains(const std::string& token) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::vector<int> encode(std::span<const std::string> tokens) const;
    std::vector<std::string> decode(std::span<const int> ids) const;

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

struct EncodedExample {
    std::vector<int> x;  // linearized triples, PAD-filled to the batch length
    std::vector<int> y;  // sentence ids ending with EOS, PAD-filled
    EntityMap entities;
    KnowledgeBase kb;      // delexicalized triples (for likelihood probes)
    std::string raw_text;  // original reference sentence
};

// Token ids with EOS appended to y and PAD fill up to the given lengths
// (which must already account for EOS). Over-length sequences are truncated;
// *truncated reports it so callers can log. Empty targets are an error.
EncodedExample encode_pad(const DelexExample& ex, const Vocab& src_vocab,
                          const Vocab& tgt_vocab, TokenizerMode mode, std::size_t pad_src_to,
                          std::size_t pad_tgt_to, bool* truncated = nullptr);

// ---------------------------------------------------------------------------
// corpus-level plumbing used by training and the CLI
// ---------------------------------------------------------------------------

struct PipelineOptions {
    TokenizerMode tokenizer = TokenizerMode::Word;
    std::size_t max_perms = 3;
    std::size_t min_freq = 1;
    std::size_t max_src_len = 100;
    std::size_t max_tgt_len = 100;
    bool augment = true;
    std::uint64_t seed = 1;
};

struct PreparedCorpus {
    std::vector<EncodedExample> examples;
    Vocab src_vocab;
    Vocab tgt_vocab;
    std::size_t truncated = 0;
};

// Full preprocessing of the training split: delexicalize, permutation-
// augment, linearize, build vocabularies, encode.
PreparedCorpus prepare_corpus(std::span<const Record> records, const PipelineOptions& opts);

// Same pipeline against fixed vocabularies (validation/test splits; no
// augmentation).
std::vector<EncodedExample> prepare_with_vocabs(std::span<const Record> records,
                                                const Vocab& src_vocab, const Vocab& tgt_vocab,
                                                const PipelineOptions& opts,
                                                std::size_t* truncated = nullptr);

// Encoded-dataset cache: header line with both vocabularies, then one JSON
// object per example.
void save_cache(const std::string& path, const PreparedCorpus& corpus);
PreparedCorpus load_cache(const std::string& path);

}  // namespace t2t
