#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t2t/pipeline.hpp"
#include "t2t/rng.hpp"
#include "t2t/seq2seq.hpp"

namespace t2t {

// ---------------------------------------------------------------------------
// word-overlap metrics
// ---------------------------------------------------------------------------

// Corpus-level BLEU-n in [0, 100]: geometric mean of clipped modified n-gram
// precisions (1..n) with brevity penalty. With smoothing on, zero match
// counts for n >= 2 get add-one smoothing (short sentences would otherwise
// zero the geometric mean).
double bleu_n(std::span<const std::vector<std::string>> candidates,
              std::span<const std::vector<std::string>> references, int n, bool smooth = true);

struct TerResult {
    int edits = 0;   // shifts + final Levenshtein distance
    int shifts = 0;
    double score = 0.0;  // edits / |reference|, may exceed 1
};

// Translation edit rate with greedy best-first block shifts; a shifted block
// must match the reference at its destination.
TerResult ter(std::span<const std::string> candidate, std::span<const std::string> reference);

struct MeteorStats {
    int matches = 0;
    int chunks = 0;
    std::size_t cand_len = 0;
    std::size_t ref_len = 0;
};

// Exact-match unigram alignment maximizing matches, then minimizing chunks.
MeteorStats meteor_stats(std::span<const std::string> candidate,
                         std::span<const std::string> reference);
// F_mean = 10PR / (R + 9P), penalty = 0.5 (chunks/matches)^3.
double meteor_score(const MeteorStats& s);
double meteor_exact(std::span<const std::string> candidate,
                    std::span<const std::string> reference);

// ---------------------------------------------------------------------------
// model-based metrics
// ---------------------------------------------------------------------------

// exp(- mean per-token log H(Y_hat | X)) over sequences sampled from the
// generator, scored by a frozen evaluation LM.
double forward_perplexity(const ConditionalSequenceModel& eval_lm,
                          const ConditionalSequenceModel& generator,
                          std::span<const EncodedExample> contexts, int samples_per_context,
                          std::size_t max_len, Rng rng);

struct PredicateAccuracyResult {
    double accuracy = 0.0;
    int correct = 0;
    int total = 0;
};

// For single-triple examples: the predicted predicate is the one whose
// substituted triple maximizes the generator's likelihood of the reference
// sentence. Ties keep the earliest predicate in canonical order (counted as
// an error unless it happens to be the true one).
PredicateAccuracyResult predicate_accuracy(const ConditionalSequenceModel& generator,
                                           std::span<const EncodedExample> eval_set,
                                           std::span<const std::string> predicates,
                                           const Vocab& src_vocab, TokenizerMode mode);

// ---------------------------------------------------------------------------
// corpus evaluation
// ---------------------------------------------------------------------------

struct MetricReport {
    double bleu3 = 0.0;
    double bleu4 = 0.0;
    double ter = 0.0;
    double meteor = 0.0;
    double fppl = 0.0;
    double pred_accuracy = 0.0;
    bool has_fppl = false;
    bool has_pred_accuracy = false;
    std::size_t pairs = 0;
    std::string decode_mode;  // "greedy" or "sample"
    double temperature = 1.0;
    std::uint64_t seed = 0;
    bool smoothed_bleu = true;

    std::string to_json() const;
    std::string to_csv() const;  // one row per metric
};

struct EvalOptions {
    bool greedy = true;
    double temperature = 1.0;
    std::uint64_t seed = 1;
    std::size_t max_len = 100;
    bool smooth_bleu = true;
    TokenizerMode tokenizer = TokenizerMode::Word;
    bool with_fppl = false;
    int fppl_samples_per_context = 1;
    bool with_predicate_accuracy = false;
    std::vector<std::string> predicates;  // canonical order
};

// Generates one sentence per example, relexicalizes it, and scores against
// the raw references. When out_dir is non-empty writes report.json,
// report.csv and outputs.txt (one relexicalized sentence per input line).
MetricReport corpus_evaluate(const ConditionalSequenceModel& generator,
                             const ConditionalSequenceModel* eval_lm,
                             std::span<const EncodedExample> split, const Vocab& tgt_vocab,
                             const Vocab& src_vocab, const EvalOptions& opts,
                             const std::string& out_dir = "");

// Ids -> relexicalized sentence (strips EOS/PAD, decodes, joins, relex).
std::string render_output(std::span<const int> ids, const Vocab& tgt_vocab,
                          const EntityMap& entities);

}  // namespace t2t
