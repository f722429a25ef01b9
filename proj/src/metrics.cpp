#include "t2t/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"
#include "t2t/error.hpp"
#include "t2t/params.hpp"

namespace t2t {

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

namespace {

using Tokens = std::vector<std::string>;

std::map<std::vector<std::string>, int> ngram_counts(std::span<const std::string> s, int n) {
    std::map<std::vector<std::string>, int> counts;
    if (static_cast<int>(s.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
        counts[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                        s.begin() + static_cast<std::ptrdiff_t>(i) + n)] += 1;
    return counts;
}

}  // namespace

double bleu_n(std::span<const std::vector<std::string>> candidates,
              std::span<const std::vector<std::string>> references, int n, bool smooth) {
    require(n >= 1, "bleu: n must be >= 1");
    require(!candidates.empty(), "bleu: empty corpus");
    require(candidates.size() == references.size(), "bleu: candidate/reference count mismatch");

    std::vector<long long> match(static_cast<std::size_t>(n), 0);
    std::vector<long long> total(static_cast<std::size_t>(n), 0);
    long long cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_len += static_cast<long long>(candidates[i].size());
        ref_len += static_cast<long long>(references[i].size());
        for (int k = 1; k <= n; ++k) {
            const auto cc = ngram_counts(candidates[i], k);
            const auto rc = ngram_counts(references[i], k);
            for (const auto& [gram, c] : cc) {
                auto it = rc.find(gram);
                const int clipped = it == rc.end() ? 0 : std::min(c, it->second);
                match[static_cast<std::size_t>(k - 1)] += clipped;
                total[static_cast<std::size_t>(k - 1)] += c;
            }
        }
    }
    if (cand_len == 0) return 0.0;

    double log_prec = 0.0;
    for (int k = 1; k <= n; ++k) {
        long long m = match[static_cast<std::size_t>(k - 1)];
        long long t = total[static_cast<std::size_t>(k - 1)];
        if (smooth && k >= 2 && m == 0) {
            m += 1;
            t += 1;
        }
        if (m == 0 || t == 0) return 0.0;
        log_prec += std::log(static_cast<double>(m) / static_cast<double>(t));
    }
    const double bp =
        cand_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return 100.0 * bp * std::exp(log_prec / n);
}

// ---------------------------------------------------------------------------
// TER
// ---------------------------------------------------------------------------

namespace {

int levenshtein(std::span<const std::string> a, std::span<const std::string> b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

constexpr std::size_t kMaxShiftLen = 10;

// All single-shift successors of hyp: move block [i, i+l) to a position where
// it matches the reference.
std::vector<Tokens> shift_candidates(const Tokens& hyp, std::span<const std::string> ref) {
    std::vector<Tokens> out;
    for (std::size_t l = 1; l <= std::min(hyp.size(), kMaxShiftLen); ++l) {
        for (std::size_t i = 0; i + l <= hyp.size(); ++i) {
            for (std::size_t p = 0; p + l <= ref.size(); ++p) {
                bool match = true;
                for (std::size_t k = 0; k < l && match; ++k) match = hyp[i + k] == ref[p + k];
                if (!match) continue;
                Tokens rest;
                rest.reserve(hyp.size() - l);
                rest.insert(rest.end(), hyp.begin(),
                            hyp.begin() + static_cast<std::ptrdiff_t>(i));
                rest.insert(rest.end(), hyp.begin() + static_cast<std::ptrdiff_t>(i + l),
                            hyp.end());
                const std::size_t dst = std::min(p, rest.size());
                if (dst == i) continue;  // no movement
                Tokens moved = rest;
                moved.insert(moved.begin() + static_cast<std::ptrdiff_t>(dst),
                             hyp.begin() + static_cast<std::ptrdiff_t>(i),
                             hyp.begin() + static_cast<std::ptrdiff_t>(i + l));
                out.push_back(std::move(moved));
            }
        }
    }
    return out;
}

}  // namespace

TerResult ter(std::span<const std::string> candidate, std::span<const std::string> reference) {
    require(!reference.empty(), "ter: empty reference");
    TerResult r;
    Tokens cur(candidate.begin(), candidate.end());
    int cur_lev = levenshtein(cur, reference);
    while (cur_lev > 0) {
        int best_lev = cur_lev;
        Tokens best;
        for (Tokens& cand : shift_candidates(cur, reference)) {
            const int lev = levenshtein(cand, reference);
            if (lev < best_lev) {
                best_lev = lev;
                best = std::move(cand);
            }
        }
        if (best_lev >= cur_lev) break;  // no shift reduces the edit distance
        cur = std::move(best);
        cur_lev = best_lev;
        r.shifts += 1;
    }
    r.edits = r.shifts + cur_lev;
    r.score = static_cast<double>(r.edits) / static_cast<double>(reference.size());
    return r;
}

// ---------------------------------------------------------------------------
// METEOR (exact match)
// ---------------------------------------------------------------------------

namespace {

struct AlignSearch {
    std::span<const std::string> cand;
    std::span<const std::string> ref;
    std::map<std::string, int> quota;  // per-word matches still to place
    std::vector<char> ref_used;
    int best_chunks = 0;
    long long nodes = 0;
    bool exhausted = false;
    static constexpr long long kNodeBudget = 200000;

    // DFS over candidate positions; prev_ref is the ref index matched by the
    // previous candidate position (-2 when it was unmatched).
    void dfs(std::size_t ci, int prev_ref, int chunks, int remaining) {
        if (chunks >= best_chunks) return;  // prune
        if (++nodes > kNodeBudget) {
            exhausted = true;
            return;
        }
        if (remaining == 0) {
            best_chunks = chunks;
            return;
        }
        if (ci >= cand.size()) return;

        const std::string& w = cand[ci];
        auto it = quota.find(w);
        if (it != quota.end() && it->second > 0) {
            for (std::size_t rj = 0; rj < ref.size(); ++rj) {
                if (ref_used[rj] || ref[rj] != w) continue;
                ref_used[rj] = 1;
                it->second -= 1;
                const bool contiguous = prev_ref >= 0 && static_cast<int>(rj) == prev_ref + 1;
                dfs(ci + 1, static_cast<int>(rj), chunks + (contiguous ? 0 : 1), remaining - 1);
                it->second += 1;
                ref_used[rj] = 0;
                if (exhausted) return;
            }
        }
        // Leave this candidate position unmatched only if the quota can still
        // be met by later positions of the same word.
        int later = 0;
        for (std::size_t k = ci + 1; k < cand.size(); ++k)
            if (cand[k] == w) ++later;
        if (it == quota.end() || it->second <= later) dfs(ci + 1, -2, chunks, remaining);
    }
};

}  // namespace

MeteorStats meteor_stats(std::span<const std::string> candidate,
                         std::span<const std::string> reference) {
    require(!reference.empty(), "meteor: empty reference");
    MeteorStats s;
    s.cand_len = candidate.size();
    s.ref_len = reference.size();

    std::map<std::string, int> cc, rc;
    for (const auto& w : candidate) cc[w] += 1;
    for (const auto& w : reference) rc[w] += 1;
    int matches = 0;
    std::map<std::string, int> quota;
    for (const auto& [w, c] : cc) {
        auto it = rc.find(w);
        if (it == rc.end()) continue;
        const int q = std::min(c, it->second);
        quota[w] = q;
        matches += q;
    }
    s.matches = matches;
    if (matches == 0) {
        s.chunks = 0;
        return s;
    }

    AlignSearch search;
    search.cand = candidate;
    search.ref = reference;
    search.quota = quota;
    search.ref_used.assign(reference.size(), 0);
    search.best_chunks = matches + 1;  // worst case: every match its own chunk
    search.dfs(0, -2, 0, matches);
    s.chunks = std::min(search.best_chunks, matches);
    return s;
}

double meteor_score(const MeteorStats& s) {
    if (s.matches == 0 || s.cand_len == 0) return 0.0;
    const double p = static_cast<double>(s.matches) / static_cast<double>(s.cand_len);
    const double r = static_cast<double>(s.matches) / static_cast<double>(s.ref_len);
    const double f = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(s.chunks) / static_cast<double>(s.matches);
    return f * (1.0 - 0.5 * frag * frag * frag);
}

double meteor_exact(std::span<const std::string> candidate,
                    std::span<const std::string> reference) {
    return meteor_score(meteor_stats(candidate, reference));
}

// ---------------------------------------------------------------------------
// model-based metrics
// ---------------------------------------------------------------------------

double forward_perplexity(const ConditionalSequenceModel& eval_lm,
                          const ConditionalSequenceModel& generator,
                          std::span<const EncodedExample> contexts, int samples_per_context,
                          std::size_t max_len, Rng rng) {
    require(!contexts.empty(), "forward_perplexity: no contexts");
    require(samples_per_context >= 1, "forward_perplexity: samples_per_context must be >= 1");
    double log_sum = 0.0;
    std::size_t tokens = 0;
    std::uint64_t draw = 0;
    for (const EncodedExample& ex : contexts) {
        for (int s = 0; s < samples_per_context; ++s, ++draw) {
            const std::vector<int> y =
                sample_sequence(generator, ex.x, 1.0, max_len, rng.at(draw));
            if (y.empty()) continue;
            log_sum += sequence_log_prob_value(eval_lm, ex.x, y);
            tokens += y.size();
        }
    }
    require(tokens > 0, "forward_perplexity: no tokens generated");
    return std::exp(-log_sum / static_cast<double>(tokens));
}

PredicateAccuracyResult predicate_accuracy(const ConditionalSequenceModel& generator,
                                           std::span<const EncodedExample> eval_set,
                                           std::span<const std::string> predicates,
                                           const Vocab& src_vocab, TokenizerMode mode) {
    require(predicates.size() >= 2, "predicate_accuracy: need at least 2 predicates");
    require(!eval_set.empty(), "predicate_accuracy: empty eval set");
    PredicateAccuracyResult out;
    for (const EncodedExample& ex : eval_set) {
        require(ex.kb.triples.size() == 1,
                "predicate_accuracy: examples must have exactly one triple");
        const Triple& t = ex.kb.triples[0];
        const std::vector<int> y = clip_to_eos(ex.y);

        std::size_t best = 0;
        double best_lp = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < predicates.size(); ++i) {
            KnowledgeBase kb{{Triple{t.subject, predicates[i], t.object}}};
            const std::vector<int> x = src_vocab.encode(source_tokens(kb, mode));
            const double lp = sequence_log_prob_value(generator, x, y);
            if (lp > best_lp) {  // strict: ties keep the earliest predicate
                best_lp = lp;
                best = i;
            }
        }
        out.total += 1;
        if (predicates[best] == t.predicate) out.correct += 1;
    }
    out.accuracy = static_cast<double>(out.correct) / static_cast<double>(out.total);
    return out;
}

// ---------------------------------------------------------------------------
// corpus evaluation
// ---------------------------------------------------------------------------

std::string render_output(std::span<const int> ids, const Vocab& tgt_vocab,
                          const EntityMap& entities) {
    std::vector<std::string> toks;
    for (int id : ids) {
        if (id == kEosId) break;
        if (id == kPadId) continue;
        toks.push_back(tgt_vocab.token(id));
    }
    return relexicalize(join_tokens(toks), entities);
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["format"] = "t2t-report-v1";
    j["pairs"] = pairs;
    j["decode_mode"] = decode_mode;
    j["temperature"] = temperature;
    j["seed"] = seed;
    j["smoothed_bleu"] = smoothed_bleu;
    j["bleu3"] = bleu3;
    j["bleu4"] = bleu4;
    j["ter"] = ter;
    j["meteor"] = meteor;
    if (has_fppl) j["fppl"] = fppl;
    if (has_pred_accuracy) j["predicate_accuracy"] = pred_accuracy;
    return j.dump(2);
}

std::string MetricReport::to_csv() const {
    std::string s = "metric,value\n";
    s += "bleu3," + format_double(bleu3) + "\n";
    s += "bleu4," + format_double(bleu4) + "\n";
    s += "ter," + format_double(ter) + "\n";
    s += "meteor," + format_double(meteor) + "\n";
    if (has_fppl) s += "fppl," + format_double(fppl) + "\n";
    if (has_pred_accuracy) s += "predicate_accuracy," + format_double(pred_accuracy) + "\n";
    return s;
}

MetricReport corpus_evaluate(const ConditionalSequenceModel& generator,
                             const ConditionalSequenceModel* eval_lm,
                             std::span<const EncodedExample> split, const Vocab& tgt_vocab,
                             const Vocab& src_vocab, const EvalOptions& opts,
                             const std::string& out_dir) {
    require(!split.empty(), "corpus_evaluate: empty split");
    MetricReport report;
    report.pairs = split.size();
    report.decode_mode = opts.greedy ? "greedy" : "sample";
    report.temperature = opts.temperature;
    report.seed = opts.seed;
    report.smoothed_bleu = opts.smooth_bleu;

    Rng gen_rng(opts.seed, "generate");
    std::vector<std::string> outputs;
    std::vector<Tokens> cands, refs;
    outputs.reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        const EncodedExample& ex = split[i];
        const std::vector<int> ids =
            opts.greedy ? greedy_decode(generator, ex.x, opts.max_len)
                        : sample_sequence(generator, ex.x, opts.temperature, opts.max_len,
                                          gen_rng.at(i));
        const std::string sentence = render_output(ids, tgt_vocab, ex.entities);
        outputs.push_back(sentence);
        cands.push_back(tokenize(sentence, opts.tokenizer));
        refs.push_back(tokenize(ex.raw_text, opts.tokenizer));
    }

    report.bleu3 = bleu_n(cands, refs, 3, opts.smooth_bleu);
    report.bleu4 = bleu_n(cands, refs, 4, opts.smooth_bleu);

    long long edits = 0, ref_tokens = 0;
    MeteorStats agg;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        require(!refs[i].empty(), "corpus_evaluate: empty reference sentence");
        const TerResult tr = ter(cands[i], refs[i]);
        edits += tr.edits;
        ref_tokens += static_cast<long long>(refs[i].size());
        const MeteorStats ms = meteor_stats(cands[i], refs[i]);
        agg.matches += ms.matches;
        agg.chunks += ms.chunks;
        agg.cand_len += ms.cand_len;
        agg.ref_len += ms.ref_len;
    }
    report.ter = static_cast<double>(edits) / static_cast<double>(ref_tokens);
    report.meteor = meteor_score(agg);

    if (opts.with_fppl) {
        require(eval_lm != nullptr, "corpus_evaluate: FPPL requested without an eval LM");
        report.fppl =
            forward_perplexity(*eval_lm, generator, split, opts.fppl_samples_per_context,
                               opts.max_len, Rng(opts.seed, "fppl"));
        report.has_fppl = true;
    }
    if (opts.with_predicate_accuracy) {
        report.pred_accuracy =
            predicate_accuracy(generator, split, opts.predicates, src_vocab, opts.tokenizer)
                .accuracy;
        report.has_pred_accuracy = true;
    }

    if (!out_dir.empty()) {
        {
            std::ofstream f(out_dir + "/report.json", std::ios::binary);
            require(f.good(), "corpus_evaluate: cannot write report.json");
            f << report.to_json() << '\n';
        }
        {
            std::ofstream f(out_dir + "/report.csv", std::ios::binary);
            require(f.good(), "corpus_evaluate: cannot write report.csv");
            f << report.to_csv();
        }
        {
            std::ofstream f(out_dir + "/outputs.txt", std::ios::binary);
            require(f.good(), "corpus_evaluate: cannot write outputs.txt");
            for (const std::string& s : outputs) f << s << '\n';
        }
    }
    return report;
}

}  // namespace t2t
