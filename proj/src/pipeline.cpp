#include "t2t/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "t2t/error.hpp"

namespace t2t {

namespace {
const char* kReserved[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

// ---------------------------------------------------------------------------
// basic types
// ---------------------------------------------------------------------------

void KnowledgeBase::validate() const {
    require(!triples.empty(), "knowledge base: no triples");
    require(triples.size() <= 7,
            "knowledge base: " + std::to_string(triples.size()) + " triples exceeds 7");
    for (const Triple& t : triples) {
        require(!t.subject.empty() && !t.predicate.empty() && !t.object.empty(),
                "knowledge base: empty triple element");
    }
    for (std::size_t i = 0; i < triples.size(); ++i)
        for (std::size_t j = i + 1; j < triples.size(); ++j)
            require(!(triples[i] == triples[j]), "knowledge base: duplicate triple");
}

const std::string* EntityMap::placeholder_for(const std::string& surface) const {
    for (const auto& [s, p] : pairs)
        if (s == surface) return &p;
    return nullptr;
}

const std::string* EntityMap::surface_for(const std::string& placeholder) const {
    for (const auto& [s, p] : pairs)
        if (p == placeholder) return &s;
    return nullptr;
}

// ---------------------------------------------------------------------------
// tokenization
// ---------------------------------------------------------------------------

namespace {

bool is_space_byte(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct_byte(char c) {
    static const std::string punct = ".,;:!?\"'()[]{}";
    return punct.find(c) != std::string::npos;
}

std::size_t utf8_len(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead & 0xE0) == 0xC0) return 2;
    if ((lead & 0xF0) == 0xE0) return 3;
    if ((lead & 0xF8) == 0xF0) return 4;
    return 1;  // invalid byte, treat as a single unit
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text, TokenizerMode mode) {
    std::vector<std::string> out;
    if (mode == TokenizerMode::Word) {
        std::string cur;
        for (char c : text) {
            if (is_space_byte(c)) {
                if (!cur.empty()) out.push_back(std::exchange(cur, {}));
            } else if (is_punct_byte(c)) {
                if (!cur.empty()) out.push_back(std::exchange(cur, {}));
                out.emplace_back(1, c);
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) out.push_back(cur);
    } else {
        for (std::size_t i = 0; i < text.size();) {
            const std::size_t n =
                std::min(utf8_len(static_cast<unsigned char>(text[i])), text.size() - i);
            if (!is_space_byte(text[i])) out.push_back(text.substr(i, n));
            i += n;
        }
    }
    return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) s += ' ';
        s += tokens[i];
    }
    return s;
}

// ---------------------------------------------------------------------------
// dataset records
// ---------------------------------------------------------------------------

Record parse_record(const std::string& line, std::size_t line_no) {
    const std::string where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail(where + "invalid JSON (" + e.what() + ")");
    }
    require(j.is_object(), where + "expected a JSON object");
    require(j.contains("triples"), where + "missing \"triples\"");
    require(j.contains("text"), where + "missing \"text\"");
    require(j["triples"].is_array() && !j["triples"].empty(),
            where + "\"triples\" must be a non-empty array");
    Record r;
    for (const auto& t : j["triples"]) {
        require(t.is_array() && t.size() == 3, where + "each triple must be [s, p, o]");
        r.kb.triples.push_back(
            Triple{t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
    }
    try {
        r.kb.validate();
    } catch (const Error& e) {
        fail(where + e.what());
    }
    require(j["text"].is_string(), where + "\"text\" must be a string");
    r.text = j["text"].get<std::string>();
    if (j.contains("entities")) {
        require(j["entities"].is_object(), where + "\"entities\" must be an object");
        for (auto it = j["entities"].begin(); it != j["entities"].end(); ++it)
            r.entities.emplace_back(it.key(), it.value().get<std::string>());
    }
    return r;
}

std::vector<Record> parse_dataset(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "dataset: cannot open '" + path + "'");
    std::vector<Record> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        out.push_back(parse_record(line, line_no));
    }
    return out;
}

std::string record_to_json(const Record& r) {
    nlohmann::json j;
    j["triples"] = nlohmann::json::array();
    for (const Triple& t : r.kb.triples)
        j["triples"].push_back(nlohmann::json::array({t.subject, t.predicate, t.object}));
    j["text"] = r.text;
    if (!r.entities.empty()) {
        nlohmann::json e = nlohmann::json::object();
        for (const auto& [surface, type] : r.entities) e[surface] = type;
        j["entities"] = e;
    }
    return j.dump();
}

void write_dataset(const std::string& path, std::span<const Record> records) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "dataset: cannot open '" + path + "' for writing");
    for (const Record& r : records) f << record_to_json(r) << '\n';
    require(f.good(), "dataset: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// delexicalization
// ---------------------------------------------------------------------------

namespace {

std::size_t replace_all(std::string& s, const std::string& from, const std::string& to) {
    std::size_t count = 0;
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
        ++count;
    }
    return count;
}

}  // namespace

DelexExample delexicalize(const KnowledgeBase& kb, const std::string& sentence,
                          std::span<const std::pair<std::string, std::string>> entities) {
    // Deduplicate surfaces, then order by first occurrence in the sentence
    // (absent surfaces last) so the _1/_2 numbering is content-determined.
    std::vector<std::pair<std::string, std::string>> ents;
    for (const auto& e : entities) {
        bool seen = false;
        for (const auto& got : ents) seen = seen || got.first == e.first;
        if (!seen && !e.first.empty()) ents.push_back(e);
    }
    std::stable_sort(ents.begin(), ents.end(), [&](const auto& a, const auto& b) {
        const std::size_t pa = sentence.find(a.first);
        const std::size_t pb = sentence.find(b.first);
        if (pa != pb) return pa < pb;
        return a.first < b.first;
    });

    std::map<std::string, std::size_t> type_total;
    for (const auto& [surface, type] : ents) type_total[type] += 1;

    DelexExample out;
    out.kb = kb;
    out.sentence = sentence;
    out.raw = sentence;
    std::map<std::string, std::size_t> type_seen;
    for (const auto& [surface, type] : ents) {
        std::string placeholder = type;
        if (type_total[type] > 1) {
            type_seen[type] += 1;
            placeholder += "_" + std::to_string(type_seen[type]);
        }
        out.entities.pairs.emplace_back(surface, placeholder);
    }

    // Longest surface first so contained surfaces cannot clobber longer ones.
    std::vector<std::size_t> order(out.entities.pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return out.entities.pairs[a].first.size() > out.entities.pairs[b].first.size();
    });
    for (std::size_t idx : order) {
        const auto& [surface, placeholder] = out.entities.pairs[idx];
        replace_all(out.sentence, surface, placeholder);
        for (Triple& t : out.kb.triples) {
            if (t.subject == surface) t.subject = placeholder;
            if (t.object == surface) t.object = placeholder;
        }
    }

    // Untyped subjects/objects stay verbatim; record them as identity so the
    // map lists every entity of the example.
    for (const Triple& t : out.kb.triples) {
        for (const std::string* el : {&t.subject, &t.object}) {
            if (out.entities.surface_for(*el) == nullptr &&
                out.entities.placeholder_for(*el) == nullptr) {
                out.entities.pairs.emplace_back(*el, *el);
            }
        }
    }
    return out;
}

std::string relexicalize(const std::string& sentence, const EntityMap& map,
                         std::size_t* unknown) {
    std::string out = sentence;
    // Longest placeholder first so TYPE_12 is not eaten by TYPE_1 or TYPE.
    std::vector<std::size_t> order(map.pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return map.pairs[a].second.size() > map.pairs[b].second.size();
    });
    for (std::size_t idx : order) {
        const auto& [surface, placeholder] = map.pairs[idx];
        if (placeholder == surface) continue;
        replace_all(out, placeholder, surface);
    }
    if (unknown) {
        // Placeholder-shaped leftovers: uppercase run, optional _<digits>.
        *unknown = 0;
        std::size_t i = 0;
        while (i < out.size()) {
            if (out[i] >= 'A' && out[i] <= 'Z') {
                std::size_t j = i;
                while (j < out.size() && out[j] >= 'A' && out[j] <= 'Z') ++j;
                std::size_t k = j;
                if (k < out.size() && out[k] == '_') {
                    ++k;
                    while (k < out.size() && out[k] >= '0' && out[k] <= '9') ++k;
                    if (k == j + 1) k = j;  // bare underscore, not a suffix
                }
                const std::string tok = out.substr(i, k - i);
                if (tok.size() >= 2 && map.surface_for(tok) == nullptr) *unknown += 1;
                i = k;
            } else {
                ++i;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// permutation augmentation and linearization
// ---------------------------------------------------------------------------

std::vector<DelexExample> permute_augment(const DelexExample& ex, std::size_t max_perms,
                                          Rng rng) {
    require(max_perms >= 1, "permute_augment: max_perms must be >= 1");
    const std::size_t n = ex.kb.triples.size();
    std::vector<DelexExample> out;
    out.push_back(ex);
    if (n <= 1 || max_perms == 1) return out;

    // Enumerate every non-identity ordering of indices (n <= 7, so <= 5039).
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::vector<std::size_t>> orders;
    std::vector<std::size_t> perm = idx;
    while (std::next_permutation(perm.begin(), perm.end())) orders.push_back(perm);
    rng.shuffle(orders);

    const std::size_t want = std::min(max_perms - 1, orders.size());
    for (std::size_t i = 0; i < want; ++i) {
        DelexExample copy = ex;
        for (std::size_t k = 0; k < n; ++k) copy.kb.triples[k] = ex.kb.triples[orders[i][k]];
        out.push_back(std::move(copy));
    }
    return out;
}

std::string linearize(const KnowledgeBase& kb) {
    require(!kb.triples.empty(), "linearize: empty knowledge base");
    std::vector<std::string> toks;
    auto push_words = [&toks](const std::string& element) {
        for (std::string& w : tokenize(element, TokenizerMode::Word))
            toks.push_back(std::move(w));
    };
    for (std::size_t i = 0; i < kb.triples.size(); ++i) {
        if (i) toks.emplace_back(";");
        push_words(kb.triples[i].subject);
        toks.emplace_back(",");
        push_words(kb.triples[i].predicate);
        toks.emplace_back(",");
        push_words(kb.triples[i].object);
    }
    return join_tokens(toks);
}

namespace {

bool placeholder_shaped(const std::string& tok) {
    if (tok.size() < 2) return false;
    std::size_t i = 0;
    while (i < tok.size() && tok[i] >= 'A' && tok[i] <= 'Z') ++i;
    if (i == 0) return false;
    if (i == tok.size()) return true;
    if (tok[i] != '_') return false;
    ++i;
    if (i == tok.size()) return false;
    while (i < tok.size() && tok[i] >= '0' && tok[i] <= '9') ++i;
    return i == tok.size();
}

}  // namespace

std::vector<std::string> source_tokens(const KnowledgeBase& kb, TokenizerMode mode) {
    std::vector<std::string> toks = tokenize(linearize(kb), TokenizerMode::Word);
    if (mode == TokenizerMode::Word) return toks;
    std::vector<std::string> out;
    for (const std::string& tok : toks) {
        if (tok == "," || tok == ";" || placeholder_shaped(tok)) {
            out.push_back(tok);
            continue;
        }
        for (std::string& c : tokenize(tok, TokenizerMode::Char)) out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

Vocab::Vocab() {
    for (int i = 0; i < 4; ++i) {
        tokens_.emplace_back(kReserved[i]);
        index_[kReserved[i]] = i;
    }
}

Vocab Vocab::build(std::span<const std::vector<std::string>> corpus, std::size_t min_freq) {
    std::map<std::string, std::size_t> freq;
    for (const auto& sent : corpus)
        for (const std::string& tok : sent) freq[tok] += 1;
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : freq) {
        if (n < min_freq) continue;
        bool reserved = false;
        for (const char* r : kReserved) reserved = reserved || tok == r;
        if (!reserved) kept.emplace_back(tok, n);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (auto& [tok, n] : kept) {
        v.index_[tok] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(tok);
    }
    return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    require(tokens.size() >= 4, "vocab: token table too short");
    for (int i = 0; i < 4; ++i)
        require(tokens[static_cast<std::size_t>(i)] == kReserved[i],
                "vocab: reserved token mismatch at id " + std::to_string(i));
    Vocab v;
    v.tokens_ = std::move(tokens);
    v.index_.clear();
    for (std::size_t i = 0; i < v.tokens_.size(); ++i)
        v.index_[v.tokens_[i]] = static_cast<int>(i);
    return v;
}

int Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(),
            "vocab: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(const std::string& token) const { return index_.count(token) != 0; }

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const std::string& t : tokens) ids.push_back(id(t));
    return ids;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
}

// ---------------------------------------------------------------------------
// encoding
// ---------------------------------------------------------------------------

EncodedExample encode_pad(const DelexExample& ex, const Vocab& src_vocab,
                          const Vocab& tgt_vocab, TokenizerMode mode, std::size_t pad_src_to,
                          std::size_t pad_tgt_to, bool* truncated) {
    std::vector<std::string> src = source_tokens(ex.kb, mode);
    std::vector<std::string> tgt = tokenize(ex.sentence, mode);
    require(!tgt.empty(), "encode: empty target sentence");
    require(pad_src_to >= 1 && pad_tgt_to >= 2, "encode: pad lengths too small");

    bool cut = false;
    if (src.size() > pad_src_to) {
        src.resize(pad_src_to);
        cut = true;
    }
    if (tgt.size() > pad_tgt_to - 1) {  // room for EOS
        tgt.resize(pad_tgt_to - 1);
        cut = true;
    }
    if (truncated) *truncated = cut;

    EncodedExample out;
    out.x = src_vocab.encode(src);
    out.x.resize(pad_src_to, kPadId);
    out.y = tgt_vocab.encode(tgt);
    out.y.push_back(kEosId);
    out.y.resize(pad_tgt_to, kPadId);
    out.entities = ex.entities;
    out.kb = ex.kb;
    out.raw_text = ex.raw;
    return out;
}

// ---------------------------------------------------------------------------
// corpus plumbing
// ---------------------------------------------------------------------------

namespace {

std::vector<DelexExample> preprocess_records(std::span<const Record> records,
                                             const PipelineOptions& opts) {
    std::vector<DelexExample> out;
    Rng perm_rng = Rng(opts.seed, "permute");
    for (std::size_t i = 0; i < records.size(); ++i) {
        DelexExample d = delexicalize(records[i].kb, records[i].text, records[i].entities);
        if (opts.augment && opts.max_perms > 1) {
            for (auto& e : permute_augment(d, opts.max_perms, perm_rng.at(i)))
                out.push_back(std::move(e));
        } else {
            out.push_back(std::move(d));
        }
    }
    return out;
}

EncodedExample encode_one(const DelexExample& d, const Vocab& sv, const Vocab& tv,
                          const PipelineOptions& opts, std::size_t* truncated_count) {
    const std::vector<std::string> st = source_tokens(d.kb, opts.tokenizer);
    const std::vector<std::string> tt = tokenize(d.sentence, opts.tokenizer);
    const std::size_t src_len = std::min(st.size(), opts.max_src_len);
    const std::size_t tgt_len = std::min(tt.size() + 1, opts.max_tgt_len);
    bool cut = false;
    EncodedExample enc = encode_pad(d, sv, tv, opts.tokenizer,
                                    std::max<std::size_t>(src_len, 1),
                                    std::max<std::size_t>(tgt_len, 2), &cut);
    if (cut && truncated_count) ++*truncated_count;
    return enc;
}

}  // namespace

PreparedCorpus prepare_corpus(std::span<const Record> records, const PipelineOptions& opts) {
    PreparedCorpus out;
    const std::vector<DelexExample> prepped = preprocess_records(records, opts);

    std::vector<std::vector<std::string>> src_corpus, tgt_corpus;
    src_corpus.reserve(prepped.size());
    tgt_corpus.reserve(prepped.size());
    for (const DelexExample& d : prepped) {
        src_corpus.push_back(source_tokens(d.kb, opts.tokenizer));
        tgt_corpus.push_back(tokenize(d.sentence, opts.tokenizer));
    }
    out.src_vocab = Vocab::build(src_corpus, opts.min_freq);
    out.tgt_vocab = Vocab::build(tgt_corpus, opts.min_freq);

    for (const DelexExample& d : prepped)
        out.examples.push_back(encode_one(d, out.src_vocab, out.tgt_vocab, opts, &out.truncated));
    return out;
}

std::vector<EncodedExample> prepare_with_vocabs(std::span<const Record> records,
                                                const Vocab& src_vocab, const Vocab& tgt_vocab,
                                                const PipelineOptions& opts,
                                                std::size_t* truncated) {
    PipelineOptions no_aug = opts;
    no_aug.augment = false;
    std::vector<EncodedExample> out;
    for (const DelexExample& d : preprocess_records(records, no_aug))
        out.push_back(encode_one(d, src_vocab, tgt_vocab, no_aug, truncated));
    return out;
}

// ---------------------------------------------------------------------------
// cache
// ---------------------------------------------------------------------------

void save_cache(const std::string& path, const PreparedCorpus& corpus) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cache: cannot open '" + path + "' for writing");
    nlohmann::json header;
    header["format"] = "t2t-cache-v1";
    header["src_vocab"] = corpus.src_vocab.tokens();
    header["tgt_vocab"] = corpus.tgt_vocab.tokens();
    f << header.dump() << '\n';
    for (const EncodedExample& e : corpus.examples) {
        nlohmann::json j;
        j["x"] = e.x;
        j["y"] = e.y;
        nlohmann::json ents = nlohmann::json::array();
        for (const auto& [s, p] : e.entities.pairs) ents.push_back({s, p});
        j["entities"] = ents;
        nlohmann::json kb = nlohmann::json::array();
        for (const Triple& t : e.kb.triples) kb.push_back({t.subject, t.predicate, t.object});
        j["kb"] = kb;
        j["raw_text"] = e.raw_text;
        f << j.dump() << '\n';
    }
    require(f.good(), "cache: write failed for '" + path + "'");
}

PreparedCorpus load_cache(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cache: cannot open '" + path + "'");
    std::string line;
    require(static_cast<bool>(std::getline(f, line)), "cache: empty file '" + path + "'");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("cache: bad header: ") + e.what());
    }
    require(header.value("format", "") == "t2t-cache-v1", "cache: unsupported format");
    PreparedCorpus out;
    out.src_vocab = Vocab::from_tokens(header.at("src_vocab").get<std::vector<std::string>>());
    out.tgt_vocab = Vocab::from_tokens(header.at("tgt_vocab").get<std::vector<std::string>>());
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail("cache: line " + std::to_string(line_no) + ": " + e.what());
        }
        EncodedExample e;
        e.x = j.at("x").get<std::vector<int>>();
        e.y = j.at("y").get<std::vector<int>>();
        for (const auto& pr : j.at("entities"))
            e.entities.pairs.emplace_back(pr.at(0).get<std::string>(),
                                          pr.at(1).get<std::string>());
        for (const auto& t : j.at("kb"))
            e.kb.triples.push_back(Triple{t.at(0).get<std::string>(),
                                          t.at(1).get<std::string>(),
                                          t.at(2).get<std::string>()});
        e.raw_text = j.value("raw_text", "");
        out.examples.push_back(std::move(e));
    }
    return out;
}

}  // namespace t2t
