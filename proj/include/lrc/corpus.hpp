#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lrc/model.hpp"
#include "lrc/rng.hpp"
#include "lrc/util.hpp"

namespace lrc {

enum class Tier { in_domain, semi_ood, full_ood, ingested };

inline const char* tier_name(Tier t) {
    switch (t) {
        case Tier::in_domain: return "in_domain";
        case Tier::semi_ood: return "semi_ood";
        case Tier::full_ood: return "full_ood";
        case Tier::ingested: return "ingested";
    }
    return "?";
}

struct Corpus {
    std::string name;
    Tier tier = Tier::ingested;
    size_t L = 0;
    size_t vocab_size = 0;
    std::vector<TokenBlock> blocks;
};

// Byte-level tokenizer: token id == byte value, plus one PAD id at V-1.
inline int32_t pad_id(const ModelConfig& cfg) { return int32_t(cfg.vocab_size) - 1; }

inline std::vector<int32_t> tokenize(const std::string& bytes) {
    std::vector<int32_t> ids(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) ids[i] = static_cast<unsigned char>(bytes[i]);
    return ids;
}

inline std::string detokenize(const std::vector<int32_t>& ids, int32_t pad = 256) {
    std::string out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        if (id == pad) continue;
        if (id < 0 || id > 255) {
            throw ValidationError("detokenize: id " + fmt_int(id) + " is not a byte");
        }
        out.push_back(static_cast<char>(id));
    }
    return out;
}

namespace grammar {

// Words shared between the two structured grammars, so the tiers overlap in
// byte vocabulary (semi-OOD means same alphabet, different structure).
inline const std::vector<std::string>& word_pool() {
    static const std::vector<std::string> pool = {
        "alpha", "beta",  "count", "data",  "delta", "echo",  "field", "gamma",
        "index", "item",  "limit", "node",  "omega", "point", "queue", "range",
        "scale", "shape", "sigma", "state", "table", "token", "total", "value"};
    return pool;
}

}  // namespace grammar

struct GrammarSpec {
    enum class Kind { code_like, text_like };
    Kind kind = Kind::code_like;
    uint64_t seed = 0;
    size_t size = 0;          // block count
    size_t max_depth = 2;     // code: max call-nesting depth
    size_t ident_pool = 24;   // identifiers drawn from the front of the shared pool
    size_t markov_order = 2;  // text: context length in words
};

namespace detail {

// Chops a byte stream into exactly `count` L-token blocks. The stream must be
// long enough; generators overproduce and truncate.
inline std::vector<TokenBlock> blockize(const std::string& bytes, size_t L, size_t count) {
    std::vector<TokenBlock> blocks(count);
    for (size_t b = 0; b < count; ++b) {
        blocks[b].tokens.resize(L);
        for (size_t i = 0; i < L; ++i) {
            blocks[b].tokens[i] = static_cast<unsigned char>(bytes[b * L + i]);
        }
    }
    return blocks;
}

// ---- code_like: a context-free mini-language --------------------------------
//
//   stmt   := ident " = " expr ";\n"
//           | "if (" ident " < " number ") { " stmt-no-newline " }\n"
//   expr   := term | term " + " term
//   term   := ident | number | ident "(" args ")"
//   args   := expr | expr ", " expr
//
// Every statement is bracket-balanced by construction.

class CodeGrammar {
public:
    CodeGrammar(const GrammarSpec& spec, Rng rng) : spec_(spec), rng_(rng) {
        n_idents_ = std::min(spec.ident_pool, grammar::word_pool().size());
        if (n_idents_ == 0) n_idents_ = 1;
    }

    std::string statement() {
        std::string out;
        if (rng_.uniform_int(8) == 0) {
            out = "if (" + ident() + " < " + number() + ") { " + assign() + " }\n";
        } else {
            out = assign() + "\n";
        }
        return out;
    }

private:
    std::string assign() { return ident() + " = " + expr(spec_.max_depth) + ";"; }

    std::string expr(size_t depth) {
        if (rng_.uniform_int(3) == 0) return term(depth) + " + " + term(depth);
        return term(depth);
    }

    std::string term(size_t depth) {
        const uint64_t pick = rng_.uniform_int(4);
        if (pick == 0) return number();
        if (pick == 1 && depth > 0) {
            std::string args = expr(depth - 1);
            if (rng_.uniform_int(2) == 0) args += ", " + expr(depth - 1);
            return ident() + "(" + args + ")";
        }
        return ident();
    }

    std::string ident() { return grammar::word_pool()[rng_.uniform_int(n_idents_)]; }
    std::string number() { return fmt_int((long long)rng_.uniform_int(100)); }

    GrammarSpec spec_;
    Rng rng_;
    size_t n_idents_ = 0;
};

// ---- text_like: order-k Markov chain over the shared word pool --------------
//
// The transition structure is a pure function of the context words (hashed),
// NOT of the sample seed, so every text_like corpus is drawn from one fixed
// distribution and corpora with different seeds are different samples of it.

class TextChain {
public:
    TextChain(const GrammarSpec& spec, Rng rng) : rng_(rng) {
        order_ = std::max<size_t>(1, spec.markov_order);
        n_words_ = std::min(spec.ident_pool, grammar::word_pool().size());
        if (n_words_ < 2) n_words_ = 2;
        context_.assign(order_, 0);
    }

    std::string sentence() {
        std::string out;
        const size_t len = 6 + rng_.uniform_int(7);
        for (size_t i = 0; i < len; ++i) {
            if (i > 0) out += (rng_.uniform_int(9) == 0) ? ", " : " ";
            out += next_word();
        }
        out += ".\n";
        return out;
    }

private:
    std::string next_word() {
        // Four allowed successors per context, fixed weights 8:4:2:2.
        uint64_t h = 0xa0761d6478bd642full;
        for (size_t w : context_) h = fnv1a64(&w, sizeof(w), h);
        static constexpr uint64_t weights[4] = {8, 4, 2, 2};
        const uint64_t roll = rng_.uniform_int(16);
        uint64_t acc = 0;
        size_t next = 0;
        for (size_t i = 0; i < 4; ++i) {
            acc += weights[i];
            next = (h >> (i * 8)) % n_words_;
            if (roll < acc) break;
        }
        context_.erase(context_.begin());
        context_.push_back(next);
        return grammar::word_pool()[next];
    }

    Rng rng_;
    size_t order_ = 2;
    size_t n_words_ = 0;
    std::vector<size_t> context_;
};

template <typename Gen>
Corpus generate(const char* name, Tier tier, const ModelConfig& cfg, size_t count, Gen&& piece) {
    Corpus c;
    c.name = name;
    c.tier = tier;
    c.L = cfg.L;
    c.vocab_size = cfg.vocab_size;
    std::string bytes;
    bytes.reserve(count * cfg.L + 128);
    while (bytes.size() < count * cfg.L) bytes += piece();
    c.blocks = blockize(bytes, cfg.L, count);
    return c;
}

}  // namespace detail

inline Corpus gen_code_like(const GrammarSpec& spec, const ModelConfig& cfg) {
    if (spec.kind != GrammarSpec::Kind::code_like) {
        throw ValidationError("gen_code_like: spec kind is not code_like");
    }
    detail::CodeGrammar g(spec, Rng(spec.seed).fork(0x1c0de));
    return detail::generate("code_like", Tier::in_domain, cfg, spec.size,
                            [&g] { return g.statement(); });
}

inline Corpus gen_text_like(const GrammarSpec& spec, const ModelConfig& cfg) {
    if (spec.kind != GrammarSpec::Kind::text_like) {
        throw ValidationError("gen_text_like: spec kind is not text_like");
    }
    detail::TextChain chain(spec, Rng(spec.seed).fork(0x7e77));
    return detail::generate("text_like", Tier::semi_ood, cfg, spec.size,
                            [&chain] { return chain.sentence(); });
}

// i.i.d. uniform tokens over the byte range; PAD never appears.
inline Corpus gen_random(uint64_t seed, size_t size, const ModelConfig& cfg) {
    if (size < 1) throw ValidationError("gen_random: size must be >= 1");
    Corpus c;
    c.name = "random";
    c.tier = Tier::full_ood;
    c.L = cfg.L;
    c.vocab_size = cfg.vocab_size;
    Rng rng = Rng(seed).fork(0xf00d);
    c.blocks.resize(size);
    for (auto& b : c.blocks) {
        b.tokens.resize(cfg.L);
        for (auto& t : b.tokens) {
            t = static_cast<int32_t>(rng.uniform_int(cfg.vocab_size - 1));
        }
    }
    return c;
}

inline Corpus ingest_bytes(const std::string& bytes, const ModelConfig& cfg,
                           const std::string& name) {
    if (bytes.empty()) throw IoError("ingest: " + name + " is empty");
    Corpus c;
    c.name = name;
    c.tier = Tier::ingested;
    c.L = cfg.L;
    c.vocab_size = cfg.vocab_size;
    const int32_t pad = pad_id(cfg);
    const size_t n_blocks = (bytes.size() + cfg.L - 1) / cfg.L;
    c.blocks.resize(n_blocks);
    for (size_t b = 0; b < n_blocks; ++b) {
        auto& toks = c.blocks[b].tokens;
        toks.assign(cfg.L, pad);
        const size_t begin = b * cfg.L;
        const size_t end = std::min(bytes.size(), begin + cfg.L);
        for (size_t i = begin; i < end; ++i) {
            toks[i - begin] = static_cast<unsigned char>(bytes[i]);
        }
    }
    return c;
}

inline Corpus ingest_file(const std::string& path, const ModelConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on " + path);
    return ingest_bytes(bytes, cfg, std::filesystem::path(path).filename().string());
}

// Deterministic 90/10 split by block index; every tenth block is validation.
inline std::pair<Corpus, Corpus> split_corpus(const Corpus& c) {
    Corpus train = c, val = c;
    train.blocks.clear();
    val.blocks.clear();
    train.name = c.name + ".train";
    val.name = c.name + ".val";
    for (size_t i = 0; i < c.blocks.size(); ++i) {
        ((i % 10 == 9) ? val : train).blocks.push_back(c.blocks[i]);
    }
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Corpus file format "LRC1": magic, u32 V, u32 L, u32 block_count (all
// little-endian), then block_count * L little-endian u16 token ids.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const std::string& s, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(s[off + i])) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string corpus_to_bytes(const Corpus& c) {
    std::string out = "LRC1";
    detail::put_u32(out, uint32_t(c.vocab_size));
    detail::put_u32(out, uint32_t(c.L));
    detail::put_u32(out, uint32_t(c.blocks.size()));
    for (const auto& b : c.blocks) {
        for (int32_t t : b.tokens) {
            out.push_back(char(t & 0xff));
            out.push_back(char((t >> 8) & 0xff));
        }
    }
    return out;
}

inline Corpus corpus_from_bytes(const std::string& s, const std::string& name) {
    if (s.size() < 16 || s.compare(0, 4, "LRC1") != 0) {
        throw IoError(name + ": not a corpus file (bad magic)");
    }
    Corpus c;
    c.name = name;
    c.vocab_size = detail::get_u32(s, 4);
    c.L = detail::get_u32(s, 8);
    const size_t count = detail::get_u32(s, 12);
    const size_t need = 16 + count * c.L * 2;
    if (c.vocab_size < 2 || c.L == 0) throw IoError(name + ": corrupt corpus header");
    if (s.size() != need) {
        throw IoError(name + ": corpus payload is " + fmt_int((long long)(s.size() - 16)) +
                      " bytes, header promises " + fmt_int((long long)(need - 16)));
    }
    c.blocks.resize(count);
    size_t off = 16;
    for (auto& b : c.blocks) {
        b.tokens.resize(c.L);
        for (auto& t : b.tokens) {
            t = int32_t(uint8_t(s[off])) | (int32_t(uint8_t(s[off + 1])) << 8);
            off += 2;
            if (size_t(t) >= c.vocab_size) {
                throw IoError(name + ": token id " + fmt_int(t) + " exceeds vocab " +
                              fmt_int((long long)c.vocab_size));
            }
        }
    }
    return c;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const std::string bytes = corpus_to_bytes(c);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed on " + path);
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return corpus_from_bytes(bytes, std::filesystem::path(path).filename().string());
}

}  // namespace lrc
