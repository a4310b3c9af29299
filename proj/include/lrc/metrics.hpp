#pragma once

#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "lrc/corpus.hpp"
#include "lrc/model.hpp"
#include "lrc/util.hpp"

namespace lrc {

struct TraResult {
    size_t correct = 0;
    size_t total = 0;
    double tra = 0.0;
};

// Token-level reconstruction accuracy: the fraction of positions where the
// reconstruction matches exactly. Positions whose reference token is `pad`
// are excluded from the denominator (padding is a blockization artifact, not
// content); a block of nothing but padding falls back to scoring every
// position so the result stays well-defined.
inline TraResult tra(const std::vector<int32_t>& x, const std::vector<int32_t>& x_hat,
                     int32_t pad = -1) {
    if (x.size() != x_hat.size()) {
        throw ValidationError("tra: length mismatch, " + fmt_int((long long)x.size()) + " vs " +
                              fmt_int((long long)x_hat.size()));
    }
    TraResult r;
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] == pad) continue;
        ++r.total;
        if (x[i] == x_hat[i]) ++r.correct;
    }
    if (r.total == 0) {
        r.total = x.size();
        for (size_t i = 0; i < x.size(); ++i) {
            if (x[i] == x_hat[i]) ++r.correct;
        }
    }
    r.tra = r.total == 0 ? 0.0 : double(r.correct) / double(r.total);
    return r;
}

inline double random_guess_baseline(size_t vocab_size) {
    if (vocab_size < 1) throw ValidationError("baseline: vocab size must be >= 1");
    return 1.0 / double(vocab_size);
}

struct BlockEval {
    double loss = 0.0;  // nats/token over scored positions
    TraResult tra;
};

struct CorpusEval {
    size_t correct = 0;
    size_t total = 0;
    double mean_tra = 0.0;   // token-weighted
    double mean_loss = 0.0;  // token-weighted
    std::vector<BlockEval> per_block;
};

template <typename T>
void check_corpus_matches(const ModelConfig& cfg, const Corpus& corpus) {
    if (corpus.L != cfg.L || corpus.vocab_size != cfg.vocab_size) {
        throw ValidationError("config mismatch: corpus has L=" + fmt_int((long long)corpus.L) +
                              " V=" + fmt_int((long long)corpus.vocab_size) + ", model has L=" +
                              fmt_int((long long)cfg.L) + " V=" +
                              fmt_int((long long)cfg.vocab_size));
    }
    (void)sizeof(T);
}

template <typename T>
BlockEval evaluate_block(const ModelT<T>& model, const TokenBlock& x) {
    const int32_t pad = pad_id(model.cfg);
    auto rec = model.reconstruct(x, pad);
    BlockEval ev;
    ev.loss = *rec.loss;
    ev.tra = tra(x.tokens, rec.x_hat, pad);
    return ev;
}

// Token-weighted aggregate over a corpus with the per-block trace retained.
// Blocks are scored independently against a read-only model, so the work can
// fan out over threads; results land in per-block slots and the reduction
// runs in block order, keeping the output identical at any thread count.
template <typename T>
CorpusEval corpus_tra(const ModelT<T>& model, const Corpus& corpus) {
    check_corpus_matches<T>(model.cfg, corpus);
    CorpusEval ev;
    ev.per_block.resize(corpus.blocks.size());

    const size_t n_threads =
        std::min<size_t>(env_thread_cap(), std::max<size_t>(1, corpus.blocks.size()));
    auto worker = [&](size_t start) {
        for (size_t b = start; b < corpus.blocks.size(); b += n_threads) {
            ev.per_block[b] = evaluate_block(model, corpus.blocks[b]);
        }
    };
    if (n_threads <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
        for (auto& t : pool) t.join();
    }

    double loss_weighted = 0.0;
    for (const auto& b : ev.per_block) {
        ev.correct += b.tra.correct;
        ev.total += b.tra.total;
        loss_weighted += b.loss * double(b.tra.total);
    }
    ev.mean_tra = ev.total == 0 ? 0.0 : double(ev.correct) / double(ev.total);
    ev.mean_loss = ev.total == 0 ? 0.0 : loss_weighted / double(ev.total);
    return ev;
}

inline std::string eval_csv(const CorpusEval& ev) {
    std::string out = "block_index,loss_nats_per_token,tra\n";
    for (size_t i = 0; i < ev.per_block.size(); ++i) {
        out += fmt_int((long long)i) + "," + fmt_double(ev.per_block[i].loss) + "," +
               fmt_double(ev.per_block[i].tra.tra) + "\n";
    }
    return out;
}

}  // namespace lrc
