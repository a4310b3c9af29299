#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "lrc/corpus.hpp"
#include "lrc/metrics.hpp"
#include "lrc/model.hpp"
#include "lrc/util.hpp"

namespace lrc {

// Sentinel "expert" meaning no registered compressor owns this block.
inline constexpr const char* kNovel = "NOVEL";

struct ExpertEntry {
    std::string id;
    Model model;
    std::string checkpoint_path;  // empty when the expert lives only in memory
};

// Ordered collection of domain experts. Order is meaningful: it is the
// routing tie-break and the column order of every report.
class ExpertRegistry {
public:
    void register_expert(std::string id, Model model, std::string checkpoint_path = "") {
        if (id.empty() || id == kNovel) {
            throw ValidationError("registry: expert id '" + id + "' is reserved");
        }
        if (has(id)) throw ValidationError("registry: duplicate expert id '" + id + "'");
        if (!experts_.empty()) {
            const auto& first = experts_.front().model.cfg;
            if (model.cfg.L != first.L || model.cfg.vocab_size != first.vocab_size) {
                throw ValidationError("config mismatch: expert '" + id + "' has L=" +
                                      fmt_int((long long)model.cfg.L) + " V=" +
                                      fmt_int((long long)model.cfg.vocab_size) +
                                      ", registry requires L=" + fmt_int((long long)first.L) +
                                      " V=" + fmt_int((long long)first.vocab_size));
            }
        }
        experts_.push_back({std::move(id), std::move(model), std::move(checkpoint_path)});
    }

    bool has(const std::string& id) const {
        for (const auto& e : experts_) {
            if (e.id == id) return true;
        }
        return false;
    }

    size_t size() const { return experts_.size(); }
    bool empty() const { return experts_.empty(); }
    ExpertEntry& operator[](size_t i) { return experts_[i]; }
    const ExpertEntry& operator[](size_t i) const { return experts_[i]; }

    auto begin() const { return experts_.begin(); }
    auto end() const { return experts_.end(); }

private:
    std::vector<ExpertEntry> experts_;
};

struct ExpertScore {
    std::string id;
    double loss = 0.0;
    double tra = 0.0;
};

struct RoutingDecision {
    std::vector<ExpertScore> scores;  // registration order
    std::string selected;             // expert id or kNovel
    double tra_accept = 0.0;
};

// Pure decision rule, separated from scoring so its invariances (argmin under
// monotone loss transforms, registration-order tie-break) are testable on
// synthetic score tables.
inline RoutingDecision decide_from_scores(std::vector<ExpertScore> scores, double tra_accept) {
    if (scores.empty()) throw ValidationError("route: no experts registered");
    if (!(tra_accept >= 0.0 && tra_accept <= 1.0)) {
        throw ValidationError("route: tra_accept must lie in [0, 1], got " +
                              fmt_double(tra_accept));
    }
    size_t best = 0;
    for (size_t i = 1; i < scores.size(); ++i) {
        if (scores[i].loss < scores[best].loss) best = i;  // ties keep the earlier expert
    }
    RoutingDecision d;
    d.selected = scores[best].tra < tra_accept ? kNovel : scores[best].id;
    d.tra_accept = tra_accept;
    d.scores = std::move(scores);
    return d;
}

// Every expert reconstructs the block independently; the reconstruction
// quality itself is the routing signal, there is no learned gate.
inline std::vector<ExpertScore> score_block(const ExpertRegistry& registry,
                                            const TokenBlock& x) {
    if (registry.empty()) throw ValidationError("route: no experts registered");
    std::vector<ExpertScore> scores;
    scores.reserve(registry.size());
    for (const auto& e : registry) {
        auto ev = evaluate_block(e.model, x);
        scores.push_back({e.id, ev.loss, ev.tra.tra});
    }
    return scores;
}

inline RoutingDecision route(const ExpertRegistry& registry, const TokenBlock& x,
                             double tra_accept) {
    return decide_from_scores(score_block(registry, x), tra_accept);
}

struct LabelStats {
    size_t correct = 0;
    size_t total = 0;
};

struct RouteTrace {
    std::vector<RoutingDecision> decisions;  // corpus order
    std::vector<std::string> labels;         // empty when the corpus is unlabeled
    std::map<std::string, LabelStats> per_label;
    size_t correct = 0;
    size_t total = 0;
    double accuracy = 0.0;  // over labeled blocks only
};

// Routes every block in corpus order. When labels are supplied (one per
// block, naming the expected expert id or NOVEL), the trace carries routing
// accuracy per label. Blocks are scored in parallel up to the thread cap;
// the trace itself is assembled sequentially so output never depends on
// scheduling.
inline RouteTrace route_stream(const ExpertRegistry& registry, const Corpus& corpus,
                               double tra_accept,
                               const std::vector<std::string>& labels = {}) {
    if (registry.empty()) throw ValidationError("route: no experts registered");
    if (!registry.empty()) {
        check_corpus_matches<float>(registry[0].model.cfg, corpus);
    }
    if (!labels.empty() && labels.size() != corpus.blocks.size()) {
        throw ValidationError("route: " + fmt_int((long long)labels.size()) + " labels for " +
                              fmt_int((long long)corpus.blocks.size()) + " blocks");
    }
    RouteTrace trace;
    trace.labels = labels;
    trace.decisions.resize(corpus.blocks.size());

    const size_t n_threads =
        std::min<size_t>(env_thread_cap(), std::max<size_t>(1, corpus.blocks.size()));
    auto worker = [&](size_t start) {
        for (size_t b = start; b < corpus.blocks.size(); b += n_threads) {
            trace.decisions[b] = decide_from_scores(score_block(registry, corpus.blocks[b]),
                                                    tra_accept);
        }
    };
    if (n_threads <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
        for (auto& t : pool) t.join();
    }

    for (size_t b = 0; b < labels.size(); ++b) {
        auto& stats = trace.per_label[labels[b]];
        ++stats.total;
        ++trace.total;
        if (trace.decisions[b].selected == labels[b]) {
            ++stats.correct;
            ++trace.correct;
        }
    }
    trace.accuracy = trace.total == 0 ? 0.0 : double(trace.correct) / double(trace.total);
    return trace;
}

// CSV: block_index, label, one loss and one tra column per expert
// (registration order), selected.
inline std::string route_csv(const RouteTrace& trace, const ExpertRegistry& registry) {
    std::string out = "block_index,label";
    for (const auto& e : registry) out += ",loss_" + e.id;
    for (const auto& e : registry) out += ",tra_" + e.id;
    out += ",selected\n";
    for (size_t b = 0; b < trace.decisions.size(); ++b) {
        const auto& d = trace.decisions[b];
        out += fmt_int((long long)b) + ",";
        if (b < trace.labels.size()) out += trace.labels[b];
        for (const auto& s : d.scores) out += "," + fmt_double(s.loss);
        for (const auto& s : d.scores) out += "," + fmt_double(s.tra);
        out += "," + d.selected + "\n";
    }
    return out;
}

}  // namespace lrc
