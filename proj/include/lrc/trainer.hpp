#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrc/adam.hpp"
#include "lrc/corpus.hpp"
#include "lrc/metrics.hpp"
#include "lrc/model.hpp"
#include "lrc/rng.hpp"
#include "lrc/router.hpp"
#include "lrc/util.hpp"

namespace lrc {

struct TrainConfig {
    size_t steps = 500;
    size_t batch_size = 8;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;
    size_t eval_every = 50;
    std::string checkpoint_path;  // empty: train in memory only

    void validate() const {
        if (steps < 1 || batch_size < 1 || eval_every < 1) {
            throw ValidationError("train config: steps, batch_size and eval_every must be >= 1");
        }
    }

    AdamConfig adam() const { return AdamConfig{lr, beta1, beta2, eps}; }
};

struct TraceRow {
    size_t step = 0;
    double train_loss = 0.0;
    double val_tra = 0.0;
};

struct TrainResult {
    std::vector<TraceRow> trace;
    CorpusEval final_val;
};

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::string out = "step,train_loss,val_tra\n";
    for (const auto& r : trace) {
        out += fmt_int((long long)r.step) + "," + fmt_double(r.train_loss) + "," +
               fmt_double(r.val_tra) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "LRCK", u32 format version, u32 JSON header length, the
// UTF-8 JSON header (config, step, Adam hyperparameters, parameter manifest
// with float offsets), a raw little-endian float32 payload (parameters in
// manifest order, then Adam first and second moments when present), and a
// trailing u64 FNV-1a digest over all preceding bytes. The digest is checked
// before anything is parsed, so any truncation or bit flip surfaces as a
// digest mismatch rather than a downstream decode error.
// ---------------------------------------------------------------------------

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    Model model;
    AdamConfig adam;
    int64_t step = 0;
    std::vector<Tensor> adam_m;  // empty when the model was never trained
    std::vector<Tensor> adam_v;
};

namespace detail {

inline void put_u32le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32le(const std::string& s, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(s[off + i])) << (8 * i);
    return v;
}

inline uint64_t get_u64le(const std::string& s, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(s[off + i])) << (8 * i);
    return v;
}

inline void put_floats(std::string& out, const std::vector<float>& v) {
    static_assert(sizeof(float) == 4);
    const size_t at = out.size();
    out.resize(at + 4 * v.size());
    std::memcpy(out.data() + at, v.data(), 4 * v.size());  // little-endian host
}

}  // namespace detail

inline std::string checkpoint_to_bytes(const CheckpointData& c) {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    const auto& cfg = c.model.cfg;
    header["config"] = {{"L", cfg.L},
                        {"M", cfg.M},
                        {"d_model", cfg.d_model},
                        {"n_layers_enc", cfg.n_layers_enc},
                        {"n_layers_dec", cfg.n_layers_dec},
                        {"n_heads", cfg.n_heads},
                        {"d_ff", cfg.d_ff},
                        {"vocab_size", cfg.vocab_size}};
    header["step"] = c.step;
    header["adam"] = {{"lr", c.adam.lr},
                      {"beta1", c.adam.beta1},
                      {"beta2", c.adam.beta2},
                      {"eps", c.adam.eps}};
    header["has_adam_state"] = !c.adam_m.empty();

    nlohmann::json manifest = nlohmann::json::array();
    size_t offset = 0;
    for (const auto& p : c.model.params) {
        manifest.push_back(
            {{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}});
        offset += p.value.numel();
    }
    header["params"] = std::move(manifest);

    std::string out = "LRCK";
    detail::put_u32le(out, kCheckpointVersion);
    const std::string json = header.dump();
    detail::put_u32le(out, uint32_t(json.size()));
    out += json;
    for (const auto& p : c.model.params) detail::put_floats(out, p.value.data);
    for (const auto& m : c.adam_m) detail::put_floats(out, m.data);
    for (const auto& v : c.adam_v) detail::put_floats(out, v.data);
    detail::put_u64le(out, fnv1a64(out.data(), out.size()));
    return out;
}

inline CheckpointData checkpoint_from_bytes(const std::string& s, const std::string& name) {
    if (s.size() < 20 || s.compare(0, 4, "LRCK") != 0) {
        throw IoError(name + ": not a checkpoint file (bad magic)");
    }
    const uint64_t stored = detail::get_u64le(s, s.size() - 8);
    const uint64_t computed = fnv1a64(s.data(), s.size() - 8);
    if (stored != computed) {
        throw IoError(name + ": checkpoint digest mismatch (file truncated or corrupted)");
    }
    const uint32_t version = detail::get_u32le(s, 4);
    if (version != kCheckpointVersion) {
        throw IoError(name + ": unsupported checkpoint version " + fmt_int(version) +
                      " (expected " + fmt_int(kCheckpointVersion) + ")");
    }
    const size_t json_len = detail::get_u32le(s, 8);
    if (12 + json_len > s.size() - 8) throw IoError(name + ": corrupt checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(s.substr(12, json_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(name + ": bad checkpoint header: " + e.what());
    }

    CheckpointData c;
    try {
        const auto& jc = header.at("config");
        auto dim = [&](const char* key) { return jc.at(key).get<size_t>(); };
        c.model.cfg = ModelConfig{dim("L"),            dim("M"),       dim("d_model"),
                                  dim("n_layers_enc"), dim("n_layers_dec"),
                                  dim("n_heads"),      dim("d_ff"),    dim("vocab_size")};
        c.model.cfg.validate();
        c.step = header.at("step").get<int64_t>();
        const auto& ja = header.at("adam");
        c.adam = AdamConfig{ja.at("lr").get<double>(), ja.at("beta1").get<double>(),
                            ja.at("beta2").get<double>(), ja.at("eps").get<double>()};

        const char* base = s.data() + 12 + json_len;
        const size_t payload_floats = (s.size() - 8 - 12 - json_len) / 4;
        size_t expected = 0;
        for (const auto& jp : header.at("params")) {
            Shape shape = jp.at("shape").get<Shape>();
            if (jp.at("offset").get<size_t>() != expected) {
                throw IoError(name + ": parameter manifest offsets are inconsistent");
            }
            expected += shape_numel(shape);
        }
        const bool has_adam = header.at("has_adam_state").get<bool>();
        if (payload_floats != (has_adam ? 3 * expected : expected)) {
            throw IoError(name + ": checkpoint payload holds " + fmt_int((long long)payload_floats) +
                          " floats, manifest expects " +
                          fmt_int((long long)(has_adam ? 3 * expected : expected)));
        }
        size_t at = 0;
        auto read_tensor = [&](Shape shape) {
            TensorT<float> t(std::move(shape));
            std::memcpy(t.data.data(), base + 4 * at, 4 * t.numel());
            at += t.numel();
            return t;
        };
        for (const auto& jp : header.at("params")) {
            c.model.params.add(jp.at("name").get<std::string>(),
                               read_tensor(jp.at("shape").get<Shape>()));
        }
        if (has_adam) {
            for (const auto& jp : header.at("params")) {
                c.adam_m.push_back(read_tensor(jp.at("shape").get<Shape>()));
            }
            for (const auto& jp : header.at("params")) {
                c.adam_v.push_back(read_tensor(jp.at("shape").get<Shape>()));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(name + ": bad checkpoint header: " + e.what());
    }
    return c;
}

inline void save_checkpoint(const CheckpointData& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const std::string bytes = checkpoint_to_bytes(c);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed on " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return checkpoint_from_bytes(bytes, std::filesystem::path(path).filename().string());
}

// Digest of a model's serialized parameter state (optimizer state excluded),
// used for freeze verification.
inline uint64_t params_digest(const Model& model) {
    uint64_t h = fnv1a64("LRCP", 4);
    for (const auto& p : model.params) {
        h = fnv1a64(p.name.data(), p.name.size(), h);
        h = fnv1a64(p.value.data.data(), 4 * p.value.numel(), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

// Runs cfg.steps Adam steps of mean-per-block cross-entropy on the corpus's
// 90% train split, evaluating TRA on the 10% validation split at step 0,
// every eval_every steps, and at the end. Deterministic in (model, corpus,
// cfg.seed).
inline TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& tc) {
    tc.validate();
    check_corpus_matches<float>(model.cfg, corpus);
    auto [train_split, val_split] = split_corpus(corpus);
    if (train_split.blocks.empty()) {
        throw ValidationError("train: corpus has no training blocks after the split");
    }
    const int32_t pad = pad_id(model.cfg);

    AdamT<float> opt(model.params, tc.adam());
    Gradients grads(model.params);
    TapeT<float> tape(&model.params, &grads);
    Rng order_rng = Rng(tc.seed).fork(0x0baccd);

    std::vector<size_t> perm(train_split.blocks.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    size_t cursor = perm.size();  // forces a shuffle before the first batch

    auto next_batch = [&]() {
        std::vector<const TokenBlock*> batch;
        batch.reserve(tc.batch_size);
        while (batch.size() < tc.batch_size) {
            if (cursor == perm.size()) {
                shuffle_indices(perm, order_rng);
                cursor = 0;
            }
            batch.push_back(&train_split.blocks[perm[cursor++]]);
        }
        return batch;
    };

    auto batch_loss_backward = [&](const std::vector<const TokenBlock*>& batch, bool backward,
                                   size_t step) {
        double total = 0.0;
        for (const TokenBlock* b : batch) {
            tape.reset();
            try {
                auto loss = model.build_loss(tape, *b, pad);
                total += double(tape.val(loss).data[0]);
                if (backward) tape.backward(loss);
            } catch (const NumericError& e) {
                throw NumericError("step " + fmt_int((long long)step) +
                                   ": aborting on non-finite loss: " + e.what());
            }
        }
        return total / double(batch.size());
    };

    TrainResult result;
    auto eval_val = [&]() {
        return val_split.blocks.empty() ? CorpusEval{} : corpus_tra(model, val_split);
    };

    {
        // step-0 baseline, before any update: loss over the leading train
        // blocks (batch stream untouched) plus validation TRA at init
        std::vector<const TokenBlock*> lead;
        for (size_t i = 0; i < std::min(tc.batch_size, train_split.blocks.size()); ++i) {
            lead.push_back(&train_split.blocks[i]);
        }
        result.trace.push_back({0, batch_loss_backward(lead, false, 0), eval_val().mean_tra});
    }

    for (size_t step = 1; step <= tc.steps; ++step) {
        auto batch = next_batch();
        const double loss = batch_loss_backward(batch, true, step);
        const float scale = 1.0f / float(batch.size());
        for (auto& g : grads.grad) {
            for (auto& x : g.data) x *= scale;
        }
        opt.set_lr(tc.lr_at(step));
        opt.step_update(grads);
        if (step % tc.eval_every == 0 || step == tc.steps) {
            result.trace.push_back({step, loss, eval_val().mean_tra});
        }
    }
    result.final_val = eval_val();

    if (!tc.checkpoint_path.empty()) {
        CheckpointData ck{model, tc.adam(), opt.step_count(), opt.moment1(), opt.moment2()};
        save_checkpoint(ck, tc.checkpoint_path);
    }
    return result;
}

// Trains a brand-new expert and mounts it, proving along the way that no
// existing expert changed: parameter digests (and checkpoint files, when the
// registry knows them) are captured before training and re-verified after.
inline TrainResult train_incremental(ExpertRegistry& registry, const std::string& new_id,
                                     const ModelConfig& new_cfg, const Corpus& corpus,
                                     const TrainConfig& tc) {
    if (registry.has(new_id)) {
        throw ValidationError("registry: duplicate expert id '" + new_id + "'");
    }
    std::vector<uint64_t> before;
    std::vector<uint64_t> file_before;
    for (const auto& e : registry) {
        before.push_back(params_digest(e.model));
        file_before.push_back(e.checkpoint_path.empty() ? 0 : file_digest(e.checkpoint_path));
    }

    Model expert = Model::random_init(new_cfg, Rng(tc.seed).fork(0x1217));
    TrainResult result = train(expert, corpus, tc);
    registry.register_expert(new_id, std::move(expert), tc.checkpoint_path);

    for (size_t i = 0; i + 1 < registry.size(); ++i) {
        if (params_digest(registry[i].model) != before[i]) {
            throw FreezeError("freeze violation: parameters of expert '" + registry[i].id +
                              "' changed during incremental training");
        }
        if (!registry[i].checkpoint_path.empty() &&
            file_digest(registry[i].checkpoint_path) != file_before[i]) {
            throw FreezeError("freeze violation: checkpoint of expert '" + registry[i].id +
                              "' changed during incremental training");
        }
    }
    return result;
}

struct AblationRow {
    size_t M = 0;
    double compression_ratio = 0.0;
    double final_val_tra = 0.0;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "M,compression_ratio,final_val_tra\n";
    for (const auto& r : rows) {
        out += fmt_int((long long)r.M) + "," + fmt_double(r.compression_ratio) + "," +
               fmt_double(r.final_val_tra) + "\n";
    }
    return out;
}

// One independent training run per latent length, identical seed and data,
// reporting how reconstruction degrades as the bottleneck narrows.
inline std::vector<AblationRow> ablate_M(const ModelConfig& base, std::vector<size_t> Ms,
                                         const Corpus& corpus, const TrainConfig& tc) {
    if (Ms.empty()) throw ValidationError("ablate: need at least one M value");
    std::sort(Ms.begin(), Ms.end());
    for (size_t i = 0; i + 1 < Ms.size(); ++i) {
        if (Ms[i] == Ms[i + 1]) {
            throw ValidationError("ablate: duplicate M value " + fmt_int((long long)Ms[i]));
        }
    }
    std::vector<AblationRow> rows;
    for (size_t m : Ms) {
        ModelConfig cfg = base;
        cfg.M = m;
        cfg.validate();
        Model model = Model::random_init(cfg, Rng(tc.seed).fork(0xab1a));
        TrainConfig run = tc;
        run.checkpoint_path.clear();  // ablation runs are throwaway
        TrainResult r = train(model, corpus, run);
        rows.push_back({m, cfg.compression_ratio(), r.final_val.mean_tra});
    }
    return rows;
}

}  // namespace lrc
