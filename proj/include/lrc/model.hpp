#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lrc/autodiff.hpp"
#include "lrc/rng.hpp"
#include "lrc/tensor.hpp"
#include "lrc/util.hpp"

namespace lrc {

struct ModelConfig {
    size_t L = 64;            // tokens per block
    size_t M = 4;             // latent vectors per block
    size_t d_model = 64;
    size_t n_layers_enc = 2;
    size_t n_layers_dec = 2;
    size_t n_heads = 4;
    size_t d_ff = 256;
    size_t vocab_size = 257;  // 256 byte values + PAD

    void validate() const {
        if (M < 1 || M >= L) {
            throw ValidationError("config: need 1 <= M < L, got M=" + fmt_int((long long)M) +
                                  " L=" + fmt_int((long long)L));
        }
        if (n_heads == 0 || d_model % n_heads != 0) {
            throw ValidationError("config: d_model " + fmt_int((long long)d_model) +
                                  " not divisible by n_heads " + fmt_int((long long)n_heads));
        }
        if (d_model == 0 || d_ff == 0 || vocab_size < 2 || n_layers_enc == 0 ||
            n_layers_dec == 0) {
            throw ValidationError("config: all dimensions must be positive");
        }
    }

    double compression_ratio() const { return double(L) / double(M); }

    bool operator==(const ModelConfig&) const = default;
};

struct TokenBlock {
    std::vector<int32_t> tokens;
};

inline void validate_block(const TokenBlock& x, const ModelConfig& cfg) {
    if (x.tokens.size() != cfg.L) {
        throw ValidationError("block: expected " + fmt_int((long long)cfg.L) + " tokens, got " +
                              fmt_int((long long)x.tokens.size()));
    }
    for (int32_t t : x.tokens) {
        if (t < 0 || size_t(t) >= cfg.vocab_size) {
            throw ValidationError("block: token id " + fmt_int(t) + " outside vocab of " +
                                  fmt_int((long long)cfg.vocab_size));
        }
    }
}

template <typename T>
struct LatentCodeT {
    TensorT<T> z;  // (M, d_model)
};

struct ReconstructionOutput {
    std::vector<float> logits;      // row-major (L, V)
    std::vector<int32_t> x_hat;     // argmax per position, ties to lowest id
    std::optional<double> loss;     // mean cross-entropy in nats/token; absent for decode-only
};

constexpr double kLnEps = 1e-5;

// Argmax with ties resolved to the lowest index, so discrete decoding is a
// total deterministic function of the logits.
template <typename T>
inline size_t argmax_lowest(const T* row, size_t n) {
    size_t best = 0;
    for (size_t v = 1; v < n; ++v) {
        if (row[v] > row[best]) best = v;
    }
    return best;
}

// The autoencoder: encoder reads L tokens plus M learned latent queries
// through bidirectional pre-LN transformer blocks and keeps the M query
// outputs as z; the decoder starts from L learned position queries (the
// content-free auxiliary signal), self-attends, cross-attends to z, and emits
// all L logit rows in one parallel pass. decode() takes nothing but z, which
// is what makes the isolation property hold by construction.
template <typename T>
class ModelT {
public:
    ModelConfig cfg;
    ParamSetT<T> params;

    static ModelT random_init(const ModelConfig& cfg, Rng rng) {
        cfg.validate();
        ModelT m;
        m.cfg = cfg;
        auto normal = [&rng](Shape s) {
            TensorT<T> t(std::move(s));
            for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, 0.02));
            return t;
        };
        auto zeros = [](Shape s) { return TensorT<T>(std::move(s)); };
        auto ones = [](Shape s) {
            TensorT<T> t(std::move(s));
            std::fill(t.data.begin(), t.data.end(), T(1));
            return t;
        };
        const size_t d = cfg.d_model;
        auto& P = m.params;

        P.add("encoder.tok_emb", normal({cfg.vocab_size, d}));
        P.add("encoder.pos_emb", normal({cfg.L, d}));
        P.add("encoder.latent_query", normal({cfg.M, d}));
        auto add_attn = [&](const std::string& p) {
            P.add(p + ".wq", normal({d, d}));
            P.add(p + ".bq", zeros({d}));
            P.add(p + ".wk", normal({d, d}));
            P.add(p + ".bk", zeros({d}));
            P.add(p + ".wv", normal({d, d}));
            P.add(p + ".bv", zeros({d}));
            P.add(p + ".wo", normal({d, d}));
            P.add(p + ".bo", zeros({d}));
        };
        auto add_ln = [&](const std::string& p) {
            P.add(p + ".gain", ones({d}));
            P.add(p + ".bias", zeros({d}));
        };
        auto add_ff = [&](const std::string& p) {
            P.add(p + ".w1", normal({d, cfg.d_ff}));
            P.add(p + ".b1", zeros({cfg.d_ff}));
            P.add(p + ".w2", normal({cfg.d_ff, d}));
            P.add(p + ".b2", zeros({d}));
        };
        for (size_t l = 0; l < cfg.n_layers_enc; ++l) {
            const std::string p = "encoder.layer" + fmt_int((long long)l);
            add_ln(p + ".ln1");
            add_attn(p + ".attn");
            add_ln(p + ".ln2");
            add_ff(p + ".ff");
        }
        add_ln("encoder.ln_f");

        P.add("decoder.pos_query", normal({cfg.L, d}));
        for (size_t l = 0; l < cfg.n_layers_dec; ++l) {
            const std::string p = "decoder.layer" + fmt_int((long long)l);
            add_ln(p + ".ln1");
            add_attn(p + ".self_attn");
            add_ln(p + ".ln2");
            add_attn(p + ".cross_attn");
            add_ln(p + ".ln3");
            add_ff(p + ".ff");
        }
        add_ln("decoder.ln_f");
        P.add("out.w", normal({d, cfg.vocab_size}));
        P.add("out.b", zeros({cfg.vocab_size}));
        return m;
    }

    // ---- graph builders (shared by inference and training) ----------------

    ValueRef encode_on_tape(TapeT<T>& t, const TokenBlock& x) const {
        validate_block(x, cfg);
        auto emb = t.add(t.embedding(t.param("encoder.tok_emb"), x.tokens),
                         t.param("encoder.pos_emb"));
        auto h = t.concat_rows(emb, t.param("encoder.latent_query"));
        for (size_t l = 0; l < cfg.n_layers_enc; ++l) {
            const std::string p = "encoder.layer" + fmt_int((long long)l);
            h = self_attn_block(t, h, p + ".ln1", p + ".attn");
            h = ff_block(t, h, p + ".ln2", p + ".ff");
        }
        h = t.layernorm(h, t.param("encoder.ln_f.gain"), t.param("encoder.ln_f.bias"), kLnEps);
        return t.slice_rows(h, cfg.L, cfg.L + cfg.M);
    }

    ValueRef decode_on_tape(TapeT<T>& t, ValueRef z) const {
        const auto& vz = t.val(z);
        if (vz.shape != Shape{cfg.M, cfg.d_model}) {
            throw ValidationError("latent: expected shape [" + fmt_int((long long)cfg.M) + ", " +
                                  fmt_int((long long)cfg.d_model) + "], got " +
                                  shape_str(vz.shape));
        }
        auto h = t.param("decoder.pos_query");
        for (size_t l = 0; l < cfg.n_layers_dec; ++l) {
            const std::string p = "decoder.layer" + fmt_int((long long)l);
            h = self_attn_block(t, h, p + ".ln1", p + ".self_attn");
            h = cross_attn_block(t, h, z, p + ".ln2", p + ".cross_attn");
            h = ff_block(t, h, p + ".ln3", p + ".ff");
        }
        h = t.layernorm(h, t.param("decoder.ln_f.gain"), t.param("decoder.ln_f.bias"), kLnEps);
        return t.add_bias(t.matmul(h, t.param("out.w")), t.param("out.b"));
    }

    // Training loss for one block: mean cross-entropy of the reconstruction
    // against the block's own tokens. Positions labeled ignore_id drop out.
    ValueRef build_loss(TapeT<T>& t, const TokenBlock& x, int32_t ignore_id = -1) const {
        auto logits = decode_on_tape(t, encode_on_tape(t, x));
        return t.cross_entropy(logits, x.tokens, ignore_id);
    }

    // ---- inference wrappers ------------------------------------------------

    LatentCodeT<T> encode(const TokenBlock& x) const {
        TapeT<T> t(&params, nullptr);
        return LatentCodeT<T>{t.val(encode_on_tape(t, x))};
    }

    ReconstructionOutput decode(const LatentCodeT<T>& code) const {
        TapeT<T> t(&params, nullptr);
        auto logits = decode_on_tape(t, t.input(code.z));
        return make_output(t.val(logits), std::nullopt);
    }

    ReconstructionOutput reconstruct(const TokenBlock& x, int32_t ignore_id = -1) const {
        TapeT<T> t(&params, nullptr);
        auto logits = decode_on_tape(t, encode_on_tape(t, x));
        auto loss = t.cross_entropy(logits, x.tokens, ignore_id);
        return make_output(t.val(logits), double(t.val(loss).data[0]));
    }

private:
    ReconstructionOutput make_output(const TensorT<T>& logits, std::optional<double> loss) const {
        ReconstructionOutput out;
        out.logits.assign(logits.data.begin(), logits.data.end());
        out.x_hat.resize(cfg.L);
        for (size_t r = 0; r < cfg.L; ++r) {
            out.x_hat[r] = static_cast<int32_t>(
                argmax_lowest(logits.data.data() + r * cfg.vocab_size, cfg.vocab_size));
        }
        out.loss = loss;
        return out;
    }

    ValueRef self_attn_block(TapeT<T>& t, ValueRef h, const std::string& ln,
                             const std::string& at) const {
        auto n = t.layernorm(h, t.param(ln + ".gain"), t.param(ln + ".bias"), kLnEps);
        auto a = t.attention(proj(t, n, at, "q"), proj(t, n, at, "k"), proj(t, n, at, "v"),
                             cfg.n_heads);
        return t.add(h, proj(t, a, at, "o"));
    }

    ValueRef cross_attn_block(TapeT<T>& t, ValueRef h, ValueRef z, const std::string& ln,
                              const std::string& at) const {
        auto n = t.layernorm(h, t.param(ln + ".gain"), t.param(ln + ".bias"), kLnEps);
        auto a = t.attention(proj(t, n, at, "q"), proj(t, z, at, "k"), proj(t, z, at, "v"),
                             cfg.n_heads);
        return t.add(h, proj(t, a, at, "o"));
    }

    ValueRef ff_block(TapeT<T>& t, ValueRef h, const std::string& ln,
                      const std::string& ff) const {
        auto n = t.layernorm(h, t.param(ln + ".gain"), t.param(ln + ".bias"), kLnEps);
        auto f = t.gelu(t.add_bias(t.matmul(n, t.param(ff + ".w1")), t.param(ff + ".b1")));
        return t.add(h, t.add_bias(t.matmul(f, t.param(ff + ".w2")), t.param(ff + ".b2")));
    }

    ValueRef proj(TapeT<T>& t, ValueRef x, const std::string& at, const char* which) const {
        return t.add_bias(t.matmul(x, t.param(at + ".w" + which)),
                          t.param(at + ".b" + which));
    }
};

// True iff decoding z is unaffected by whatever block was last encoded: the
// decoder takes only z, so this holds by construction, and the probe verifies
// it bit-for-bit rather than trusting the type signature.
template <typename T>
bool isolation_probe(const ModelT<T>& model, const LatentCodeT<T>& z, const TokenBlock& x_a,
                     const TokenBlock& x_b) {
    (void)model.encode(x_a);
    ReconstructionOutput with_a = model.decode(z);
    (void)model.encode(x_b);
    ReconstructionOutput with_b = model.decode(z);
    return with_a.logits == with_b.logits && with_a.x_hat == with_b.x_hat;
}

using Model = ModelT<float>;
using LatentCode = LatentCodeT<float>;

}  // namespace lrc
