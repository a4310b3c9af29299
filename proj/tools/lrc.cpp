// Command-line front end: corpus generation, expert training, evaluation,
// routing, bottleneck ablation, and latent-geometry analysis, all emitting
// plot-ready CSV/JSON. Every run is deterministic given its arguments; seeds
// are always explicit flags, never wall-clock derived.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lrc/analysis.hpp"
#include "lrc/corpus.hpp"
#include "lrc/metrics.hpp"
#include "lrc/model.hpp"
#include "lrc/router.hpp"
#include "lrc/trainer.hpp"
#include "lrc/util.hpp"

using namespace lrc;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// Seed tag for deriving a model's init stream from the run seed; shared with
// train_incremental so CLI runs and registry runs agree.
constexpr uint64_t kInitTag = 0x1217;

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(body.data(), std::streamsize(body.size()));
    if (!out) throw IoError("write failed on " + path);
}

nlohmann::json model_json(const ModelConfig& cfg) {
    return {{"L", cfg.L},
            {"M", cfg.M},
            {"d_model", cfg.d_model},
            {"n_layers_enc", cfg.n_layers_enc},
            {"n_layers_dec", cfg.n_layers_dec},
            {"n_heads", cfg.n_heads},
            {"d_ff", cfg.d_ff},
            {"vocab_size", cfg.vocab_size}};
}

nlohmann::json train_json(const TrainConfig& tc) {
    return {{"steps", tc.steps},       {"batch_size", tc.batch_size},
            {"lr", tc.lr},             {"beta1", tc.beta1},
            {"beta2", tc.beta2},       {"eps", tc.eps},
            {"seed", tc.seed},         {"eval_every", tc.eval_every},
            {"warmup_steps", tc.warmup_steps}};
}

// Optional JSON config file: {"model": {...}, "train": {...}}, any subset of
// keys. Values land between the built-in defaults and explicit flags, which
// always win.
void apply_config_file(const std::string& path, ModelConfig& cfg, TrainConfig& tc) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config file " + path + ": " + e.what());
    }
    for (const auto& [section, body] : j.items()) {
        if (section == "model") {
            for (const auto& [key, v] : body.items()) {
                if (key == "L") cfg.L = v.get<size_t>();
                else if (key == "M") cfg.M = v.get<size_t>();
                else if (key == "d_model") cfg.d_model = v.get<size_t>();
                else if (key == "n_layers_enc") cfg.n_layers_enc = v.get<size_t>();
                else if (key == "n_layers_dec") cfg.n_layers_dec = v.get<size_t>();
                else if (key == "n_heads") cfg.n_heads = v.get<size_t>();
                else if (key == "d_ff") cfg.d_ff = v.get<size_t>();
                else if (key == "vocab_size") cfg.vocab_size = v.get<size_t>();
                else throw ValidationError("config file: unknown model key '" + key + "'");
            }
        } else if (section == "train") {
            for (const auto& [key, v] : body.items()) {
                if (key == "steps") tc.steps = v.get<size_t>();
                else if (key == "batch_size") tc.batch_size = v.get<size_t>();
                else if (key == "lr") tc.lr = v.get<double>();
                else if (key == "beta1") tc.beta1 = v.get<double>();
                else if (key == "beta2") tc.beta2 = v.get<double>();
                else if (key == "eps") tc.eps = v.get<double>();
                else if (key == "seed") tc.seed = v.get<uint64_t>();
                else if (key == "eval_every") tc.eval_every = v.get<size_t>();
                else if (key == "warmup_steps") tc.warmup_steps = v.get<size_t>();
                else throw ValidationError("config file: unknown train key '" + key + "'");
            }
        } else {
            throw ValidationError("config file: unknown section '" + section + "'");
        }
    }
}

// One manifest per invocation, next to the primary output: what ran, with
// which effective config and seeds, reading and writing which files.
struct ManifestWriter {
    std::string command;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void write(const std::string& primary_out, std::vector<std::string> inputs,
               std::vector<std::string> outputs, nlohmann::json seeds,
               nlohmann::json config) const {
        nlohmann::json m;
        m["command"] = command;
        m["version"] = kToolVersion;
        m["duration_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        m["inputs"] = std::move(inputs);
        m["outputs"] = std::move(outputs);
        m["seeds"] = std::move(seeds);
        m["config"] = std::move(config);
        write_text(primary_out + ".manifest.json", m.dump(2) + "\n");
    }
};

// "label=path" for labeled corpora; bare "path" for a single unlabeled one.
struct CorpusArg {
    std::string label;
    std::string path;
};

CorpusArg parse_corpus_arg(const std::string& s) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos) return {"", s};
    return {s.substr(0, eq), s.substr(eq + 1)};
}

}  // namespace

int main(int argc, char** argv) {
    ManifestWriter manifest;
    manifest.command = join_args(argc, argv);

    CLI::App app{"block compressor experts with reconstruction-quality routing"};
    app.require_subcommand(1);

    // ---- common option storage ------------------------------------------
    std::string config_path, corpus_path, checkpoint_path, out_path;
    uint64_t seed = 0;
    size_t steps = 0, batch_size = 0, eval_every = 0, block_len = 0, latent_m = 0;
    size_t warmup_steps = 0;
    double lr = 0.0;

    auto add_train_flags = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file (flags override it)");
        sub->add_option("--seed", seed, "run seed: model init and batch order");
        sub->add_option("--steps", steps, "optimizer steps");
        sub->add_option("--batch-size", batch_size, "blocks per step");
        sub->add_option("--lr", lr, "Adam learning rate");
        sub->add_option("--warmup", warmup_steps, "linear lr warmup steps (0: constant lr)");
        sub->add_option("--eval-every", eval_every, "validation cadence in steps");
        sub->add_option("--block-len", block_len, "block length L");
        sub->add_option("--latent-m", latent_m, "latent rows M");
    };
    auto effective_configs = [&](CLI::App* sub) {
        ModelConfig cfg;
        TrainConfig tc;
        if (sub->count("--config")) apply_config_file(config_path, cfg, tc);
        if (sub->count("--seed")) tc.seed = seed;
        if (sub->count("--steps")) tc.steps = steps;
        if (sub->count("--batch-size")) tc.batch_size = batch_size;
        if (sub->count("--lr")) tc.lr = lr;
        if (sub->count("--warmup")) tc.warmup_steps = warmup_steps;
        if (sub->count("--eval-every")) tc.eval_every = eval_every;
        if (sub->count("--block-len")) cfg.L = block_len;
        if (sub->count("--latent-m")) cfg.M = latent_m;
        cfg.validate();
        tc.validate();
        return std::pair(cfg, tc);
    };

    // ---- gen -------------------------------------------------------------
    auto* cmd_gen = app.add_subcommand("gen", "generate a synthetic corpus file");
    std::string gen_kind;
    size_t gen_size = 0;
    cmd_gen->add_option("--kind", gen_kind, "code | text | random")->required();
    cmd_gen->add_option("--seed", seed, "generator seed");
    cmd_gen->add_option("--size", gen_size, "number of blocks")->required();
    cmd_gen->add_option("--block-len", block_len, "block length L (default 64)");
    cmd_gen->add_option("--out", out_path, "output corpus path")->required();

    // ---- train -----------------------------------------------------------
    auto* cmd_train = app.add_subcommand("train", "train one expert on a corpus");
    std::string trace_path;
    cmd_train->add_option("--corpus", corpus_path, "training corpus")->required();
    cmd_train->add_option("--out", out_path, "checkpoint output path")->required();
    cmd_train->add_option("--trace", trace_path, "write the step/loss/TRA trace CSV here");
    add_train_flags(cmd_train);

    // ---- eval ------------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("eval", "reconstruction quality of a checkpoint");
    cmd_eval->add_option("--checkpoint", checkpoint_path, "expert checkpoint")->required();
    cmd_eval->add_option("--corpus", corpus_path, "evaluation corpus")->required();
    cmd_eval->add_option("--out", out_path, "per-block CSV output path");

    // ---- route -----------------------------------------------------------
    auto* cmd_route = app.add_subcommand("route", "dispatch blocks to experts by loss");
    std::vector<std::string> route_experts, route_corpora;
    double tra_accept = 0.0;
    cmd_route->add_option("--expert", route_experts, "id=checkpoint, repeatable")
        ->required()
        ->take_all();
    cmd_route
        ->add_option("--corpus", route_corpora,
                     "label=path for labeled corpora, or one bare path; repeatable")
        ->required()
        ->take_all();
    cmd_route->add_option("--tra-accept", tra_accept,
                          "flag NOVEL below this best-expert TRA (default 0)");
    cmd_route->add_option("--out", out_path, "routing trace CSV path")->required();

    // ---- ablate ----------------------------------------------------------
    auto* cmd_ablate = app.add_subcommand("ablate", "train once per latent width M");
    std::vector<size_t> ablate_ms;
    cmd_ablate->add_option("--corpus", corpus_path, "training corpus")->required();
    cmd_ablate->add_option("--ms", ablate_ms, "latent widths, e.g. 1,2,4")
        ->required()
        ->delimiter(',');
    cmd_ablate->add_option("--out", out_path, "ablation table CSV path")->required();
    add_train_flags(cmd_ablate);

    // ---- analyze ---------------------------------------------------------
    auto* cmd_analyze = app.add_subcommand("analyze", "latent geometry exports");
    std::string corpus_b_path;
    uint64_t probe_seed = 0;
    cmd_analyze->add_option("--checkpoint", checkpoint_path, "expert checkpoint")->required();
    cmd_analyze->add_option("--corpus", corpus_path, "primary corpus (PCA over this one)")
        ->required();
    cmd_analyze->add_option("--corpus-b", corpus_b_path,
                            "second corpus: enables the linear probe and a joint projection");
    cmd_analyze->add_option("--probe-seed", probe_seed, "probe split seed");
    cmd_analyze->add_option("--out", out_path, "output path prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        // ---- gen ----
        if (cmd_gen->parsed()) {
            if (gen_size < 1) throw ValidationError("gen: --size must be >= 1");
            ModelConfig cfg;
            if (cmd_gen->count("--block-len")) cfg.L = block_len;
            cfg.validate();
            Corpus corpus;
            if (gen_kind == "random") {
                corpus = gen_random(seed, gen_size, cfg);
            } else if (gen_kind == "code" || gen_kind == "text") {
                GrammarSpec spec;
                spec.kind = gen_kind == "code" ? GrammarSpec::Kind::code_like
                                               : GrammarSpec::Kind::text_like;
                spec.seed = seed;
                spec.size = gen_size;
                corpus = spec.kind == GrammarSpec::Kind::code_like ? gen_code_like(spec, cfg)
                                                                   : gen_text_like(spec, cfg);
            } else {
                throw ValidationError("gen: unknown --kind '" + gen_kind +
                                      "' (expected code, text or random)");
            }
            save_corpus(corpus, out_path);
            std::cout << "wrote " << out_path << " (" << corpus.blocks.size() << " blocks, L="
                      << corpus.L << ")\n";
            manifest.write(out_path, {}, {out_path}, {{"seed", seed}},
                           {{"kind", gen_kind}, {"size", gen_size}, {"L", cfg.L}});
        }

        // ---- train ----
        if (cmd_train->parsed()) {
            auto [cfg, tc] = effective_configs(cmd_train);
            Corpus corpus = load_corpus(corpus_path);
            Model model = Model::random_init(cfg, Rng(tc.seed).fork(kInitTag));
            tc.checkpoint_path = out_path;
            TrainResult r = train(model, corpus, tc);
            std::vector<std::string> outputs = {out_path};
            if (!trace_path.empty()) {
                write_text(trace_path, trace_csv(r.trace));
                outputs.push_back(trace_path);
            }
            std::cout << "final_val_tra=" << fmt_double(r.final_val.mean_tra) << "\n"
                      << "final_val_loss=" << fmt_double(r.final_val.mean_loss) << "\n";
            manifest.write(out_path, {corpus_path}, std::move(outputs),
                           {{"seed", tc.seed}},
                           {{"model", model_json(cfg)}, {"train", train_json(tc)}});
        }

        // ---- eval ----
        if (cmd_eval->parsed()) {
            CheckpointData ck = load_checkpoint(checkpoint_path);
            Corpus corpus = load_corpus(corpus_path);
            CorpusEval ev = corpus_tra(ck.model, corpus);
            std::cout << "tra=" << fmt_double(ev.mean_tra) << "\n"
                      << "loss=" << fmt_double(ev.mean_loss) << "\n";
            if (!out_path.empty()) {
                write_text(out_path, eval_csv(ev));
                manifest.write(out_path, {checkpoint_path, corpus_path}, {out_path},
                               nlohmann::json::object(), {{"model", model_json(ck.model.cfg)}});
            }
        }

        // ---- route ----
        if (cmd_route->parsed()) {
            ExpertRegistry registry;
            for (const auto& e : route_experts) {
                const auto arg = parse_corpus_arg(e);
                if (arg.label.empty()) {
                    throw ValidationError("route: --expert needs id=checkpoint, got '" + e + "'");
                }
                registry.register_expert(arg.label, load_checkpoint(arg.path).model, arg.path);
            }

            Corpus mix;
            std::vector<std::string> labels;
            std::vector<std::string> inputs;
            bool labeled = true;
            for (const auto& cspec : route_corpora) {
                const auto arg = parse_corpus_arg(cspec);
                Corpus part = load_corpus(arg.path);
                inputs.push_back(arg.path);
                if (arg.label.empty()) labeled = false;
                if (mix.blocks.empty()) {
                    mix.L = part.L;
                    mix.vocab_size = part.vocab_size;
                    mix.name = "mix";
                }
                for (auto& b : part.blocks) {
                    mix.blocks.push_back(std::move(b));
                    labels.push_back(arg.label);
                }
                if (part.L != mix.L || part.vocab_size != mix.vocab_size) {
                    throw ValidationError("route: corpora disagree on L or vocab size");
                }
            }
            if (!labeled && route_corpora.size() > 1) {
                throw ValidationError("route: with several corpora, label each as label=path");
            }
            if (!labeled) labels.clear();

            RouteTrace trace = route_stream(registry, mix, tra_accept, labels);
            write_text(out_path, route_csv(trace, registry));

            size_t novel = 0;
            for (const auto& d : trace.decisions) {
                if (d.selected == kNovel) ++novel;
            }
            nlohmann::json summary;
            summary["blocks"] = trace.decisions.size();
            summary["tra_accept"] = tra_accept;
            summary["novel_fraction"] =
                trace.decisions.empty() ? 0.0 : double(novel) / double(trace.decisions.size());
            if (labeled) {
                summary["accuracy"] = trace.accuracy;
                nlohmann::json per;
                for (const auto& [label, st] : trace.per_label) {
                    per[label] = st.total == 0 ? 0.0 : double(st.correct) / double(st.total);
                }
                summary["per_tier_accuracy"] = std::move(per);
            }
            write_text(out_path + ".summary.json", summary.dump(2) + "\n");
            std::cout << "routed " << trace.decisions.size() << " blocks, novel_fraction="
                      << fmt_double(summary["novel_fraction"].get<double>()) << "\n";
            if (labeled) std::cout << "accuracy=" << fmt_double(trace.accuracy) << "\n";

            manifest.write(out_path, std::move(inputs),
                           {out_path, out_path + ".summary.json"},
                           {{"tra_accept", tra_accept}}, nlohmann::json::object());
        }

        // ---- ablate ----
        if (cmd_ablate->parsed()) {
            auto [cfg, tc] = effective_configs(cmd_ablate);
            Corpus corpus = load_corpus(corpus_path);
            auto rows = ablate_M(cfg, ablate_ms, corpus, tc);
            write_text(out_path, ablation_csv(rows));
            for (const auto& r : rows) {
                std::cout << "M=" << r.M << " ratio=" << fmt_double(r.compression_ratio)
                          << " tra=" << fmt_double(r.final_val_tra) << "\n";
            }
            manifest.write(out_path, {corpus_path}, {out_path}, {{"seed", tc.seed}},
                           {{"model", model_json(cfg)}, {"train", train_json(tc)}});
        }

        // ---- analyze ----
        if (cmd_analyze->parsed()) {
            CheckpointData ck = load_checkpoint(checkpoint_path);
            Corpus corpus = load_corpus(corpus_path);
            LatentMatrix latents = collect_latents(ck.model, corpus);
            // files carry no tier, so label rows by where they came from
            auto stem = [](const std::string& p) {
                return std::filesystem::path(p).stem().string();
            };
            latents.labels.assign(latents.rows, stem(corpus_path));

            PcaReport pca = pca_cumvar(latents);
            std::cout << "intrinsic_dim_95=" << pca.intrinsic_dim_95 << " of " << latents.cols
                      << "\n";

            LatentMatrix all = latents;
            std::vector<std::string> inputs = {checkpoint_path, corpus_path};
            nlohmann::json seeds = nlohmann::json::object();
            std::optional<double> probe_acc;
            if (!corpus_b_path.empty()) {
                Corpus corpus_b = load_corpus(corpus_b_path);
                LatentMatrix latents_b = collect_latents(ck.model, corpus_b);
                latents_b.labels.assign(latents_b.rows, stem(corpus_b_path));
                probe_acc = linear_probe(latents, latents_b, probe_seed);
                std::cout << "probe_accuracy=" << fmt_double(*probe_acc) << "\n";
                inputs.push_back(corpus_b_path);
                seeds["probe_seed"] = probe_seed;

                all.rows += latents_b.rows;
                all.data.insert(all.data.end(), latents_b.data.begin(), latents_b.data.end());
                all.labels.insert(all.labels.end(), latents_b.labels.begin(),
                                  latents_b.labels.end());
            }
            Projection proj = project_2d(all);

            std::vector<std::string> outputs = {out_path + ".latents.csv", out_path + ".pca.csv",
                                                out_path + ".projection.csv"};
            write_text(outputs[0], latent_csv(all));
            write_text(outputs[1], pca_csv(pca));
            write_text(outputs[2], projection_csv(proj));
            if (probe_acc) {
                nlohmann::json pj = {{"probe_accuracy", *probe_acc}, {"probe_seed", probe_seed}};
                outputs.push_back(out_path + ".probe.json");
                write_text(outputs.back(), pj.dump(2) + "\n");
            }
            manifest.write(out_path, std::move(inputs), std::move(outputs), std::move(seeds),
                           {{"model", model_json(ck.model.cfg)}});
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
