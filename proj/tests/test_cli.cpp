#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "lrc/corpus.hpp"
#include "lrc/trainer.hpp"
#include "lrc/util.hpp"

using namespace lrc;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

const fs::path& work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "lrc_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

RunResult run_cli(const std::string& args) {
    const fs::path out = work_dir() / "stdout.txt";
    const fs::path err = work_dir() / "stderr.txt";
    const std::string cmd = std::string(LRC_CLI_PATH) + " " + args + " > " + out.string() +
                            " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string path_of(const char* name) { return (work_dir() / name).string(); }

// Shared fixtures (tiny corpora and checkpoints), built once on first use so
// the test cases stay order-independent. The model is small enough that the
// CLI training runs take milliseconds.
void ensure_fixtures() {
    static const bool built = [] {
        std::ofstream cfg(work_dir() / "tiny.json");
        cfg << R"({"model": {"L": 8, "M": 2, "d_model": 16, "n_layers_enc": 1,
                   "n_layers_dec": 1, "n_heads": 2, "d_ff": 32},
                   "train": {"steps": 4, "batch_size": 4, "lr": 0.002, "eval_every": 2}})";
        cfg.close();
        REQUIRE(run_cli("gen --kind code --seed 3 --size 12 --block-len 8 --out " +
                        path_of("code.lrc1"))
                    .exit_code == 0);
        REQUIRE(run_cli("gen --kind text --seed 4 --size 12 --block-len 8 --out " +
                        path_of("text.lrc1"))
                    .exit_code == 0);
        REQUIRE(run_cli("train --corpus " + path_of("code.lrc1") + " --config " +
                        path_of("tiny.json") + " --seed 5 --out " + path_of("ck1.lrck") +
                        " --trace " + path_of("trace.csv"))
                    .exit_code == 0);
        REQUIRE(run_cli("train --corpus " + path_of("text.lrc1") + " --config " +
                        path_of("tiny.json") + " --seed 8 --out " + path_of("ck_text.lrck"))
                    .exit_code == 0);
        return true;
    }();
    (void)built;
}

}  // namespace

TEST_CASE("cli usage errors exit with code 2", "[cli]") {
    REQUIRE(run_cli("").exit_code == 2);
    REQUIRE(run_cli("frobnicate").exit_code == 2);
    auto r = run_cli("gen --kind random --seed 1 --out x.lrc1");  // --size missing
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.rfind("error:", 0) == 0);
    REQUIRE(run_cli("--help").exit_code == 0);
}

TEST_CASE("cli gen writes a loadable, reproducible corpus", "[cli]") {
    auto r = run_cli("gen --kind random --seed 7 --size 6 --block-len 8 --out " +
                     path_of("r1.lrc1"));
    REQUIRE(r.exit_code == 0);
    Corpus c = load_corpus(path_of("r1.lrc1"));
    REQUIRE(c.blocks.size() == 6);
    REQUIRE(c.L == 8);
    REQUIRE(c.vocab_size == 257);

    REQUIRE(run_cli("gen --kind random --seed 7 --size 6 --block-len 8 --out " +
                    path_of("r2.lrc1"))
                .exit_code == 0);
    REQUIRE(file_digest(path_of("r1.lrc1")) == file_digest(path_of("r2.lrc1")));

    const auto manifest = nlohmann::json::parse(slurp(path_of("r1.lrc1.manifest.json")));
    REQUIRE(manifest.contains("command"));
    REQUIRE(manifest.contains("version"));
    REQUIRE(manifest.contains("duration_seconds"));
    REQUIRE(manifest.at("outputs")[0] == path_of("r1.lrc1"));

    auto bad = run_cli("gen --kind random --seed 7 --size 0 --out " + path_of("z.lrc1"));
    REQUIRE(bad.exit_code == 2);
    REQUIRE(bad.err.find("error:") == 0);
    REQUIRE(run_cli("gen --kind klingon --seed 7 --size 5 --out " + path_of("z.lrc1"))
                .exit_code == 2);
}

TEST_CASE("cli train produces identical checkpoints for identical arguments", "[cli]") {
    ensure_fixtures();
    const std::string train_args = " --corpus " + path_of("code.lrc1") + " --config " +
                                   path_of("tiny.json");

    CheckpointData ck = load_checkpoint(path_of("ck1.lrck"));
    REQUIRE(ck.model.cfg.L == 8);
    REQUIRE(ck.step == 4);
    REQUIRE(slurp(path_of("trace.csv")).rfind("step,train_loss,val_tra\n", 0) == 0);

    auto r = run_cli("train" + train_args + " --seed 5 --out " + path_of("ck2.lrck"));
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("final_val_tra=") != std::string::npos);
    REQUIRE(file_digest(path_of("ck1.lrck")) == file_digest(path_of("ck2.lrck")));

    // flags override the config file: a different seed changes the bytes
    REQUIRE(run_cli("train" + train_args + " --seed 6 --out " + path_of("ck3.lrck"))
                .exit_code == 0);
    REQUIRE(file_digest(path_of("ck1.lrck")) != file_digest(path_of("ck3.lrck")));
}

TEST_CASE("cli eval prints machine-parsable metrics", "[cli]") {
    ensure_fixtures();
    auto r = run_cli("eval --checkpoint " + path_of("ck1.lrck") + " --corpus " +
                     path_of("code.lrc1") + " --out " + path_of("eval.csv"));
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("tra=") != std::string::npos);
    REQUIRE(r.out.find("loss=") != std::string::npos);
    const double tra = std::stod(r.out.substr(r.out.find("tra=") + 4));
    REQUIRE(tra >= 0.0);
    REQUIRE(tra <= 1.0);
    REQUIRE(slurp(path_of("eval.csv")).rfind("block_index,", 0) == 0);

    REQUIRE(run_cli("gen --kind random --seed 2 --size 4 --block-len 16 --out " +
                    path_of("wide.lrc1"))
                .exit_code == 0);
    auto bad = run_cli("eval --checkpoint " + path_of("ck1.lrck") + " --corpus " +
                       path_of("wide.lrc1"));
    REQUIRE(bad.exit_code == 2);
    REQUIRE(bad.err.rfind("error: config mismatch", 0) == 0);

    REQUIRE(run_cli("eval --checkpoint " + path_of("nonexistent.lrck") + " --corpus " +
                    path_of("code.lrc1"))
                .exit_code == 1);
}

TEST_CASE("cli route emits a trace and summary", "[cli]") {
    ensure_fixtures();
    const std::string experts = " --expert code=" + path_of("ck1.lrck") + " --expert text=" +
                                path_of("ck_text.lrck");
    auto r = run_cli("route" + experts + " --corpus code=" + path_of("code.lrc1") +
                     " --corpus text=" + path_of("text.lrc1") + " --tra-accept 0 --out " +
                     path_of("route.csv"));
    REQUIRE(r.exit_code == 0);
    REQUIRE(slurp(path_of("route.csv"))
                .rfind("block_index,label,loss_code,loss_text,tra_code,tra_text,selected\n",
                       0) == 0);
    const auto summary = nlohmann::json::parse(slurp(path_of("route.csv.summary.json")));
    REQUIRE(summary.at("blocks") == 24);
    REQUIRE(summary.contains("accuracy"));
    REQUIRE(summary.contains("novel_fraction"));
    REQUIRE(summary.at("per_tier_accuracy").contains("code"));

    // several corpora require labels
    REQUIRE(run_cli("route" + experts + " --corpus " + path_of("code.lrc1") + " --corpus " +
                    path_of("text.lrc1") + " --out " + path_of("route2.csv"))
                .exit_code == 2);
    REQUIRE(run_cli("route --expert " + path_of("ck1.lrck") + " --corpus " +
                    path_of("code.lrc1") + " --out " + path_of("route3.csv"))
                .exit_code == 2);  // missing id=
}

TEST_CASE("cli ablate writes the width table", "[cli]") {
    ensure_fixtures();
    auto r = run_cli("ablate --corpus " + path_of("code.lrc1") + " --config " +
                     path_of("tiny.json") + " --steps 2 --ms 1,2 --out " +
                     path_of("ablation.csv"));
    REQUIRE(r.exit_code == 0);
    const std::string csv = slurp(path_of("ablation.csv"));
    REQUIRE(csv.rfind("M,compression_ratio,final_val_tra\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);

    REQUIRE(run_cli("ablate --corpus " + path_of("code.lrc1") + " --config " +
                    path_of("tiny.json") + " --ms 2,2 --out " + path_of("ablation2.csv"))
                .exit_code == 2);
}

TEST_CASE("cli analyze exports latent geometry", "[cli]") {
    ensure_fixtures();
    auto r = run_cli("analyze --checkpoint " + path_of("ck1.lrck") + " --corpus " +
                     path_of("code.lrc1") + " --corpus-b " + path_of("text.lrc1") +
                     " --probe-seed 2 --out " + path_of("an"));
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("intrinsic_dim_95=") != std::string::npos);
    REQUIRE(r.out.find("probe_accuracy=") != std::string::npos);
    REQUIRE(slurp(path_of("an.latents.csv")).rfind("label,f0", 0) == 0);
    REQUIRE(slurp(path_of("an.pca.csv")).rfind("component_index,eigenvalue,cumvar\n", 0) == 0);
    const std::string proj = slurp(path_of("an.projection.csv"));
    REQUIRE(proj.rfind("label,pc1,pc2\n", 0) == 0);
    REQUIRE(proj.find("\ncode,") != std::string::npos);  // rows named by source file
    REQUIRE(proj.find("\ntext,") != std::string::npos);
    const auto probe = nlohmann::json::parse(slurp(path_of("an.probe.json")));
    REQUIRE(probe.at("probe_accuracy").get<double>() >= 0.0);

    // without a second corpus there is no probe output
    REQUIRE(run_cli("analyze --checkpoint " + path_of("ck1.lrck") + " --corpus " +
                    path_of("code.lrc1") + " --out " + path_of("an2"))
                .exit_code == 0);
    REQUIRE(!fs::exists(path_of("an2.probe.json")));
    REQUIRE(fs::exists(path_of("an2.pca.csv")));
}
