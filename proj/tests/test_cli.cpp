#include "test_support.hpp"

#include "tsalign/cli.hpp"
#include "tsalign/config.hpp"
#include "tsalign/eval.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tsalign;
namespace fs = std::filesystem;

namespace {

const char* kToyConfig = R"({
  "data": {"name": "toy", "synth": {"length": 512, "channels": 2, "seed": 7,
           "components": [{"kind": "sine", "amplitude": 1.0, "period_steps": 24, "phase_steps": 5},
                          {"kind": "noise", "sigma": 0.05}]}},
  "input_len": 32, "patch_len": 8, "stride": 4, "horizons": [8, 16],
  "backbone": {"layers": 2, "dim": 16, "heads": 2, "ffn_dim": 64, "max_positions": 64},
  "encoder": {"max_patches": 16},
  "align": {"batch_size": 16, "epochs": 1, "max_steps": 8},
  "finetune": {"batch_size": 16, "lp_epochs": 1, "ft_epochs": 1, "max_steps": 4},
  "seed": 11
})";

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("tsalign_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text, const std::string& name = "cfg.json") {
    const auto p = dir / name;
    std::ofstream(p) << text;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

Index count_files(const fs::path& dir) {
    if (!fs::exists(dir)) return 0;
    Index n = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("config defaults follow the reference setup") {
    const auto cfg = config::parse_run_config(R"({"data": {"path": "x.csv"}})");
    CHECK(cfg.model.input_len == 512);
    CHECK(cfg.model.patch_len == 16);
    CHECK(cfg.model.stride == 8);
    CHECK(cfg.horizons == std::vector<Index>{96, 192, 336, 720});
    CHECK(cfg.model.backbone.layers == 6);
    CHECK(cfg.model.backbone.dim == 768);
    CHECK(cfg.model.lora_rank == 4);
    CHECK(cfg.transfer == config::Transfer::Required);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config parsing rejects bad documents") {
    CHECK_THROWS_AS(config::parse_run_config("{"), ConfigError);
    CHECK_THROWS_AS(config::parse_run_config(R"({"data": {"path": "x"}, "typo": 1})"), ConfigError);
    CHECK_THROWS_AS(config::parse_run_config(R"({"data": {"path": "x"}, "input_len": "long"})"), ConfigError);
    CHECK_THROWS_AS(config::parse_run_config(R"({"data": {"path": "x"}, "trainable": ["everything"]})"),
                    ConfigError);
    auto cfg = config::parse_run_config(R"({"data": {"path": "x"}, "input_len": 8, "patch_len": 16})");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = config::parse_run_config(R"({"data": {"path": "x"}, "horizons": [8, 0]})");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = config::parse_run_config(R"({})");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config survives a json round trip") {
    const auto a = config::parse_run_config(kToyConfig);
    const auto b = config::parse_run_config(config::to_json(a));
    CHECK(config::to_json(a) == config::to_json(b));
    CHECK(b.synth->components.size() == 2);
    CHECK(b.align.max_steps == 8);
    CHECK(b.align.seed == 11);
}

TEST_CASE("relative data paths resolve under TSALIGN_DATA_DIR") {
    auto cfg = config::parse_run_config(R"({"data": {"path": "ett/h1.csv"}})");
    ::setenv("TSALIGN_DATA_DIR", "/data/root", 1);
    CHECK(cfg.resolved_data_path() == fs::path("/data/root/ett/h1.csv"));
    cfg.data_path = "/abs/h1.csv";
    CHECK(cfg.resolved_data_path() == fs::path("/abs/h1.csv"));
    ::unsetenv("TSALIGN_DATA_DIR");
    cfg.data_path = "ett/h1.csv";
    CHECK(cfg.resolved_data_path() == fs::path("ett/h1.csv"));
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"train"}).code == cli::kExitUsage);
    CHECK(run({"align"}).code == cli::kExitUsage);
    CHECK(run({"align", "--config", "/nonexistent/cfg.json"}).code == cli::kExitUsage);
    CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("synth writes deterministic csv files") {
    const auto dir = fresh_dir("synth");
    auto cfg = std::string(kToyConfig);
    cfg.replace(cfg.find("\"length\": 512"), 13, "\"length\": 96");
    const auto path = write_config(dir, cfg);
    REQUIRE(run({"synth", "--config", path.string(), "--out", (dir / "a.csv").string()}).code == 0);
    REQUIRE(run({"synth", "--config", path.string(), "--out", (dir / "b.csv").string()}).code == 0);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    const auto series = data::load_csv(dir / "a.csv");
    CHECK(series.length() == 96);
    CHECK(series.sampling_interval == 3600);
    const auto text = slurp(dir / "a.csv");
    CHECK(std::count(text.begin(), text.end(), '\n') == 97);
}

TEST_CASE("synth with an invalid spec fails without output") {
    const auto dir = fresh_dir("synth_bad");
    auto cfg = std::string(kToyConfig);
    cfg.replace(cfg.find("\"period_steps\": 24"), 18, "\"period_steps\": 1");
    const auto path = write_config(dir, cfg);
    const auto r = run({"synth", "--config", path.string(), "--out", (dir / "out" / "a.csv").string()});
    CHECK(r.code != 0);
    CHECK_FALSE(r.err.empty());
    CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("align, finetune, evaluate and inspect on the toy config") {
    const auto dir = fresh_dir("pipeline");
    const auto path = write_config(dir, kToyConfig);
    const auto run_dir = dir / "run";

    const auto a = run({"align", "--config", path.string(), "--output-dir", run_dir.string()});
    REQUIRE_MESSAGE(a.code == 0, a.err);
    const auto ckpt_path = run_dir / "checkpoints" / "alignment.ckpt";
    REQUIRE(fs::exists(ckpt_path));
    CHECK(checkpoint::read_manifest(ckpt_path).stage == "alignment");
    CHECK(fs::exists(run_dir / "logs" / "align.jsonl"));

    // Same seed, second directory: bit-identical checkpoint.
    const auto again = dir / "again";
    REQUIRE(run({"align", "--config", path.string(), "--output-dir", again.string()}).code == 0);
    CHECK(slurp(ckpt_path) == slurp(again / "checkpoints" / "alignment.ckpt"));
    const auto other_seed = dir / "seed12";
    REQUIRE(run({"align", "--config", path.string(), "--output-dir", other_seed.string(), "--seed", "12"}).code == 0);
    CHECK(slurp(ckpt_path) != slurp(other_seed / "checkpoints" / "alignment.ckpt"));

    const auto f = run({"finetune", "--config", path.string(), "--output-dir", run_dir.string(),
                        "--alignment-checkpoint", ckpt_path.string()});
    REQUIRE_MESSAGE(f.code == 0, f.err);
    CHECK(fs::exists(run_dir / "checkpoints" / "forecast_h8.ckpt"));
    CHECK(fs::exists(run_dir / "checkpoints" / "forecast_h16.ckpt"));
    CHECK(count_files(run_dir / "reports") == 1);
    const auto report = eval::report_from_json(slurp(run_dir / "reports" / "finetune.json"));
    CHECK(report.horizons.size() == 2);
    CHECK(report.dataset == "toy");

    const auto e = run({"evaluate", "--config", path.string(), "--output-dir", run_dir.string()});
    REQUIRE_MESSAGE(e.code == 0, e.err);
    const auto evaluated = eval::report_from_json(e.out);
    REQUIRE(evaluated.horizons.size() == 2);
    CHECK(evaluated.horizons[0].mse == report.horizons[0].mse);
    CHECK(evaluated.horizons[1].mae == report.horizons[1].mae);

    const auto lin = run({"evaluate", "--config", path.string(), "--checkpoint", ckpt_path.string(),
                          "--horizons", "8"});
    REQUIRE_MESSAGE(lin.code == 0, lin.err);
    CHECK(eval::report_from_json(lin.out).horizons.size() == 1);

    const auto i = run({"inspect-checkpoint", "--checkpoint", (run_dir / "checkpoints" / "forecast_h8.ckpt").string()});
    REQUIRE(i.code == 0);
    CHECK(i.out.find("stage forecast") != std::string::npos);
    CHECK(i.out.find("blocks.0.attn.w_q") != std::string::npos);
    CHECK(i.out.find("16 x 16") != std::string::npos);
    CHECK(i.out.find("frozen") != std::string::npos);
    CHECK(i.out.find("trainable") != std::string::npos);
    CHECK(i.out.find("head.forecast") != std::string::npos);
}

TEST_CASE("finetune requires an alignment checkpoint when transfer is required") {
    const auto dir = fresh_dir("transfer");
    const auto path = write_config(dir, kToyConfig);
    const auto r = run({"finetune", "--config", path.string(), "--output-dir", (dir / "run").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("alignment checkpoint") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "run"));
    const auto missing = run({"finetune", "--config", path.string(), "--output-dir", (dir / "run").string(),
                              "--alignment-checkpoint", (dir / "nope.ckpt").string()});
    CHECK(missing.code == cli::kExitUsage);
    CHECK(missing.err.find("nope.ckpt") != std::string::npos);
    const auto none = run({"finetune", "--config", path.string(), "--output-dir", (dir / "run").string(),
                           "--transfer", "none"});
    CHECK(none.code == 0);
}

TEST_CASE("few-shot override trains on the prefix") {
    const auto dir = fresh_dir("fewshot");
    auto cfg = std::string(kToyConfig);
    cfg.replace(cfg.find("\"length\": 512"), 13, "\"length\": 4000");
    const auto path = write_config(dir, cfg);
    const auto r = run({"finetune", "--config", path.string(), "--output-dir", (dir / "run").string(),
                        "--transfer", "none", "--few-shot", "0.1", "--horizons", "8"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.err.find("train rows 280 of 2800") != std::string::npos);
    const auto log = slurp(dir / "run" / "logs" / "finetune.jsonl");
    CHECK(log.find(R"("train_rows":280)") != std::string::npos);
    CHECK(log.find(R"("train_rows_full":2800)") != std::string::npos);
    CHECK(eval::report_from_json(slurp(dir / "run" / "reports" / "finetune.json")).few_shot_fraction == 0.1);
}

TEST_CASE("missing data file exits with code 2 and names the path") {
    const auto dir = fresh_dir("nodata");
    const auto path = write_config(dir, kToyConfig);
    const auto r = run({"align", "--config", path.string(), "--data", "/nonexistent/ett.csv", "--output-dir",
                        (dir / "run").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("/nonexistent/ett.csv") != std::string::npos);
    CHECK(count_files(dir / "run") == 0);
}

TEST_CASE("config errors leave no partial output") {
    const auto dir = fresh_dir("partial");
    auto cfg = std::string(kToyConfig);
    cfg.replace(cfg.find("\"horizons\": [8, 16]"), 19, "\"horizons\": [8, -1]");
    const auto path = write_config(dir, cfg);
    for (const char* cmd : {"align", "finetune", "evaluate", "gradcheck"}) {
        const auto r = run({cmd, "--config", path.string(), "--output-dir", (dir / "run").string()});
        CHECK(r.code == cli::kExitUsage);
    }
    CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("runtime failures exit with code 1") {
    const auto dir = fresh_dir("runtime");
    const auto path = write_config(dir, kToyConfig);
    // 512 rows leave a 51-row validation split, too short for T_in + 720.
    const auto r = run({"finetune", "--config", path.string(), "--output-dir", (dir / "run").string(),
                        "--transfer", "none", "--horizons", "720"});
    CHECK(r.code == cli::kExitRuntime);
    CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("gradcheck passes on the toy config and fails on a tiny threshold") {
    const auto dir = fresh_dir("gradcheck");
    auto cfg = std::string(kToyConfig);
    cfg.replace(cfg.find("\"layers\": 2"), 11, "\"layers\": 1");
    const auto path = write_config(dir, cfg);
    const auto r = run({"gradcheck", "--config", path.string(), "--horizons", "8", "--windows", "1"});
    CHECK_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("\"passed\": true") != std::string::npos);
    // A huge step breaks the central difference approximation.
    const auto bad = run({"gradcheck", "--config", path.string(), "--horizons", "8", "--windows", "1", "--eps", "0.5"});
    CHECK(bad.code != 0);
    CHECK(bad.out.find("\"passed\": false") != std::string::npos);
}
