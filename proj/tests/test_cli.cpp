#include "doctest.h"

#include "mpruner/checkpoint.hpp"
#include "mpruner/cka.hpp"
#include "mpruner/cli.hpp"
#include "mpruner/cluster.hpp"
#include "mpruner/report.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mpruner;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "mpruner_cli_test" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// A small but complete configuration; `patch` is merged on top.
fs::path write_config(const fs::path& dir, const json& patch = json::object()) {
    json c = {{"seed", 3},
              {"out", (dir / "out").string()},
              {"model", {{"blocks", 8}, {"width", 16}, {"inner_width", 32}}},
              {"dataset", {{"kind", "gaussian_clusters"}, {"n", 800}, {"input_dim", 8}, {"classes", 4}, {"separation", 3.0}}},
              {"train", {{"learning_rate", 1e-3}, {"epochs", 4}}},
              {"retrain", {{"learning_rate", 1e-3}, {"epochs", 1}}},
              {"prune", {{"tau", 0.98}, {"gamma", 0.02}, {"seeds_per_chain", 4}, {"protect_last_cluster", false}}},
              {"sparsify", {{"levels", {0.0, 0.5}}, {"calibration_size", 64}}}};
    c.merge_patch(patch);
    const fs::path path = dir / "config.json";
    std::ofstream(path) << c.dump(2);
    return path;
}

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "mpruner");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("configuration errors exit with 2") {
    const auto dir = scratch("config_errors");
    CHECK(cli({}).code == kExitConfig);
    CHECK(cli({"frobnicate"}).code == kExitConfig);
    CHECK(cli({"analyze", "--config", (dir / "missing.json").string()}).code == kExitConfig);
    CHECK(cli({"analyze", "--config", write_config(dir, {{"bogus", 1}}).string()}).code == kExitConfig);
    CHECK(cli({"analyze", "--config", write_config(dir).string(), "--tau", "1.5"}).code == kExitConfig);
    CHECK(cli({"analyze", "--config", write_config(dir, {{"checkpoint", (dir / "none.mprk").string()}}).string()})
              .code == kExitConfig);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(cli({"analyze", "--config", (dir / "broken.json").string()}).code == kExitConfig);
}

TEST_CASE("runtime errors exit with 3") {
    const auto dir = scratch("runtime_errors");
    std::ofstream(dir / "junk.mprk") << "MPRK garbage";
    const auto r = cli({"analyze", "--config", write_config(dir, {{"checkpoint", (dir / "junk.mprk").string()}}).string()});
    CHECK(r.code == kExitRuntime);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("divergence exits with 3 and keeps the partial history") {
    const auto dir = scratch("divergence");
    const auto cfg = write_config(dir, {{"retrain", {{"learning_rate", 1e30}}}});
    CHECK(cli({"prune", "--config", cfg.string()}).code == kExitRuntime);
    const auto history = json::parse(slurp(dir / "out" / "history.json"));
    CHECK(history.size() == 1);
    CHECK(fs::exists(dir / "out" / "model.mprk"));
}

TEST_CASE("the binary reports exit codes to the shell") {
    const std::string bin = MPRUNER_CLI_PATH;
    const int status = std::system((bin + " analyze --tau 7 > /dev/null 2>&1").c_str());
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == kExitConfig);
}

TEST_CASE("analyze writes re-ingestible, tau-nested reports") {
    const auto dir = scratch("analyze");
    const auto cfg = write_config(dir);
    const auto r = cli({"analyze", "--config", cfg.string(), "--tau", "0.95", "--tau", "0.98", "--tau", "0.99"});
    REQUIRE(r.code == kExitOk);
    const fs::path out = dir / "out";
    const CkaChain chain = chain_from_csv(slurp(out / "chain.csv"));
    const auto reports = json::parse(slurp(out / "clusters.json"));
    REQUIRE(reports.at("reports").size() == 3);
    std::vector<std::set<std::size_t>> starts;
    for (const auto& rep : reports.at("reports")) {
        const ClusterSet emitted = clusters_from_json(rep);
        CHECK(get_candidates(chain, emitted.tau) == emitted);
        std::set<std::size_t> s;
        for (const auto& c : emitted.clusters) s.insert(c.front());
        starts.push_back(s);
    }
    for (std::size_t i = 1; i < starts.size(); ++i)
        CHECK(std::includes(starts[i].begin(), starts[i].end(), starts[i - 1].begin(), starts[i - 1].end()));
    const CkaMatrix m = matrix_from_json(slurp(out / "cka_matrix.json"));
    CHECK(m.hooks == chain.hooks);
    CHECK(m.values.rows() == 8);
    const auto baseline = load_checkpoint_file(out / "baseline.mprk");
    CHECK(baseline.block_count() == 8);
}

TEST_CASE("analyze on an identity-block checkpoint emits an all-ones matrix") {
    const auto dir = scratch("identity");
    auto m = build_model<float>(8, 5, BlockSpec{BlockKind::ResidualMlp, 16, 32, 0}, 4, 2);
    for (auto& b : m.blocks) b.zero_residual_branches();
    save_checkpoint_file(m, dir / "id.mprk");
    const auto cfg = write_config(dir, {{"checkpoint", (dir / "id.mprk").string()}});
    REQUIRE(cli({"analyze", "--config", cfg.string()}).code == kExitOk);
    const CkaMatrix mat = matrix_from_json(slurp(dir / "out" / "cka_matrix.json"));
    CHECK((mat.values.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("prune reruns are byte-identical and the summary has one row per run plus baseline") {
    const auto dir = scratch("prune");
    const auto cfg = write_config(dir);
    REQUIRE(cli({"prune", "--config", cfg.string()}).code == kExitOk);
    const fs::path out = dir / "out";
    const std::string first = slurp(out / "history.json");
    const auto model_bytes = slurp(out / "model.mprk");
    REQUIRE(cli({"prune", "--config", cfg.string()}).code == kExitOk);
    CHECK(slurp(out / "history.json") == first);
    CHECK(slurp(out / "model.mprk") == model_bytes);

    const auto runs = runs_from_json(json::parse(first));
    const std::string summary = slurp(out / "summary.md");
    const auto rows = std::count(summary.begin(), summary.end(), '\n') - 2;  // header and rule
    CHECK(rows == static_cast<long>(runs.size() + 1));
    const auto pruned = load_checkpoint_file(out / "model.mprk");
    CHECK(pruned.block_count() == runs.back().final_metrics.block_count);
    CHECK(pruned.block_count() < 8);

    // report regenerates the same table from the stored history and timings.
    fs::remove(out / "summary.md");
    REQUIRE(cli({"report", "--config", cfg.string()}).code == kExitOk);
    CHECK(slurp(out / "summary.md") == summary);
}

TEST_CASE("an unsatisfiable gamma accepts nothing and still exits 0") {
    const auto dir = scratch("reject");
    const auto cfg = write_config(dir);
    REQUIRE(cli({"prune", "--config", cfg.string(), "--gamma", "-1"}).code == kExitOk);
    const auto runs = runs_from_json(json::parse(slurp(dir / "out" / "history.json")));
    REQUIRE(runs.size() == 1);
    CHECK(runs[0].accepted_count() == 0);
    CHECK(runs[0].iterations.size() == 3);
    CHECK(load_checkpoint_file(dir / "out" / "model.mprk").block_count() == 8);
}

TEST_CASE("train writes a checkpoint, log and metrics") {
    const auto dir = scratch("train");
    REQUIRE(cli({"train", "--config", write_config(dir).string()}).code == kExitOk);
    const fs::path out = dir / "out";
    CHECK(load_checkpoint_file(out / "model.mprk").block_count() == 8);
    const std::string log = slurp(out / "train_log.jsonl");
    CHECK(std::count(log.begin(), log.end(), '\n') == 4);
    CHECK(json::parse(slurp(out / "metrics.json")).at("accuracy").get<double>() > 0.5);
}

TEST_CASE("sparsify: level 0 is exact and emitted rows carry the configured zeros") {
    const auto dir = scratch("sparsify");
    REQUIRE(cli({"sparsify", "--config", write_config(dir).string()}).code == kExitOk);
    const fs::path out = dir / "out";
    const auto report = json::parse(slurp(out / "sparsify.json"));
    const auto& levels = report.at("levels");
    REQUIRE(levels.size() == 2);
    CHECK(levels[0].at("baseline").at("accuracy") == report.at("dense_baseline").at("accuracy"));
    CHECK(levels[0].at("pruned").at("accuracy") == report.at("dense_pruned").at("accuracy"));
    const auto sparse = load_checkpoint_file(out / "sparse_pruned_0.50.mprk");
    for (const auto& b : sparse.blocks)
        for (const Tensor* w : {&b.up.weight, &b.down.weight})
            for (Eigen::Index r = 0; r < w->rows(); ++r)
                CHECK((w->row(r).array() == 0.0f).count() == w->cols() / 2);
    CHECK(levels[1].at("pruned").at("nonzero_parameter_count").get<std::size_t>() <
          levels[1].at("baseline").at("nonzero_parameter_count").get<std::size_t>());
}
