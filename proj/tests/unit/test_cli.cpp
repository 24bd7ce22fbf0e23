#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "herdnet/cli.hpp"

using namespace herdnet;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Run r;
    r.code = cli::cli_main(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("command-line errors exit with 2") {
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"train", "--bogus"}).code == 2);
    CHECK(run({"gen"}).code == 2);
    CHECK(run({"gen", "--out", "x", "--rho-view", "1.5"}).code == 2);
    const auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("audit") != std::string::npos);
}

TEST_CASE("runtime failures exit with 1 and one error line") {
    const auto r = run({"eval", "--data", "/nonexistent/herdnet", "--model", "/nonexistent/model"});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error: ", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("gen, split, train, eval and audit") {
    const fs::path dir = fs::temp_directory_path() / "herdnet_cli_test";
    fs::remove_all(dir);
    const auto data = (dir / "data").string();
    REQUIRE(run({"gen", "--out", data, "--counts", "5,5,5", "--size", "64", "--seed", "3"}).code == 0);
    CHECK(fs::exists(dir / "data" / "manifest.csv"));
    REQUIRE(run({"split", "--data", data, "--n-splits", "2"}).code == 0);
    CHECK(fs::exists(dir / "data" / "splits" / "split_02.json"));
    const auto model = (dir / "model").string();
    REQUIRE(run({"train", "--data", data, "--split", "1", "--arch", "spatial", "--epochs", "1", "--image-size", "32",
                 "--frames", "2", "--out", model})
                .code == 0);
    CHECK(fs::exists(dir / "model" / "run_config.ini"));
    const auto eval_out = (dir / "eval.json").string();
    REQUIRE(run({"eval", "--data", data, "--model", model, "--split", "1", "--subset", "test", "--out", eval_out}).code == 0);
    const auto j = read_json(eval_out);
    CHECK(j.at("split_id") == 1);
    CHECK(j.at("subset") == "test");
    CHECK(j.at("predictions").size() > 0);
    const auto audit_dir = (dir / "audit").string();
    REQUIRE(run({"audit", "--data", data, "--predictions", eval_out, "--out", audit_dir}).code == 0);
    CHECK(read_json(dir / "audit" / "audit.json").at("per_view").at("views").size() == 16);
    CHECK(run({"eval", "--data", data, "--model", model, "--subset", "everything"}).code == 2);
    fs::remove_all(dir);
}
