#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "claa/cli.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::initializer_list<std::string> args) {
    std::vector<std::string> owned{"claa-sim"};
    owned.insert(owned.end(), args);
    std::vector<const char*> argv;
    for (const auto& a : owned) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = claa::cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("claa_cli_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string write(const std::string& name, const std::string& body) const {
        std::ofstream(path / name) << body;
        return (path / name).string();
    }
    static inline int counter = 0;
};

std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kPair = R"({"name": "cli", "duration": 5, "nodes": [1, 2], "links": [{"a": 1, "b": 2, "ber": 0}],
                        "traffic": [{"src": 1, "dst": 2, "size": 64, "rate": 2}]})";

}  // namespace

TEST_CASE("checksum subcommand") {
    auto r = invoke({"checksum", "--text", "123456789"});
    CHECK(r.code == claa::cli::kExitOk);
    CHECK(r.out == "0xE3069283\n");
    r = invoke({"checksum", "--algorithm", "adler32", "--text", "123456789"});
    CHECK(r.out == "0x091E01DE\n");
    r = invoke({"checksum", "--hex", "31 32 33 34 35 36 37 38 39"});
    CHECK(r.out == "0xE3069283\n");

    TempDir dir;
    const auto f = dir.write("in.bin", "123456789");
    CHECK(invoke({"checksum", "--file", f}).out == "0xE3069283\n");
    CHECK(invoke({"checksum", "--file", (dir.path / "missing").string()}).code == claa::cli::kExitNoInput);

    CHECK(invoke({"checksum", "--hex", "abc"}).code == claa::cli::kExitUsage);
    CHECK(invoke({"checksum", "--hex", "zz"}).code == claa::cli::kExitUsage);
    CHECK(invoke({"checksum", "--algorithm", "md5", "--text", "x"}).code == claa::cli::kExitUsage);
    CHECK(invoke({"checksum", "--text", "a", "--hex", "61"}).code == claa::cli::kExitUsage);
}

TEST_CASE("usage errors") {
    CHECK(invoke({}).code == claa::cli::kExitUsage);
    CHECK(invoke({"frobnicate"}).code == claa::cli::kExitUsage);
    CHECK(invoke({"run", "--scenario", "x.json"}).code == claa::cli::kExitUsage);
    const auto help = invoke({"--help"});
    CHECK(help.code == claa::cli::kExitOk);
    CHECK(help.out.find("validate-matrix") != std::string::npos);
}

TEST_CASE("builtin matrix round-trips through validate-matrix") {
    TempDir dir;
    const auto path = (dir.path / "m.json").string();
    REQUIRE(invoke({"dump-builtin-matrix", "--out", path}).code == claa::cli::kExitOk);
    auto r = invoke({"validate-matrix", path});
    CHECK(r.code == claa::cli::kExitOk);
    CHECK(r.out == "ok: 19 descriptors\n");
    CHECK(invoke({"dump-builtin-matrix"}).out == slurp(path));

    // A descriptor with no roles at all breaks the rules.
    auto m = nlohmann::json::parse(slurp(path));
    auto& d = m[0];
    d["roles"] = nlohmann::json::array();
    const auto bad = dir.write("bad.json", m.dump());
    r = invoke({"validate-matrix", bad});
    CHECK(r.code == claa::cli::kExitViolations);
    CHECK(r.out.find(d["id"].get<std::string>() + ": ") == 0);

    CHECK(invoke({"validate-matrix", dir.write("broken.json", "{")}).code == claa::cli::kExitBadInput);
    CHECK(invoke({"validate-matrix", dir.write("shape.json", "[1]")}).code == claa::cli::kExitBadInput);
    CHECK(invoke({"validate-matrix", (dir.path / "none.json").string()}).code == claa::cli::kExitNoInput);
}

TEST_CASE("run writes a metrics csv") {
    TempDir dir;
    const auto scenario = dir.write("s.json", kPair);
    const auto csv = (dir.path / "out.csv").string();
    const auto trace = (dir.path / "trace.jsonl").string();
    auto r = invoke({"run", "--scenario", scenario, "--out", csv, "--trace-claa", trace});
    CHECK(r.code == claa::cli::kExitOk);
    CHECK(r.out.find("application_goodput") != std::string::npos);
    const auto body = slurp(csv);
    CHECK(body.starts_with("#claa-sim,v1\n"));
    CHECK(body.find("global,messages_offered,") != std::string::npos);
    CHECK(fs::exists(trace));

    CHECK(invoke({"run", "--scenario", dir.write("bad.json", R"({"duration": 1})"), "--out", csv}).code ==
          claa::cli::kExitBadInput);
    CHECK(invoke({"run", "--scenario", dir.write("junk.json", "not json"), "--out", csv}).code ==
          claa::cli::kExitBadInput);
    CHECK(invoke({"run", "--scenario", (dir.path / "gone.json").string(), "--out", csv}).code ==
          claa::cli::kExitNoInput);
}

TEST_CASE("compare writes one column per leg") {
    TempDir dir;
    const auto scenario = dir.write("s.json", kPair);
    const auto flags = dir.write("f.json", R"({"off": {}, "on": {"*": true}})");
    const auto csv = (dir.path / "cmp.csv").string();
    const auto r = invoke({"compare", "--scenario", scenario, "--flags", flags, "--out", csv});
    CHECK(r.code == claa::cli::kExitOk);
    CHECK(slurp(csv).starts_with("#claa-sim,v1\nmetric,off,on,delta_on,rel_on\n"));

    const auto one = dir.write("one.json", R"({"only": {}})");
    CHECK(invoke({"compare", "--scenario", scenario, "--flags", one, "--out", csv}).code == claa::cli::kExitBadInput);
}

TEST_CASE("checksum-dist reports uniformity") {
    const auto r = invoke({"checksum-dist", "--length", "8", "--count", "20000", "--seed", "5"});
    CHECK(r.code == claa::cli::kExitOk);
    CHECK(r.out.find("algorithm   ") == 0);
    CHECK(r.out.find("count       20000\n") != std::string::npos);
    CHECK(r.out.find("uniform     ") != std::string::npos);
    CHECK(invoke({"checksum-dist", "--count", "0"}).code == claa::cli::kExitUsage);
    CHECK(invoke({"checksum-dist", "--alpha", "2"}).code == claa::cli::kExitUsage);
}
