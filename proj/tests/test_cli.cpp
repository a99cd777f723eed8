#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "bvsem/cli.hpp"
#include "bvsem/data.hpp"

using namespace bvsem;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Workdir {
  fs::path root;
  explicit Workdir(const std::string& name) : root(fs::temp_directory_path() / ("bvsem_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
    write_csv(root / "data.csv", gen_tibshirani(40, 1.0, 3).data);
  }
  ~Workdir() { fs::remove_all(root); }
  std::string csv() const { return (root / "data.csv").string(); }
  std::string dir(const std::string& d) const { return (root / d).string(); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("fit writes a result and a manifest") {
    Workdir w("fit");
    const auto r = run({"fit", "--input", w.csv(), "--out", w.dir("a")});
    REQUIRE(r.code == kExitOk);
    const json res = json::parse(slurp(w.root / "a" / "result.json"));
    CHECK(res.at("gamma").size() == 8);
    CHECK(res.at("m").size() == 8);
    CHECK(res.at("raw").contains("intercept"));
    const json man = json::parse(slurp(w.root / "a" / "manifest.json"));
    CHECK(man.at("command") == "fit");
    CHECK(man.at("input_sha256").get<std::string>().size() == 64);
    for (const auto& a : man.at("args")) CHECK(a.get<std::string>().rfind("--out", 0) != 0);
  }

  TEST_CASE("bad hyperparameters and flags exit with a usage error") {
    Workdir w("bad");
    const auto r = run({"fit", "--input", w.csv(), "--v0", "200", "--v1", "100", "--out", w.dir("b")});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("v0 must be < v1") != std::string::npos);
    CHECK(run({"fit", "--input", w.csv(), "--bogus", "1"}).code == kExitUsage);
    CHECK(run({"fit", "--input", w.dir("missing.csv"), "--out", w.dir("c")}).code == kExitUsage);
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"--help"}).code == kExitOk);
  }

  TEST_CASE("replay reproduces artifacts byte for byte") {
    Workdir w("replay");
    const std::vector<std::vector<std::string>> commands{
        {"ensemble", "--input", w.csv(), "--K", "6", "--L", "5", "--seed", "4"},
        {"tune", "bic", "--input", w.csv(), "--grid", "0.001,0.01"},
        {"simulate", "--design", "correlated", "--dataset-only", "--seed", "2"},
        {"simulate", "--design", "tibshirani", "--tuner", "fixed", "--v0", "0.01", "--reps", "3"},
    };
    for (std::size_t c = 0; c < commands.size(); ++c) {
      CAPTURE(commands[c][0]);
      const fs::path first = w.root / ("first" + std::to_string(c)), second = w.root / ("second" + std::to_string(c));
      auto args = commands[c];
      args.insert(args.end(), {"--out", first.string()});
      REQUIRE(run(args).code == kExitOk);
      const auto r = run({"replay", "--manifest", (first / "manifest.json").string(), "--out", second.string()});
      REQUIRE_MESSAGE(r.code == kExitOk, r.err);
      int files = 0;
      for (const auto& entry : fs::directory_iterator(first)) {
        ++files;
        CHECK(slurp(entry.path()) == slurp(second / entry.path().filename()));
      }
      CHECK(files >= 2);
    }
  }

  TEST_CASE("replay refuses a modified input") {
    Workdir w("changed");
    REQUIRE(run({"fit", "--input", w.csv(), "--out", w.dir("a")}).code == kExitOk);
    std::ofstream(w.root / "data.csv", std::ios::app) << "1,2,3,4,5,6,7,8,9\n";
    const auto r = run({"replay", "--manifest", (w.root / "a" / "manifest.json").string(), "--out", w.dir("b")});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("changed") != std::string::npos);
  }

  TEST_CASE("result json round trips unchanged") {
    Workdir w("json");
    REQUIRE(run({"tune", "bic", "--input", w.csv(), "--grid", "0.001,0.01,0.1", "--out", w.dir("t")}).code ==
            kExitOk);
    const std::string text = slurp(w.root / "t" / "result.json");
    const json once = json::parse(text);
    CHECK(json::parse(once.dump()) == once);
    CHECK(once.at("scores").size() == 3);
    CHECK(once.contains("best_v0"));
  }
}
