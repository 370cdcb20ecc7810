#include <cstdlib>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "nucseg/config.hpp"
#include "nucseg/io.hpp"
#include "oracles.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = nucseg::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 1") {
    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"tile-plan", "512"}).code == 1);
    CHECK(run({"tile-plan", "512", "512", "--tile", "64", "--overlap", "64"}).code == 1);
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("data errors exit 2 with a JSON error object") {
    const Result r = run({"eval", "--pred-dir", "/nonexistent/a", "--gt-dir", "/nonexistent/b"});
    CHECK(r.code == 2);
    const json e = json::parse(r.err);
    CHECK(e["error"]["code"] == 2);
    CHECK(e["error"]["kind"] == "data_error");
    CHECK_FALSE(e["error"]["message"].get<std::string>().empty());
  }

  TEST_CASE("help lists flag defaults from the run config") {
    const nucseg::RunConfig d;
    const Result r = run({"pipeline", "--help"});
    CHECK(r.code == 0);
    for (const std::string flag : {"--tile", "--overlap", "--k-neg", "--prob-threshold", "--nms-iou", "--jobs"})
      CHECK(r.out.find(flag) != std::string::npos);
    CHECK(r.out.find(std::to_string(d.pipeline.tile)) != std::string::npos);
    const Result g = run({"match-targets", "--help"});
    CHECK(g.out.find("0.05") != std::string::npos);
  }

  TEST_CASE("tile-plan") {
    const Result r = run({"tile-plan", "512", "512", "--tile", "256", "--overlap", "128"});
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["count"] == 9);
    CHECK(j.contains("version"));
    CHECK(j["config"]["pipeline"]["tile"] == 256);
  }

  TEST_CASE("gen-synth is deterministic and replayable per image") {
    const auto a = oracle::temp_dir("cli_gen_a"), b = oracle::temp_dir("cli_gen_b");
    const std::vector<std::string> common{"--seed", "11", "--n-images", "3", "--width", "96", "--height", "80",
                                          "--min-count", "3", "--max-count", "8"};
    auto args_a = std::vector<std::string>{"gen-synth", "--out-dir", a.string()};
    auto args_b = std::vector<std::string>{"gen-synth", "--out-dir", b.string()};
    args_a.insert(args_a.end(), common.begin(), common.end());
    args_b.insert(args_b.end(), common.begin(), common.end());
    REQUIRE(run(args_a).code == 0);
    REQUIRE(run(args_b).code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      ++files;
      CHECK(nucseg::io::read_text(e.path()) == nucseg::io::read_text(b / e.path().filename()));
    }
    CHECK(files > 3);

    const json manifest = json::parse(nucseg::io::read_text(a / "manifest.json"));
    REQUIRE(manifest["images"].size() == 3);
    const json third = manifest["images"][2];
    CHECK(third["seed"] == 13);
    nucseg::SynthConfig sc;
    sc.width = 96;
    sc.height = 80;
    sc.min_count = 3;
    sc.max_count = 8;
    sc.seed = third["seed"].get<std::uint64_t>();
    CHECK(nucseg::generate_synthetic(sc).map == nucseg::io::read_instance_map(a / third["map"].get<std::string>()));
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("NUCSEG_SEED overrides the config seed and flags override both") {
    const auto dir = oracle::temp_dir("cli_seed");
    nucseg::io::write_text(dir / "cfg.json", R"({"synth": {"seed": 3}})");
    const std::vector<std::string> base{"gen-synth", "--out-dir", (dir / "o").string(), "--width", "64",
                                        "--height", "64", "--min-count", "2", "--max-count", "5", "--config", (dir / "cfg.json").string()};
    auto seed_of = [](const Result& r) { return json::parse(r.out)["config"]["synth"]["seed"].get<int>(); };
    CHECK(seed_of(run(base)) == 3);
    ::setenv("NUCSEG_SEED", "42", 1);
    CHECK(seed_of(run(base)) == 42);
    auto with_flag = base;
    with_flag.insert(with_flag.end(), {"--seed", "7"});
    CHECK(seed_of(run(with_flag)) == 7);
    ::setenv("NUCSEG_SEED", "x", 1);
    CHECK(run(base).code == 2);
    ::unsetenv("NUCSEG_SEED");
    fs::remove_all(dir);
  }

  TEST_CASE("match-targets agrees with the exhaustive mode") {
    const auto dir = oracle::temp_dir("cli_match");
    nucseg::io::write_text(dir / "c.csv",
                           "x,y,logit_0,logit_1,logit_2\n1,1,2,0,0\n5,5,0,2,0\n9,1,0,0,2\n3,8,1,1,1\n");
    nucseg::io::write_text(dir / "g.csv", "x,y,class,score\n1.5,1,1,\n4,5,2,\n");
    const std::vector<std::string> base{"match-targets", "--candidates", (dir / "c.csv").string(), "--gt",
                                        (dir / "g.csv").string()};
    auto with_oracle = base;
    with_oracle.push_back("--oracle");
    with_oracle.insert(with_oracle.end(), {"--targets-out", (dir / "t.csv").string()});
    const Result h = run(base), o = run(with_oracle);
    REQUIRE(h.code == 0);
    REQUIRE(o.code == 0);
    const json jh = json::parse(h.out), jo = json::parse(o.out);
    CHECK(jh["pairs"] == jo["pairs"]);
    CHECK(jh["total_weight"] == jo["total_weight"]);
    CHECK(jh["pairs"] == json::parse("[[0,0],[1,1]]"));
    CHECK(nucseg::io::read_text(dir / "t.csv") == "anchor,class,x,y,gt_index\n0,1,1.5,1,0\n1,2,4,5,1\n2,,,,\n3,,,,\n");

    nucseg::io::write_text(dir / "none.csv", "x,y,class,score\n");
    const json empty = json::parse(run({"match-targets", "--candidates", (dir / "c.csv").string(), "--gt",
                                        (dir / "none.csv").string()}).out);
    CHECK(empty["pairs"].empty());
    CHECK(empty["unmatched_anchors"].size() == 4);
    fs::remove_all(dir);
  }

  TEST_CASE("grad-check passes") {
    const Result r = run({"grad-check", "--points", "20"});
    CHECK(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["passed"] == true);
    for (const auto& [name, v] : j["losses"].items()) CHECK(v["max_relative_error"].get<double>() <= 1e-4);

    // An impossible tolerance is an invariant violation.
    const Result strict = run({"grad-check", "--points", "5", "--tolerance", "0"});
    CHECK(strict.code == 3);
    CHECK(json::parse(strict.err)["error"]["code"] == 3);
  }

  TEST_CASE("pipeline then eval reproduces ground truth") {
    const auto dir = oracle::temp_dir("cli_e2e");
    REQUIRE(run({"gen-synth", "--out-dir", (dir / "gt").string(), "--seed", "5", "--n-images", "2", "--width", "160",
                 "--height", "160"}).code == 0);
    for (const std::string stem : {"img_0000", "img_0001"}) {
      const Result r = run({"pipeline", "--prompts", (dir / "gt" / (stem + ".points.csv")).string(), "--prob",
                            (dir / "gt" / (stem + ".prob.json")).string(), "--gt",
                            (dir / "gt" / (stem + ".png")).string(), "--tile", "64", "--overlap", "32", "--out",
                            (dir / "pred" / (stem + ".png")).string()});
      REQUIRE(r.code == 0);
    }
    const Result e = run({"eval", "--pred-dir", (dir / "pred").string(), "--gt-dir", (dir / "gt").string()});
    REQUIRE(e.code == 0);
    const json j = json::parse(e.out);
    CHECK(j["bPQ"] == 1.0);
    CHECK(j["mPQ"] == 1.0);
    CHECK(j["AJI"] == 1.0);
    CHECK(j["detection"]["f1"] == 1.0);
    CHECK(j["per_image"].size() == 2);

    const Result self = run({"eval", "--pred-dir", (dir / "gt").string(), "--gt-dir", (dir / "gt").string(),
                             "--radius-um", "3"});
    REQUIRE(self.code == 0);
    CHECK(json::parse(self.out)["detection"]["radius_px"] == 12.0);
    fs::remove_all(dir);
  }
}
