#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sar/bench.hpp"
#include "sar/cli.hpp"
#include "sar/errors.hpp"

using namespace sar;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "sar");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sar_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixture(const std::string& name) { return std::string(SAR_FIXTURE_DIR) + "/" + name; }

fs::path small_task(const std::string& name, const std::string& classes = "8", const std::string& novel = "20") {
  const auto dir = scratch(name);
  const auto r = run({"gen-task", "--out", dir.string(), "--num-classes", classes, "--num-novel", novel, "--shots", "4"});
  REQUIRE(r.code == 0);
  return dir;
}

}  // namespace

TEST_CASE("key=value parsing") {
  const auto s = parse_key_values("# comment\nlambda = 0.5\n\n  # indented comment\nk=8\n");
  CHECK(s.at("lambda") == "0.5");
  CHECK(s.at("k") == "8");
  CHECK_THROWS_AS(parse_key_values("lambda 0.5\n"), FormatError);
  CHECK_THROWS_AS(parse_key_values("k=1\nk=2\n"), FormatError);
}

TEST_CASE("help exits zero and lists the flags") {
  const auto r = run({"--help"});
  CHECK(r.code == 0);
  const auto t = run({"train", "--help"});
  CHECK(t.code == 0);
  for (const char* flag : {"--config", "--out", "--seed", "--seeds", "--lambda", "--k", "--tau", "--epochs",
                           "--novel-file", "--num-novel", "--templates"}) {
    CHECK_MESSAGE(t.out.find(flag) != std::string::npos, flag);
  }
}

TEST_CASE("unknown flags and keys are validation errors") {
  CHECK(run({"train", "--bogus"}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  const auto dir = small_task("unknown_key");
  const auto cfg = scratch("unknown_key.cfg");
  std::ofstream(cfg) << "lamda=0.1\n";
  const auto r = run({"train", "--config", cfg.string(), "--task", dir.string(), "--out", scratch("uk_out").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("lamda") != std::string::npos);
  const auto bad = run({"train", "--task", dir.string(), "--lambda", "-1", "--out", scratch("neg").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("lambda") != std::string::npos);
}

TEST_CASE("K larger than the aligned class count is refused") {
  const auto dir = small_task("k400", "20", "200");
  const auto r = run({"train", "--task", dir.string(), "--k", "400", "--epochs", "1", "--out", scratch("k400_out").string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("K exceeds M-1") != std::string::npos);
  CHECK(r.err.find("M=210") != std::string::npos);
}

TEST_CASE("missing files are I/O errors") {
  const auto r = run({"train", "--task", "/nonexistent/task", "--out", scratch("io").string()});
  CHECK(r.code == 2);
  const auto a = run({"analyze", "--learned", "/nonexistent.json", "--hand", fixture("hand3.json"), "--out",
                      scratch("io2").string()});
  CHECK(a.code == 2);
}

TEST_CASE("train writes its artifacts and is reproducible") {
  const auto dir = small_task("train");
  const auto o1 = scratch("train_a"), o2 = scratch("train_b");
  const std::vector<std::string> common = {"train", "--task", dir.string(), "--epochs", "2", "--k", "8", "--lambda",
                                           "0.5", "--evaluate"};
  auto a1 = common, a2 = common;
  a1.insert(a1.end(), {"--out", o1.string()});
  a2.insert(a2.end(), {"--out", o2.string()});
  REQUIRE(run(a1).code == 0);
  REQUIRE(run(a2).code == 0);
  for (const char* f : {"report.json", "prompts.json", "train_log.jsonl", "learned_embeddings.json",
                        "hand_embeddings.json", "eval_report.json", "logits_base.csv", "logits_new.csv"}) {
    CHECK_MESSAGE(fs::exists(o1 / f), f);
  }
  for (const char* f : {"report.json", "prompts.json", "train_log.jsonl"}) CHECK(slurp(o1 / f) == slurp(o2 / f));
  const auto report = nlohmann::json::parse(slurp(o1 / "report.json"));
  CHECK(report["epochs"].size() == 2);
  CHECK(report["config"]["lambda"] == 0.5);
}

TEST_CASE("flags override the config file") {
  const auto dir = small_task("override");
  const auto cfg = scratch("override.cfg");
  std::ofstream(cfg) << "lambda=0.3\nepochs=1\nk=4\n";
  const auto o = scratch("override_out");
  REQUIRE(run({"train", "--config", cfg.string(), "--task", dir.string(), "--lambda", "0.7", "--out", o.string()})
              .code == 0);
  const auto report = nlohmann::json::parse(slurp(o / "report.json"));
  CHECK(report["config"]["lambda"] == 0.7);
  CHECK(report["config"]["epochs"] == 1);
  CHECK(report["config"]["k"] == 4);
}

TEST_CASE("multiple seeds produce per-seed runs and a summary") {
  const auto dir = small_task("seeds");
  const auto o = scratch("seeds_out");
  REQUIRE(run({"train", "--task", dir.string(), "--seeds", "1,2", "--epochs", "1", "--k", "4", "--evaluate", "--out",
               o.string()})
              .code == 0);
  CHECK(fs::exists(o / "seed_1" / "report.json"));
  CHECK(fs::exists(o / "seed_2" / "report.json"));
  const auto s = nlohmann::json::parse(slurp(o / "summary.json"));
  CHECK(s.contains("new_acc"));
}

TEST_CASE("eval of hand-crafted prompts") {
  const auto dir = small_task("eval");
  const auto o = scratch("eval_out");
  REQUIRE(run({"eval", "--task", dir.string(), "--handcrafted", "--out", o.string()}).code == 0);
  const auto r = nlohmann::json::parse(slurp(o / "eval_report.json"));
  CHECK(r["base_acc"].get<double>() >= 0.0);
  CHECK(r["harmonic_mean"].get<double>() ==
        doctest::Approx(harmonic_mean(r["base_acc"].get<double>(), r["new_acc"].get<double>())));
}

TEST_CASE("analyze on the three-embedding fixture") {
  const auto o = scratch("analyze");
  const auto r = run({"analyze", "--learned", fixture("hand3.json"), "--hand", fixture("hand3.json"), "--tau", "1",
                      "--out", o.string()});
  REQUIRE(r.code == 0);
  const auto rep = nlohmann::json::parse(slurp(o / "disruption.json"));
  CHECK(rep["rank_disagreements"] == 0);
  const auto p = slurp(o / "p_learned.csv");
  CHECK(p.find("e1,0.000000,0.330238,0.669762") != std::string::npos);
}

TEST_CASE("analyze rejects misaligned class lists") {
  const auto learned = scratch("swapped.json");
  auto doc = nlohmann::json::parse(slurp(fixture("hand3.json")));
  std::swap(doc["items"][0], doc["items"][1]);
  std::ofstream(learned) << doc.dump();
  const auto r = run({"analyze", "--learned", learned.string(), "--hand", fixture("hand3.json"), "--out",
                      scratch("swapped_out").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("row 0") != std::string::npos);
}

TEST_CASE("gradcheck subcommand passes") {
  const auto r = run({"gradcheck", "--seed", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("total_loss") != std::string::npos);
}

TEST_CASE("the installed binary maps errors to exit codes") {
  const std::string cli = SAR_CLI_PATH;
  const auto quiet = " >/dev/null 2>&1";
  auto status = [](int raw) { return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1; };
  CHECK(status(std::system((cli + " --help" + quiet).c_str())) == 0);
  CHECK(status(std::system((cli + " train --bogus" + quiet).c_str())) == 1);
  CHECK(status(std::system((cli + " analyze --learned /nonexistent.json --hand /nonexistent.json --out " +
                            scratch("bin").string() + quiet)
                               .c_str())) == 2);
}

TEST_CASE("a lambda=0.1 run ends with a lower alignment loss than lambda=0") {
  const auto dir = scratch("paired_task");
  REQUIRE(run({"gen-task", "--out", dir.string(), "--seed", "1"}).code == 0);
  const auto o0 = scratch("paired_0"), o1 = scratch("paired_01");
  REQUIRE(run({"train", "--task", dir.string(), "--seed", "1", "--lambda", "0", "--out", o0.string()}).code == 0);
  REQUIRE(run({"train", "--task", dir.string(), "--seed", "1", "--lambda", "0.1", "--out", o1.string()}).code == 0);
  const auto r0 = nlohmann::json::parse(slurp(o0 / "report.json"));
  const auto r1 = nlohmann::json::parse(slurp(o1 / "report.json"));
  CHECK(r1["final_sar"].get<double>() < r0["final_sar"].get<double>());
}
