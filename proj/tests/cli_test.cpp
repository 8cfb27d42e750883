#include "cli.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace tokmarg::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const fs::path kData = TOKMARG_DATA_DIR;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

// Runs the installed binary in a fresh process; returns its stdout.
std::string run_binary(const std::string& args) {
  const std::string cmd = std::string(TOKMARG_CLI_PATH) + " " + args + " 2>/dev/null";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) return {};
  std::string out;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe.get())) > 0) out.append(buf.data(), n);
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tokmarg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
    write("ab.json", R"({"tokens": ["a", "b", "ab"]})");
    write("aa.json", R"({"tokens": ["a", "aa"]})");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& content) {
    std::ofstream(dir_ / name) << content;
    return (dir_ / name).string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string toy() const { return (kData / "toy_vocab.json").string(); }

  fs::path dir_;
};

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> docs;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) docs.push_back(json::parse(line));
  }
  return docs;
}

TEST_F(CliTest, TokenizeAndCount) {
  auto r = run_cli({"tokenize", "ab", "--vocab", path("ab.json")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(json::parse(r.out)["ids"], json({2}));
  EXPECT_EQ(json::parse(r.out)["pieces"], json({"ab"}));

  r = run_cli({"lattice", "ab", "--vocab", path("ab.json"), "--count"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(r.out, "{\"num_paths\":\"2\"}\n");

  r = run_cli({"lattice", std::string(300, 'a'), "--vocab", path("aa.json"), "--count"});
  ASSERT_EQ(r.code, kOk) << r.err;
  // F(301) has 63 decimal digits
  EXPECT_EQ(json::parse(r.out)["num_paths"].get<std::string>().size(), 63u);
}

TEST_F(CliTest, LatticeEnumerateAndDump) {
  auto r = run_cli({"lattice", "aaaa", "--vocab", path("aa.json"), "--enumerate", "10"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto doc = json::parse(r.out);
  EXPECT_EQ(doc["num_paths"], "5");
  EXPECT_EQ(doc["paths"].size(), 5u);

  // 89 paths exceed the limit
  r = run_cli({"lattice", std::string(10, 'a'), "--vocab", path("aa.json"), "--enumerate", "10"});
  EXPECT_EQ(r.code, kLimit);
  EXPECT_FALSE(r.err.empty());

  r = run_cli({"lattice", "aaaa", "--vocab", path("aa.json"), "--count", "--max-len", "2"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(json::parse(r.out)["num_paths"], "1");

  r = run_cli({"lattice", "ab", "--vocab", path("ab.json"), "--dump"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_TRUE(json::parse(r.out).is_object());
}

TEST_F(CliTest, SampleDistinctAndValidated) {
  auto r = run_cli({"sample", std::string(6, 'a'), "--vocab", path("aa.json"), "--k", "13", "--seed", "5"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto doc = json::parse(r.out);
  EXPECT_EQ(doc["num_paths"], "13");
  EXPECT_EQ(doc["rng"], "splitmix64/1");
  std::set<std::vector<int>> seen;
  for (const auto& s : doc["samples"]) seen.insert(s["ids"].get<std::vector<int>>());
  EXPECT_EQ(seen.size(), 13u);

  r = run_cli({"sample", std::string(6, 'a'), "--vocab", path("aa.json"), "--k", "14", "--seed", "5"});
  EXPECT_EQ(r.code, kValidation);
  r = run_cli({"sample", "aaaa", "--vocab", path("aa.json"), "--k", "2"});
  EXPECT_EQ(r.code, kValidation);

  r = run_cli({"sample", "aaaa", "--vocab", path("aa.json"), "--k", "4", "--seed", "1",
               "--exclude-canonical"});
  ASSERT_EQ(r.code, kOk) << r.err;
  for (const auto& s : json::parse(r.out)["samples"]) EXPECT_NE(s["ids"], json({1, 1}));
}

TEST_F(CliTest, EstimateMethods) {
  for (const char* method : {"canonical", "exact", "lattice", "importance", "rejection"}) {
    SCOPED_TRACE(method);
    const auto r = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer",
                            "builtin:hash:3", "--method", method, "--k", "4", "--seed", "2"});
    ASSERT_EQ(r.code, kOk) << r.err;
    const auto doc = json::parse(r.out);
    EXPECT_EQ(doc["method"], method);
    EXPECT_FALSE(doc.contains("wall_time_ms"));
  }
  const auto missing_seed = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer",
                                     "builtin:uniform", "--method", "lattice"});
  EXPECT_EQ(missing_seed.code, kValidation);
  EXPECT_NE(missing_seed.err.find("--seed"), std::string::npos);

  const auto bad_method = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer",
                                   "builtin:uniform", "--method", "magic"});
  EXPECT_EQ(bad_method.code, kValidation);
  const auto exact_limit = run_cli({"estimate", std::string(20, 'a'), "--vocab", path("aa.json"),
                                    "--scorer", "builtin:uniform", "--method", "exact",
                                    "--exact-limit", "100"});
  EXPECT_EQ(exact_limit.code, kLimit);
}

TEST_F(CliTest, EstimateExactMatchesUniformClosedForm) {
  // 5 tokenizations of "aaaa": lengths 2 (x1), 3 (x3), 4 (x1) under uniform 1/3.
  const auto r = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer",
                          "builtin:uniform", "--method", "exact"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const double expected = std::log(std::pow(3.0, -2) + 3 * std::pow(3.0, -3) + std::pow(3.0, -4));
  EXPECT_NEAR(json::parse(r.out)["log_full"].get<double>(), expected, 1e-12);
}

TEST_F(CliTest, TimingFieldsAreOptIn) {
  const auto r = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer",
                          "builtin:uniform", "--method", "lattice", "--k", "3", "--seed", "1",
                          "--timing"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_TRUE(json::parse(r.out).contains("wall_time_ms"));
}

TEST_F(CliTest, ScorerFailures) {
  auto r = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer",
                    "http://127.0.0.1:1", "--method", "canonical"});
  EXPECT_EQ(r.code, kScorer);
  EXPECT_NE(r.err.find("127.0.0.1"), std::string::npos);

  r = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer", "builtin:nope",
               "--method", "canonical"});
  EXPECT_EQ(r.code, kValidation);
}

TEST_F(CliTest, ServeMockRoundTrip) {
  const auto local = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer",
                              "builtin:hash:9", "--method", "lattice", "--k", "4", "--seed", "3"});
  const auto remote = run_cli({"estimate", "aaaa", "--vocab", path("aa.json"), "--scorer",
                               "builtin:hash:9", "--serve-mock", "--method", "lattice", "--k", "4",
                               "--seed", "3"});
  ASSERT_EQ(local.code, kOk) << local.err;
  ASSERT_EQ(remote.code, kOk) << remote.err;
  EXPECT_NEAR(json::parse(local.out)["log_full"].get<double>(),
              json::parse(remote.out)["log_full"].get<double>(), 1e-9);
}

TEST_F(CliTest, ChooseReportsAccuracy) {
  const auto r = run_cli({"choose", "--tasks", (kData / "tasks.jsonl").string(), "--vocab", toy(),
                          "--scorer", "builtin:hash:1", "--method", "lattice", "--k", "8",
                          "--seed", "4", "--jobs", "2"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto docs = json_lines(r.out);
  ASSERT_GE(docs.size(), 2u);
  const auto& summary = docs.back();
  EXPECT_TRUE(summary["summary"].get<bool>());
  EXPECT_EQ(summary["items"].get<std::size_t>(), docs.size() - 1);
  const double acc = summary["accuracy"].get<double>();
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  for (std::size_t i = 0; i + 1 < docs.size(); ++i) {
    EXPECT_LT(docs[i]["chosen"].get<std::size_t>(), docs[i]["reports"].size());
  }
}

TEST_F(CliTest, ChooseNamesMalformedLine) {
  const auto tasks = write("tasks.jsonl", "{\"candidates\": [\"ab\", \"a\"]}\n{\"candidates\": 7}\n");
  const auto r = run_cli({"choose", "--tasks", tasks, "--vocab", path("ab.json"), "--scorer",
                          "builtin:uniform", "--method", "canonical"});
  EXPECT_EQ(r.code, kValidation);
  EXPECT_NE(r.err.find("tasks.jsonl:2"), std::string::npos) << r.err;
}

TEST_F(CliTest, StudiesWriteJsonLinesAndCsv) {
  const auto corpus = write("corpus.jsonl",
                            "{\"id\": \"x\", \"text\": \"aaaaaa\"}\n{\"id\": \"y\", \"text\": \"aaa\"}\n");
  auto r = run_cli({"study", "underestimation", "--corpus", corpus, "--vocab", path("aa.json"),
                    "--scorer", "builtin:hash:2", "--k", "4", "--seed", "1", "--output",
                    path("u.jsonl"), "--csv", path("u.csv")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto summary = json::parse(r.out);
  EXPECT_EQ(summary["study"], "underestimation");
  EXPECT_GE(summary["percentage"].get<double>(), 0.0);
  std::ifstream csv(path("u.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "id,n,k,lattice_log_full,importance_log_full,underestimated");
  std::ifstream records(path("u.jsonl"));
  std::stringstream buf;
  buf << records.rdbuf();
  EXPECT_EQ(json_lines(buf.str()).size(), 3u);

  r = run_cli({"study", "spearman", "--corpus", corpus, "--vocab", path("aa.json"), "--scorer",
               "builtin:hash:2", "--seed", "1", "--num-sequences", "5", "--csv", path("s.csv")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto lines = json_lines(r.out);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_TRUE(lines[0].contains("spearman_rho"));
  std::ifstream scsv(path("s.csv"));
  std::getline(scsv, header);
  EXPECT_EQ(header, "id,n,num_sequences,rho");

  // Lengths are cut from the space-joined corpus, so the vocabulary needs a space.
  r = run_cli({"study", "timing", "--corpus", (kData / "corpus.jsonl").string(), "--vocab", toy(),
               "--scorer", "builtin:uniform", "--seed", "1", "--k", "5", "--lengths", "4,8"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto rows = json_lines(r.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["n"], 4);
  EXPECT_EQ(rows[1]["n"], 8);
}

TEST_F(CliTest, NGramTrainProducesLoadableScorer) {
  const auto corpus = write("corpus.jsonl", "{\"text\": \"abab\"}\n{\"text\": \"ba\"}\n");
  auto r = run_cli({"ngram-train", "--vocab", path("ab.json"), "--corpus", corpus, "--order", "2",
                    "--output", path("lm.json")});
  ASSERT_EQ(r.code, kOk) << r.err;
  r = run_cli({"estimate", "abab", "--vocab", path("ab.json"), "--scorer",
               "builtin:ngram:" + path("lm.json"), "--method", "exact"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_LT(json::parse(r.out)["log_full"].get<double>(), 0.0);
}

TEST_F(CliTest, ParseErrorsAreValidationErrors) {
  EXPECT_EQ(run_cli({"lattice"}).code, kValidation);
  EXPECT_EQ(run_cli({"nonsense"}).code, kValidation);
  EXPECT_EQ(run_cli({"--help"}).code, kOk);
  EXPECT_EQ(run_cli({"tokenize", "ab", "--vocab", path("missing.json")}).code, kValidation);
}

TEST_F(CliTest, SamplingCommandsAreByteIdenticalAcrossProcesses) {
  const std::string text = "the cat sat on the mat.";
  const std::vector<std::string> commands{
      "sample '" + text + "' --vocab " + toy() + " --k 50 --seed 17",
      "sample '" + text + "' --vocab " + toy() + " --k 50 --seed 17 --exclude-off-by-one",
      "estimate '" + text + "' --vocab " + toy() + " --scorer builtin:hash:5 --k 40 --seed 9",
      "estimate '" + text + "' --vocab " + toy() +
          " --scorer builtin:hash:5 --method importance --k 40 --seed 9",
      "choose --tasks " + (kData / "tasks.jsonl").string() + " --vocab " + toy() +
          " --scorer builtin:hash:5 --k 10 --seed 9 --jobs 3",
  };
  for (const auto& c : commands) {
    SCOPED_TRACE(c);
    const auto first = run_binary(c);
    ASSERT_FALSE(first.empty());
    EXPECT_EQ(run_binary(c), first);
  }
}

}  // namespace
}  // namespace tokmarg::cli
