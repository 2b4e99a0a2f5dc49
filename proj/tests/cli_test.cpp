#include <gtest/gtest.h>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include "eit/enrich.hpp"
#include "eit/eval.hpp"
#include "eit/mock_server.hpp"
#include "test_util.hpp"

using namespace eit;

namespace {

int run_cli(const std::string& args, const std::filesystem::path& log) {
    std::string cmd = std::string(EIT_BIN) + " " + args + " >" + log.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string problems_jsonl() {
    json a{{"id", "cli-g1"},
           {"source", "gsm8k"},
           {"question", "Tom has 3 boxes with 5 apples in each box. How many apples?"},
           {"answer", "Tom has 3 x 5 = <<3*5=15>>15 apples\n#### 15"}};
    json b{{"id", "cli-g2"},
           {"source", "gsm8k"},
           {"question", "Sue buys 4 packs of 6 eggs. How many eggs?"},
           {"answer", "Sue has 4 x 6 = <<4*6=24>>24 eggs\n#### 24"}};
    return a.dump() + "\n" + b.dump() + "\n";
}

std::string faithful_completion(const Problem& p) {
    return "Work out the annotated arithmetic, then give the final count.\n\n<solution>"
           "Step by step:\n" +
           p.original_response;
}

}  // namespace

TEST(Cli, UsageErrorsExit2) {
    testutil::TempDir dir;
    EXPECT_EQ(run_cli("definitely-not-a-subcommand", dir.file("log")), 2);
    EXPECT_EQ(run_cli("", dir.file("log")), 2);
    testutil::write_file(dir.file("p.jsonl"), problems_jsonl());
    EXPECT_EQ(run_cli("enrich --mode bogus --in " + dir.file("p.jsonl").string() +
                          " --out " + dir.file("o.jsonl").string() + " --endpoint http://x",
                      dir.file("log")),
              2);
    EXPECT_EQ(run_cli("--help", dir.file("log")), 0);
}

TEST(Cli, ExportAndStats) {
    testutil::TempDir dir;
    testutil::write_file(dir.file("p.jsonl"), problems_jsonl());
    auto out = dir.file("sft.jsonl");
    EXPECT_EQ(run_cli("export --in " + dir.file("p.jsonl").string() + " --out " + out.string(),
                      dir.file("log")),
              0);
    auto records = load_sft(out);
    ASSERT_EQ(records.size(), 2u);
    EXPECT_EQ(records[0].provenance, Provenance::original);
    EXPECT_TRUE(std::filesystem::exists(out.string() + ".manifest.json"));

    auto report = dir.file("report.json");
    EXPECT_EQ(run_cli("stats --in " + out.string() + " --out " + report.string(),
                      dir.file("log2")),
              0);
    json doc = json::parse(testutil::read_file(report));
    EXPECT_EQ(doc["composition"]["total"], 2);
    EXPECT_TRUE(doc.contains("granularity"));
}

TEST(Cli, EnrichValidateAgainstMock) {
    testutil::TempDir dir;
    testutil::write_file(dir.file("p.jsonl"), problems_jsonl());
    auto problems = load_problems(dir.file("p.jsonl"));

    EnrichConfig config;  // temps {0.0}, mode erp_ers; mirror of the CLI defaults
    config.seed = 42;
    json entries = json::object();
    for (const auto& p : problems) {
        ChatRequest req = build_enrich_prompt(p, EnrichMode::erp_ers);
        entries[fixture_key(req.messages, 0.0, salted_seed(config.seed, 0))] = {
            {"text", faithful_completion(p)}};
    }
    testutil::write_file(dir.file("fixtures.json"),
                         json{{"policy", "404"}, {"entries", entries}}.dump());
    auto server = serve_mock(dir.file("fixtures.json"), 0);

    auto out = dir.file("sft.jsonl");
    int rc = run_cli("enrich --in " + dir.file("p.jsonl").string() + " --out " + out.string() +
                         " --mode erp_ers --seed 42 --endpoint " + server->base_url() +
                         " --model mock-model --retry-budget 0",
                     dir.file("log"));
    ASSERT_EQ(rc, 0) << testutil::read_file(dir.file("log"));

    auto records = load_sft(out);
    ASSERT_EQ(records.size(), 2u);
    EXPECT_EQ(records[0].source_id, "cli-g1");
    EXPECT_EQ(records[0].provenance, Provenance::erp_ers);
    EXPECT_TRUE(std::filesystem::exists(out.string() + ".results.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(out.string() + ".manifest.json"));

    // post-hoc validation over the exported file reports full preservation
    auto vreport = dir.file("validate.json");
    rc = run_cli("validate --in " + out.string() + " --problems " +
                     dir.file("p.jsonl").string() + " --out " + vreport.string(),
                 dir.file("log2"));
    ASSERT_EQ(rc, 0) << testutil::read_file(dir.file("log2"));
    json doc = json::parse(testutil::read_file(vreport));
    EXPECT_DOUBLE_EQ(doc["accuracy"].get<double>(), 1.0);
}

TEST(Cli, EvalK5ReportsK) {
    testutil::TempDir dir;
    testutil::write_file(dir.file("p.jsonl"), problems_jsonl());
    auto problems = load_problems(dir.file("p.jsonl"));

    EvalOptions options;
    options.k = 5;
    options.seed = 9;
    options.model = "mock-model";
    auto factory = plain_request_factory();
    json entries = json::object();
    for (const auto& p : problems) {
        for (int j = 0; j < 5; ++j) {
            ChatRequest req = factory(p, j);
            req.temperature = options.sampling_temperature;
            req.seed = *options.seed + j;
            std::string gold = p.gold_answer.canonical;
            entries[fixture_key(req)] = {{"text", "#### " + gold}};
        }
    }
    testutil::write_file(dir.file("fixtures.json"),
                         json{{"policy", "404"}, {"entries", entries}}.dump());
    auto server = serve_mock(dir.file("fixtures.json"), 0);

    auto report = dir.file("eval.json");
    int rc = run_cli("eval --in " + dir.file("p.jsonl").string() + " --k 5 --seed 9" +
                         " --endpoint " + server->base_url() +
                         " --model mock-model --retry-budget 0 --out " + report.string(),
                     dir.file("log"));
    ASSERT_EQ(rc, 0) << testutil::read_file(dir.file("log"));
    json doc = json::parse(testutil::read_file(report));
    EXPECT_EQ(doc["k"], 5);
    EXPECT_EQ(doc["mode"], "self_consistency");
    EXPECT_DOUBLE_EQ(doc["accuracy"].get<double>(), 1.0);
}

TEST(Cli, PerplexityAgainstScoreMock) {
    testutil::TempDir dir;
    testutil::write_file(dir.file("p.jsonl"), problems_jsonl());
    auto sft = dir.file("sft.jsonl");
    ASSERT_EQ(run_cli("export --in " + dir.file("p.jsonl").string() + " --out " + sft.string(),
                      dir.file("log0")),
              0);

    testutil::write_file(
        dir.file("fixtures.json"),
        json{{"policy", "default"}, {"default", {{"logprob_per_token", -1.0}}}}.dump());
    auto server = serve_mock(dir.file("fixtures.json"), 0);

    auto report = dir.file("ppl.json");
    int rc = run_cli("perplexity --in " + sft.string() + " --endpoint " + server->base_url() +
                         " --model scorer --retry-budget 0 --out " + report.string(),
                     dir.file("log"));
    ASSERT_EQ(rc, 0) << testutil::read_file(dir.file("log"));
    json doc = json::parse(testutil::read_file(report));
    EXPECT_EQ(doc["records_scored"], 2);
    EXPECT_NEAR(doc["mean"].get<double>(), std::exp(1.0), 1e-9);
}

TEST(Cli, OperationalFailureExits1) {
    testutil::TempDir dir;
    testutil::write_file(dir.file("bad.jsonl"), "{not json\n");
    EXPECT_EQ(run_cli("stats --in " + dir.file("bad.jsonl").string(), dir.file("log")), 1);
}
