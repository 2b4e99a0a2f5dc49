#include <gtest/gtest.h>

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "eit/enrich.hpp"
#include "eit/mock_server.hpp"
#include "test_util.hpp"

using namespace eit;

namespace {

Problem gsm8k_problem() {
    Problem p;
    p.id = "golden-g";
    p.source = SourceFormat::gsm8k;
    p.instruction = "Tom has 3 boxes with 5 apples in each box. How many apples does Tom have?";
    p.original_response = "Tom has 3 x 5 = <<3*5=15>>15 apples\n#### 15";
    p.gold_answer = normalize_answer("15");
    return p;
}

Problem math_problem() {
    Problem p;
    p.id = "golden-m";
    p.source = SourceFormat::math;
    p.instruction =
        "A yogurt shop sells four flavors of yogurt and has six different toppings. How many "
        "combinations of one flavor and two different toppings are available?";
    p.original_response =
        "There are 4 choices of flavor, and $\\binom{6}{2}=15$ ways to choose two of the six "
        "toppings. The total number of combinations is $4\\cdot 15=\\boxed{60}$.";
    p.gold_answer = normalize_answer("60");
    p.subject = MathSubject::counting;
    p.level = 2;
    return p;
}

std::string render_prompt(const ChatRequest& req) {
    std::string out;
    for (const auto& m : req.messages) out += "[" + m.role + "]\n" + m.content + "\n";
    return out;
}

// Completion as the endpoint would produce it: the cue already ends with
// "<planning>", so the text starts with the plan body.
std::string faithful_completion(const Problem& problem) {
    std::string plan =
        "First identify the quantities in the question, then follow the annotated arithmetic "
        "of the existing answer step by step without changing any formula or result.";
    std::string solution = "Let us work through the reasoning carefully.\n" +
                           problem.original_response;
    return plan + "\n\n<solution>" + solution;
}

struct EnrichHarness {
    testutil::TempDir dir;
    std::unique_ptr<MockServer> server;
    EnrichConfig config;

    explicit EnrichHarness(EnrichMode mode = EnrichMode::erp_ers) {
        config.mode = mode;
        config.client.retry_budget = 0;
        config.client.backoff_base = std::chrono::milliseconds(1);
        config.model = "mock-model";
        config.seed = 1000;
    }

    // Request identity for attempt N of a given work item.
    std::string key(const Problem& p, double temperature, int attempt) const {
        ChatRequest req = build_enrich_prompt(p, config.mode);
        return fixture_key(req.messages, temperature, salted_seed(config.seed, attempt));
    }

    void serve(const json& entries) {
        testutil::write_file(dir.file("fixtures.json"),
                             json{{"policy", "404"}, {"entries", entries}}.dump());
        server = serve_mock(dir.file("fixtures.json"), 0);
        config.client.base_url = server->base_url();
    }
};

std::vector<Problem> mini_corpus(std::size_t n) {
    auto problems = load_gsm8k(testutil::fixtures_dir() / "mini_gsm8k.jsonl");
    problems.resize(std::min(n, problems.size()));
    return problems;
}

json faithful_entries(const EnrichHarness& harness, const std::vector<Problem>& problems) {
    json entries = json::object();
    for (const auto& p : problems)
        for (double t : harness.config.temperatures)
            entries[harness.key(p, t, 0)] = {{"text", faithful_completion(p)}};
    return entries;
}

}  // namespace

TEST(BuildEnrichPrompt, DistinguishingPhrases) {
    auto gp = gsm8k_problem();
    auto mp = math_problem();

    auto text = [](const ChatRequest& req) { return render_prompt(req); };

    std::string g_combined = text(build_enrich_prompt(gp, EnrichMode::erp_ers));
    EXPECT_NE(g_combined.find("avoid jumping your thinking"), std::string::npos);
    EXPECT_NE(g_combined.find("special symbol expressions, such as 4 x 15 = <<4*15=60>>60"),
              std::string::npos);
    EXPECT_NE(g_combined.find("Albert is wondering"), std::string::npos);
    EXPECT_NE(g_combined.find("<<2*16=32>>32"), std::string::npos);
    EXPECT_NE(g_combined.find(gp.instruction), std::string::npos);
    EXPECT_NE(g_combined.find(gp.original_response), std::string::npos);
    EXPECT_TRUE(g_combined.ends_with("enriched answer:<planning>\n"));

    std::string m_combined = text(build_enrich_prompt(mp, EnrichMode::erp_ers));
    EXPECT_NE(m_combined.find("avoid jumping your thinking"), std::string::npos);
    EXPECT_NE(m_combined.find("as well as mathematical symbol formats"), std::string::npos);
    EXPECT_NE(m_combined.find("Krista put 1 cent"), std::string::npos);
    EXPECT_TRUE(m_combined.ends_with("enriched answer:<planning>\n"));

    std::string m_plan = text(build_enrich_prompt(mp, EnrichMode::erp_only));
    EXPECT_NE(m_plan.find("a high-level outline or plan"), std::string::npos);
    EXPECT_NE(m_plan.find("Krista put 1 cent"), std::string::npos);
    EXPECT_TRUE(m_plan.ends_with("planning:\n"));
    EXPECT_EQ(m_plan.find("<planning>"), std::string::npos);

    std::string m_steps = text(build_enrich_prompt(mp, EnrichMode::ers_only));
    EXPECT_NE(m_steps.find("avoid jumping your thinking"), std::string::npos);
    EXPECT_NE(m_steps.find("as well as mathematical symbol formats"), std::string::npos);
    EXPECT_TRUE(m_steps.ends_with("enriched answer:\n"));
    EXPECT_EQ(m_steps.find("<planning>"), std::string::npos);
    EXPECT_EQ(m_steps.find("The first step is to give the idea"), std::string::npos);

    std::string g_plan = text(build_enrich_prompt(gp, EnrichMode::erp_only));
    EXPECT_NE(g_plan.find("a high-level outline or plan"), std::string::npos);
    EXPECT_NE(g_plan.find("Albert is wondering"), std::string::npos);

    std::string g_steps = text(build_enrich_prompt(gp, EnrichMode::ers_only));
    EXPECT_NE(g_steps.find("special symbol expressions"), std::string::npos);
    EXPECT_NE(g_steps.find("Albert is wondering"), std::string::npos);
    EXPECT_TRUE(g_steps.ends_with("enriched answer:\n"));
}

TEST(BuildEnrichPrompt, GoldenFiles) {
    const std::map<std::string, ChatRequest> prompts = {
        {"prompt_gsm8k_erp_ers.txt", build_enrich_prompt(gsm8k_problem(), EnrichMode::erp_ers)},
        {"prompt_gsm8k_erp_only.txt", build_enrich_prompt(gsm8k_problem(), EnrichMode::erp_only)},
        {"prompt_gsm8k_ers_only.txt", build_enrich_prompt(gsm8k_problem(), EnrichMode::ers_only)},
        {"prompt_math_erp_ers.txt", build_enrich_prompt(math_problem(), EnrichMode::erp_ers)},
        {"prompt_math_erp_only.txt", build_enrich_prompt(math_problem(), EnrichMode::erp_only)},
        {"prompt_math_ers_only.txt", build_enrich_prompt(math_problem(), EnrichMode::ers_only)},
    };
    const bool update = std::getenv("EIT_UPDATE_GOLDEN") != nullptr;
    for (const auto& [name, req] : prompts) {
        auto path = testutil::fixtures_dir() / "golden" / name;
        std::string rendered = render_prompt(req);
        if (update) {
            testutil::write_file(path, rendered);
            continue;
        }
        SCOPED_TRACE(name);
        ASSERT_TRUE(std::filesystem::exists(path)) << "missing golden file " << path;
        EXPECT_EQ(rendered, testutil::read_file(path));
    }
}

TEST(ParseEnrichedText, SplitsOnSolutionMarker) {
    auto r = parse_enriched_text(
        "To solve this, count the choices.\n\n<solution>There are 4 choices. $\\boxed{60}$",
        EnrichMode::erp_ers);
    ASSERT_TRUE(r.plan.has_value());
    EXPECT_EQ(*r.plan, "To solve this, count the choices.");
    EXPECT_EQ(r.solution, "There are 4 choices. $\\boxed{60}$");
    EXPECT_EQ(r.full_text(),
              "To solve this, count the choices.\n\nThere are 4 choices. $\\boxed{60}$");
}

TEST(ParseEnrichedText, StripsEchoedPlanningMarker) {
    auto r = parse_enriched_text("<planning>plan body\n<solution>steps", EnrichMode::erp_ers);
    EXPECT_EQ(*r.plan, "plan body");
    EXPECT_EQ(r.solution, "steps");
}

TEST(ParseEnrichedText, ModeShapes) {
    auto plan_only = parse_enriched_text("just a plan", EnrichMode::erp_only);
    ASSERT_TRUE(plan_only.plan.has_value());
    EXPECT_EQ(*plan_only.plan, "just a plan");

    auto steps_only = parse_enriched_text("whole text is the solution", EnrichMode::ers_only);
    EXPECT_FALSE(steps_only.plan.has_value());
    EXPECT_EQ(steps_only.solution, "whole text is the solution");
    EXPECT_EQ(steps_only.full_text(), "whole text is the solution");

    EXPECT_THROW(parse_enriched_text("no markers at all", EnrichMode::erp_ers), ParseError);
    EXPECT_THROW(parse_enriched_text("", EnrichMode::ers_only), ParseError);
}

TEST(ValidateEnrichment, AcceptsFaithfulGsm8k) {
    auto p = gsm8k_problem();
    EnrichedResponse enriched;
    enriched.plan = "count the apples";
    enriched.solution =
        "Each box holds five apples, so Tom has 3 x 5 = <<3*5=15>>15 apples in total.\n#### 15";
    EXPECT_EQ(validate_enrichment(p, enriched), EnrichmentStatus::accepted);
}

TEST(ValidateEnrichment, RejectsAnswerMismatch) {
    auto p = math_problem();
    EnrichedResponse enriched;
    enriched.solution = "The count is $\\boxed{216}$.";
    EXPECT_EQ(validate_enrichment(p, enriched), EnrichmentStatus::rejected_answer_mismatch);

    EnrichedResponse no_answer;
    no_answer.solution = "there is no boxed answer here";
    EXPECT_EQ(validate_enrichment(p, no_answer), EnrichmentStatus::rejected_answer_mismatch);
}

TEST(ValidateEnrichment, RejectsLostOrBrokenAnnotations) {
    auto p = gsm8k_problem();
    EnrichedResponse dropped;
    dropped.solution = "Tom has 15 apples.\n#### 15";  // annotation dropped
    EXPECT_EQ(validate_enrichment(p, dropped), EnrichmentStatus::rejected_annotation_lost);

    EnrichedResponse added_bad;
    added_bad.solution =
        "Tom has 3 x 5 = <<3*5=15>>15 apples, and 15 = <<3*5=16>>16.\n#### 15";
    EXPECT_EQ(validate_enrichment(p, added_bad), EnrichmentStatus::rejected_annotation_lost);
}

TEST(ValidateEnrichment, EquivalentAnswerFormsAreAccepted) {
    Problem p = math_problem();
    p.gold_answer = normalize_answer("\\frac{17}{2}");
    EnrichedResponse enriched;
    enriched.solution = "The median is $\\boxed{8.5}$.";
    EXPECT_EQ(validate_enrichment(p, enriched), EnrichmentStatus::accepted);
}

TEST(EnrichOne, HappyPathFirstAttempt) {
    auto p = gsm8k_problem();
    EnrichHarness harness;
    harness.config.validation_retry_budget = 0;
    harness.serve(json{{harness.key(p, 0.0, 0), {{"text", faithful_completion(p)}}}});

    LlmClient client(harness.config.client);
    auto result = enrich_one(client, p, harness.config, 0.0);
    EXPECT_EQ(result.status, EnrichmentStatus::accepted);
    EXPECT_EQ(result.attempts, 1);
    EXPECT_TRUE(result.attempt_log.empty());
    ASSERT_TRUE(result.enriched.has_value());
    EXPECT_NE(result.enriched->full_text().find("<<3*5=15>>15"), std::string::npos);
}

TEST(EnrichOne, CorruptThenFaithfulRecovers) {
    auto p = gsm8k_problem();
    EnrichHarness harness;
    harness.config.validation_retry_budget = 1;
    harness.serve(json{
        {harness.key(p, 0.0, 0), {{"text", faithful_completion(p)}, {"corrupt_answer", true}}},
        {harness.key(p, 0.0, 1), {{"text", faithful_completion(p)}}},
    });

    LlmClient client(harness.config.client);
    auto result = enrich_one(client, p, harness.config, 0.0);
    EXPECT_EQ(result.status, EnrichmentStatus::accepted);
    EXPECT_EQ(result.attempts, 2);
    ASSERT_EQ(result.attempt_log.size(), 1u);
    EXPECT_EQ(result.attempt_log[0].second, EnrichmentStatus::rejected_answer_mismatch);
}

TEST(EnrichOne, BudgetExhaustionKeepsLastRejection) {
    auto p = gsm8k_problem();
    EnrichHarness harness;
    harness.config.validation_retry_budget = 2;
    json corrupt{{"text", faithful_completion(p)}, {"corrupt_answer", true}};
    harness.serve(json{
        {harness.key(p, 0.0, 0), corrupt},
        {harness.key(p, 0.0, 1), corrupt},
        {harness.key(p, 0.0, 2), corrupt},
    });

    LlmClient client(harness.config.client);
    auto result = enrich_one(client, p, harness.config, 0.0);
    EXPECT_EQ(result.status, EnrichmentStatus::rejected_answer_mismatch);
    EXPECT_EQ(result.attempts, 3);
    EXPECT_EQ(result.attempt_log.size(), 3u);
    EXPECT_EQ(harness.server->request_count(), 3);
}

TEST(EnrichOne, TransportErrorIsTerminalStatus) {
    auto p = gsm8k_problem();
    EnrichHarness harness;
    harness.config.validation_retry_budget = 3;
    harness.serve(json::object());  // nothing matches, policy 404

    LlmClient client(harness.config.client);
    auto result = enrich_one(client, p, harness.config, 0.0);
    EXPECT_EQ(result.status, EnrichmentStatus::error_transport);
    EXPECT_EQ(result.attempts, 1);
    EXPECT_FALSE(result.enriched.has_value());
}

TEST(EnrichOne, ParseFailureRetries) {
    auto p = math_problem();
    EnrichHarness harness;
    harness.config.validation_retry_budget = 1;
    harness.serve(json{
        {harness.key(p, 0.0, 0), {{"text", "no solution marker anywhere"}}},
        {harness.key(p, 0.0, 1), {{"text", faithful_completion(p)}}},
    });

    LlmClient client(harness.config.client);
    auto result = enrich_one(client, p, harness.config, 0.0);
    EXPECT_EQ(result.status, EnrichmentStatus::accepted);
    ASSERT_EQ(result.attempt_log.size(), 1u);
    EXPECT_EQ(result.attempt_log[0].second, EnrichmentStatus::rejected_parse);
}

TEST(EnrichOne, ErpOnlyStoresPlanPlusOriginal) {
    auto p = math_problem();
    EnrichHarness harness(EnrichMode::erp_only);
    harness.config.validation_retry_budget = 0;
    harness.serve(json{{harness.key(p, 0.0, 0), {{"text", "A tidy little plan."}}}});

    LlmClient client(harness.config.client);
    auto result = enrich_one(client, p, harness.config, 0.0);
    ASSERT_EQ(result.status, EnrichmentStatus::accepted);
    EXPECT_EQ(result.enriched->full_text(), "A tidy little plan.\n\n" + p.original_response);
}

TEST(EnrichDataset, FaithfulMockAcceptsEverything) {
    auto problems = mini_corpus(6);
    EnrichHarness harness;
    harness.config.temperatures = {0.0, 0.7};
    harness.config.client.max_in_flight = 4;
    harness.serve(faithful_entries(harness, problems));

    auto [records, results] = enrich_dataset(problems, harness.config);
    EXPECT_EQ(results.size(), problems.size() * 2);
    ASSERT_EQ(records.size(), problems.size() * 2);

    std::map<std::string, const Problem*> by_id;
    for (const auto& p : problems) by_id[p.id] = &p;

    // deterministic (input index, variant) order
    for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_EQ(records[i].source_id, problems[i / 2].id);
        EXPECT_EQ(records[i].variant_index, static_cast<int>(i % 2));
        EXPECT_EQ(records[i].provenance, Provenance::erp_ers);
    }

    auto tokenizer = default_tokenizer();
    for (const auto& rec : records) {
        const Problem& p = *by_id.at(rec.source_id);
        // preservation: re-extracted answer is equivalent to gold
        auto answer = normalize_answer(extract_final_answer(rec.response, rec.source));
        EXPECT_TRUE(answers_equivalent(p.gold_answer, answer));
        // annotation conservation, and everything still verifies
        for (const auto& ann : parse_calc_annotations(p.original_response))
            EXPECT_NE(rec.response.find(ann.raw), std::string::npos);
        for (const auto& ann : parse_calc_annotations(rec.response))
            EXPECT_TRUE(verify_calc_annotation(ann));
        // enrichment adds tokens
        EXPECT_GT(static_cast<std::size_t>(rec.token_count), tokenizer(p.original_response));
        EXPECT_EQ(static_cast<std::size_t>(rec.token_count), tokenizer(rec.response));
    }
}

TEST(EnrichDataset, AcceptanceAccountingAndMixedOutcomes) {
    auto problems = mini_corpus(4);
    EnrichHarness harness;
    harness.config.validation_retry_budget = 0;
    // 0: faithful, 1: corrupt, 2: missing (404 -> transport), 3: faithful
    harness.serve(json{
        {harness.key(problems[0], 0.0, 0), {{"text", faithful_completion(problems[0])}}},
        {harness.key(problems[1], 0.0, 0),
         {{"text", faithful_completion(problems[1])}, {"corrupt_answer", true}}},
        {harness.key(problems[3], 0.0, 0), {{"text", faithful_completion(problems[3])}}},
    });

    auto [records, results] = enrich_dataset(problems, harness.config);
    ASSERT_EQ(results.size(), 4u);
    EXPECT_EQ(records.size(), 2u);
    EXPECT_EQ(results[0].status, EnrichmentStatus::accepted);
    EXPECT_EQ(results[1].status, EnrichmentStatus::rejected_answer_mismatch);
    EXPECT_EQ(results[2].status, EnrichmentStatus::error_transport);
    EXPECT_EQ(results[3].status, EnrichmentStatus::accepted);

    std::size_t accepted = 0, rejected = 0, errors = 0;
    for (const auto& r : results) {
        if (r.status == EnrichmentStatus::accepted) ++accepted;
        else if (r.status == EnrichmentStatus::error_transport) ++errors;
        else ++rejected;
    }
    EXPECT_EQ(accepted + rejected + errors, problems.size());
}

TEST(EnrichDataset, DeterministicAcrossRuns) {
    auto problems = mini_corpus(5);
    EnrichHarness harness;
    harness.config.client.max_in_flight = 3;
    harness.serve(faithful_entries(harness, problems));

    auto run = [&](const std::string& name) {
        auto [records, results] = enrich_dataset(problems, harness.config);
        auto path = harness.dir.file(name);
        export_sft(records, path);
        return testutil::read_file(path);
    };
    EXPECT_EQ(run("a.jsonl"), run("b.jsonl"));
}

TEST(EnrichDataset, ValidatesConfig) {
    auto problems = mini_corpus(1);
    EnrichConfig config;
    config.temperatures = {0.7, 0.0};
    EXPECT_THROW(enrich_dataset(problems, config), std::invalid_argument);
    config.temperatures = {0.0, 0.0};
    EXPECT_THROW(enrich_dataset(problems, config), std::invalid_argument);
    config.temperatures = {};
    EXPECT_THROW(enrich_dataset(problems, config), std::invalid_argument);
    EXPECT_THROW(enrich_dataset({}, EnrichConfig{}), EmptyDataset);
}

TEST(EnrichmentResult, LogJsonShape) {
    EnrichmentResult r;
    r.problem_id = "p1";
    r.status = EnrichmentStatus::rejected_answer_mismatch;
    r.attempts = 2;
    r.attempt_log = {{0, EnrichmentStatus::rejected_parse},
                     {1, EnrichmentStatus::rejected_answer_mismatch}};
    json j = to_json(r);
    EXPECT_EQ(j["id"], "p1");
    EXPECT_EQ(j["status"], "rejected_answer_mismatch");
    EXPECT_EQ(j["attempts"], 2);
    ASSERT_EQ(j["failures"].size(), 2u);
    EXPECT_EQ(j["failures"][0]["reason"], "rejected_parse");
}
