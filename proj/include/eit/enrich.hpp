#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "eit/answer.hpp"
#include "eit/dataset.hpp"
#include "eit/llm_client.hpp"
#include "eit/tokenizer.hpp"

namespace eit {

enum class EnrichMode { erp_ers, erp_only, ers_only };

inline const char* to_string(EnrichMode m) {
    switch (m) {
        case EnrichMode::erp_ers: return "erp_ers";
        case EnrichMode::erp_only: return "erp_only";
        case EnrichMode::ers_only: return "ers_only";
    }
    return "?";
}

inline std::optional<EnrichMode> enrich_mode_from_string(std::string_view s) {
    if (s == "erp_ers") return EnrichMode::erp_ers;
    if (s == "erp_only") return EnrichMode::erp_only;
    if (s == "ers_only") return EnrichMode::ers_only;
    return std::nullopt;
}

inline Provenance provenance_of(EnrichMode m) {
    switch (m) {
        case EnrichMode::erp_ers: return Provenance::erp_ers;
        case EnrichMode::erp_only: return Provenance::erp_only;
        case EnrichMode::ers_only: return Provenance::ers_only;
    }
    return Provenance::erp_ers;
}

// ---------------------------------------------------------------------------
// Prompt templates. One-shot exemplars: Albert's pizzas for GSM8K, Krista's
// bank for MATH. The <planning>/<solution> markers are prompt scaffolding
// only; they never reach exported training text.
// ---------------------------------------------------------------------------
namespace prompts {

inline constexpr std::string_view kGsm8kEnricherPreamble =
    "You are an answer enricher. I hope you will refine your answers based on the questions "
    "and answers provided, avoid jumping your thinking. Pay attention to filling the missing "
    "contexts and logical gaps in existing answers. Besides, be careful not to change the "
    "original pathways or modify formulas and results, as well as special symbol expressions, "
    "such as 4 x 15 = <<4*15=60>>60.";

inline constexpr std::string_view kMathEnricherPreamble =
    "You are an answer enricher. I hope you will refine your answers based on the questions "
    "and answers provided and avoid jumping your thinking. Pay attention to filling the "
    "missing contexts and logical gaps in existing answers. Besides, be careful not to change "
    "the original pathways or modify formulas and results, as well as mathematical symbol "
    "formats.";

inline constexpr std::string_view kIdeaThenSolve =
    " The first step is to give the idea of the answer, which helps the respondent to solve "
    "the question better. Finally, solve the problem.";

inline constexpr std::string_view kPlannerPreamble =
    "You are an expert answer assistant who helps respondents understand the given answer. "
    "Based on the question and answer I provide, your task is to generate a high-level "
    "outline or plan of the answer. This plan will guide the respondent in formulating their "
    "own detailed response and serve as a preparatory framework for addressing the question "
    "effectively.";

inline constexpr std::string_view kGsm8kExemplarQuestion =
    "Albert is wondering how much pizza he can eat in one day. He buys 2 large pizzas and 2 "
    "small pizzas. A large pizza has 16 slices and a small pizza has 8 slices. If he eats it "
    "all, how many pieces does he eat that day?";

inline constexpr std::string_view kGsm8kExemplarAnswer =
    "He eats 32 from the largest pizzas because 2 x 16 = <<2*16=32>>32\n\n"
    "He eats 16 from the small pizza because 2 x 8 = <<2*8=16>>16\n\n"
    "He eats 48 pieces because 32 + 16 = <<32+16=48>>48\n\n"
    "#### 48";

inline constexpr std::string_view kGsm8kExemplarPlan =
    "To solve this, calculate the total number of slices in the large pizzas and the small "
    "pizzas separately, then add those numbers together to find the total number of slices "
    "Albert will eat.";

inline constexpr std::string_view kGsm8kExemplarSolution =
    "Albert purchases two large pizzas and two small pizzas for his day of pizza eating. "
    "Each large pizza is divided into 16 slices, thus he has 2 x 16 = <<2*16=32>>32 slices "
    "from the large pizzas.\n\n"
    "Similarly, each small pizza is divided into 8 slices. Therefore, from the small pizzas, "
    "he has 2 x 8 = <<2*8=16>>16 slices.\n\n"
    "By adding up the slices from both the large and small pizzas, we find that Albert eats "
    "a total of 32 + 16 = <<32+16=48>>48 slices of pizza in one day.\n"
    "So, if Albert consumes all the pizzas he bought, he will have eaten 48 slices of pizza "
    "in a single day.\n\n"
    "#### 48";

inline constexpr std::string_view kMathExemplarQuestion =
    "Krista put 1 cent into her new bank on a Sunday morning.  On Monday she put 2 cents "
    "into her bank.  On Tuesday she put 4 cents into her bank, and she continued to double "
    "the amount of money she put into her bank each day for two weeks.  On what day of the "
    "week did the total amount of money in her bank first exceed $2?";

inline constexpr std::string_view kMathExemplarAnswer =
    "The formula for a geometric series is $\\frac{a-ar^n}{1-r}$. Taking $a$ to be the "
    "initial $1$-cent deposit and $n$ to be the number of days Krista had money in her bank "
    "so far, we have the inequality $$\\frac{1-2^n}{1-2}\\geq 200 \\Rightarrow 1-2^n\\leq "
    "-200 \\Rightarrow 201 \\leq 2^n.$$ The smallest power of 2 that is greater than 201 is "
    "$2^8$.  Thus, $n=8$ and $\\boxed{\\text{Sunday}}$ is 7 days away from day $1$.";

inline constexpr std::string_view kMathExemplarPlan =
    "To find the day Krista's bank exceeds $2, calculate the sum of her daily doubled "
    "deposits as a geometric series. Identify the smallest power of 2 over $2 and count the "
    "days from Sunday to reach this total.";

inline constexpr std::string_view kMathExemplarSolution =
    "The total amount of money in her bank forms a geometric series. The formula for the sum "
    "of a geometric series is $\\frac{a-ar^n}{1-r}$, where $a$ is the first term, $r$ is the "
    "common ratio, and $n$ is the number of terms. \n"
    "In this case, $a$ is the initial 1-cent deposit, $r$ is 2 (since she doubles the amount "
    "each day), and $n$ is the number of days Krista had money in her bank so far. We want "
    "to find the smallest $n$ such that the total amount of money in her bank exceeds $2, or "
    "$200$ cents. \n"
    "This gives us the inequality:$$\\frac{1-2^n}{1-2}\\geq 200 \\Rightarrow 1-2^n\\leq -200 "
    "\\Rightarrow 201 \\leq 2^n.$$\n"
    "The smallest power of 2 that is greater than 201 is $2^8$. Thus, $n=8$. \n"
    "Since she started on a Sunday, and there are 7 days in a week, the day of the week when "
    "the total amount of money in her bank first exceeded $2 is $\\boxed{\\text{Sunday}}$, "
    "which is $7$ days away from day $1$.";

}  // namespace prompts

// System + user messages for one (source, mode) pair. The user message ends
// with the mode's completion cue: "enriched answer:<planning>" for the
// combined mode, "planning:" for erp_only, "enriched answer:" for ers_only.
inline ChatRequest build_enrich_prompt(const Problem& problem, EnrichMode mode) {
    using namespace prompts;
    const bool gsm8k = problem.source == SourceFormat::gsm8k;

    std::string system;
    switch (mode) {
        case EnrichMode::erp_ers:
            system = std::string(gsm8k ? kGsm8kEnricherPreamble : kMathEnricherPreamble) +
                     std::string(kIdeaThenSolve);
            break;
        case EnrichMode::erp_only:
            system = std::string(kPlannerPreamble);
            break;
        case EnrichMode::ers_only:
            system = std::string(gsm8k ? kGsm8kEnricherPreamble : kMathEnricherPreamble);
            break;
    }

    const std::string_view exemplar_question = gsm8k ? kGsm8kExemplarQuestion : kMathExemplarQuestion;
    const std::string_view exemplar_answer = gsm8k ? kGsm8kExemplarAnswer : kMathExemplarAnswer;
    const std::string_view exemplar_plan = gsm8k ? kGsm8kExemplarPlan : kMathExemplarPlan;
    const std::string_view exemplar_solution = gsm8k ? kGsm8kExemplarSolution : kMathExemplarSolution;

    std::string user;
    user += "question: ";
    user += exemplar_question;
    user += "\n\nanswer: ";
    user += exemplar_answer;
    user += "\n\n";
    switch (mode) {
        case EnrichMode::erp_ers:
            user += "enriched answer:\n<planning>";
            user += exemplar_plan;
            user += "\n\n<solution>";
            user += exemplar_solution;
            break;
        case EnrichMode::erp_only:
            user += "planning:";
            user += exemplar_plan;
            break;
        case EnrichMode::ers_only:
            user += "enriched answer:";
            user += exemplar_solution;
            break;
    }
    user += "\n\nquestion: ";
    user += problem.instruction;
    user += "\n\nanswer: ";
    user += problem.original_response;
    user += "\n\n";
    switch (mode) {
        case EnrichMode::erp_ers: user += "enriched answer:<planning>"; break;
        case EnrichMode::erp_only: user += "planning:"; break;
        case EnrichMode::ers_only: user += "enriched answer:"; break;
    }

    ChatRequest req;
    req.messages = {{"system", std::move(system)}, {"user", std::move(user)}};
    return req;
}

// Parsed enrichment: plan is present in the plan-producing modes; full_text
// is what an SFT record stores (plan, one blank line, solution), markers
// stripped.
struct EnrichedResponse {
    std::optional<std::string> plan;
    std::string solution;

    std::string full_text() const {
        if (plan) return *plan + "\n\n" + solution;
        return solution;
    }
};

enum class EnrichmentStatus {
    accepted,
    rejected_answer_mismatch,
    rejected_annotation_lost,
    rejected_parse,
    error_transport,
};

inline const char* to_string(EnrichmentStatus s) {
    switch (s) {
        case EnrichmentStatus::accepted: return "accepted";
        case EnrichmentStatus::rejected_answer_mismatch: return "rejected_answer_mismatch";
        case EnrichmentStatus::rejected_annotation_lost: return "rejected_annotation_lost";
        case EnrichmentStatus::rejected_parse: return "rejected_parse";
        case EnrichmentStatus::error_transport: return "error_transport";
    }
    return "?";
}

namespace enrich_detail {

inline std::string strip_marker(std::string s, std::string_view marker) {
    std::size_t pos = 0;
    while ((pos = s.find(marker, pos)) != std::string::npos) s.erase(pos, marker.size());
    return s;
}

inline std::string trim(std::string_view s) {
    return std::string(answer_detail::trim_view(s));
}

}  // namespace enrich_detail

// Splits a completion into plan/solution per mode. erp_ers requires a
// <solution> marker; its absence is the rejected_parse signal.
inline EnrichedResponse parse_enriched_text(std::string_view text, EnrichMode mode) {
    using namespace enrich_detail;
    if (text.empty()) throw ParseError("empty completion", 0);
    EnrichedResponse out;
    switch (mode) {
        case EnrichMode::erp_ers: {
            constexpr std::string_view kSolution = "<solution>";
            std::size_t split = text.find(kSolution);
            if (split == std::string_view::npos)
                throw ParseError("no <solution> marker in completion", 0);
            std::string plan(text.substr(0, split));
            std::string solution(text.substr(split + kSolution.size()));
            out.plan = trim(strip_marker(std::move(plan), "<planning>"));
            out.solution = trim(strip_marker(std::move(solution), "<solution>"));
            break;
        }
        case EnrichMode::erp_only:
            out.plan = trim(strip_marker(std::string(text), "<planning>"));
            out.solution.clear();  // caller substitutes the original response
            break;
        case EnrichMode::ers_only:
            out.solution = trim(strip_marker(std::string(text), "<solution>"));
            break;
    }
    return out;
}

// The preservation constraint: the enriched solution must conclude with an
// answer equivalent to the gold one, and (GSM8K) every calculator annotation
// of the original response must survive verbatim and still verify, along
// with any annotation the enrichment itself contains.
inline EnrichmentStatus validate_enrichment(const Problem& problem,
                                            const EnrichedResponse& enriched) {
    NormalizedAnswer found;
    try {
        found = normalize_answer(extract_final_answer(enriched.solution, problem.source));
    } catch (const Error&) {
        return EnrichmentStatus::rejected_answer_mismatch;
    }
    if (!answers_equivalent(problem.gold_answer, found))
        return EnrichmentStatus::rejected_answer_mismatch;

    if (problem.source == SourceFormat::gsm8k) {
        try {
            for (const auto& ann : parse_calc_annotations(problem.original_response)) {
                if (enriched.solution.find(ann.raw) == std::string::npos)
                    return EnrichmentStatus::rejected_annotation_lost;
            }
            for (const auto& ann : parse_calc_annotations(enriched.solution)) {
                if (!verify_calc_annotation(ann))
                    return EnrichmentStatus::rejected_annotation_lost;
            }
        } catch (const Error&) {
            return EnrichmentStatus::rejected_annotation_lost;
        }
    }
    return EnrichmentStatus::accepted;
}

struct EnrichmentResult {
    std::string problem_id;
    EnrichmentStatus status = EnrichmentStatus::error_transport;
    int attempts = 0;
    std::optional<EnrichedResponse> enriched;
    std::vector<std::pair<int, EnrichmentStatus>> attempt_log;  // failures only
};

struct EnrichConfig {
    EnrichMode mode = EnrichMode::erp_ers;
    std::vector<double> temperatures{0.0};  // ascending, no duplicates
    int validation_retry_budget = 3;
    ClientConfig client;
    std::string model = "gpt-4";
    int max_tokens = 2048;
    std::optional<long> seed;
};

inline void check_enrich_config(const EnrichConfig& config) {
    if (config.temperatures.empty())
        throw std::invalid_argument("temperatures must be non-empty");
    for (std::size_t i = 1; i < config.temperatures.size(); ++i) {
        if (config.temperatures[i] <= config.temperatures[i - 1])
            throw std::invalid_argument("temperatures must be strictly ascending");
    }
    for (double t : config.temperatures) {
        if (t < 0) throw std::invalid_argument("temperatures must be >= 0");
    }
}

// Retries must not be served from the cache, so each retry shifts the seed by
// the attempt index; an unseeded request gains the attempt index as its seed.
inline std::optional<long> salted_seed(std::optional<long> base, int attempt) {
    if (base) return *base + attempt;
    if (attempt == 0) return std::nullopt;
    return attempt;
}

// One (problem, temperature) work item: prompt, complete, parse, validate,
// retrying rejected attempts up to the validation budget.
inline EnrichmentResult enrich_one(LlmClient& client, const Problem& problem,
                                   const EnrichConfig& config, double temperature) {
    EnrichmentResult result;
    result.problem_id = problem.id;

    ChatRequest base = build_enrich_prompt(problem, config.mode);
    base.model = config.model;
    base.temperature = temperature;
    base.max_tokens = config.max_tokens;

    EnrichmentStatus last = EnrichmentStatus::rejected_parse;
    for (int attempt = 0; attempt <= config.validation_retry_budget; ++attempt) {
        result.attempts = attempt + 1;
        ChatRequest req = base;
        req.seed = salted_seed(config.seed, attempt);

        Completion completion;
        try {
            completion = client.complete(req);
        } catch (const ClientError&) {
            result.attempt_log.emplace_back(attempt, EnrichmentStatus::error_transport);
            result.status = EnrichmentStatus::error_transport;
            return result;
        }

        EnrichedResponse enriched;
        try {
            enriched = parse_enriched_text(completion.text, config.mode);
        } catch (const ParseError&) {
            last = EnrichmentStatus::rejected_parse;
            result.attempt_log.emplace_back(attempt, last);
            continue;
        }
        if (config.mode == EnrichMode::erp_only) enriched.solution = problem.original_response;

        last = validate_enrichment(problem, enriched);
        if (last == EnrichmentStatus::accepted) {
            result.status = EnrichmentStatus::accepted;
            result.enriched = std::move(enriched);
            return result;
        }
        result.attempt_log.emplace_back(attempt, last);
    }
    result.status = last;
    return result;
}

// Fans problems x temperatures out over a worker pool; the output order is
// deterministic regardless of scheduling: (input index, variant index).
inline std::pair<std::vector<SftRecord>, std::vector<EnrichmentResult>> enrich_dataset(
    const std::vector<Problem>& problems, const EnrichConfig& config,
    const Tokenizer& tokenizer = default_tokenizer()) {
    if (problems.empty()) throw EmptyDataset("no problems to enrich");
    check_enrich_config(config);

    LlmClient client(config.client);
    const std::size_t variants = config.temperatures.size();
    const std::size_t total = problems.size() * variants;
    std::vector<EnrichmentResult> results(total);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t item = next.fetch_add(1);
            if (item >= total) return;
            const Problem& problem = problems[item / variants];
            const double temperature = config.temperatures[item % variants];
            results[item] = enrich_one(client, problem, config, temperature);
        }
    };
    std::size_t nthreads = std::min<std::size_t>(
        total, static_cast<std::size_t>(std::max(1, config.client.max_in_flight)));
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::vector<SftRecord> records;
    for (std::size_t item = 0; item < total; ++item) {
        const EnrichmentResult& r = results[item];
        if (r.status != EnrichmentStatus::accepted) continue;
        const Problem& problem = problems[item / variants];
        SftRecord rec;
        rec.instruction = problem.instruction;
        rec.response = r.enriched->full_text();
        rec.provenance = provenance_of(config.mode);
        rec.variant_index = static_cast<int>(item % variants);
        rec.token_count = static_cast<long>(tokenizer(rec.response));
        rec.source = problem.source;
        rec.source_id = problem.id;
        records.push_back(std::move(rec));
    }
    return {std::move(records), std::move(results)};
}

inline json to_json(const EnrichmentResult& r) {
    json failures = json::array();
    for (const auto& [attempt, status] : r.attempt_log)
        failures.push_back({{"attempt", attempt}, {"reason", to_string(status)}});
    return json{{"id", r.problem_id},
                {"status", to_string(r.status)},
                {"attempts", r.attempts},
                {"failures", failures}};
}

}  // namespace eit
