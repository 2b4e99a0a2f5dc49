#pragma once

#include <atomic>
#include <cctype>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "eit/answer.hpp"
#include "eit/dataset.hpp"
#include "eit/llm_client.hpp"

namespace eit {

namespace eval_detail {

// Last numeric token of the text: digits possibly joined by . , / and an
// optional leading minus sign.
inline std::optional<std::string> last_number_token(std::string_view s) {
    std::size_t end = s.find_last_of("0123456789");
    if (end == std::string_view::npos) return std::nullopt;
    std::size_t start = end;
    while (start > 0) {
        char c = s[start - 1];
        if (std::isdigit(static_cast<unsigned char>(c))) {
            --start;
        } else if ((c == '.' || c == ',' || c == '/') && start >= 2 &&
                   std::isdigit(static_cast<unsigned char>(s[start - 2]))) {
            start -= 2;
        } else {
            break;
        }
    }
    if (start > 0 && s[start - 1] == '-') {
        char before = start >= 2 ? s[start - 2] : ' ';
        if (!std::isdigit(static_cast<unsigned char>(before)) &&
            !std::isalpha(static_cast<unsigned char>(before)))
            --start;
    }
    return std::string(s.substr(start, end + 1 - start));
}

}  // namespace eval_detail

// Answer extraction for model generations. Tries the source's native marker
// first; models under evaluation do not reliably emit it, so a missing marker
// falls back to the last \boxed{} group, then the last number token. Returns
// nullopt when nothing extractable remains.
inline std::optional<NormalizedAnswer> extract_generation_answer(std::string_view generation,
                                                                 SourceFormat source) {
    std::string raw;
    try {
        raw = extract_final_answer(generation, source);
    } catch (const Error&) {
    }
    if (raw.empty() && source != SourceFormat::math) {
        try {
            raw = extract_final_answer(generation, SourceFormat::math);
        } catch (const Error&) {
        }
    }
    if (raw.empty()) {
        if (auto number = eval_detail::last_number_token(generation)) raw = *number;
    }
    if (raw.empty()) return std::nullopt;
    return normalize_answer(raw);
}

// True iff the generation's final answer is equivalent to the problem's gold
// answer. Total: generations with no extractable answer grade false.
inline bool grade(const Problem& problem, std::string_view generation) {
    auto answer = extract_generation_answer(generation, problem.source);
    return answer && answers_equivalent(problem.gold_answer, *answer);
}

// The answer whose equivalence class is largest; ties go to the class whose
// first member appeared earliest. Returns a member of the input list.
inline NormalizedAnswer majority_vote(const std::vector<NormalizedAnswer>& answers) {
    if (answers.empty()) throw EmptySequence("majority_vote over an empty list");
    std::vector<std::size_t> class_first;   // index of each class representative
    std::vector<std::size_t> class_count;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        bool placed = false;
        for (std::size_t c = 0; c < class_first.size(); ++c) {
            if (answers_equivalent(answers[class_first[c]], answers[i])) {
                ++class_count[c];
                placed = true;
                break;
            }
        }
        if (!placed) {
            class_first.push_back(i);
            class_count.push_back(1);
        }
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < class_first.size(); ++c) {
        if (class_count[c] > class_count[best]) best = c;  // earlier class wins ties
    }
    return answers[class_first[best]];
}

enum class EvalMode { greedy, self_consistency, fewshot_prompting };

inline const char* to_string(EvalMode m) {
    switch (m) {
        case EvalMode::greedy: return "greedy";
        case EvalMode::self_consistency: return "self_consistency";
        case EvalMode::fewshot_prompting: return "fewshot_prompting";
    }
    return "?";
}

struct SubjectStats {
    std::size_t n = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::size_t n = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::map<MathSubject, SubjectStats> per_subject;
    int k = 1;
    EvalMode mode = EvalMode::greedy;
    std::vector<std::string> transport_failures;  // ids with at least one failed sample
};

struct FewShotExemplar {
    std::string question;
    std::string worked_solution;  // must end with an extractable final answer
};

enum class FewShotStyle { standard_cot, erp_ers_style };

// Exemplar (question, worked solution) pairs followed by the target question.
// In erp_ers_style the exemplar solutions are expected to open with a plan
// paragraph, and the system line asks the model to do the same.
inline ChatRequest build_fewshot_prompt(const Problem& problem,
                                        const std::vector<FewShotExemplar>& exemplars,
                                        FewShotStyle style) {
    if (exemplars.empty()) throw EmptyExemplars("few-shot prompt needs at least one exemplar");
    std::string system =
        style == FewShotStyle::erp_ers_style
            ? "You are a careful math assistant. For the final question, first give a short "
              "plan that breaks the problem into lower-level objectives, then solve it step "
              "by step in the format of the worked examples."
            : "You are a careful math assistant. Solve the final question step by step in "
              "the format of the worked examples.";
    std::string user;
    for (const auto& ex : exemplars) {
        user += "question: ";
        user += ex.question;
        user += "\n\nanswer: ";
        user += ex.worked_solution;
        user += "\n\n";
    }
    user += "question: ";
    user += problem.instruction;
    user += "\n\nanswer:";

    ChatRequest req;
    req.messages = {{"system", std::move(system)}, {"user", std::move(user)}};
    return req;
}

// Builds the generation request for one (problem, sample) pair. run_eval owns
// temperature and seed policy; factories own the message content.
using RequestFactory = std::function<ChatRequest(const Problem&, int sample_index)>;

inline RequestFactory plain_request_factory() {
    return [](const Problem& problem, int) {
        ChatRequest req;
        req.messages = {{"system",
                         "You are a careful math assistant. Solve the problem step by step "
                         "and finish with the final answer."},
                        {"user", problem.instruction}};
        return req;
    };
}

inline RequestFactory fewshot_request_factory(std::vector<FewShotExemplar> exemplars,
                                              FewShotStyle style) {
    return [exemplars = std::move(exemplars), style](const Problem& problem, int) {
        return build_fewshot_prompt(problem, exemplars, style);
    };
}

struct EvalOptions {
    int k = 1;
    double sampling_temperature = 0.7;  // used when k > 1
    std::optional<long> seed;
    std::string model = "gpt-4";
    int max_tokens = 1024;
    std::optional<EvalMode> mode;  // inferred from k when absent
};

// k generations per problem (temperature 0 when k = 1, sampled with distinct
// per-sample seeds otherwise), majority vote, grade against gold. Transport
// failures consume their sample slot as an unanswerable (wrong) generation.
inline EvalReport run_eval(const std::vector<Problem>& problems, const RequestFactory& factory,
                           const ClientConfig& client_config, const EvalOptions& options) {
    if (problems.empty()) throw EmptyDataset("no problems to evaluate");
    if (options.k < 1) throw std::invalid_argument("k must be >= 1");
    LlmClient client(client_config);

    const std::size_t k = static_cast<std::size_t>(options.k);
    const std::size_t total = problems.size() * k;
    // one slot per (problem, sample); nullopt = no extractable answer
    std::vector<std::optional<NormalizedAnswer>> answers(total);
    std::vector<char> transport_failed(total, 0);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t item = next.fetch_add(1);
            if (item >= total) return;
            const Problem& problem = problems[item / k];
            const int sample = static_cast<int>(item % k);
            ChatRequest req = factory(problem, sample);
            req.model = options.model;
            req.max_tokens = options.max_tokens;
            if (options.k == 1) {
                req.temperature = 0.0;
                req.seed = options.seed;
            } else {
                req.temperature = options.sampling_temperature;
                req.seed = options.seed ? *options.seed + sample : sample;
            }
            try {
                Completion c = client.complete(req);
                answers[item] = extract_generation_answer(c.text, problem.source);
            } catch (const ClientError&) {
                transport_failed[item] = 1;
            }
        }
    };
    std::size_t nthreads = std::min<std::size_t>(
        total, static_cast<std::size_t>(std::max(1, client_config.max_in_flight)));
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    EvalReport report;
    report.n = problems.size();
    report.k = options.k;
    report.mode = options.mode.value_or(options.k == 1 ? EvalMode::greedy
                                                       : EvalMode::self_consistency);
    std::size_t failed_everywhere = 0;
    for (std::size_t p = 0; p < problems.size(); ++p) {
        std::vector<NormalizedAnswer> votes;
        bool any_failed = false;
        bool all_failed = true;
        for (std::size_t j = 0; j < k; ++j) {
            std::size_t item = p * k + j;
            if (transport_failed[item]) any_failed = true;
            else all_failed = false;
            // unanswered slots vote as an empty answer, which never matches gold
            votes.push_back(answers[item].value_or(NormalizedAnswer{}));
        }
        if (any_failed) report.transport_failures.push_back(problems[p].id);
        if (all_failed) ++failed_everywhere;
        NormalizedAnswer winner = majority_vote(votes);
        bool correct = !winner.canonical.empty() &&
                       answers_equivalent(problems[p].gold_answer, winner);
        if (correct) ++report.correct;
        if (problems[p].subject) {
            auto& s = report.per_subject[*problems[p].subject];
            ++s.n;
            if (correct) ++s.correct;
        }
    }
    if (failed_everywhere == problems.size())
        throw EvalTransportFailure("every generation request failed");
    report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.n);
    for (auto& [subject, s] : report.per_subject)
        s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.n);
    return report;
}

inline json to_json(const EvalReport& report) {
    json per = json::object();
    for (const auto& [subject, s] : report.per_subject) {
        per[to_string(subject)] = {{"n", s.n}, {"correct", s.correct},
                                   {"accuracy", s.accuracy}};
    }
    json failures = json::array();
    for (const auto& id : report.transport_failures) failures.push_back(id);
    return json{{"n", report.n},           {"correct", report.correct},
                {"accuracy", report.accuracy}, {"k", report.k},
                {"mode", to_string(report.mode)}, {"per_subject", per},
                {"transport_failures", failures}};
}

// Loads {"question","solution"} JSONL exemplars, checking each solution ends
// with an extractable answer.
inline std::vector<FewShotExemplar> load_fewshot_exemplars(const std::filesystem::path& path) {
    std::vector<FewShotExemplar> out;
    for_each_jsonl(path, [&](std::size_t lineno, const json& obj) {
        FewShotExemplar ex;
        ex.question = dataset_detail::require_string(obj, "question", lineno);
        ex.worked_solution = dataset_detail::require_string(obj, "solution", lineno);
        bool extractable = false;
        for (SourceFormat fmt : {SourceFormat::math, SourceFormat::gsm8k}) {
            try {
                extractable = !extract_final_answer(ex.worked_solution, fmt).empty();
            } catch (const Error&) {
            }
            if (extractable) break;
        }
        if (!extractable)
            throw IngestError("line " + std::to_string(lineno) +
                              ": exemplar solution has no extractable final answer");
        out.push_back(std::move(ex));
    });
    return out;
}

}  // namespace eit
