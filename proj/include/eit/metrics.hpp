#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "eit/dataset.hpp"
#include "eit/enrich.hpp"
#include "eit/llm_client.hpp"
#include "eit/tokenizer.hpp"

namespace eit {

struct GranularityStats {
    std::size_t count = 0;
    double mean_tokens = 0.0;
    double median_tokens = 0.0;
    double p10 = 0.0;
    double p90 = 0.0;
};

struct GranularityReport {
    GranularityStats overall;
    std::map<Provenance, GranularityStats> per_provenance;
};

namespace metrics_detail {

// Nearest-rank percentile: the ceil(p*n)-th smallest element. Always a member
// of the input multiset.
inline double nearest_rank(const std::vector<std::size_t>& sorted, double p) {
    std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return static_cast<double>(sorted[rank - 1]);
}

inline GranularityStats stats_of(std::vector<std::size_t> counts) {
    GranularityStats s;
    s.count = counts.size();
    if (counts.empty()) return s;
    unsigned long long sum = 0;
    for (auto c : counts) sum += c;
    s.mean_tokens = static_cast<double>(sum) / static_cast<double>(counts.size());
    std::sort(counts.begin(), counts.end());
    s.median_tokens = nearest_rank(counts, 0.50);
    s.p10 = nearest_rank(counts, 0.10);
    s.p90 = nearest_rank(counts, 0.90);
    return s;
}

}  // namespace metrics_detail

// Token-count statistics over the response fields, overall and per
// provenance. Counts come from the supplied tokenizer, not from the records'
// stored token_count.
inline GranularityReport granularity_report(const std::vector<SftRecord>& records,
                                            const Tokenizer& tokenizer = default_tokenizer()) {
    if (records.empty()) throw EmptyDataset("no records for granularity report");
    std::vector<std::size_t> all;
    std::map<Provenance, std::vector<std::size_t>> groups;
    for (const auto& r : records) {
        std::size_t c = tokenizer(r.response);
        all.push_back(c);
        groups[r.provenance].push_back(c);
    }
    GranularityReport report;
    report.overall = metrics_detail::stats_of(std::move(all));
    for (auto& [prov, counts] : groups)
        report.per_provenance[prov] = metrics_detail::stats_of(std::move(counts));
    return report;
}

// exp(-mean(logprobs)); the perplexity of a token sequence under the scoring
// model, natural base.
inline double perplexity(const std::vector<double>& token_logprobs) {
    if (token_logprobs.empty()) throw EmptySequence("perplexity of an empty sequence");
    double sum = 0.0;
    for (double lp : token_logprobs) sum += lp;
    return std::exp(-sum / static_cast<double>(token_logprobs.size()));
}

struct PerplexityReport {
    std::vector<std::optional<double>> per_record;  // aligned with the input records
    std::vector<std::pair<std::size_t, std::string>> failures;  // (index, reason)
    double mean = 0.0;
    double median = 0.0;
    std::size_t records_scored = 0;
};

// Scores each record's RESPONSE tokens against a logprob-capable endpoint;
// the instruction rides along as conditioning context but is not scored.
// Per-record failures are excluded from the aggregates.
inline PerplexityReport dataset_perplexity(const std::vector<SftRecord>& records,
                                           const ClientConfig& client_config,
                                           const std::string& model) {
    if (records.empty()) throw EmptyDataset("no records to score");
    LlmClient client(client_config);

    PerplexityReport report;
    report.per_record.resize(records.size());
    std::vector<std::optional<std::string>> errors(records.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= records.size()) return;
            ChatRequest req;
            req.messages = {{"user", records[i].instruction},
                            {"assistant", records[i].response}};
            req.model = model;
            req.temperature = 0.0;
            req.want_logprobs = true;
            try {
                Completion c = client.complete_with_logprobs(req);
                std::vector<double> lps;
                lps.reserve(c.token_logprobs->size());
                for (const auto& t : *c.token_logprobs) lps.push_back(t.logprob);
                report.per_record[i] = perplexity(lps);
            } catch (const Error& e) {
                errors[i] = e.what();
            }
        }
    };
    std::size_t nthreads = std::min<std::size_t>(
        records.size(), static_cast<std::size_t>(std::max(1, client_config.max_in_flight)));
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::vector<double> scored;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (report.per_record[i]) {
            scored.push_back(*report.per_record[i]);
        } else {
            report.failures.emplace_back(i, errors[i].value_or("unscored"));
        }
    }
    report.records_scored = scored.size();
    if (scored.empty()) throw ScoringUnavailable("no record could be scored");
    double sum = 0.0;
    for (double v : scored) sum += v;
    report.mean = sum / static_cast<double>(scored.size());
    std::sort(scored.begin(), scored.end());
    std::size_t mid = scored.size() / 2;
    report.median = scored.size() % 2 ? scored[mid] : (scored[mid - 1] + scored[mid]) / 2.0;
    return report;
}

struct QualityReport {
    double accuracy = 0.0;  // accepted / total
    std::size_t total = 0;
    std::map<EnrichmentStatus, std::size_t> breakdown;
};

// Appendix-B style final-answer quality over a batch of enrichment outcomes.
inline QualityReport enrichment_quality_report(const std::vector<EnrichmentResult>& results) {
    if (results.empty()) throw EmptyDataset("no enrichment results");
    QualityReport report;
    report.total = results.size();
    for (const auto& r : results) ++report.breakdown[r.status];
    report.accuracy = static_cast<double>(report.breakdown[EnrichmentStatus::accepted]) /
                      static_cast<double>(report.total);
    return report;
}

inline json to_json(const GranularityStats& s) {
    return json{{"count", s.count},
                {"mean_tokens", s.mean_tokens},
                {"median_tokens", s.median_tokens},
                {"p10", s.p10},
                {"p90", s.p90}};
}

inline json to_json(const GranularityReport& report) {
    json per = json::object();
    for (const auto& [prov, stats] : report.per_provenance)
        per[to_string(prov)] = to_json(stats);
    return json{{"overall", to_json(report.overall)}, {"per_provenance", per}};
}

inline json to_json(const PerplexityReport& report) {
    json per = json::array();
    for (const auto& v : report.per_record) per.push_back(v ? json(*v) : json(nullptr));
    json failures = json::array();
    for (const auto& [i, reason] : report.failures)
        failures.push_back({{"index", i}, {"reason", reason}});
    return json{{"mean", report.mean},
                {"median", report.median},
                {"records_scored", report.records_scored},
                {"per_record", per},
                {"failures", failures}};
}

inline json to_json(const QualityReport& report) {
    json breakdown = json::object();
    for (const auto& [status, count] : report.breakdown)
        breakdown[to_string(status)] = count;
    return json{{"accuracy", report.accuracy},
                {"total", report.total},
                {"breakdown", breakdown}};
}

}  // namespace eit
