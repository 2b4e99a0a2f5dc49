#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eit/answer.hpp"
#include "eit/errors.hpp"
#include "eit/jsonl.hpp"

namespace eit {

// The seven MATH subtopic labels, in Table-4 reporting order.
enum class MathSubject {
    intermediate_algebra,
    precalculus,
    geometry,
    number_theory,
    counting,
    prealgebra,
    algebra,
};

inline const char* to_string(MathSubject s) {
    switch (s) {
        case MathSubject::intermediate_algebra: return "Intermediate Algebra";
        case MathSubject::precalculus: return "Precalculus";
        case MathSubject::geometry: return "Geometry";
        case MathSubject::number_theory: return "Number Theory";
        case MathSubject::counting: return "Counting";
        case MathSubject::prealgebra: return "Prealgebra";
        case MathSubject::algebra: return "Algebra";
    }
    return "?";
}

inline constexpr MathSubject kAllSubjects[] = {
    MathSubject::intermediate_algebra, MathSubject::precalculus,
    MathSubject::geometry,             MathSubject::number_theory,
    MathSubject::counting,             MathSubject::prealgebra,
    MathSubject::algebra,
};

// Upstream MATH files label the category "Counting & Probability" (with
// variants); reporting uses the closed Table-4 label set.
inline std::optional<MathSubject> subject_from_string(std::string_view raw) {
    std::string key;
    for (char c : raw) {
        if (std::isalpha(static_cast<unsigned char>(c)))
            key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (key == "intermediatealgebra") return MathSubject::intermediate_algebra;
    if (key == "precalculus") return MathSubject::precalculus;
    if (key == "geometry") return MathSubject::geometry;
    if (key == "numbertheory") return MathSubject::number_theory;
    if (key == "counting" || key == "countingprobability" || key == "countingandprobability")
        return MathSubject::counting;
    if (key == "prealgebra") return MathSubject::prealgebra;
    if (key == "algebra") return MathSubject::algebra;
    return std::nullopt;
}

struct Problem {
    std::string id;
    SourceFormat source = SourceFormat::gsm8k;
    std::string instruction;
    std::string original_response;
    NormalizedAnswer gold_answer;
    std::optional<MathSubject> subject;  // math only
    std::optional<int> level;            // math only, 1-5
};

enum class Provenance { original, erp_only, ers_only, erp_ers };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::original: return "original";
        case Provenance::erp_only: return "erp_only";
        case Provenance::ers_only: return "ers_only";
        case Provenance::erp_ers: return "erp_ers";
    }
    return "?";
}

inline std::optional<Provenance> provenance_from_string(std::string_view s) {
    if (s == "original") return Provenance::original;
    if (s == "erp_only") return Provenance::erp_only;
    if (s == "ers_only") return Provenance::ers_only;
    if (s == "erp_ers") return Provenance::erp_ers;
    return std::nullopt;
}

// One SFT training record: the (instruction, response) pair plus bookkeeping.
struct SftRecord {
    std::string instruction;
    std::string response;
    Provenance provenance = Provenance::original;
    int variant_index = 0;
    long token_count = 1;
    SourceFormat source = SourceFormat::gsm8k;
    std::string source_id;

    bool operator==(const SftRecord&) const = default;
};

namespace dataset_detail {

inline std::string require_string(const json& obj, const char* key, std::size_t lineno) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string())
        throw IngestError("line " + std::to_string(lineno) + ": missing string field '" +
                          key + "'");
    return it->get<std::string>();
}

inline std::optional<int> parse_level(const std::string& raw) {
    std::size_t i = 0;
    while (i < raw.size() && !std::isdigit(static_cast<unsigned char>(raw[i]))) ++i;
    if (i == raw.size()) return std::nullopt;
    int v = 0;
    while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]))) {
        v = v * 10 + (raw[i] - '0');
        ++i;
    }
    if (v < 1 || v > 5) return std::nullopt;
    return v;
}

inline Problem problem_from_json(const json& obj, SourceFormat expected, std::size_t lineno) {
    Problem p;
    p.id = require_string(obj, "id", lineno);
    std::string source = require_string(obj, "source", lineno);
    if (source != to_string(expected))
        throw IngestError("record '" + p.id + "': source '" + source + "', expected '" +
                          to_string(expected) + "'");
    p.source = expected;
    p.instruction = require_string(obj, "question", lineno);
    p.original_response = require_string(obj, "answer", lineno);

    std::string raw;
    try {
        raw = extract_final_answer(p.original_response, p.source);
    } catch (const MissingAnswerMarker&) {
        throw MissingAnswerMarker("record '" + p.id + "': no final-answer marker");
    } catch (const MalformedBoxed& e) {
        throw MalformedBoxed("record '" + p.id + "': " + e.what());
    }
    if (raw.empty()) throw MissingAnswerMarker("record '" + p.id + "': empty final answer");
    p.gold_answer = normalize_answer(raw);

    if (expected == SourceFormat::math) {
        std::string subject = require_string(obj, "subject", lineno);
        auto canonical = subject_from_string(subject);
        if (!canonical)
            throw IngestError("record '" + p.id + "': unknown subject '" + subject + "'");
        p.subject = *canonical;
        // unparseable level is stored as absent, not an error
        if (auto it = obj.find("level"); it != obj.end() && it->is_string())
            p.level = parse_level(it->get<std::string>());
        else if (it != obj.end() && it->is_number_integer())
            p.level = parse_level(std::to_string(it->get<int>()));
    }
    return p;
}

}  // namespace dataset_detail

inline std::vector<Problem> load_gsm8k(const std::filesystem::path& path) {
    std::vector<Problem> out;
    for_each_jsonl(path, [&](std::size_t lineno, const json& obj) {
        out.push_back(dataset_detail::problem_from_json(obj, SourceFormat::gsm8k, lineno));
    });
    return out;
}

inline std::vector<Problem> load_math(const std::filesystem::path& path) {
    std::vector<Problem> out;
    for_each_jsonl(path, [&](std::size_t lineno, const json& obj) {
        out.push_back(dataset_detail::problem_from_json(obj, SourceFormat::math, lineno));
    });
    return out;
}

// Mixed-source loader: dispatches on each record's "source" field.
inline std::vector<Problem> load_problems(const std::filesystem::path& path) {
    std::vector<Problem> out;
    for_each_jsonl(path, [&](std::size_t lineno, const json& obj) {
        std::string source = dataset_detail::require_string(obj, "source", lineno);
        if (source == "gsm8k") {
            out.push_back(dataset_detail::problem_from_json(obj, SourceFormat::gsm8k, lineno));
        } else if (source == "math") {
            out.push_back(dataset_detail::problem_from_json(obj, SourceFormat::math, lineno));
        } else {
            throw IngestError("line " + std::to_string(lineno) + ": unknown source '" +
                              source + "'");
        }
    });
    return out;
}

inline json to_json(const SftRecord& r) {
    return json{{"instruction", r.instruction}, {"response", r.response},
                {"provenance", to_string(r.provenance)}, {"variant", r.variant_index},
                {"tokens", r.token_count},       {"source", to_string(r.source)},
                {"source_id", r.source_id}};
}

inline SftRecord sft_record_from_json(const json& obj, std::size_t lineno) {
    SftRecord r;
    r.instruction = dataset_detail::require_string(obj, "instruction", lineno);
    r.response = dataset_detail::require_string(obj, "response", lineno);
    auto prov = provenance_from_string(dataset_detail::require_string(obj, "provenance", lineno));
    if (!prov) throw IngestError("line " + std::to_string(lineno) + ": bad provenance");
    r.provenance = *prov;
    std::string source = dataset_detail::require_string(obj, "source", lineno);
    if (source == "gsm8k") {
        r.source = SourceFormat::gsm8k;
    } else if (source == "math") {
        r.source = SourceFormat::math;
    } else {
        throw IngestError("line " + std::to_string(lineno) + ": unknown source '" + source +
                          "'");
    }
    r.source_id = dataset_detail::require_string(obj, "source_id", lineno);
    if (!obj.contains("variant") || !obj["variant"].is_number_integer())
        throw IngestError("line " + std::to_string(lineno) + ": missing 'variant'");
    r.variant_index = obj["variant"].get<int>();
    if (!obj.contains("tokens") || !obj["tokens"].is_number_integer())
        throw IngestError("line " + std::to_string(lineno) + ": missing 'tokens'");
    r.token_count = obj["tokens"].get<long>();
    return r;
}

// Writes records as JSONL; returns the number of lines written. Loading the
// file back reproduces the records field-by-field.
inline std::size_t export_sft(const std::vector<SftRecord>& records,
                              const std::filesystem::path& path) {
    if (records.empty()) throw EmptyDataset("refusing to export an empty dataset");
    JsonlWriter writer(path);
    for (const auto& r : records) writer.write(to_json(r));
    writer.close();
    return records.size();
}

inline std::vector<SftRecord> load_sft(const std::filesystem::path& path) {
    std::vector<SftRecord> out;
    for_each_jsonl(path, [&](std::size_t lineno, const json& obj) {
        out.push_back(sft_record_from_json(obj, lineno));
    });
    return out;
}

struct CompositionGroup {
    SourceFormat source;
    Provenance provenance;
    std::size_t count = 0;
    double mean_tokens = 0.0;
};

struct CompositionReport {
    std::vector<CompositionGroup> groups;  // observed pairs, (source, provenance) order
    std::size_t total = 0;
};

inline CompositionReport composition_report(const std::vector<SftRecord>& records) {
    std::map<std::pair<int, int>, std::pair<std::size_t, long long>> acc;
    for (const auto& r : records) {
        auto& slot = acc[{static_cast<int>(r.source), static_cast<int>(r.provenance)}];
        slot.first += 1;
        slot.second += r.token_count;
    }
    CompositionReport report;
    report.total = records.size();
    for (const auto& [key, slot] : acc) {
        CompositionGroup g;
        g.source = static_cast<SourceFormat>(key.first);
        g.provenance = static_cast<Provenance>(key.second);
        g.count = slot.first;
        g.mean_tokens = static_cast<double>(slot.second) / static_cast<double>(slot.first);
        report.groups.push_back(g);
    }
    return report;
}

inline json to_json(const CompositionReport& report) {
    json groups = json::array();
    for (const auto& g : report.groups) {
        groups.push_back({{"source", to_string(g.source)},
                          {"provenance", to_string(g.provenance)},
                          {"count", g.count},
                          {"mean_tokens", g.mean_tokens}});
    }
    return json{{"total", report.total}, {"groups", groups}};
}

}  // namespace eit
