// eit: enrichment-pipeline toolkit for math instruction datasets.
//
// Subcommands: enrich, validate, stats, perplexity, eval, export, mock.
// Exit codes: 0 success, 1 operational failure, 2 usage error.

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eit/answer.hpp"
#include "eit/dataset.hpp"
#include "eit/enrich.hpp"
#include "eit/eval.hpp"
#include "eit/hash.hpp"
#include "eit/jsonl.hpp"
#include "eit/llm_client.hpp"
#include "eit/metrics.hpp"
#include "eit/mock_server.hpp"

namespace fs = std::filesystem;
using eit::json;

namespace {

struct CommonOpts {
    std::string endpoint;
    std::string model = "gpt-4";
    std::string api_key;
    std::string cache_dir;
    int max_in_flight = 4;
    int retry_budget = 3;
    std::string manifest_path;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_endpoint) {
    auto* ep = cmd->add_option("--endpoint", opts.endpoint,
                               "Base URL of the chat-completions endpoint")
                   ->envname("EIT_ENDPOINT");
    if (needs_endpoint) ep->required();
    cmd->add_option("--model", opts.model, "Model name sent to the endpoint");
    cmd->add_option("--api-key", opts.api_key,
                    "API key (default: the EIT_API_KEY environment variable)");
    cmd->add_option("--cache-dir", opts.cache_dir, "Response cache directory");
    cmd->add_option("--max-in-flight", opts.max_in_flight, "Concurrent request limit")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--retry-budget", opts.retry_budget, "Transport retries per request")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--manifest", opts.manifest_path, "Run manifest path override");
}

eit::ClientConfig make_client_config(const CommonOpts& opts) {
    eit::ClientConfig config;
    config.base_url = opts.endpoint;
    config.api_key = opts.api_key;
    config.max_in_flight = opts.max_in_flight;
    config.retry_budget = opts.retry_budget;
    if (!opts.cache_dir.empty()) config.cache_dir = fs::path(opts.cache_dir);
    return config;
}

json redacted_config(const CommonOpts& opts) {
    json j{{"endpoint", opts.endpoint},
           {"model", opts.model},
           {"api_key", opts.api_key.empty() ? "" : "<redacted>"},
           {"cache_dir", opts.cache_dir},
           {"max_in_flight", opts.max_in_flight},
           {"retry_budget", opts.retry_budget}};
    return j;
}

class Manifest {
public:
    Manifest(std::string subcommand, const CommonOpts& opts, const std::string& out_path)
        : start_(std::chrono::steady_clock::now()) {
        doc_["subcommand"] = std::move(subcommand);
        doc_["config"] = redacted_config(opts);
        doc_["inputs"] = json::object();
        doc_["counts"] = json::object();
        path_ = !opts.manifest_path.empty()
                    ? fs::path(opts.manifest_path)
                    : (!out_path.empty() ? fs::path(out_path + ".manifest.json")
                                         : fs::path(doc_["subcommand"].get<std::string>() +
                                                    ".manifest.json"));
    }

    void input(const std::string& label, const fs::path& file) {
        doc_["inputs"][label] = {{"path", file.string()}, {"sha256", eit::sha256_file_hex(file)}};
    }
    void set_config(const std::string& key, const json& value) { doc_["config"][key] = value; }
    void count(const std::string& key, long value) { doc_["counts"][key] = value; }

    void write() {
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start_);
        doc_["wall_time_ms"] = elapsed.count();
        std::ofstream out(path_);
        out << doc_.dump(2) << '\n';
    }

private:
    json doc_;
    fs::path path_;
    std::chrono::steady_clock::time_point start_;
};

void write_json_file(const std::string& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw eit::IoError("cannot write " + path);
    out << doc.dump(2) << '\n';
}

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << v * 100.0 << "%";
    return os.str();
}

void print_composition(const eit::CompositionReport& report) {
    std::cout << "composition:\n";
    std::cout << "  " << std::left << std::setw(8) << "source" << std::setw(10) << "prov"
              << std::right << std::setw(8) << "count" << std::setw(14) << "mean_tokens"
              << "\n";
    for (const auto& g : report.groups) {
        std::cout << "  " << std::left << std::setw(8) << to_string(g.source) << std::setw(10)
                  << to_string(g.provenance) << std::right << std::setw(8) << g.count
                  << std::setw(14) << std::fixed << std::setprecision(1) << g.mean_tokens
                  << "\n";
    }
    std::cout << "  total: " << report.total << "\n";
}

void print_granularity(const eit::GranularityReport& report) {
    auto row = [](const std::string& label, const eit::GranularityStats& s) {
        std::cout << "  " << std::left << std::setw(10) << label << std::right << std::setw(8)
                  << s.count << std::setw(10) << std::fixed << std::setprecision(1)
                  << s.mean_tokens << std::setw(10) << s.median_tokens << std::setw(8) << s.p10
                  << std::setw(8) << s.p90 << "\n";
    };
    std::cout << "granularity (response tokens):\n";
    std::cout << "  " << std::left << std::setw(10) << "group" << std::right << std::setw(8)
              << "count" << std::setw(10) << "mean" << std::setw(10) << "median" << std::setw(8)
              << "p10" << std::setw(8) << "p90" << "\n";
    row("overall", report.overall);
    for (const auto& [prov, stats] : report.per_provenance) row(to_string(prov), stats);
}

void print_eval_report(const eit::EvalReport& report) {
    // Table-4 column order, then Overall.
    std::cout << "eval (" << to_string(report.mode) << ", k=" << report.k << "):\n";
    for (auto subject : eit::kAllSubjects) {
        auto it = report.per_subject.find(subject);
        if (it == report.per_subject.end()) continue;
        std::cout << "  " << std::left << std::setw(22) << to_string(subject) << std::right
                  << std::setw(6) << it->second.correct << "/" << it->second.n << "  "
                  << pct(it->second.accuracy) << "\n";
    }
    std::cout << "  " << std::left << std::setw(22) << "Overall" << std::right << std::setw(6)
              << report.correct << "/" << report.n << "  " << pct(report.accuracy) << "\n";
    if (!report.transport_failures.empty())
        std::cout << "  transport failures: " << report.transport_failures.size() << "\n";
}

// --------------------------------------------------------------------------

int cmd_enrich(const CommonOpts& common, const std::string& in, const std::string& out,
               const std::string& mode_name, std::vector<double> temperatures,
               int validation_retries, std::optional<long> seed, bool keep_originals,
               std::string results_path) {
    Manifest manifest("enrich", common, out);
    manifest.input("problems", in);

    eit::EnrichConfig config;
    config.mode = *eit::enrich_mode_from_string(mode_name);
    if (!temperatures.empty()) config.temperatures = std::move(temperatures);
    config.validation_retry_budget = validation_retries;
    config.client = make_client_config(common);
    config.model = common.model;
    config.seed = seed;
    manifest.set_config("mode", mode_name);
    manifest.set_config("temperatures", config.temperatures);
    manifest.set_config("validation_retry_budget", config.validation_retry_budget);

    auto problems = eit::load_problems(in);
    auto [records, results] = eit::enrich_dataset(problems, config);

    if (keep_originals) {
        // problems with no accepted variant fall back to their original response
        std::map<std::string, bool> accepted;
        for (const auto& r : results)
            if (r.status == eit::EnrichmentStatus::accepted) accepted[r.problem_id] = true;
        auto tokenizer = eit::default_tokenizer();
        for (const auto& p : problems) {
            if (accepted.count(p.id)) continue;
            eit::SftRecord rec;
            rec.instruction = p.instruction;
            rec.response = p.original_response;
            rec.provenance = eit::Provenance::original;
            rec.variant_index = 0;
            rec.token_count = static_cast<long>(tokenizer(rec.response));
            rec.source = p.source;
            rec.source_id = p.id;
            records.push_back(std::move(rec));
        }
    }

    std::size_t written = eit::export_sft(records, out);

    if (results_path.empty()) results_path = out + ".results.jsonl";
    eit::JsonlWriter log(results_path);
    for (const auto& r : results) log.write(to_json(r));
    log.close();

    auto quality = eit::enrichment_quality_report(results);
    std::cout << "enriched " << problems.size() << " problems x " << config.temperatures.size()
              << " temperature(s): " << written << " records, acceptance "
              << pct(quality.accuracy) << "\n";

    manifest.count("problems", static_cast<long>(problems.size()));
    manifest.count("records", static_cast<long>(written));
    for (const auto& [status, n] : quality.breakdown)
        manifest.count(to_string(status), static_cast<long>(n));
    manifest.write();
    return 0;
}

int cmd_export(const CommonOpts& common, const std::string& in, const std::string& out) {
    Manifest manifest("export", common, out);
    manifest.input("problems", in);
    auto problems = eit::load_problems(in);
    auto tokenizer = eit::default_tokenizer();
    std::vector<eit::SftRecord> records;
    for (const auto& p : problems) {
        eit::SftRecord rec;
        rec.instruction = p.instruction;
        rec.response = p.original_response;
        rec.provenance = eit::Provenance::original;
        rec.variant_index = 0;
        rec.token_count = static_cast<long>(tokenizer(rec.response));
        rec.source = p.source;
        rec.source_id = p.id;
        records.push_back(std::move(rec));
    }
    std::size_t written = eit::export_sft(records, out);
    std::cout << "exported " << written << " records to " << out << "\n";
    manifest.count("records", static_cast<long>(written));
    manifest.write();
    return 0;
}

int cmd_validate(const CommonOpts& common, const std::string& in, const std::string& problems_path,
                 const std::string& out) {
    Manifest manifest("validate", common, out);
    manifest.input("sft", in);
    manifest.input("problems", problems_path);

    auto records = eit::load_sft(in);
    auto problems = eit::load_problems(problems_path);
    std::map<std::string, const eit::Problem*> by_id;
    for (const auto& p : problems) by_id[p.id] = &p;

    std::vector<eit::EnrichmentResult> results;
    for (const auto& r : records) {
        auto it = by_id.find(r.source_id);
        if (it == by_id.end())
            throw eit::IngestError("record source_id '" + r.source_id +
                                   "' not found in problems file");
        eit::EnrichedResponse enriched;
        enriched.solution = r.response;
        eit::EnrichmentResult res;
        res.problem_id = r.source_id;
        res.attempts = 1;
        res.status = eit::validate_enrichment(*it->second, enriched);
        results.push_back(std::move(res));
    }

    auto quality = eit::enrichment_quality_report(results);
    json doc = to_json(quality);
    std::cout << "validated " << records.size() << " records: final-answer accuracy "
              << pct(quality.accuracy) << "\n";
    for (const auto& [status, n] : quality.breakdown)
        std::cout << "  " << std::left << std::setw(26) << to_string(status) << n << "\n";
    if (!out.empty()) write_json_file(out, doc);

    manifest.count("records", static_cast<long>(records.size()));
    for (const auto& [status, n] : quality.breakdown)
        manifest.count(to_string(status), static_cast<long>(n));
    manifest.write();
    return 0;
}

int cmd_stats(const CommonOpts& common, const std::string& in, const std::string& out) {
    Manifest manifest("stats", common, out);
    manifest.input("sft", in);
    auto records = eit::load_sft(in);
    auto composition = eit::composition_report(records);
    auto granularity = eit::granularity_report(records);
    print_composition(composition);
    print_granularity(granularity);
    json doc{{"composition", to_json(composition)}, {"granularity", to_json(granularity)}};
    if (!out.empty()) write_json_file(out, doc);
    manifest.count("records", static_cast<long>(records.size()));
    manifest.write();
    return 0;
}

int cmd_perplexity(const CommonOpts& common, const std::string& in, const std::string& out) {
    Manifest manifest("perplexity", common, out);
    manifest.input("sft", in);
    auto records = eit::load_sft(in);
    auto report = eit::dataset_perplexity(records, make_client_config(common), common.model);
    std::cout << "perplexity over " << report.records_scored << "/" << records.size()
              << " records: mean " << std::fixed << std::setprecision(4) << report.mean
              << ", median " << report.median << "\n";
    if (!report.failures.empty())
        std::cout << "  scoring failures: " << report.failures.size() << "\n";
    if (!out.empty()) write_json_file(out, to_json(report));
    manifest.count("records", static_cast<long>(records.size()));
    manifest.count("records_scored", static_cast<long>(report.records_scored));
    manifest.write();
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& in, const std::string& out, int k,
             double sampling_temperature, std::optional<long> seed,
             const std::string& fewshot_path, const std::string& style_name,
             const std::string& mode_name) {
    Manifest manifest("eval", common, out);
    manifest.input("problems", in);
    auto problems = eit::load_problems(in);

    eit::EvalOptions options;
    options.k = k;
    options.sampling_temperature = sampling_temperature;
    options.seed = seed;
    options.model = common.model;

    eit::RequestFactory factory;
    if (!fewshot_path.empty()) {
        manifest.input("fewshot", fewshot_path);
        auto exemplars = eit::load_fewshot_exemplars(fewshot_path);
        auto style = style_name == "erp_ers" ? eit::FewShotStyle::erp_ers_style
                                             : eit::FewShotStyle::standard_cot;
        factory = eit::fewshot_request_factory(std::move(exemplars), style);
        options.mode = eit::EvalMode::fewshot_prompting;
    } else {
        factory = eit::plain_request_factory();
    }
    if (mode_name == "greedy") options.mode = eit::EvalMode::greedy;
    else if (mode_name == "self_consistency") options.mode = eit::EvalMode::self_consistency;
    else if (mode_name == "fewshot_prompting") options.mode = eit::EvalMode::fewshot_prompting;

    auto report = eit::run_eval(problems, factory, make_client_config(common), options);
    print_eval_report(report);
    if (!out.empty()) write_json_file(out, to_json(report));

    manifest.set_config("k", k);
    manifest.count("n", static_cast<long>(report.n));
    manifest.count("correct", static_cast<long>(report.correct));
    manifest.write();
    return 0;
}

int cmd_mock(const CommonOpts& common, const std::string& fixtures, int port) {
    Manifest manifest("mock", common, "");
    manifest.input("fixtures", fixtures);
    auto server = eit::serve_mock(fixtures, port);
    manifest.set_config("port", server->port());
    manifest.write();
    std::cout << "mock endpoint listening on " << server->base_url()
              << " (POST /chat/completions, GET /__mock/stats)" << std::endl;
    // Foreground server: run until interrupted.
    static std::atomic<bool> stop_requested{false};
    std::signal(SIGINT, [](int) { stop_requested = true; });
    std::signal(SIGTERM, [](int) { stop_requested = true; });
    while (!stop_requested)
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server->stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EIT data pipeline: enrich math instruction datasets via ERP/ERS prompting, "
                 "validate answer preservation, and measure dataset quality"};
    app.require_subcommand(1);
    app.set_config("--config");

    // enrich
    CommonOpts enrich_common;
    std::string enrich_in, enrich_out, enrich_results;
    std::string enrich_mode = "erp_ers";
    std::vector<double> enrich_temps;
    int enrich_validation_retries = 3;
    std::optional<long> enrich_seed;
    bool keep_originals = false;
    auto* enrich = app.add_subcommand("enrich", "Enrich problems through an LLM endpoint");
    enrich->add_option("--in", enrich_in, "Problem JSONL")->required()->check(CLI::ExistingFile);
    enrich->add_option("--out", enrich_out, "SFT JSONL output")->required();
    enrich->add_option("--mode", enrich_mode, "Enrichment mode")
        ->check(CLI::IsMember({"erp_ers", "erp_only", "ers_only"}));
    enrich->add_option("--temperature", enrich_temps,
                       "Sampling temperature, repeatable for diversified variants");
    enrich->add_option("--validation-retries", enrich_validation_retries,
                       "Re-prompts allowed when validation rejects an attempt")
        ->check(CLI::NonNegativeNumber);
    enrich->add_option("--seed", enrich_seed, "Base request seed");
    enrich->add_flag("--keep-originals", keep_originals,
                     "Keep rejected problems with their original responses");
    enrich->add_option("--results", enrich_results,
                       "Enrichment result log path (default <out>.results.jsonl)");
    add_common(enrich, enrich_common, /*needs_endpoint=*/true);

    // export
    CommonOpts export_common;
    std::string export_in, export_out;
    auto* exportc = app.add_subcommand("export", "Export problems as original-response SFT JSONL");
    exportc->add_option("--in", export_in, "Problem JSONL")->required()->check(CLI::ExistingFile);
    exportc->add_option("--out", export_out, "SFT JSONL output")->required();
    add_common(exportc, export_common, false);

    // validate
    CommonOpts validate_common;
    std::string validate_in, validate_problems, validate_out;
    auto* validate = app.add_subcommand("validate",
                                        "Re-check an enriched dataset against its sources");
    validate->add_option("--in", validate_in, "SFT JSONL")->required()->check(CLI::ExistingFile);
    validate->add_option("--problems", validate_problems, "Source problem JSONL")
        ->required()
        ->check(CLI::ExistingFile);
    validate->add_option("--out", validate_out, "Quality report JSON output");
    add_common(validate, validate_common, false);

    // stats
    CommonOpts stats_common;
    std::string stats_in, stats_out;
    auto* stats = app.add_subcommand("stats", "Composition and granularity reports");
    stats->add_option("--in", stats_in, "SFT JSONL")->required()->check(CLI::ExistingFile);
    stats->add_option("--out", stats_out, "Report JSON output");
    add_common(stats, stats_common, false);

    // perplexity
    CommonOpts ppl_common;
    std::string ppl_in, ppl_out;
    auto* ppl = app.add_subcommand("perplexity",
                                   "Score response perplexity via a logprob endpoint");
    ppl->add_option("--in", ppl_in, "SFT JSONL")->required()->check(CLI::ExistingFile);
    ppl->add_option("--out", ppl_out, "Report JSON output");
    add_common(ppl, ppl_common, true);

    // eval
    CommonOpts eval_common;
    std::string eval_in, eval_out, eval_fewshot, eval_style = "standard_cot", eval_mode;
    int eval_k = 1;
    double eval_temp = 0.7;
    std::optional<long> eval_seed;
    auto* evalc = app.add_subcommand("eval", "Grade an endpoint on a problem set");
    evalc->add_option("--in", eval_in, "Problem JSONL")->required()->check(CLI::ExistingFile);
    evalc->add_option("--out", eval_out, "Report JSON output");
    evalc->add_option("--k", eval_k, "Samples per problem (k>1 enables majority voting)")
        ->check(CLI::PositiveNumber);
    evalc->add_option("--temperature", eval_temp, "Sampling temperature for k>1");
    evalc->add_option("--seed", eval_seed, "Base request seed");
    evalc->add_option("--fewshot", eval_fewshot, "Few-shot exemplar JSONL")
        ->check(CLI::ExistingFile);
    evalc->add_option("--style", eval_style, "Few-shot exemplar style")
        ->check(CLI::IsMember({"standard_cot", "erp_ers"}));
    evalc->add_option("--mode", eval_mode, "Report mode label override")
        ->check(CLI::IsMember({"greedy", "self_consistency", "fewshot_prompting"}));
    add_common(evalc, eval_common, true);

    // mock
    CommonOpts mock_common;
    std::string mock_fixtures;
    int mock_port = 8089;
    auto* mock = app.add_subcommand("mock", "Serve a deterministic mock endpoint");
    mock->add_option("--fixtures", mock_fixtures, "Fixture JSON file")
        ->required()
        ->check(CLI::ExistingFile);
    mock->add_option("--port", mock_port, "Port (0 picks a free port)")
        ->check(CLI::Range(0, 65535));
    add_common(mock, mock_common, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (enrich->parsed())
            return cmd_enrich(enrich_common, enrich_in, enrich_out, enrich_mode, enrich_temps,
                              enrich_validation_retries, enrich_seed, keep_originals,
                              enrich_results);
        if (exportc->parsed()) return cmd_export(export_common, export_in, export_out);
        if (validate->parsed())
            return cmd_validate(validate_common, validate_in, validate_problems, validate_out);
        if (stats->parsed()) return cmd_stats(stats_common, stats_in, stats_out);
        if (ppl->parsed()) return cmd_perplexity(ppl_common, ppl_in, ppl_out);
        if (evalc->parsed())
            return cmd_eval(eval_common, eval_in, eval_out, eval_k, eval_temp, eval_seed,
                            eval_fewshot, eval_style, eval_mode);
        if (mock->parsed()) return cmd_mock(mock_common, mock_fixtures, mock_port);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 2;
}
