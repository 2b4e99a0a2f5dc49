#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "eit/errors.hpp"
#include "eit/hash.hpp"

namespace eit {

using json = nlohmann::json;

struct Message {
    std::string role;  // system | user | assistant
    std::string content;

    bool operator==(const Message&) const = default;
};

struct ChatRequest {
    std::vector<Message> messages;
    std::string model;
    double temperature = 0.0;
    int max_tokens = 1024;
    bool want_logprobs = false;
    std::optional<long> seed;
};

enum class FinishReason { stop, length, error };

struct TokenLogprob {
    std::string token;
    double logprob;  // <= 0
};

struct Completion {
    std::string text;
    FinishReason finish_reason = FinishReason::stop;
    std::optional<std::vector<TokenLogprob>> token_logprobs;
};

struct ClientConfig {
    std::string base_url;  // e.g. http://127.0.0.1:8080/v1
    std::string api_key;
    std::string api_key_env = "EIT_API_KEY";  // consulted when api_key is empty
    int max_in_flight = 4;
    int retry_budget = 3;
    std::chrono::milliseconds backoff_base{250};
    std::chrono::milliseconds backoff_cap{60000};
    std::optional<std::filesystem::path> cache_dir;
    std::chrono::seconds timeout{120};
};

// Stable identity of a request from the mock server's point of view:
// messages + temperature + seed.
inline std::string fixture_key(const std::vector<Message>& messages, double temperature,
                               std::optional<long> seed) {
    json j;
    j["messages"] = json::array();
    for (const auto& m : messages)
        j["messages"].push_back({{"role", m.role}, {"content", m.content}});
    j["temperature"] = temperature;
    if (seed) j["seed"] = *seed;
    else j["seed"] = nullptr;
    return sha256_hex(j.dump());
}

inline std::string fixture_key(const ChatRequest& req) {
    return fixture_key(req.messages, req.temperature, req.seed);
}

// Cache identity: everything that can change the response is part of the key.
inline std::string cache_key(const ClientConfig& config, const ChatRequest& req) {
    json j;
    j["base_url"] = config.base_url;
    j["model"] = req.model;
    j["messages"] = json::array();
    for (const auto& m : req.messages)
        j["messages"].push_back({{"role", m.role}, {"content", m.content}});
    j["temperature"] = req.temperature;
    j["max_tokens"] = req.max_tokens;
    j["logprobs"] = req.want_logprobs;
    if (req.seed) j["seed"] = *req.seed;
    else j["seed"] = nullptr;
    return sha256_hex(j.dump());
}

namespace client_detail {

inline json completion_to_json(const Completion& c) {
    json j;
    j["text"] = c.text;
    j["finish_reason"] = c.finish_reason == FinishReason::stop     ? "stop"
                         : c.finish_reason == FinishReason::length ? "length"
                                                                   : "error";
    if (c.token_logprobs) {
        json arr = json::array();
        for (const auto& t : *c.token_logprobs)
            arr.push_back({{"token", t.token}, {"logprob", t.logprob}});
        j["token_logprobs"] = arr;
    }
    return j;
}

inline Completion completion_from_json(const json& j) {
    Completion c;
    c.text = j.at("text").get<std::string>();
    std::string reason = j.at("finish_reason").get<std::string>();
    c.finish_reason = reason == "length" ? FinishReason::length
                      : reason == "error" ? FinishReason::error
                                          : FinishReason::stop;
    if (j.contains("token_logprobs")) {
        std::vector<TokenLogprob> probs;
        for (const auto& t : j["token_logprobs"])
            probs.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
        c.token_logprobs = std::move(probs);
    }
    return c;
}

// base_url -> (host part usable by httplib::Client, path prefix).
inline std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
    std::string rest = base_url;
    std::string scheme = "http://";
    if (rest.rfind("http://", 0) == 0) {
        rest = rest.substr(7);
    } else if (rest.rfind("https://", 0) == 0) {
        scheme = "https://";
        rest = rest.substr(8);
    }
    std::size_t slash = rest.find('/');
    std::string host = slash == std::string::npos ? rest : rest.substr(0, slash);
    std::string prefix = slash == std::string::npos ? "" : rest.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {scheme + host, prefix};
}

}  // namespace client_detail

// Blocking chat-completions client. Shareable across threads: the in-flight
// limit is enforced internally, and cache writes are atomic per entry.
class LlmClient {
public:
    explicit LlmClient(ClientConfig config) : config_(std::move(config)) {
        if (config_.max_in_flight < 1) config_.max_in_flight = 1;
        if (config_.api_key.empty() && !config_.api_key_env.empty()) {
            if (const char* env = std::getenv(config_.api_key_env.c_str()))
                config_.api_key = env;
        }
        if (config_.cache_dir) std::filesystem::create_directories(*config_.cache_dir);
    }

    const ClientConfig& config() const { return config_; }

    Completion complete(const ChatRequest& request) {
        if (request.messages.empty())
            throw std::invalid_argument("request must carry at least one message");
        const std::string& first = request.messages.front().role;
        if (first != "system" && first != "user")
            throw std::invalid_argument("first message role must be system or user");
        const bool cacheable =
            config_.cache_dir && (request.temperature == 0.0 || request.seed.has_value());
        std::string key;
        if (cacheable) {
            key = cache_key(config_, request);
            if (auto hit = cache_read(key)) return *hit;
        }
        Completion result = complete_uncached(request);
        if (cacheable) cache_write(key, result);
        return result;
    }

    // complete() with the logprob guarantee: the result's token_logprobs is
    // always populated (possibly empty for a zero-token completion).
    Completion complete_with_logprobs(ChatRequest request) {
        request.want_logprobs = true;
        Completion c = complete(request);
        if (!c.token_logprobs)
            throw LogprobsUnsupported("endpoint returned no logprobs");
        return c;
    }

private:
    class InFlightGuard {
    public:
        explicit InFlightGuard(LlmClient& client) : client_(client) {
            std::unique_lock lock(client_.mu_);
            client_.cv_.wait(lock, [&] { return client_.in_flight_ < client_.config_.max_in_flight; });
            ++client_.in_flight_;
        }
        ~InFlightGuard() {
            {
                std::lock_guard lock(client_.mu_);
                --client_.in_flight_;
            }
            client_.cv_.notify_one();
        }

    private:
        LlmClient& client_;
    };

    Completion complete_uncached(const ChatRequest& request) {
        auto [host, prefix] = client_detail::split_base_url(config_.base_url);
        json body;
        body["model"] = request.model;
        body["messages"] = json::array();
        for (const auto& m : request.messages)
            body["messages"].push_back({{"role", m.role}, {"content", m.content}});
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_tokens;
        if (request.want_logprobs) body["logprobs"] = true;
        if (request.seed) body["seed"] = *request.seed;
        const std::string payload = body.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= config_.retry_budget; ++attempt) {
            if (attempt > 0) backoff_sleep(attempt - 1);
            httplib::Client cli(host);
            cli.set_connection_timeout(static_cast<int>(config_.timeout.count()), 0);
            cli.set_read_timeout(static_cast<int>(config_.timeout.count()), 0);
            httplib::Headers headers;
            if (!config_.api_key.empty())
                headers.emplace("Authorization", "Bearer " + config_.api_key);

            httplib::Result res = [&] {
                InFlightGuard guard(*this);
                return cli.Post(prefix + "/chat/completions", headers, payload,
                                "application/json");
            }();

            if (!res) {
                last_error = "transport: " + httplib::to_string(res.error());
                continue;  // connection failures and timeouts are transient
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status >= 400) throw PermanentRejection(res->status, res->body);
            return parse_completion(res->body, request.want_logprobs);
        }
        throw TransientExhausted("retry budget exhausted after " +
                                 std::to_string(config_.retry_budget + 1) + " attempts (" +
                                 last_error + ")");
    }

    static Completion parse_completion(const std::string& body, bool want_logprobs) {
        json j = json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
            j["choices"].empty()) {
            throw ProtocolError("malformed completion body");
        }
        const json& choice = j["choices"][0];
        Completion c;
        try {
            c.text = choice.at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw ProtocolError("completion without message content");
        }
        std::string reason = choice.value("finish_reason", "stop");
        c.finish_reason = reason == "length" ? FinishReason::length
                          : reason == "error" ? FinishReason::error
                                              : FinishReason::stop;
        if (want_logprobs && choice.contains("logprobs") && choice["logprobs"].is_object() &&
            choice["logprobs"].contains("content")) {
            std::vector<TokenLogprob> probs;
            for (const auto& t : choice["logprobs"]["content"]) {
                if (!t.contains("token") || !t.contains("logprob"))
                    throw ProtocolError("malformed logprob entry");
                double lp = t["logprob"].get<double>();
                probs.push_back({t["token"].get<std::string>(), std::min(lp, 0.0)});
            }
            c.token_logprobs = std::move(probs);
        }
        return c;
    }

    void backoff_sleep(int completed_attempt) {
        double factor = static_cast<double>(1u << std::min(completed_attempt, 16));
        double base_ms = static_cast<double>(config_.backoff_base.count()) * factor;
        double jitter;
        {
            std::lock_guard lock(mu_);
            std::uniform_real_distribution<double> dist(0.75, 1.25);
            jitter = dist(rng_);
        }
        double capped = std::min(base_ms * jitter, static_cast<double>(config_.backoff_cap.count()));
        std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(capped)));
    }

    std::optional<Completion> cache_read(const std::string& key) {
        auto path = *config_.cache_dir / (key + ".json");
        std::ifstream in(path);
        if (!in) return std::nullopt;
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        json j = json::parse(content, nullptr, false);
        if (j.is_discarded()) return std::nullopt;  // corrupt entry = miss
        return client_detail::completion_from_json(j);
    }

    void cache_write(const std::string& key, const Completion& completion) {
        auto path = *config_.cache_dir / (key + ".json");
        auto tmp = *config_.cache_dir / (key + ".tmp");
        {
            std::ofstream out(tmp);
            out << client_detail::completion_to_json(completion).dump();
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);  // atomic publish; loser overwrites same bytes
    }

    ClientConfig config_;
    std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_ = 0;
    std::mt19937 rng_{std::random_device{}()};
};

}  // namespace eit
