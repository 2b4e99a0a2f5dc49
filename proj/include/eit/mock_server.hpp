#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "eit/errors.hpp"
#include "eit/llm_client.hpp"

namespace eit {

// Deterministic stand-in for a chat-completions endpoint, driven by a fixture
// file. Requests are matched by fixture_key(messages, temperature, seed); the
// response for a given request is always byte-identical.
//
// Fixture file:
//   {
//     "policy": "404" | "default",          // what to do with unmatched keys
//     "default": { <response fields> },     // used when policy == "default"
//     "entries": { "<key hex>": { <response fields> } }
//   }
//
// Response fields (all optional):
//   "text":               canned message content
//   "finish_reason":      "stop" (default) | "length" | "error"
//   "status":             HTTP status, default 200
//   "raw_body":           byte-exact body override (protocol-error tests)
//   "corrupt_answer":     true -> serve text with final-answer digits replaced
//   "token_logprobs":     [{"token": t, "logprob": lp}, ...]
//   "logprob_per_token":  score mode; emits one logprob per whitespace token
//                         of the last request message (echoed as content
//                         unless "text" is given)
//   "delay_ms":           hold the response (concurrency tests)
class MockServer {
public:
    MockServer(std::filesystem::path fixtures, int port) : requested_port_(port) {
        std::ifstream in(fixtures);
        if (!in) throw IoError("cannot open fixtures file " + fixtures.string());
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        fixtures_ = json::parse(content, nullptr, false);
        if (fixtures_.is_discarded())
            throw ParseError("malformed fixtures file " + fixtures.string(), 0);
        // no SO_REUSEPORT: a second server on the same port must fail to bind
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR,
                       reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        install_routes();
    }

    ~MockServer() { stop(); }

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    void start() {
        if (requested_port_ == 0) {
            port_ = server_.bind_to_any_port("127.0.0.1");
            if (port_ <= 0) throw BindError("cannot bind mock server to an ephemeral port");
        } else {
            if (!server_.bind_to_port("127.0.0.1", requested_port_))
                throw BindError("cannot bind mock server to port " +
                                std::to_string(requested_port_));
            port_ = requested_port_;
        }
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    int port() const { return port_; }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    long request_count() const { return total_requests_.load(); }
    long max_concurrent() const { return max_concurrent_.load(); }

private:
    void install_routes() {
        auto handler = [this](const httplib::Request& req, httplib::Response& res) {
            handle_chat(req, res);
        };
        server_.Post("/chat/completions", handler);
        server_.Post("/v1/chat/completions", handler);

        server_.Get("/__mock/stats", [this](const httplib::Request&, httplib::Response& res) {
            json by_key;
            {
                std::lock_guard lock(mu_);
                for (const auto& [k, v] : key_counts_) by_key[k] = v;
            }
            json stats{{"requests", total_requests_.load()},
                       {"matched", matched_.load()},
                       {"unmatched", unmatched_.load()},
                       {"max_concurrent", max_concurrent_.load()},
                       {"by_key", by_key}};
            res.set_content(stats.dump(), "application/json");
        });

        server_.Post("/__mock/reset", [this](const httplib::Request&, httplib::Response& res) {
            total_requests_ = 0;
            matched_ = 0;
            unmatched_ = 0;
            max_concurrent_ = 0;
            concurrent_ = 0;
            {
                std::lock_guard lock(mu_);
                key_counts_.clear();
            }
            res.set_content("{}", "application/json");
        });
    }

    void handle_chat(const httplib::Request& req, httplib::Response& res) {
        long now = ++concurrent_;
        long prev = max_concurrent_.load();
        while (now > prev && !max_concurrent_.compare_exchange_weak(prev, now)) {
        }
        ++total_requests_;

        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.contains("messages")) {
            --concurrent_;
            res.status = 400;
            res.set_content(R"({"error":{"message":"bad request body"}})", "application/json");
            return;
        }
        std::vector<Message> messages;
        for (const auto& m : body["messages"])
            messages.push_back({m.value("role", "user"), m.value("content", "")});
        double temperature = body.value("temperature", 0.0);
        std::optional<long> seed;
        if (body.contains("seed") && body["seed"].is_number_integer())
            seed = body["seed"].get<long>();

        const std::string key = fixture_key(messages, temperature, seed);
        {
            std::lock_guard lock(mu_);
            ++key_counts_[key];
        }

        const json* entry = nullptr;
        if (fixtures_.contains("entries") && fixtures_["entries"].contains(key)) {
            entry = &fixtures_["entries"][key];
            ++matched_;
        } else if (fixtures_.value("policy", "404") == "default" &&
                   fixtures_.contains("default")) {
            entry = &fixtures_["default"];
            ++matched_;
        } else {
            ++unmatched_;
        }

        if (!entry) {
            --concurrent_;
            res.status = 404;
            res.set_content(json{{"error", {{"message", "no fixture for key " + key}}}}.dump(),
                            "application/json");
            return;
        }
        respond(*entry, messages, res);
        --concurrent_;
    }

    void respond(const json& entry, const std::vector<Message>& messages,
                 httplib::Response& res) {
        if (long delay = entry.value("delay_ms", 0L); delay > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));

        if (entry.contains("raw_body")) {
            res.status = entry.value("status", 200);
            res.set_content(entry["raw_body"].get<std::string>(), "application/json");
            return;
        }
        if (int status = entry.value("status", 200); status != 200) {
            res.status = status;
            res.set_content(R"({"error":{"message":"injected failure"}})", "application/json");
            return;
        }

        std::string text = entry.value("text", "");
        json logprobs;
        bool have_logprobs = false;
        if (entry.contains("logprob_per_token")) {
            const std::string& scored =
                entry.contains("text") ? text : (messages.empty() ? "" : messages.back().content);
            double lp = entry["logprob_per_token"].get<double>();
            json arr = json::array();
            std::string tok;
            auto flush = [&] {
                if (!tok.empty()) {
                    arr.push_back({{"token", tok}, {"logprob", lp}});
                    tok.clear();
                }
            };
            for (char c : scored) {
                if (std::isspace(static_cast<unsigned char>(c))) flush();
                else tok.push_back(c);
            }
            flush();
            if (!entry.contains("text")) text = scored;
            logprobs = json{{"content", arr}};
            have_logprobs = true;
        } else if (entry.contains("token_logprobs")) {
            json arr = json::array();
            for (const auto& t : entry["token_logprobs"])
                arr.push_back({{"token", t.value("token", "")},
                               {"logprob", t.value("logprob", 0.0)}});
            logprobs = json{{"content", arr}};
            have_logprobs = true;
        }

        if (entry.value("corrupt_answer", false)) text = corrupt_final_answer(text);

        json choice;
        choice["message"] = {{"role", "assistant"}, {"content", text}};
        choice["finish_reason"] = entry.value("finish_reason", "stop");
        if (have_logprobs) choice["logprobs"] = logprobs;
        json body{{"choices", json::array({choice})}};
        res.set_content(body.dump(), "application/json");
    }

    // Shifts every digit of the final answer by one, which always yields a
    // different number of the same width.
    static std::string corrupt_final_answer(std::string text) {
        auto shift_digits = [](std::string& s, std::size_t begin, std::size_t end) {
            bool any = false;
            for (std::size_t i = begin; i < end && i < s.size(); ++i) {
                if (std::isdigit(static_cast<unsigned char>(s[i]))) {
                    s[i] = static_cast<char>('0' + (s[i] - '0' + 1) % 10);
                    any = true;
                }
            }
            return any;
        };
        std::size_t marker = text.rfind("####");
        if (marker != std::string::npos && shift_digits(text, marker, text.size())) return text;
        std::size_t boxed = text.rfind("\\boxed{");
        if (boxed != std::string::npos && shift_digits(text, boxed, text.size())) return text;
        // fall back to the last digit run anywhere
        std::size_t end = text.find_last_of("0123456789");
        if (end == std::string::npos) return text + " 0";
        std::size_t begin = end;
        while (begin > 0 && std::isdigit(static_cast<unsigned char>(text[begin - 1]))) --begin;
        shift_digits(text, begin, end + 1);
        return text;
    }

    httplib::Server server_;
    std::thread thread_;
    json fixtures_;
    int requested_port_ = 0;
    int port_ = 0;

    std::atomic<long> total_requests_{0};
    std::atomic<long> matched_{0};
    std::atomic<long> unmatched_{0};
    std::atomic<long> concurrent_{0};
    std::atomic<long> max_concurrent_{0};
    std::mutex mu_;
    std::map<std::string, long> key_counts_;
};

// Loads fixtures and starts serving on `port` (0 picks a free port).
inline std::unique_ptr<MockServer> serve_mock(const std::filesystem::path& fixtures, int port) {
    auto server = std::make_unique<MockServer>(fixtures, port);
    server->start();
    return server;
}

}  // namespace eit
