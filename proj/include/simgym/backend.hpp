#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "simgym/common.hpp"

namespace simgym {

struct BackendRequest {
    std::string system_text;
    std::string user_text;
    nlohmann::json schema;  // JSON-schema document the reply must satisfy
    double temperature = 0.0;
    std::optional<std::int64_t> seed;
};

// Validates a value against the schema subset we use: type, properties,
// required, enum, items, minItems/maxItems, minimum/maximum. Returns the first
// violation as "path: message", or nullopt when the value conforms.
inline std::optional<std::string> validate_schema(const nlohmann::json& value,
                                                  const nlohmann::json& schema,
                                                  const std::string& path = "$") {
    if (!schema.is_object()) return std::nullopt;
    auto type_it = schema.find("type");
    if (type_it != schema.end()) {
        const std::string type = type_it->get<std::string>();
        const bool ok = (type == "object" && value.is_object()) ||
                        (type == "array" && value.is_array()) ||
                        (type == "string" && value.is_string()) ||
                        (type == "boolean" && value.is_boolean()) ||
                        (type == "integer" && value.is_number_integer()) ||
                        (type == "number" && value.is_number()) ||
                        (type == "null" && value.is_null());
        if (!ok) return path + ": expected " + type;
    }
    if (auto en = schema.find("enum"); en != schema.end()) {
        bool hit = false;
        for (const auto& candidate : *en) hit = hit || candidate == value;
        if (!hit) return path + ": value not in enum";
    }
    if (value.is_object()) {
        if (auto req = schema.find("required"); req != schema.end()) {
            for (const auto& key : *req) {
                if (!value.contains(key.get<std::string>()))
                    return path + ": missing required field " + key.get<std::string>();
            }
        }
        if (auto props = schema.find("properties"); props != schema.end()) {
            for (auto it = props->begin(); it != props->end(); ++it) {
                if (!value.contains(it.key())) continue;
                if (auto err = validate_schema(value.at(it.key()), it.value(), path + "." + it.key()))
                    return err;
            }
        }
    }
    if (value.is_array()) {
        if (auto min_items = schema.find("minItems");
            min_items != schema.end() && value.size() < min_items->get<std::size_t>())
            return path + ": fewer than " + std::to_string(min_items->get<std::size_t>()) + " items";
        if (auto max_items = schema.find("maxItems");
            max_items != schema.end() && value.size() > max_items->get<std::size_t>())
            return path + ": more than " + std::to_string(max_items->get<std::size_t>()) + " items";
        if (auto items = schema.find("items"); items != schema.end()) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                if (auto err =
                        validate_schema(value[i], *items, path + "[" + std::to_string(i) + "]"))
                    return err;
            }
        }
    }
    if (value.is_number()) {
        if (auto mn = schema.find("minimum"); mn != schema.end() && value.get<double>() < mn->get<double>())
            return path + ": below minimum";
        if (auto mx = schema.find("maximum"); mx != schema.end() && value.get<double>() > mx->get<double>())
            return path + ": above maximum";
    }
    return std::nullopt;
}

// A backend produces raw text for a request; complete_json handles parsing,
// schema validation, and retry-with-error-context on top.
class JsonBackend {
public:
    virtual ~JsonBackend() = default;
    virtual std::string name() const = 0;
    virtual std::string complete_raw(const BackendRequest& request) = 0;
    virtual int retries() const { return 3; }
};

struct CompletionResult {
    nlohmann::json value;
    int retries_used = 0;
};

inline CompletionResult complete_json(JsonBackend& backend, const BackendRequest& request) {
    if (request.schema.empty()) throw Error(ErrorCode::InvalidArgument, "request schema is empty");
    const int attempts = std::max(1, backend.retries());
    BackendRequest attempt = request;
    std::string last_error;
    for (int i = 0; i < attempts; ++i) {
        if (i > 0) {
            attempt.user_text = request.user_text +
                                "\n\nYour previous reply was rejected: " + last_error +
                                "\nReply again with JSON matching the schema exactly.";
        }
        std::string raw;
        try {
            raw = backend.complete_raw(attempt);
        } catch (const Error& ex) {
            if (ex.code() == ErrorCode::RateLimited && i + 1 < attempts) {
                last_error = ex.what();
                std::this_thread::sleep_for(std::chrono::milliseconds(100 * (i + 1)));
                continue;
            }
            throw;
        }
        nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
        if (value.is_discarded()) {
            last_error = "reply was not valid JSON";
            continue;
        }
        if (auto err = validate_schema(value, request.schema)) {
            last_error = *err;
            continue;
        }
        return CompletionResult{std::move(value), i};
    }
    throw Error(ErrorCode::SchemaFailure,
                "no schema-conformant reply after " + std::to_string(attempts) +
                    " attempts; last error: " + last_error);
}

// Deterministic stand-in for an LLM. Preference-extraction prompts embed the
// cluster summary as a fenced JSON block; the scripted analyst reads it back
// and answers from the data. Decision-schema prompts get a minimal valid
// termination reply; real scripted agents use the policy in
// scripted_policy.hpp instead of round-tripping through prompts.
class ScriptedJsonBackend : public JsonBackend {
public:
    std::string name() const override { return "scripted"; }

    std::string complete_raw(const BackendRequest& request) override {
        const bool wants_decision =
            request.schema.contains("properties") && request.schema["properties"].contains("terminate");
        if (wants_decision) {
            return nlohmann::json{{"reasoning", "Scripted backend reached via prompt interface."},
                                  {"terminate", true},
                                  {"termination_reason", "NoA2CDecision"}}
                .dump();
        }
        const auto block = extract_json_block(request.user_text);
        if (block.is_object() && block.contains("browsed")) return analyst_reply(block).dump();
        // Persona refinement and anything else: echo a conservative reply.
        return nlohmann::json{{"reasoning", "Scripted refinement; deterministic scores retained."},
                              {"confidence", 0.5}}
            .dump();
    }

private:
    static nlohmann::json extract_json_block(const std::string& text) {
        const std::size_t open = text.find("```json");
        if (open == std::string::npos) return nlohmann::json();
        const std::size_t start = text.find('\n', open);
        const std::size_t close = text.find("```", open + 7);
        if (start == std::string::npos || close == std::string::npos || start > close)
            return nlohmann::json();
        return nlohmann::json::parse(text.substr(start + 1, close - start - 1), nullptr, false);
    }

    // Top categories by frequency across browsed+purchased, most-browsed titles.
    static nlohmann::json analyst_reply(const nlohmann::json& summary) {
        std::map<std::string, int> category_counts;
        std::map<std::string, int> title_counts;
        std::vector<std::string> category_order;
        std::vector<std::string> title_order;
        auto scan = [&](const char* key, int weight) {
            if (!summary.contains(key)) return;
            for (const auto& item : summary[key]) {
                const std::string cat = lowercase(item.value("category", ""));
                const std::string title = item.value("title", "");
                if (!cat.empty()) {
                    if (category_counts.emplace(cat, 0).second) category_order.push_back(cat);
                    category_counts[cat] += weight;
                }
                if (!title.empty()) {
                    if (title_counts.emplace(title, 0).second) title_order.push_back(title);
                    title_counts[title] += weight;
                }
            }
        };
        scan("browsed", 1);
        scan("purchased", 3);  // purchases weigh more, mirroring revealed preference

        auto top = [](const std::map<std::string, int>& counts,
                      const std::vector<std::string>& order, std::size_t limit) {
            std::vector<std::string> keys = order;
            std::stable_sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
                return counts.at(a) > counts.at(b);
            });
            if (keys.size() > limit) keys.resize(limit);
            return keys;
        };
        return nlohmann::json{
            {"categories", top(category_counts, category_order, 10)},
            {"products", top(title_counts, title_order, 10)},
            {"reasoning", "Ranked by interaction frequency with purchases weighted over views."}};
    }
};

// Canned-reply backend for tests.
class QueueJsonBackend : public JsonBackend {
public:
    explicit QueueJsonBackend(std::vector<std::string> replies, int retries = 3)
        : replies_(std::move(replies)), retries_(retries) {}

    std::string name() const override { return "queue"; }
    int retries() const override { return retries_; }

    std::string complete_raw(const BackendRequest&) override {
        if (index_ >= replies_.size()) throw Error(ErrorCode::Transport, "queue exhausted");
        return replies_[index_++];
    }

    std::size_t calls() const { return index_; }

private:
    std::vector<std::string> replies_;
    std::size_t index_ = 0;
    int retries_;
};

struct HttpBackendConfig {
    std::string base_url = "http://localhost:8080";
    std::string model = "default";
    std::string api_key_env = "SIMGYM_API_KEY";
    int max_inflight = 4;
    double timeout_s = 30.0;
    int retries = 3;
    double temperature = 0.7;
};

}  // namespace simgym

#ifdef SIMGYM_ENABLE_HTTP_BACKEND
#include <httplib.h>

namespace simgym {

// Chat-completion style HTTP backend. Request/response shapes follow the
// common convention: POST {base_url}/v1/chat/completions with messages and
// temperature; the reply text lives at choices[0].message.content.
class HttpJsonBackend : public JsonBackend {
public:
    explicit HttpJsonBackend(HttpBackendConfig config) : config_(std::move(config)) {}

    std::string name() const override { return "http"; }
    int retries() const override { return config_.retries; }

    std::string complete_raw(const BackendRequest& request) override {
        InflightGuard guard(*this);

        nlohmann::json body = {
            {"model", config_.model},
            {"temperature", request.temperature > 0 ? request.temperature : config_.temperature},
            {"messages",
             {{{"role", "system"}, {"content", request.system_text}},
              {{"role", "user"}, {"content", request.user_text}}}},
            {"response_format", {{"type", "json_object"}}},
        };
        if (request.seed) body["seed"] = *request.seed;

        httplib::Client client(config_.base_url);
        client.set_read_timeout(std::chrono::milliseconds(
            static_cast<int>(config_.timeout_s * 1000)));
        httplib::Headers headers;
        if (const char* key = std::getenv(config_.api_key_env.c_str()))
            headers.emplace("Authorization", std::string("Bearer ") + key);

        auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
        if (!res) throw Error(ErrorCode::Transport, "no response from " + config_.base_url);
        if (res->status == 429) throw Error(ErrorCode::RateLimited, "429 from backend");
        if (res->status < 200 || res->status >= 300)
            throw Error(ErrorCode::Transport, "HTTP " + std::to_string(res->status));
        const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty())
            throw Error(ErrorCode::Transport, "malformed completion envelope");
        return parsed["choices"][0]["message"]["content"].get<std::string>();
    }

private:
    struct InflightGuard {
        explicit InflightGuard(HttpJsonBackend& b) : backend(b) {
            std::unique_lock<std::mutex> lock(backend.mutex_);
            backend.cv_.wait(lock, [&] { return backend.inflight_ < backend.config_.max_inflight; });
            ++backend.inflight_;
        }
        ~InflightGuard() {
            {
                std::lock_guard<std::mutex> lock(backend.mutex_);
                --backend.inflight_;
            }
            backend.cv_.notify_one();
        }
        HttpJsonBackend& backend;
    };

    HttpBackendConfig config_;
    std::mutex mutex_;
    std::condition_variable cv_;
    int inflight_ = 0;
};

}  // namespace simgym
#endif  // SIMGYM_ENABLE_HTTP_BACKEND
