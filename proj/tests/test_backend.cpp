#include <doctest.h>

#define SIMGYM_ENABLE_HTTP_BACKEND

#include <atomic>
#include <thread>

#include "simgym/agent.hpp"
#include "simgym/backend.hpp"

using namespace simgym;

namespace {

// Backend whose replies are scripted per call, including thrown errors.
class FlakyBackend : public JsonBackend {
public:
    struct Step {
        bool throw_rate_limited = false;
        std::string reply;
    };
    explicit FlakyBackend(std::vector<Step> steps) : steps_(std::move(steps)) {}
    std::string name() const override { return "flaky"; }
    std::string complete_raw(const BackendRequest&) override {
        const Step& s = steps_.at(index_++);
        if (s.throw_rate_limited) throw Error(ErrorCode::RateLimited, "429");
        return s.reply;
    }
    std::size_t calls() const { return index_; }

private:
    std::vector<Step> steps_;
    std::size_t index_ = 0;
};

}  // namespace

TEST_CASE("validate_schema checks types, required fields, enums, and bounds") {
    const nlohmann::json schema = {
        {"type", "object"},
        {"required", {"name", "count"}},
        {"properties",
         {{"name", {{"type", "string"}}},
          {"count", {{"type", "integer"}, {"minimum", 0}}},
          {"mode", {{"type", "string"}, {"enum", {"a", "b"}}}},
          {"tags", {{"type", "array"}, {"items", {{"type", "string"}}}, {"maxItems", 2}}}}}};
    CHECK(!validate_schema({{"name", "x"}, {"count", 1}}, schema));
    CHECK(validate_schema({{"name", "x"}}, schema));                        // missing count
    CHECK(validate_schema({{"name", 5}, {"count", 1}}, schema));            // wrong type
    CHECK(validate_schema({{"name", "x"}, {"count", -2}}, schema));         // below minimum
    CHECK(validate_schema({{"name", "x"}, {"count", 1}, {"mode", "c"}}, schema));  // enum
    CHECK(validate_schema({{"name", "x"}, {"count", 1}, {"tags", {"a", "b", "c"}}}, schema));
    CHECK(validate_schema(nlohmann::json::array(), schema));
}

TEST_CASE("complete_json returns validated JSON from the scripted backend") {
    ScriptedJsonBackend backend;
    BackendRequest request;
    request.schema = decision_schema();
    request.user_text = "anything";
    const auto result = complete_json(backend, request);
    CHECK(result.retries_used == 0);
    CHECK(result.value.at("terminate").is_boolean());
    CHECK(!validate_schema(result.value, decision_schema()));
}

TEST_CASE("complete_json retries after a rate limit and succeeds") {
    FlakyBackend backend({{true, ""}, {false, R"({"ok": true})"}});
    BackendRequest request;
    request.schema = {{"type", "object"}, {"required", {"ok"}}};
    const auto result = complete_json(backend, request);
    CHECK(result.value.at("ok") == true);
    CHECK(backend.calls() == 2);
}

TEST_CASE("complete_json fails with SchemaFailure after retries of prose") {
    QueueJsonBackend backend({"prose", "more prose", "still prose"}, 3);
    BackendRequest request;
    request.schema = {{"type", "object"}};
    try {
        complete_json(backend, request);
        FAIL("expected SchemaFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SchemaFailure);
        CHECK(backend.calls() == 3);
    }
}

TEST_CASE("complete_json appends the validation error to retry prompts") {
    // First reply misses the required field; the second must see the error text.
    class EchoBackend : public JsonBackend {
    public:
        std::string name() const override { return "echo"; }
        std::string complete_raw(const BackendRequest& request) override {
            prompts.push_back(request.user_text);
            return calls++ == 0 ? R"({})" : R"({"ok": true})";
        }
        int calls = 0;
        std::vector<std::string> prompts;
    };
    EchoBackend backend;
    BackendRequest request;
    request.user_text = "base prompt";
    request.schema = {{"type", "object"}, {"required", {"ok"}}};
    const auto result = complete_json(backend, request);
    CHECK(result.retries_used == 1);
    REQUIRE(backend.prompts.size() == 2);
    CHECK(backend.prompts[0] == "base prompt");
    CHECK(backend.prompts[1].find("rejected") != std::string::npos);
    CHECK(backend.prompts[1].find("missing required field ok") != std::string::npos);
}

TEST_CASE("complete_json requires a schema") {
    ScriptedJsonBackend backend;
    BackendRequest request;  // empty schema
    CHECK_THROWS_AS(complete_json(backend, request), Error);
}

TEST_CASE("scripted analyst derives categories from the embedded summary") {
    ScriptedJsonBackend backend;
    BackendRequest request;
    request.schema = {{"type", "object"}, {"required", {"categories", "products"}}};
    request.user_text =
        "Analyze this.\n```json\n"
        "{\"browsed\": [{\"title\": \"A\", \"category\": \"Shoes\"},"
        " {\"title\": \"B\", \"category\": \"hats\"}],"
        " \"purchased\": [{\"title\": \"A\", \"category\": \"Shoes\"}]}\n```\n";
    const auto result = complete_json(backend, request);
    const auto cats = result.value.at("categories").get<std::vector<std::string>>();
    REQUIRE(cats.size() == 2);
    CHECK(cats[0] == "shoes");  // purchase-weighted, lowercased
    CHECK(cats[1] == "hats");
}

TEST_CASE("scripted backend is safe for concurrent use") {
    ScriptedJsonBackend backend;
    BackendRequest request;
    request.schema = decision_schema();
    std::atomic<int> failures{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&]() {
            for (int i = 0; i < 50; ++i) {
                const auto result = complete_json(backend, request);
                if (validate_schema(result.value, decision_schema())) ++failures;
            }
        });
    }
    for (auto& t : threads) t.join();
    CHECK(failures == 0);
}

TEST_CASE("http backend retries a 429 and succeeds against a local server") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (hits.fetch_add(1) == 0) {
            res.status = 429;
            res.set_content("slow down", "text/plain");
            return;
        }
        const auto body = nlohmann::json::parse(req.body);
        CHECK(body.at("messages").size() == 2);
        const nlohmann::json reply = {
            {"choices",
             {{{"message", {{"role", "assistant"}, {"content", R"({"answer": 42})"}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&]() { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port);
    HttpJsonBackend backend(config);
    BackendRequest request;
    request.user_text = "question";
    request.schema = {{"type", "object"}, {"required", {"answer"}}};
    const auto result = complete_json(backend, request);
    CHECK(result.value.at("answer") == 42);
    CHECK(result.retries_used == 1);
    CHECK(hits == 2);

    server.stop();
    server_thread.join();
}

TEST_CASE("http backend surfaces schema failure after persistent prose") {
    httplib::Server server;
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        const nlohmann::json reply = {
            {"choices",
             {{{"message", {{"role", "assistant"}, {"content", "just words, no JSON"}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&]() { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port);
    config.retries = 3;
    HttpJsonBackend backend(config);
    BackendRequest request;
    request.schema = {{"type", "object"}};
    try {
        complete_json(backend, request);
        FAIL("expected SchemaFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SchemaFailure);
    }

    server.stop();
    server_thread.join();
}
