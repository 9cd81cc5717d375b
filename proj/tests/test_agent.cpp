#include <doctest.h>

#include "simgym/agent.hpp"
#include "simgym/scripted_policy.hpp"
#include "support/fixtures.hpp"

using namespace simgym;

namespace {

// Always clicks the first link on the page.
FunctionDecisionMaker first_link_clicker() {
    return FunctionDecisionMaker([](const AgentProfile&, const Observation& obs,
                                    const std::vector<MemoryEntry>&, std::uint64_t) {
        std::vector<const AccessibilityNode*> links;
        collect_nodes(obs.root, AxRole::Link, links);
        REQUIRE(!links.empty());
        return AgentDecision::act("clicking the first link", Action::click(links[0]->ref));
    });
}

}  // namespace

TEST_CASE("build_step_prompt renders the five sections in order") {
    const auto profile = fixtures::profile(true, "sneakers", PriceTier::Premium);
    Observation obs{"/", AccessibilityNode(AxRole::Region, "page")};
    const std::string prompt = build_step_prompt(profile, {}, obs);
    const auto goal = prompt.find("## Shopping Goal");
    const auto persona = prompt.find("## Buyer Persona");
    const auto memory = prompt.find("## Session Memory");
    const auto page = prompt.find("## Current Page");
    const auto constraints = prompt.find("## Behavioral Constraints");
    REQUIRE(goal != std::string::npos);
    CHECK(goal < persona);
    CHECK(persona < memory);
    CHECK(memory < page);
    CHECK(page < constraints);
    CHECK(prompt.find("(no prior steps)") != std::string::npos);
    CHECK(prompt.find("URL: /") != std::string::npos);
}

TEST_CASE("build_step_prompt includes every memory entry in step order") {
    const auto profile = fixtures::profile(false, "gear");
    std::vector<MemoryEntry> memory;
    for (std::size_t i = 0; i < 2; ++i) {
        MemoryEntry e;
        e.step = i;
        e.reasoning = "thought " + std::to_string(i);
        e.action = Action::scroll("down");
        e.outcome = "scrolled";
        memory.push_back(e);
    }
    Observation obs{"/", AccessibilityNode(AxRole::Region, "page")};
    const std::string prompt = build_step_prompt(profile, memory, obs);
    const auto first = prompt.find("thought 0");
    const auto second = prompt.find("thought 1");
    REQUIRE(first != std::string::npos);
    REQUIRE(second != std::string::npos);
    CHECK(first < second);
    CHECK(prompt.find("(no prior steps)") == std::string::npos);
}

TEST_CASE("premium personas surface the premium block in the prompt") {
    const auto profile = fixtures::profile(true, "figurines", PriceTier::Premium);
    Observation obs{"/", AccessibilityNode(AxRole::Region, "page")};
    const std::string prompt = build_step_prompt(profile, {}, obs);
    CHECK(prompt.find("luxury materials") != std::string::npos);
    CHECK(prompt.find("refined craftsmanship") != std::string::npos);
}

TEST_CASE("decide accepts a valid terminate response") {
    QueueJsonBackend backend({R"({"reasoning":"done","terminate":true,"termination_reason":"GoalReached"})"});
    const auto d = decide(backend, "prompt", decision_schema(), 3);
    CHECK(d.terminate);
    CHECK(d.termination_reason == TerminationReason::GoalReached);
    CHECK(d.retries_used == 0);
}

TEST_CASE("decide retries once on malformed output and logs the retry count") {
    QueueJsonBackend backend(
        {"not json at all",
         R"({"reasoning":"go","terminate":false,"action":{"type":"click","ref":"e1"}})"});
    const auto d = decide(backend, "prompt", decision_schema(), 3);
    CHECK(!d.terminate);
    REQUIRE(d.action);
    CHECK(d.retries_used == 1);
    CHECK(backend.calls() == 2);
}

TEST_CASE("decide enforces the terminate/action shape rules") {
    // terminate=true with an action is invalid; the retry fixes it.
    QueueJsonBackend backend(
        {R"({"reasoning":"x","terminate":true,"termination_reason":"Leaving","action":{"type":"back"}})",
         R"({"reasoning":"x","terminate":true,"termination_reason":"Leaving"})"});
    const auto d = decide(backend, "prompt", decision_schema(), 3);
    CHECK(d.retries_used == 1);
    // terminate=false without an action never becomes valid.
    QueueJsonBackend bad({R"({"reasoning":"x","terminate":false})",
                          R"({"reasoning":"x","terminate":false})",
                          R"({"reasoning":"x","terminate":false})"});
    CHECK_THROWS_AS(decide(bad, "prompt", decision_schema(), 3), Error);
}

TEST_CASE("decide exhausts retries into DecisionSchemaFailure") {
    QueueJsonBackend backend({"a", "b", "c"});
    try {
        decide(backend, "prompt", decision_schema(), 3);
        FAIL("expected DecisionSchemaFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DecisionSchemaFailure);
    }
}

TEST_CASE("detect_loop fires only on threshold identical consecutive actions") {
    auto entry = [](std::optional<Action> a) {
        MemoryEntry e;
        e.action = std::move(a);
        return e;
    };
    std::vector<MemoryEntry> memory;
    memory.push_back(entry(Action::click("e5")));
    memory.push_back(entry(Action::click("e5")));
    CHECK(!detect_loop(memory, 3));  // only two
    memory.push_back(entry(Action::click("e5")));
    CHECK(detect_loop(memory, 3));
    // A different action in between breaks the run.
    memory.clear();
    memory.push_back(entry(Action::click("e5")));
    memory.push_back(entry(Action::click("e6")));
    memory.push_back(entry(Action::click("e5")));
    CHECK(!detect_loop(memory, 3));
    CHECK_THROWS_AS(detect_loop(memory, 1), Error);
}

TEST_CASE("detect_loop distinguishes action payloads") {
    auto entry = [](Action a) {
        MemoryEntry e;
        e.action = std::move(a);
        return e;
    };
    std::vector<MemoryEntry> memory = {entry(Action::type_text("e1", "a")),
                                       entry(Action::type_text("e1", "b"))};
    CHECK(!detect_loop(memory, 2));
    memory = {entry(Action::type_text("e1", "a")), entry(Action::type_text("e1", "a"))};
    CHECK(detect_loop(memory, 2));
}

TEST_CASE("run_session loop guard triggers at exactly the threshold") {
    // A single-collection storefront where the first link is Home: clicking it
    // from home renders the identical page, so the clicker loops in place.
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(true, "sneakers");
    auto clicker = first_link_clicker();
    Limits limits;
    limits.loop_threshold = 3;
    limits.max_steps = 30;
    const auto log = run_session(profile, sf, "control", clicker, limits, 1);
    CHECK(log.termination.kind == TerminationKind::LoopGuard);
    CHECK(log.entries.size() == 3);  // exactly loop_threshold entries
    for (const auto& e : log.entries) CHECK(e.action == Action::click("e1"));
}

TEST_CASE("loop guard outranks the step limit when both trigger on one step") {
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(true, "sneakers");
    auto clicker = first_link_clicker();
    Limits limits;
    limits.loop_threshold = 3;
    limits.max_steps = 3;
    const auto log = run_session(profile, sf, "control", clicker, limits, 1);
    CHECK(log.entries.size() == 3);
    CHECK(log.termination.kind == TerminationKind::LoopGuard);
}

TEST_CASE("wall-time limit terminates a slow session") {
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(true, "sneakers");
    FunctionDecisionMaker slow([](const AgentProfile&, const Observation&,
                                  const std::vector<MemoryEntry>&, std::uint64_t) {
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        return AgentDecision::act("dawdling", Action::scroll("down"));
    });
    Limits limits;
    limits.max_wall_time_s = 0.01;
    const auto log = run_session(profile, sf, "control", slow, limits, 1);
    CHECK(log.termination.kind == TerminationKind::TimeLimit);
    CHECK(log.entries.size() == 1);
}

TEST_CASE("run_session max_steps=1 yields exactly one entry") {
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(true, "sneakers");
    auto clicker = first_link_clicker();
    Limits limits;
    limits.max_steps = 1;
    const auto log = run_session(profile, sf, "control", clicker, limits, 1);
    CHECK(log.entries.size() == 1);
    CHECK(log.steps == 1);
    CHECK(log.termination.kind == TerminationKind::StepLimit);
}

TEST_CASE("run_session records agent termination with its reason") {
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(false, "sneakers");
    FunctionDecisionMaker terminator([](const AgentProfile&, const Observation&,
                                        const std::vector<MemoryEntry>&, std::uint64_t) {
        return AgentDecision::stop("nothing to do", TerminationReason::NoA2CDecision);
    });
    Limits limits;
    limits.max_steps = 1;
    const auto log = run_session(profile, sf, "control", terminator, limits, 1);
    CHECK(log.entries.size() == 1);
    CHECK(log.termination.kind == TerminationKind::AgentTerminated);
    CHECK(log.termination.reason == TerminationReason::NoA2CDecision);
    CHECK(!log.a2c);
}

TEST_CASE("run_session turns decision failures into FatalError logs") {
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(true, "sneakers");
    QueueJsonBackend broken({"x", "y", "z"});
    LlmDecisionMaker maker(broken, 3);
    const auto log = run_session(profile, sf, "control", maker, Limits{}, 1);
    CHECK(log.termination.kind == TerminationKind::FatalError);
    REQUIRE(log.entries.size() == 1);
    CHECK(log.entries[0].error.has_value());
}

TEST_CASE("run_session memory is complete: every applied action appears once") {
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(true, "sneakers");
    auto policy = fixtures::deterministic_policy(sf);
    ScriptedDecisionMaker maker(policy);
    const auto log = run_session(profile, sf, "control", maker, Limits{}, 42);
    CHECK(log.steps == log.entries.size());
    for (std::size_t i = 0; i < log.entries.size(); ++i) {
        CHECK(log.entries[i].step == i);
        if (i + 1 < log.entries.size()) CHECK(log.entries[i].action.has_value());
        CHECK(!log.entries[i].outcome.empty());
    }
    CHECK(log.a2c == !log.final_cart.empty());
}

TEST_CASE("run_session is bit-for-bit reproducible with the scripted policy") {
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(true, "figurines", PriceTier::Premium);
    ScriptedDecisionMaker maker(ScriptedPolicyConfig::for_storefront(sf));
    const auto a = run_session(profile, sf, "treatment", maker, Limits{}, 777);
    const auto b = run_session(profile, sf, "treatment", maker, Limits{}, 777);
    CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
}

TEST_CASE("llm-backed run_session executes a full add-to-cart journey") {
    const auto sf = fixtures::storefront();
    const auto profile = fixtures::profile(true, "sneakers");
    // Scripted chat replies: open collection, open product, add, terminate.
    QueueJsonBackend backend({
        R"({"reasoning":"open sneakers","terminate":false,"action":{"type":"navigate","url":"/collection/c-sneakers"}})",
        R"({"reasoning":"open product","terminate":false,"action":{"type":"navigate","url":"/product/p1"}})",
        R"({"reasoning":"add it","terminate":false,"action":{"type":"click","ref":"e6"}})",
        R"({"reasoning":"done","terminate":true,"termination_reason":"GoalReached"})",
    });
    LlmDecisionMaker maker(backend, 3);
    const auto log = run_session(profile, sf, "control", maker, Limits{}, 9);
    CHECK(log.termination.kind == TerminationKind::AgentTerminated);
    CHECK(log.termination.reason == TerminationReason::GoalReached);
    CHECK(log.a2c);
    REQUIRE(log.entries.size() == 4);
    CHECK(log.entries[2].outcome.rfind("added_to_cart:p1", 0) == 0);
}

TEST_CASE("journey_stats on uniform goal-reached logs") {
    std::vector<SessionLog> logs(4, fixtures::log_with(TerminationKind::AgentTerminated,
                                                       TerminationReason::GoalReached, true, 5));
    const auto stats = journey_stats(logs);
    CHECK(stats.goal_reached_pct == doctest::Approx(100.0));
    CHECK(stats.timeout_pct == doctest::Approx(0.0));
    CHECK(stats.mean_steps == doctest::Approx(5.0));
    CHECK(stats.std_steps == doctest::Approx(0.0));
}

TEST_CASE("journey_stats counts step-limit timeouts") {
    std::vector<SessionLog> logs = {
        fixtures::log_with(TerminationKind::StepLimit, std::nullopt, false, 30),
        fixtures::log_with(TerminationKind::AgentTerminated, TerminationReason::GoalReached, true,
                           6),
    };
    const auto stats = journey_stats(logs);
    CHECK(stats.timeout_pct == doctest::Approx(50.0));
}

TEST_CASE("journey_stats rejects empty input") {
    CHECK_THROWS_AS(journey_stats({}), Error);
}

TEST_CASE("session log serialization round-trips") {
    auto log = fixtures::log_with(TerminationKind::AgentTerminated,
                                  TerminationReason::PriceTooHigh, false, 2);
    log.entries[1].error = "out_of_stock: gone";
    const nlohmann::json j = log;
    const auto back = j.get<SessionLog>();
    CHECK(back.termination.kind == log.termination.kind);
    CHECK(back.termination.reason == log.termination.reason);
    CHECK(back.entries.size() == log.entries.size());
    CHECK(back.entries[1].error == log.entries[1].error);
    CHECK(nlohmann::json(back).dump() == j.dump());
}
