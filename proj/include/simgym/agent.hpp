#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "simgym/backend.hpp"
#include "simgym/common.hpp"
#include "simgym/persona.hpp"
#include "simgym/storefront.hpp"

namespace simgym {

enum class TerminationReason { GoalReached, NoSuitableProduct, NoA2CDecision, PriceTooHigh, Leaving };

inline const char* termination_reason_name(TerminationReason r) {
    switch (r) {
        case TerminationReason::GoalReached: return "GoalReached";
        case TerminationReason::NoSuitableProduct: return "NoSuitableProduct";
        case TerminationReason::NoA2CDecision: return "NoA2CDecision";
        case TerminationReason::PriceTooHigh: return "PriceTooHigh";
        case TerminationReason::Leaving: return "Leaving";
    }
    return "?";
}

inline std::optional<TerminationReason> termination_reason_from_name(const std::string& s) {
    if (s == "GoalReached") return TerminationReason::GoalReached;
    if (s == "NoSuitableProduct") return TerminationReason::NoSuitableProduct;
    if (s == "NoA2CDecision") return TerminationReason::NoA2CDecision;
    if (s == "PriceTooHigh") return TerminationReason::PriceTooHigh;
    if (s == "Leaving") return TerminationReason::Leaving;
    return std::nullopt;
}

struct AgentDecision {
    std::string reasoning;
    bool terminate = false;
    std::optional<TerminationReason> termination_reason;  // present iff terminate
    std::optional<Action> action;                         // present iff !terminate
    int retries_used = 0;

    static AgentDecision act(std::string reasoning, Action action) {
        AgentDecision d;
        d.reasoning = std::move(reasoning);
        d.action = std::move(action);
        return d;
    }
    static AgentDecision stop(std::string reasoning, TerminationReason reason) {
        AgentDecision d;
        d.reasoning = std::move(reasoning);
        d.terminate = true;
        d.termination_reason = reason;
        return d;
    }
};

struct MemoryEntry {
    std::size_t step = 0;  // strictly increasing within a log
    std::string reasoning;
    std::optional<Action> action;  // absent on the terminal entry
    std::string outcome;
    std::optional<std::string> error;
};

struct Limits {
    std::size_t max_steps = 30;
    double max_wall_time_s = 300.0;
    std::size_t loop_threshold = 3;
    int llm_retries = 3;
};

enum class TerminationKind { AgentTerminated, StepLimit, TimeLimit, LoopGuard, FatalError };

inline const char* termination_kind_name(TerminationKind k) {
    switch (k) {
        case TerminationKind::AgentTerminated: return "AgentTerminated";
        case TerminationKind::StepLimit: return "StepLimit";
        case TerminationKind::TimeLimit: return "TimeLimit";
        case TerminationKind::LoopGuard: return "LoopGuard";
        case TerminationKind::FatalError: return "FatalError";
    }
    return "?";
}

struct Termination {
    TerminationKind kind = TerminationKind::AgentTerminated;
    std::optional<TerminationReason> reason;  // set for AgentTerminated
};

struct SessionLog {
    std::string shop_id;
    std::size_t cluster_id = 0;
    std::size_t agent_index = 0;
    std::string theme_id;
    std::string intent_category;
    bool purchase_focused = false;
    std::vector<MemoryEntry> entries;
    std::vector<CartItem> final_cart;
    Termination termination;
    bool a2c = false;  // iff final_cart non-empty
    std::size_t steps = 0;  // == entries.size()

    bool goal_reached() const {
        return termination.kind == TerminationKind::AgentTerminated &&
               termination.reason == TerminationReason::GoalReached;
    }
};

inline const std::string& default_behavioral_constraints() {
    static const std::string text =
        "You may add items to the cart and you may begin checkout, but never complete payment "
        "or enter personal details. Interact only through the listed element refs. Stay on this "
        "storefront; do not follow external links. If you decide to stop, terminate with one of "
        "the listed reasons instead of wandering.";
    return text;
}

// Five sections in fixed order: goal, persona, session memory, current page,
// behavioral constraints.
inline std::string build_step_prompt(const AgentProfile& profile,
                                     const std::vector<MemoryEntry>& memory,
                                     const Observation& observation,
                                     const std::string& constraints = default_behavioral_constraints()) {
    std::string prompt;
    prompt += "## Shopping Goal\n" + profile.intent.text + "\n\n";
    prompt += "## Buyer Persona\n" + profile.prompt_text + "\n";
    prompt += "## Session Memory\n";
    if (memory.empty()) {
        prompt += "(no prior steps)\n";
    } else {
        for (const auto& entry : memory) {
            prompt += "Step " + std::to_string(entry.step) + ": " + entry.reasoning;
            if (entry.action) prompt += " | action: " + action_to_string(*entry.action);
            prompt += " | outcome: " + entry.outcome;
            if (entry.error) prompt += " | error: " + *entry.error;
            prompt += "\n";
        }
    }
    prompt += "\n## Current Page\nURL: " + observation.url + "\n";
    prompt += serialize_axtree(observation.root);
    prompt += "\n## Behavioral Constraints\n" + constraints + "\n";
    return prompt;
}

inline nlohmann::json decision_schema() {
    return {{"type", "object"},
            {"required", {"reasoning", "terminate"}},
            {"properties",
             {{"reasoning", {{"type", "string"}}},
              {"terminate", {{"type", "boolean"}}},
              {"termination_reason",
               {{"type", "string"},
                {"enum", {"GoalReached", "NoSuitableProduct", "NoA2CDecision", "PriceTooHigh",
                          "Leaving"}}}},
              {"action",
               {{"type", "object"},
                {"required", {"type"}},
                {"properties",
                 {{"type",
                   {{"type", "string"},
                    {"enum", {"click", "type_text", "scroll", "navigate", "back"}}}},
                  {"ref", {{"type", "string"}}},
                  {"text", {{"type", "string"}}},
                  {"url", {{"type", "string"}}},
                  {"direction", {{"type", "string"}}}}}}}}}};
}

namespace agent_detail {

// Structural constraints the schema subset cannot express.
inline std::optional<std::string> decision_shape_error(const nlohmann::json& j) {
    const bool terminate = j.at("terminate").get<bool>();
    if (terminate) {
        if (!j.contains("termination_reason")) return "terminate=true requires termination_reason";
        if (j.contains("action") && !j.at("action").is_null())
            return "terminate=true forbids an action";
    } else {
        if (!j.contains("action") || j.at("action").is_null())
            return "terminate=false requires an action";
        const auto& a = j.at("action");
        const std::string type = a.value("type", "");
        if ((type == "click" || type == "type_text") && !a.contains("ref"))
            return "action " + type + " requires ref";
        if (type == "type_text" && !a.contains("text")) return "type_text requires text";
        if (type == "navigate" && !a.contains("url")) return "navigate requires url";
    }
    return std::nullopt;
}

inline AgentDecision decision_from_json(const nlohmann::json& j) {
    AgentDecision d;
    d.reasoning = j.at("reasoning").get<std::string>();
    d.terminate = j.at("terminate").get<bool>();
    if (d.terminate) {
        d.termination_reason = termination_reason_from_name(j.at("termination_reason"));
    } else {
        d.action = j.at("action").get<Action>();
    }
    return d;
}

}  // namespace agent_detail

// Schema-constrained decision: validation failures re-prompt with the error
// appended until `retries` attempts are spent.
inline AgentDecision decide(JsonBackend& backend, const std::string& prompt,
                            const nlohmann::json& schema, int retries) {
    if (retries < 1) throw Error(ErrorCode::InvalidArgument, "retries must be >= 1");
    BackendRequest request;
    request.system_text =
        "You are a shopper deciding the next browser action. Reply with JSON only.";
    request.user_text = prompt;
    request.schema = schema;

    std::string last_error;
    for (int attempt = 0; attempt < retries; ++attempt) {
        BackendRequest this_attempt = request;
        if (attempt > 0) {
            this_attempt.user_text += "\n\nYour previous reply was rejected: " + last_error +
                                      "\nReply again with JSON matching the schema exactly.";
        }
        std::string raw;
        try {
            raw = backend.complete_raw(this_attempt);
        } catch (const Error& ex) {
            if (ex.code() == ErrorCode::RateLimited && attempt + 1 < retries) {
                last_error = ex.what();
                std::this_thread::sleep_for(std::chrono::milliseconds(100 * (attempt + 1)));
                continue;
            }
            throw;
        }
        auto parsed = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
        if (parsed.is_discarded()) {
            last_error = "reply was not valid JSON";
            continue;
        }
        if (auto err = validate_schema(parsed, schema)) {
            last_error = *err;
            continue;
        }
        if (auto err = agent_detail::decision_shape_error(parsed)) {
            last_error = *err;
            continue;
        }
        AgentDecision d = agent_detail::decision_from_json(parsed);
        d.retries_used = attempt;
        return d;
    }
    throw Error(ErrorCode::DecisionSchemaFailure,
                "no valid decision after " + std::to_string(retries) +
                    " attempts; last error: " + last_error);
}

// True iff the last `threshold` entries repeat the identical action to the
// identical effect. Element refs are page-relative, so the outcome comparison
// is what distinguishes "same ref on three different pages" (progress) from
// genuinely spinning in place.
inline bool detect_loop(const std::vector<MemoryEntry>& memory, std::size_t threshold) {
    if (threshold < 2) throw Error(ErrorCode::InvalidArgument, "loop threshold must be >= 2");
    if (memory.size() < threshold) return false;
    const auto& last = memory.back();
    if (!last.action) return false;
    for (std::size_t i = memory.size() - threshold; i < memory.size(); ++i) {
        if (!memory[i].action || !(*memory[i].action == *last.action) ||
            memory[i].outcome != last.outcome)
            return false;
    }
    return true;
}

// Source of per-step decisions: the scripted persona policy or an LLM backend.
class DecisionMaker {
public:
    virtual ~DecisionMaker() = default;
    virtual AgentDecision next(const AgentProfile& profile, const Observation& observation,
                               const std::vector<MemoryEntry>& memory,
                               std::uint64_t session_seed) = 0;
};

class LlmDecisionMaker : public DecisionMaker {
public:
    LlmDecisionMaker(JsonBackend& backend, int retries = 3,
                     std::string constraints = default_behavioral_constraints())
        : backend_(backend), retries_(retries), constraints_(std::move(constraints)) {}

    AgentDecision next(const AgentProfile& profile, const Observation& observation,
                       const std::vector<MemoryEntry>& memory, std::uint64_t) override {
        const std::string prompt = build_step_prompt(profile, memory, observation, constraints_);
        return decide(backend_, prompt, decision_schema(), retries_);
    }

private:
    JsonBackend& backend_;
    int retries_;
    std::string constraints_;
};

class FunctionDecisionMaker : public DecisionMaker {
public:
    using Fn = std::function<AgentDecision(const AgentProfile&, const Observation&,
                                           const std::vector<MemoryEntry>&, std::uint64_t)>;
    explicit FunctionDecisionMaker(Fn fn) : fn_(std::move(fn)) {}

    AgentDecision next(const AgentProfile& profile, const Observation& observation,
                       const std::vector<MemoryEntry>& memory, std::uint64_t seed) override {
        return fn_(profile, observation, memory, seed);
    }

private:
    Fn fn_;
};

namespace agent_detail {

inline std::string describe_outcome(const Action& action, const Observation& pre,
                                    const StepResult& result, const EnvState& post_state,
                                    std::size_t cart_before) {
    if (result.error) return "error:" + result.error->code;
    if (auto* click = std::get_if<Action::Click>(&action.value)) {
        if (post_state.cart.size() > cart_before) {
            return "added_to_cart:" + post_state.cart.back().product_id + " cart total " +
                   format_money(post_state.cart_value());
        }
        const AccessibilityNode* node = find_by_ref(pre.root, click->ref);
        const std::string name = node ? node->name : click->ref;
        return "clicked \"" + name + "\" -> page:" + result.observation.url;
    }
    if (std::get_if<Action::TypeText>(&action.value)) return "typed";
    if (std::get_if<Action::Scroll>(&action.value)) return "scrolled";
    if (std::get_if<Action::Navigate>(&action.value)) return "page:" + result.observation.url;
    return "back -> page:" + result.observation.url;
}

}  // namespace agent_detail

// The perceive-plan-act loop. Guardrail precedence when several trigger on one
// step: agent termination, then loop guard, then step limit, then time limit.
inline SessionLog run_session(const AgentProfile& profile, const Storefront& storefront,
                              const std::string& theme_name, DecisionMaker& maker,
                              const Limits& limits, std::uint64_t session_seed,
                              std::size_t agent_index = 0) {
    if (limits.max_steps < 1 || limits.loop_threshold < 1 || limits.llm_retries < 1 ||
        limits.max_wall_time_s <= 0)
        throw Error(ErrorCode::InvalidArgument, "limits must all be >= 1");

    SessionLog log;
    log.shop_id = profile.shop_id;
    log.cluster_id = profile.cluster_id;
    log.agent_index = agent_index;
    log.theme_id = storefront.theme(theme_name).theme_id;
    log.intent_category = profile.intent.category;
    log.purchase_focused = profile.intent.purchase_focused;

    EnvState state = make_env(storefront, theme_name, session_seed);
    const auto started = std::chrono::steady_clock::now();

    for (;;) {
        const Observation observation = observe(state);
        AgentDecision decision;
        try {
            decision = maker.next(profile, observation, log.entries, session_seed);
        } catch (const std::exception& ex) {
            MemoryEntry entry;
            entry.step = log.entries.size();
            entry.outcome = "fatal";
            entry.error = ex.what();
            log.entries.push_back(std::move(entry));
            log.termination = {TerminationKind::FatalError, std::nullopt};
            break;
        }

        if (decision.terminate) {
            MemoryEntry entry;
            entry.step = log.entries.size();
            entry.reasoning = decision.reasoning;
            entry.outcome =
                "terminated:" +
                std::string(termination_reason_name(
                    decision.termination_reason.value_or(TerminationReason::NoA2CDecision)));
            log.entries.push_back(std::move(entry));
            log.termination = {TerminationKind::AgentTerminated, decision.termination_reason};
            break;
        }

        const std::size_t cart_before = state.cart.size();
        const StepResult result = apply(state, *decision.action);
        MemoryEntry entry;
        entry.step = log.entries.size();
        entry.reasoning = decision.reasoning;
        if (decision.retries_used > 0)
            entry.reasoning += " (after " + std::to_string(decision.retries_used) + " retry)";
        entry.action = decision.action;
        entry.outcome =
            agent_detail::describe_outcome(*decision.action, observation, result, state, cart_before);
        if (result.error) entry.error = result.error->code + ": " + result.error->message;
        log.entries.push_back(std::move(entry));

        if (limits.loop_threshold >= 2 && detect_loop(log.entries, limits.loop_threshold)) {
            log.termination = {TerminationKind::LoopGuard, std::nullopt};
            break;
        }
        if (log.entries.size() >= limits.max_steps) {
            log.termination = {TerminationKind::StepLimit, std::nullopt};
            break;
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (elapsed > limits.max_wall_time_s) {
            log.termination = {TerminationKind::TimeLimit, std::nullopt};
            break;
        }
    }

    log.final_cart = state.cart;
    log.a2c = !log.final_cart.empty();
    log.steps = log.entries.size();
    return log;
}

struct JourneyStats {
    double goal_reached_pct = 0.0;
    double timeout_pct = 0.0;
    double mean_steps = 0.0;
    double std_steps = 0.0;  // population
};

inline JourneyStats journey_stats(const std::vector<SessionLog>& logs) {
    if (logs.empty()) throw Error(ErrorCode::EmptyInput, "no session logs");
    JourneyStats stats_out;
    std::vector<double> steps;
    std::size_t goal = 0;
    std::size_t timeout = 0;
    for (const auto& log : logs) {
        if (log.goal_reached()) ++goal;
        if (log.termination.kind == TerminationKind::StepLimit) ++timeout;
        steps.push_back(static_cast<double>(log.steps));
    }
    const double n = static_cast<double>(logs.size());
    stats_out.goal_reached_pct = 100.0 * static_cast<double>(goal) / n;
    stats_out.timeout_pct = 100.0 * static_cast<double>(timeout) / n;
    stats_out.mean_steps = stats::mean(steps);
    stats_out.std_steps = stats::stddev_pop(steps);
    return stats_out;
}

// ---------------------------------------------------------------------------
// Serialization (SessionLog JSONL)

inline void to_json(nlohmann::json& j, const MemoryEntry& e) {
    j = {{"step", e.step}, {"reasoning", e.reasoning}, {"outcome", e.outcome}};
    if (e.action) j["action"] = *e.action;
    if (e.error) j["error"] = *e.error;
}

inline void from_json(const nlohmann::json& j, MemoryEntry& e) {
    j.at("step").get_to(e.step);
    e.reasoning = j.value("reasoning", "");
    e.outcome = j.value("outcome", "");
    if (j.contains("action")) e.action = j.at("action").get<Action>();
    if (j.contains("error")) e.error = j.at("error").get<std::string>();
}

inline void to_json(nlohmann::json& j, const CartItem& c) {
    j = {{"product_id", c.product_id}, {"price", c.price}};
}

inline void from_json(const nlohmann::json& j, CartItem& c) {
    j.at("product_id").get_to(c.product_id);
    j.at("price").get_to(c.price);
}

inline void to_json(nlohmann::json& j, const SessionLog& log) {
    j = {{"shop_id", log.shop_id},
         {"cluster_id", log.cluster_id},
         {"agent_index", log.agent_index},
         {"theme_id", log.theme_id},
         {"intent_category", log.intent_category},
         {"purchase_focused", log.purchase_focused},
         {"entries", log.entries},
         {"final_cart", log.final_cart},
         {"termination", termination_kind_name(log.termination.kind)},
         {"a2c", log.a2c},
         {"steps", log.steps}};
    if (log.termination.reason)
        j["termination_reason"] = termination_reason_name(*log.termination.reason);
}

inline void from_json(const nlohmann::json& j, SessionLog& log) {
    j.at("shop_id").get_to(log.shop_id);
    j.at("cluster_id").get_to(log.cluster_id);
    j.at("agent_index").get_to(log.agent_index);
    j.at("theme_id").get_to(log.theme_id);
    log.intent_category = j.value("intent_category", "");
    log.purchase_focused = j.value("purchase_focused", false);
    j.at("entries").get_to(log.entries);
    j.at("final_cart").get_to(log.final_cart);
    const std::string kind = j.at("termination").get<std::string>();
    log.termination.kind = kind == "AgentTerminated" ? TerminationKind::AgentTerminated
                           : kind == "StepLimit"     ? TerminationKind::StepLimit
                           : kind == "TimeLimit"     ? TerminationKind::TimeLimit
                           : kind == "LoopGuard"     ? TerminationKind::LoopGuard
                                                     : TerminationKind::FatalError;
    if (j.contains("termination_reason"))
        log.termination.reason = termination_reason_from_name(j.at("termination_reason"));
    j.at("a2c").get_to(log.a2c);
    j.at("steps").get_to(log.steps);
}

}  // namespace simgym
