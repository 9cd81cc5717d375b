#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "simgym/agent.hpp"
#include "simgym/common.hpp"
#include "simgym/persona.hpp"
#include "simgym/storefront.hpp"

namespace simgym {

// Deterministic decision policy standing in for an LLM shopper. It works from
// the same inputs an LLM agent would see: the profile, the accessibility-tree
// observation, and its own session memory. All randomness is hashed from
// (seed, step), so identical inputs give identical decisions across processes.
struct ScriptedPolicyConfig {
    // Fraction above the tier price ceiling still tolerated.
    double price_tolerance = 0.10;
    // Max product views per exploration regime (browsing agents only).
    std::map<std::string, std::size_t> exploration_budget = {
        {"Shallow", 3}, {"Moderate", 6}, {"Deep", 12}};
    // Keyword-overlap threshold between product tags and the dominant values axis.
    double values_match_min = 0.0;
    // Per forward-navigation-click abandon probability by regime. This is what
    // makes deeper navigation graphs cost conversions: every extra structural
    // click is another chance for the shopper to lose interest and leave.
    std::map<std::string, double> abandon_hazard = {
        {"Shallow", 0.22}, {"Moderate", 0.10}, {"Deep", 0.04}};
    // Category medians powering the tier ceilings (Budget <= median,
    // MidRange <= 2x median, Premium unbounded but needs a premium cue).
    std::map<std::string, Money> category_median_price;
    Money global_median_price = 0;
    ValueLexicons lexicons;

    static ScriptedPolicyConfig for_storefront(const Storefront& storefront) {
        ScriptedPolicyConfig cfg;
        cfg.category_median_price = storefront.catalog.category_medians();
        cfg.global_median_price = storefront.catalog.global_median_price();
        return cfg;
    }

    Money median_for(const std::string& category) const {
        auto it = category_median_price.find(category);
        if (it != category_median_price.end() && it->second > 0) return it->second;
        return global_median_price;
    }

    std::size_t budget_for(ExplorationRegime regime) const {
        auto it = exploration_budget.find(exploration_regime_name(regime));
        return it == exploration_budget.end() ? 6 : std::max<std::size_t>(1, it->second);
    }

    double hazard_for(ExplorationRegime regime) const {
        auto it = abandon_hazard.find(exploration_regime_name(regime));
        return it == abandon_hazard.end() ? 0.0 : it->second;
    }
};

namespace policy_detail {

inline const char* kPriceRejectPhrase = "price above the price ceiling";

struct MemoryDigest {
    std::set<std::string> viewed_titles;
    std::set<std::string> entered_collections;  // clicked names that landed on /collection/
    std::set<std::string> visited_urls;
    std::size_t product_views = 0;  // distinct product urls
    bool added = false;
    bool any_price_rejection = false;
    bool any_other_rejection = false;
    std::string last_error_code;
};

inline MemoryDigest digest_memory(const std::vector<MemoryEntry>& memory) {
    MemoryDigest d;
    std::set<std::string> product_urls;
    for (const auto& entry : memory) {
        const std::string& outcome = entry.outcome;
        if (outcome.rfind("added_to_cart:", 0) == 0) d.added = true;
        const std::size_t page_at = outcome.find("page:");
        if (page_at != std::string::npos) {
            const std::string url = outcome.substr(page_at + 5);
            d.visited_urls.insert(url);
            if (outcome.rfind("clicked \"", 0) == 0) {
                const std::size_t name_end = outcome.find("\" -> page:");
                if (name_end != std::string::npos) {
                    const std::string name = outcome.substr(9, name_end - 9);
                    if (url.rfind("/product/", 0) == 0) {
                        d.viewed_titles.insert(name);
                        product_urls.insert(url);
                    } else if (url.rfind("/collection/", 0) == 0) {
                        d.entered_collections.insert(name);
                    }
                }
            }
        }
        if (entry.reasoning.rfind("Rejected", 0) == 0) {
            if (entry.reasoning.find(kPriceRejectPhrase) != std::string::npos) {
                d.any_price_rejection = true;
            } else {
                d.any_other_rejection = true;
            }
        }
        if (outcome == "error:out_of_stock") d.any_other_rejection = true;
    }
    d.product_views = product_urls.size();
    if (!memory.empty() && memory.back().error) {
        const std::string& err = *memory.back().error;
        d.last_error_code = err.substr(0, err.find(':'));
    }
    return d;
}

struct ProductView {
    std::string title;
    Money price = 0;
    std::string category;
    std::vector<std::string> tags;
    std::string add_ref;
};

inline std::optional<Money> parse_money_text(const std::string& text) {
    const std::size_t dollar = text.find('$');
    if (dollar == std::string::npos) return std::nullopt;
    Money units = 0;
    std::size_t i = dollar + 1;
    bool digits = false;
    while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
        units = units * 10 + (text[i] - '0');
        ++i;
        digits = true;
    }
    if (!digits) return std::nullopt;
    Money cents = 0;
    if (i < text.size() && text[i] == '.') {
        ++i;
        int seen = 0;
        while (i < text.size() && text[i] >= '0' && text[i] <= '9' && seen < 2) {
            cents = cents * 10 + (text[i] - '0');
            ++i;
            ++seen;
        }
        if (seen == 1) cents *= 10;
    }
    return units * 100 + cents;
}

inline std::optional<ProductView> read_product_page(const AccessibilityNode& root) {
    ProductView view;
    const AccessibilityNode* heading = find_node(root, AxRole::Heading);
    if (!heading) return std::nullopt;
    view.title = heading->name;
    std::vector<const AccessibilityNode*> texts;
    collect_nodes(root, AxRole::Text, texts);
    for (const auto* t : texts) {
        if (t->name.rfind("price ", 0) == 0) {
            if (auto money = parse_money_text(t->name)) view.price = *money;
        } else if (t->name.rfind("category: ", 0) == 0) {
            view.category = t->name.substr(10);
        } else if (t->name.rfind("tags: ", 0) == 0) {
            std::string rest = t->name.substr(6);
            std::size_t pos = 0;
            while (pos < rest.size()) {
                std::size_t comma = rest.find(", ", pos);
                if (comma == std::string::npos) comma = rest.size();
                view.tags.push_back(rest.substr(pos, comma - pos));
                pos = comma + 2;
            }
        }
    }
    const AccessibilityNode* add = find_node(root, AxRole::Button, "Add to cart");
    if (add) view.add_ref = add->ref;
    return view;
}

inline std::vector<std::string> tokens_of(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : lowercase(s)) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur += c;
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline int match_score(const std::string& link_name, const std::string& category) {
    const std::string a = lowercase(link_name);
    const std::string b = lowercase(category);
    if (a.find(b) != std::string::npos || b.find(a) != std::string::npos) return 2;
    const auto at = tokens_of(a);
    const auto bt = tokens_of(b);
    for (const auto& x : at) {
        if (x.size() < 3) continue;
        for (const auto& y : bt) {
            if (x == y) return 1;
        }
    }
    return 0;
}

struct PageLinks {
    std::vector<const AccessibilityNode*> product_links;  // inside listitems
    std::vector<const AccessibilityNode*> structural;     // other main-region links
    const AccessibilityNode* next = nullptr;
    const AccessibilityNode* hub_forward = nullptr;
};

inline void walk_links(const AccessibilityNode& node, bool in_list, PageLinks& out) {
    if (node.role == AxRole::Link) {
        if (in_list) {
            out.product_links.push_back(&node);
        } else if (node.name == "Next") {
            out.next = &node;
        } else if (node.name == "Browse all collections" || node.name == "All collections") {
            out.hub_forward = &node;
        } else if (node.name != "Previous") {
            out.structural.push_back(&node);
        }
    }
    for (const auto& child : node.children)
        walk_links(child, in_list || node.role == AxRole::ListItem, out);
}

inline PageLinks main_region_links(const AccessibilityNode& root) {
    PageLinks out;
    const AccessibilityNode* main = find_node(root, AxRole::Region, "main");
    if (main) walk_links(*main, false, out);
    return out;
}

// Fraction of the product's tags matching the axis keywords; falls back to a
// title match when the product carries no tags.
inline double axis_overlap(const ProductView& view, const std::vector<std::string>& keywords) {
    auto matches = [&](const std::string& text) {
        for (const auto& kw : keywords) {
            if (contains_ci(text, kw) || contains_ci(kw, text)) return true;
        }
        return false;
    };
    if (view.tags.empty()) {
        for (const auto& kw : keywords) {
            if (contains_ci(view.title, kw)) return 1.0;
        }
        return 0.0;
    }
    std::size_t hit = 0;
    for (const auto& tag : view.tags) {
        if (matches(tag)) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(view.tags.size());
}

}  // namespace policy_detail

inline AgentDecision scripted_decide(const AgentProfile& profile, const Observation& observation,
                                     const std::vector<MemoryEntry>& memory,
                                     const ScriptedPolicyConfig& config, std::uint64_t seed) {
    using namespace policy_detail;
    const MemoryDigest digest = digest_memory(memory);
    const PersonaDimensions& persona = profile.persona;
    const bool purchase = profile.intent.purchase_focused;
    const std::size_t budget = config.budget_for(persona.exploration_regime);

    if (digest.added) {
        return AgentDecision::stop(
            "The item is in the cart; the shopping goal is fulfilled, so the session can end.",
            TerminationReason::GoalReached);
    }

    auto exhausted_reason = [&]() {
        if (purchase) {
            return digest.any_price_rejection && !digest.any_other_rejection
                       ? TerminationReason::PriceTooHigh
                       : TerminationReason::NoSuitableProduct;
        }
        return digest.product_views > 0 ? TerminationReason::NoA2CDecision
                                        : TerminationReason::NoSuitableProduct;
    };

    const std::string& url = observation.url;
    const bool on_product = url.rfind("/product/", 0) == 0;
    const bool on_collection = url.rfind("/collection/", 0) == 0;
    const bool on_home = url == "/";
    const bool on_hub = url.rfind("/collections", 0) == 0;

    // Browsing agents stop once the exploration budget is spent.
    if (!purchase && digest.product_views >= budget) {
        return AgentDecision::stop(
            "Viewed " + std::to_string(digest.product_views) +
                " products; this buyer was researching options, not committing to a purchase.",
            TerminationReason::NoA2CDecision);
    }

    if (on_product) {
        const auto view = read_product_page(observation.root);
        if (!view || view->title == "Page not found") {
            return AgentDecision::act("Dead product page; returning.", Action::back());
        }
        if (digest.last_error_code == "out_of_stock") {
            return AgentDecision::act("Could not add \"" + view->title +
                                          "\": it is out of stock. Moving on to other options.",
                                      Action::back());
        }
        if (!purchase) {
            return AgentDecision::act(
                "Viewed \"" + view->title + "\" at " + format_money(view->price) +
                    "; noting it as an option and continuing to research.",
                Action::back());
        }

        // Purchase path: tier ceiling, premium cue, values overlap.
        const Money median = config.median_for(view->category);
        bool price_ok = true;
        if (persona.price_tier != PriceTier::Premium && median > 0) {
            const double ceiling =
                static_cast<double>(persona.price_tier == PriceTier::Budget ? median : 2 * median);
            price_ok = static_cast<double>(view->price) <= ceiling * (1.0 + config.price_tolerance);
        }
        bool premium_ok = true;
        if (persona.price_tier == PriceTier::Premium) {
            premium_ok = false;
            for (const auto& kw : config.lexicons.premium) {
                if (contains_ci(view->title, kw)) premium_ok = true;
                for (const auto& tag : view->tags) premium_ok = premium_ok || contains_ci(tag, kw);
            }
        }
        bool values_ok = true;
        if (config.values_match_min > 0 && persona.dominant_axis_score() > 0) {
            values_ok = axis_overlap(*view, config.lexicons.axis(persona.dominant_axis())) >=
                        config.values_match_min;
        }

        if (!price_ok) {
            return AgentDecision::act("Rejected \"" + view->title + "\" at " +
                                          format_money(view->price) + ": " + kPriceRejectPhrase +
                                          " for this buyer.",
                                      Action::back());
        }
        if (!premium_ok) {
            return AgentDecision::act(
                "Rejected \"" + view->title +
                    "\": it lacks the premium cues (materials, craftsmanship) this buyer looks for.",
                Action::back());
        }
        if (!values_ok) {
            return AgentDecision::act("Rejected \"" + view->title +
                                          "\": it does not match the buyer's valued attributes.",
                                      Action::back());
        }
        if (view->add_ref.empty()) {
            return AgentDecision::act("No add-to-cart control here; returning.", Action::back());
        }
        return AgentDecision::act(
            "\"" + view->title + "\" at " + format_money(view->price) +
                " fits the buyer profile; adding it to the cart.",
            Action::click(view->add_ref));
    }

    const PageLinks links = main_region_links(observation.root);

    // Draw the abandon hazard only when the chosen move is a forward
    // structural click (deeper navigation = more chances to leave).
    auto with_hazard = [&](AgentDecision decision) {
        const double hazard = config.hazard_for(persona.exploration_regime);
        if (hazard > 0.0) {
            std::uint64_t state = rng::mix(rng::mix(seed, 0x6e61764cULL), memory.size());
            const double u = static_cast<double>(rng::splitmix64(state) >> 11) * 0x1.0p-53;
            if (u < hazard) {
                return AgentDecision::stop("Lost interest while navigating and left the store.",
                                           TerminationReason::Leaving);
            }
        }
        return decision;
    };

    if (on_collection) {
        for (const auto* link : links.product_links) {
            if (!digest.viewed_titles.count(link->name)) {
                return AgentDecision::act("Opening \"" + link->name + "\" to evaluate it.",
                                          Action::click(link->ref));
            }
        }
        if (links.next) {
            return with_hazard(AgentDecision::act("Everything here is already reviewed; next page.",
                                                  Action::click(links.next->ref)));
        }
        // Collection exhausted: return to the page the collection was picked from.
        std::string index_url = "/";
        for (const auto& v : digest.visited_urls) {
            if (v.rfind("/collections", 0) == 0) index_url = v;
        }
        if (digest.visited_urls.count(index_url) || index_url == "/") {
            return AgentDecision::act("This collection is exhausted; looking elsewhere.",
                                      Action::navigate(index_url));
        }
    }

    if (on_home || on_hub || on_collection) {
        // Prefer links matching the intent category, then any unexplored collection.
        const AccessibilityNode* best = nullptr;
        int best_score = 0;
        for (const auto* link : links.structural) {
            if (digest.entered_collections.count(link->name)) continue;
            const int score = match_score(link->name, profile.intent.category);
            if (score > best_score) {
                best = link;
                best_score = score;
            }
        }
        if (!best) {
            for (const auto* link : links.structural) {
                if (!digest.entered_collections.count(link->name)) {
                    best = link;
                    break;
                }
            }
        }
        if (best) {
            return with_hazard(AgentDecision::act(
                "Heading into \"" + best->name + "\" looking for " + profile.intent.category + ".",
                Action::click(best->ref)));
        }
        if (links.hub_forward) {
            const std::size_t next_level = on_hub ? 2 : 1;  // crude but only the guard matters
            std::string target = "/collections?level=" + std::to_string(next_level);
            if (on_hub) {
                // Derive the next level from the current url's level parameter.
                const std::size_t eq = url.find("level=");
                if (eq != std::string::npos)
                    target = "/collections?level=" +
                             std::to_string(std::atol(url.c_str() + eq + 6) + 1);
            }
            if (!digest.visited_urls.count(target)) {
                return with_hazard(AgentDecision::act("Browsing the collection index.",
                                                      Action::click(links.hub_forward->ref)));
            }
        }
        return AgentDecision::stop(
            purchase ? "No remaining collection offers a product that fits this buyer."
                     : "Nothing else left to research here.",
            exhausted_reason());
    }

    // Search results, cart, checkout, not-found, external: reset to home.
    if (!digest.visited_urls.count("/") && url != "/") {
        return AgentDecision::act("Returning to the storefront home page.", Action::navigate("/"));
    }
    return AgentDecision::stop("Nowhere productive left to go.", exhausted_reason());
}

class ScriptedDecisionMaker : public DecisionMaker {
public:
    explicit ScriptedDecisionMaker(ScriptedPolicyConfig config) : config_(std::move(config)) {}

    AgentDecision next(const AgentProfile& profile, const Observation& observation,
                       const std::vector<MemoryEntry>& memory, std::uint64_t seed) override {
        return scripted_decide(profile, observation, memory, config_, seed);
    }

    const ScriptedPolicyConfig& config() const { return config_; }

private:
    ScriptedPolicyConfig config_;
};

}  // namespace simgym
