#pragma once

// Shared synthetic fixtures: storefront documents, clickstreams, profiles, and
// session logs used across the unit and acceptance suites.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "simgym/agent.hpp"
#include "simgym/common.hpp"
#include "simgym/persona.hpp"
#include "simgym/scripted_policy.hpp"
#include "simgym/storefront.hpp"

namespace fixtures {

using nlohmann::json;

// A small storefront with two collections. The treatment theme buries the
// collections one click deeper than control; everything else matches.
inline json storefront_doc(std::size_t control_depth = 1, std::size_t treatment_depth = 2,
                           std::size_t products_per_page = 12) {
    json catalog = json::array();
    auto product = [&](const std::string& id, const std::string& title, std::int64_t price,
                       const std::string& category, std::vector<std::string> tags,
                       bool in_stock = true) {
        catalog.push_back({{"product_id", id},
                           {"title", title},
                           {"price", price},
                           {"category", category},
                           {"tags", tags},
                           {"in_stock", in_stock}});
    };
    product("p1", "Trail Runner Sneakers", 4500, "sneakers", {"durable", "running"});
    product("p2", "Everyday Canvas Sneakers", 3200, "sneakers", {"casual", "cotton"});
    product("p3", "Premium Crystal Wing Dragon", 3318, "figurines", {"premium", "crystal"});
    product("p4", "Pocket Dragon Mini", 450, "figurines", {"mini"});
    product("p5", "Organic Cotton Socks", 900, "apparel", {"organic", "cotton"});
    product("p6", "Commercial Grade Floor Pump", 5200, "gear", {"commercial grade", "durable"});
    product("p7", "Sold Out Slippers", 1500, "sneakers", {"cozy"}, false);

    json collections = json::array();
    collections.push_back({{"id", "c-sneakers"},
                           {"title", "Sneakers"},
                           {"product_ids", {"p1", "p2", "p7"}}});
    collections.push_back({{"id", "c-figurines"},
                           {"title", "Figurines"},
                           {"product_ids", {"p3", "p4"}}});
    collections.push_back(
        {{"id", "c-gear"}, {"title", "Gear"}, {"product_ids", {"p5", "p6"}}});

    auto theme = [&](const std::string& id, std::size_t depth) {
        return json{{"theme_id", id},
                    {"home_collections", {"c-sneakers", "c-figurines", "c-gear"}},
                    {"products_per_page", products_per_page},
                    {"nav_links", {"About"}},
                    {"search_enabled", true},
                    {"product_card_fields", {"title", "price"}},
                    {"collection_depth", depth}};
    };
    return json{{"shop", {{"name", "Fixture Outfitters"},
                          {"industry", "sporting goods"},
                          {"country", "CA"}}},
                {"catalog", catalog},
                {"collections", collections},
                {"themes", {{"control", theme("control", control_depth)},
                            {"treatment", theme("treatment", treatment_depth)}}}};
}

inline simgym::Storefront storefront(std::size_t control_depth = 1,
                                     std::size_t treatment_depth = 2) {
    return simgym::load_storefront(storefront_doc(control_depth, treatment_depth));
}

inline simgym::AgentProfile profile(bool purchase_focused, const std::string& category,
                                    simgym::PriceTier tier = simgym::PriceTier::MidRange,
                                    simgym::ExplorationRegime regime =
                                        simgym::ExplorationRegime::Moderate) {
    simgym::AgentProfile p;
    p.shop_id = "fixture-shop";
    p.cluster_id = 0;
    p.intent.category = category;
    p.intent.purchase_focused = purchase_focused;
    p.intent.text = "You are looking for " + category + ". " +
                    std::string(purchase_focused ? "You are ready to purchase."
                                                 : "You are researching options.");
    p.persona.price_tier = tier;
    p.persona.price_gap = tier == simgym::PriceTier::Budget   ? 0.6
                          : tier == simgym::PriceTier::MidRange ? 0.4
                                                                : 0.1;
    p.persona.exploration_regime = regime;
    p.persona.exploration = regime == simgym::ExplorationRegime::Shallow   ? 0.2
                            : regime == simgym::ExplorationRegime::Moderate ? 0.5
                                                                            : 0.8;
    p.persona.performance_focus = 0.6;
    p.preferences.categories = {category};
    p.preferences.products = {"Trail Runner Sneakers"};
    p.prompt_text = simgym::render_persona_block(p.persona, p.preferences);
    return p;
}

// Policy config with the stochastic abandon hazard disabled, for hand-traces.
inline simgym::ScriptedPolicyConfig deterministic_policy(const simgym::Storefront& sf) {
    auto cfg = simgym::ScriptedPolicyConfig::for_storefront(sf);
    cfg.abandon_hazard = {{"Shallow", 0.0}, {"Moderate", 0.0}, {"Deep", 0.0}};
    return cfg;
}

inline simgym::SessionLog log_with(simgym::TerminationKind kind,
                                   std::optional<simgym::TerminationReason> reason, bool a2c,
                                   std::size_t steps = 3) {
    simgym::SessionLog log;
    log.shop_id = "fixture-shop";
    log.theme_id = "control";
    log.termination = {kind, reason};
    log.a2c = a2c;
    for (std::size_t i = 0; i < steps; ++i) {
        simgym::MemoryEntry e;
        e.step = i;
        e.reasoning = "step";
        e.action = simgym::Action::scroll("down");
        e.outcome = "scrolled";
        log.entries.push_back(e);
    }
    log.steps = log.entries.size();
    if (a2c) log.final_cart.push_back({"p1", 4500});
    return log;
}

// Clickstream JSONL for one shop: a deterministic mix of buyer archetypes so
// clustering and persona extraction have real structure to find.
inline std::string clickstream_jsonl(const std::string& shop_id, std::size_t sessions,
                                     std::uint64_t seed) {
    std::string out;
    std::uint64_t state = seed;
    auto next = [&]() { return simgym::rng::splitmix64(state); };
    std::int64_t ts = 1700000000000;

    for (std::size_t s = 0; s < sessions; ++s) {
        const std::string sid = shop_id + "-s" + std::to_string(s);
        const std::string bid = shop_id + "-b" + std::to_string(s % (sessions / 2 + 1));
        ts += 60000 + static_cast<std::int64_t>(next() % 9000);
        std::int64_t t = ts;
        auto line = [&](json j) {
            j["session_id"] = sid;
            j["buyer_id"] = bid;
            j["shop_id"] = shop_id;
            j["ts"] = t;
            t += 1000 + static_cast<std::int64_t>(next() % 30000);
            out += j.dump() + "\n";
        };

        struct Item {
            const char* id;
            const char* title;
            std::int64_t price;
        };
        static const Item items[] = {{"p1", "Trail Runner Sneakers", 4500},
                                     {"p2", "Everyday Canvas Sneakers", 3200},
                                     {"p3", "Premium Crystal Wing Dragon", 3318},
                                     {"p4", "Pocket Dragon Mini", 450},
                                     {"p5", "Organic Cotton Socks", 900},
                                     {"p6", "Commercial Grade Floor Pump", 5200}};

        const std::uint64_t archetype = next() % 10;
        line({{"type", "page_view"}});
        if (archetype < 3) {
            // Bouncer: one or two page views only.
            if (next() % 2) line({{"type", "page_view"}});
        } else if (archetype < 6) {
            // Browser: views a few products, maybe searches.
            const std::size_t views = 2 + next() % 3;
            if (next() % 2) line({{"type", "search"}, {"search_query", "sneakers"}});
            for (std::size_t v = 0; v < views; ++v) {
                const Item& item = items[next() % 6];
                line({{"type", "product_view"},
                      {"product_id", item.id},
                      {"product_title", item.title},
                      {"product_price", item.price}});
            }
        } else if (archetype < 8) {
            // Cart builder: views then adds, no purchase.
            const Item& item = items[next() % 6];
            line({{"type", "product_view"},
                  {"product_id", item.id},
                  {"product_title", item.title},
                  {"product_price", item.price}});
            line({{"type", "add_to_cart"},
                  {"product_id", item.id},
                  {"product_title", item.title},
                  {"product_price", item.price},
                  {"cart_value", item.price}});
        } else {
            // Buyer: full funnel.
            const Item& item = items[next() % 6];
            const Item& second = items[next() % 6];
            line({{"type", "search"}, {"search_query", "gear"}});
            line({{"type", "product_view"},
                  {"product_id", item.id},
                  {"product_title", item.title},
                  {"product_price", item.price}});
            line({{"type", "product_view"},
                  {"product_id", second.id},
                  {"product_title", second.title},
                  {"product_price", second.price}});
            line({{"type", "add_to_cart"},
                  {"product_id", item.id},
                  {"product_title", item.title},
                  {"product_price", item.price},
                  {"cart_value", item.price}});
            line({{"type", "begin_checkout"}, {"cart_value", item.price}});
            line({{"type", "purchase"}, {"order_value", item.price}});
        }
    }
    return out;
}

// Writes a full multi-shop experiment workspace and returns the config path.
inline std::filesystem::path write_experiment(const std::filesystem::path& root,
                                              std::size_t shop_count, std::size_t agents_per_shop,
                                              std::uint64_t seed, std::size_t repeat = 1,
                                              std::size_t sessions_per_shop = 120) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "data");
    json shops = json::array();
    for (std::size_t i = 0; i < shop_count; ++i) {
        const std::string shop_id = "shop" + std::to_string(i);
        const fs::path clicks = root / "data" / (shop_id + ".jsonl");
        const fs::path store = root / "data" / (shop_id + ".storefront.json");
        {
            std::ofstream out(clicks);
            out << clickstream_jsonl(shop_id, sessions_per_shop, seed + i * 1000);
        }
        {
            std::ofstream out(store);
            // Alternate the direction of the structural change across shops.
            const bool deeper = i % 2 == 0;
            out << storefront_doc(deeper ? 1 : 2, deeper ? 2 : 1).dump(2);
        }
        shops.push_back({{"shop_id", shop_id},
                         {"clickstream", "data/" + shop_id + ".jsonl"},
                         {"storefront", "data/" + shop_id + ".storefront.json"},
                         {"human_delta", (i % 2 == 0 ? -0.01 : 0.01) * double(1 + i % 3)}});
    }
    json config = {
        {"shops", shops},
        {"agents_per_shop", agents_per_shop},
        {"k", "auto"},
        {"k_min", 1},
        {"k_max", 6},
        {"backend", {{"kind", "scripted"}}},
        {"limits", {{"max_steps", 30}, {"loop_threshold", 3}}},
        {"seeds", {{"run_seed", seed}}},
        {"workers", 2},
        {"repeat", repeat},
        {"output_dir", "out"},
        {"eval", {{"mc_samples", 100000}}},
    };
    const fs::path config_path = root / "config.json";
    std::ofstream out(config_path);
    out << config.dump(2);
    return config_path;
}

}  // namespace fixtures
