#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "simgym/backend.hpp"
#include "simgym/catalog.hpp"
#include "simgym/common.hpp"
#include "simgym/events.hpp"

namespace simgym {

inline const std::vector<std::string>& forbidden_intent_terms() {
    static const std::vector<std::string> terms = {"bundle", "size",   "discount", "button",
                                                   "banner", "menu",   "theme",    "layout"};
    return terms;
}

struct ProductPreferences {
    std::vector<std::string> categories;  // <= 10 generic descriptors, lowercase
    std::vector<std::string> products;    // <= 10 item titles
    std::string reasoning;
};

struct BuyerIntent {
    std::string category;
    bool purchase_focused = false;
    std::string text;  // exactly two sentences
};

struct ProductRef {
    std::string title;
    Money price = 0;
    std::string category;
};

struct BuyerAggregate {
    std::size_t session_count = 0;
    double a2c_rate = 0.0;
    double checkout_rate = 0.0;
    double purchase_rate = 0.0;
    Money avg_cart_value = 0;
    Money avg_order_value = 0;
    std::vector<ProductRef> browsed_products;    // with multiplicity
    std::vector<ProductRef> purchased_products;  // cart adds in purchasing sessions
    // Engagement means feeding the exploration score.
    double avg_duration_s = 0.0;
    double avg_search_count = 0.0;
    double avg_product_views = 0.0;
};

enum class PriceTier { Budget, MidRange, Premium };
enum class ExplorationRegime { Shallow, Moderate, Deep };

inline const char* price_tier_name(PriceTier t) {
    switch (t) {
        case PriceTier::Budget: return "Budget";
        case PriceTier::MidRange: return "MidRange";
        case PriceTier::Premium: return "Premium";
    }
    return "?";
}

inline const char* exploration_regime_name(ExplorationRegime r) {
    switch (r) {
        case ExplorationRegime::Shallow: return "Shallow";
        case ExplorationRegime::Moderate: return "Moderate";
        case ExplorationRegime::Deep: return "Deep";
    }
    return "?";
}

// Budget > 50% gap, mid-range 30-50%, premium < 30%.
inline PriceTier price_tier_from_gap(double gap) {
    if (gap > 0.50) return PriceTier::Budget;
    if (gap > 0.30) return PriceTier::MidRange;
    return PriceTier::Premium;
}

// Shallow 0-0.35, moderate 0.35-0.65, deep 0.65-1 (half-open on the low side).
inline ExplorationRegime exploration_regime_from_score(double score) {
    if (score < 0.35) return ExplorationRegime::Shallow;
    if (score < 0.65) return ExplorationRegime::Moderate;
    return ExplorationRegime::Deep;
}

struct PersonaDimensions {
    PriceTier price_tier = PriceTier::MidRange;
    double price_gap = 0.0;
    double exploration = 0.0;
    ExplorationRegime exploration_regime = ExplorationRegime::Moderate;
    double premium_focus = 0.0;
    double performance_focus = 0.0;
    double ethics_focus = 0.0;
    std::map<std::string, double> confidence;  // per dimension, in [0,1]
    std::string reasoning;

    // Dominant values axis; ties resolve premium > performance > ethics.
    std::string dominant_axis() const {
        if (premium_focus >= performance_focus && premium_focus >= ethics_focus) return "premium";
        if (performance_focus >= ethics_focus) return "performance";
        return "ethics";
    }
    double dominant_axis_score() const {
        return std::max(premium_focus, std::max(performance_focus, ethics_focus));
    }
};

struct AgentProfile {
    BuyerIntent intent;
    PersonaDimensions persona;
    ProductPreferences preferences;
    std::size_t cluster_id = 0;
    std::string shop_id;
    std::string prompt_text;  // rendered profile block used in agent prompts
};

struct ClusterSummary {
    std::size_t cluster_id = 0;
    std::vector<ProductRef> browsed;
    std::vector<ProductRef> purchased;
};

// Per-shop percentile tables (sorted) for the exploration dimensions.
struct ShopNorms {
    std::vector<double> durations_s;
    std::vector<double> search_counts;
    std::vector<double> product_views;

    static ShopNorms from_features(const std::vector<SessionFeatures>& features) {
        ShopNorms n;
        for (const auto& f : features) {
            n.durations_s.push_back(f.duration_s);
            n.search_counts.push_back(static_cast<double>(f.search_count));
            n.product_views.push_back(static_cast<double>(f.product_views));
        }
        std::sort(n.durations_s.begin(), n.durations_s.end());
        std::sort(n.search_counts.begin(), n.search_counts.end());
        std::sort(n.product_views.begin(), n.product_views.end());
        return n;
    }
};

struct ValueLexicons {
    std::vector<std::string> premium = {"premium",  "luxury",   "handcrafted", "artisan",
                                        "prestige", "refined",  "crystal",     "signature"};
    std::vector<std::string> performance = {"durable",      "commercial grade", "professional",
                                            "performance",  "heavy duty",       "certified",
                                            "reinforced",   "specifications"};
    std::vector<std::string> ethics = {"organic",     "sustainable", "recycled", "fair trade",
                                       "eco",         "ethical",     "vegan",    "biodegradable"};

    const std::vector<std::string>& axis(const std::string& name) const {
        if (name == "premium") return premium;
        if (name == "performance") return performance;
        return ethics;
    }
};

// ---------------------------------------------------------------------------
// Product preference extraction

inline nlohmann::json preference_schema() {
    return {{"type", "object"},
            {"required", {"categories", "products", "reasoning"}},
            {"properties",
             {{"categories", {{"type", "array"}, {"minItems", 1}, {"items", {{"type", "string"}}}}},
              {"products", {{"type", "array"}, {"minItems", 1}, {"items", {{"type", "string"}}}}},
              {"reasoning", {{"type", "string"}}}}}};
}

inline std::string preference_prompt(const ShopMeta& shop, const ClusterSummary& summary) {
    nlohmann::json block;
    block["cluster_id"] = summary.cluster_id;
    auto refs_to_json = [](const std::vector<ProductRef>& refs) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : refs)
            arr.push_back({{"title", r.title}, {"price", r.price}, {"category", r.category}});
        return arr;
    };
    block["browsed"] = refs_to_json(summary.browsed);
    block["purchased"] = refs_to_json(summary.purchased);

    std::string prompt;
    prompt += "Shop: " + shop.name + " (industry: " + shop.industry + ", country: " +
              shop.country + ")\n";
    prompt += "Below is the aggregated product interaction summary for one buyer cluster.\n";
    prompt += "```json\n" + block.dump(2) + "\n```\n";
    prompt +=
        "Identify up to ten broad product categories this cluster gravitates to (generic "
        "descriptors only, never specific product names) and up to ten individual products "
        "unusually popular in the cluster. Reply with JSON: {\"categories\": [...], "
        "\"products\": [...], \"reasoning\": \"...\"}.";
    return prompt;
}

inline ProductPreferences extract_preferences(const ShopMeta& shop, const ClusterSummary& summary,
                                              JsonBackend& backend) {
    if (summary.browsed.empty() && summary.purchased.empty())
        throw Error(ErrorCode::EmptyClusterSummary,
                    "cluster " + std::to_string(summary.cluster_id) + " has no products");

    BackendRequest request;
    request.system_text =
        "You are an e-commerce analyst. You study buyer clusters and answer in strict JSON.";
    request.user_text = preference_prompt(shop, summary);
    request.schema = preference_schema();

    nlohmann::json reply;
    try {
        reply = complete_json(backend, request).value;
    } catch (const Error& ex) {
        if (ex.code() == ErrorCode::SchemaFailure)
            throw Error(ErrorCode::BackendSchemaFailure, ex.what());
        throw;
    }

    std::set<std::string> known_titles;
    for (const auto& r : summary.browsed) known_titles.insert(lowercase(r.title));
    for (const auto& r : summary.purchased) known_titles.insert(lowercase(r.title));

    ProductPreferences prefs;
    std::set<std::string> seen;
    for (const auto& cj : reply.at("categories")) {
        std::string c = trim(lowercase(cj.get<std::string>()));
        c.erase(std::remove(c.begin(), c.end(), '.'), c.end());
        // Categories must stay generic: drop anything matching a known product title.
        if (c.empty() || known_titles.count(c) || !seen.insert(c).second) continue;
        prefs.categories.push_back(c);
        if (prefs.categories.size() == 10) break;
    }
    for (const auto& pj : reply.at("products")) {
        const std::string p = trim(pj.get<std::string>());
        if (p.empty()) continue;
        prefs.products.push_back(p);
        if (prefs.products.size() == 10) break;
    }
    prefs.reasoning = reply.value("reasoning", "");
    if (prefs.categories.empty())
        throw Error(ErrorCode::BackendSchemaFailure, "no usable generic categories in reply");
    if (prefs.products.empty())
        throw Error(ErrorCode::BackendSchemaFailure, "no usable products in reply");
    return prefs;
}

// ---------------------------------------------------------------------------
// Intent calibration and generation

inline std::size_t calibrate_intent_mix(double a2c_mean, std::size_t n) {
    if (n < 2) throw Error(ErrorCode::TooFewAgents, "need at least 2 agents to mix intents");
    const std::int64_t rounded = stats::round_half_away(a2c_mean * static_cast<double>(n));
    const std::int64_t lo = 1;
    const std::int64_t hi = static_cast<std::int64_t>(n) - 1;
    return static_cast<std::size_t>(std::clamp(rounded, lo, hi));
}

inline const std::vector<std::string>& purchase_phrasings() {
    static const std::vector<std::string> v = {
        "You are ready to purchase.",
        "You are planning to buy.",
        "You are intending to make a purchase.",
    };
    return v;
}

inline const std::vector<std::string>& browsing_phrasings() {
    static const std::vector<std::string> v = {
        "You are researching options.",
        "You are comparing options before deciding.",
        "You are exploring what is available.",
    };
    return v;
}

inline bool intent_text_clean(const std::string& text) {
    for (const auto& term : forbidden_intent_terms()) {
        if (contains_ci(text, term)) return false;
    }
    return true;
}

// Exactly purchase_count purchase-focused intents (first positions), categories
// round-robin, phrasing cycling offset by the seed. Candidates containing a
// forbidden term are regenerated with the next category/phrasing combination.
inline std::vector<BuyerIntent> generate_intents(const ProductPreferences& prefs,
                                                 std::size_t purchase_count, std::size_t n,
                                                 std::uint64_t seed) {
    if (prefs.categories.empty()) throw Error(ErrorCode::NoCategories, "preferences carry no categories");
    if (purchase_count > n)
        throw Error(ErrorCode::InvalidArgument, "purchase_count exceeds agent count");

    std::vector<std::string> clean_categories;
    for (const auto& c : prefs.categories) {
        if (intent_text_clean(c)) clean_categories.push_back(c);
    }
    if (clean_categories.empty())
        throw Error(ErrorCode::NoCategories, "every category hits the forbidden-term filter");

    const auto& purchase = purchase_phrasings();
    const auto& browsing = browsing_phrasings();
    std::vector<BuyerIntent> intents;
    intents.reserve(n);
    std::size_t category_cursor = seed % clean_categories.size();
    std::size_t purchase_cursor = 0;
    std::size_t browse_cursor = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool focused = i < purchase_count;
        const auto& phrasings = focused ? purchase : browsing;
        std::size_t& phrase_cursor = focused ? purchase_cursor : browse_cursor;
        BuyerIntent intent;
        intent.purchase_focused = focused;
        // Regenerate on filter hits; phrasings are clean by construction so
        // only poisoned categories can trigger this.
        for (std::size_t attempt = 0; attempt < clean_categories.size(); ++attempt) {
            std::string category = clean_categories[category_cursor % clean_categories.size()];
            category.erase(std::remove(category.begin(), category.end(), '.'), category.end());
            const std::string& phrasing = phrasings[(seed + phrase_cursor) % phrasings.size()];
            const std::string text = "You are looking for " + category + ". " + phrasing;
            ++category_cursor;
            if (intent_text_clean(text)) {
                intent.category = category;
                intent.text = text;
                break;
            }
        }
        if (intent.text.empty()) throw Error(ErrorCode::NoCategories, "no clean intent text possible");
        ++phrase_cursor;
        intents.push_back(std::move(intent));
    }
    return intents;
}

// ---------------------------------------------------------------------------
// Buyer aggregation

inline BuyerAggregate aggregate_buyers(const std::vector<Session>& sessions,
                                       const Catalog* catalog = nullptr) {
    if (sessions.empty()) throw Error(ErrorCode::EmptyInput, "no sessions to aggregate");
    BuyerAggregate agg;
    agg.session_count = sessions.size();

    auto resolve = [&](const Event& e) {
        ProductRef ref;
        ref.title = e.product_title.value_or(e.product_id.value_or(""));
        ref.price = e.product_price.value_or(0);
        if (catalog && e.product_id) {
            if (const Product* p = catalog->find(*e.product_id)) {
                ref.title = p->title;
                ref.category = p->category;
                if (ref.price == 0) ref.price = p->price;
            }
        }
        return ref;
    };

    std::size_t a2c = 0;
    std::size_t checkout = 0;
    std::size_t purchase = 0;
    Money cart_sum = 0;
    std::size_t cart_n = 0;
    Money order_sum = 0;
    std::size_t order_n = 0;
    for (const auto& s : sessions) {
        const SessionFeatures f = extract_features(s);
        if (f.a2c_count > 0) ++a2c;
        if (f.checkout_flag) ++checkout;
        if (f.purchase_flag) ++purchase;
        if (f.cart_value > 0) {
            cart_sum += f.cart_value;
            ++cart_n;
        }
        if (f.order_value > 0) {
            order_sum += f.order_value;
            ++order_n;
        }
        agg.avg_duration_s += f.duration_s;
        agg.avg_search_count += static_cast<double>(f.search_count);
        agg.avg_product_views += static_cast<double>(f.product_views);

        for (const auto& e : s.events) {
            if (e.event_type == EventType::ProductView) agg.browsed_products.push_back(resolve(e));
            // Purchase events carry no product reference, so cart adds inside
            // purchasing sessions stand in for purchased products.
            if (e.event_type == EventType::AddToCart && f.purchase_flag)
                agg.purchased_products.push_back(resolve(e));
        }
    }
    const double denom = static_cast<double>(sessions.size());
    agg.a2c_rate = static_cast<double>(a2c) / denom;
    agg.checkout_rate = static_cast<double>(checkout) / denom;
    agg.purchase_rate = static_cast<double>(purchase) / denom;
    agg.avg_cart_value = cart_n ? cart_sum / static_cast<Money>(cart_n) : 0;
    agg.avg_order_value = order_n ? order_sum / static_cast<Money>(order_n) : 0;
    agg.avg_duration_s /= denom;
    agg.avg_search_count /= denom;
    agg.avg_product_views /= denom;
    return agg;
}

// ---------------------------------------------------------------------------
// Persona scoring

// Gap between max browsed and mean purchased price, category-normalized by
// dividing each price by its catalog-category median. Without purchases the
// mean browsed price stands in.
inline std::pair<PriceTier, double> score_price_sensitivity(const BuyerAggregate& agg,
                                                            const Catalog& catalog) {
    std::vector<double> browsed_norm;
    for (const auto& r : agg.browsed_products) {
        if (r.price <= 0) continue;
        const Money med = catalog.category_median_price(r.category);
        browsed_norm.push_back(med > 0 ? static_cast<double>(r.price) / static_cast<double>(med)
                                       : static_cast<double>(r.price));
    }
    if (browsed_norm.empty())
        throw Error(ErrorCode::NoPricedProducts, "no browsed product carries a price");

    std::vector<double> purchased_norm;
    for (const auto& r : agg.purchased_products) {
        if (r.price <= 0) continue;
        const Money med = catalog.category_median_price(r.category);
        purchased_norm.push_back(med > 0 ? static_cast<double>(r.price) / static_cast<double>(med)
                                         : static_cast<double>(r.price));
    }

    const double max_browsed = *std::max_element(browsed_norm.begin(), browsed_norm.end());
    const double reference =
        purchased_norm.empty() ? stats::mean(browsed_norm) : stats::mean(purchased_norm);
    const double gap = max_browsed > 0 ? (max_browsed - reference) / max_browsed : 0.0;
    return {price_tier_from_gap(gap), gap};
}

inline std::pair<double, ExplorationRegime> score_exploration(const BuyerAggregate& agg,
                                                              const ShopNorms& norms) {
    if (norms.durations_s.empty() || norms.search_counts.empty() || norms.product_views.empty())
        throw Error(ErrorCode::MissingNorms, "shop norms are empty");
    const double score = (stats::percentile_rank(norms.durations_s, agg.avg_duration_s) +
                          stats::percentile_rank(norms.search_counts, agg.avg_search_count) +
                          stats::percentile_rank(norms.product_views, agg.avg_product_views)) /
                         3.0;
    return {score, exploration_regime_from_score(score)};
}

namespace persona_detail {

inline bool ref_matches_axis(const ProductRef& r, const std::vector<std::string>& keywords) {
    for (const auto& kw : keywords) {
        if (contains_ci(r.title, kw) || contains_ci(r.category, kw)) return true;
    }
    return false;
}

inline double axis_share(const std::vector<ProductRef>& refs,
                         const std::vector<std::string>& keywords) {
    if (refs.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& r : refs) {
        if (ref_matches_axis(r, keywords)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(refs.size());
}

}  // namespace persona_detail

struct ValueScores {
    double premium = 0.0;
    double performance = 0.0;
    double ethics = 0.0;
};

// Purchased share reveals the stronger preference: score = 0.3 browsed share
// + 0.7 purchased share, falling back to the browsed share alone when the
// buyer never purchased.
inline ValueScores score_values(const BuyerAggregate& agg, const ValueLexicons& lexicons) {
    auto axis_score = [&](const std::vector<std::string>& keywords) {
        const double share_b = persona_detail::axis_share(agg.browsed_products, keywords);
        if (agg.purchased_products.empty()) return share_b;
        const double share_p = persona_detail::axis_share(agg.purchased_products, keywords);
        return 0.3 * share_b + 0.7 * share_p;
    };
    return {axis_score(lexicons.premium), axis_score(lexicons.performance),
            axis_score(lexicons.ethics)};
}

inline nlohmann::json persona_refine_schema() {
    return {{"type", "object"},
            {"required", {"reasoning", "confidence"}},
            {"properties",
             {{"reasoning", {{"type", "string"}}},
              {"confidence", {{"type", "number"}, {"minimum", 0.0}, {"maximum", 1.0}}}}}};
}

// Deterministic scores from the three scoring ops; an optional backend refines
// reasoning and confidence only and can never move the numeric scores.
inline PersonaDimensions build_persona(const BuyerAggregate& agg, const Catalog& catalog,
                                       const ShopNorms& norms, const ValueLexicons& lexicons,
                                       JsonBackend* backend = nullptr) {
    PersonaDimensions p;
    auto [tier, gap] = score_price_sensitivity(agg, catalog);
    p.price_tier = tier;
    p.price_gap = gap;
    auto [score, regime] = score_exploration(agg, norms);
    p.exploration = score;
    p.exploration_regime = regime;
    const ValueScores values = score_values(agg, lexicons);
    p.premium_focus = values.premium;
    p.performance_focus = values.performance;
    p.ethics_focus = values.ethics;

    const double base_confidence =
        1.0 - 1.0 / (1.0 + static_cast<double>(agg.session_count));
    for (const char* dim : {"price_tier", "exploration", "premium", "performance", "ethics"})
        p.confidence[dim] = base_confidence;
    p.reasoning = std::string("Derived from ") + std::to_string(agg.session_count) +
                  " sessions: " + price_tier_name(p.price_tier) + " pricing, " +
                  exploration_regime_name(p.exploration_regime) + " exploration, dominant axis " +
                  p.dominant_axis() + ".";

    if (backend) {
        BackendRequest request;
        request.system_text =
            "You review shopper persona scores and reply with JSON {reasoning, confidence}.";
        request.user_text =
            "Scores: gap=" + std::to_string(gap) + ", exploration=" + std::to_string(score) +
            ", premium=" + std::to_string(values.premium) +
            ", performance=" + std::to_string(values.performance) +
            ", ethics=" + std::to_string(values.ethics) +
            ". Sessions observed: " + std::to_string(agg.session_count) +
            ". Refine the reasoning text and an overall confidence in [0,1].";
        request.schema = persona_refine_schema();
        try {
            const auto reply = complete_json(*backend, request).value;
            p.reasoning = reply.value("reasoning", p.reasoning);
            const double c = std::clamp(reply.value("confidence", base_confidence), 0.0, 1.0);
            for (auto& [dim, v] : p.confidence) v = c;
        } catch (const Error&) {
            // Backend unavailable or incoherent: keep the deterministic persona.
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Prompt composition

inline std::string render_persona_block(const PersonaDimensions& p,
                                        const ProductPreferences& prefs) {
    std::string out;
    out += "Shopping profile:\n";
    switch (p.price_tier) {
        case PriceTier::Budget:
            out += "- Price tier: Budget (price-conscious and value-focused)\n";
            break;
        case PriceTier::MidRange:
            out += "- Price tier: Mid-range (balances price against quality)\n";
            break;
        case PriceTier::Premium:
            out += "- Price tier: Premium (drawn to luxury materials, refined craftsmanship)\n";
            break;
    }
    switch (p.exploration_regime) {
        case ExplorationRegime::Shallow:
            out += "- Exploration depth: Shallow (direct and focused)\n";
            break;
        case ExplorationRegime::Moderate:
            out += "- Exploration depth: Moderate (compares a few options before deciding)\n";
            break;
        case ExplorationRegime::Deep:
            out += "- Exploration depth: Deep (thorough, surveys the catalog)\n";
            break;
    }

    out += "Values:\n";
    const std::string axis = p.dominant_axis();
    if (axis == "premium") out += "- Premium & Craftsmanship\n";
    if (axis == "performance") out += "- Performance & Reliability\n";
    if (axis == "ethics") out += "- Ethics & Sustainability\n";

    out += "Shopping experience preferences:\n";
    switch (p.price_tier) {
        case PriceTier::Budget:
            out += "- Budget tier: responds to discount signals, social proof, and urgency cues.\n";
            break;
        case PriceTier::MidRange:
            out += "- Mid-range tier: weighs price against reviews and overall quality.\n";
            break;
        case PriceTier::Premium:
            out += "- Premium tier: looks for luxury materials, refined craftsmanship, and "
                   "prestige signals.\n";
            break;
    }
    if (axis == "performance")
        out += "- Performance values: attends to detailed specifications, customer reviews, and "
               "transparency about materials.\n";
    if (axis == "premium")
        out += "- Premium values: attends to craftsmanship stories, materials, and brand "
               "heritage.\n";
    if (axis == "ethics")
        out += "- Ethics values: attends to sustainability claims, sourcing transparency, and "
               "certifications.\n";

    if (!prefs.categories.empty()) {
        out += "Product preferences: ";
        for (std::size_t i = 0; i < prefs.categories.size(); ++i) {
            if (i) out += ", ";
            out += prefs.categories[i];
        }
        out += "\n";
    }
    return out;
}

inline std::vector<AgentProfile> compose_profiles(const std::vector<BuyerIntent>& intents,
                                                  const std::vector<PersonaDimensions>& personas,
                                                  const ProductPreferences& prefs,
                                                  std::size_t cluster_id = 0,
                                                  const std::string& shop_id = "") {
    if (intents.size() != personas.size())
        throw Error(ErrorCode::LengthMismatch,
                    std::to_string(intents.size()) + " intents vs " +
                        std::to_string(personas.size()) + " personas");
    std::vector<AgentProfile> profiles;
    profiles.reserve(intents.size());
    for (std::size_t i = 0; i < intents.size(); ++i) {
        AgentProfile profile;
        profile.intent = intents[i];
        profile.persona = personas[i];
        profile.preferences = prefs;
        profile.cluster_id = cluster_id;
        profile.shop_id = shop_id;
        profile.prompt_text = render_persona_block(personas[i], prefs);
        profiles.push_back(std::move(profile));
    }
    return profiles;
}

// Largest-remainder apportionment with a floor of one agent per non-empty cluster.
inline std::vector<std::size_t> allocate_agents(const std::vector<std::size_t>& cluster_sizes,
                                                std::size_t total_agents) {
    std::size_t nonempty = 0;
    std::size_t total_sessions = 0;
    for (std::size_t s : cluster_sizes) {
        if (s > 0) ++nonempty;
        total_sessions += s;
    }
    if (nonempty == 0) throw Error(ErrorCode::EmptyInput, "all clusters are empty");
    if (total_agents < nonempty)
        throw Error(ErrorCode::TooFewAgents, "fewer agents than non-empty clusters");

    const std::size_t k = cluster_sizes.size();
    std::vector<std::size_t> out(k, 0);
    std::vector<double> remainder(k, 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        if (cluster_sizes[i] == 0) continue;
        const double quota = static_cast<double>(total_agents) *
                             static_cast<double>(cluster_sizes[i]) /
                             static_cast<double>(total_sessions);
        out[i] = static_cast<std::size_t>(quota);
        remainder[i] = quota - static_cast<double>(out[i]);
        assigned += out[i];
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < k; ++i) {
        if (cluster_sizes[i] > 0) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t j = 0; assigned < total_agents; j = (j + 1) % order.size()) {
        ++out[order[j]];
        ++assigned;
    }
    // Enforce the floor by taking from the largest allocation.
    for (std::size_t i = 0; i < k; ++i) {
        while (cluster_sizes[i] > 0 && out[i] == 0) {
            std::size_t donor = k;
            for (std::size_t j = 0; j < k; ++j) {
                if (out[j] > 1 && (donor == k || out[j] > out[donor])) donor = j;
            }
            if (donor == k) break;  // cannot happen while total_agents >= nonempty
            --out[donor];
            ++out[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const ProductPreferences& p) {
    j = {{"categories", p.categories}, {"products", p.products}, {"reasoning", p.reasoning}};
}

inline void from_json(const nlohmann::json& j, ProductPreferences& p) {
    j.at("categories").get_to(p.categories);
    j.at("products").get_to(p.products);
    p.reasoning = j.value("reasoning", "");
}

inline void to_json(nlohmann::json& j, const BuyerIntent& i) {
    j = {{"category", i.category}, {"purchase_focused", i.purchase_focused}, {"text", i.text}};
}

inline void from_json(const nlohmann::json& j, BuyerIntent& i) {
    j.at("category").get_to(i.category);
    j.at("purchase_focused").get_to(i.purchase_focused);
    j.at("text").get_to(i.text);
}

inline void to_json(nlohmann::json& j, const PersonaDimensions& p) {
    j = {{"price_tier", price_tier_name(p.price_tier)},
         {"price_gap", p.price_gap},
         {"exploration", p.exploration},
         {"exploration_regime", exploration_regime_name(p.exploration_regime)},
         {"premium_focus", p.premium_focus},
         {"performance_focus", p.performance_focus},
         {"ethics_focus", p.ethics_focus},
         {"confidence", p.confidence},
         {"reasoning", p.reasoning}};
}

inline void from_json(const nlohmann::json& j, PersonaDimensions& p) {
    const std::string tier = j.at("price_tier").get<std::string>();
    p.price_tier = tier == "Budget" ? PriceTier::Budget
                   : tier == "MidRange" ? PriceTier::MidRange
                                        : PriceTier::Premium;
    j.at("price_gap").get_to(p.price_gap);
    j.at("exploration").get_to(p.exploration);
    const std::string regime = j.at("exploration_regime").get<std::string>();
    p.exploration_regime = regime == "Shallow" ? ExplorationRegime::Shallow
                           : regime == "Moderate" ? ExplorationRegime::Moderate
                                                  : ExplorationRegime::Deep;
    j.at("premium_focus").get_to(p.premium_focus);
    j.at("performance_focus").get_to(p.performance_focus);
    j.at("ethics_focus").get_to(p.ethics_focus);
    if (j.contains("confidence")) j.at("confidence").get_to(p.confidence);
    p.reasoning = j.value("reasoning", "");
}

inline void to_json(nlohmann::json& j, const AgentProfile& a) {
    j = {{"intent", a.intent},         {"persona", a.persona}, {"preferences", a.preferences},
         {"cluster_id", a.cluster_id}, {"shop_id", a.shop_id}, {"prompt_text", a.prompt_text}};
}

inline void from_json(const nlohmann::json& j, AgentProfile& a) {
    j.at("intent").get_to(a.intent);
    j.at("persona").get_to(a.persona);
    j.at("preferences").get_to(a.preferences);
    j.at("cluster_id").get_to(a.cluster_id);
    j.at("shop_id").get_to(a.shop_id);
    a.prompt_text = j.value("prompt_text", "");
}

inline void to_json(nlohmann::json& j, const ValueLexicons& l) {
    j = {{"premium", l.premium}, {"performance", l.performance}, {"ethics", l.ethics}};
}

inline void from_json(const nlohmann::json& j, ValueLexicons& l) {
    if (j.contains("premium")) j.at("premium").get_to(l.premium);
    if (j.contains("performance")) j.at("performance").get_to(l.performance);
    if (j.contains("ethics")) j.at("ethics").get_to(l.ethics);
}

}  // namespace simgym
