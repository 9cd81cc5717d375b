#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "simgym/common.hpp"

namespace simgym {

enum class EventType { PageView, ProductView, Search, AddToCart, BeginCheckout, Purchase };

inline const char* event_type_name(EventType t) {
    switch (t) {
        case EventType::PageView: return "page_view";
        case EventType::ProductView: return "product_view";
        case EventType::Search: return "search";
        case EventType::AddToCart: return "add_to_cart";
        case EventType::BeginCheckout: return "begin_checkout";
        case EventType::Purchase: return "purchase";
    }
    return "?";
}

inline std::optional<EventType> event_type_from_name(const std::string& s) {
    if (s == "page_view") return EventType::PageView;
    if (s == "product_view") return EventType::ProductView;
    if (s == "search") return EventType::Search;
    if (s == "add_to_cart") return EventType::AddToCart;
    if (s == "begin_checkout") return EventType::BeginCheckout;
    if (s == "purchase") return EventType::Purchase;
    return std::nullopt;
}

struct Event {
    std::string session_id;
    std::string buyer_id;
    std::string shop_id;
    std::int64_t timestamp_ms = 0;
    EventType event_type = EventType::PageView;
    std::optional<std::string> product_id;
    std::optional<std::string> product_title;
    std::optional<Money> product_price;
    std::optional<std::string> search_query;
    std::optional<Money> cart_value;
    std::optional<Money> order_value;
};

struct Session {
    std::string session_id;
    std::string buyer_id;
    std::string shop_id;
    std::vector<Event> events;  // ascending timestamp

    std::int64_t duration_ms() const {
        if (events.empty()) return 0;
        return events.back().timestamp_ms - events.front().timestamp_ms;
    }
};

// Stage-1 feature vector. Field order is the feature-vector order and must not change.
struct SessionFeatures {
    double duration_s = 0.0;
    std::int64_t event_count = 0;
    std::int64_t product_views = 0;
    std::int64_t distinct_products = 0;
    std::int64_t search_count = 0;
    std::int64_t a2c_count = 0;
    int checkout_flag = 0;
    int purchase_flag = 0;
    Money cart_value = 0;
    Money order_value = 0;

    static constexpr std::size_t kDim = 10;

    std::vector<double> to_vector() const {
        return {duration_s,
                static_cast<double>(event_count),
                static_cast<double>(product_views),
                static_cast<double>(distinct_products),
                static_cast<double>(search_count),
                static_cast<double>(a2c_count),
                static_cast<double>(checkout_flag),
                static_cast<double>(purchase_flag),
                static_cast<double>(cart_value),
                static_cast<double>(order_value)};
    }

    static const std::vector<std::string>& names() {
        static const std::vector<std::string> n = {
            "duration_s",     "event_count",  "product_views", "distinct_products", "search_count",
            "a2c_count",      "checkout_flag", "purchase_flag", "cart_value",        "order_value"};
        return n;
    }
};

struct StandardizedMatrix {
    std::vector<std::vector<double>> rows;
    std::vector<double> means;
    std::vector<double> stds;  // population; 0 marks a zero-variance column
};

struct ParseIssue {
    std::size_t line_number = 0;  // 1-based
    std::string message;
};

struct ParseResult {
    std::vector<Event> events;
    std::vector<ParseIssue> issues;
};

namespace detail {

inline std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw Error(ErrorCode::SchemaError, std::string(key) + " must be a string");
    return it->get<std::string>();
}

inline std::optional<Money> opt_money(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number_integer())
        throw Error(ErrorCode::SchemaError, std::string(key) + " must be integer minor units");
    return it->get<Money>();
}

inline Event parse_event_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, "event line must be a JSON object");
    Event e;
    for (const char* key : {"session_id", "buyer_id", "shop_id"}) {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string())
            throw Error(ErrorCode::SchemaError, std::string("missing string field ") + key);
    }
    e.session_id = j.at("session_id").get<std::string>();
    e.buyer_id = j.at("buyer_id").get<std::string>();
    e.shop_id = j.at("shop_id").get<std::string>();

    auto ts = j.find("ts");
    if (ts == j.end() || !ts->is_number_integer())
        throw Error(ErrorCode::SchemaError, "missing integer field ts");
    e.timestamp_ms = ts->get<std::int64_t>();
    if (e.timestamp_ms < 0) throw Error(ErrorCode::SchemaError, "ts must be >= 0");

    auto ty = j.find("type");
    if (ty == j.end() || !ty->is_string()) throw Error(ErrorCode::SchemaError, "missing string field type");
    auto parsed = event_type_from_name(ty->get<std::string>());
    if (!parsed) throw Error(ErrorCode::SchemaError, "unknown event type " + ty->get<std::string>());
    e.event_type = *parsed;

    e.product_id = opt_string(j, "product_id");
    e.product_title = opt_string(j, "product_title");
    e.product_price = opt_money(j, "product_price");
    e.search_query = opt_string(j, "search_query");
    e.cart_value = opt_money(j, "cart_value");
    e.order_value = opt_money(j, "order_value");

    const bool wants_product =
        e.event_type == EventType::ProductView || e.event_type == EventType::AddToCart;
    if (wants_product != e.product_id.has_value())
        throw Error(ErrorCode::SchemaError, "product_id present iff type is product_view or add_to_cart");
    const bool wants_order = e.event_type == EventType::Purchase;
    if (wants_order != e.order_value.has_value())
        throw Error(ErrorCode::SchemaError, "order_value present iff type is purchase");
    return e;
}

}  // namespace detail

// Parses line-delimited JSON events. Malformed lines are collected with their
// line numbers; the call only fails when the stream is empty or every line is bad.
inline ParseResult parse_events(std::istream& in) {
    ParseResult result;
    std::string line;
    std::size_t line_number = 0;
    std::size_t nonblank = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (trim(line).empty()) continue;
        ++nonblank;
        try {
            result.events.push_back(detail::parse_event_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& ex) {
            result.issues.push_back({line_number, ex.what()});
        } catch (const Error& ex) {
            result.issues.push_back({line_number, ex.what()});
        }
    }
    if (nonblank == 0) throw Error(ErrorCode::EmptyInput, "no events in stream");
    if (result.events.empty())
        throw Error(ErrorCode::SchemaError, "all " + std::to_string(nonblank) + " lines malformed");
    return result;
}

inline ParseResult parse_events(const std::string& text) {
    std::istringstream in(text);
    return parse_events(in);
}

// Groups events by session_id; each group time-sorted, groups ordered by first
// timestamp (ties by session_id).
inline std::vector<Session> sessionize(const std::vector<Event>& events) {
    std::map<std::string, Session> by_id;
    for (const Event& e : events) {
        auto [it, inserted] = by_id.try_emplace(e.session_id);
        Session& s = it->second;
        if (inserted) {
            s.session_id = e.session_id;
            s.buyer_id = e.buyer_id;
            s.shop_id = e.shop_id;
        } else if (s.buyer_id != e.buyer_id || s.shop_id != e.shop_id) {
            throw Error(ErrorCode::ConflictingSessionOwner,
                        "session " + e.session_id + " appears under multiple buyers or shops");
        }
        s.events.push_back(e);
    }
    std::vector<Session> sessions;
    sessions.reserve(by_id.size());
    for (auto& [id, s] : by_id) {
        std::stable_sort(s.events.begin(), s.events.end(),
                         [](const Event& a, const Event& b) { return a.timestamp_ms < b.timestamp_ms; });
        sessions.push_back(std::move(s));
    }
    std::stable_sort(sessions.begin(), sessions.end(), [](const Session& a, const Session& b) {
        const auto ta = a.events.front().timestamp_ms;
        const auto tb = b.events.front().timestamp_ms;
        if (ta != tb) return ta < tb;
        return a.session_id < b.session_id;
    });
    return sessions;
}

inline SessionFeatures extract_features(const Session& session) {
    SessionFeatures f;
    f.duration_s = static_cast<double>(session.duration_ms()) / 1000.0;
    f.event_count = static_cast<std::int64_t>(session.events.size());
    std::set<std::string> distinct;
    for (const Event& e : session.events) {
        switch (e.event_type) {
            case EventType::PageView: break;
            case EventType::ProductView:
                ++f.product_views;
                if (e.product_id) distinct.insert(*e.product_id);
                break;
            case EventType::Search: ++f.search_count; break;
            case EventType::AddToCart: ++f.a2c_count; break;
            case EventType::BeginCheckout: f.checkout_flag = 1; break;
            case EventType::Purchase:
                f.purchase_flag = 1;
                if (e.order_value) f.order_value += *e.order_value;
                break;
        }
        if (e.cart_value && *e.cart_value > f.cart_value) f.cart_value = *e.cart_value;
    }
    f.distinct_products = static_cast<std::int64_t>(distinct.size());
    return f;
}

// Z-scores each column with population std; zero-variance columns map to all
// zeros and keep std 0 so later assignment can apply the same guard.
inline StandardizedMatrix standardize(const std::vector<SessionFeatures>& features) {
    if (features.empty()) throw Error(ErrorCode::EmptyInput, "standardize over zero vectors");
    const std::size_t n = features.size();
    const std::size_t d = SessionFeatures::kDim;
    StandardizedMatrix m;
    m.rows.assign(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) m.rows[i] = features[i].to_vector();

    m.means.assign(d, 0.0);
    m.stds.assign(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += m.rows[i][c];
        m.means[c] = s / static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double delta = m.rows[i][c] - m.means[c];
            v += delta * delta;
        }
        m.stds[c] = std::sqrt(v / static_cast<double>(n));
    }
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            m.rows[i][c] = m.stds[c] > 0.0 ? (m.rows[i][c] - m.means[c]) / m.stds[c] : 0.0;
        }
    }
    return m;
}

// Applies a fitted standardizer to one raw feature vector.
inline std::vector<double> apply_standardizer(const StandardizedMatrix& m, const SessionFeatures& f) {
    const auto raw = f.to_vector();
    if (raw.size() != m.means.size())
        throw Error(ErrorCode::DimensionMismatch, "feature dimension mismatch");
    std::vector<double> z(raw.size(), 0.0);
    for (std::size_t c = 0; c < raw.size(); ++c) {
        z[c] = m.stds[c] > 0.0 ? (raw[c] - m.means[c]) / m.stds[c] : 0.0;
    }
    return z;
}

inline void to_json(nlohmann::json& j, const SessionFeatures& f) {
    j = {{"duration_s", f.duration_s},
         {"event_count", f.event_count},
         {"product_views", f.product_views},
         {"distinct_products", f.distinct_products},
         {"search_count", f.search_count},
         {"a2c_count", f.a2c_count},
         {"checkout_flag", f.checkout_flag},
         {"purchase_flag", f.purchase_flag},
         {"cart_value", f.cart_value},
         {"order_value", f.order_value}};
}

inline void from_json(const nlohmann::json& j, SessionFeatures& f) {
    j.at("duration_s").get_to(f.duration_s);
    j.at("event_count").get_to(f.event_count);
    j.at("product_views").get_to(f.product_views);
    j.at("distinct_products").get_to(f.distinct_products);
    j.at("search_count").get_to(f.search_count);
    j.at("a2c_count").get_to(f.a2c_count);
    j.at("checkout_flag").get_to(f.checkout_flag);
    j.at("purchase_flag").get_to(f.purchase_flag);
    j.at("cart_value").get_to(f.cart_value);
    j.at("order_value").get_to(f.order_value);
}

}  // namespace simgym
