#pragma once

#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "simgym/axtree.hpp"
#include "simgym/catalog.hpp"
#include "simgym/common.hpp"

namespace simgym {

struct ThemeSpec {
    std::string theme_id;
    std::vector<std::string> home_collections;  // ordered collection ids
    std::size_t products_per_page = 12;
    std::vector<std::string> nav_links;
    bool search_enabled = true;
    std::vector<std::string> product_card_fields = {"title", "price"};  // of title/price/reviews/badge
    std::size_t collection_depth = 1;  // clicks from home to a product list

    bool card_has(const std::string& field) const {
        return std::find(product_card_fields.begin(), product_card_fields.end(), field) !=
               product_card_fields.end();
    }
};

struct CollectionSpec {
    std::string id;
    std::string title;
    std::vector<std::string> product_ids;
};

struct Storefront {
    ShopMeta shop;
    Catalog catalog;
    std::vector<CollectionSpec> collections;
    ThemeSpec control;
    ThemeSpec treatment;

    const CollectionSpec* find_collection(const std::string& id) const {
        for (const auto& c : collections) {
            if (c.id == id) return &c;
        }
        return nullptr;
    }

    const ThemeSpec& theme(const std::string& name) const {
        if (name == "control" || name == control.theme_id) return control;
        if (name == "treatment" || name == treatment.theme_id) return treatment;
        throw Error(ErrorCode::ConfigError, "unknown theme " + name);
    }
};

struct Page {
    enum class Kind { Home, Hub, Collection, Product, Search, Cart, Checkout, External, NotFound };
    Kind kind = Kind::Home;
    std::string id;           // collection or product id; external url; search query
    std::size_t page_number = 1;  // collections only
    std::size_t hub_level = 1;    // hubs only

    bool operator==(const Page&) const = default;
};

inline std::string page_url(const Page& p) {
    switch (p.kind) {
        case Page::Kind::Home: return "/";
        case Page::Kind::Hub: return "/collections?level=" + std::to_string(p.hub_level);
        case Page::Kind::Collection:
            return p.page_number <= 1 ? "/collection/" + p.id
                                      : "/collection/" + p.id + "?page=" + std::to_string(p.page_number);
        case Page::Kind::Product: return "/product/" + p.id;
        case Page::Kind::Search: return "/search?q=" + p.id;
        case Page::Kind::Cart: return "/cart";
        case Page::Kind::Checkout: return "/checkout";
        case Page::Kind::External: return "external:" + p.id;
        case Page::Kind::NotFound: return "/notfound";
    }
    return "/";
}

struct CartItem {
    std::string product_id;
    Money price = 0;  // catalog price at add time
};

struct EnvState {
    const Storefront* storefront = nullptr;
    const ThemeSpec* theme = nullptr;
    Page current_page;
    std::vector<CartItem> cart;
    std::vector<std::string> visited;  // append-only url history
    std::vector<Page> back_stack;
    std::string pending_search;
    std::string last_added;  // product id shown in the confirmation region
    std::uint64_t rng_seed = 0;

    Money cart_value() const {
        Money total = 0;
        for (const auto& item : cart) total += item.price;
        return total;
    }
};

inline EnvState make_env(const Storefront& sf, const std::string& theme_name,
                         std::uint64_t seed = 0) {
    EnvState s;
    s.storefront = &sf;
    s.theme = &sf.theme(theme_name);
    s.current_page = Page{};
    s.visited.push_back(page_url(s.current_page));
    s.rng_seed = seed;
    return s;
}

struct Action {
    struct Click { std::string ref; };
    struct TypeText { std::string ref; std::string text; };
    struct Scroll { std::string direction; };
    struct Navigate { std::string url; };
    struct Back {};
    std::variant<Click, TypeText, Scroll, Navigate, Back> value;

    static Action click(std::string ref) { return {Click{std::move(ref)}}; }
    static Action type_text(std::string ref, std::string text) {
        return {TypeText{std::move(ref), std::move(text)}};
    }
    static Action scroll(std::string direction) { return {Scroll{std::move(direction)}}; }
    static Action navigate(std::string url) { return {Navigate{std::move(url)}}; }
    static Action back() { return {Back{}}; }

    bool operator==(const Action& other) const {
        if (value.index() != other.value.index()) return false;
        if (auto* c = std::get_if<Click>(&value))
            return c->ref == std::get<Click>(other.value).ref;
        if (auto* t = std::get_if<TypeText>(&value)) {
            const auto& o = std::get<TypeText>(other.value);
            return t->ref == o.ref && t->text == o.text;
        }
        if (auto* s = std::get_if<Scroll>(&value))
            return s->direction == std::get<Scroll>(other.value).direction;
        if (auto* n = std::get_if<Navigate>(&value))
            return n->url == std::get<Navigate>(other.value).url;
        return true;  // Back
    }
};

inline std::string action_to_string(const Action& a) {
    if (auto* c = std::get_if<Action::Click>(&a.value)) return "click(" + c->ref + ")";
    if (auto* t = std::get_if<Action::TypeText>(&a.value))
        return "type(" + t->ref + ", \"" + t->text + "\")";
    if (auto* s = std::get_if<Action::Scroll>(&a.value)) return "scroll(" + s->direction + ")";
    if (auto* n = std::get_if<Action::Navigate>(&a.value)) return "navigate(" + n->url + ")";
    return "back";
}

struct StepError {
    std::string code;  // no_such_ref | out_of_stock | nav_blocked
    std::string message;
};

struct Observation {
    std::string url;
    AccessibilityNode root;
};

struct StepResult {
    Observation observation;  // post-action state, present even on error
    std::optional<StepError> error;
};

// What an interactive element does when activated.
struct UiTarget {
    enum class Kind { Goto, AddToCart, SearchBox, SearchSubmit };
    Kind kind = Kind::Goto;
    Page page;               // Goto
    std::string product_id;  // AddToCart
};

namespace env_detail {

struct Renderer {
    const EnvState& state;
    int next_ref = 1;
    std::map<std::string, UiTarget> targets;

    std::string ref_for(UiTarget target) {
        std::string ref = "e" + std::to_string(next_ref++);
        targets.emplace(ref, std::move(target));
        return ref;
    }

    AccessibilityNode link_to(const std::string& name, Page page) {
        UiTarget t;
        t.kind = UiTarget::Kind::Goto;
        t.page = std::move(page);
        return AccessibilityNode(AxRole::Link, name, ref_for(std::move(t)));
    }

    Page nav_target(const std::string& label) const {
        if (lowercase(label) == "home") return Page{};
        for (const auto& c : state.storefront->collections) {
            if (lowercase(c.title) == lowercase(label))
                return Page{Page::Kind::Collection, c.id, 1, 1};
        }
        return Page{Page::Kind::NotFound, "", 1, 1};
    }

    AccessibilityNode navigation() {
        AccessibilityNode nav(AxRole::Region, "navigation");
        nav.children.push_back(link_to("Home", Page{}));
        for (const auto& label : state.theme->nav_links)
            nav.children.push_back(link_to(label, nav_target(label)));
        if (state.theme->search_enabled) {
            UiTarget box;
            box.kind = UiTarget::Kind::SearchBox;
            nav.children.emplace_back(AxRole::Textbox, "Search products", ref_for(std::move(box)));
            UiTarget submit;
            submit.kind = UiTarget::Kind::SearchSubmit;
            nav.children.emplace_back(AxRole::Button, "Search", ref_for(std::move(submit)));
        }
        nav.children.push_back(link_to("Cart (" + std::to_string(state.cart.size()) + ")",
                                       Page{Page::Kind::Cart, "", 1, 1}));
        return nav;
    }

    AccessibilityNode product_card(const Product& p) {
        AccessibilityNode item(AxRole::ListItem, "");
        item.children.push_back(link_to(p.title, Page{Page::Kind::Product, p.product_id, 1, 1}));
        if (state.theme->card_has("price"))
            item.children.emplace_back(AxRole::Text, format_money(p.price));
        if (state.theme->card_has("reviews")) {
            // Deterministic pseudo review summary per product.
            const std::uint64_t h = rng::hash_string(p.product_id);
            const int tenths = 30 + static_cast<int>(h % 21);  // 3.0 .. 5.0
            const int count = 3 + static_cast<int>((h >> 8) % 200);
            item.children.emplace_back(AxRole::Text, std::to_string(tenths / 10) + "." +
                                                         std::to_string(tenths % 10) + " stars (" +
                                                         std::to_string(count) + " reviews)");
        }
        if (state.theme->card_has("badge") && !p.in_stock)
            item.children.emplace_back(AxRole::Text, "Out of stock");
        return item;
    }

    void render_collection_links(AccessibilityNode& main) {
        for (const auto& cid : state.theme->home_collections) {
            const auto* c = state.storefront->find_collection(cid);
            if (c) main.children.push_back(link_to(c->title, Page{Page::Kind::Collection, c->id, 1, 1}));
        }
    }

    AccessibilityNode main_home() {
        AccessibilityNode main(AxRole::Region, "main");
        main.children.emplace_back(AxRole::Heading, state.storefront->shop.name);
        if (state.theme->collection_depth <= 1) {
            render_collection_links(main);
        } else {
            main.children.push_back(link_to("Browse all collections", Page{Page::Kind::Hub, "", 1, 1}));
        }
        return main;
    }

    AccessibilityNode main_hub() {
        AccessibilityNode main(AxRole::Region, "main");
        main.children.emplace_back(AxRole::Heading, "Collections");
        // Hub at level collection_depth-1 is the last stop before product lists.
        if (state.current_page.hub_level + 1 >= state.theme->collection_depth) {
            render_collection_links(main);
        } else {
            main.children.push_back(link_to(
                "All collections", Page{Page::Kind::Hub, "", 1, state.current_page.hub_level + 1}));
        }
        return main;
    }

    AccessibilityNode main_collection() {
        AccessibilityNode main(AxRole::Region, "main");
        const auto* c = state.storefront->find_collection(state.current_page.id);
        if (!c) {
            main.children.emplace_back(AxRole::Heading, "Page not found");
            return main;
        }
        main.children.emplace_back(AxRole::Heading, c->title);
        const std::size_t per = state.theme->products_per_page;
        const std::size_t page = state.current_page.page_number;
        const std::size_t begin = (page - 1) * per;
        const std::size_t end = std::min(begin + per, c->product_ids.size());
        for (std::size_t i = begin; i < end; ++i) {
            if (const Product* p = state.storefront->catalog.find(c->product_ids[i]))
                main.children.push_back(product_card(*p));
        }
        if (page > 1) {
            main.children.push_back(
                link_to("Previous", Page{Page::Kind::Collection, c->id, page - 1, 1}));
        }
        if (end < c->product_ids.size()) {
            main.children.push_back(
                link_to("Next", Page{Page::Kind::Collection, c->id, page + 1, 1}));
        }
        return main;
    }

    AccessibilityNode main_product() {
        AccessibilityNode main(AxRole::Region, "main");
        const Product* p = state.storefront->catalog.find(state.current_page.id);
        if (!p) {
            main.children.emplace_back(AxRole::Heading, "Page not found");
            return main;
        }
        main.children.emplace_back(AxRole::Heading, p->title);
        main.children.emplace_back(AxRole::Text, "price " + format_money(p->price));
        main.children.emplace_back(AxRole::Text, "category: " + p->category);
        if (!p->tags.empty()) {
            std::string tags = "tags: ";
            for (std::size_t i = 0; i < p->tags.size(); ++i) {
                if (i) tags += ", ";
                tags += p->tags[i];
            }
            main.children.emplace_back(AxRole::Text, tags);
        }
        if (!p->in_stock) main.children.emplace_back(AxRole::Text, "Out of stock");
        UiTarget add;
        add.kind = UiTarget::Kind::AddToCart;
        add.product_id = p->product_id;
        main.children.emplace_back(AxRole::Button, "Add to cart", ref_for(std::move(add)));
        if (state.last_added == p->product_id) {
            AccessibilityNode confirm(AxRole::Region, "cart-confirmation");
            confirm.children.emplace_back(AxRole::Text, "Added to cart: " + p->title);
            confirm.children.emplace_back(
                AxRole::Text, "cart total " + format_money(state.cart_value()));
            main.children.push_back(std::move(confirm));
        }
        return main;
    }

    AccessibilityNode main_search() {
        AccessibilityNode main(AxRole::Region, "main");
        const std::string& q = state.current_page.id;
        main.children.emplace_back(AxRole::Heading, "Search results for \"" + q + "\"");
        std::size_t shown = 0;
        if (!q.empty()) {
            for (const auto& p : state.storefront->catalog.products()) {
                if (shown >= state.theme->products_per_page) break;
                bool hit = contains_ci(p.title, q) || contains_ci(p.category, q);
                for (const auto& tag : p.tags) hit = hit || contains_ci(tag, q);
                if (hit) {
                    main.children.push_back(product_card(p));
                    ++shown;
                }
            }
        }
        if (shown == 0) main.children.emplace_back(AxRole::Text, "No matching products");
        return main;
    }

    AccessibilityNode main_cart() {
        AccessibilityNode main(AxRole::Region, "main");
        main.children.emplace_back(AxRole::Heading, "Your cart");
        for (const auto& item : state.cart) {
            const Product* p = state.storefront->catalog.find(item.product_id);
            AccessibilityNode li(AxRole::ListItem, "");
            li.children.emplace_back(AxRole::Text, (p ? p->title : item.product_id) + " " +
                                                       format_money(item.price));
            main.children.push_back(std::move(li));
        }
        main.children.emplace_back(AxRole::Text,
                                   "cart total " + format_money(state.cart_value()));
        if (!state.cart.empty()) {
            main.children.push_back(link_to("Begin checkout", Page{Page::Kind::Checkout, "", 1, 1}));
        } else {
            main.children.emplace_back(AxRole::Text, "Cart is empty");
        }
        return main;
    }

    AccessibilityNode main_static(const std::string& heading, const std::string& body) {
        AccessibilityNode main(AxRole::Region, "main");
        main.children.emplace_back(AxRole::Heading, heading);
        if (!body.empty()) main.children.emplace_back(AxRole::Text, body);
        return main;
    }

    AccessibilityNode render() {
        AccessibilityNode root(AxRole::Region, "page");
        root.children.push_back(navigation());
        switch (state.current_page.kind) {
            case Page::Kind::Home: root.children.push_back(main_home()); break;
            case Page::Kind::Hub: root.children.push_back(main_hub()); break;
            case Page::Kind::Collection: root.children.push_back(main_collection()); break;
            case Page::Kind::Product: root.children.push_back(main_product()); break;
            case Page::Kind::Search: root.children.push_back(main_search()); break;
            case Page::Kind::Cart: root.children.push_back(main_cart()); break;
            case Page::Kind::Checkout:
                root.children.push_back(main_static(
                    "Checkout", "Checkout started. Payment is disabled in this environment."));
                break;
            case Page::Kind::External:
                root.children.push_back(main_static("External site", state.current_page.id));
                break;
            case Page::Kind::NotFound:
                root.children.push_back(main_static("Page not found", ""));
                break;
        }
        return root;
    }
};

struct Rendered {
    AccessibilityNode root;
    std::map<std::string, UiTarget> targets;
};

inline Rendered render_page(const EnvState& state) {
    Renderer r{state, 1, {}};
    Rendered out;
    out.root = r.render();
    out.targets = std::move(r.targets);
    return out;
}

inline void navigate_to(EnvState& state, Page page) {
    state.back_stack.push_back(state.current_page);
    state.current_page = std::move(page);
    state.visited.push_back(page_url(state.current_page));
    state.last_added.clear();
}

inline std::optional<Page> parse_internal_url(const std::string& url) {
    auto query_value = [](const std::string& u, const std::string& key) -> std::string {
        const std::size_t q = u.find('?');
        if (q == std::string::npos) return "";
        std::string rest = u.substr(q + 1);
        std::size_t pos = 0;
        while (pos < rest.size()) {
            std::size_t amp = rest.find('&', pos);
            if (amp == std::string::npos) amp = rest.size();
            const std::string kv = rest.substr(pos, amp - pos);
            const std::size_t eq = kv.find('=');
            if (eq != std::string::npos && kv.substr(0, eq) == key) return kv.substr(eq + 1);
            pos = amp + 1;
        }
        return "";
    };
    const std::string path = url.substr(0, url.find('?'));
    if (path == "/") return Page{};
    if (path == "/collections") {
        Page p{Page::Kind::Hub, "", 1, 1};
        const std::string level = query_value(url, "level");
        if (!level.empty()) p.hub_level = static_cast<std::size_t>(std::max(1L, std::atol(level.c_str())));
        return p;
    }
    if (path.rfind("/collection/", 0) == 0) {
        Page p{Page::Kind::Collection, path.substr(12), 1, 1};
        const std::string page = query_value(url, "page");
        if (!page.empty()) p.page_number = static_cast<std::size_t>(std::max(1L, std::atol(page.c_str())));
        return p;
    }
    if (path.rfind("/product/", 0) == 0) return Page{Page::Kind::Product, path.substr(9), 1, 1};
    if (path == "/search") return Page{Page::Kind::Search, query_value(url, "q"), 1, 1};
    if (path == "/cart") return Page{Page::Kind::Cart, "", 1, 1};
    if (path == "/checkout") return Page{Page::Kind::Checkout, "", 1, 1};
    return std::nullopt;
}

}  // namespace env_detail

inline Observation observe(const EnvState& state) {
    auto rendered = env_detail::render_page(state);
    return Observation{page_url(state.current_page), std::move(rendered.root)};
}

inline StepResult apply(EnvState& state, const Action& action) {
    StepResult result;
    auto fail = [&](const std::string& code, const std::string& message) {
        result.error = StepError{code, message};
    };

    if (auto* click = std::get_if<Action::Click>(&action.value)) {
        auto rendered = env_detail::render_page(state);
        auto it = rendered.targets.find(click->ref);
        if (it == rendered.targets.end()) {
            fail("no_such_ref", "no interactive element " + click->ref);
        } else {
            const UiTarget& target = it->second;
            switch (target.kind) {
                case UiTarget::Kind::Goto: env_detail::navigate_to(state, target.page); break;
                case UiTarget::Kind::AddToCart: {
                    const Product* p = state.storefront->catalog.find(target.product_id);
                    if (!p) {
                        fail("no_such_ref", "product vanished");
                    } else if (!p->in_stock) {
                        fail("out_of_stock", p->title + " is out of stock");
                    } else {
                        state.cart.push_back({p->product_id, p->price});
                        state.last_added = p->product_id;
                    }
                    break;
                }
                case UiTarget::Kind::SearchBox:
                    fail("no_such_ref", click->ref + " is a textbox; use type");
                    break;
                case UiTarget::Kind::SearchSubmit:
                    env_detail::navigate_to(state,
                                            Page{Page::Kind::Search, state.pending_search, 1, 1});
                    state.pending_search.clear();
                    break;
            }
        }
    } else if (auto* type = std::get_if<Action::TypeText>(&action.value)) {
        auto rendered = env_detail::render_page(state);
        auto it = rendered.targets.find(type->ref);
        if (it == rendered.targets.end() || it->second.kind != UiTarget::Kind::SearchBox) {
            fail("no_such_ref", "no textbox " + type->ref);
        } else {
            state.pending_search = type->text;
        }
    } else if (std::get_if<Action::Scroll>(&action.value)) {
        // No viewport in this environment; scrolling is accepted and inert.
    } else if (auto* nav = std::get_if<Action::Navigate>(&action.value)) {
        if (nav->url.rfind("http://", 0) == 0 || nav->url.rfind("https://", 0) == 0 ||
            nav->url.rfind("external:", 0) == 0) {
            std::string target = nav->url;
            if (target.rfind("external:", 0) == 0) target = target.substr(9);
            env_detail::navigate_to(state, Page{Page::Kind::External, target, 1, 1});
        } else if (auto page = env_detail::parse_internal_url(nav->url)) {
            env_detail::navigate_to(state, *page);
        } else {
            fail("nav_blocked", "cannot navigate to " + nav->url);
        }
    } else {  // Back
        if (state.back_stack.empty()) {
            fail("nav_blocked", "no page to go back to");
        } else {
            state.current_page = state.back_stack.back();
            state.back_stack.pop_back();
            state.visited.push_back(page_url(state.current_page));
            state.last_added.clear();
        }
    }

    result.observation = observe(state);
    return result;
}

inline Storefront load_storefront(const nlohmann::json& doc) {
    if (!doc.is_object()) throw Error(ErrorCode::SchemaError, "storefront doc must be an object");
    Storefront sf;
    try {
        const auto& shop = doc.at("shop");
        sf.shop.name = shop.at("name").get<std::string>();
        sf.shop.industry = shop.value("industry", "");
        sf.shop.country = shop.value("country", "");

        std::vector<Product> products;
        for (const auto& pj : doc.at("catalog")) products.push_back(pj.get<Product>());
        sf.catalog = Catalog(std::move(products));

        for (const auto& cj : doc.at("collections")) {
            CollectionSpec c;
            cj.at("id").get_to(c.id);
            cj.at("title").get_to(c.title);
            cj.at("product_ids").get_to(c.product_ids);
            for (const auto& pid : c.product_ids) {
                if (!sf.catalog.find(pid))
                    throw Error(ErrorCode::SchemaError,
                                "collection " + c.id + " references unknown product " + pid);
            }
            sf.collections.push_back(std::move(c));
        }

        auto load_theme = [&](const nlohmann::json& tj, const std::string& fallback_id) {
            ThemeSpec t;
            t.theme_id = tj.value("theme_id", fallback_id);
            tj.at("home_collections").get_to(t.home_collections);
            t.products_per_page = tj.value("products_per_page", std::size_t{12});
            if (tj.contains("nav_links")) tj.at("nav_links").get_to(t.nav_links);
            t.search_enabled = tj.value("search_enabled", true);
            if (tj.contains("product_card_fields"))
                tj.at("product_card_fields").get_to(t.product_card_fields);
            t.collection_depth = tj.value("collection_depth", std::size_t{1});
            if (t.products_per_page < 1)
                throw Error(ErrorCode::SchemaError, "products_per_page must be >= 1");
            if (t.collection_depth < 1)
                throw Error(ErrorCode::SchemaError, "collection_depth must be >= 1");
            for (const auto& field : t.product_card_fields) {
                if (field != "title" && field != "price" && field != "reviews" && field != "badge")
                    throw Error(ErrorCode::SchemaError, "unknown product_card_field " + field);
            }
            for (const auto& cid : t.home_collections) {
                if (!sf.find_collection(cid))
                    throw Error(ErrorCode::UnknownCollectionRef,
                                "theme " + t.theme_id + " references collection " + cid);
            }
            return t;
        };
        sf.control = load_theme(doc.at("themes").at("control"), "control");
        sf.treatment = load_theme(doc.at("themes").at("treatment"), "treatment");
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::SchemaError, ex.what());
    }
    return sf;
}

inline void to_json(nlohmann::json& j, const Action& a) {
    if (auto* c = std::get_if<Action::Click>(&a.value)) {
        j = {{"type", "click"}, {"ref", c->ref}};
    } else if (auto* t = std::get_if<Action::TypeText>(&a.value)) {
        j = {{"type", "type_text"}, {"ref", t->ref}, {"text", t->text}};
    } else if (auto* s = std::get_if<Action::Scroll>(&a.value)) {
        j = {{"type", "scroll"}, {"direction", s->direction}};
    } else if (auto* n = std::get_if<Action::Navigate>(&a.value)) {
        j = {{"type", "navigate"}, {"url", n->url}};
    } else {
        j = {{"type", "back"}};
    }
}

inline void from_json(const nlohmann::json& j, Action& a) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "click") {
        a = Action::click(j.at("ref").get<std::string>());
    } else if (type == "type_text") {
        a = Action::type_text(j.at("ref").get<std::string>(), j.at("text").get<std::string>());
    } else if (type == "scroll") {
        a = Action::scroll(j.value("direction", "down"));
    } else if (type == "navigate") {
        a = Action::navigate(j.at("url").get<std::string>());
    } else if (type == "back") {
        a = Action::back();
    } else {
        throw Error(ErrorCode::SchemaError, "unknown action type " + type);
    }
}

inline void to_json(nlohmann::json& j, const ThemeSpec& t) {
    j = {{"theme_id", t.theme_id},
         {"home_collections", t.home_collections},
         {"products_per_page", t.products_per_page},
         {"nav_links", t.nav_links},
         {"search_enabled", t.search_enabled},
         {"product_card_fields", t.product_card_fields},
         {"collection_depth", t.collection_depth}};
}

}  // namespace simgym
