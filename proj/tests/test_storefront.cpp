#include <doctest.h>

#include <deque>
#include <set>

#include "simgym/storefront.hpp"
#include "support/fixtures.hpp"

using namespace simgym;

TEST_CASE("load_storefront accepts the fixture document") {
    const auto sf = fixtures::storefront();
    CHECK(sf.shop.name == "Fixture Outfitters");
    CHECK(sf.catalog.products().size() == 7);
    CHECK(sf.collections.size() == 3);
    CHECK(sf.control.collection_depth == 1);
    CHECK(sf.treatment.collection_depth == 2);
}

TEST_CASE("load_storefront minimal document") {
    nlohmann::json doc = {
        {"shop", {{"name", "Tiny"}}},
        {"catalog",
         {{{"product_id", "p1"}, {"title", "One"}, {"price", 100}, {"category", "misc"}}}},
        {"collections", {{{"id", "c1"}, {"title", "All"}, {"product_ids", {"p1"}}}}},
        {"themes",
         {{"control", {{"home_collections", {"c1"}}}},
          {"treatment", {{"home_collections", {"c1"}}}}}}};
    const auto sf = load_storefront(doc);
    CHECK(sf.catalog.products().size() == 1);
}

TEST_CASE("load_storefront rejects duplicate product ids") {
    auto doc = fixtures::storefront_doc();
    doc["catalog"].push_back(doc["catalog"][0]);
    try {
        load_storefront(doc);
        FAIL("expected DuplicateProductId");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DuplicateProductId);
    }
}

TEST_CASE("load_storefront rejects unknown collection refs in themes") {
    auto doc = fixtures::storefront_doc();
    doc["themes"]["control"]["home_collections"].push_back("c-ghost");
    try {
        load_storefront(doc);
        FAIL("expected UnknownCollectionRef");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownCollectionRef);
    }
}

TEST_CASE("observe renders nav links with distinct refs") {
    const auto sf = fixtures::storefront();
    const auto state = make_env(sf, "control");
    const auto obs = observe(state);
    CHECK(obs.url == "/");
    std::vector<const AccessibilityNode*> links;
    collect_nodes(obs.root, AxRole::Link, links);
    std::set<std::string> refs;
    std::set<std::string> names;
    for (const auto* l : links) {
        refs.insert(l->ref);
        names.insert(l->name);
    }
    CHECK(refs.size() == links.size());
    CHECK(names.count("About"));
    CHECK(names.count("Sneakers"));
}

TEST_CASE("search_enabled=false removes every textbox") {
    auto doc = fixtures::storefront_doc();
    doc["themes"]["control"]["search_enabled"] = false;
    const auto sf = load_storefront(doc);
    EnvState state = make_env(sf, "control");
    // Walk several pages and confirm no textbox anywhere.
    for (const char* url : {"/", "/collection/c-sneakers", "/product/p1", "/cart"}) {
        apply(state, Action::navigate(url));
        std::vector<const AccessibilityNode*> boxes;
        collect_nodes(observe(state).root, AxRole::Textbox, boxes);
        CHECK(boxes.empty());
    }
}

TEST_CASE("observe is deterministic for the same state") {
    const auto sf = fixtures::storefront();
    const auto state = make_env(sf, "treatment");
    CHECK(serialize_axtree(observe(state).root) == serialize_axtree(observe(state).root));
}

TEST_CASE("apply add-to-cart records the catalog price") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    apply(state, Action::navigate("/product/p3"));  // Premium Crystal Wing Dragon, $33.18
    const auto obs = observe(state);
    const auto* button = find_node(obs.root, AxRole::Button, "Add to cart");
    REQUIRE(button != nullptr);
    const auto result = apply(state, Action::click(button->ref));
    CHECK(!result.error);
    REQUIRE(state.cart.size() == 1);
    CHECK(state.cart_value() == 3318);
    // Confirmation region appears in the post-action observation.
    const auto* confirm = find_node(result.observation.root, AxRole::Region, "cart-confirmation");
    REQUIRE(confirm != nullptr);
}

TEST_CASE("apply unknown ref returns no_such_ref and leaves state unchanged") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    const auto before = serialize_axtree(observe(state).root);
    const auto result = apply(state, Action::click("zzz"));
    REQUIRE(result.error);
    CHECK(result.error->code == "no_such_ref");
    CHECK(serialize_axtree(result.observation.root) == before);
    CHECK(state.cart.empty());
}

TEST_CASE("apply out-of-stock add returns an error result") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    apply(state, Action::navigate("/product/p7"));  // out of stock
    const auto* button = find_node(observe(state).root, AxRole::Button, "Add to cart");
    REQUIRE(button != nullptr);
    const auto result = apply(state, Action::click(button->ref));
    REQUIRE(result.error);
    CHECK(result.error->code == "out_of_stock");
    CHECK(state.cart.empty());
}

TEST_CASE("back on home with empty history is nav_blocked") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    const auto result = apply(state, Action::back());
    REQUIRE(result.error);
    CHECK(result.error->code == "nav_blocked");
}

TEST_CASE("back pops navigation history") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    apply(state, Action::navigate("/collection/c-gear"));
    apply(state, Action::navigate("/product/p6"));
    const auto result = apply(state, Action::back());
    CHECK(!result.error);
    CHECK(result.observation.url == "/collection/c-gear");
}

TEST_CASE("navigate to an external url flags the page for theme-exit classification") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    const auto result = apply(state, Action::navigate("https://elsewhere.example"));
    CHECK(!result.error);
    CHECK(result.observation.url == "external:https://elsewhere.example");
}

TEST_CASE("navigate to garbage is nav_blocked") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    const auto result = apply(state, Action::navigate("not-a-url"));
    REQUIRE(result.error);
    CHECK(result.error->code == "nav_blocked");
}

TEST_CASE("search flow: type then submit lists matching products") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    const auto obs = observe(state);
    const auto* box = find_node(obs.root, AxRole::Textbox);
    const auto* go = find_node(obs.root, AxRole::Button, "Search");
    REQUIRE(box != nullptr);
    REQUIRE(go != nullptr);
    CHECK(!apply(state, Action::type_text(box->ref, "sneakers")).error);
    const auto result = apply(state, Action::click(go->ref));
    CHECK(result.observation.url == "/search?q=sneakers");
    std::vector<const AccessibilityNode*> items;
    collect_nodes(result.observation.root, AxRole::ListItem, items);
    CHECK(items.size() == 3);  // p1, p2, p7 are in category sneakers
}

TEST_CASE("typing into a non-textbox ref errors") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    const auto result = apply(state, Action::type_text("e1", "hello"));  // e1 is the Home link
    REQUIRE(result.error);
    CHECK(result.error->code == "no_such_ref");
}

TEST_CASE("scroll is accepted and inert") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    const auto before = serialize_axtree(observe(state).root);
    const auto result = apply(state, Action::scroll("down"));
    CHECK(!result.error);
    CHECK(serialize_axtree(result.observation.root) == before);
}

TEST_CASE("pagination renders Next and walks the collection") {
    auto doc = fixtures::storefront_doc(1, 2, /*products_per_page=*/2);
    const auto sf = load_storefront(doc);
    EnvState state = make_env(sf, "control");
    apply(state, Action::navigate("/collection/c-sneakers"));  // 3 products, 2 per page
    auto obs = observe(state);
    const auto* next = find_node(obs.root, AxRole::Link, "Next");
    REQUIRE(next != nullptr);
    const auto result = apply(state, Action::click(next->ref));
    CHECK(result.observation.url == "/collection/c-sneakers?page=2");
    std::vector<const AccessibilityNode*> items;
    collect_nodes(result.observation.root, AxRole::ListItem, items);
    CHECK(items.size() == 1);
    CHECK(find_node(result.observation.root, AxRole::Link, "Previous") != nullptr);
    CHECK(find_node(result.observation.root, AxRole::Link, "Next") == nullptr);
}

TEST_CASE("treatment depth inserts a hub page between home and collections") {
    const auto sf = fixtures::storefront();  // treatment depth 2
    EnvState state = make_env(sf, "treatment");
    auto obs = observe(state);
    CHECK(find_node(obs.root, AxRole::Link, "Sneakers") == nullptr);
    const auto* hub_link = find_node(obs.root, AxRole::Link, "Browse all collections");
    REQUIRE(hub_link != nullptr);
    const auto hub = apply(state, Action::click(hub_link->ref));
    CHECK(hub.observation.url == "/collections?level=1");
    CHECK(find_node(hub.observation.root, AxRole::Link, "Sneakers") != nullptr);
}

TEST_CASE("full determinism: identical action sequences give identical states") {
    const auto sf = fixtures::storefront();
    auto run = [&]() {
        EnvState state = make_env(sf, "control");
        std::string transcript;
        for (const auto& action :
             {Action::navigate("/collection/c-figurines"), Action::click("e99"),
              Action::navigate("/product/p3"), Action::scroll("down"), Action::back()}) {
            const auto result = apply(state, action);
            transcript += result.observation.url + "\n" + serialize_axtree(result.observation.root);
            if (result.error) transcript += result.error->code + "\n";
        }
        return transcript;
    };
    CHECK(run() == run());
}

TEST_CASE("cart size is strictly monotone without a remove action") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "control");
    std::size_t last = 0;
    rng::Stream stream(6);
    const std::vector<Action> pool = {
        Action::navigate("/product/p1"), Action::navigate("/product/p4"),
        Action::navigate("/collection/c-gear"), Action::back(), Action::scroll("down"),
    };
    for (int i = 0; i < 60; ++i) {
        if (stream.next_double() < 0.3) {
            const auto* button = find_node(observe(state).root, AxRole::Button, "Add to cart");
            if (button) apply(state, Action::click(button->ref));
        } else {
            apply(state, pool[stream.next_index(pool.size())]);
        }
        CHECK(state.cart.size() >= last);
        last = state.cart.size();
    }
}

TEST_CASE("every ref in an observation resolves to exactly one element") {
    const auto sf = fixtures::storefront();
    EnvState state = make_env(sf, "treatment");
    for (const char* url : {"/", "/collections?level=1", "/collection/c-sneakers",
                            "/product/p2", "/cart", "/search?q=dragon"}) {
        apply(state, Action::navigate(url));
        const auto obs = observe(state);
        std::map<std::string, int> seen;
        visit_axtree(obs.root, [&](const AccessibilityNode& n) {
            if (!n.ref.empty()) ++seen[n.ref];
        });
        for (const auto& [ref, count] : seen) CHECK(count == 1);
    }
}

TEST_CASE("A2C reachability: every in-stock product within collection_depth + 2 clicks") {
    // Breadth-first search over click actions from home; cart-add counts as
    // the final click. Checked on both fixture themes.
    for (const char* theme : {"control", "treatment"}) {
        const auto sf = fixtures::storefront();
        const std::size_t depth = sf.theme(theme).collection_depth;
        std::set<std::string> reached;  // product ids added within budget

        struct Node {
            EnvState state;
            std::size_t clicks;
        };
        std::deque<Node> queue;
        queue.push_back({make_env(sf, theme), 0});
        std::set<std::string> visited_urls;
        while (!queue.empty()) {
            Node node = queue.front();
            queue.pop_front();
            if (node.clicks > depth + 1) continue;  // one more click (the add) tracked below
            const auto obs = observe(node.state);
            std::vector<const AccessibilityNode*> interactive;
            collect_nodes(obs.root, AxRole::Link, interactive);
            std::vector<const AccessibilityNode*> buttons;
            collect_nodes(obs.root, AxRole::Button, buttons);
            for (const auto* b : buttons) {
                if (b->name == "Add to cart" && node.clicks + 1 <= depth + 2) {
                    EnvState next = node.state;
                    const auto result = apply(next, Action::click(b->ref));
                    if (!result.error && !next.cart.empty())
                        reached.insert(next.cart.back().product_id);
                }
            }
            for (const auto* link : interactive) {
                EnvState next = node.state;
                const auto result = apply(next, Action::click(link->ref));
                if (result.error) continue;
                const std::string url = result.observation.url;
                if (!visited_urls.insert(url + "#" + std::to_string(node.clicks + 1)).second)
                    continue;
                queue.push_back({std::move(next), node.clicks + 1});
            }
        }
        for (const auto& p : sf.catalog.products()) {
            if (p.in_stock) CHECK(reached.count(p.product_id));
        }
    }
}
