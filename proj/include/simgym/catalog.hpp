#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "simgym/common.hpp"

namespace simgym {

struct ShopMeta {
    std::string name;
    std::string industry;
    std::string country;
};

struct Product {
    std::string product_id;
    std::string title;
    Money price = 0;
    std::string category;
    std::vector<std::string> tags;
    bool in_stock = true;
};

class Catalog {
public:
    Catalog() = default;

    explicit Catalog(std::vector<Product> products) : products_(std::move(products)) {
        for (std::size_t i = 0; i < products_.size(); ++i) {
            const auto& p = products_[i];
            if (p.price < 0) throw Error(ErrorCode::SchemaError, "negative price on " + p.product_id);
            if (!by_id_.emplace(p.product_id, i).second)
                throw Error(ErrorCode::DuplicateProductId, p.product_id);
            by_category_[p.category].push_back(i);
        }
    }

    const std::vector<Product>& products() const { return products_; }
    bool empty() const { return products_.empty(); }

    const Product* find(const std::string& product_id) const {
        auto it = by_id_.find(product_id);
        return it == by_id_.end() ? nullptr : &products_[it->second];
    }

    const Product* find_by_title(const std::string& title) const {
        for (const auto& p : products_) {
            if (p.title == title) return &p;
        }
        return nullptr;
    }

    std::vector<const Product*> in_category(const std::string& category) const {
        std::vector<const Product*> out;
        auto it = by_category_.find(category);
        if (it == by_category_.end()) return out;
        for (std::size_t i : it->second) out.push_back(&products_[i]);
        return out;
    }

    // Median price within a category; falls back to the global median for
    // unknown categories so normalization stays total.
    Money category_median_price(const std::string& category) const {
        auto it = by_category_.find(category);
        if (it != by_category_.end() && !it->second.empty()) {
            std::vector<Money> prices;
            for (std::size_t i : it->second) prices.push_back(products_[i].price);
            return median(prices);
        }
        return global_median_price();
    }

    Money global_median_price() const {
        std::vector<Money> prices;
        for (const auto& p : products_) prices.push_back(p.price);
        return prices.empty() ? 0 : median(prices);
    }

    std::map<std::string, Money> category_medians() const {
        std::map<std::string, Money> out;
        for (const auto& [cat, idx] : by_category_) out[cat] = category_median_price(cat);
        return out;
    }

private:
    static Money median(std::vector<Money> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
    }

    std::vector<Product> products_;
    std::map<std::string, std::size_t> by_id_;
    std::map<std::string, std::vector<std::size_t>> by_category_;
};

inline void to_json(nlohmann::json& j, const Product& p) {
    j = {{"product_id", p.product_id}, {"title", p.title},      {"price", p.price},
         {"category", p.category},     {"tags", p.tags},        {"in_stock", p.in_stock}};
}

inline void from_json(const nlohmann::json& j, Product& p) {
    j.at("product_id").get_to(p.product_id);
    j.at("title").get_to(p.title);
    j.at("price").get_to(p.price);
    j.at("category").get_to(p.category);
    if (j.contains("tags")) j.at("tags").get_to(p.tags);
    p.in_stock = j.value("in_stock", true);
}

}  // namespace simgym
