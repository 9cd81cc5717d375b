#pragma once

#include <functional>
#include <string>
#include <vector>

#include "simgym/common.hpp"

namespace simgym {

enum class AxRole { Heading, Link, Button, Textbox, ListItem, Text, Region };

inline const char* ax_role_name(AxRole r) {
    switch (r) {
        case AxRole::Heading: return "heading";
        case AxRole::Link: return "link";
        case AxRole::Button: return "button";
        case AxRole::Textbox: return "textbox";
        case AxRole::ListItem: return "listitem";
        case AxRole::Text: return "text";
        case AxRole::Region: return "region";
    }
    return "?";
}

inline bool ax_role_interactive(AxRole r) {
    return r == AxRole::Link || r == AxRole::Button || r == AxRole::Textbox;
}

struct AccessibilityNode {
    AxRole role = AxRole::Region;
    std::string name;
    std::string ref;  // non-empty iff interactive
    std::vector<AccessibilityNode> children;

    AccessibilityNode() = default;
    AccessibilityNode(AxRole r, std::string n, std::string rf = "")
        : role(r), name(std::move(n)), ref(std::move(rf)) {}
};

namespace detail {

inline void serialize_ax(const AccessibilityNode& node, std::string& out, int depth) {
    out.append(static_cast<std::size_t>(depth) * 2, ' ');
    out += ax_role_name(node.role);
    out += " \"";
    out += node.name;
    out += "\"";
    if (!node.ref.empty()) {
        out += " [ref=";
        out += node.ref;
        out += "]";
    }
    out += "\n";
    for (const auto& child : node.children) serialize_ax(child, out, depth + 1);
}

}  // namespace detail

// Indented `role "name" [ref=eN]` lines, one node per line.
inline std::string serialize_axtree(const AccessibilityNode& root) {
    std::string out;
    detail::serialize_ax(root, out, 0);
    return out;
}

inline void visit_axtree(const AccessibilityNode& node,
                         const std::function<void(const AccessibilityNode&)>& fn) {
    fn(node);
    for (const auto& child : node.children) visit_axtree(child, fn);
}

inline const AccessibilityNode* find_by_ref(const AccessibilityNode& root, const std::string& ref) {
    if (root.ref == ref) return &root;
    for (const auto& child : root.children) {
        if (const auto* hit = find_by_ref(child, ref)) return hit;
    }
    return nullptr;
}

// First node matching role and (optionally) exact name, in document order.
inline const AccessibilityNode* find_node(const AccessibilityNode& root, AxRole role,
                                          const std::string& name = "") {
    if (root.role == role && (name.empty() || root.name == name)) return &root;
    for (const auto& child : root.children) {
        if (const auto* hit = find_node(child, role, name)) return hit;
    }
    return nullptr;
}

inline void collect_nodes(const AccessibilityNode& root, AxRole role,
                          std::vector<const AccessibilityNode*>& out) {
    if (root.role == role) out.push_back(&root);
    for (const auto& child : root.children) collect_nodes(child, role, out);
}

}  // namespace simgym
