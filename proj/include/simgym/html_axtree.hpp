#pragma once

#include <map>
#include <string>
#include <vector>

#include "simgym/axtree.hpp"
#include "simgym/common.hpp"

namespace simgym {

// Error-tolerant HTML-snapshot parser. Produces the same accessibility-tree
// shape the simulated storefront emits, so real-page fixtures and simulated
// pages share one observation format. Not a browser: no scripting, no CSS,
// and unknown or mis-nested markup degrades to text rather than failing.

namespace html_detail {

struct Token {
    enum class Kind { Text, Open, Close, SelfClose } kind = Kind::Text;
    std::string text;  // tag name or text content
    std::map<std::string, std::string> attrs;
};

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }

inline std::string decode_entities(const std::string& in) {
    std::string out;
    out.reserve(in.size());
    for (std::size_t i = 0; i < in.size();) {
        if (in[i] == '&') {
            const std::size_t semi = in.find(';', i);
            if (semi != std::string::npos && semi - i <= 8) {
                const std::string ent = in.substr(i + 1, semi - i - 1);
                if (ent == "amp") { out += '&'; i = semi + 1; continue; }
                if (ent == "lt") { out += '<'; i = semi + 1; continue; }
                if (ent == "gt") { out += '>'; i = semi + 1; continue; }
                if (ent == "quot") { out += '"'; i = semi + 1; continue; }
                if (ent == "apos" || ent == "#39") { out += '\''; i = semi + 1; continue; }
                if (ent == "nbsp") { out += ' '; i = semi + 1; continue; }
            }
        }
        out += in[i++];
    }
    return out;
}

inline std::string collapse_ws(const std::string& in) {
    std::string out;
    bool pending = false;
    for (char c : in) {
        if (is_space(c)) {
            pending = !out.empty();
        } else {
            if (pending) out += ' ';
            pending = false;
            out += c;
        }
    }
    return out;
}

inline bool is_void_element(const std::string& tag) {
    static const char* kVoid[] = {"area", "base", "br",    "col",   "embed",  "hr",
                                  "img",  "input", "link", "meta", "source", "track", "wbr"};
    for (const char* v : kVoid) {
        if (tag == v) return true;
    }
    return false;
}

inline std::vector<Token> tokenize(const std::string& html) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const std::size_t n = html.size();
    while (i < n) {
        if (html[i] == '<') {
            if (html.compare(i, 4, "<!--") == 0) {
                const std::size_t end = html.find("-->", i + 4);
                i = end == std::string::npos ? n : end + 3;
                continue;
            }
            if (i + 1 < n && (html[i + 1] == '!' || html[i + 1] == '?')) {  // doctype, PI
                const std::size_t end = html.find('>', i);
                i = end == std::string::npos ? n : end + 1;
                continue;
            }
            const std::size_t end = html.find('>', i);
            if (end == std::string::npos) break;  // truncated tag: drop the tail
            std::string inner = html.substr(i + 1, end - i - 1);
            i = end + 1;

            Token tok;
            std::size_t p = 0;
            if (!inner.empty() && inner[0] == '/') {
                tok.kind = Token::Kind::Close;
                p = 1;
            } else {
                tok.kind = Token::Kind::Open;
            }
            while (p < inner.size() && is_space(inner[p])) ++p;
            std::string name;
            while (p < inner.size() && !is_space(inner[p]) && inner[p] != '/') name += inner[p++];
            tok.text = lowercase(name);
            if (tok.text.empty()) continue;

            // Attributes (open tags only).
            while (tok.kind == Token::Kind::Open && p < inner.size()) {
                while (p < inner.size() && is_space(inner[p])) ++p;
                if (p >= inner.size()) break;
                if (inner[p] == '/') {
                    tok.kind = Token::Kind::SelfClose;
                    ++p;
                    continue;
                }
                std::string key;
                while (p < inner.size() && !is_space(inner[p]) && inner[p] != '=' && inner[p] != '/')
                    key += inner[p++];
                while (p < inner.size() && is_space(inner[p])) ++p;
                std::string value;
                if (p < inner.size() && inner[p] == '=') {
                    ++p;
                    while (p < inner.size() && is_space(inner[p])) ++p;
                    if (p < inner.size() && (inner[p] == '"' || inner[p] == '\'')) {
                        const char q = inner[p++];
                        while (p < inner.size() && inner[p] != q) value += inner[p++];
                        if (p < inner.size()) ++p;
                    } else {
                        while (p < inner.size() && !is_space(inner[p])) value += inner[p++];
                    }
                }
                if (!key.empty()) tok.attrs[lowercase(key)] = decode_entities(value);
            }
            if (tok.kind == Token::Kind::Open && is_void_element(tok.text))
                tok.kind = Token::Kind::SelfClose;

            // script/style content is raw text; skip to the matching close tag.
            if (tok.kind == Token::Kind::Open && (tok.text == "script" || tok.text == "style")) {
                const std::string close = "</" + tok.text;
                std::size_t stop = i;
                for (;;) {
                    stop = html.find(close, stop);
                    if (stop == std::string::npos) {
                        i = n;
                        break;
                    }
                    const std::size_t gt = html.find('>', stop);
                    i = gt == std::string::npos ? n : gt + 1;
                    break;
                }
                continue;  // drop both tag and content
            }
            tokens.push_back(std::move(tok));
        } else {
            std::string text;
            while (i < n && html[i] != '<') text += html[i++];
            Token tok;
            tok.kind = Token::Kind::Text;
            tok.text = decode_entities(text);
            tokens.push_back(std::move(tok));
        }
    }
    return tokens;
}

struct Element {
    std::string tag;
    std::map<std::string, std::string> attrs;
    std::vector<Element> children;
    std::string text;  // leaf text node when tag is empty

    bool is_text() const { return tag.empty(); }
};

inline Element build_dom(const std::vector<Token>& tokens) {
    Element root;
    root.tag = "#root";
    std::vector<Element*> stack = {&root};
    for (const Token& tok : tokens) {
        switch (tok.kind) {
            case Token::Kind::Text: {
                Element t;
                t.text = tok.text;
                stack.back()->children.push_back(std::move(t));
                break;
            }
            case Token::Kind::SelfClose: {
                Element e;
                e.tag = tok.text;
                e.attrs = tok.attrs;
                stack.back()->children.push_back(std::move(e));
                break;
            }
            case Token::Kind::Open: {
                Element e;
                e.tag = tok.text;
                e.attrs = tok.attrs;
                stack.back()->children.push_back(std::move(e));
                stack.push_back(&stack.back()->children.back());
                break;
            }
            case Token::Kind::Close: {
                // Pop to the nearest matching open element; stray closers are ignored.
                for (std::size_t depth = stack.size(); depth > 1; --depth) {
                    if (stack[depth - 1]->tag == tok.text) {
                        stack.resize(depth - 1);
                        break;
                    }
                }
                break;
            }
        }
    }
    return root;
}

inline void gather_text(const Element& e, std::string& out) {
    if (e.is_text()) {
        out += e.text;
        return;
    }
    for (const auto& child : e.children) gather_text(child, out);
}

// Name priority per observation format: text content, then aria-label, then alt.
inline std::string element_name(const Element& e) {
    std::string text;
    gather_text(e, text);
    text = collapse_ws(text);
    if (!text.empty()) return text;
    auto aria = e.attrs.find("aria-label");
    if (aria != e.attrs.end() && !collapse_ws(aria->second).empty()) return collapse_ws(aria->second);
    auto alt = e.attrs.find("alt");
    if (alt != e.attrs.end() && !collapse_ws(alt->second).empty()) return collapse_ws(alt->second);
    return "";
}

inline bool is_heading_tag(const std::string& tag) {
    return tag.size() == 2 && tag[0] == 'h' && tag[1] >= '1' && tag[1] <= '6';
}

struct RefCounter {
    int next = 1;
    std::string take() { return "e" + std::to_string(next++); }
};

inline void lower_element(const Element& e, AccessibilityNode& parent, RefCounter& refs);

inline void lower_children(const Element& e, AccessibilityNode& parent, RefCounter& refs) {
    for (const auto& child : e.children) lower_element(child, parent, refs);
}

inline void lower_element(const Element& e, AccessibilityNode& parent, RefCounter& refs) {
    if (e.is_text()) {
        const std::string text = collapse_ws(e.text);
        if (!text.empty()) parent.children.emplace_back(AxRole::Text, text);
        return;
    }
    const std::string& tag = e.tag;
    if (tag == "a") {
        parent.children.emplace_back(AxRole::Link, element_name(e), refs.take());
        return;
    }
    if (tag == "button") {
        parent.children.emplace_back(AxRole::Button, element_name(e), refs.take());
        return;
    }
    if (tag == "input") {
        auto ty = e.attrs.find("type");
        const std::string type = ty == e.attrs.end() ? "text" : lowercase(ty->second);
        if (type == "submit" || type == "button") {
            std::string name = element_name(e);
            if (name.empty()) {
                auto v = e.attrs.find("value");
                if (v != e.attrs.end()) name = collapse_ws(v->second);
            }
            parent.children.emplace_back(AxRole::Button, name, refs.take());
        } else if (type == "text" || type == "search") {
            std::string name = element_name(e);
            if (name.empty()) {
                auto ph = e.attrs.find("placeholder");
                if (ph != e.attrs.end()) name = collapse_ws(ph->second);
            }
            parent.children.emplace_back(AxRole::Textbox, name, refs.take());
        }
        return;  // other input types carry no tree role
    }
    if (is_heading_tag(tag)) {
        AccessibilityNode node(AxRole::Heading, element_name(e));
        // Interactive descendants inside a heading still need refs.
        for (const auto& child : e.children) {
            if (!child.is_text() &&
                (child.tag == "a" || child.tag == "button" || child.tag == "input"))
                lower_element(child, node, refs);
        }
        parent.children.push_back(std::move(node));
        return;
    }
    if (tag == "li") {
        AccessibilityNode node(AxRole::ListItem, "");
        lower_children(e, node, refs);
        parent.children.push_back(std::move(node));
        return;
    }
    // Unknown containers are transparent: their children are hoisted.
    lower_children(e, parent, refs);
}

}  // namespace html_detail

inline AccessibilityNode parse_html_to_axtree(const std::string& html) {
    if (trim(html).empty())
        throw Error(ErrorCode::UnparseableDocument, "empty document");
    for (char c : html) {
        if (c == '\0') throw Error(ErrorCode::UnparseableDocument, "binary content");
    }
    const auto tokens = html_detail::tokenize(html);
    const auto dom = html_detail::build_dom(tokens);
    AccessibilityNode root(AxRole::Region, "document");
    html_detail::RefCounter refs;
    html_detail::lower_children(dom, root, refs);
    return root;
}

}  // namespace simgym
