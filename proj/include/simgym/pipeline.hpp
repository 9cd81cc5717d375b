#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "simgym/agent.hpp"
#include "simgym/backend.hpp"
#include "simgym/common.hpp"
#include "simgym/events.hpp"
#include "simgym/kmeans.hpp"
#include "simgym/metrics.hpp"
#include "simgym/persona.hpp"
#include "simgym/scripted_policy.hpp"
#include "simgym/storefront.hpp"

namespace simgym {

namespace fs = std::filesystem;

struct ShopEntry {
    std::string shop_id;
    std::string clickstream_path;
    std::string storefront_path;
    double human_delta = 0.0;
};

struct RunConfig {
    std::vector<ShopEntry> shops;
    std::size_t agents_per_shop = 600;
    std::optional<std::size_t> fixed_k;  // nullopt = auto-select
    std::size_t k_min = 1;
    std::size_t k_max = 8;
    std::size_t kmeans_restarts = 5;
    std::size_t kmeans_max_iter = 100;
    double kmeans_tol = 1e-4;
    ElbowConfig elbow;

    std::string backend_kind = "scripted";  // scripted | http
    HttpBackendConfig http;
    ScriptedPolicyConfig policy;  // medians filled per shop at simulate time
    ValueLexicons lexicons;
    Limits limits;

    std::uint64_t run_seed = 0;
    std::size_t workers = 2;
    std::size_t repeat = 1;
    std::string output_dir = "out";

    EvaluationConfig eval;
    std::vector<std::size_t> bootstrap_sizes;
    std::size_t bootstrap_iterations = 1000;

    nlohmann::json canonical;  // normalized config document, hashed into manifests
};

// ---------------------------------------------------------------------------
// Config loading

namespace pipeline_detail {

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + path.string());
    out << content;
}

inline std::string hash_hex(const std::string& bytes) {
    std::uint64_t h = rng::hash_string(bytes);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string hash_file(const fs::path& path) { return hash_hex(read_file(path)); }

}  // namespace pipeline_detail

inline RunConfig load_run_config(const fs::path& config_path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(pipeline_detail::read_file(config_path));
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::ConfigError, std::string("config parse: ") + ex.what());
    }

    RunConfig cfg;
    const fs::path base = config_path.parent_path();
    auto resolve = [&](const std::string& p) {
        const fs::path path = fs::path(p).is_absolute() ? fs::path(p) : base / p;
        return path.lexically_normal().string();
    };

    try {
        for (const auto& sj : doc.at("shops")) {
            ShopEntry e;
            e.shop_id = sj.at("shop_id").get<std::string>();
            e.clickstream_path = resolve(sj.at("clickstream").get<std::string>());
            e.storefront_path = resolve(sj.at("storefront").get<std::string>());
            e.human_delta = sj.value("human_delta", 0.0);
            cfg.shops.push_back(std::move(e));
        }
        if (cfg.shops.empty()) throw Error(ErrorCode::ConfigError, "config lists no shops");

        cfg.agents_per_shop = doc.value("agents_per_shop", std::size_t{600});
        if (cfg.agents_per_shop < 2)
            throw Error(ErrorCode::ConfigError, "agents_per_shop must be >= 2");

        if (doc.contains("k")) {
            if (doc["k"].is_number_integer()) {
                cfg.fixed_k = doc["k"].get<std::size_t>();
            } else if (doc["k"] != "auto") {
                throw Error(ErrorCode::ConfigError, "k must be an integer or \"auto\"");
            }
        }
        cfg.k_min = doc.value("k_min", std::size_t{1});
        cfg.k_max = doc.value("k_max", std::size_t{8});

        if (doc.contains("backend")) {
            const auto& b = doc["backend"];
            cfg.backend_kind = b.is_string() ? b.get<std::string>() : b.value("kind", "scripted");
            if (cfg.backend_kind != "scripted" && cfg.backend_kind != "http")
                throw Error(ErrorCode::ConfigError, "backend must be scripted or http");
            if (b.is_object() && b.contains("http")) {
                const auto& h = b["http"];
                cfg.http.base_url = h.value("base_url", cfg.http.base_url);
                cfg.http.model = h.value("model", cfg.http.model);
                cfg.http.max_inflight = h.value("max_inflight", cfg.http.max_inflight);
                cfg.http.timeout_s = h.value("timeout_s", cfg.http.timeout_s);
                cfg.http.retries = h.value("retries", cfg.http.retries);
                cfg.http.temperature = h.value("temperature", cfg.http.temperature);
            }
        }
        if (doc.contains("limits")) {
            const auto& l = doc["limits"];
            cfg.limits.max_steps = l.value("max_steps", cfg.limits.max_steps);
            cfg.limits.max_wall_time_s = l.value("max_wall_time_s", cfg.limits.max_wall_time_s);
            cfg.limits.loop_threshold = l.value("loop_threshold", cfg.limits.loop_threshold);
            cfg.limits.llm_retries = l.value("llm_retries", cfg.limits.llm_retries);
            if (cfg.limits.loop_threshold < 2)
                throw Error(ErrorCode::ConfigError, "loop_threshold must be >= 2");
        }
        if (doc.contains("policy")) {
            const auto& p = doc["policy"];
            cfg.policy.price_tolerance = p.value("price_tolerance", cfg.policy.price_tolerance);
            cfg.policy.values_match_min = p.value("values_match_min", cfg.policy.values_match_min);
            if (p.contains("exploration_budget"))
                p.at("exploration_budget").get_to(cfg.policy.exploration_budget);
            if (p.contains("abandon_hazard"))
                p.at("abandon_hazard").get_to(cfg.policy.abandon_hazard);
        }
        if (doc.contains("lexicons")) doc.at("lexicons").get_to(cfg.lexicons);
        if (doc.contains("lexicons_path")) {
            const auto lex =
                nlohmann::json::parse(pipeline_detail::read_file(resolve(doc["lexicons_path"])));
            lex.get_to(cfg.lexicons);
        }
        cfg.policy.lexicons = cfg.lexicons;

        if (doc.contains("seeds")) cfg.run_seed = doc["seeds"].value("run_seed", std::uint64_t{0});
        cfg.workers = doc.value("workers", std::size_t{2});
        cfg.repeat = doc.value("repeat", std::size_t{1});
        if (!doc.contains("output_dir"))
            throw Error(ErrorCode::ConfigError, "config needs output_dir");
        cfg.output_dir = resolve(doc["output_dir"].get<std::string>());

        if (doc.contains("eval")) {
            cfg.eval.mc_samples = doc["eval"].value("mc_samples", cfg.eval.mc_samples);
        }
        if (doc.contains("bootstrap")) {
            const auto& b = doc["bootstrap"];
            if (b.contains("sizes")) b.at("sizes").get_to(cfg.bootstrap_sizes);
            cfg.bootstrap_iterations = b.value("iterations", cfg.bootstrap_iterations);
        }
        if (cfg.bootstrap_sizes.empty()) {
            for (std::size_t s = 50; s <= 700; s += 50) cfg.bootstrap_sizes.push_back(s);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::ConfigError, std::string("config: ") + ex.what());
    }

    for (const auto& shop : cfg.shops) {
        if (!fs::exists(shop.clickstream_path))
            throw Error(ErrorCode::ConfigError, "missing clickstream " + shop.clickstream_path);
        if (!fs::exists(shop.storefront_path))
            throw Error(ErrorCode::ConfigError, "missing storefront " + shop.storefront_path);
    }

    cfg.eval.seed = cfg.run_seed;
    cfg.canonical = doc;
    // Execution knobs must not change what gets computed, so the artifact
    // hash ignores where outputs land and how many workers run.
    cfg.canonical.erase("output_dir");
    cfg.canonical.erase("workers");
    return cfg;
}

inline std::string config_hash(const RunConfig& cfg) {
    return pipeline_detail::hash_hex(cfg.canonical.dump());
}

// ---------------------------------------------------------------------------
// Stage manifests

struct StageOutcome {
    bool skipped = false;
    std::string message;
};

namespace pipeline_detail {

inline nlohmann::json load_manifest(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    if (!fs::exists(path)) return nlohmann::json();
    auto parsed = nlohmann::json::parse(read_file(path), nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("inputs"))
        throw Error(ErrorCode::StaleManifest,
                    path.string() + " is corrupt; delete the directory and re-run the stage");
    return parsed;
}

inline bool manifest_matches(const nlohmann::json& manifest,
                             const std::map<std::string, std::string>& inputs,
                             const std::string& cfg_hash,
                             const std::vector<fs::path>& outputs) {
    if (manifest.is_null()) return false;
    if (manifest.value("config_hash", "") != cfg_hash) return false;
    const auto& recorded = manifest.at("inputs");
    if (recorded.size() != inputs.size()) return false;
    for (const auto& [path, hash] : inputs) {
        if (!recorded.contains(path) || recorded.at(path) != hash) return false;
    }
    for (const auto& out : outputs) {
        if (!fs::exists(out)) return false;
    }
    return true;
}

inline void write_manifest(const fs::path& dir, const std::string& stage,
                           const std::map<std::string, std::string>& inputs,
                           const std::string& cfg_hash, std::uint64_t seed,
                           const std::vector<fs::path>& outputs) {
    nlohmann::json m;
    m["stage"] = stage;
    m["config_hash"] = cfg_hash;
    m["run_seed"] = seed;
    m["inputs"] = inputs;
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& out : outputs) outs.push_back(out.filename().string());
    m["outputs"] = outs;
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

inline void require_artifact(const fs::path& path, const std::string& hint) {
    if (!fs::exists(path))
        throw Error(ErrorCode::MissingStageInput, path.string() + " missing; run `" + hint +
                                                      "` first");
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Stage: ingest

inline StageOutcome run_ingest(const RunConfig& cfg) {
    using namespace pipeline_detail;
    const fs::path dir = fs::path(cfg.output_dir) / "ingest";
    const std::string cfg_hash = config_hash(cfg);

    std::map<std::string, std::string> inputs;
    std::vector<fs::path> outputs;
    for (const auto& shop : cfg.shops) {
        inputs[shop.clickstream_path] = hash_file(shop.clickstream_path);
        outputs.push_back(dir / (shop.shop_id + ".json"));
    }
    if (manifest_matches(load_manifest(dir), inputs, cfg_hash, outputs))
        return {true, "ingest up-to-date"};

    for (const auto& shop : cfg.shops) {
        std::ifstream in(shop.clickstream_path);
        ParseResult parsed = parse_events(in);
        const auto sessions = sessionize(parsed.events);

        nlohmann::json artifact;
        artifact["shop_id"] = shop.shop_id;
        artifact["config_hash"] = cfg_hash;
        artifact["seed"] = cfg.run_seed;
        nlohmann::json issues = nlohmann::json::array();
        for (const auto& issue : parsed.issues)
            issues.push_back({{"line", issue.line_number}, {"message", issue.message}});
        artifact["parse_issues"] = issues;

        nlohmann::json sess = nlohmann::json::array();
        for (const auto& s : sessions) {
            nlohmann::json events = nlohmann::json::array();
            for (const auto& e : s.events) {
                nlohmann::json ej = {{"session_id", e.session_id}, {"buyer_id", e.buyer_id},
                                     {"shop_id", e.shop_id},       {"ts", e.timestamp_ms},
                                     {"type", event_type_name(e.event_type)}};
                if (e.product_id) ej["product_id"] = *e.product_id;
                if (e.product_title) ej["product_title"] = *e.product_title;
                if (e.product_price) ej["product_price"] = *e.product_price;
                if (e.search_query) ej["search_query"] = *e.search_query;
                if (e.cart_value) ej["cart_value"] = *e.cart_value;
                if (e.order_value) ej["order_value"] = *e.order_value;
                events.push_back(std::move(ej));
            }
            sess.push_back({{"session_id", s.session_id},
                            {"buyer_id", s.buyer_id},
                            {"shop_id", s.shop_id},
                            {"events", std::move(events)},
                            {"features", extract_features(s)}});
        }
        artifact["sessions"] = std::move(sess);
        write_file(dir / (shop.shop_id + ".json"), artifact.dump(2) + "\n");
    }
    write_manifest(dir, "ingest", inputs, cfg_hash, cfg.run_seed, outputs);
    return {false, "ingested " + std::to_string(cfg.shops.size()) + " shops"};
}

namespace pipeline_detail {

inline std::vector<Session> sessions_from_artifact(const nlohmann::json& artifact) {
    std::vector<Session> sessions;
    for (const auto& sj : artifact.at("sessions")) {
        Session s;
        s.session_id = sj.at("session_id").get<std::string>();
        s.buyer_id = sj.at("buyer_id").get<std::string>();
        s.shop_id = sj.at("shop_id").get<std::string>();
        for (const auto& ej : sj.at("events")) {
            s.events.push_back(detail::parse_event_json(ej));
        }
        sessions.push_back(std::move(s));
    }
    return sessions;
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Stage: cluster

inline StageOutcome run_cluster(const RunConfig& cfg) {
    using namespace pipeline_detail;
    const fs::path ingest_dir = fs::path(cfg.output_dir) / "ingest";
    const fs::path dir = fs::path(cfg.output_dir) / "cluster";
    const std::string cfg_hash = config_hash(cfg);

    std::map<std::string, std::string> inputs;
    std::vector<fs::path> outputs;
    for (const auto& shop : cfg.shops) {
        const fs::path in_path = ingest_dir / (shop.shop_id + ".json");
        require_artifact(in_path, "ingest");
        inputs[in_path.string()] = hash_file(in_path);
        outputs.push_back(dir / (shop.shop_id + ".json"));
    }
    if (manifest_matches(load_manifest(dir), inputs, cfg_hash, outputs))
        return {true, "cluster up-to-date"};

    for (const auto& shop : cfg.shops) {
        const auto artifact =
            nlohmann::json::parse(read_file(ingest_dir / (shop.shop_id + ".json")));
        const auto sessions = sessions_from_artifact(artifact);
        std::vector<SessionFeatures> features;
        features.reserve(sessions.size());
        for (const auto& s : sessions) features.push_back(extract_features(s));
        const StandardizedMatrix X = standardize(features);

        const std::uint64_t shop_seed = rng::mix(cfg.run_seed, rng::hash_string(shop.shop_id));
        std::size_t k = 0;
        nlohmann::json selection;
        if (cfg.fixed_k) {
            k = std::min(*cfg.fixed_k, X.rows.size());
            selection = {{"mode", "fixed"}, {"chosen_k", k}};
        } else {
            const std::size_t hi = std::min(cfg.k_max, X.rows.size());
            const std::size_t lo = std::max<std::size_t>(1, std::min(cfg.k_min, hi));
            const KSelectionReport report =
                select_k(X, lo, hi, shop_seed, cfg.kmeans_restarts, cfg.elbow);
            k = report.chosen_k;
            nlohmann::json rows = nlohmann::json::array();
            for (const auto& row : report.rows) {
                rows.push_back({{"k", row.k},
                                {"inertia", row.inertia},
                                {"relative_inertia_drop", row.relative_inertia_drop},
                                {"min_cluster_share", row.min_cluster_share}});
            }
            selection = {{"mode", "auto"}, {"chosen_k", k}, {"rows", rows}};
        }

        const ClusterModel model = kmeans_fit_restarts(X, k, shop_seed, cfg.kmeans_restarts,
                                                       cfg.kmeans_max_iter, cfg.kmeans_tol);

        nlohmann::json assignments = nlohmann::json::array();
        for (std::size_t i = 0; i < sessions.size(); ++i) {
            const Assignment a = assign(model, X.rows[i]);
            assignments.push_back({{"session_id", sessions[i].session_id},
                                   {"cluster_id", a.cluster_id},
                                   {"distance", a.distance},
                                   {"confidence", a.confidence}});
        }

        nlohmann::json out;
        out["shop_id"] = shop.shop_id;
        out["config_hash"] = cfg_hash;
        out["seed"] = shop_seed;
        out["model"] = {{"k", model.k},         {"centroids", model.centroids},
                        {"means", X.means},     {"stds", X.stds},
                        {"seed", model.seed},   {"inertia", model.inertia},
                        {"iterations_run", model.iterations_run}};
        out["k_selection"] = selection;
        out["assignments"] = std::move(assignments);
        write_file(dir / (shop.shop_id + ".json"), out.dump(2) + "\n");
    }
    write_manifest(dir, "cluster", inputs, cfg_hash, cfg.run_seed, outputs);
    return {false, "clustered " + std::to_string(cfg.shops.size()) + " shops"};
}

// ---------------------------------------------------------------------------
// Stage: personas

inline StageOutcome run_personas(const RunConfig& cfg, JsonBackend* analyst_backend = nullptr) {
    using namespace pipeline_detail;
    const fs::path ingest_dir = fs::path(cfg.output_dir) / "ingest";
    const fs::path cluster_dir = fs::path(cfg.output_dir) / "cluster";
    const fs::path dir = fs::path(cfg.output_dir) / "personas";
    const std::string cfg_hash = config_hash(cfg);

    std::map<std::string, std::string> inputs;
    std::vector<fs::path> outputs;
    for (const auto& shop : cfg.shops) {
        const fs::path cl = cluster_dir / (shop.shop_id + ".json");
        const fs::path ig = ingest_dir / (shop.shop_id + ".json");
        require_artifact(cl, "cluster");
        require_artifact(ig, "ingest");
        inputs[cl.string()] = hash_file(cl);
        inputs[ig.string()] = hash_file(ig);
        inputs[shop.storefront_path] = hash_file(shop.storefront_path);
        outputs.push_back(dir / (shop.shop_id + ".json"));
    }
    if (manifest_matches(load_manifest(dir), inputs, cfg_hash, outputs))
        return {true, "personas up-to-date"};

    ScriptedJsonBackend scripted_analyst;
    JsonBackend& analyst = analyst_backend ? *analyst_backend : scripted_analyst;

    for (const auto& shop : cfg.shops) {
        const auto ingest_art =
            nlohmann::json::parse(read_file(ingest_dir / (shop.shop_id + ".json")));
        const auto cluster_art =
            nlohmann::json::parse(read_file(cluster_dir / (shop.shop_id + ".json")));
        const auto sessions = sessions_from_artifact(ingest_art);
        const Storefront storefront =
            load_storefront(nlohmann::json::parse(read_file(shop.storefront_path)));

        std::map<std::string, const Session*> by_id;
        std::vector<SessionFeatures> all_features;
        for (const auto& s : sessions) {
            by_id[s.session_id] = &s;
            all_features.push_back(extract_features(s));
        }
        const ShopNorms norms = ShopNorms::from_features(all_features);

        ClusterModel model;
        cluster_art.at("model").at("k").get_to(model.k);
        cluster_art.at("model").at("centroids").get_to(model.centroids);
        cluster_art.at("model").at("seed").get_to(model.seed);
        cluster_art.at("model").at("inertia").get_to(model.inertia);

        std::vector<std::pair<std::string, Assignment>> assignments;
        std::vector<std::vector<const Session*>> members(model.k);
        for (const auto& aj : cluster_art.at("assignments")) {
            Assignment a;
            aj.at("cluster_id").get_to(a.cluster_id);
            aj.at("distance").get_to(a.distance);
            aj.at("confidence").get_to(a.confidence);
            const std::string sid = aj.at("session_id").get<std::string>();
            assignments.emplace_back(sid, a);
            members[a.cluster_id].push_back(by_id.at(sid));
        }

        // Clusters whose centroid-nearest selection carries no product
        // interaction cannot ground a persona; their traffic share is
        // reallocated until every funded cluster has product signals.
        std::vector<std::size_t> sizes(model.k, 0);
        std::vector<bool> eligible(model.k, false);
        for (std::size_t c = 0; c < model.k; ++c) {
            sizes[c] = members[c].size();
            eligible[c] = sizes[c] > 0;
        }
        std::vector<std::size_t> agent_counts(model.k, 0);
        std::vector<std::vector<Session>> selected_sessions(model.k);
        for (;;) {
            std::vector<std::size_t> alloc_sizes(model.k, 0);
            for (std::size_t c = 0; c < model.k; ++c)
                alloc_sizes[c] = eligible[c] ? sizes[c] : 0;
            agent_counts = allocate_agents(alloc_sizes, cfg.agents_per_shop);
            bool changed = false;
            for (std::size_t c = 0; c < model.k; ++c) {
                selected_sessions[c].clear();
                if (agent_counts[c] == 0) continue;
                const auto nearest = nearest_sessions(model, assignments, c, agent_counts[c]);
                bool has_products = false;
                for (const auto& sid : nearest) {
                    const Session& s = *by_id.at(sid);
                    selected_sessions[c].push_back(s);
                    for (const auto& e : s.events) {
                        if (e.event_type != EventType::ProductView) continue;
                        const Product* p =
                            e.product_id ? storefront.catalog.find(*e.product_id) : nullptr;
                        if (e.product_price.value_or(0) > 0 || (p && p->price > 0))
                            has_products = true;
                    }
                }
                if (!has_products) {
                    eligible[c] = false;
                    changed = true;
                }
            }
            if (!changed) break;
        }

        nlohmann::json clusters = nlohmann::json::array();
        const std::uint64_t shop_seed = rng::mix(cfg.run_seed, rng::hash_string(shop.shop_id));
        for (std::size_t c = 0; c < model.k; ++c) {
            if (agent_counts[c] == 0) continue;
            const std::size_t n_agents = agent_counts[c];
            const std::vector<Session>& selected = selected_sessions[c];
            if (selected.empty()) continue;

            const BuyerAggregate agg = aggregate_buyers(selected, &storefront.catalog);
            ClusterSummary summary;
            summary.cluster_id = c;
            summary.browsed = agg.browsed_products;
            summary.purchased = agg.purchased_products;
            const ProductPreferences prefs =
                extract_preferences(storefront.shop, summary, analyst);

            // Intent mix calibrates on the whole cluster's A2C rate.
            double cluster_a2c = 0.0;
            for (const Session* s : members[c]) {
                if (extract_features(*s).a2c_count > 0) cluster_a2c += 1.0;
            }
            cluster_a2c /= static_cast<double>(members[c].size());
            const std::size_t purchase_count =
                n_agents >= 2 ? calibrate_intent_mix(cluster_a2c, n_agents)
                              : (cluster_a2c >= 0.5 ? 1 : 0);

            const auto intents = generate_intents(prefs, purchase_count, n_agents,
                                                  rng::mix(shop_seed, c));
            const PersonaDimensions persona =
                build_persona(agg, storefront.catalog, norms, cfg.lexicons);
            const std::vector<PersonaDimensions> personas(n_agents, persona);
            const auto profiles = compose_profiles(intents, personas, prefs, c, shop.shop_id);

            clusters.push_back({{"cluster_id", c},
                                {"agent_count", n_agents},
                                {"session_count", sizes[c]},
                                {"a2c_mean", cluster_a2c},
                                {"preferences", prefs},
                                {"intents", intents},
                                {"personas", personas},
                                {"profiles", profiles}});
        }

        nlohmann::json out;
        out["shop_id"] = shop.shop_id;
        out["config_hash"] = cfg_hash;
        out["seed"] = shop_seed;
        out["clusters"] = std::move(clusters);
        write_file(dir / (shop.shop_id + ".json"), out.dump(2) + "\n");
    }
    write_manifest(dir, "personas", inputs, cfg_hash, cfg.run_seed, outputs);
    return {false, "personas built for " + std::to_string(cfg.shops.size()) + " shops"};
}

// ---------------------------------------------------------------------------
// Stage: simulate

inline std::uint64_t session_seed(std::uint64_t run_seed, const std::string& shop_id,
                                  std::size_t agent_index, const std::string& theme_id) {
    return rng::mix(rng::mix(rng::mix(run_seed, rng::hash_string(shop_id)), agent_index),
                    rng::hash_string(theme_id));
}

#ifdef SIMGYM_ENABLE_HTTP_BACKEND
inline std::unique_ptr<JsonBackend> make_backend(const RunConfig& cfg) {
    if (cfg.backend_kind == "http") return std::make_unique<HttpJsonBackend>(cfg.http);
    return std::make_unique<ScriptedJsonBackend>();
}
#else
inline std::unique_ptr<JsonBackend> make_backend(const RunConfig& cfg) {
    if (cfg.backend_kind == "http")
        throw Error(ErrorCode::ConfigError, "http backend not compiled into this binary");
    return std::make_unique<ScriptedJsonBackend>();
}
#endif

inline StageOutcome run_simulate(const RunConfig& cfg) {
    using namespace pipeline_detail;
    const fs::path personas_dir = fs::path(cfg.output_dir) / "personas";
    const fs::path dir = fs::path(cfg.output_dir) / "logs";
    const std::string cfg_hash = config_hash(cfg);

    std::map<std::string, std::string> inputs;
    std::vector<fs::path> outputs;
    for (const auto& shop : cfg.shops) {
        const fs::path pf = personas_dir / (shop.shop_id + ".json");
        require_artifact(pf, "personas");
        inputs[pf.string()] = hash_file(pf);
        inputs[shop.storefront_path] = hash_file(shop.storefront_path);
        for (std::size_t r = 0; r < cfg.repeat; ++r) {
            for (const char* theme : {"control", "treatment"}) {
                outputs.push_back(dir / (shop.shop_id + "." + theme + ".run" +
                                         std::to_string(r) + ".jsonl"));
            }
        }
    }
    if (manifest_matches(load_manifest(dir), inputs, cfg_hash, outputs))
        return {true, "simulate up-to-date"};

    std::unique_ptr<JsonBackend> llm;
    if (cfg.backend_kind == "http") llm = make_backend(cfg);

    std::size_t total_sessions = 0;
    for (const auto& shop : cfg.shops) {
        const auto personas_art =
            nlohmann::json::parse(read_file(personas_dir / (shop.shop_id + ".json")));
        if (personas_art.value("config_hash", "") != cfg_hash)
            throw Error(ErrorCode::StaleManifest,
                        "personas artifact for " + shop.shop_id +
                            " was built from a different config; re-run personas");
        const Storefront storefront =
            load_storefront(nlohmann::json::parse(read_file(shop.storefront_path)));

        std::vector<AgentProfile> profiles;
        for (const auto& cj : personas_art.at("clusters")) {
            for (const auto& pj : cj.at("profiles")) profiles.push_back(pj.get<AgentProfile>());
        }

        ScriptedPolicyConfig policy = cfg.policy;
        policy.category_median_price = storefront.catalog.category_medians();
        policy.global_median_price = storefront.catalog.global_median_price();
        policy.lexicons = cfg.lexicons;

        for (std::size_t r = 0; r < cfg.repeat; ++r) {
            const std::uint64_t repeat_seed = rng::mix(cfg.run_seed, r);
            for (const std::string theme : {"control", "treatment"}) {
                const std::string theme_id = storefront.theme(theme).theme_id;
                std::vector<SessionLog> logs(profiles.size());
                std::atomic<std::size_t> cursor{0};
                const std::size_t worker_count =
                    std::max<std::size_t>(1, std::min(cfg.workers, profiles.size()));
                auto work = [&]() {
                    // Each worker owns its decision maker; results land in
                    // per-agent slots so scheduling cannot change the output.
                    std::unique_ptr<DecisionMaker> maker;
                    if (cfg.backend_kind == "http") {
                        maker = std::make_unique<LlmDecisionMaker>(*llm, cfg.limits.llm_retries);
                    } else {
                        maker = std::make_unique<ScriptedDecisionMaker>(policy);
                    }
                    for (;;) {
                        const std::size_t i = cursor.fetch_add(1);
                        if (i >= profiles.size()) break;
                        const std::uint64_t seed =
                            session_seed(repeat_seed, shop.shop_id, i, theme_id);
                        logs[i] = run_session(profiles[i], storefront, theme, *maker, cfg.limits,
                                              seed, i);
                    }
                };
                std::vector<std::thread> threads;
                for (std::size_t w = 0; w < worker_count; ++w) threads.emplace_back(work);
                for (auto& t : threads) t.join();

                std::string jsonl;
                for (const auto& log : logs) jsonl += nlohmann::json(log).dump() + "\n";
                write_file(dir / (shop.shop_id + "." + theme + ".run" + std::to_string(r) +
                                  ".jsonl"),
                           jsonl);
                total_sessions += logs.size();
            }
        }
    }
    write_manifest(dir, "simulate", inputs, cfg_hash, cfg.run_seed, outputs);
    return {false, "simulated " + std::to_string(total_sessions) + " sessions"};
}

// ---------------------------------------------------------------------------
// Stage: evaluate

namespace pipeline_detail {

inline std::vector<SessionLog> read_jsonl_logs(const fs::path& path) {
    std::vector<SessionLog> logs;
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingStageInput, "cannot read " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        logs.push_back(nlohmann::json::parse(line).get<SessionLog>());
    }
    return logs;
}

inline void require_logs_manifest(const RunConfig& cfg) {
    const fs::path dir = fs::path(cfg.output_dir) / "logs";
    const auto manifest = load_manifest(dir);
    if (manifest.is_null())
        throw Error(ErrorCode::MissingStageInput, "no simulation logs; run `simulate` first");
    if (manifest.value("config_hash", "") != config_hash(cfg))
        throw Error(ErrorCode::StaleManifest,
                    "logs were produced by a different config; re-run simulate");
}

}  // namespace pipeline_detail

inline StageOutcome run_evaluate(const RunConfig& cfg) {
    using namespace pipeline_detail;
    require_logs_manifest(cfg);
    const fs::path logs_dir = fs::path(cfg.output_dir) / "logs";
    const fs::path dir = fs::path(cfg.output_dir) / "eval";
    const std::string cfg_hash = config_hash(cfg);

    nlohmann::json runs = nlohmann::json::array();
    std::vector<double> align_rates;
    std::vector<double> align_probs;
    std::vector<double> pearsons;
    std::vector<double> slopes;
    std::map<std::string, std::vector<double>> per_shop_agent_delta;

    for (std::size_t r = 0; r < cfg.repeat; ++r) {
        std::vector<ShopResult> shops;
        std::map<std::string, std::pair<std::vector<SessionLog>, std::vector<SessionLog>>> logs;
        for (const auto& shop : cfg.shops) {
            const auto control = read_jsonl_logs(
                logs_dir / (shop.shop_id + ".control.run" + std::to_string(r) + ".jsonl"));
            const auto treatment = read_jsonl_logs(
                logs_dir / (shop.shop_id + ".treatment.run" + std::to_string(r) + ".jsonl"));
            shops.push_back(shop_result_from_logs(shop.shop_id, shop.human_delta, control,
                                                  treatment));
            per_shop_agent_delta[shop.shop_id].push_back(shops.back().agent_delta());
            logs[shop.shop_id] = {control, treatment};
        }
        EvaluationConfig eval_cfg = cfg.eval;
        eval_cfg.seed = rng::mix(cfg.run_seed, r);
        const EvaluationReport report = evaluate(shops, logs, eval_cfg);

        align_rates.push_back(report.metrics.alignment_rate);
        align_probs.push_back(report.metrics.alignment_probability);
        if (report.metrics.pearson) pearsons.push_back(*report.metrics.pearson);
        if (report.slope) slopes.push_back(*report.slope);

        nlohmann::json rj = report;
        rj["run"] = r;
        runs.push_back(std::move(rj));
    }

    nlohmann::json averaged;
    averaged["alignment_rate"] = stats::mean(align_rates);
    averaged["alignment_probability"] = stats::mean(align_probs);
    averaged["pearson"] = pearsons.empty() ? nlohmann::json() : nlohmann::json(stats::mean(pearsons));
    averaged["slope"] = slopes.empty() ? nlohmann::json() : nlohmann::json(stats::mean(slopes));
    averaged["runs_averaged"] = cfg.repeat;

    nlohmann::json out;
    out["config_hash"] = cfg_hash;
    out["seed"] = cfg.run_seed;
    out["averaged"] = averaged;
    out["runs"] = std::move(runs);
    write_file(dir / "report.json", out.dump(2) + "\n");

    // Scatter CSV: per shop, run-averaged agent delta against the human delta.
    std::string csv = "shop_id,agent_delta,human_delta\n";
    for (const auto& shop : cfg.shops) {
        csv += shop.shop_id + "," +
               std::to_string(stats::mean(per_shop_agent_delta[shop.shop_id])) + "," +
               std::to_string(shop.human_delta) + "\n";
    }
    write_file(dir / "scatter.csv", csv);
    return {false, "evaluation written to " + (dir / "report.json").string()};
}

// ---------------------------------------------------------------------------
// Stage: bootstrap

inline StageOutcome run_bootstrap(const RunConfig& cfg) {
    using namespace pipeline_detail;
    require_logs_manifest(cfg);
    if (cfg.repeat < 2)
        throw Error(ErrorCode::MissingStageInput,
                    "bootstrap needs two independent runs; simulate with repeat >= 2");
    const fs::path logs_dir = fs::path(cfg.output_dir) / "logs";
    const fs::path dir = fs::path(cfg.output_dir) / "eval";

    RunLogs run1;
    RunLogs run2;
    for (const auto& shop : cfg.shops) {
        run1[shop.shop_id] = {
            read_jsonl_logs(logs_dir / (shop.shop_id + ".control.run0.jsonl")),
            read_jsonl_logs(logs_dir / (shop.shop_id + ".treatment.run0.jsonl"))};
        run2[shop.shop_id] = {
            read_jsonl_logs(logs_dir / (shop.shop_id + ".control.run1.jsonl")),
            read_jsonl_logs(logs_dir / (shop.shop_id + ".treatment.run1.jsonl"))};
    }
    const BootstrapReport report = bootstrap_analysis(run1, run2, cfg.bootstrap_sizes,
                                                      cfg.bootstrap_iterations, cfg.run_seed);

    nlohmann::json out = report;
    out["config_hash"] = config_hash(cfg);
    write_file(dir / "bootstrap.json", out.dump(2) + "\n");

    // Fold the bootstrap block into the evaluation report when one exists.
    const fs::path report_path = dir / "report.json";
    if (fs::exists(report_path)) {
        auto eval_report = nlohmann::json::parse(read_file(report_path));
        if (eval_report.value("config_hash", "") == config_hash(cfg)) {
            eval_report["bootstrap"] = out;
            write_file(report_path, eval_report.dump(2) + "\n");
        }
    }

    std::string csv = "size,metric,mean,median,p10,p90\n";
    auto cell_row = [](std::size_t size, const std::string& metric, const BootstrapCell& c) {
        auto opt = [](const std::optional<double>& v) {
            return v ? std::to_string(*v) : std::string("nan");
        };
        return std::to_string(size) + "," + metric + "," + opt(c.mean) + "," + opt(c.median) +
               "," + opt(c.p10) + "," + opt(c.p90) + "\n";
    };
    for (const auto& row : report.rows) {
        csv += cell_row(row.size, "sign_alignment", row.sign_alignment);
        csv += cell_row(row.size, "correlation", row.correlation);
    }
    write_file(dir / "bootstrap_bands.csv", csv);
    return {false, "bootstrap written to " + (dir / "bootstrap.json").string()};
}

// ---------------------------------------------------------------------------
// Stage: report

inline StageOutcome run_report(const RunConfig& cfg) {
    using namespace pipeline_detail;
    const fs::path eval_dir = fs::path(cfg.output_dir) / "eval";
    const fs::path report_path = eval_dir / "report.json";
    require_artifact(report_path, "evaluate");
    const auto report = nlohmann::json::parse(read_file(report_path));
    if (report.value("config_hash", "") != config_hash(cfg))
        throw Error(ErrorCode::StaleManifest, "evaluation report from a different config");

    const fs::path logs_dir = fs::path(cfg.output_dir) / "logs";
    std::vector<SessionLog> all_logs;
    std::map<std::string, std::vector<double>> mode_shares;
    std::size_t distributions = 0;
    for (std::size_t r = 0; r < cfg.repeat; ++r) {
        for (const auto& shop : cfg.shops) {
            for (const char* theme : {"control", "treatment"}) {
                const fs::path p = logs_dir / (shop.shop_id + "." + theme + ".run" +
                                               std::to_string(r) + ".jsonl");
                if (!fs::exists(p)) continue;
                auto logs = read_jsonl_logs(p);
                all_logs.insert(all_logs.end(), logs.begin(), logs.end());
            }
        }
    }
    for (const auto& rj : report.at("runs")) {
        for (const auto& shop : rj.at("per_shop")) {
            const auto& dist = shop.at("behavioral_distribution");
            if (dist.value("no_differing_agents", false) || dist.value("classified", 0) == 0)
                continue;
            ++distributions;
            for (const auto& [mode, share] : dist.at("shares").items())
                mode_shares[mode].push_back(share.get<double>());
        }
    }

    std::ostringstream text;
    text << "simgym experiment report\n";
    text << "========================\n\n";
    const auto& avg = report.at("averaged");
    text << "Predictive validity (averaged over " << avg.at("runs_averaged").get<std::size_t>()
         << " run(s)):\n";
    auto num_or_na = [](const nlohmann::json& v) {
        return v.is_null() ? std::string("n/a (undefined)") : std::to_string(v.get<double>());
    };
    text << "  correlation            " << num_or_na(avg.at("pearson")) << "\n";
    text << "  alignment rate         " << avg.at("alignment_rate").get<double>() << " %\n";
    text << "  alignment probability  " << avg.at("alignment_probability").get<double>() << "\n";
    text << "  fitted slope           " << num_or_na(avg.at("slope")) << "\n\n";

    if (!all_logs.empty()) {
        const JourneyStats js = journey_stats(all_logs);
        text << "Session outcomes (" << all_logs.size() << " sessions):\n";
        text << "  goal reached           " << js.goal_reached_pct << " %\n";
        text << "  timeout (step limit)   " << js.timeout_pct << " %\n";
        text << "  avg journey length     " << js.mean_steps << " steps\n";
        text << "  journey length std     " << js.std_steps << " steps\n\n";
    }

    if (distributions > 0) {
        text << "Behavioral distribution of differing agents (mean share across shops):\n";
        for (const auto& mode : all_behavioral_modes()) {
            const auto it = mode_shares.find(behavioral_mode_name(mode));
            const double share = it == mode_shares.end() ? 0.0 : stats::mean(it->second);
            text << "  " << behavioral_mode_name(mode) << ": " << 100.0 * share << " %\n";
        }
        text << "\n";
    }

    text << "Per-shop deltas:\n";
    text << "  shop, agent delta (avg), human delta\n";
    {
        std::map<std::string, std::vector<double>> shop_deltas;
        for (const auto& rj : report.at("runs")) {
            for (const auto& shop : rj.at("per_shop")) {
                shop_deltas[shop.at("shop_id").get<std::string>()].push_back(
                    shop.at("agent_delta").get<double>());
            }
        }
        for (const auto& shop : cfg.shops) {
            text << "  " << shop.shop_id << ", " << stats::mean(shop_deltas[shop.shop_id]) << ", "
                 << shop.human_delta << "\n";
        }
    }
    if (fs::exists(eval_dir / "bootstrap.json")) {
        text << "\nBootstrap bands: see eval/bootstrap_bands.csv\n";
    }

    write_file(eval_dir / "report.txt", text.str());
    return {false, text.str()};
}

}  // namespace simgym
