#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "simgym/agent.hpp"
#include "simgym/common.hpp"

namespace simgym {

struct ArmCounts {
    std::size_t successes = 0;
    std::size_t n = 0;

    double rate() const { return n == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(n); }
};

struct ShopResult {
    std::string shop_id;
    double human_delta = 0.0;  // treatment - control, signed
    ArmCounts agent_control;
    ArmCounts agent_treatment;
    std::map<std::size_t, std::pair<ArmCounts, ArmCounts>> per_cluster;  // control, treatment

    double agent_delta() const { return agent_treatment.rate() - agent_control.rate(); }
};

struct Metrics {
    double alignment_rate = 0.0;        // percentage
    double alignment_probability = 0.0;  // mean posterior agreement, in [0,1]
    std::optional<double> pearson;       // per-shop deltas; nullopt when undefined
    std::map<std::size_t, std::optional<double>> per_cluster_pearson;
    std::size_t shops_evaluated = 0;
    std::size_t shops_excluded = 0;  // zero human delta
};

struct BootstrapCell {
    std::optional<double> mean;
    std::optional<double> median;
    std::optional<double> p10;
    std::optional<double> p90;
};

struct BootstrapSizeRow {
    std::size_t size = 0;
    BootstrapCell sign_alignment;
    BootstrapCell correlation;
};

struct BootstrapReport {
    std::vector<BootstrapSizeRow> rows;
    std::size_t iterations = 0;
    std::uint64_t seed = 0;
};

enum class BehavioralMode {
    ProductNotFound,
    NoA2CDecision,
    FailedToAdd,
    StuckInLoop,
    PriceRejection,
    ThemeExit,
    Other,
};

inline const char* behavioral_mode_name(BehavioralMode m) {
    switch (m) {
        case BehavioralMode::ProductNotFound: return "ProductNotFound";
        case BehavioralMode::NoA2CDecision: return "NoA2CDecision";
        case BehavioralMode::FailedToAdd: return "FailedToAdd";
        case BehavioralMode::StuckInLoop: return "StuckInLoop";
        case BehavioralMode::PriceRejection: return "PriceRejection";
        case BehavioralMode::ThemeExit: return "ThemeExit";
        case BehavioralMode::Other: return "Other";
    }
    return "?";
}

inline const std::vector<BehavioralMode>& all_behavioral_modes() {
    static const std::vector<BehavioralMode> modes = {
        BehavioralMode::ProductNotFound, BehavioralMode::NoA2CDecision,
        BehavioralMode::FailedToAdd,     BehavioralMode::StuckInLoop,
        BehavioralMode::PriceRejection,  BehavioralMode::ThemeExit,
        BehavioralMode::Other};
    return modes;
}

struct BehavioralDistribution {
    std::map<std::string, double> shares;  // over mode names; sums to 1 when classified > 0
    std::size_t classified = 0;
    bool no_differing_agents = false;
};

// ---------------------------------------------------------------------------

inline double a2c_rate(const std::vector<SessionLog>& logs) {
    if (logs.empty()) throw Error(ErrorCode::EmptyInput, "no logs");
    std::size_t hits = 0;
    for (const auto& log : logs) {
        if (log.a2c) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logs.size());
}

inline int sign_of(double x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); }

// Percentage of shops (human_delta != 0) whose agent delta shares the human
// delta's sign. An agent delta of exactly zero counts as misaligned.
inline double alignment_rate(const std::vector<ShopResult>& shops) {
    std::size_t evaluated = 0;
    std::size_t aligned = 0;
    for (const auto& shop : shops) {
        if (shop.human_delta == 0.0) continue;
        ++evaluated;
        const int agent_sign = sign_of(shop.agent_delta());
        if (agent_sign != 0 && agent_sign == sign_of(shop.human_delta)) ++aligned;
    }
    if (evaluated == 0) throw Error(ErrorCode::NoEvaluableShops, "every shop has zero human delta");
    return 100.0 * static_cast<double>(aligned) / static_cast<double>(evaluated);
}

struct AlignmentProbabilityConfig {
    double prior_alpha = 1.0;  // Beta(1,1): uniform
    double prior_beta = 1.0;
};

// Monte-Carlo posterior probability that the agent arms move the same way the
// humans did: independent Beta-binomial posteriors per arm, P(p_t > p_c) when
// the human delta is positive, P(p_c > p_t) when negative.
inline double alignment_probability(const ShopResult& shop, std::size_t mc_samples,
                                    std::uint64_t seed,
                                    const AlignmentProbabilityConfig& cfg = {}) {
    if (shop.human_delta == 0.0)
        throw Error(ErrorCode::ZeroHumanDelta, shop.shop_id + " has zero human delta");
    if (mc_samples < 10000)
        throw Error(ErrorCode::InvalidArgument, "mc_samples must be >= 10000");

    const double ac = cfg.prior_alpha + static_cast<double>(shop.agent_control.successes);
    const double bc = cfg.prior_beta +
                      static_cast<double>(shop.agent_control.n - shop.agent_control.successes);
    const double at = cfg.prior_alpha + static_cast<double>(shop.agent_treatment.successes);
    const double bt = cfg.prior_beta +
                      static_cast<double>(shop.agent_treatment.n - shop.agent_treatment.successes);

    rng::Stream stream(rng::mix(seed, rng::hash_string(shop.shop_id)));
    std::size_t agree = 0;
    for (std::size_t i = 0; i < mc_samples; ++i) {
        const double pc = stream.next_beta(ac, bc);
        const double pt = stream.next_beta(at, bt);
        if (shop.human_delta > 0 ? pt > pc : pc > pt) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(mc_samples);
}

// Product-moment correlation; nullopt when either side has zero variance.
inline std::optional<double> pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw Error(ErrorCode::LengthMismatch,
                    std::to_string(xs.size()) + " vs " + std::to_string(ys.size()));
    const std::size_t n = xs.size();
    if (n < 2) return std::nullopt;
    const double mx = stats::mean(xs);
    const double my = stats::mean(ys);
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

// Fixed precedence: loop guard, theme exit, price rejection, failed add,
// product not found, no-A2C decision, other.
inline BehavioralMode classify_behavior(const SessionLog& log) {
    if (log.termination.kind == TerminationKind::LoopGuard) return BehavioralMode::StuckInLoop;
    for (const auto& entry : log.entries) {
        if (entry.outcome.rfind("page:external:", 0) == 0 ||
            entry.outcome.find("-> page:external:") != std::string::npos)
            return BehavioralMode::ThemeExit;
    }
    if (log.termination.kind == TerminationKind::AgentTerminated &&
        log.termination.reason == TerminationReason::PriceTooHigh)
        return BehavioralMode::PriceRejection;
    for (const auto& entry : log.entries) {
        if (entry.outcome == "error:out_of_stock") return BehavioralMode::FailedToAdd;
    }
    if (log.termination.kind == TerminationKind::AgentTerminated) {
        if (log.termination.reason == TerminationReason::NoSuitableProduct)
            return BehavioralMode::ProductNotFound;
        if (log.termination.reason == TerminationReason::NoA2CDecision)
            return BehavioralMode::NoA2CDecision;
    }
    return BehavioralMode::Other;
}

// Distribution over the behavioral modes of agents whose A2C outcome differs
// between themes; the non-converting side of each differing pair is classified.
inline BehavioralDistribution behavioral_distribution(const std::vector<SessionLog>& control_logs,
                                                      const std::vector<SessionLog>& treatment_logs) {
    if (control_logs.size() != treatment_logs.size())
        throw Error(ErrorCode::LengthMismatch, "control and treatment logs must pair by index");
    BehavioralDistribution dist;
    std::map<std::string, std::size_t> counts;
    for (const auto& mode : all_behavioral_modes()) counts[behavioral_mode_name(mode)] = 0;
    for (std::size_t i = 0; i < control_logs.size(); ++i) {
        const bool ca = control_logs[i].a2c;
        const bool ta = treatment_logs[i].a2c;
        if (ca == ta) continue;
        const SessionLog& failed = ca ? treatment_logs[i] : control_logs[i];
        ++counts[behavioral_mode_name(classify_behavior(failed))];
        ++dist.classified;
    }
    if (dist.classified == 0) {
        dist.no_differing_agents = true;
        return dist;
    }
    for (const auto& [mode, count] : counts)
        dist.shares[mode] = static_cast<double>(count) / static_cast<double>(dist.classified);
    return dist;
}

// ---------------------------------------------------------------------------
// Bootstrap sample-size analysis

// Logs for one full simulation run: shop id -> (control logs, treatment logs).
using RunLogs = std::map<std::string, std::pair<std::vector<SessionLog>, std::vector<SessionLog>>>;

namespace metrics_detail {

inline double resampled_rate(const std::vector<SessionLog>& pool, std::size_t size,
                             rng::Stream& stream) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < size; ++i) {
        if (pool[stream.next_index(pool.size())].a2c) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(size);
}

inline BootstrapCell summarize(const std::vector<double>& values) {
    BootstrapCell cell;
    if (values.empty()) return cell;  // stays undefined
    cell.mean = stats::mean(values);
    cell.median = stats::percentile(values, 0.5);
    cell.p10 = stats::percentile(values, 0.10);
    cell.p90 = stats::percentile(values, 0.90);
    return cell;
}

}  // namespace metrics_detail

// Cross-run self-consistency under resampling: for every size, resample agents
// with replacement per shop/theme independently from two runs, compare the
// runs' per-shop deltas by sign agreement (ties disagree) and Pearson.
// Iteration streams derive from (seed, size, iteration), so any execution
// order produces the same report.
inline BootstrapReport bootstrap_analysis(const RunLogs& run1, const RunLogs& run2,
                                          const std::vector<std::size_t>& sizes,
                                          std::size_t iterations, std::uint64_t seed) {
    if (iterations < 1) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 1");
    if (run1.size() != run2.size())
        throw Error(ErrorCode::ShopMismatch, "runs cover different shop counts");
    for (const auto& [shop, logs] : run1) {
        auto it = run2.find(shop);
        if (it == run2.end()) throw Error(ErrorCode::ShopMismatch, "run2 missing shop " + shop);
        if (logs.first.empty() || logs.second.empty() || it->second.first.empty() ||
            it->second.second.empty())
            throw Error(ErrorCode::EmptyInput, "shop " + shop + " has an empty log pool");
    }

    BootstrapReport report;
    report.iterations = iterations;
    report.seed = seed;
    for (const std::size_t size : sizes) {
        std::vector<double> agreements;
        std::vector<double> correlations;
        agreements.reserve(iterations);
        for (std::size_t iter = 0; iter < iterations; ++iter) {
            rng::Stream stream(rng::mix(rng::mix(seed, size), iter));
            std::vector<double> delta1;
            std::vector<double> delta2;
            std::size_t agree = 0;
            for (const auto& [shop, logs1] : run1) {
                const auto& logs2 = run2.at(shop);
                const double d1 =
                    metrics_detail::resampled_rate(logs1.second, size, stream) -
                    metrics_detail::resampled_rate(logs1.first, size, stream);
                const double d2 =
                    metrics_detail::resampled_rate(logs2.second, size, stream) -
                    metrics_detail::resampled_rate(logs2.first, size, stream);
                delta1.push_back(d1);
                delta2.push_back(d2);
                if (sign_of(d1) != 0 && sign_of(d1) == sign_of(d2)) ++agree;
            }
            agreements.push_back(static_cast<double>(agree) /
                                 static_cast<double>(delta1.size()));
            if (auto r = pearson(delta1, delta2)) correlations.push_back(*r);
        }
        BootstrapSizeRow row;
        row.size = size;
        row.sign_alignment = metrics_detail::summarize(agreements);
        row.correlation = metrics_detail::summarize(correlations);
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Whole-experiment evaluation

struct ShopEvaluation {
    std::string shop_id;
    double human_delta = 0.0;
    double agent_delta = 0.0;
    std::optional<double> alignment_prob;  // absent when human delta is zero
    BehavioralDistribution behavioral;
    // Normal-approximation z of the agent delta and whether it sits inside the
    // two-sided 99% binomial noise band (a null-looking result).
    double agent_delta_z = 0.0;
    bool within_noise_band = true;
};

struct EvaluationConfig {
    std::size_t mc_samples = 100000;
    std::uint64_t seed = 0;
    AlignmentProbabilityConfig prior;
};

struct EvaluationReport {
    Metrics metrics;
    std::vector<ShopEvaluation> per_shop;
    std::vector<std::pair<double, double>> scatter;  // (agent delta, human delta)
    std::optional<double> slope;  // least-squares slope of human on agent delta
};

inline ShopResult shop_result_from_logs(const std::string& shop_id, double human_delta,
                                        const std::vector<SessionLog>& control_logs,
                                        const std::vector<SessionLog>& treatment_logs) {
    ShopResult result;
    result.shop_id = shop_id;
    result.human_delta = human_delta;
    auto tally = [](const std::vector<SessionLog>& logs, ArmCounts& total,
                    std::map<std::size_t, ArmCounts>& per_cluster) {
        for (const auto& log : logs) {
            ++total.n;
            if (log.a2c) ++total.successes;
            auto& cell = per_cluster[log.cluster_id];
            ++cell.n;
            if (log.a2c) ++cell.successes;
        }
    };
    std::map<std::size_t, ArmCounts> control_clusters;
    std::map<std::size_t, ArmCounts> treatment_clusters;
    tally(control_logs, result.agent_control, control_clusters);
    tally(treatment_logs, result.agent_treatment, treatment_clusters);
    for (const auto& [cid, counts] : control_clusters)
        result.per_cluster[cid] = {counts, treatment_clusters[cid]};
    for (const auto& [cid, counts] : treatment_clusters) {
        if (!result.per_cluster.count(cid)) result.per_cluster[cid] = {ArmCounts{}, counts};
    }
    return result;
}

inline EvaluationReport evaluate(const std::vector<ShopResult>& shops,
                                 const std::map<std::string, std::pair<std::vector<SessionLog>,
                                                                       std::vector<SessionLog>>>& logs,
                                 const EvaluationConfig& config = {}) {
    EvaluationReport report;
    std::vector<double> agent_deltas;
    std::vector<double> human_deltas;
    std::vector<double> probs;

    for (const auto& shop : shops) {
        ShopEvaluation ev;
        ev.shop_id = shop.shop_id;
        ev.human_delta = shop.human_delta;
        ev.agent_delta = shop.agent_delta();
        if (shop.agent_control.n > 0 && shop.agent_treatment.n > 0) {
            const double pc = shop.agent_control.rate();
            const double pt = shop.agent_treatment.rate();
            const double se =
                std::sqrt(pc * (1 - pc) / static_cast<double>(shop.agent_control.n) +
                          pt * (1 - pt) / static_cast<double>(shop.agent_treatment.n));
            ev.agent_delta_z = se > 0 ? ev.agent_delta / se : 0.0;
            ev.within_noise_band = std::abs(ev.agent_delta_z) <= 2.576;
        }
        if (shop.human_delta != 0.0) {
            ev.alignment_prob = alignment_probability(shop, config.mc_samples, config.seed,
                                                      config.prior);
            probs.push_back(*ev.alignment_prob);
            ++report.metrics.shops_evaluated;
        } else {
            ++report.metrics.shops_excluded;
        }
        auto it = logs.find(shop.shop_id);
        if (it != logs.end() && it->second.first.size() == it->second.second.size() &&
            !it->second.first.empty())
            ev.behavioral = behavioral_distribution(it->second.first, it->second.second);
        report.per_shop.push_back(std::move(ev));
        report.scatter.emplace_back(shop.agent_delta(), shop.human_delta);
        agent_deltas.push_back(shop.agent_delta());
        human_deltas.push_back(shop.human_delta);
    }

    report.metrics.alignment_rate = alignment_rate(shops);
    report.metrics.alignment_probability = stats::mean(probs);
    report.metrics.pearson = pearson(agent_deltas, human_deltas);

    // Per-cluster correlation across shops, one series per cluster id.
    std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> cluster_series;
    for (const auto& shop : shops) {
        for (const auto& [cid, arms] : shop.per_cluster) {
            if (arms.first.n == 0 || arms.second.n == 0) continue;
            cluster_series[cid].first.push_back(arms.second.rate() - arms.first.rate());
            cluster_series[cid].second.push_back(shop.human_delta);
        }
    }
    for (const auto& [cid, series] : cluster_series) {
        report.metrics.per_cluster_pearson[cid] =
            series.first.size() >= 2 ? pearson(series.first, series.second) : std::nullopt;
    }

    // Least-squares fit of human delta on agent delta for Fig-5-style plots.
    const double mx = stats::mean(agent_deltas);
    const double my = stats::mean(human_deltas);
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < agent_deltas.size(); ++i) {
        sxx += (agent_deltas[i] - mx) * (agent_deltas[i] - mx);
        sxy += (agent_deltas[i] - mx) * (human_deltas[i] - my);
    }
    if (sxx > 0.0) report.slope = sxy / sxx;
    return report;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const BehavioralDistribution& d) {
    j = {{"shares", d.shares},
         {"classified", d.classified},
         {"no_differing_agents", d.no_differing_agents}};
}

inline void to_json(nlohmann::json& j, const ShopEvaluation& e) {
    j = {{"shop_id", e.shop_id},
         {"human_delta", e.human_delta},
         {"agent_delta", e.agent_delta},
         {"agent_delta_z", e.agent_delta_z},
         {"within_noise_band", e.within_noise_band},
         {"behavioral_distribution", e.behavioral}};
    if (e.alignment_prob) j["alignment_prob"] = *e.alignment_prob;
}

inline void to_json(nlohmann::json& j, const Metrics& m) {
    j = {{"alignment_rate", m.alignment_rate},
         {"alignment_probability", m.alignment_probability},
         {"shops_evaluated", m.shops_evaluated},
         {"shops_excluded", m.shops_excluded}};
    j["pearson"] = m.pearson ? nlohmann::json(*m.pearson) : nlohmann::json();
    nlohmann::json pc = nlohmann::json::object();
    for (const auto& [cid, r] : m.per_cluster_pearson)
        pc[std::to_string(cid)] = r ? nlohmann::json(*r) : nlohmann::json();
    j["per_cluster_pearson"] = pc;
}

inline void to_json(nlohmann::json& j, const BootstrapCell& c) {
    j = nlohmann::json::object();
    j["mean"] = c.mean ? nlohmann::json(*c.mean) : nlohmann::json();
    j["median"] = c.median ? nlohmann::json(*c.median) : nlohmann::json();
    j["p10"] = c.p10 ? nlohmann::json(*c.p10) : nlohmann::json();
    j["p90"] = c.p90 ? nlohmann::json(*c.p90) : nlohmann::json();
}

inline void to_json(nlohmann::json& j, const BootstrapSizeRow& r) {
    j = {{"size", r.size}, {"sign_alignment", r.sign_alignment}, {"correlation", r.correlation}};
}

inline void to_json(nlohmann::json& j, const BootstrapReport& r) {
    j = {{"sizes", r.rows}, {"iterations", r.iterations}, {"seed", r.seed}};
}

inline void to_json(nlohmann::json& j, const EvaluationReport& r) {
    j = {{"metrics", r.metrics}, {"per_shop", r.per_shop}};
    nlohmann::json scatter = nlohmann::json::array();
    for (const auto& [x, y] : r.scatter) scatter.push_back({{"x", x}, {"y", y}});
    j["scatter"] = scatter;
    j["slope"] = r.slope ? nlohmann::json(*r.slope) : nlohmann::json();
}

}  // namespace simgym
