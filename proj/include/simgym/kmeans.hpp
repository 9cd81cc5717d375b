#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "simgym/common.hpp"
#include "simgym/events.hpp"

namespace simgym {

struct ClusterModel {
    std::size_t k = 0;
    std::vector<std::vector<double>> centroids;  // k x d, z-scored space
    double inertia = 0.0;
    std::size_t iterations_run = 0;
    std::uint64_t seed = 0;
};

struct Assignment {
    std::size_t cluster_id = 0;
    double distance = 0.0;
    double confidence = 0.0;  // 1 / (1 + distance)
};

struct KSelectionRow {
    std::size_t k = 0;
    double inertia = 0.0;
    // Relative inertia improvement from fitting k+1 clusters instead of k.
    // 0 for the last row, which has no successor to compare against.
    double relative_inertia_drop = 0.0;
    double min_cluster_share = 0.0;
};

struct KSelectionReport {
    std::vector<KSelectionRow> rows;
    std::size_t chosen_k = 0;
};

struct ElbowConfig {
    double drop_threshold = 0.10;
    double min_share = 0.05;
    std::size_t default_k = 5;
};

namespace detail {

inline double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline std::size_t nearest_centroid(const std::vector<std::vector<double>>& centroids,
                                    const std::vector<double>& x, double* sq_out) {
    std::size_t best = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double sq = sq_distance(centroids[c], x);
        if (sq < best_sq) {  // strict: ties keep the lowest index
            best_sq = sq;
            best = c;
        }
    }
    if (sq_out) *sq_out = best_sq;
    return best;
}

// k-means++ seeding. Falls back to uniform picks when all remaining squared
// distances are zero (duplicate-heavy data).
inline std::vector<std::vector<double>> kmeanspp_init(const std::vector<std::vector<double>>& rows,
                                                      std::size_t k, rng::Stream& stream) {
    std::vector<std::vector<double>> centroids;
    centroids.reserve(k);
    centroids.push_back(rows[stream.next_index(rows.size())]);
    std::vector<double> dist_sq(rows.size(), 0.0);
    while (centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double sq = 0.0;
            nearest_centroid(centroids, rows[i], &sq);
            dist_sq[i] = sq;
            total += sq;
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = stream.next_index(rows.size());
        } else {
            const double r = stream.next_double() * total;
            double acc = 0.0;
            pick = rows.size() - 1;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                acc += dist_sq[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(rows[pick]);
    }
    return centroids;
}

}  // namespace detail

struct LloydTrace {
    std::vector<double> inertia_per_iteration;
};

inline ClusterModel kmeans_fit(const StandardizedMatrix& X, std::size_t k, std::uint64_t seed,
                               std::size_t max_iter = 100, double tol = 1e-4,
                               LloydTrace* trace = nullptr) {
    if (k == 0) throw Error(ErrorCode::DegenerateK, "k must be >= 1");
    const auto& rows = X.rows;
    if (rows.size() < k)
        throw Error(ErrorCode::TooFewRows,
                    std::to_string(rows.size()) + " rows < k=" + std::to_string(k));

    rng::Stream stream(rng::mix(seed, 0x6b6d65616e73ULL));
    ClusterModel model;
    model.k = k;
    model.seed = seed;
    model.centroids = detail::kmeanspp_init(rows, k, stream);

    std::vector<std::size_t> assignment(rows.size(), 0);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        // Assignment step.
        double inertia = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double sq = 0.0;
            assignment[i] = detail::nearest_centroid(model.centroids, rows[i], &sq);
            inertia += sq;
        }
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t a : assignment) ++counts[a];

        // Re-seat empty clusters on the point currently worst served, taken
        // only from clusters that keep at least two members.
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far_idx = rows.size();
            double far_sq = -1.0;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (counts[assignment[i]] < 2) continue;
                const double sq = detail::sq_distance(model.centroids[assignment[i]], rows[i]);
                if (sq > far_sq) {
                    far_sq = sq;
                    far_idx = i;
                }
            }
            if (far_idx == rows.size()) break;  // cannot happen while n >= k
            --counts[assignment[far_idx]];
            assignment[far_idx] = c;
            ++counts[c];
        }

        if (trace) trace->inertia_per_iteration.push_back(inertia);
        model.iterations_run = iter + 1;

        // Update step.
        std::vector<std::vector<double>> next(k, std::vector<double>(rows[0].size(), 0.0));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t c = 0; c < rows[i].size(); ++c) next[assignment[i]][c] += rows[i][c];
        }
        double max_shift_sq = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            for (double& v : next[c]) v /= static_cast<double>(counts[c]);
            max_shift_sq = std::max(max_shift_sq, detail::sq_distance(next[c], model.centroids[c]));
        }
        model.centroids = std::move(next);
        if (std::sqrt(max_shift_sq) < tol) break;
    }

    model.inertia = 0.0;
    for (const auto& row : rows) {
        double sq = 0.0;
        detail::nearest_centroid(model.centroids, row, &sq);
        model.inertia += sq;
    }
    return model;
}

inline Assignment assign(const ClusterModel& model, const std::vector<double>& x) {
    if (model.centroids.empty() || model.centroids.front().size() != x.size())
        throw Error(ErrorCode::DimensionMismatch, "vector dimension does not match centroids");
    Assignment a;
    double sq = 0.0;
    a.cluster_id = detail::nearest_centroid(model.centroids, x, &sq);
    a.distance = std::sqrt(sq);
    a.confidence = 1.0 / (1.0 + a.distance);
    return a;
}

// Best-of-restarts fit; restart seeds derive from (seed, k, restart) so the
// reduction is schedule-independent, ties broken by restart order.
inline ClusterModel kmeans_fit_restarts(const StandardizedMatrix& X, std::size_t k,
                                        std::uint64_t seed, std::size_t restarts,
                                        std::size_t max_iter = 100, double tol = 1e-4) {
    ClusterModel best;
    bool have = false;
    for (std::size_t r = 0; r < restarts; ++r) {
        ClusterModel m = kmeans_fit(X, k, rng::mix(rng::mix(seed, k), r), max_iter, tol);
        if (!have || m.inertia < best.inertia) {
            best = std::move(m);
            have = true;
        }
    }
    return best;
}

inline KSelectionReport select_k(const StandardizedMatrix& X, std::size_t k_min, std::size_t k_max,
                                 std::uint64_t seed, std::size_t restarts,
                                 const ElbowConfig& cfg = {}) {
    if (k_min == 0 || k_min > k_max) throw Error(ErrorCode::EmptyRange, "bad k range");
    if (k_max > X.rows.size())
        throw Error(ErrorCode::TooFewRows, "k range exceeds row count");

    std::vector<ClusterModel> fits;
    std::vector<double> min_share;
    // One extra fit past the range end (when the data allows) so the last
    // in-range row still gets a forward inertia drop.
    const std::size_t fit_max = std::min(k_max + 1, X.rows.size());
    for (std::size_t k = k_min; k <= fit_max; ++k) {
        ClusterModel m = kmeans_fit_restarts(X, k, seed, restarts);
        std::vector<std::size_t> counts(k, 0);
        for (const auto& row : X.rows) {
            double sq = 0.0;
            ++counts[detail::nearest_centroid(m.centroids, row, &sq)];
        }
        const std::size_t smallest = *std::min_element(counts.begin(), counts.end());
        min_share.push_back(static_cast<double>(smallest) / static_cast<double>(X.rows.size()));
        fits.push_back(std::move(m));
    }

    KSelectionReport report;
    for (std::size_t k = k_min; k <= k_max; ++k) {
        const std::size_t i = k - k_min;
        KSelectionRow row;
        row.k = k;
        row.inertia = fits[i].inertia;
        row.min_cluster_share = min_share[i];
        if (i + 1 < fits.size() && fits[i].inertia > 0.0)
            row.relative_inertia_drop = (fits[i].inertia - fits[i + 1].inertia) / fits[i].inertia;
        report.rows.push_back(row);
    }

    report.chosen_k = 0;
    for (std::size_t k = k_min; k <= k_max; ++k) {
        const std::size_t i = k - k_min;
        const bool has_successor = i + 1 < fits.size();
        if (!has_successor) continue;  // no evidence the elbow is here
        if (report.rows[i].relative_inertia_drop < cfg.drop_threshold &&
            report.rows[i].min_cluster_share >= cfg.min_share) {
            report.chosen_k = k;
            break;
        }
    }
    if (report.chosen_k == 0) {
        const std::size_t hi = std::min(k_max, X.rows.size());
        report.chosen_k = std::clamp(cfg.default_k, k_min, hi);
    }
    return report;
}

// Session ids in a cluster ordered by distance to the centroid (ties by id),
// truncated to n.
inline std::vector<std::string> nearest_sessions(
    const ClusterModel& model,
    const std::vector<std::pair<std::string, Assignment>>& assignments, std::size_t cluster_id,
    std::size_t n) {
    if (cluster_id >= model.k) throw Error(ErrorCode::UnknownCluster, "cluster_id out of range");
    std::vector<std::pair<double, std::string>> members;
    for (const auto& [id, a] : assignments) {
        if (a.cluster_id == cluster_id) members.emplace_back(a.distance, id);
    }
    std::sort(members.begin(), members.end());
    if (members.size() > n) members.resize(n);
    std::vector<std::string> ids;
    ids.reserve(members.size());
    for (auto& [d, id] : members) ids.push_back(std::move(id));
    return ids;
}

inline void to_json(nlohmann::json& j, const ClusterModel& m) {
    j = {{"k", m.k},
         {"centroids", m.centroids},
         {"inertia", m.inertia},
         {"iterations_run", m.iterations_run},
         {"seed", m.seed}};
}

inline void from_json(const nlohmann::json& j, ClusterModel& m) {
    j.at("k").get_to(m.k);
    j.at("centroids").get_to(m.centroids);
    j.at("inertia").get_to(m.inertia);
    j.at("iterations_run").get_to(m.iterations_run);
    j.at("seed").get_to(m.seed);
}

}  // namespace simgym
