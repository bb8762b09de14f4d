#pragma once

// Predictive metrics (AUC, logloss) and ranking metrics (NDCG@K, Recall@K),
// plus the full-candidate per-user ranking protocol.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "lipreg/error.hpp"

namespace lipreg {

// Rank-sum AUC with ties counted 0.5.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw ArgumentError("roc_auc: bad batch");
    }
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw UndefinedMetricError("roc_auc: batch contains a single class");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Average ranks over tie groups, accumulate positive rank sum.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double p = static_cast<double>(n_pos);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

inline double logloss(const std::vector<double>& probs, const std::vector<int>& labels) {
    if (probs.empty() || probs.size() != labels.size()) {
        throw ArgumentError("logloss: bad batch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::min(std::max(probs[i], 1e-12), 1.0 - 1e-12);
        s += labels[i] ? std::log(p) : std::log(1.0 - p);
    }
    return -s / static_cast<double>(probs.size());
}

// NDCG@k over a scored-order binary relevance list; 0 when nothing is relevant.
inline double ndcg_at_k(const std::vector<int>& ranked_relevances, std::size_t k) {
    if (k == 0) throw ArgumentError("ndcg_at_k: k must be >= 1");
    const std::size_t n_rel = static_cast<std::size_t>(
        std::count(ranked_relevances.begin(), ranked_relevances.end(), 1));
    if (n_rel == 0) return 0.0;
    double dcg = 0.0;
    const std::size_t top = std::min(k, ranked_relevances.size());
    for (std::size_t i = 0; i < top; ++i) {
        if (ranked_relevances[i]) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, n_rel); ++i) {
        idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg / idcg;
}

// |top-k hits| / |relevant|; 0 when nothing is relevant.
inline double recall_at_k(const std::vector<int>& ranked_relevances, std::size_t k) {
    if (k == 0) throw ArgumentError("recall_at_k: k must be >= 1");
    const std::size_t n_rel = static_cast<std::size_t>(
        std::count(ranked_relevances.begin(), ranked_relevances.end(), 1));
    if (n_rel == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranked_relevances.size()); ++i) {
        hits += (ranked_relevances[i] != 0);
    }
    return static_cast<double>(hits) / static_cast<double>(n_rel);
}

struct MetricsReport {
    double auc = 0.0;       // fraction in [0,1]
    double logloss = 0.0;   // natural-log units
    double ndcg10 = 0.0;
    double ndcg20 = 0.0;
    double recall10 = 0.0;
    double recall20 = 0.0;
    std::size_t ranked_users = 0;
    std::size_t excluded_users = 0;  // empty relevance sets

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Per-user full-candidate ranking task: all items minus the user's training
// positives; relevance = the user's positive test items not seen in training.
struct RankingTask {
    std::uint32_t user = 0;
    std::vector<std::uint32_t> candidates;
    std::set<std::uint32_t> relevant;
};

// `n_items` excludes the OOV row. Users whose relevance set ends up empty are
// skipped here and counted by the caller.
inline std::vector<RankingTask> build_ranking_tasks(
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& train_positives,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& test_positives,
    std::size_t n_items, std::size_t* excluded_users = nullptr) {
    std::map<std::uint32_t, std::set<std::uint32_t>> train_by_user;
    for (const auto& [u, it] : train_positives) train_by_user[u].insert(it);
    std::map<std::uint32_t, std::set<std::uint32_t>> test_by_user;
    for (const auto& [u, it] : test_positives) test_by_user[u].insert(it);
    std::vector<RankingTask> tasks;
    std::size_t excluded = 0;
    for (auto& [user, rel] : test_by_user) {
        const auto ti = train_by_user.find(user);
        RankingTask task;
        task.user = user;
        for (std::uint32_t item = 0; item < n_items; ++item) {
            if (ti != train_by_user.end() && ti->second.count(item)) continue;
            task.candidates.push_back(item);
        }
        for (std::uint32_t item : rel) {
            if (ti == train_by_user.end() || !ti->second.count(item)) task.relevant.insert(item);
        }
        if (task.relevant.empty() || task.candidates.empty()) {
            ++excluded;
            continue;
        }
        tasks.push_back(std::move(task));
    }
    if (excluded_users) *excluded_users = excluded;
    return tasks;
}

// Mean NDCG/Recall at 10 and 20 over the given tasks; scores come from the
// caller-provided scorer. Stable sort keeps ties deterministic by item index.
inline void evaluate_ranking(const std::vector<RankingTask>& tasks,
                             const std::function<double(std::uint32_t, std::uint32_t)>& scorer,
                             MetricsReport& report) {
    if (tasks.empty()) return;
    double n10 = 0.0, n20 = 0.0, r10 = 0.0, r20 = 0.0;
    for (const auto& task : tasks) {
        std::vector<std::pair<double, std::uint32_t>> scored;
        scored.reserve(task.candidates.size());
        for (std::uint32_t item : task.candidates) {
            scored.emplace_back(scorer(task.user, item), item);
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            return a.first > b.first;
        });
        std::vector<int> rel;
        rel.reserve(scored.size());
        for (const auto& [score, item] : scored) {
            rel.push_back(task.relevant.count(item) ? 1 : 0);
        }
        n10 += ndcg_at_k(rel, 10);
        n20 += ndcg_at_k(rel, 20);
        r10 += recall_at_k(rel, 10);
        r20 += recall_at_k(rel, 20);
    }
    const double n = static_cast<double>(tasks.size());
    report.ndcg10 = n10 / n;
    report.ndcg20 = n20 / n;
    report.recall10 = r10 / n;
    report.recall20 = r20 / n;
    report.ranked_users = tasks.size();
}

}  // namespace lipreg
