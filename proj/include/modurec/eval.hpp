#pragma once

// Error metrics and the few / many ratings cold-start subsets.

#include "modurec/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace modurec {

inline double rmse(std::span<const double> predictions, std::span<const double> truths) {
    if (predictions.size() != truths.size()) throw ShapeError("rmse: length mismatch");
    if (predictions.empty()) throw Error("rmse: empty input");
    double acc = 0.0;
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        const double d = predictions[k] - truths[k];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(predictions.size()));
}

/// Nearest-rank empirical quantile: the value at 1-based rank ceil(q * n) of
/// the sorted sample (rank clamped to [1, n]).
inline std::int64_t nearest_rank_quantile(std::vector<std::int64_t> values, double q) {
    if (values.empty()) throw Error("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

struct QuantileThresholds {
    std::int64_t user_low = 0, user_high = 0;
    std::int64_t item_low = 0, item_high = 0;
};

struct QuantileSubsets {
    std::vector<std::size_t> few;   // indices into the test events
    std::vector<std::size_t> many;
    QuantileThresholds thresholds;
};

/// Splits the test events by the training counts of their user and item.
///
/// Thresholds are the nearest-rank q and (1 - q) quantiles of the per-user and
/// per-item count distributions (every user / item counts once, zeros
/// included). few: both counts <= the low thresholds; many: both counts >= the
/// high thresholds. When a distribution is degenerate (low == high) its
/// comparisons become strict, so an all-equal distribution yields empty subsets.
inline QuantileSubsets quantile_subsets(const RatingDataset& test, const CountVector& user_counts,
                                        const CountVector& item_counts, double q) {
    if (!(q > 0.0 && q < 0.5)) throw ConfigError("quantile must lie in (0, 0.5)");
    auto to_vec = [](const CountVector& c) { return std::vector<std::int64_t>(c.data(), c.data() + c.size()); };
    QuantileSubsets out;
    auto& t = out.thresholds;
    t.user_low = nearest_rank_quantile(to_vec(user_counts), q);
    t.user_high = nearest_rank_quantile(to_vec(user_counts), 1.0 - q);
    t.item_low = nearest_rank_quantile(to_vec(item_counts), q);
    t.item_high = nearest_rank_quantile(to_vec(item_counts), 1.0 - q);
    const bool user_strict = t.user_low == t.user_high;
    const bool item_strict = t.item_low == t.item_high;

    auto low = [](std::int64_t v, std::int64_t thr, bool strict) { return strict ? v < thr : v <= thr; };
    auto high = [](std::int64_t v, std::int64_t thr, bool strict) { return strict ? v > thr : v >= thr; };
    for (std::size_t k = 0; k < test.events.size(); ++k) {
        const auto uc = user_counts(test.events[k].user);
        const auto ic = item_counts(test.events[k].item);
        if (low(uc, t.user_low, user_strict) && low(ic, t.item_low, item_strict)) out.few.push_back(k);
        if (high(uc, t.user_high, user_strict) && high(ic, t.item_high, item_strict)) out.many.push_back(k);
    }
    return out;
}

struct EvalReport {
    double overall_rmse = 0.0;
    double few_ratings_rmse = std::nan("");
    double many_ratings_rmse = std::nan("");
    std::size_t test_size = 0;
    std::size_t few_size = 0;
    std::size_t many_size = 0;
    double few_fraction = 0.0;
    double many_fraction = 0.0;
    double quantile = 0.25;
    std::string variant;
    std::string combiner;
};

/// Scores a full prediction matrix (users x items) on the test events.
template <typename Derived>
EvalReport evaluate(const Eigen::MatrixBase<Derived>& predictions, const SplitBundle& split, double quantile) {
    const auto& test = split.test.events;
    if (test.empty()) throw Error("evaluate: empty test set");
    std::vector<double> pred(test.size()), truth(test.size());
    for (std::size_t k = 0; k < test.size(); ++k) {
        pred[k] = static_cast<double>(predictions(test[k].user, test[k].item));
        truth[k] = test[k].rating;
    }
    EvalReport r;
    r.quantile = quantile;
    r.test_size = test.size();
    r.overall_rmse = rmse(pred, truth);
    const auto subsets = quantile_subsets(split.test, split.user_train_counts, split.item_train_counts, quantile);
    auto subset_rmse = [&](const std::vector<std::size_t>& idx) {
        if (idx.empty()) return std::nan("");
        std::vector<double> p, t;
        for (auto k : idx) {
            p.push_back(pred[k]);
            t.push_back(truth[k]);
        }
        return rmse(p, t);
    };
    r.few_size = subsets.few.size();
    r.many_size = subsets.many.size();
    r.few_fraction = static_cast<double>(r.few_size) / static_cast<double>(test.size());
    r.many_fraction = static_cast<double>(r.many_size) / static_cast<double>(test.size());
    r.few_ratings_rmse = subset_rmse(subsets.few);
    r.many_ratings_rmse = subset_rmse(subsets.many);
    return r;
}

/// RMSE of a prediction matrix on an arbitrary event list.
template <typename Derived>
double rmse_on(const Eigen::MatrixBase<Derived>& predictions, const std::vector<RatingEvent>& events) {
    std::vector<double> pred(events.size()), truth(events.size());
    for (std::size_t k = 0; k < events.size(); ++k) {
        pred[k] = static_cast<double>(predictions(events[k].user, events[k].item));
        truth[k] = events[k].rating;
    }
    return rmse(pred, truth);
}

}  // namespace modurec
