#include "modurec/eval.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numeric>

using namespace modurec;

TEST(Rmse, HandEvaluated) {
    const std::vector<double> a{1, 2, 3};
    EXPECT_EQ(rmse(a, a), 0.0);
    EXPECT_DOUBLE_EQ(rmse(std::vector<double>{4, 2}, std::vector<double>{3, 4}), std::sqrt(2.5));
    EXPECT_DOUBLE_EQ(rmse(std::vector<double>(5, 3.0), std::vector<double>{1, 2, 3, 4, 5}), std::sqrt(2.0));
}

TEST(Rmse, RejectsBadInput) {
    EXPECT_THROW(rmse(std::vector<double>{1}, std::vector<double>{1, 2}), ShapeError);
    EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST(Rmse, PermutationInvariant) {
    Rng rng(1);
    std::vector<double> p(50), t(50);
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = rng.uniform(0, 6);
        t[k] = static_cast<double>(1 + rng.below(5));
    }
    const double base = rmse(p, t);
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<double> p2, t2;
    for (auto k : order) {
        p2.push_back(p[k]);
        t2.push_back(t[k]);
    }
    EXPECT_NEAR(rmse(p2, t2), base, 1e-12);
}

TEST(Rmse, ClippingNeverHurts) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(30), clipped(30), t(30);
        for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] = rng.uniform(-1, 7);
            clipped[k] = std::clamp(p[k], 1.0, 5.0);
            t[k] = static_cast<double>(1 + rng.below(5));
        }
        EXPECT_LE(rmse(clipped, t), rmse(p, t) + 1e-15);
    }
}

TEST(Quantile, NearestRank) {
    EXPECT_EQ(nearest_rank_quantile({5, 1, 3, 2, 4}, 0.2), 1);
    EXPECT_EQ(nearest_rank_quantile({5, 1, 3, 2, 4}, 0.21), 2);
    EXPECT_EQ(nearest_rank_quantile({5, 1, 3, 2, 4}, 0.8), 4);
    EXPECT_EQ(nearest_rank_quantile({7}, 0.01), 7);
    EXPECT_THROW(nearest_rank_quantile({}, 0.5), Error);
}

namespace {

RatingDataset all_pairs(std::int32_t users, std::int32_t items) {
    RatingDataset ds;
    for (std::int32_t u = 0; u < users; ++u) {
        for (std::int32_t i = 0; i < items; ++i) ds.events.push_back({u, i, 3.0, 0});
    }
    std::vector<std::int64_t> uid(users), iid(items);
    std::iota(uid.begin(), uid.end(), 1);
    std::iota(iid.begin(), iid.end(), 1);
    ds.users = IndexMap(uid);
    ds.items = IndexMap(iid);
    return ds;
}

}  // namespace

TEST(QuantileSubsets, AllEqualCountsGiveEmptySubsets) {
    const auto test = all_pairs(4, 5);
    const auto s = quantile_subsets(test, CountVector::Constant(4, 7), CountVector::Constant(5, 7), 0.25);
    EXPECT_TRUE(s.few.empty());
    EXPECT_TRUE(s.many.empty());
}

TEST(QuantileSubsets, MatchesBruteForceFilter) {
    Rng rng(3);
    const std::int32_t users = 40, items = 60;
    const auto test = all_pairs(users, items);
    CountVector uc(users), ic(items);
    for (auto k = 0; k < users; ++k) uc(k) = static_cast<std::int64_t>(1 + rng.below(100));
    for (auto k = 0; k < items; ++k) ic(k) = static_cast<std::int64_t>(1 + rng.below(100));
    for (double q : {0.1, 0.25, 0.4}) {
        auto sorted = [](const CountVector& c) {
            std::vector<std::int64_t> v(c.data(), c.data() + c.size());
            std::sort(v.begin(), v.end());
            return v;
        };
        const auto su = sorted(uc), si = sorted(ic);
        auto at = [](const std::vector<std::int64_t>& v, double p) {
            const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
            return v[std::max<std::size_t>(rank, 1) - 1];
        };
        const auto ul = at(su, q), uh = at(su, 1 - q), il = at(si, q), ih = at(si, 1 - q);
        ASSERT_LT(ul, uh);
        ASSERT_LT(il, ih);
        std::vector<std::size_t> few, many;
        for (std::size_t k = 0; k < test.events.size(); ++k) {
            const auto& e = test.events[k];
            if (uc(e.user) <= ul && ic(e.item) <= il) few.push_back(k);
            if (uc(e.user) >= uh && ic(e.item) >= ih) many.push_back(k);
        }
        const auto s = quantile_subsets(test, uc, ic, q);
        EXPECT_EQ(s.few, few) << q;
        EXPECT_EQ(s.many, many) << q;
        for (auto k : s.few) EXPECT_EQ(std::count(s.many.begin(), s.many.end(), k), 0);
    }
}

TEST(QuantileSubsets, UniformCountsOneToHundred) {
    const auto test = all_pairs(100, 100);
    CountVector c(100);
    for (int k = 0; k < 100; ++k) c(k) = k + 1;
    const auto s = quantile_subsets(test, c, c, 0.25);
    EXPECT_EQ(s.thresholds.user_low, 25);
    EXPECT_EQ(s.thresholds.user_high, 75);
    std::size_t few = 0, many = 0;
    for (const auto& e : test.events) {
        few += (e.user + 1 <= 25 && e.item + 1 <= 25) ? 1 : 0;
        many += (e.user + 1 >= 75 && e.item + 1 >= 75) ? 1 : 0;
    }
    EXPECT_EQ(s.few.size(), few);
    EXPECT_EQ(s.many.size(), many);
}

TEST(QuantileSubsets, RejectsBadQuantile) {
    const auto test = all_pairs(2, 2);
    const CountVector c = CountVector::Ones(2);
    EXPECT_THROW(quantile_subsets(test, c, c, 0.0), ConfigError);
    EXPECT_THROW(quantile_subsets(test, c, c, 0.5), ConfigError);
}

TEST(Evaluate, PerfectPredictions) {
    SplitBundle split;
    split.test = all_pairs(3, 3);
    for (auto& e : split.test.events) e.rating = 1.0 + e.user + e.item;
    split.user_train_counts = CountVector::Constant(3, 1);
    split.item_train_counts = CountVector::Constant(3, 1);
    Matrix<double> pred(3, 3);
    for (int u = 0; u < 3; ++u) {
        for (int i = 0; i < 3; ++i) pred(u, i) = 1.0 + u + i;
    }
    const auto r = evaluate(pred, split, 0.25);
    EXPECT_EQ(r.overall_rmse, 0.0);
    EXPECT_EQ(r.test_size, 9u);
    EXPECT_EQ(r.few_size, 0u);
    EXPECT_TRUE(std::isnan(r.few_ratings_rmse));
    pred(0, 0) += 3.0;
    EXPECT_DOUBLE_EQ(rmse_on(pred, split.test.events), 1.0);
}
