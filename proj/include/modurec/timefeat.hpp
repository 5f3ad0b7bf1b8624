#pragma once

// Time channels and the shared TimeNN perceptron that maps them to one
// modulation value per observed rating.

#include "modurec/common.hpp"
#include "modurec/dataio.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace modurec {

/// Three normalized time channels per event, one row per event:
/// column 0 global, column 1 relative to the user's first training rating,
/// column 2 relative to the item's first training rating.
struct TimeChannels {
    Matrix<double> values;  // n x 3

    std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
    double global(std::size_t e) const { return values(static_cast<Eigen::Index>(e), 0); }
    double user_rel(std::size_t e) const { return values(static_cast<Eigen::Index>(e), 1); }
    double item_rel(std::size_t e) const { return values(static_cast<Eigen::Index>(e), 2); }
};

/// Reference points taken from the training events only.
struct TimeReference {
    std::int64_t t_min = 0;
    std::int64_t t_max = 0;
    std::vector<std::int64_t> user_first;  // -1 when the user has no training rating
    std::vector<std::int64_t> item_first;

    static TimeReference from(const RatingDataset& train) {
        if (train.empty()) throw Error("time reference needs a non-empty training set");
        TimeReference ref;
        ref.t_min = std::numeric_limits<std::int64_t>::max();
        ref.t_max = std::numeric_limits<std::int64_t>::min();
        ref.user_first.assign(static_cast<std::size_t>(train.num_users()), -1);
        ref.item_first.assign(static_cast<std::size_t>(train.num_items()), -1);
        auto lower = [](std::int64_t& slot, std::int64_t t) { slot = slot < 0 ? t : std::min(slot, t); };
        for (const auto& e : train.events) {
            ref.t_min = std::min(ref.t_min, e.timestamp);
            ref.t_max = std::max(ref.t_max, e.timestamp);
            lower(ref.user_first[static_cast<std::size_t>(e.user)], e.timestamp);
            lower(ref.item_first[static_cast<std::size_t>(e.item)], e.timestamp);
        }
        return ref;
    }
};

/// global = (t - t_min) / span, user_rel = (t - first_user) / span and
/// item_rel likewise, with span = t_max - t_min shared by all three and every
/// channel clamped to [0, 1]. A zero span yields all-zero channels. Users or
/// items without a training rating get a relative channel of 0.
inline TimeChannels derive_time_channels(const RatingDataset& train, std::span<const RatingEvent> query) {
    const auto ref = TimeReference::from(train);
    TimeChannels out{Matrix<double>::Zero(static_cast<Eigen::Index>(query.size()), 3)};
    if (ref.t_max == ref.t_min) return out;
    const double span = static_cast<double>(ref.t_max - ref.t_min);
    auto scaled = [span](std::int64_t dt) { return std::clamp(static_cast<double>(dt) / span, 0.0, 1.0); };
    for (std::size_t k = 0; k < query.size(); ++k) {
        const auto& e = query[k];
        const auto r = static_cast<Eigen::Index>(k);
        out.values(r, 0) = scaled(e.timestamp - ref.t_min);
        const auto uf = ref.user_first.at(static_cast<std::size_t>(e.user));
        const auto itf = ref.item_first.at(static_cast<std::size_t>(e.item));
        out.values(r, 1) = uf < 0 ? 0.0 : scaled(e.timestamp - uf);
        out.values(r, 2) = itf < 0 ? 0.0 : scaled(e.timestamp - itf);
    }
    return out;
}

inline TimeChannels derive_time_channels(const RatingDataset& train) {
    return derive_time_channels(train, std::span<const RatingEvent>(train.events));
}

template <typename Scalar>
struct DenseLayer {
    Matrix<Scalar> weight;  // fan_in x fan_out
    RowVector<Scalar> bias;
};

/// Fully connected 3 -> hidden... -> 1 network, ReLU after every hidden
/// layer and a linear output. The default widths {3, 32} give 3 -> 3 -> 32 -> 1.
template <typename Scalar>
struct TimeNN {
    std::vector<DenseLayer<Scalar>> layers;

    static constexpr int kInputs = 3;

    static TimeNN zeros(const std::vector<int>& hidden = {3, 32}) {
        TimeNN net;
        int fan_in = kInputs;
        for (int width : hidden) {
            net.layers.push_back({Matrix<Scalar>::Zero(fan_in, width), RowVector<Scalar>::Zero(width)});
            fan_in = width;
        }
        net.layers.push_back({Matrix<Scalar>::Zero(fan_in, 1), RowVector<Scalar>::Zero(1)});
        return net;
    }

    static TimeNN init(Rng& rng, const std::vector<int>& hidden = {3, 32}) {
        auto net = zeros(hidden);
        for (auto& l : net.layers) {
            fill_uniform(l.weight, rng, 1.0 / std::sqrt(static_cast<double>(l.weight.rows())));
        }
        return net;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    void set_zero() {
        for (auto& l : layers) {
            l.weight.setZero();
            l.bias.setZero();
        }
    }
};

template <typename Scalar>
struct TimeNNCache {
    std::vector<Matrix<Scalar>> activations;  // input, then the output of every layer
};

/// Evaluates the network on every row of `channels`; returns an n x 1 column.
template <typename Scalar>
Matrix<Scalar> timenn_forward(const Matrix<Scalar>& channels, const TimeNN<Scalar>& net,
                              TimeNNCache<Scalar>* cache = nullptr) {
    if (channels.cols() != TimeNN<Scalar>::kInputs) throw ShapeError("timenn_forward: expected 3 channels");
    Matrix<Scalar> x = channels;
    if (cache) cache->activations = {x};
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const auto& l = net.layers[k];
        Matrix<Scalar> z = x * l.weight;
        z.rowwise() += l.bias;
        if (k + 1 < net.layers.size()) z = z.cwiseMax(Scalar(0));
        x = std::move(z);
        if (cache) cache->activations.push_back(x);
    }
    return x;
}

/// Reverse pass. `upstream` is dLoss/dOutput, one entry per event. The ReLU
/// subgradient at 0 is 0.
template <typename Scalar>
TimeNN<Scalar> timenn_backward(const TimeNNCache<Scalar>& cache, const TimeNN<Scalar>& net,
                               const Matrix<Scalar>& upstream) {
    TimeNN<Scalar> grad = net;
    Matrix<Scalar> delta = upstream;
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        const auto& input = cache.activations[k];
        grad.layers[k].weight.noalias() = input.transpose() * delta;
        grad.layers[k].bias = delta.colwise().sum();
        if (k == 0) break;
        Matrix<Scalar> back = delta * net.layers[k].weight.transpose();
        // input is the ReLU output of layer k-1
        delta = back.cwiseProduct((input.array() > Scalar(0)).template cast<Scalar>().matrix());
    }
    return grad;
}

}  // namespace modurec
