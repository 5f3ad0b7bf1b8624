#pragma once

// Masked L2 objective, first-order optimizers and the epoch loop with early
// stopping on holdout RMSE.

#include "modurec/eval.hpp"
#include "modurec/model.hpp"

#include <chrono>
#include <functional>
#include <map>

namespace modurec {

/// sum over observed entries of (Rhat - R)^2 / |observed| + lambda (|W_enc|^2 + |W_dec|^2)
template <typename Scalar>
Scalar masked_l2_loss(const Matrix<Scalar>& rhat, const Matrix<Scalar>& target, const Matrix<Scalar>& mask,
                      Scalar lambda, const AutoencoderParams<Scalar>& ae) {
    require_same_shape(rhat, target, "masked_l2_loss");
    require_same_shape(rhat, mask, "masked_l2_loss");
    const Scalar observed = mask.sum();
    if (observed <= Scalar(0)) throw Error("masked_l2_loss: empty mask");
    const Scalar data = ((rhat - target).array().square() * mask.array()).sum() / observed;
    return data + lambda * (ae.w_enc.squaredNorm() + ae.w_dec.squaredNorm());
}

template <typename Scalar>
Scalar masked_l2_loss(const Matrix<Scalar>& rhat, const MaskedMatrix<Scalar>& r, Scalar lambda,
                      const AutoencoderParams<Scalar>& ae) {
    return masked_l2_loss(rhat, r.values, r.mask, lambda, ae);
}

/// d(data term)/dRhat.
template <typename Scalar>
Matrix<Scalar> masked_l2_grad(const Matrix<Scalar>& rhat, const Matrix<Scalar>& target, const Matrix<Scalar>& mask) {
    const Scalar observed = mask.sum();
    return ((rhat - target).array() * mask.array() * (Scalar(2) / observed)).matrix();
}

/// Adds the gradient of lambda (|W_enc|^2 + |W_dec|^2). Biases and modulation
/// parameters are not decayed.
template <typename Scalar>
void add_weight_decay(ModelParams<Scalar>& grad, const ModelParams<Scalar>& params, Scalar lambda) {
    if (lambda == Scalar(0)) return;
    grad.ae.w_enc += (Scalar(2) * lambda) * params.ae.w_enc;
    grad.ae.w_dec += (Scalar(2) * lambda) * params.ae.w_dec;
}

enum class OptimizerKind { SGD, Adam };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::SGD;
    if (s == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
    ModelConfig model;
    int epochs = 300;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double weight_decay = 5e-5;
    int batch_rows = 0;  // 0 = full batch
    std::uint64_t seed = 1;
    int patience = 15;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const {
        model.validate();
        if (epochs <= 0) throw ConfigError("epochs must be positive");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
        if (batch_rows < 0) throw ConfigError("batch size must be non-negative");
        if (patience <= 0) throw ConfigError("patience must be positive");
    }
};

/// First-order optimizer over the active tensors of a ModelParams.
template <typename Scalar>
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const ModelParams<Scalar>& like)
        : cfg_(cfg), m_(zeros_like(like)), v_(zeros_like(like)) {}

    void step(ModelParams<Scalar>& params, ModelParams<Scalar>& grad) {
        ++t_;
        const auto lr = static_cast<Scalar>(cfg_.learning_rate);
        auto p = tensors(params);
        auto g = tensors(grad);
        auto m = tensors(m_);
        auto v = tensors(v_);
        if (cfg_.optimizer == OptimizerKind::SGD) {
            for (std::size_t k = 0; k < p.size(); ++k) {
                if (!is_active(cfg_.model, p[k].name)) continue;
                for (std::size_t j = 0; j < p[k].data.size(); ++j) p[k].data[j] -= lr * g[k].data[j];
            }
            return;
        }
        const auto b1 = static_cast<Scalar>(cfg_.adam_beta1);
        const auto b2 = static_cast<Scalar>(cfg_.adam_beta2);
        const auto eps = static_cast<Scalar>(cfg_.adam_epsilon);
        const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(t_));
        const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(t_));
        for (std::size_t k = 0; k < p.size(); ++k) {
            if (!is_active(cfg_.model, p[k].name)) continue;
            using Map = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
            Map pk(p[k].data.data(), static_cast<Eigen::Index>(p[k].data.size()));
            Map gk(g[k].data.data(), pk.size());
            Map mk(m[k].data.data(), pk.size());
            Map vk(v[k].data.data(), pk.size());
            mk = b1 * mk + (Scalar(1) - b1) * gk;
            vk = b2 * vk + (Scalar(1) - b2) * gk.square();
            pk -= lr * (mk / c1) / ((vk / c2).sqrt() + eps);
        }
    }

private:
    TrainConfig cfg_;
    ModelParams<Scalar> m_;
    ModelParams<Scalar> v_;
    long t_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double holdout_rmse = 0.0;  // NaN without a holdout set
    double seconds = 0.0;
};

template <typename Scalar>
struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;  // 0 = initial parameters
    double best_holdout_rmse = std::nan("");
    double test_rmse = std::nan("");
    double seconds = 0.0;
    ModelParams<Scalar> params;  // restored best-holdout parameters
};

namespace detail {

inline std::uint64_t step_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

template <typename Scalar>
bool all_finite(ModelParams<Scalar>& p) {
    for (auto& t : tensors(p)) {
        for (auto v : t.data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
    }
    return true;
}

}  // namespace detail

/// One optimizer step on the given batch; returns the batch loss.
template <typename Scalar>
Scalar train_step(const Modurec<Scalar>& model, ModelParams<Scalar>& params, Optimizer<Scalar>& opt, Scalar lambda,
                  Rng& rng, std::optional<std::vector<Eigen::Index>> rows = std::nullopt) {
    const auto f = model.forward(params, true, rng, std::move(rows));
    const Scalar loss = masked_l2_loss(f.output(), f.target, f.target_mask, lambda, params.ae);
    if (!std::isfinite(static_cast<double>(loss))) throw DivergenceError("loss became non-finite");
    auto grad = model.backward(f, params, masked_l2_grad(f.output(), f.target, f.target_mask));
    add_weight_decay(grad, params, lambda);
    opt.step(params, grad);
    return loss;
}

/// Trains from scratch. Deterministic given cfg.seed. Parameters of the
/// epoch with the lowest holdout RMSE are restored at the end; without a
/// holdout set the last epoch's parameters are kept.
template <typename Scalar = double>
TrainReport<Scalar> train(const SplitBundle& split, const FeatureMatrices& features, const TrainConfig& cfg,
                          const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    const auto data = TrainingData<Scalar>::build(split, features);
    const Modurec<Scalar> model(cfg.model, data);
    Rng init_rng(cfg.seed);
    Rng step_rng(detail::step_seed(cfg.seed));
    auto params = model.init(init_rng);
    Optimizer<Scalar> opt(cfg, params);
    const auto lambda = static_cast<Scalar>(cfg.weight_decay);
    const bool has_holdout = !split.holdout.empty();

    TrainReport<Scalar> report;
    report.params = params;
    if (has_holdout) report.best_holdout_rmse = rmse_on(model.predict(params), split.holdout.events);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(model.row_count()));
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<Eigen::Index>(k);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        int batches = 0;
        if (cfg.batch_rows == 0 || cfg.batch_rows >= model.row_count()) {
            loss_sum = static_cast<double>(train_step(model, params, opt, lambda, step_rng));
            batches = 1;
        } else {
            step_rng.shuffle(order.begin(), order.end());
            for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_rows)) {
                const auto e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_rows));
                std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(b),
                                               order.begin() + static_cast<std::ptrdiff_t>(e));
                loss_sum += static_cast<double>(train_step(model, params, opt, lambda, step_rng, std::move(rows)));
                ++batches;
            }
        }
        if (!detail::all_finite(params)) {
            throw DivergenceError("parameters became non-finite at epoch " + std::to_string(epoch));
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / batches;
        rec.holdout_rmse = has_holdout ? rmse_on(model.predict(params), split.holdout.events) : std::nan("");
        rec.seconds = elapsed();
        report.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (!has_holdout) {
            report.best_epoch = epoch;
            report.params = params;
        } else if (rec.holdout_rmse < report.best_holdout_rmse) {
            report.best_holdout_rmse = rec.holdout_rmse;
            report.best_epoch = epoch;
            report.params = params;
        } else if (epoch - report.best_epoch >= cfg.patience) {
            break;
        }
    }

    if (!split.test.empty()) report.test_rmse = rmse_on(model.predict(report.params), split.test.events);
    report.seconds = elapsed();
    return report;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckEntry {
    std::string name;
    ParamGroup group;
    bool active = false;
    std::size_t size = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> tensors;

    double max_error() const {
        double m = 0.0;
        for (const auto& t : tensors) {
            if (t.active) m = std::max(m, t.max_rel_error);
        }
        return m;
    }

    /// Max relative error per parameter group (active tensors only).
    std::map<std::string, double> by_group() const {
        std::map<std::string, double> out;
        for (const auto& t : tensors) {
            if (!t.active) continue;
            auto& slot = out[std::string(to_string(t.group))];
            slot = std::max(slot, t.max_rel_error);
        }
        return out;
    }
};

struct GradCheckSize {
    int users = 6;
    int items = 8;
    int latent = 4;
    int user_features = 3;
    int item_features = 3;
};

/// Small random problem: about half the entries observed, user 0 and the
/// last item left without training ratings so both combiner branches run.
inline std::pair<SplitBundle, FeatureMatrices> synthetic_problem(const GradCheckSize& size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::int64_t> uids, iids;
    for (int u = 0; u < size.users; ++u) uids.push_back(u + 1);
    for (int i = 0; i < size.items; ++i) iids.push_back(i + 1);
    RatingDataset base;
    base.users = IndexMap(uids);
    base.items = IndexMap(iids);
    std::vector<RatingEvent> events;
    for (int u = 1; u < size.users; ++u) {
        for (int i = 0; i + 1 < size.items; ++i) {
            if (rng.uniform() < 0.55) {
                events.push_back({u, i, static_cast<double>(1 + rng.below(5)),
                                  static_cast<std::int64_t>(1000 + rng.below(100000))});
            }
        }
    }
    SplitBundle split{base.with_events(events), base.with_events({}), base.with_events({}), {}, {}};
    std::tie(split.user_train_counts, split.item_train_counts) = rating_counts(split.train);

    FeatureMatrices f;
    f.user = Matrix<double>(size.users, size.user_features);
    f.item = Matrix<double>(size.items, size.item_features);
    for (Eigen::Index k = 0; k < f.user.size(); ++k) f.user.data()[k] = rng.uniform(0.0, 1.0);
    for (Eigen::Index k = 0; k < f.item.size(); ++k) f.item.data()[k] = rng.uniform(0.0, 1.0);
    return {std::move(split), std::move(f)};
}

/// Parameters moved away from the identity start so every path carries signal.
template <typename Scalar>
void perturb_for_check(ModelParams<Scalar>& p, Rng& rng) {
    p.film = {Scalar(1.2), Scalar(0.3), Scalar(-0.25)};
    p.combiner = {Scalar(0.3), Scalar(-0.2), Scalar(0.1), Scalar(0.6)};
    for (auto& l : p.time.layers) {
        for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = static_cast<Scalar>(rng.uniform(-0.1, 0.4));
    }
    for (Eigen::Index k = 0; k < p.ae.b_enc.size(); ++k) p.ae.b_enc(k) = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
    for (Eigen::Index k = 0; k < p.ae.b_dec.size(); ++k) p.ae.b_dec(k) = static_cast<Scalar>(rng.uniform(2.0, 4.0));
}

/// Compares analytic gradients of the full training objective with central
/// differences (step eps) on a synthetic instance, dropout off.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradCheckReport gradient_check(ModelConfig cfg, const GradCheckSize& size = {}, std::uint64_t seed = 7,
                                      double lambda = 1e-2, double eps = 1e-5) {
    cfg.latent_dim = size.latent;
    const auto [split, features] = synthetic_problem(size, seed);
    const auto data = TrainingData<double>::build(split, features);
    const Modurec<double> model(cfg, data);
    Rng rng(seed + 1);
    auto params = model.init(rng);
    perturb_for_check(params, rng);

    auto objective = [&](const ModelParams<double>& p) {
        Rng unused(0);
        const auto f = model.forward(p, false, unused);
        return masked_l2_loss(f.output(), f.target, f.target_mask, lambda, p.ae);
    };
    Rng unused(0);
    const auto f = model.forward(params, false, unused);
    auto grad = model.backward(f, params, masked_l2_grad(f.output(), f.target, f.target_mask));
    add_weight_decay(grad, params, lambda);

    GradCheckReport report;
    auto p_refs = tensors(params);
    auto g_refs = tensors(grad);
    for (std::size_t k = 0; k < p_refs.size(); ++k) {
        GradCheckEntry e{p_refs[k].name, p_refs[k].group, is_active(cfg, p_refs[k].name), p_refs[k].data.size(), 0.0};
        for (std::size_t j = 0; j < p_refs[k].data.size(); ++j) {
            double& slot = p_refs[k].data[j];
            const double saved = slot;
            slot = saved + eps;
            const double up = objective(params);
            slot = saved - eps;
            const double down = objective(params);
            slot = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = g_refs[k].data[j];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            e.max_rel_error = std::max(e.max_rel_error, std::abs(analytic - numeric) / denom);
        }
        report.tensors.push_back(std::move(e));
    }
    return report;
}

}  // namespace modurec
