#pragma once

// End-to-end Modurec model: TimeNN -> FiLM -> bilinear features -> combiner
// -> autoencoder, with a flat registry of named parameter tensors used by
// the optimizer, the gradient checker and the checkpoint writer.

#include "modurec/autoencoder.hpp"
#include "modurec/dataio.hpp"
#include "modurec/modulation.hpp"
#include "modurec/timefeat.hpp"

#include <cctype>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace modurec {

/// Ablation variants: D = dropout, T = time module, F = feature module.
enum class Variant { Base, D, DT, DFT };

/// AsWritten encodes the rows of the M x N matrix (one vector of length N per
/// user); Transposed encodes its columns (one vector of length M per item).
enum class Orientation { AsWritten, Transposed };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::Base: return "base";
        case Variant::D: return "d";
        case Variant::DT: return "dt";
        case Variant::DFT: return "dft";
    }
    return "?";
}

/// Case-insensitive: "DT" and "dt" name the same variant.
inline Variant parse_variant(std::string_view name) {
    std::string s(name);
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (s == "base") return Variant::Base;
    if (s == "d") return Variant::D;
    if (s == "dt") return Variant::DT;
    if (s == "dft") return Variant::DFT;
    throw ConfigError("unknown variant '" + std::string(name) + "' (expected base, d, dt or dft)");
}

inline std::string_view to_string(Orientation o) {
    return o == Orientation::AsWritten ? "as-written" : "transposed";
}

inline Orientation parse_orientation(std::string_view s) {
    if (s == "as-written") return Orientation::AsWritten;
    if (s == "transposed") return Orientation::Transposed;
    throw ConfigError("unknown orientation '" + std::string(s) + "'");
}

inline std::string_view to_string(ColdRule r) { return r == ColdRule::EitherZero ? "either-zero" : "both-zero"; }

inline ColdRule parse_cold_rule(std::string_view s) {
    if (s == "either-zero") return ColdRule::EitherZero;
    if (s == "both-zero") return ColdRule::BothZero;
    throw ConfigError("unknown cold rule '" + std::string(s) + "'");
}

struct ModelConfig {
    Variant variant = Variant::DFT;
    CombinerMode combiner = CombinerMode::Adaptive;
    Orientation orientation = Orientation::AsWritten;
    ColdRule cold_rule = ColdRule::EitherZero;
    int latent_dim = 500;
    std::vector<int> time_hidden{3, 32};
    double dropout_input = 0.3;
    double dropout_embedding = 0.1;

    bool uses_dropout() const { return variant != Variant::Base; }
    bool uses_time() const { return variant == Variant::DT || variant == Variant::DFT; }
    /// The combiner only runs in the feature variant.
    CombinerMode effective_combiner() const { return variant == Variant::DFT ? combiner : CombinerMode::Nothing; }
    bool uses_features() const { return effective_combiner() != CombinerMode::Nothing; }

    DropoutConfig dropout(bool training) const {
        return {dropout_input, dropout_embedding, training && uses_dropout()};
    }

    void validate() const {
        if (latent_dim <= 0) throw ConfigError("latent dimension must be positive");
        for (int w : time_hidden) {
            if (w <= 0) throw ConfigError("TimeNN widths must be positive");
        }
        dropout(true).validate();
    }
};

enum class ParamGroup { TimeNN, Film, Bilinear, Combiner, Autoencoder };

inline std::string_view to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::TimeNN: return "timenn";
        case ParamGroup::Film: return "film";
        case ParamGroup::Bilinear: return "bilinear";
        case ParamGroup::Combiner: return "combiner";
        case ParamGroup::Autoencoder: return "autoencoder";
    }
    return "?";
}

template <typename Scalar>
struct ModelParams {
    TimeNN<Scalar> time;
    FilmParams<Scalar> film;
    BilinearParams<Scalar> bilinear;
    CombinerParams<Scalar> combiner;
    AutoencoderParams<Scalar> ae;
};

template <typename Scalar>
struct TensorRef {
    std::string name;
    ParamGroup group;
    std::span<Scalar> data;
    Eigen::Index rows;
    Eigen::Index cols;
};

/// Every tensor of `p` in a fixed order.
template <typename Scalar>
std::vector<TensorRef<Scalar>> tensors(ModelParams<Scalar>& p) {
    std::vector<TensorRef<Scalar>> out;
    auto mat = [&](std::string name, ParamGroup g, auto& m) {
        out.push_back({std::move(name), g, std::span<Scalar>(m.data(), static_cast<std::size_t>(m.size())), m.rows(),
                       m.cols()});
    };
    auto scalar = [&](std::string name, ParamGroup g, Scalar& s) {
        out.push_back({std::move(name), g, std::span<Scalar>(&s, 1), 1, 1});
    };
    for (std::size_t k = 0; k < p.time.layers.size(); ++k) {
        mat("time.W" + std::to_string(k + 1), ParamGroup::TimeNN, p.time.layers[k].weight);
        mat("time.b" + std::to_string(k + 1), ParamGroup::TimeNN, p.time.layers[k].bias);
    }
    scalar("film.alpha", ParamGroup::Film, p.film.alpha);
    scalar("film.beta", ParamGroup::Film, p.film.beta);
    scalar("film.gamma", ParamGroup::Film, p.film.gamma);
    mat("bilinear.theta", ParamGroup::Bilinear, p.bilinear.theta);
    scalar("combiner.w1", ParamGroup::Combiner, p.combiner.w1);
    scalar("combiner.w2", ParamGroup::Combiner, p.combiner.w2);
    scalar("combiner.b", ParamGroup::Combiner, p.combiner.b);
    scalar("combiner.alpha_static", ParamGroup::Combiner, p.combiner.alpha_static);
    mat("ae.w_enc", ParamGroup::Autoencoder, p.ae.w_enc);
    mat("ae.b_enc", ParamGroup::Autoencoder, p.ae.b_enc);
    mat("ae.w_dec", ParamGroup::Autoencoder, p.ae.w_dec);
    mat("ae.b_dec", ParamGroup::Autoencoder, p.ae.b_dec);
    return out;
}

/// Whether the tensor named `name` receives gradient under `cfg`.
inline bool is_active(const ModelConfig& cfg, std::string_view name) {
    if (name.starts_with("ae.")) return true;
    if (name.starts_with("time.") || name.starts_with("film.")) return cfg.uses_time();
    const auto mode = cfg.effective_combiner();
    if (name == "bilinear.theta") return mode != CombinerMode::Nothing;
    if (name == "combiner.alpha_static") return mode == CombinerMode::Static;
    if (name.starts_with("combiner.")) return mode == CombinerMode::Adaptive;
    return false;
}

template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& p) {
    ModelParams<Scalar> z = p;
    for (auto& t : tensors(z)) std::fill(t.data.begin(), t.data.end(), Scalar(0));
    return z;
}

/// Training-time tensors derived once from a split.
template <typename Scalar>
struct TrainingData {
    MaskedMatrix<Scalar> ratings;  // M x N, training events only
    std::vector<RatingEvent> events;
    Matrix<Scalar> channels;  // n x 3, aligned with `events`
    CountVector user_counts;
    CountVector item_counts;
    Matrix<Scalar> x_user;
    Matrix<Scalar> x_item;

    Eigen::Index num_users() const { return ratings.rows(); }
    Eigen::Index num_items() const { return ratings.cols(); }

    static TrainingData build(const SplitBundle& split, const FeatureMatrices& features) {
        if (features.user.rows() != split.train.num_users() || features.item.rows() != split.train.num_items()) {
            throw ShapeError("feature matrices do not match the dataset cardinalities");
        }
        TrainingData d;
        d.ratings = to_masked_matrix<Scalar>(split.train);
        d.events = split.train.events;
        d.channels = derive_time_channels(split.train).values.template cast<Scalar>();
        d.user_counts = split.user_train_counts;
        d.item_counts = split.item_train_counts;
        d.x_user = features.user.template cast<Scalar>();
        d.x_item = features.item.template cast<Scalar>();
        return d;
    }
};

template <typename Scalar>
class Modurec {
public:
    struct Forward {
        TimeNNCache<Scalar> time_cache;
        Matrix<Scalar> tprime;  // M x N, zero off the rating support
        ModulationCache<Scalar> modulation;
        std::optional<std::vector<Eigen::Index>> rows;  // autoencoder rows in this batch; all when empty
        Matrix<Scalar> target;       // oriented batch targets
        Matrix<Scalar> target_mask;  // oriented batch mask
        EncodeCache<Scalar> enc;
        DecodeCache<Scalar> dec;

        const Matrix<Scalar>& output() const { return dec.output; }
    };

    Modurec(ModelConfig cfg, const TrainingData<Scalar>& data) : cfg_(std::move(cfg)), data_(&data) {
        cfg_.validate();
    }

    const ModelConfig& config() const { return cfg_; }
    const TrainingData<Scalar>& data() const { return *data_; }

    /// Width of one autoencoder input row.
    Eigen::Index width() const {
        return cfg_.orientation == Orientation::AsWritten ? data_->num_items() : data_->num_users();
    }
    /// Number of autoencoder rows.
    Eigen::Index row_count() const {
        return cfg_.orientation == Orientation::AsWritten ? data_->num_users() : data_->num_items();
    }

    /// Fresh parameters. Autoencoder weights are drawn first so that a run with
    /// time and features off consumes the generator exactly like plain Autorec.
    ModelParams<Scalar> init(Rng& rng) const {
        ModelParams<Scalar> p;
        p.ae = AutoencoderParams<Scalar>::init(width(), cfg_.latent_dim, rng);
        p.time = TimeNN<Scalar>::init(rng, cfg_.time_hidden);
        p.bilinear = BilinearParams<Scalar>::init(data_->x_user.cols(), data_->x_item.cols(), rng);
        return p;
    }

    ModulationInputs<Scalar> inputs(const Forward& f) const {
        ModulationInputs<Scalar> in;
        in.ratings = &data_->ratings;
        in.tprime = cfg_.uses_time() ? &f.tprime : nullptr;
        in.x_user = &data_->x_user;
        in.x_item = &data_->x_item;
        in.user_counts = &data_->user_counts;
        in.item_counts = &data_->item_counts;
        return in;
    }

    Forward forward(const ModelParams<Scalar>& p, bool training, Rng& rng,
                    std::optional<std::vector<Eigen::Index>> rows = std::nullopt) const {
        Forward f;
        if (cfg_.uses_time()) {
            const Matrix<Scalar> values = timenn_forward(data_->channels, p.time, &f.time_cache);
            f.tprime = Matrix<Scalar>::Zero(data_->num_users(), data_->num_items());
            for (std::size_t k = 0; k < data_->events.size(); ++k) {
                const auto& e = data_->events[k];
                f.tprime(e.user, e.item) = values(static_cast<Eigen::Index>(k), 0);
            }
        }
        f.modulation = modulate(inputs(f), p.film, p.bilinear, p.combiner, cfg_.effective_combiner(), cfg_.cold_rule);

        f.rows = std::move(rows);
        const Matrix<Scalar> input = oriented(f.modulation.combined.rprime.values, f.rows);
        f.target = oriented(data_->ratings.values, f.rows);
        f.target_mask = oriented(data_->ratings.mask, f.rows);

        const auto drop = cfg_.dropout(training);
        f.enc = encode(input, p.ae, drop, rng);
        f.dec = decode(f.enc.hidden, p.ae, drop, rng);
        return f;
    }

    /// Gradients of every tensor given dLoss/dRhat for the forward batch.
    /// Inactive tensors get zeros.
    ModelParams<Scalar> backward(const Forward& f, const ModelParams<Scalar>& p, const Matrix<Scalar>& upstream) const {
        ModelParams<Scalar> g = zeros_like(p);
        const bool need_input = cfg_.uses_time() || cfg_.uses_features();
        auto ae = autoencoder_backward(f.enc, f.dec, p.ae, upstream, need_input);
        g.ae = std::move(ae.params);
        if (!need_input) return g;

        const Matrix<Scalar> d_rprime = unoriented(ae.input, f.rows);
        auto mg = modulation_backward(inputs(f), f.modulation, d_rprime, p.film, p.combiner, cfg_.effective_combiner());
        if (cfg_.uses_features()) {
            g.bilinear.theta = std::move(mg.theta);
            if (cfg_.effective_combiner() == CombinerMode::Adaptive) {
                g.combiner.w1 = mg.combiner.w1;
                g.combiner.w2 = mg.combiner.w2;
                g.combiner.b = mg.combiner.b;
            } else {
                g.combiner.alpha_static = mg.combiner.alpha_static;
            }
        }
        if (cfg_.uses_time()) {
            g.film = mg.film;
            Matrix<Scalar> per_event(static_cast<Eigen::Index>(data_->events.size()), 1);
            for (std::size_t k = 0; k < data_->events.size(); ++k) {
                const auto& e = data_->events[k];
                per_event(static_cast<Eigen::Index>(k), 0) = mg.tprime(e.user, e.item);
            }
            g.time = timenn_backward(f.time_cache, p.time, per_event);
        }
        return g;
    }

    /// Dropout-free predictions for every (user, item), clipped to [1, 5].
    Matrix<Scalar> predict(const ModelParams<Scalar>& p) const {
        Rng unused(0);
        const auto f = forward(p, false, unused);
        Matrix<Scalar> out = unoriented(f.dec.output, std::nullopt);
        return out.cwiseMax(Scalar(1)).cwiseMin(Scalar(5));
    }

private:
    Matrix<Scalar> oriented(const Matrix<Scalar>& m, const std::optional<std::vector<Eigen::Index>>& rows) const {
        if (cfg_.orientation == Orientation::AsWritten) {
            if (!rows) return m;
            return m(*rows, Eigen::all);
        }
        if (!rows) return m.transpose();
        return m(Eigen::all, *rows).transpose();
    }

    Matrix<Scalar> unoriented(const Matrix<Scalar>& m, const std::optional<std::vector<Eigen::Index>>& rows) const {
        const bool as_written = cfg_.orientation == Orientation::AsWritten;
        if (!rows) {
            if (as_written) return m;
            return m.transpose();
        }
        Matrix<Scalar> full = Matrix<Scalar>::Zero(data_->num_users(), data_->num_items());
        for (std::size_t k = 0; k < rows->size(); ++k) {
            const auto r = (*rows)[k];
            const auto src = static_cast<Eigen::Index>(k);
            if (as_written) {
                full.row(r) = m.row(src);
            } else {
                full.col(r) = m.row(src).transpose();
            }
        }
        return full;
    }

    ModelConfig cfg_;
    const TrainingData<Scalar>* data_;
};

}  // namespace modurec
