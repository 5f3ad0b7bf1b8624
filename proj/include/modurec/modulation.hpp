#pragma once

// Builds the autoencoder input R' from ratings, the TimeNN output and the
// user / item side features:
//
//   R_t = alpha R + beta T' + gamma R.T'        (on observed entries)
//   X'  = X_u Theta X_i^T
//   R'  = A.R_t + (1 - A).X'                    (adaptive combiner)

#include "modurec/common.hpp"

#include <string_view>

namespace modurec {

template <typename Scalar>
struct FilmParams {
    Scalar alpha = 1;
    Scalar beta = 0;
    Scalar gamma = 0;
};

template <typename Scalar>
struct BilinearParams {
    Matrix<Scalar> theta;  // d_u x d_i

    static BilinearParams init(Eigen::Index d_u, Eigen::Index d_i, Rng& rng) {
        BilinearParams p{Matrix<Scalar>::Zero(d_u, d_i)};
        fill_uniform(p.theta, rng, 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(d_u, 1))));
        return p;
    }
};

enum class CombinerMode { Nothing, Static, Adaptive };

/// Which count pattern sends an entry to the features-only branch (A = 0).
enum class ColdRule {
    EitherZero,  // user or item has no training rating
    BothZero,    // neither has
};

template <typename Scalar>
struct CombinerParams {
    Scalar w1 = Scalar(0.01);  // weight on the item's rating count
    Scalar w2 = Scalar(0.01);  // weight on the user's rating count
    Scalar b = 0;
    Scalar alpha_static = Scalar(0.5);
};

/// Threshold on (1 - A) that a sparse implementation would use to decide
/// which feature-filled entries of R' to keep. The dense build feeds all of
/// R' to the autoencoder and never applies it.
inline constexpr double kSparseMaskThreshold = 0.02;

inline std::string_view to_string(CombinerMode m) {
    switch (m) {
        case CombinerMode::Nothing: return "nothing";
        case CombinerMode::Static: return "static";
        case CombinerMode::Adaptive: return "adaptive";
    }
    return "?";
}

inline CombinerMode parse_combiner_mode(std::string_view s) {
    if (s == "nothing") return CombinerMode::Nothing;
    if (s == "static") return CombinerMode::Static;
    if (s == "adaptive") return CombinerMode::Adaptive;
    throw ConfigError("unknown combiner mode '" + std::string(s) + "'");
}

/// On-mask entries become alpha R + beta T' + gamma R T'; off-mask entries are 0.
template <typename Scalar>
MaskedMatrix<Scalar> film_modulate(const MaskedMatrix<Scalar>& r, const MaskedMatrix<Scalar>& tprime,
                                   const FilmParams<Scalar>& p) {
    require_same_shape(r.values, tprime.values, "film_modulate");
    if (r.mask != tprime.mask) throw ShapeError("film_modulate: masks of R and T' differ");
    const auto R = r.values.array();
    const auto T = tprime.values.array();
    Matrix<Scalar> out = ((p.alpha * R + p.beta * T + p.gamma * R * T) * r.mask.array()).matrix();
    return {std::move(out), r.mask};
}

/// X'[u][i] = X_u[u] . Theta . X_i[i]
template <typename Scalar>
Matrix<Scalar> bilinear_features(const Matrix<Scalar>& x_user, const Matrix<Scalar>& x_item,
                                 const BilinearParams<Scalar>& p) {
    if (x_user.cols() != p.theta.rows() || x_item.cols() != p.theta.cols()) {
        throw ShapeError("bilinear_features: feature widths do not match Theta");
    }
    Matrix<Scalar> tmp = x_user * p.theta;
    Matrix<Scalar> out = tmp * x_item.transpose();
    return out;
}

template <typename Scalar>
struct CombineResult {
    MaskedMatrix<Scalar> rprime;
    Matrix<Scalar> gate;  // A; empty in Nothing mode, constant in Static mode
    Matrix<Scalar> warm;  // 1 where the sigmoid branch of A applies (Adaptive)
};

/// Adaptive gate A: sigmoid(w1 |O_item| + w2 |O_user| + b) on warm entries, 0 on
/// cold ones as decided by `rule`.
template <typename Scalar>
void adaptive_gate(const CountVector& user_counts, const CountVector& item_counts, const CombinerParams<Scalar>& p,
                   ColdRule rule, Matrix<Scalar>& gate, Matrix<Scalar>& warm) {
    const auto m = user_counts.size();
    const auto n = item_counts.size();
    gate.resize(m, n);
    warm.resize(m, n);
    for (Eigen::Index u = 0; u < m; ++u) {
        const auto uc = user_counts(u);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto ic = item_counts(i);
            const bool is_warm = rule == ColdRule::EitherZero ? (uc > 0 && ic > 0) : (uc > 0 || ic > 0);
            warm(u, i) = is_warm ? Scalar(1) : Scalar(0);
            gate(u, i) = is_warm ? sigmoid(p.w1 * static_cast<Scalar>(ic) + p.w2 * static_cast<Scalar>(uc) + p.b)
                                 : Scalar(0);
        }
    }
}

/// Mixes the time-modulated ratings with the feature estimate. The output
/// keeps the rating mask; in Static and Adaptive modes its values are dense.
template <typename Scalar>
CombineResult<Scalar> combine(const MaskedMatrix<Scalar>& rt, const Matrix<Scalar>& xprime,
                              const CountVector& user_counts, const CountVector& item_counts,
                              const CombinerParams<Scalar>& p, CombinerMode mode,
                              ColdRule rule = ColdRule::EitherZero) {
    if (user_counts.size() != rt.rows() || item_counts.size() != rt.cols()) {
        throw ShapeError("combine: count vectors do not match the rating matrix");
    }
    if ((user_counts.array() < 0).any() || (item_counts.array() < 0).any()) {
        throw Error("combine: negative rating count");
    }
    CombineResult<Scalar> out;
    if (mode == CombinerMode::Nothing) {
        out.rprime = rt;
        return out;
    }
    require_same_shape(rt.values, xprime, "combine");
    if (mode == CombinerMode::Static) {
        const Scalar a = p.alpha_static;
        out.rprime = {a * rt.values + (Scalar(1) - a) * xprime, rt.mask};
        return out;
    }
    adaptive_gate(user_counts, item_counts, p, rule, out.gate, out.warm);
    const auto A = out.gate.array();
    out.rprime = {(A * rt.values.array() + (Scalar(1) - A) * xprime.array()).matrix(), rt.mask};
    return out;
}

/// Entries a sparse build would keep in R': the rating support plus every
/// entry whose feature weight (1 - A) exceeds the threshold.
template <typename Scalar>
Matrix<Scalar> sparse_support(const CombineResult<Scalar>& c, CombinerMode mode,
                              double threshold = kSparseMaskThreshold) {
    const auto& mask = c.rprime.mask;
    if (mode == CombinerMode::Nothing) return mask;
    if (mode == CombinerMode::Static) {
        return Matrix<Scalar>::Constant(mask.rows(), mask.cols(), Scalar(1));
    }
    return ((mask.array() > Scalar(0)) || ((Scalar(1) - c.gate.array()) > Scalar(threshold)))
        .template cast<Scalar>()
        .matrix();
}

/// Read-only inputs of the modulation stack for one training matrix.
template <typename Scalar>
struct ModulationInputs {
    const MaskedMatrix<Scalar>* ratings = nullptr;  // R with its mask
    const Matrix<Scalar>* tprime = nullptr;         // T' scattered to M x N; null when time is off
    const Matrix<Scalar>* x_user = nullptr;         // null when features are off
    const Matrix<Scalar>* x_item = nullptr;
    const CountVector* user_counts = nullptr;
    const CountVector* item_counts = nullptr;
};

template <typename Scalar>
struct ModulationCache {
    MaskedMatrix<Scalar> rt;
    Matrix<Scalar> xprime;  // empty when features are off
    CombineResult<Scalar> combined;
};

/// Full forward pass R -> R'. Time is used when inputs.tprime is set; the
/// features are used unless `mode` is Nothing.
template <typename Scalar>
ModulationCache<Scalar> modulate(const ModulationInputs<Scalar>& in, const FilmParams<Scalar>& film,
                                 const BilinearParams<Scalar>& bilinear, const CombinerParams<Scalar>& comb,
                                 CombinerMode mode, ColdRule rule) {
    ModulationCache<Scalar> c;
    if (in.tprime != nullptr) {
        c.rt = film_modulate(*in.ratings, MaskedMatrix<Scalar>{*in.tprime, in.ratings->mask}, film);
    } else {
        c.rt = *in.ratings;
    }
    if (mode != CombinerMode::Nothing) {
        c.xprime = bilinear_features(*in.x_user, *in.x_item, bilinear);
    }
    c.combined = combine(c.rt, c.xprime, *in.user_counts, *in.item_counts, comb, mode, rule);
    return c;
}

template <typename Scalar>
struct ModulationGrads {
    FilmParams<Scalar> film{0, 0, 0};
    Matrix<Scalar> theta;  // empty when features are off
    CombinerParams<Scalar> combiner{0, 0, 0, 0};
    Matrix<Scalar> tprime;  // dLoss/dT' on the rating support; empty when time is off
};

/// Reverse pass through combine, bilinear_features and film_modulate given
/// dLoss/dR'. Counts are constants.
template <typename Scalar>
ModulationGrads<Scalar> modulation_backward(const ModulationInputs<Scalar>& in, const ModulationCache<Scalar>& cache,
                                            const Matrix<Scalar>& upstream, const FilmParams<Scalar>& film,
                                            const CombinerParams<Scalar>& comb, CombinerMode mode) {
    ModulationGrads<Scalar> g;
    Matrix<Scalar> d_rt;
    Matrix<Scalar> d_x;
    switch (mode) {
        case CombinerMode::Nothing:
            d_rt = upstream;
            break;
        case CombinerMode::Static: {
            const Scalar a = comb.alpha_static;
            d_rt = a * upstream;
            d_x = (Scalar(1) - a) * upstream;
            g.combiner.alpha_static = (upstream.array() * (cache.rt.values - cache.xprime).array()).sum();
            break;
        }
        case CombinerMode::Adaptive: {
            const auto A = cache.combined.gate.array();
            d_rt = (upstream.array() * A).matrix();
            d_x = (upstream.array() * (Scalar(1) - A)).matrix();
            const Matrix<Scalar> d_logit =
                (upstream.array() * (cache.rt.values - cache.xprime).array() * A * (Scalar(1) - A) *
                 cache.combined.warm.array())
                    .matrix();
            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> per_user = d_logit.rowwise().sum();
            const RowVector<Scalar> per_item = d_logit.colwise().sum();
            g.combiner.b = per_user.sum();
            g.combiner.w1 = per_item.dot(in.item_counts->template cast<Scalar>().transpose());
            g.combiner.w2 = per_user.dot(in.user_counts->template cast<Scalar>());
            break;
        }
    }

    if (mode != CombinerMode::Nothing) {
        const Matrix<Scalar> tmp = in.x_user->transpose() * d_x;
        g.theta = tmp * *in.x_item;
    }

    if (in.tprime != nullptr) {
        const auto R = in.ratings->values.array();
        const auto T = in.tprime->array();
        const auto D = (d_rt.array() * in.ratings->mask.array());
        g.film.alpha = (D * R).sum();
        g.film.beta = (D * T).sum();
        g.film.gamma = (D * R * T).sum();
        g.tprime = (D * (film.beta + film.gamma * R)).matrix();
    }
    return g;
}

}  // namespace modurec
