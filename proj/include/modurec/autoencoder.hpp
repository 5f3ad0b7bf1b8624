#pragma once

// Autorec-style autoencoder over the rows of R':
//   H    = sigmoid(drop_in(R') W_enc + b_enc)
//   Rhat = drop_emb(H) W_dec + b_dec
// with inverted dropout on the input and on the embedding.

#include "modurec/common.hpp"

namespace modurec {

template <typename Scalar>
struct AutoencoderParams {
    Matrix<Scalar> w_enc;  // width x d
    RowVector<Scalar> b_enc;
    Matrix<Scalar> w_dec;  // d x width
    RowVector<Scalar> b_dec;

    Eigen::Index width() const { return w_enc.rows(); }
    Eigen::Index latent() const { return w_enc.cols(); }

    static AutoencoderParams zeros(Eigen::Index width, Eigen::Index d) {
        return {Matrix<Scalar>::Zero(width, d), RowVector<Scalar>::Zero(d), Matrix<Scalar>::Zero(d, width),
                RowVector<Scalar>::Zero(width)};
    }

    static AutoencoderParams init(Eigen::Index width, Eigen::Index d, Rng& rng) {
        auto p = zeros(width, d);
        fill_uniform(p.w_enc, rng, 1.0 / std::sqrt(static_cast<double>(width)));
        fill_uniform(p.w_dec, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        return p;
    }
};

struct DropoutConfig {
    double input_rate = 0.0;
    double embedding_rate = 0.0;
    bool enabled = false;

    void validate() const {
        if (!(input_rate >= 0.0 && input_rate < 1.0) || !(embedding_rate >= 0.0 && embedding_rate < 1.0)) {
            throw ConfigError("dropout rates must lie in [0, 1)");
        }
    }
};

/// Inverted dropout keep-mask: 0 with probability `rate`, 1/(1-rate) otherwise.
template <typename Scalar>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Matrix<Scalar> m(rows, cols);
    const auto keep = static_cast<Scalar>(1.0 / (1.0 - rate));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform() < rate ? Scalar(0) : keep;
    }
    return m;
}

template <typename Scalar>
struct EncodeCache {
    Matrix<Scalar> input_mask;  // empty when no input dropout was applied
    Matrix<Scalar> input;       // the (dropped) encoder input
    Matrix<Scalar> hidden;      // H
};

template <typename Scalar>
struct DecodeCache {
    Matrix<Scalar> embedding_mask;
    Matrix<Scalar> hidden;  // the (dropped) decoder input
    Matrix<Scalar> output;  // Rhat, unclipped
};

template <typename Scalar>
EncodeCache<Scalar> encode(const Matrix<Scalar>& rprime, const AutoencoderParams<Scalar>& p,
                           const DropoutConfig& dropout, Rng& rng) {
    if (rprime.cols() != p.width()) throw ShapeError("encode: input width does not match W_enc");
    EncodeCache<Scalar> c;
    if (dropout.enabled && dropout.input_rate > 0.0) {
        c.input_mask = dropout_mask<Scalar>(rprime.rows(), rprime.cols(), dropout.input_rate, rng);
        c.input = rprime.cwiseProduct(c.input_mask);
    } else {
        c.input = rprime;
    }
    Matrix<Scalar> z = c.input * p.w_enc;
    z.rowwise() += p.b_enc;
    c.hidden = z.unaryExpr([](Scalar v) { return sigmoid(v); });
    return c;
}

template <typename Scalar>
DecodeCache<Scalar> decode(const Matrix<Scalar>& hidden, const AutoencoderParams<Scalar>& p,
                           const DropoutConfig& dropout, Rng& rng) {
    if (hidden.cols() != p.latent()) throw ShapeError("decode: embedding width does not match W_dec");
    DecodeCache<Scalar> c;
    if (dropout.enabled && dropout.embedding_rate > 0.0) {
        c.embedding_mask = dropout_mask<Scalar>(hidden.rows(), hidden.cols(), dropout.embedding_rate, rng);
        c.hidden = hidden.cwiseProduct(c.embedding_mask);
    } else {
        c.hidden = hidden;
    }
    c.output.noalias() = c.hidden * p.w_dec;
    c.output.rowwise() += p.b_dec;
    return c;
}

template <typename Scalar>
struct AutoencoderGrads {
    AutoencoderParams<Scalar> params;
    Matrix<Scalar> input;  // dLoss/dR'; empty unless requested
};

/// Reverse pass through decode and encode using the cached dropout masks.
template <typename Scalar>
AutoencoderGrads<Scalar> autoencoder_backward(const EncodeCache<Scalar>& enc, const DecodeCache<Scalar>& dec,
                                              const AutoencoderParams<Scalar>& p, const Matrix<Scalar>& upstream,
                                              bool want_input_grad) {
    AutoencoderGrads<Scalar> g;
    g.params.w_dec.noalias() = dec.hidden.transpose() * upstream;
    g.params.b_dec = upstream.colwise().sum();

    Matrix<Scalar> d_hidden;
    d_hidden.noalias() = upstream * p.w_dec.transpose();
    if (dec.embedding_mask.size() != 0) d_hidden.array() *= dec.embedding_mask.array();
    d_hidden.array() *= enc.hidden.array() * (Scalar(1) - enc.hidden.array());

    g.params.w_enc.noalias() = enc.input.transpose() * d_hidden;
    g.params.b_enc = d_hidden.colwise().sum();
    if (want_input_grad) {
        g.input.noalias() = d_hidden * p.w_enc.transpose();
        if (enc.input_mask.size() != 0) g.input.array() *= enc.input_mask.array();
    }
    return g;
}

/// Dropout-free forward pass clipped to the rating scale.
template <typename Scalar>
Matrix<Scalar> predict(const Matrix<Scalar>& rprime, const AutoencoderParams<Scalar>& p, Scalar lo = 1,
                       Scalar hi = 5) {
    Rng unused(0);
    const DropoutConfig off{};
    const auto enc = encode(rprime, p, off, unused);
    auto dec = decode(enc.hidden, p, off, unused);
    return dec.output.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace modurec
