#include "modurec/autoencoder.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>

using namespace modurec;

namespace {

Matrix<double> random_matrix(Eigen::Index m, Eigen::Index n, Rng& rng, double lo = -1, double hi = 1) {
    Matrix<double> x(m, n);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.uniform(lo, hi);
    return x;
}

AutoencoderParams<double> random_params(Eigen::Index width, Eigen::Index d, Rng& rng) {
    auto p = AutoencoderParams<double>::init(width, d, rng);
    for (Eigen::Index k = 0; k < d; ++k) p.b_enc(k) = rng.uniform(-0.5, 0.5);
    for (Eigen::Index k = 0; k < width; ++k) p.b_dec(k) = rng.uniform(2.0, 4.0);
    return p;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST(Encode, ZeroWeightsGiveHalf) {
    Rng rng(1);
    const auto p = AutoencoderParams<double>::zeros(6, 4);
    const auto c = encode(random_matrix(3, 6, rng), p, DropoutConfig{}, rng);
    EXPECT_TRUE(c.hidden.isApprox(Matrix<double>::Constant(3, 4, 0.5)));
}

TEST(Encode, MatchesScalarLoop) {
    Rng rng(2);
    const auto p = random_params(5, 3, rng);
    const auto x = random_matrix(4, 5, rng, 0, 5);
    const auto c = encode(x, p, DropoutConfig{}, rng);
    for (int r = 0; r < 4; ++r) {
        for (int k = 0; k < 3; ++k) {
            double z = p.b_enc(k);
            for (int j = 0; j < 5; ++j) z += x(r, j) * p.w_enc(j, k);
            EXPECT_NEAR(c.hidden(r, k), 1.0 / (1.0 + std::exp(-z)), 1e-12);
        }
    }
}

TEST(Encode, ZeroRateEqualsDisabled) {
    Rng rng(3);
    const auto p = random_params(5, 3, rng);
    const auto x = random_matrix(4, 5, rng);
    Rng a(9), b(9);
    const auto on = encode(x, p, DropoutConfig{0.0, 0.0, true}, a);
    const auto off = encode(x, p, DropoutConfig{}, b);
    EXPECT_EQ(on.hidden, off.hidden);
}

TEST(Encode, WidthMismatch) {
    Rng rng(4);
    const auto p = AutoencoderParams<double>::zeros(6, 4);
    EXPECT_THROW(encode(Matrix<double>::Zero(2, 5).eval(), p, DropoutConfig{}, rng), ShapeError);
}

TEST(Decode, BroadcastsBias) {
    Rng rng(5);
    auto p = AutoencoderParams<double>::zeros(4, 3);
    p.b_dec << 1, 2, 3, 4;
    const auto c = decode(random_matrix(2, 3, rng), p, DropoutConfig{}, rng);
    for (int r = 0; r < 2; ++r) EXPECT_EQ(c.output.row(r), p.b_dec);
}

TEST(Decode, MatchesScalarLoop) {
    Rng rng(6);
    const auto p = random_params(5, 3, rng);
    const auto h = random_matrix(4, 3, rng, 0, 1);
    const auto c = decode(h, p, DropoutConfig{}, rng);
    for (int r = 0; r < 4; ++r) {
        for (int j = 0; j < 5; ++j) {
            double acc = p.b_dec(j);
            for (int k = 0; k < 3; ++k) acc += h(r, k) * p.w_dec(k, j);
            EXPECT_NEAR(c.output(r, j), acc, 1e-12);
        }
    }
}

TEST(Predict, ClipsToRatingScale) {
    auto p = AutoencoderParams<double>::zeros(3, 2);
    p.b_dec << 5.7, 0.2, 3.4;
    const auto out = predict(Matrix<double>::Zero(1, 3).eval(), p);
    EXPECT_EQ(out(0, 0), 5.0);
    EXPECT_EQ(out(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(out(0, 2), 3.4);
}

TEST(Dropout, ExpectationPreserved) {
    Rng rng(7);
    const int samples = 10000;
    for (double rate : {0.1, 0.3, 0.5}) {
        const auto m = dropout_mask<double>(1, samples, rate, rng);
        EXPECT_NEAR(m.mean(), 1.0, 2e-2) << rate;
        const double zeros = static_cast<double>((m.array() == 0.0).count()) / samples;
        EXPECT_NEAR(zeros, rate, 2e-2) << rate;
    }
}

TEST(Dropout, RejectsBadRates) {
    EXPECT_THROW((DropoutConfig{1.0, 0.0, true}.validate()), ConfigError);
    EXPECT_THROW((DropoutConfig{0.0, -0.1, true}.validate()), ConfigError);
    EXPECT_NO_THROW((DropoutConfig{0.3, 0.1, true}.validate()));
}

namespace {

// sum(W .* Rhat) with the dropout masks frozen by reseeding the generator.
double probe_loss(const Matrix<double>& x, const AutoencoderParams<double>& p, const DropoutConfig& drop,
                  std::uint64_t seed, const Matrix<double>& w) {
    Rng rng(seed);
    const auto enc = encode(x, p, drop, rng);
    const auto dec = decode(enc.hidden, p, drop, rng);
    return dec.output.cwiseProduct(w).sum();
}

}  // namespace

TEST(AutoencoderBackward, MatchesCentralDifferences) {
    const double eps = 1e-6;
    for (bool use_dropout : {false, true}) {
        Rng rng(8);
        auto p = random_params(6, 4, rng);
        auto x = random_matrix(3, 6, rng, 0, 5);
        const auto w = random_matrix(3, 6, rng);
        const DropoutConfig drop{0.3, 0.2, use_dropout};
        const std::uint64_t seed = 99;

        Rng fwd(seed);
        const auto enc = encode(x, p, drop, fwd);
        const auto dec = decode(enc.hidden, p, drop, fwd);
        const auto g = autoencoder_backward(enc, dec, p, w, true);

        auto check = [&](Matrix<double>& target, const Matrix<double>& grad) {
            for (Eigen::Index k = 0; k < target.size(); ++k) {
                const double saved = target.data()[k];
                target.data()[k] = saved + eps;
                const double up = probe_loss(x, p, drop, seed, w);
                target.data()[k] = saved - eps;
                const double down = probe_loss(x, p, drop, seed, w);
                target.data()[k] = saved;
                EXPECT_LT(rel((up - down) / (2 * eps), grad.data()[k]), 1e-5);
            }
        };
        check(p.w_enc, g.params.w_enc);
        check(p.w_dec, g.params.w_dec);
        check(x, g.input);
        for (Eigen::Index k = 0; k < p.b_enc.size(); ++k) {
            const double saved = p.b_enc(k);
            p.b_enc(k) = saved + eps;
            const double up = probe_loss(x, p, drop, seed, w);
            p.b_enc(k) = saved - eps;
            const double down = probe_loss(x, p, drop, seed, w);
            p.b_enc(k) = saved;
            EXPECT_LT(rel((up - down) / (2 * eps), g.params.b_enc(k)), 1e-5);
        }
        EXPECT_TRUE(g.params.b_dec.isApprox(w.colwise().sum()));
    }
}

TEST(AutoencoderBackward, DeterministicUnderSeed) {
    Rng rng(10);
    const auto p = random_params(6, 4, rng);
    const auto x = random_matrix(3, 6, rng, 0, 5);
    const auto w = random_matrix(3, 6, rng);
    const DropoutConfig drop{0.3, 0.2, true};
    auto run = [&] {
        Rng r(5);
        const auto enc = encode(x, p, drop, r);
        const auto dec = decode(enc.hidden, p, drop, r);
        return autoencoder_backward(enc, dec, p, w, true);
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.params.w_enc, b.params.w_enc);
    EXPECT_EQ(a.params.w_dec, b.params.w_dec);
    EXPECT_EQ(a.input, b.input);
}

TEST(AutoencoderBackward, InputGradOnlyWhenRequested) {
    Rng rng(11);
    const auto p = random_params(4, 2, rng);
    const auto x = random_matrix(2, 4, rng);
    const auto enc = encode(x, p, DropoutConfig{}, rng);
    const auto dec = decode(enc.hidden, p, DropoutConfig{}, rng);
    EXPECT_EQ(autoencoder_backward(enc, dec, p, Matrix<double>::Ones(2, 4).eval(), false).input.size(), 0);
}
