#include "speedtrack/errors.hpp"
#include "speedtrack/msnet.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace speedtrack;
using namespace speedtrack::msnet;

namespace {

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

std::vector<double> random_input(std::mt19937_64& rng, int n_tokens) {
    std::uniform_real_distribution<double> v(0.0, 80.0);
    std::uniform_real_distribution<double> s(5.0, 200.0);
    std::vector<double> in{v(rng)};
    for (int i = 1; i < n_tokens; ++i) {
        in.push_back(s(rng));
    }
    return in;
}

double weighted(const Outputs& o, const Outputs& w) {
    return o.q.dot(w.q) + o.r.dot(w.r) + o.p.dot(w.p);
}

Outputs random_weights(const MSNetConfig& c, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Outputs w;
    w.q = Eigen::VectorXd::NullaryExpr(c.q_dim, [&] { return n(rng); });
    w.r = Eigen::VectorXd::NullaryExpr(c.r_dim, [&] { return n(rng); });
    w.p = Eigen::VectorXd::NullaryExpr(c.p_dim, [&] { return n(rng); });
    return w;
}

}  // namespace

TEST(MSNetConfig, DefaultParameterCount) {
    const auto n = param_count(MSNetConfig{});
    EXPECT_GE(n, 66000u);
    EXPECT_LE(n, 90000u);
    EXPECT_EQ(n, init_params(MSNetConfig{}, 1).values.size());
    EXPECT_EQ(n, ParamLayout(MSNetConfig{}).total());
}

TEST(MSNetConfig, MoreChannelsMoreParameters) {
    MSNetConfig c;
    const auto base = param_count(c);
    c.channels *= 2;
    EXPECT_GT(param_count(c), base);
    MSNetConfig sep;
    sep.shared_backbone = false;
    EXPECT_GT(param_count(sep), base);
}

TEST(MSNetConfig, InvalidRejected) {
    MSNetConfig c;
    c.channels = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(MSNetConfig::for_state_dim(9), ConfigError);
}

TEST(MSNetInit, Deterministic) {
    const auto a = init_params(MSNetConfig{}, 1);
    const auto b = init_params(MSNetConfig{}, 1);
    const auto c = init_params(MSNetConfig{}, 2);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values, c.values);
}

TEST(MSNetForward, PositiveOutputs) {
    for (int dim : {8, 12}) {
        const auto cfg = MSNetConfig::for_state_dim(dim);
        const auto params = init_params(cfg, 4);
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> wide(0.0, 1e4);
        for (int i = 0; i < 10000; ++i) {
            std::vector<double> in;
            for (int k = 0; k < cfg.n_tokens; ++k) {
                in.push_back(wide(rng));
            }
            const auto o = forward(params, in);
            ASSERT_GT(o.q.minCoeff(), 0.0);
            ASSERT_GT(o.r.minCoeff(), 0.0);
            ASSERT_GT(o.p.minCoeff(), 0.0);
            ASSERT_TRUE(o.q.allFinite() && o.r.allFinite() && o.p.allFinite());
        }
    }
}

TEST(MSNetForward, BadInputs) {
    const auto params = init_params(MSNetConfig{}, 1);
    EXPECT_THROW(forward(params, std::vector<double>{1.0, 2.0}), ShapeError);
    EXPECT_THROW(forward(params, std::vector<double>{-1.0, 2.0, 3.0}), NumericError);
    EXPECT_THROW(forward(params, std::vector<double>{NAN, 2.0, 3.0}), NumericError);
}

TEST(MSNetForward, ZeroHeadGivesSoftplusOfBias) {
    MSNetParams params = init_params(MSNetConfig{}, 3, Normalization{100.0, 100.0, 1.0});
    const auto& head = params.layout().heads()[kQ];
    for (int k = 0; k < head.out * params.config.head_hidden; ++k) {
        params.values[head.w2 + static_cast<std::size_t>(k)] = 0.0;
    }
    const auto o = forward(params, std::vector<double>{30.0, 50.0, 80.0});
    for (int k = 0; k < head.out; ++k) {
        const double b = params.values[head.b2 + static_cast<std::size_t>(k)];
        EXPECT_NEAR(o.q[k], softplus(b) + 1e-6, 1e-15);
    }
    // A constant head has no gradient into the mixing weights.
    ForwardTape tape;
    forward(params, std::vector<double>{30.0, 50.0, 80.0}, &tape, kHeadQ);
    Outputs g;
    g.q = Eigen::VectorXd::Ones(head.out);
    const auto grads = backward(params, tape, g);
    const auto& bb = params.layout().backbones()[0];
    for (std::size_t i = bb.embed_w; i < head.w1; ++i) {
        ASSERT_EQ(grads.params[i], 0.0);
    }
}

TEST(MSNetBackward, MatchesFiniteDifferences) {
    for (int dim : {8, 12}) {
        const auto cfg = MSNetConfig::for_state_dim(dim);
        auto params = init_params(cfg, 17);
        std::mt19937_64 rng(23 + static_cast<unsigned>(dim));
        const auto in = random_input(rng, cfg.n_tokens);
        const auto w = random_weights(cfg, rng);
        ForwardTape tape;
        forward(params, in, &tape);
        const auto g = backward(params, tape, w);
        std::uniform_int_distribution<std::size_t> pick(0, params.values.size() - 1);
        const double eps = 1e-4;
        for (int n = 0; n < 100; ++n) {
            const std::size_t i = pick(rng);
            const double keep = params.values[i];
            params.values[i] = keep + eps;
            const double up = weighted(forward(params, in), w);
            params.values[i] = keep - eps;
            const double dn = weighted(forward(params, in), w);
            params.values[i] = keep;
            const double fd = (up - dn) / (2 * eps);
            const double denom = std::max({std::abs(fd), std::abs(g.params[i]), 1e-7});
            EXPECT_LT(std::abs(fd - g.params[i]) / denom, 1e-4) << "param " << i << " dim " << dim;
        }
        for (std::size_t k = 0; k < in.size(); ++k) {
            auto shifted = in;
            const double h = 1e-4 * std::max(1.0, in[k]);
            shifted[k] = in[k] + h;
            const double up = weighted(forward(params, shifted), w);
            shifted[k] = in[k] - h;
            const double dn = weighted(forward(params, shifted), w);
            const double fd = (up - dn) / (2 * h);
            EXPECT_NEAR(fd, g.inputs[k], 1e-4 * std::max({std::abs(fd), std::abs(g.inputs[k]), 1e-7}));
        }
    }
}

TEST(MSNetBackward, Linearity) {
    const auto params = init_params(MSNetConfig{}, 5);
    std::mt19937_64 rng(1);
    ForwardTape tape;
    forward(params, random_input(rng, 3), &tape);
    auto w = random_weights(params.config, rng);
    const auto g1 = backward(params, tape, w);
    w.q *= 2;
    w.r *= 2;
    w.p *= 2;
    const auto g2 = backward(params, tape, w);
    for (std::size_t i = 0; i < g1.params.size(); ++i) {
        ASSERT_NEAR(g2.params[i], 2 * g1.params[i], 1e-12 * std::max(1.0, std::abs(g1.params[i])));
    }
}

TEST(MSNetCheckpoint, RoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "speedtrack_msnet_test";
    std::filesystem::create_directories(dir);
    const auto params = init_params(MSNetConfig::for_state_dim(12), 8);
    save(params, dir / "m.msn");
    const auto back = load(dir / "m.msn");
    EXPECT_EQ(back.config, params.config);
    EXPECT_EQ(back.norm, params.norm);
    EXPECT_EQ(back.values, params.values);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 10; ++i) {
        const auto in = random_input(rng, 4);
        const auto a = forward(params, in);
        const auto b = forward(back, in);
        EXPECT_EQ(a.q, b.q);
        EXPECT_EQ(a.r, b.r);
        EXPECT_EQ(a.p, b.p);
    }
    EXPECT_THROW(load(dir / "m.msn", MSNetConfig{}), ShapeError);

    const auto size = std::filesystem::file_size(dir / "m.msn");
    std::filesystem::copy_file(dir / "m.msn", dir / "t.msn", std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(dir / "t.msn", size / 2);
    EXPECT_THROW(load(dir / "t.msn"), ShapeError);

    std::ofstream(dir / "bad.msn") << "nope";
    EXPECT_THROW(load(dir / "bad.msn"), FormatError);
    EXPECT_THROW(load(dir / "missing.msn"), IoError);
    std::filesystem::remove_all(dir);
}

TEST(MSNetGroups, EveryTensorHasAGroup) {
    const ParamLayout layout(MSNetConfig{});
    std::size_t weights = 0;
    std::size_t covered = 0;
    for (const auto& t : layout.tensors()) {
        covered += t.size();
        if (t.group == ParamGroup::Weight) {
            weights += t.size();
            EXPECT_EQ(t.name.substr(t.name.size() - 2), ".w") << t.name;
        } else {
            EXPECT_NE(t.name.substr(t.name.size() - 2), ".w") << t.name;
        }
    }
    EXPECT_EQ(covered, layout.total());
    EXPECT_GT(weights, layout.total() / 2);
}
