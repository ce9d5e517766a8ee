#include "speedtrack/errors.hpp"
#include "speedtrack/metrics.hpp"
#include "speedtrack/synth.hpp"
#include "speedtrack/track_manager.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace speedtrack;

namespace {

Detection det(double x, double y, double w, double h, double score = 0.9) {
    Detection d;
    d.box = Box(4);
    d.box << x, y, w, h;
    d.score = score;
    return d;
}

std::shared_ptr<const NoiseModel> fixed() { return std::make_shared<FixedNoise>(8); }

std::shared_ptr<const NoiseModel> learned() {
    return std::make_shared<LearnedNoise>(msnet::init_params(msnet::MSNetConfig{}, 1), 10.0, true);
}

}  // namespace

TEST(MaxAge, RuleValues) {
    TrackerConfig c;
    EXPECT_EQ(max_age(0.0, c), 30);
    EXPECT_EQ(max_age(60.0, c), 15);
    EXPECT_EQ(max_age(120.0, c), 6);
    EXPECT_EQ(max_age(500.0, c), 6);
    EXPECT_THROW(max_age(-1.0, c), NumericError);
}

TEST(MaxAge, NonincreasingInSpeed) {
    TrackerConfig c;
    int prev = max_age(0.0, c);
    for (double v = 0.5; v < 200.0; v += 0.5) {
        const int a = max_age(v, c);
        EXPECT_LE(a, prev);
        prev = a;
    }
}

TEST(TrackerConfig, Validation) {
    TrackerConfig c;
    c.base_age = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrackerConfig{};
    c.min_age_frac = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrackerConfig{};
    c.v_ref = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Tracker, FirstDetectionStartsTentativeTrack) {
    Tracker t(TrackerConfig{}, fixed(), 8);
    const std::vector<Detection> dets{det(100, 100, 20, 40)};
    const auto out = t.step(0, dets, 0.0, 0.0);
    EXPECT_TRUE(out.empty());
    ASSERT_EQ(t.tracks().size(), 1u);
    EXPECT_EQ(t.tracks()[0].id, 0);
    EXPECT_EQ(t.tracks()[0].stage, TrackStage::Tentative);
    EXPECT_EQ(t.tracks()[0].state.tail(4), Eigen::VectorXd::Zero(4));
}

TEST(Tracker, ConfirmThenCoastThenRemove) {
    Tracker t(TrackerConfig{}, fixed(), 8);
    const std::vector<Detection> dets{det(100, 100, 20, 40)};
    t.step(0, dets, 0.0, 0.0);
    const auto out = t.step(1, dets, 0.0, 0.0);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(t.tracks()[0].stage, TrackStage::Confirmed);
    const int limit = max_age(0.0, TrackerConfig{});
    for (int f = 2; f < 2 + limit; ++f) {
        t.step(f, {}, 0.0, 0.0);
        ASSERT_EQ(t.tracks().size(), 1u);
        EXPECT_EQ(t.tracks()[0].stage, TrackStage::Lost);
    }
    t.step(2 + limit, {}, 0.0, 0.0);
    EXPECT_TRUE(t.tracks().empty());
}

TEST(Tracker, LostTrackRecovers) {
    Tracker t(TrackerConfig{}, fixed(), 8);
    const std::vector<Detection> dets{det(100, 100, 20, 40)};
    t.step(0, dets, 0.0, 0.0);
    t.step(1, dets, 0.0, 0.0);
    t.step(2, {}, 0.0, 0.0);
    EXPECT_EQ(t.tracks()[0].stage, TrackStage::Lost);
    const auto out = t.step(3, dets, 0.0, 0.0);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].id, 0);
    EXPECT_EQ(t.tracks()[0].misses, 0);
    EXPECT_EQ(t.tracks()[0].stage, TrackStage::Confirmed);
}

TEST(Tracker, UnmatchedTentativeIsRemoved) {
    Tracker t(TrackerConfig{}, fixed(), 8);
    t.step(0, std::vector<Detection>{det(100, 100, 20, 40)}, 0.0, 0.0);
    t.step(1, {}, 0.0, 0.0);
    EXPECT_TRUE(t.tracks().empty());
}

TEST(Tracker, OutOfOrderFrame) {
    Tracker t(TrackerConfig{}, fixed(), 8);
    t.step(5, {}, 0.0, 0.0);
    EXPECT_THROW(t.step(5, {}, 0.0, 0.0), SequenceError);
    EXPECT_THROW(t.step(7, {}, -1.0, 0.0), NumericError);
}

TEST(Tracker, ConstantVelocityObjectPerfectDetections) {
    for (const auto& noise : {fixed(), learned()}) {
        Tracker t(TrackerConfig{}, noise, 8);
        std::set<int> ids;
        double iou_sum = 0.0;
        int n = 0;
        for (int f = 0; f < 20; ++f) {
            const auto d = det(100 + 6.0 * f, 150 - 1.0 * f, 40, 30);
            for (const auto& s : t.step(f, std::vector<Detection>{d}, 30.0, 30.0)) {
                ids.insert(s.id);
                iou_sum += box_iou(s.box, d.box);
                ++n;
            }
        }
        EXPECT_EQ(ids.size(), 1u);
        EXPECT_EQ(n, 19);
        EXPECT_GT(iou_sum / n, 0.95);
    }
}

TEST(InitialCovariance, PositiveDiagonalDeterministic) {
    const auto params = msnet::init_params(msnet::MSNetConfig{}, 2);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(5.0, 300.0);
    std::uniform_real_distribution<double> v(0.0, 100.0);
    for (int i = 0; i < 100; ++i) {
        const auto d = det(u(rng), u(rng), u(rng), u(rng));
        const double speed = v(rng);
        const auto p = initial_covariance(d, speed, params);
        EXPECT_TRUE(p.isDiagonal());
        EXPECT_GT(p.diagonal().minCoeff(), 0.0);
        EXPECT_EQ(p, initial_covariance(d, speed, params));
        // A first update from this prior stays finite.
        Eigen::VectorXd x = Eigen::VectorXd::Zero(8);
        x.head(4) = d.box;
        const auto noise = LearnedNoise(params, 10.0, false);
        const auto pr = kf::predict(x, p, noise.process_noise(speed, x));
        const auto up = kf::update(pr.state, pr.cov, d.box, noise.update_noise(speed, d.box, pr.state).r);
        EXPECT_TRUE(up.state.allFinite());
        EXPECT_TRUE(up.cov.allFinite());
    }
}

TEST(FixedNoise, ScalesWithSize) {
    FixedNoise n(8);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(8);
    x.head(4) << 0, 0, 20, 40;
    const auto q = n.process_noise(0.0, x);
    EXPECT_NEAR(q[0], std::pow(20.0 / 20.0, 2), 1e-12);
    EXPECT_NEAR(q[1], std::pow(40.0 / 20.0, 2), 1e-12);
    EXPECT_NEAR(q[4], std::pow(20.0 / 160.0, 2), 1e-12);
    x.head(4) << 0, 0, 40, 80;
    EXPECT_NEAR(n.process_noise(0.0, x)[0], 4.0 * q[0], 1e-12);
}

TEST(Tracker, IdsUniqueAndLifecycleSound) {
    auto cfg = synth::default_suite(8)[3];
    const auto bundle = synth::generate(cfg);
    for (const auto& noise : {fixed(), learned()}) {
        Tracker t(TrackerConfig{}, noise, 8);
        std::set<int> removed;
        std::set<int> born;
        std::set<int> live_prev;
        for (int f = 0; f < bundle.n_frames; ++f) {
            const double v = bundle.speed.kmh[static_cast<std::size_t>(f)];
            t.step(f, bundle.detections[static_cast<std::size_t>(f)], v, v);
            std::set<int> live;
            for (const auto& tr : t.tracks()) {
                live.insert(tr.id);
                EXPECT_FALSE(removed.count(tr.id)) << "removed track " << tr.id << " came back";
                if (!live_prev.count(tr.id)) {
                    EXPECT_FALSE(born.count(tr.id)) << "id " << tr.id << " reused";
                    born.insert(tr.id);
                }
                if (tr.last_frame == f) {
                    EXPECT_EQ(tr.misses, 0);
                }
            }
            for (int id : live_prev) {
                if (!live.count(id)) {
                    removed.insert(id);
                }
            }
            live_prev = live;
        }
        EXPECT_EQ(static_cast<int>(born.size()), t.next_id());
    }
}

TEST(RunSequence, Deterministic) {
    const auto bundle = synth::generate(synth::default_suite(8)[7]);
    const auto a = run_sequence(bundle, TrackerConfig{}, learned());
    const auto b = run_sequence(bundle, TrackerConfig{}, learned());
    EXPECT_EQ(a, b);
    EXPECT_FALSE(a.empty());
}
