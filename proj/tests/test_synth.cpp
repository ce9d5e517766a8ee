#include "speedtrack/errors.hpp"
#include "speedtrack/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace speedtrack;
using namespace speedtrack::synth;

TEST(Camera, LateralOffsetProjection) {
    CameraPose cam = CameraPose::forward_looking(Eigen::Vector3d(0, 0, 1.65));
    cam.focal = 500.0;
    // 1 m to the right (y points left) at 10 m depth: 500·1/10 = 50 px right of center.
    const auto p = project(Eigen::Vector3d(10.0, -1.0, 1.65), cam);
    ASSERT_TRUE(p.in_front);
    EXPECT_NEAR(p.pixel.x() - cam.cx, 50.0, 1e-12);
    EXPECT_NEAR(p.pixel.y(), cam.cy, 1e-12);
    EXPECT_NEAR(p.depth, 10.0, 1e-12);
    EXPECT_FALSE(project(Eigen::Vector3d(-5.0, 0.0, 1.65), cam).in_front);
}

TEST(Camera, UnprojectInvertsProject) {
    const CameraPose cam = CameraPose::forward_looking(Eigen::Vector3d(3, -2, 1.65), 0.3);
    const Eigen::Vector3d w(20.0, 1.0, 0.5);
    const auto p = project(w, cam);
    EXPECT_LT((unproject(p.pixel, p.depth, cam) - w).norm(), 1e-9);
}

TEST(Generate, DeterministicAndWellFormed) {
    const auto cfg = default_suite(8)[5];
    const auto a = generate(cfg);
    const auto b = generate(cfg);
    ASSERT_EQ(a.n_frames, cfg.n_frames);
    EXPECT_TRUE(a.has_gt);
    for (int t = 0; t < a.n_frames; ++t) {
        const auto& da = a.detections[static_cast<std::size_t>(t)];
        const auto& db = b.detections[static_cast<std::size_t>(t)];
        ASSERT_EQ(da.size(), db.size());
        for (std::size_t k = 0; k < da.size(); ++k) {
            EXPECT_EQ(da[k].box, db[k].box);
            EXPECT_GE(da[k].score, 0.05);
            EXPECT_LE(da[k].score, 1.0);
        }
        std::set<int> ids;
        for (const auto& g : a.gt[static_cast<std::size_t>(t)]) {
            EXPECT_TRUE(ids.insert(g.track_id).second);
            EXPECT_GE(g.box[0] - 0.5 * g.box[2], 0.0);
            EXPECT_LE(g.box[0] + 0.5 * g.box[2], 1242.0);
            EXPECT_GE(g.box[1] - 0.5 * g.box[3], 0.0);
            EXPECT_LE(g.box[1] + 0.5 * g.box[3], 375.0);
        }
    }
}

TEST(Generate, PerfectDetectionsEqualGroundTruth) {
    auto cfg = default_suite(8)[2];
    cfg.sigma0 = cfg.k_sigma = cfg.p0 = cfg.k_p = 0.0;
    const auto b = generate(cfg);
    for (int t = 0; t < b.n_frames; ++t) {
        const auto& gts = b.gt[static_cast<std::size_t>(t)];
        const auto& dets = b.detections[static_cast<std::size_t>(t)];
        ASSERT_EQ(gts.size(), dets.size());
        for (const auto& d : dets) {
            bool found = false;
            for (const auto& g : gts) {
                found = found || (g.box - d.box).norm() < 1e-12;
            }
            EXPECT_TRUE(found);
        }
    }
}

TEST(Generate, NoiseGrowsWithSpeed) {
    auto err_at = [](double v) {
        auto cfg = ScenarioConfig{};
        cfg.seed = 77;
        cfg.ego_speed = {v};
        const auto b = generate(cfg);
        double sq = 0.0;
        int n = 0;
        for (int t = 0; t < b.n_frames; ++t) {
            for (const auto& d : b.detections[static_cast<std::size_t>(t)]) {
                double best = 1e18;
                for (const auto& g : b.gt[static_cast<std::size_t>(t)]) {
                    best = std::min(best, (g.box.head(2) - d.box.head(2)).squaredNorm());
                }
                sq += best;
                ++n;
            }
        }
        return std::sqrt(sq / std::max(n, 1));
    };
    EXPECT_GT(err_at(60.0), 2.0 * err_at(0.0));
}

TEST(Generate, ThreeDimensionalVariant) {
    auto cfg = default_suite(12)[1];
    cfg.n_frames = 30;
    const auto b = generate(cfg);
    EXPECT_EQ(b.state_dim, 12);
    bool any = false;
    for (const auto& frame : b.detections) {
        for (const auto& d : frame) {
            EXPECT_EQ(d.box.size(), 6);
            any = true;
        }
    }
    EXPECT_TRUE(any);
}

TEST(Suites, Layout) {
    const auto d = default_suite(8);
    ASSERT_EQ(d.size(), 20u);
    std::set<double> speeds;
    std::set<std::uint64_t> seeds;
    for (const auto& c : d) {
        speeds.insert(c.speed_at(0));
        seeds.insert(c.seed);
    }
    EXPECT_EQ(speeds, (std::set<double>{0, 20, 40, 60}));
    for (const auto& c : training_suite()) {
        EXPECT_FALSE(seeds.count(c.seed));
    }
}

TEST(ScenarioConfig, Validation) {
    ScenarioConfig c;
    c.n_frames = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ScenarioConfig{};
    c.ego_speed = {-5.0};
    EXPECT_THROW(generate(c), Error);
}
