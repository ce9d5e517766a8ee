#include "speedtrack/association.hpp"
#include "speedtrack/errors.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace speedtrack;

namespace {

Box box4(double x, double y, double w, double h) {
    Box b(4);
    b << x, y, w, h;
    return b;
}

Box box6(double x, double y, double z, double w, double h, double l) {
    Box b(6);
    b << x, y, z, w, h, l;
    return b;
}

Detection det(const Box& b, double score, int cls = 0) {
    Detection d;
    d.box = b;
    d.score = score;
    d.class_id = cls;
    return d;
}

double total_cost(const Eigen::MatrixXd& c, const std::vector<int>& assign) {
    double s = 0.0;
    for (std::size_t i = 0; i < assign.size(); ++i) {
        if (assign[i] >= 0) {
            s += c(static_cast<long>(i), assign[i]);
        }
    }
    return s;
}

}  // namespace

TEST(Iou2d, HandValues) {
    EXPECT_DOUBLE_EQ(box_iou(box4(1, 1, 2, 2), box4(1, 1, 2, 2)), 1.0);
    EXPECT_DOUBLE_EQ(box_iou(box4(0, 0, 2, 2), box4(5, 5, 2, 2)), 0.0);
    EXPECT_NEAR(box_iou(box4(1, 1, 2, 2), box4(2, 2, 2, 2)), 1.0 / 7.0, 1e-15);
}

TEST(Iou3d, HandValues) {
    EXPECT_DOUBLE_EQ(box_iou(box6(0, 0, 0, 1, 1, 1), box6(0, 0, 0, 1, 1, 1)), 1.0);
    EXPECT_DOUBLE_EQ(box_iou(box6(0, 0, 0, 1, 1, 1), box6(0, 0, 3, 1, 1, 1)), 0.0);
    EXPECT_NEAR(box_iou(box6(0, 0, 0, 1, 1, 1), box6(0.5, 0.5, 0.5, 1, 1, 1)), 1.0 / 15.0, 1e-15);
}

TEST(Iou, SymmetricAndBounded) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int i = 0; i < 1000; ++i) {
        const Box a = box4(u(rng), u(rng), u(rng), u(rng));
        const Box b = box4(u(rng), u(rng), u(rng), u(rng));
        const double ab = box_iou(a, b);
        EXPECT_EQ(ab, box_iou(b, a));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
    }
}

TEST(Assignment, GatedSingle) {
    Eigen::MatrixXd c(1, 1);
    c << 0.1;
    const auto r = solve_assignment(c, 0.5);
    ASSERT_EQ(r.matches.size(), 1u);
    EXPECT_EQ(r.matches[0], std::make_pair(0, 0));
    c << 0.9;
    const auto none = solve_assignment(c, 0.5);
    EXPECT_TRUE(none.matches.empty());
    EXPECT_EQ(none.unmatched_tracks, std::vector<int>{0});
    EXPECT_EQ(none.unmatched_detections, std::vector<int>{0});
}

TEST(Assignment, EmptyInputs) {
    const auto r = solve_assignment(Eigen::MatrixXd(0, 3), 0.5);
    EXPECT_TRUE(r.matches.empty());
    EXPECT_EQ(r.unmatched_detections.size(), 3u);
}

TEST(Assignment, MatchesExhaustiveSearch) {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> sz(1, 6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int r = sz(rng);
        const int c = sz(rng);
        Eigen::MatrixXd m(r, c);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                m(i, j) = u(rng);
            }
        }
        const auto assign = min_cost_assignment(m);
        EXPECT_NEAR(total_cost(m, assign), testutil::brute_force_assignment(m), 1e-12) << "trial " << trial;
    }
}

TEST(Assignment, ForbiddenEntries) {
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd m(2, 2);
    m << inf, 1.0, 1.0, inf;
    EXPECT_EQ(min_cost_assignment(m), (std::vector<int>{1, 0}));
    m << inf, inf, 1.0, 1.0;
    EXPECT_THROW(min_cost_assignment(m), NumericError);
}

TEST(Assignment, GatedPairsNeverExceedMaxCost) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::MatrixXd m(5, 4);
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 4; ++j) {
                m(i, j) = u(rng);
            }
        }
        const auto r = solve_assignment(m, 0.4);
        for (auto [i, j] : r.matches) {
            EXPECT_LE(m(i, j), 0.4);
        }
        EXPECT_EQ(r.matches.size() + r.unmatched_tracks.size(), 5u);
        EXPECT_EQ(r.matches.size() + r.unmatched_detections.size(), 4u);
    }
}

TEST(TwoStage, HighConfidenceFirstStage) {
    const std::vector<TrackBox> tracks{{box4(10, 10, 10, 10), 0}};
    const Box b = box4(10.5, 10, 10, 10);
    ASSERT_GT(box_iou(tracks[0].box, b), 0.8);
    const std::vector<Detection> dets{det(b, 0.9)};
    const auto r = two_stage_associate(tracks, dets, AssociationConfig{});
    ASSERT_EQ(r.stage1.matches.size(), 1u);
    EXPECT_TRUE(r.stage2.matches.empty());
    EXPECT_TRUE(r.new_track_candidates.empty());
}

TEST(TwoStage, LowConfidenceSecondStage) {
    const std::vector<TrackBox> tracks{{box4(10, 10, 10, 10), 0}};
    const std::vector<Detection> dets{det(box4(10.5, 10, 10, 10), 0.3)};
    const auto r = two_stage_associate(tracks, dets, AssociationConfig{});
    EXPECT_TRUE(r.stage1.matches.empty());
    ASSERT_EQ(r.stage2.matches.size(), 1u);
    EXPECT_TRUE(r.new_track_candidates.empty());
}

TEST(TwoStage, UnmatchedHighScoresBecomeCandidates) {
    const std::vector<Detection> dets{det(box4(0, 0, 5, 5), 0.9), det(box4(2, 2, 5, 5), 0.9),
                                      det(box4(50, 50, 5, 5), 0.05)};
    const auto r = two_stage_associate({}, dets, AssociationConfig{});
    EXPECT_EQ(r.new_track_candidates, (std::vector<int>{0, 1}));
    EXPECT_EQ(r.discarded, std::vector<int>{2});
}

TEST(TwoStage, ClassAware) {
    const std::vector<TrackBox> tracks{{box4(10, 10, 10, 10), 1}};
    const std::vector<Detection> dets{det(box4(10, 10, 10, 10), 0.9, 0)};
    const auto r = two_stage_associate(tracks, dets, AssociationConfig{});
    EXPECT_TRUE(r.stage1.matches.empty());
    EXPECT_EQ(r.new_track_candidates, std::vector<int>{0});
}

TEST(TwoStage, PartitionIsComplete) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<TrackBox> tracks;
        std::vector<Detection> dets;
        for (int i = 0; i < 5; ++i) {
            tracks.push_back({box4(40 * u(rng), 40 * u(rng), 8, 8), 0});
        }
        for (int j = 0; j < 7; ++j) {
            dets.push_back(det(box4(40 * u(rng), 40 * u(rng), 8, 8), u(rng)));
        }
        const auto r = two_stage_associate(tracks, dets, AssociationConfig{});
        std::vector<int> seen(dets.size(), 0);
        for (auto [i, j] : r.stage1.matches) {
            seen[static_cast<std::size_t>(j)]++;
        }
        for (auto [i, j] : r.stage2.matches) {
            seen[static_cast<std::size_t>(j)]++;
        }
        for (int j : r.new_track_candidates) {
            seen[static_cast<std::size_t>(j)]++;
        }
        for (int j : r.discarded) {
            seen[static_cast<std::size_t>(j)]++;
        }
        for (int s : seen) {
            EXPECT_EQ(s, 1);
        }
    }
}

TEST(AssociationConfig, Validation) {
    AssociationConfig c;
    c.tau_low = 0.7;
    EXPECT_THROW(c.validate(), ConfigError);
}
