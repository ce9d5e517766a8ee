#include "speedtrack/errors.hpp"
#include "speedtrack/io_formats.hpp"
#include "speedtrack/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace speedtrack;
using namespace speedtrack::io;

namespace {

const char* kRow = "0 3 Car 0 0 -1.5 0 0 100 50 1.5 1.6 3.9 2.0 1.7 15.0 0.1";

std::filesystem::path temp_dir(const char* name) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST(Kitti, BboxToCenterLayout) {
    const auto rows = parse_kitti_tracking_text(kRow);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].type, "Car");
    EXPECT_EQ(rows[0].track_id, 3);
    EXPECT_EQ(rows[0].box[0], 50.0);
    EXPECT_EQ(rows[0].box[1], 25.0);
    EXPECT_EQ(rows[0].box[2], 100.0);
    EXPECT_EQ(rows[0].box[3], 50.0);
    EXPECT_FALSE(rows[0].score.has_value());
}

TEST(Kitti, ThreeDimensionalBox) {
    const auto rows = parse_kitti_tracking_text(kRow, 12);
    ASSERT_EQ(rows[0].box.size(), 6);
    // location x y z, then w h l
    EXPECT_EQ(rows[0].box[0], 2.0);
    EXPECT_EQ(rows[0].box[2], 15.0);
    EXPECT_EQ(rows[0].box[3], 1.6);
    EXPECT_EQ(rows[0].box[4], 1.5);
    EXPECT_EQ(rows[0].box[5], 3.9);
}

TEST(Kitti, EmptyAndScoreColumn) {
    EXPECT_TRUE(parse_kitti_tracking_text("").empty());
    const auto rows = parse_kitti_tracking_text(std::string(kRow) + " 0.75\n" + kRow + "\n");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].score, 0.75);
    EXPECT_FALSE(rows[1].score.has_value());
}

TEST(Kitti, MalformedRowReportsLine) {
    try {
        parse_kitti_tracking_text(std::string(kRow) + "\n0 1 Car 0 0\n");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.line(), 2);
    }
    EXPECT_THROW(parse_kitti_tracking_text("0 1 Spaceship 0 0 0 0 0 10 10 1 1 1 0 0 0 0"), FormatError);
}

TEST(Kitti, DontCareRows) {
    const auto rows = parse_kitti_tracking_text("0 -1 DontCare -1 -1 -10 5 5 50 50 -1 -1 -1 -1000 -1000 -1000 -10");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_TRUE(rows[0].dont_care());
}

TEST(Speed, OxtsRow) {
    std::string zero = "49.0 8.4 110 0 0 0 0 0";
    std::string moving = "49.0 8.4 110 0 0 0 3 4";
    for (int k = 0; k < 22; ++k) {
        zero += " 0";
        moving += " 0";
    }
    EXPECT_EQ(oxts_speed_kmh(zero), 0.0);
    EXPECT_NEAR(oxts_speed_kmh(moving), 18.0, 1e-12);
    const auto s = parse_oxts_text(zero + "\n" + moving + "\n", 2);
    EXPECT_EQ(s.kmh.size(), 2u);
    EXPECT_THROW(oxts_speed_kmh("1 2 3"), FormatError);
}

TEST(Speed, PlainFileAndMissingValues) {
    const auto s = parse_speed_text("0\n60\n");
    EXPECT_EQ(s.kmh, (std::vector<double>{0, 60}));
    const auto h = parse_speed_text("10\nnan\n\n30\n", 4);
    EXPECT_EQ(h.kmh, (std::vector<double>{10, 10, 10, 30}));
    EXPECT_TRUE(h.held[1]);
    EXPECT_THROW(parse_speed_text("0\n1\n", 3), FormatError);
    EXPECT_THROW(parse_speed_text("-4\n"), FormatError);
}

TEST(Speed, Perturbation) {
    const std::vector<double> v{0, 10, 20, 40, 60, 0};
    EXPECT_EQ(perturb_speed(v, PerturbMode::Relative, 0.0, 1), v);
    const auto a = perturb_speed(v, PerturbMode::Relative, 0.05, 3);
    EXPECT_EQ(a, perturb_speed(v, PerturbMode::Relative, 0.05, 3));
    EXPECT_NE(a, perturb_speed(v, PerturbMode::Relative, 0.05, 4));
    for (auto mode : {PerturbMode::Relative, PerturbMode::PureNoise}) {
        const auto p = perturb_speed(v, mode, 0.5, 9);
        EXPECT_EQ(p[0], 0.0);
        EXPECT_EQ(p[5], 0.0);
        for (double x : p) {
            EXPECT_GE(x, 0.0);
        }
    }
}

TEST(Results, EmptyAndOrdering) {
    EXPECT_EQ(format_results({}, ResultFormat::Kitti, 8), "");
    EXPECT_EQ(format_results({}, ResultFormat::Jsonl, 8), "");
    Box b(4);
    b << 10, 10, 4, 4;
    std::vector<ResultRow> rows{{2, 1, 0, b, 0.5}, {0, 5, 0, b, 0.5}, {0, 2, 1, b, 0.5}};
    const auto text = format_results(rows, ResultFormat::Kitti, 8);
    const auto back = parse_kitti_tracking_text(text);
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back[0].frame, 0);
    EXPECT_EQ(back[0].track_id, 2);
    EXPECT_EQ(back[1].track_id, 5);
    EXPECT_EQ(back[2].frame, 2);
}

TEST(Results, JsonlRoundTrip) {
    Box b(4);
    b << 10.123456789, 11.5, 4.25, 3.0 / 7.0;
    std::vector<ResultRow> rows{{0, 1, 0, b, 0.91}, {1, 1, 2, b * 2.0, 1.0 / 3.0}};
    EXPECT_EQ(parse_results_jsonl(format_results(rows, ResultFormat::Jsonl, 8)), rows);
}

TEST(Embeddings, RoundTrip) {
    EmbeddingTable t;
    Eigen::VectorXd e(3);
    e << 0.1, -0.25, 1.0 / 3.0;
    t[{0, 4}] = e;
    t[{2, 1}] = -e;
    const auto back = parse_embeddings_text(format_embeddings(t));
    ASSERT_EQ(back.size(), 2u);
    // Six decimals on disk.
    EXPECT_LT((back.at({0, 4}) - e).cwiseAbs().maxCoeff(), 5e-7);
    EXPECT_LT((back.at({2, 1}) + e).cwiseAbs().maxCoeff(), 5e-7);
}

TEST(Bundle, WriteReadRoundTrip) {
    const auto dir = temp_dir("speedtrack_bundle_test");
    auto cfg = synth::default_suite(8)[0];
    cfg.n_frames = 20;
    const auto b = synth::generate(cfg);
    write_bundle(b, dir / "seq");
    const auto r = read_bundle(dir / "seq");
    EXPECT_EQ(r.id, b.id);
    EXPECT_EQ(r.n_frames, b.n_frames);
    EXPECT_EQ(r.speed.kmh, b.speed.kmh);
    ASSERT_EQ(r.detections.size(), b.detections.size());
    for (std::size_t t = 0; t < b.detections.size(); ++t) {
        ASSERT_EQ(r.detections[t].size(), b.detections[t].size());
        for (std::size_t k = 0; k < b.detections[t].size(); ++k) {
            EXPECT_EQ(r.detections[t][k].box, b.detections[t][k].box);
            EXPECT_EQ(r.detections[t][k].score, b.detections[t][k].score);
        }
        ASSERT_EQ(r.gt[t].size(), b.gt[t].size());
        for (std::size_t k = 0; k < b.gt[t].size(); ++k) {
            EXPECT_LT((r.gt[t][k].box - b.gt[t][k].box).cwiseAbs().maxCoeff(), 1e-5);
        }
    }
    EXPECT_EQ(r.embeddings.size(), b.embeddings.size());
    std::filesystem::remove_all(dir);
    EXPECT_THROW(read_bundle(dir / "seq"), IoError);
}
