#pragma once

#include "speedtrack/io_formats.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace speedtrack::synth {

/// Pinhole camera. World axes: x forward, y left, z up. `rotation` maps world
/// directions into camera axes (X right, Y down, Z along the optical axis).
struct CameraPose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();  ///< camera center, world meters
    double focal = 721.5;
    double cx = 621.0;
    double cy = 187.5;
    double width = 1242.0;
    double height = 375.0;

    /// Camera at `position` looking along the ground heading `yaw` (radians, CCW from +x).
    static CameraPose forward_looking(const Eigen::Vector3d& position, double yaw = 0.0);
    void validate() const;
};

struct Projection {
    bool in_front = false;  ///< depth > 0.1 m
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    double depth = 0.0;
};

/// p_image = f·X/Z + c for X = Θ(p − τ).
Projection project(const Eigen::Vector3d& p_world, const CameraPose& cam);

/// World point at the given depth along the ray through `pixel`.
Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth, const CameraPose& cam);

struct ScenarioConfig {
    std::string id = "synth";
    std::uint64_t seed = 1;
    int n_frames = 150;
    int state_dim = 8;             ///< 8: image boxes, 12: ego-frame 3D boxes
    std::vector<double> ego_speed{0.0};  ///< km/h per frame; a single value is held
    double frame_rate = 10.0;      ///< Hz
    double turn_rate = 0.0;        ///< ego yaw rate, rad per frame
    int initial_objects = 8;
    int max_objects = 12;          ///< cap on simultaneously simulated objects
    double spawn_prob = 0.15;      ///< per frame, while below the cap
    double pedestrian_frac = 0.3;
    double min_depth = 4.0;
    double max_depth = 60.0;
    // Detection noise σ(v) = sigma0 + k_sigma·v (px in 2D, m in 3D) on center
    // and size, dropout p(v) = p0 + k_p·v clamped to [0, 0.9].
    double sigma0 = 2.0;
    double k_sigma = 0.15;
    double p0 = 0.02;
    double k_p = 0.002;
    // Detector confidence: clip(score_base − score_k·v + score_noise·n − small-box penalty).
    double score_base = 0.9;
    double score_k = 0.004;
    double score_noise = 0.1;
    int embedding_dim = 32;
    double embedding_jitter = 0.05;

    double sigma(double v) const { return sigma0 + k_sigma * v; }
    double p_drop(double v) const;
    double speed_at(int frame) const;
    void validate() const;

    /// Defaults for the 3D variant: meters of noise and a wider scene.
    static ScenarioConfig three_d();
};

/// Builds a full bundle (GT, noisy detections, speeds, embeddings).
io::SequenceBundle generate(const ScenarioConfig& cfg);

/// `count` constant-speed scenarios cycling through `speeds`, seeds derived from `seed`.
std::vector<ScenarioConfig> make_suite(std::uint64_t seed, int count, const std::vector<double>& speeds,
                                       int n_frames = 150, int state_dim = 8);

/// The evaluation suite: 20 scenarios at {0, 20, 40, 60} km/h (3D: {0, 15, 25, 35}).
std::vector<ScenarioConfig> default_suite(int state_dim = 8);

/// Disjoint seeds from default_suite, used for training.
std::vector<ScenarioConfig> training_suite(int count = 12, int n_frames = 100, int state_dim = 8);

}  // namespace speedtrack::synth
