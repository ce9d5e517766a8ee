#include "speedtrack/synth.hpp"

#include "speedtrack/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace speedtrack::synth {

namespace {

constexpr double kCameraHeight = 1.65;

struct SimObject {
    int id = 0;
    int class_id = 0;  // 0 Car, 1 Pedestrian
    Eigen::Vector3d position;
    Eigen::Vector3d velocity;  // m per frame
    double width = 1.8;
    double height = 1.5;
    double length = 4.2;
    Eigen::VectorXd embedding;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Eigen::VectorXd random_unit(std::mt19937_64& rng, int d) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(d);
    for (int k = 0; k < d; ++k) {
        v[k] = n(rng);
    }
    return v / v.norm();
}

}  // namespace

CameraPose CameraPose::forward_looking(const Eigen::Vector3d& position, double yaw) {
    CameraPose cam;
    // Rows are the camera axes in world coordinates: X right, Y down, Z forward.
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    cam.rotation << s, -c, 0.0,
                    0.0, 0.0, -1.0,
                    c, s, 0.0;
    cam.translation = position;
    return cam;
}

void CameraPose::validate() const {
    if (!((rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9)) {
        throw ConfigError("camera rotation is not orthonormal");
    }
    if (!(focal > 0.0) || !(width > 0.0) || !(height > 0.0)) {
        throw ConfigError("camera focal length and image size must be positive");
    }
}

Projection project(const Eigen::Vector3d& p_world, const CameraPose& cam) {
    const Eigen::Vector3d pc = cam.rotation * (p_world - cam.translation);
    Projection out;
    out.depth = pc.z();
    out.in_front = pc.z() > 0.1;
    if (out.in_front) {
        out.pixel = Eigen::Vector2d(cam.cx + cam.focal * pc.x() / pc.z(), cam.cy + cam.focal * pc.y() / pc.z());
    }
    return out;
}

Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth, const CameraPose& cam) {
    const Eigen::Vector3d pc((pixel.x() - cam.cx) * depth / cam.focal, (pixel.y() - cam.cy) * depth / cam.focal,
                             depth);
    return cam.rotation.transpose() * pc + cam.translation;
}

double ScenarioConfig::p_drop(double v) const { return std::clamp(p0 + k_p * v, 0.0, 0.9); }

double ScenarioConfig::speed_at(int frame) const {
    if (ego_speed.size() == 1) {
        return ego_speed[0];
    }
    return ego_speed.at(static_cast<std::size_t>(frame));
}

void ScenarioConfig::validate() const {
    if (n_frames < 1) {
        throw ConfigError("scenario needs at least one frame");
    }
    if (state_dim != 8 && state_dim != 12) {
        throw ConfigError("scenario state_dim must be 8 or 12");
    }
    if (ego_speed.empty() || (ego_speed.size() != 1 && static_cast<int>(ego_speed.size()) != n_frames)) {
        throw ConfigError("ego speed profile needs one value or one per frame");
    }
    for (double v : ego_speed) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ConfigError("ego speed must be finite and nonnegative");
        }
    }
    if (sigma0 < 0.0 || k_sigma < 0.0 || p0 < 0.0 || k_p < 0.0) {
        throw ConfigError("noise and dropout coefficients must be nonnegative");
    }
    if (!(frame_rate > 0.0) || !(min_depth > 0.1) || !(max_depth > min_depth)) {
        throw ConfigError("frame rate and depth range must be positive and ordered");
    }
    if (initial_objects < 0 || max_objects < 0 || spawn_prob < 0.0 || spawn_prob > 1.0 ||
        pedestrian_frac < 0.0 || pedestrian_frac > 1.0 || embedding_dim < 1 || embedding_jitter < 0.0) {
        throw ConfigError("invalid object population or embedding settings");
    }
}

ScenarioConfig ScenarioConfig::three_d() {
    ScenarioConfig cfg;
    cfg.state_dim = 12;
    cfg.sigma0 = 0.1;
    cfg.k_sigma = 0.006;
    return cfg;
}

io::SequenceBundle generate(const ScenarioConfig& cfg) {
    cfg.validate();
    std::mt19937_64 world_rng(cfg.seed);
    std::mt19937_64 det_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool is_3d = cfg.state_dim == 12;

    io::SequenceBundle b;
    b.id = cfg.id;
    b.n_frames = cfg.n_frames;
    b.state_dim = cfg.state_dim;
    b.source = "synthetic";
    b.has_gt = true;
    b.detections.assign(static_cast<std::size_t>(cfg.n_frames), {});
    b.gt.assign(static_cast<std::size_t>(cfg.n_frames), {});
    const CameraPose cam0;
    b.image_width = cam0.width;
    b.image_height = cam0.height;
    b.scene_extent = cfg.max_depth;

    Eigen::Vector3d ego = Eigen::Vector3d::Zero();
    double heading = 0.0;
    std::vector<SimObject> objects;
    int next_id = 0;
    const double kmh_to_mpf = 1.0 / (3.6 * cfg.frame_rate);

    auto spawn = [&](bool initial) {
        const double v_ego = cfg.speed_at(0) * kmh_to_mpf;
        SimObject o;
        o.id = next_id++;
        const bool ped = uniform(world_rng, 0.0, 1.0) < cfg.pedestrian_frac;
        const double side = uniform(world_rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        double lateral = 0.0;
        Eigen::Vector3d vel = Eigen::Vector3d::Zero();
        if (ped) {
            o.class_id = 1;
            o.width = uniform(world_rng, 0.5, 0.7);
            o.height = uniform(world_rng, 1.6, 1.9);
            o.length = uniform(world_rng, 0.4, 0.6);
            lateral = side * uniform(world_rng, 5.0, 8.0);
            vel = Eigen::Vector3d(uniform(world_rng, -5.0, 5.0), uniform(world_rng, -1.0, 1.0), 0.0) * kmh_to_mpf;
        } else {
            o.class_id = 0;
            o.width = uniform(world_rng, 1.6, 2.0);
            o.height = uniform(world_rng, 1.4, 1.7);
            o.length = uniform(world_rng, 3.8, 4.8);
            if (uniform(world_rng, 0.0, 1.0) < 0.5) {
                lateral = side * uniform(world_rng, 5.0, 7.0);
            } else {
                lateral = side * 3.5;
                vel = Eigen::Vector3d(uniform(world_rng, 10.0, 40.0), 0.0, 0.0) * kmh_to_mpf;
            }
        }
        double depth = uniform(world_rng, 15.0, cfg.max_depth);
        if (!initial) {
            depth = vel.x() < v_ego ? uniform(world_rng, 0.7 * cfg.max_depth, cfg.max_depth)
                                    : uniform(world_rng, 15.0, 30.0);
        }
        const Eigen::Vector3d fwd(std::cos(heading), std::sin(heading), 0.0);
        const Eigen::Vector3d left(-std::sin(heading), std::cos(heading), 0.0);
        o.position = ego + depth * fwd + lateral * left;
        o.position.z() = 0.5 * o.height;
        o.velocity = vel;
        o.embedding = random_unit(world_rng, cfg.embedding_dim);
        objects.push_back(std::move(o));
    };

    for (int i = 0; i < cfg.initial_objects && static_cast<int>(objects.size()) < cfg.max_objects; ++i) {
        spawn(true);
    }

    for (int t = 0; t < cfg.n_frames; ++t) {
        const double v = cfg.speed_at(t);
        b.speed.kmh.push_back(v);
        b.speed.held.push_back(false);
        const CameraPose cam = CameraPose::forward_looking(ego + Eigen::Vector3d(0.0, 0.0, kCameraHeight), heading);
        const Eigen::Matrix3d world_to_ego =
            Eigen::AngleAxisd(-heading, Eigen::Vector3d::UnitZ()).toRotationMatrix();

        for (const auto& o : objects) {
            Box gt_box;
            if (is_3d) {
                const Eigen::Vector3d rel = world_to_ego * (o.position - ego);
                if (rel.x() < cfg.min_depth || rel.x() > cfg.max_depth || std::abs(rel.y()) > 15.0) {
                    continue;
                }
                gt_box = Box(6);
                gt_box << rel.x(), rel.y(), rel.z(), o.width, o.height, o.length;
            } else {
                const Projection pr = project(o.position, cam);
                if (!pr.in_front || pr.depth < cfg.min_depth || pr.depth > cfg.max_depth) {
                    continue;
                }
                const double w = o.width * cam.focal / pr.depth;
                const double h = o.height * cam.focal / pr.depth;
                if (pr.pixel.x() - 0.5 * w < 0.0 || pr.pixel.x() + 0.5 * w > cam.width ||
                    pr.pixel.y() - 0.5 * h < 0.0 || pr.pixel.y() + 0.5 * h > cam.height) {
                    continue;
                }
                gt_box = Box(4);
                gt_box << pr.pixel.x(), pr.pixel.y(), w, h;
            }

            io::LabelRow row;
            row.frame = t;
            row.track_id = o.id;
            row.class_id = o.class_id;
            row.type = io::class_name(o.class_id);
            row.box = gt_box;
            b.gt[static_cast<std::size_t>(t)].push_back(row);
            b.embeddings[{t, o.id}] = o.embedding;

            // Noise draws happen whether or not the detection survives so that
            // the dropout stream does not shift the noise stream.
            const double drop_u = std::uniform_real_distribution<double>(0.0, 1.0)(det_rng);
            Box noisy = gt_box;
            const double sigma = cfg.sigma(v);
            for (int k = 0; k < noisy.size(); ++k) {
                noisy[k] += sigma * normal(det_rng);
            }
            const int n = static_cast<int>(noisy.size()) / 2;
            const double floor = is_3d ? 0.1 : 2.0;
            for (int k = n; k < 2 * n; ++k) {
                noisy[k] = std::max(noisy[k], floor);
            }
            const double small_penalty = is_3d ? 0.0 : 0.3 * std::max(0.0, 1.0 - gt_box[3] / 30.0);
            const double score = std::clamp(cfg.score_base - cfg.score_k * v + cfg.score_noise * normal(det_rng) -
                                                small_penalty,
                                            0.05, 1.0);
            Eigen::VectorXd emb(cfg.embedding_dim);
            for (int k = 0; k < cfg.embedding_dim; ++k) {
                emb[k] = o.embedding[k] + cfg.embedding_jitter * normal(det_rng);
            }
            if (drop_u < cfg.p_drop(v)) {
                continue;
            }
            Detection d;
            d.frame = t;
            d.class_id = o.class_id;
            d.box = noisy;
            d.score = score;
            d.embedding = emb / emb.norm();
            b.detections[static_cast<std::size_t>(t)].push_back(std::move(d));
        }

        // Advance the world by one frame.
        const Eigen::Vector3d fwd(std::cos(heading), std::sin(heading), 0.0);
        ego += v * kmh_to_mpf * fwd;
        heading += cfg.turn_rate;
        for (auto& o : objects) {
            o.position += o.velocity;
        }
        std::erase_if(objects, [&](const SimObject& o) {
            const double depth = (o.position - ego).dot(Eigen::Vector3d(std::cos(heading), std::sin(heading), 0.0));
            return depth < -5.0 || depth > cfg.max_depth + 30.0;
        });
        if (static_cast<int>(objects.size()) < cfg.max_objects &&
            uniform(world_rng, 0.0, 1.0) < cfg.spawn_prob) {
            spawn(false);
        }
    }
    return b;
}

std::vector<ScenarioConfig> make_suite(std::uint64_t seed, int count, const std::vector<double>& speeds,
                                       int n_frames, int state_dim) {
    if (count < 0 || speeds.empty()) {
        throw ConfigError("suite needs a nonnegative count and at least one speed");
    }
    std::vector<ScenarioConfig> out;
    for (int i = 0; i < count; ++i) {
        ScenarioConfig cfg = state_dim == 12 ? ScenarioConfig::three_d() : ScenarioConfig{};
        cfg.seed = seed + static_cast<std::uint64_t>(i) * 7919ULL;
        cfg.n_frames = n_frames;
        cfg.ego_speed = {speeds[static_cast<std::size_t>(i) % speeds.size()]};
        char name[32];
        std::snprintf(name, sizeof name, "%04d", i);
        cfg.id = name;
        out.push_back(std::move(cfg));
    }
    return out;
}

std::vector<ScenarioConfig> default_suite(int state_dim) {
    const std::vector<double> speeds = state_dim == 12 ? std::vector<double>{0, 15, 25, 35}
                                                       : std::vector<double>{0, 20, 40, 60};
    return make_suite(1000, 20, speeds, 150, state_dim);
}

std::vector<ScenarioConfig> training_suite(int count, int n_frames, int state_dim) {
    const std::vector<double> speeds = state_dim == 12 ? std::vector<double>{0, 15, 25, 35}
                                                       : std::vector<double>{0, 20, 40, 60};
    auto suite = make_suite(500000, count, speeds, n_frames, state_dim);
    for (auto& s : suite) {
        s.id = "train_" + s.id;
    }
    return suite;
}

}  // namespace speedtrack::synth
