#include "speedtrack/track_manager.hpp"

#include "speedtrack/errors.hpp"

#include <algorithm>
#include <cmath>

namespace speedtrack {

const char* stage_name(TrackStage s) {
    switch (s) {
        case TrackStage::Tentative: return "tentative";
        case TrackStage::Confirmed: return "confirmed";
        case TrackStage::Lost: return "lost";
        case TrackStage::Removed: return "removed";
    }
    return "unknown";
}

void TrackerConfig::validate() const {
    association.validate();
    if (base_age < 1) {
        throw ConfigError("base_age must be at least 1");
    }
    if (!(min_age_frac > 0.0 && min_age_frac <= 1.0)) {
        throw ConfigError("min_age_frac must lie in (0, 1]");
    }
    if (!(v_ref > 0.0)) {
        throw ConfigError("v_ref must be positive");
    }
    if (confirm_hits < 1) {
        throw ConfigError("confirm_hits must be at least 1");
    }
    if (!(rate_var_factor > 0.0)) {
        throw ConfigError("rate_var_factor must be positive");
    }
}

int max_age(double v, const TrackerConfig& cfg) {
    if (!(v >= 0.0)) {
        throw NumericError("speed must be nonnegative");
    }
    return static_cast<int>(std::lround(cfg.base_age * std::max(1.0 - v / cfg.v_ref, cfg.min_age_frac)));
}

std::vector<double> msnet_inputs(double v, const Eigen::VectorXd& box_or_state, int state_dim) {
    const auto layout = kf::StateLayout::for_dim(state_dim);
    std::vector<double> in{v};
    for (int i = 0; i < layout.n_sizes(); ++i) {
        in.push_back(box_or_state[layout.size_offset() + i]);
    }
    return in;
}

kf::Matrix initial_covariance(const Detection& det, double v, const msnet::MSNetParams& params,
                              double rate_var_factor) {
    const int dim = params.config.p_dim;
    const auto in = msnet_inputs(v, det.box, dim);
    kf::Vector p = msnet::forward(params, in, nullptr, msnet::kHeadP).p;
    p.tail(dim / 2) *= rate_var_factor;
    return p.asDiagonal();
}

LearnedNoise::LearnedNoise(msnet::MSNetParams params, double rate_var_factor, bool posterior_override)
    : params_(std::move(params)), rate_var_factor_(rate_var_factor), posterior_override_(posterior_override) {
    if (params_.values.size() != msnet::param_count(params_.config)) {
        throw ShapeError("MSNet parameters do not match their config");
    }
}

kf::Vector LearnedNoise::process_noise(double v, const kf::Vector& state) const {
    const auto in = msnet_inputs(v, state, static_cast<int>(state.size()));
    return msnet::forward(params_, in, nullptr, msnet::kHeadQ).q;
}

NoiseModel::UpdateNoise LearnedNoise::update_noise(double v, const Box& z, const kf::Vector& state_pred) const {
    const auto in = msnet_inputs(v, z, static_cast<int>(state_pred.size()));
    auto out = msnet::forward(params_, in, nullptr,
                              posterior_override_ ? (msnet::kHeadR | msnet::kHeadP) : msnet::kHeadR);
    UpdateNoise n;
    n.r = std::move(out.r);
    if (posterior_override_) {
        n.posterior = kf::Matrix(out.p.asDiagonal());
    }
    return n;
}

kf::Matrix LearnedNoise::initial_covariance(double v, const Box& z) const {
    Detection d;
    d.box = z;
    return speedtrack::initial_covariance(d, v, params_, rate_var_factor_);
}

FixedNoise::FixedNoise(int state_dim, double std_position, double std_velocity)
    : dim_(kf::StateLayout::for_dim(state_dim).dim), std_position_(std_position), std_velocity_(std_velocity) {
    if (!(std_position > 0.0) || !(std_velocity > 0.0)) {
        throw ConfigError("fixed noise weights must be positive");
    }
}

namespace {

// Size component that scales axis k of the observation block.
double scale_for(const Eigen::VectorXd& box_or_state, int k, const kf::StateLayout& layout) {
    const int n = layout.n_sizes();
    return std::max(box_or_state[layout.size_offset() + (k % n)], kf::kMinSize);
}

}  // namespace

kf::Vector FixedNoise::process_noise(double, const kf::Vector& state) const {
    const auto layout = kf::StateLayout::for_dim(dim_);
    const int half = layout.obs_dim();
    kf::Vector q(dim_);
    for (int k = 0; k < half; ++k) {
        const double s = scale_for(state, k, layout);
        q[k] = std::pow(std_position_ * s, 2);
        q[half + k] = std::pow(std_velocity_ * s, 2);
    }
    return q;
}

NoiseModel::UpdateNoise FixedNoise::update_noise(double, const Box&, const kf::Vector& state_pred) const {
    const auto layout = kf::StateLayout::for_dim(dim_);
    UpdateNoise n;
    n.r = kf::Vector(layout.obs_dim());
    for (int k = 0; k < layout.obs_dim(); ++k) {
        n.r[k] = std::pow(std_position_ * scale_for(state_pred, k, layout), 2);
    }
    return n;
}

kf::Matrix FixedNoise::initial_covariance(double, const Box& z) const {
    const auto layout = kf::StateLayout::for_dim(dim_);
    const int half = layout.obs_dim();
    kf::Vector p(dim_);
    for (int k = 0; k < half; ++k) {
        const double s = scale_for(z, k, layout);
        p[k] = std::pow(2.0 * std_position_ * s, 2);
        p[half + k] = std::pow(10.0 * std_velocity_ * s, 2);
    }
    return p.asDiagonal();
}

Tracker::Tracker(TrackerConfig cfg, std::shared_ptr<const NoiseModel> noise, int state_dim)
    : cfg_(std::move(cfg)), noise_(std::move(noise)), dim_(kf::StateLayout::for_dim(state_dim).dim) {
    cfg_.validate();
    if (!noise_) {
        throw ConfigError("tracker needs a noise model");
    }
}

void Tracker::record(Track& t, int frame, const Detection* det) {
    HistoryEntry e;
    e.frame = frame;
    e.state = t.state;
    if (det && det->embedding) {
        e.embedding = det->embedding;
    }
    t.history.push_back(std::move(e));
    while (t.history.size() > cfg_.history_length) {
        t.history.pop_front();
    }
}

std::vector<TrackSnapshot> Tracker::step(int frame, std::span<const Detection> dets, double v_prev, double v_cur) {
    if (last_frame_ && frame <= *last_frame_) {
        throw SequenceError("frame " + std::to_string(frame) + " does not follow frame " +
                            std::to_string(*last_frame_));
    }
    if (!(v_prev >= 0.0) || !(v_cur >= 0.0)) {
        throw NumericError("ego speed must be finite and nonnegative");
    }
    const int obs = dim_ / 2;
    for (const auto& d : dets) {
        if (d.box.size() != obs) {
            throw ShapeError("detection box has the wrong dimension for this tracker");
        }
    }
    last_frame_ = frame;

    // Predict every live track, coasting ones included.
    for (auto& t : tracks_) {
        const auto q = noise_->process_noise(v_prev, t.state);
        auto pred = kf::predict(t.state, t.cov, q);
        t.state = std::move(pred.state);
        t.cov = std::move(pred.cov);
        const auto layout = kf::StateLayout::for_dim(dim_);
        for (int i = 0; i < layout.n_sizes(); ++i) {
            t.state[layout.size_offset() + i] = std::max(t.state[layout.size_offset() + i], kf::kMinSize);
        }
    }

    std::vector<TrackBox> boxes;
    boxes.reserve(tracks_.size());
    for (const auto& t : tracks_) {
        boxes.push_back(TrackBox{t.state.head(obs), t.class_id});
    }
    const auto assoc = two_stage_associate(boxes, dets, cfg_.association);

    std::vector<char> matched(tracks_.size(), 0);
    std::vector<TrackSnapshot> out;
    auto apply = [&](int ti, int dj) {
        Track& t = tracks_[static_cast<std::size_t>(ti)];
        const Detection& d = dets[static_cast<std::size_t>(dj)];
        const auto noise = noise_->update_noise(v_cur, d.box, t.state);
        auto up = kf::update(t.state, t.cov, d.box, noise.r, noise.posterior);
        t.state = std::move(up.state);
        t.cov = std::move(up.cov);
        t.hits += 1;
        t.misses = 0;
        t.score = d.score;
        t.last_frame = frame;
        if (t.stage == TrackStage::Lost) {
            t.stage = TrackStage::Confirmed;
        } else if (t.stage == TrackStage::Tentative && t.hits >= cfg_.confirm_hits) {
            t.stage = TrackStage::Confirmed;
        }
        record(t, frame, &d);
        matched[static_cast<std::size_t>(ti)] = 1;
    };
    for (auto [ti, dj] : assoc.stage1.matches) {
        apply(ti, dj);
    }
    for (auto [ti, dj] : assoc.stage2.matches) {
        apply(ti, dj);
    }

    const int age_limit = max_age(v_cur, cfg_);
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
        if (matched[i]) {
            continue;
        }
        Track& t = tracks_[i];
        t.misses += 1;
        if (t.stage == TrackStage::Tentative) {
            t.stage = TrackStage::Removed;
        } else if (t.stage == TrackStage::Confirmed) {
            t.stage = TrackStage::Lost;
        }
        if (t.stage == TrackStage::Lost && t.misses > age_limit) {
            t.stage = TrackStage::Removed;
        }
    }

    for (std::size_t i = 0; i < tracks_.size(); ++i) {
        const Track& t = tracks_[i];
        if (matched[i] && t.stage == TrackStage::Confirmed) {
            out.push_back(TrackSnapshot{frame, t.id, t.class_id, t.state.head(obs), t.score});
        }
    }
    std::erase_if(tracks_, [](const Track& t) { return t.stage == TrackStage::Removed; });

    for (int dj : assoc.new_track_candidates) {
        const Detection& d = dets[static_cast<std::size_t>(dj)];
        Track t;
        t.id = next_id_++;
        t.class_id = d.class_id;
        t.state = kf::Vector::Zero(dim_);
        t.state.head(obs) = d.box;
        t.cov = noise_->initial_covariance(v_cur, d.box);
        t.hits = 1;
        t.score = d.score;
        t.last_frame = frame;
        t.stage = t.hits >= cfg_.confirm_hits ? TrackStage::Confirmed : TrackStage::Tentative;
        record(t, frame, &d);
        if (t.stage == TrackStage::Confirmed) {
            out.push_back(TrackSnapshot{frame, t.id, t.class_id, t.state.head(obs), t.score});
        }
        tracks_.push_back(std::move(t));
    }
    return out;
}

std::vector<io::ResultRow> run_sequence(const io::SequenceBundle& bundle, const TrackerConfig& cfg,
                                        std::shared_ptr<const NoiseModel> noise, const std::vector<double>* speeds) {
    bundle.validate();
    const std::vector<double>& v = speeds ? *speeds : bundle.speed.kmh;
    if (static_cast<int>(v.size()) != bundle.n_frames) {
        throw ShapeError("speed series length does not match the sequence");
    }
    Tracker tracker(cfg, std::move(noise), bundle.state_dim);
    std::vector<io::ResultRow> rows;
    for (int f = 0; f < bundle.n_frames; ++f) {
        const double v_cur = v[static_cast<std::size_t>(f)];
        const double v_prev = f > 0 ? v[static_cast<std::size_t>(f - 1)] : v_cur;
        for (auto& s : tracker.step(f, bundle.detections[static_cast<std::size_t>(f)], v_prev, v_cur)) {
            rows.push_back(io::ResultRow{s.frame, s.id, s.class_id, std::move(s.box), s.score});
        }
    }
    return rows;
}

}  // namespace speedtrack
