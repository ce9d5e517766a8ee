#pragma once

#include "speedtrack/association.hpp"
#include "speedtrack/io_formats.hpp"
#include "speedtrack/kf_core.hpp"
#include "speedtrack/msnet.hpp"

#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace speedtrack {

enum class TrackStage { Tentative, Confirmed, Lost, Removed };

const char* stage_name(TrackStage s);

struct HistoryEntry {
    int frame = 0;
    kf::Vector state;
    std::optional<Eigen::VectorXd> embedding;
};

struct Track {
    int id = 0;
    int class_id = 0;
    kf::Vector state;
    kf::Matrix cov;
    TrackStage stage = TrackStage::Tentative;
    int hits = 0;
    int misses = 0;
    double score = 0.0;
    int last_frame = 0;
    std::deque<HistoryEntry> history;  ///< most recent last, bounded by history_length
};

struct TrackerConfig {
    AssociationConfig association;
    int base_age = 30;           ///< A₀, frames
    double v_ref = 120.0;        ///< km/h at which the lifetime reaches its floor
    double min_age_frac = 0.2;
    int confirm_hits = 2;
    double rate_var_factor = 10.0;
    std::size_t history_length = 30;

    void validate() const;
};

/// round(A₀ · max(1 − v/v_ref, min_age_frac)).
int max_age(double v, const TrackerConfig& cfg);

/// Source of Q, R and the posterior covariance for the tracker.
class NoiseModel {
public:
    virtual ~NoiseModel() = default;

    struct UpdateNoise {
        kf::Vector r;
        std::optional<kf::Matrix> posterior;  ///< replaces the Joseph posterior when set
    };

    /// Q for a predict step from speed and the track's current state.
    virtual kf::Vector process_noise(double v, const kf::Vector& state) const = 0;
    /// R (and optionally P) for an update with detection box z.
    virtual UpdateNoise update_noise(double v, const Box& z, const kf::Vector& state_pred) const = 0;
    /// Covariance of a track born from detection box z.
    virtual kf::Matrix initial_covariance(double v, const Box& z) const = 0;
};

/// MSNet-driven noise: Q from (v_prev, posterior sizes), R and P from
/// (v_cur, detection sizes), with P used as the posterior override.
class LearnedNoise final : public NoiseModel {
public:
    explicit LearnedNoise(msnet::MSNetParams params, double rate_var_factor = 10.0,
                          bool posterior_override = true);

    kf::Vector process_noise(double v, const kf::Vector& state) const override;
    UpdateNoise update_noise(double v, const Box& z, const kf::Vector& state_pred) const override;
    kf::Matrix initial_covariance(double v, const Box& z) const override;

    const msnet::MSNetParams& params() const { return params_; }

private:
    msnet::MSNetParams params_;
    double rate_var_factor_;
    bool posterior_override_;
};

/// Constant-weight baseline: standard deviations proportional to box size
/// (1/20 for positions and sizes, 1/160 for rates), Joseph posterior.
class FixedNoise final : public NoiseModel {
public:
    explicit FixedNoise(int state_dim, double std_position = 1.0 / 20.0, double std_velocity = 1.0 / 160.0);

    kf::Vector process_noise(double v, const kf::Vector& state) const override;
    UpdateNoise update_noise(double v, const Box& z, const kf::Vector& state_pred) const override;
    kf::Matrix initial_covariance(double v, const Box& z) const override;

private:
    int dim_;
    double std_position_;
    double std_velocity_;
};

/// Diagonal covariance from the P head at (v, detection sizes), with the
/// rate entries multiplied by rate_var_factor.
kf::Matrix initial_covariance(const Detection& det, double v, const msnet::MSNetParams& params,
                              double rate_var_factor = 10.0);

/// The MSNet input vector [v, sizes…] for a box or the observed half of a state.
std::vector<double> msnet_inputs(double v, const Eigen::VectorXd& box_or_state, int state_dim);

struct TrackSnapshot {
    int frame = 0;
    int id = 0;
    int class_id = 0;
    Box box;
    double score = 0.0;
};

class Tracker {
public:
    Tracker(TrackerConfig cfg, std::shared_ptr<const NoiseModel> noise, int state_dim);

    /// Processes one frame. Frames must be strictly increasing (SequenceError
    /// otherwise). Returns the confirmed tracks updated in this frame.
    std::vector<TrackSnapshot> step(int frame, std::span<const Detection> dets, double v_prev, double v_cur);

    /// Live tracks (Removed ones are dropped).
    const std::vector<Track>& tracks() const { return tracks_; }
    int next_id() const { return next_id_; }

private:
    void record(Track& t, int frame, const Detection* det);

    TrackerConfig cfg_;
    std::shared_ptr<const NoiseModel> noise_;
    int dim_;
    std::vector<Track> tracks_;
    int next_id_ = 0;
    std::optional<int> last_frame_;
};

/// Runs a tracker over every frame of a bundle and collects result rows.
/// Speeds may be overridden (e.g. perturbed) by passing `speeds`.
std::vector<io::ResultRow> run_sequence(const io::SequenceBundle& bundle, const TrackerConfig& cfg,
                                        std::shared_ptr<const NoiseModel> noise,
                                        const std::vector<double>* speeds = nullptr);

}  // namespace speedtrack
