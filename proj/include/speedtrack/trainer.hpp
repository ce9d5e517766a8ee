#pragma once

#include "speedtrack/io_formats.hpp"
#include "speedtrack/losses.hpp"
#include "speedtrack/msnet.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace speedtrack::train {

struct TrainConfig {
    double lr0 = 5e-3;
    double weight_decay = 1e-2;
    int warmup_epochs = 5;
    int total_epochs = 100;  ///< schedule length; also the number of epochs run
    int batch = 4;           ///< sequences per optimizer step
    std::uint64_t seed = 7;
    double grad_clip = 5.0;  ///< global L2 norm; 0 disables
    int window = 10;         ///< truncated backprop window, frames
    int overlap = 2;         ///< burn-in frames shared with the previous window
    double match_iou = 0.5;  ///< teacher-forcing threshold between detections and GT
    bool posterior_override = true;
    double rate_var_factor = 10.0;
    losses::LossWeights weights;

    void validate() const;
};

/// Linear warm-up lr₀·(e+1)/warmup for e < warmup, then cosine decay to 0 at total.
double lr_schedule(double epoch, const TrainConfig& cfg);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

/// One AdamW step (β₁ 0.9, β₂ 0.999, ε 1e-8) with decoupled weight decay on
/// entries whose decay_mask is set. Returns false and leaves everything
/// untouched when any gradient is non-finite.
bool optimizer_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                    double weight_decay, std::span<const char> decay_mask);

/// 1 for weight matrices, 0 for biases and LayerNorm parameters.
std::vector<char> decay_mask(const msnet::MSNetConfig& config);

/// One ground-truth object as the rollout sees it: contiguous frames from
/// its first teacher-matched detection onward.
struct TrainFrame {
    int frame = 0;
    Box gt;
    std::optional<Box> det;
    std::optional<Eigen::VectorXd> det_embedding;
    std::optional<Eigen::VectorXd> gt_embedding;
};

struct TrainTrack {
    int gt_id = 0;
    int class_id = 0;
    std::vector<TrainFrame> frames;
};

struct TrainSequence {
    std::string id;
    int state_dim = 8;
    double center_scale = 1.0;
    std::vector<double> speeds;
    std::vector<TrainTrack> tracks;
};

/// Matches detections to GT per frame (IoU ≥ match_iou, same class, optimal
/// assignment) and cuts each GT object into rollout tracks.
TrainSequence build_train_sequence(const io::SequenceBundle& bundle, double match_iou = 0.5);

/// Raw sums of the three loss terms over a sequence (or batch).
struct TermSums {
    double pcl = 0.0;
    long pcl_count = 0;  ///< loss frames
    double scl = 0.0;
    long scl_count = 0;  ///< loss frames with both embeddings
    double tcl = 0.0;
    long tcl_count = 0;  ///< windows

    TermSums& operator+=(const TermSums& o);
};

/// Counts only; they depend on the data, not the parameters.
TermSums count_terms(const TrainSequence& seq, const TrainConfig& cfg);

/// Runs the teacher-forced filter over every track. When `grad` is given,
/// accumulates coef_tcl·∂tcl/∂θ + coef_pcl·∂pcl/∂θ into it.
TermSums rollout(const TrainSequence& seq, const msnet::MSNetParams& params, const TrainConfig& cfg,
                 double coef_tcl = 0.0, double coef_pcl = 0.0, std::vector<double>* grad = nullptr);

struct BatchResult {
    losses::LossBreakdown loss;
    TermSums sums;
    std::vector<double> grad_params;
    bool no_matches = false;  ///< nothing to learn from; gradients are zero
};

/// Batch loss TCL + α·SCL + β·PCL, each term averaged over its count, and
/// its exact gradient with respect to the MSNet parameters and α, β.
BatchResult rollout_and_grad(std::span<const TrainSequence> batch, const msnet::MSNetParams& params,
                             const TrainConfig& cfg, const losses::LossWeights& weights, bool with_grad = true);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double tcl = 0.0;
    double scl = 0.0;
    double pcl = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    int skipped_steps = 0;
};

std::string epoch_json(const EpochMetrics& m);

struct TrainResult {
    msnet::MSNetParams params;
    losses::LossWeights weights;
    std::vector<EpochMetrics> curve;
};

/// Deterministic given (data, cfg, init). Sequences are visited in a seeded
/// shuffled order each epoch and grouped into batches.
TrainResult train(std::span<const TrainSequence> data, const TrainConfig& cfg,
                  std::optional<msnet::MSNetParams> init = {},
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace speedtrack::train
