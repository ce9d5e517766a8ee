#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace speedtrack {

/// Axis-aligned box in center layout: [x, y, w, h] (2D) or [x, y, z, w, h, l] (3D).
/// The first half holds the center, the second half the extents along the same axes.
using Box = Eigen::VectorXd;

/// One observation from the detector.
struct Detection {
    Box box;
    double score = 1.0;
    int class_id = 0;
    std::optional<Eigen::VectorXd> embedding;
    int frame = 0;
};

double iou_2d(std::span<const double> a, std::span<const double> b);
double iou_3d(std::span<const double> a, std::span<const double> b);
/// Dispatches on the box size (4 or 6).
double box_iou(const Box& a, const Box& b);

/// Rows are tracks, columns detections; entries are 1 − similarity.
using CostMatrix = Eigen::MatrixXd;

struct AssociationResult {
    std::vector<std::pair<int, int>> matches;  ///< (track_idx, det_idx), ascending track_idx
    std::vector<int> unmatched_tracks;
    std::vector<int> unmatched_detections;
};

/// Optimal assignment with gating. Minimises the total cost of matched pairs
/// plus max_cost/2 for every row or column left unmatched, so a pair is only
/// worth matching when its cost does not exceed max_cost. Pairs above
/// max_cost are never matched. An infinite max_cost gives the plain
/// rectangular minimum-cost assignment of min(rows, cols) pairs.
AssociationResult solve_assignment(const CostMatrix& cost, double max_cost);

/// Square/rectangular minimum-cost assignment (Kuhn–Munkres with potentials).
/// Returns the column assigned to each row, or −1 when rows > cols.
/// Entries equal to +inf are forbidden; throws NumericError if every
/// complete assignment would need one.
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost);

struct AssociationConfig {
    double tau_high = 0.6;
    double tau_low = 0.1;
    double gate_stage1 = 0.7;  ///< max cost (1 − IoU) in the high-confidence stage
    double gate_stage2 = 0.5;  ///< max cost in the low-confidence stage
    bool class_aware = true;

    void validate() const;
};

struct TrackBox {
    Box box;
    int class_id = 0;
};

struct TwoStageResult {
    /// Indices into the caller's track and detection arrays.
    AssociationResult stage1;
    AssociationResult stage2;
    std::vector<int> new_track_candidates;  ///< unmatched high-confidence detections
    std::vector<int> discarded;             ///< score below tau_low, or unmatched low-confidence
};

/// Builds the IoU cost matrix; cross-class pairs cost 1 when class_aware.
CostMatrix iou_cost(std::span<const TrackBox> tracks, std::span<const Detection> dets,
                    std::span<const int> det_indices, bool class_aware);

TwoStageResult two_stage_associate(std::span<const TrackBox> tracks,
                                   std::span<const Detection> dets,
                                   const AssociationConfig& cfg);

}  // namespace speedtrack
