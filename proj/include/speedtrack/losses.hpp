#pragma once

#include "speedtrack/association.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace speedtrack::losses {

/// Loss hyper-parameters. alpha and beta are stored through their softplus
/// pre-images so a gradient step can never make them negative.
struct LossWeights {
    double lambda = 1.0;  ///< center term weight inside TCL
    double gamma = 0.9;   ///< temporal decay, in (0, 1)
    double rho = 0.5;     ///< aggregate decay, in (0, 1]
    double alpha_raw = 0.5413248546129181;  ///< softplus⁻¹(1)
    double beta_raw = 0.5413248546129181;
    bool trainable = true;

    double alpha() const;
    double beta() const;
    void set_alpha(double a);
    void set_beta(double b);
    void validate() const;
};

/// EMA aggregates agg_1 = v_1, agg_k = ρ·v_k + (1−ρ)·agg_{k−1} for every prefix.
std::vector<Eigen::VectorXd> aggregates(std::span<const Eigen::VectorXd> seq, double rho);

/// Last aggregate of a nonempty sequence.
Eigen::VectorXd temporal_aggregate(std::span<const Eigen::VectorXd> seq, double rho);

/// One object's trajectory: centers per frame and, optionally, embeddings
/// for the same frames (empty means no semantic term).
struct Trajectory {
    std::vector<Eigen::VectorXd> centers;
    std::vector<Eigen::VectorXd> embeddings;
};

struct TrajectoryGrad {
    std::vector<Eigen::VectorXd> centers;
    std::vector<Eigen::VectorXd> embeddings;
};

/// (1/N) Σ_i Σ_{t≥2} Σ_{k<t} γ^{t−k} (‖f_t − F_k‖² + λ‖c_t − C_k‖²) where
/// F_k, C_k are the EMA aggregates. Trajectories shorter than 2 contribute 0
/// but still count in N. When `grad` is given it receives one entry per
/// trajectory with d/dc and d/df.
double tcl(std::span<const Trajectory> trajs, const LossWeights& w,
           std::vector<TrajectoryGrad>* grad = nullptr);

/// 1 − cos(a, b). Throws NumericError on a zero vector.
double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       Eigen::VectorXd* grad_a = nullptr);

/// Mean of 1 − cos over matched pairs; 0 for no pairs.
double scl(std::span<const Eigen::VectorXd> pred, std::span<const Eigen::VectorXd> gt);

/// CIoU loss for center-layout boxes. 2D: 1 − IoU + ρ²/c² + αᵥ·v with the
/// aspect term on w/h. 3D boxes use the volumetric IoU and enclosing-box
/// diagonal, with the aspect term taken on the first two extents.
double ciou_loss(const Box& pred, const Box& gt, Eigen::VectorXd* grad_pred = nullptr);

struct LossBreakdown {
    double total = 0.0;
    double tcl = 0.0;
    double scl = 0.0;
    double pcl = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double grad_alpha_raw = 0.0;  ///< d total / d alpha_raw
    double grad_beta_raw = 0.0;
};

/// total = TCL + α·SCL + β·PCL.
LossBreakdown total_loss(double tcl_value, double scl_value, double pcl_value,
                         const LossWeights& w);

}  // namespace speedtrack::losses
