#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>

namespace speedtrack::kf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Smallest size component (w, h, l) an accepted update may leave behind.
inline constexpr double kMinSize = 1e-3;

/// Geometry of a constant-velocity state.
///
/// 2D: [x, y, w, h, ẋ, ẏ, ẇ, ḣ], observation [x, y, w, h].
/// 3D: [x, y, z, w, h, l, ẋ, ẏ, ż, ẇ, ḣ, l̇], observation [x, y, z, w, h, l].
/// The first half of the state is observed directly; its second half holds
/// the per-frame rates of the first.
struct StateLayout {
    int dim = 8;

    static StateLayout for_dim(int dim);  // throws ConfigError unless 8 or 12

    int obs_dim() const { return dim / 2; }
    int spatial_dims() const { return dim == 8 ? 2 : 3; }
    /// Index of the first size component within the observation block.
    int size_offset() const { return spatial_dims(); }
    int n_sizes() const { return spatial_dims() == 2 ? 2 : 3; }
};

/// Constant-velocity transition [[I, dt·I], [0, I]].
Matrix make_transition(int dim, double dt = 1.0);

/// Observation matrix [I 0] selecting the positions and sizes.
Matrix observation_matrix(int dim);

struct Prediction {
    Vector state;
    Matrix cov;
};

/// x' = F x, P' = F P Fᵀ + diag(q).
Prediction predict(const Vector& state, const Matrix& cov, const Vector& q_diag,
                   double dt = 1.0);

struct Gain {
    Matrix gain;            ///< K = P Hᵀ S⁻¹
    Matrix innovation_cov;  ///< S = H P Hᵀ + diag(r)
    Matrix innovation_inv;  ///< S⁻¹
};

/// Kalman gain for a predicted covariance. Throws NumericError (with the
/// condition number of S) when the innovation covariance is singular.
Gain gain(const Matrix& cov_pred, const Vector& r_diag, const Matrix& obs_matrix);

struct Update {
    Vector state;
    Matrix cov;
    Vector innovation;  ///< z − H x̂_{t|t−1}
    Gain gain;
    /// Components of `state` that hit the size floor and were clamped.
    Eigen::Array<bool, Eigen::Dynamic, 1> clamped;
};

/// Measurement update. The posterior covariance is the supplied override when
/// present, otherwise the Joseph form (I−KH)P(I−KH)ᵀ + K R Kᵀ. Sizes that
/// fall below kMinSize are clamped to it.
Update update(const Vector& state_pred, const Matrix& cov_pred, const Vector& z,
              const Vector& r_diag, const std::optional<Matrix>& posterior_cov_override = {});

/// Joseph-form posterior on its own, shared with the differentiable rollout.
Matrix joseph_posterior(const Matrix& cov_pred, const Matrix& gain, const Matrix& obs_matrix,
                        const Vector& r_diag);

}  // namespace speedtrack::kf
