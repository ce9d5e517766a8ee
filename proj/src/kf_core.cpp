#include "speedtrack/kf_core.hpp"

#include "speedtrack/errors.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace speedtrack::kf {

namespace {

void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) {
        throw NumericError(std::string("non-finite ") + what);
    }
}

void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) {
        throw NumericError(std::string("non-finite ") + what);
    }
}

}  // namespace

StateLayout StateLayout::for_dim(int dim) {
    if (dim != 8 && dim != 12) {
        throw ConfigError("state dimension must be 8 or 12, got " + std::to_string(dim));
    }
    return StateLayout{dim};
}

Matrix make_transition(int dim, double dt) {
    const auto layout = StateLayout::for_dim(dim);
    if (!(dt > 0.0)) {
        throw ConfigError("transition dt must be positive");
    }
    const int half = layout.obs_dim();
    Matrix f = Matrix::Identity(dim, dim);
    f.block(0, half, half, half).diagonal().setConstant(dt);
    return f;
}

Matrix observation_matrix(int dim) {
    const auto layout = StateLayout::for_dim(dim);
    Matrix h = Matrix::Zero(layout.obs_dim(), dim);
    h.leftCols(layout.obs_dim()).setIdentity();
    return h;
}

Prediction predict(const Vector& state, const Matrix& cov, const Vector& q_diag, double dt) {
    const int dim = static_cast<int>(state.size());
    if (cov.rows() != dim || cov.cols() != dim || q_diag.size() != dim) {
        throw ShapeError("predict: state, covariance and q sizes disagree");
    }
    require_finite(state, "state in predict");
    require_finite(cov, "covariance in predict");
    require_finite(q_diag, "process noise in predict");
    if ((q_diag.array() <= 0.0).any()) {
        throw NumericError("process noise entries must be positive");
    }
    const Matrix f = make_transition(dim, dt);
    Prediction out;
    out.state = f * state;
    out.cov = f * cov * f.transpose();
    out.cov.diagonal() += q_diag;
    // Exact symmetry keeps downstream eigen checks honest.
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

Gain gain(const Matrix& cov_pred, const Vector& r_diag, const Matrix& obs_matrix) {
    if (obs_matrix.cols() != cov_pred.rows() || obs_matrix.rows() != r_diag.size()) {
        throw ShapeError("gain: observation matrix does not match covariance or r");
    }
    require_finite(cov_pred, "covariance in gain");
    require_finite(r_diag, "observation noise in gain");

    Gain out;
    out.innovation_cov = obs_matrix * cov_pred * obs_matrix.transpose();
    out.innovation_cov.diagonal() += r_diag;
    out.innovation_cov = 0.5 * (out.innovation_cov + out.innovation_cov.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(out.innovation_cov, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || !(hi / lo < 1e14)) {
        std::ostringstream msg;
        msg << "singular innovation covariance (condition number "
            << (lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity()) << ")";
        throw NumericError(msg.str());
    }
    out.innovation_inv = out.innovation_cov.llt().solve(
        Matrix::Identity(out.innovation_cov.rows(), out.innovation_cov.cols()));
    out.gain = cov_pred * obs_matrix.transpose() * out.innovation_inv;
    return out;
}

Matrix joseph_posterior(const Matrix& cov_pred, const Matrix& k, const Matrix& obs_matrix,
                        const Vector& r_diag) {
    const Matrix b = Matrix::Identity(cov_pred.rows(), cov_pred.cols()) - k * obs_matrix;
    Matrix post = b * cov_pred * b.transpose() + k * r_diag.asDiagonal() * k.transpose();
    return 0.5 * (post + post.transpose());
}

Update update(const Vector& state_pred, const Matrix& cov_pred, const Vector& z,
              const Vector& r_diag, const std::optional<Matrix>& posterior_cov_override) {
    const int dim = static_cast<int>(state_pred.size());
    const auto layout = StateLayout::for_dim(dim);
    if (z.size() != layout.obs_dim() || r_diag.size() != layout.obs_dim()) {
        throw ShapeError("update: observation or r has the wrong size");
    }
    require_finite(state_pred, "state in update");
    require_finite(z, "observation in update");
    if ((r_diag.array() <= 0.0).any()) {
        throw NumericError("observation noise entries must be positive");
    }
    const Matrix h = observation_matrix(dim);

    Update out;
    out.gain = gain(cov_pred, r_diag, h);
    out.innovation = z - h * state_pred;
    out.state = state_pred + out.gain.gain * out.innovation;

    out.clamped = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(dim, false);
    for (int i = 0; i < layout.n_sizes(); ++i) {
        const int idx = layout.size_offset() + i;
        if (out.state[idx] < kMinSize) {
            out.state[idx] = kMinSize;
            out.clamped[idx] = true;
        }
    }

    if (posterior_cov_override) {
        if (posterior_cov_override->rows() != dim || posterior_cov_override->cols() != dim) {
            throw ShapeError("update: posterior covariance override has the wrong shape");
        }
        out.cov = *posterior_cov_override;
    } else {
        out.cov = joseph_posterior(cov_pred, out.gain.gain, h, r_diag);
    }
    return out;
}

}  // namespace speedtrack::kf
