#include "speedtrack/losses.hpp"

#include "speedtrack/errors.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <numbers>
#include <type_traits>

namespace speedtrack::losses {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

template <class T>
T max_of(const T& a, const T& b) { return a > b ? a : b; }
template <class T>
T min_of(const T& a, const T& b) { return a < b ? a : b; }

// Constants for the AutoDiff path carry explicit zero derivatives; mixing
// empty and sized derivative vectors is not supported by Eigen.
template <class T>
T constant(double x, int dim) {
    if constexpr (std::is_same_v<T, double>) {
        (void)dim;
        return x;
    } else {
        return T(x, Eigen::VectorXd::Zero(dim));
    }
}

// n = number of spatial axes; components [0, n) are centers, [n, 2n) extents.
template <class T>
T ciou_generic(const std::vector<T>& p, const Box& g, int n) {
    const int dim = 2 * n;
    auto c = [dim](double x) { return constant<T>(x, dim); };
    T inter = c(1.0);
    T vol_p = c(1.0);
    double vol_g = 1.0;
    T center_dist2 = c(0.0);
    T diag2 = c(0.0);
    for (int k = 0; k < n; ++k) {
        const T p_lo = p[k] - 0.5 * p[n + k];
        const T p_hi = p[k] + 0.5 * p[n + k];
        const double g_lo = g[k] - 0.5 * g[n + k];
        const double g_hi = g[k] + 0.5 * g[n + k];
        const T overlap = min_of(p_hi, c(g_hi)) - max_of(p_lo, c(g_lo));
        inter = inter * max_of(overlap, c(0.0));
        vol_p = vol_p * p[n + k];
        vol_g *= g[n + k];
        const T d = p[k] - g[k];
        center_dist2 = center_dist2 + d * d;
        const T extent = max_of(p_hi, c(g_hi)) - min_of(p_lo, c(g_lo));
        diag2 = diag2 + extent * extent;
    }
    const T iou = inter / (vol_p + vol_g - inter);
    T loss = 1.0 - iou + center_dist2 / diag2;

    using std::atan2;
    const T dtheta = std::atan2(g[n], g[n + 1]) - atan2(p[n], p[n + 1]);
    const T v = (4.0 / (std::numbers::pi * std::numbers::pi)) * dtheta * dtheta;
    // αᵥ·v and its derivative both vanish at v = 0; skipping avoids 0/0.
    if (v > 0.0) {
        const T alpha_v = v / ((1.0 - iou) + v);
        loss = loss + alpha_v * v;
    }
    return loss;
}

void check_box(const Box& b, const char* what) {
    if (b.size() != 4 && b.size() != 6) {
        throw ShapeError(std::string(what) + " box must have 4 or 6 components");
    }
    const int n = static_cast<int>(b.size()) / 2;
    if (!b.allFinite() || (b.tail(n).array() <= 0.0).any()) {
        throw NumericError(std::string(what) + " box needs finite values and positive sizes");
    }
}

}  // namespace

double LossWeights::alpha() const { return softplus(alpha_raw); }
double LossWeights::beta() const { return softplus(beta_raw); }
void LossWeights::set_alpha(double a) { alpha_raw = softplus_inverse(a); }
void LossWeights::set_beta(double b) { beta_raw = softplus_inverse(b); }

void LossWeights::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw ConfigError("gamma must lie in (0, 1)");
    }
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw ConfigError("rho must lie in (0, 1]");
    }
    if (!std::isfinite(lambda) || lambda < 0.0 || !std::isfinite(alpha_raw) || !std::isfinite(beta_raw)) {
        throw ConfigError("loss weights must be finite and lambda nonnegative");
    }
}

std::vector<Eigen::VectorXd> aggregates(std::span<const Eigen::VectorXd> seq, double rho) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(seq.size());
    for (std::size_t k = 0; k < seq.size(); ++k) {
        if (k == 0) {
            out.push_back(seq[0]);
        } else {
            if (seq[k].size() != seq[0].size()) {
                throw ShapeError("aggregate: vectors of different length");
            }
            out.push_back(rho * seq[k] + (1.0 - rho) * out.back());
        }
    }
    return out;
}

Eigen::VectorXd temporal_aggregate(std::span<const Eigen::VectorXd> seq, double rho) {
    if (seq.empty()) {
        throw ShapeError("aggregate of an empty sequence");
    }
    return aggregates(seq, rho).back();
}

namespace {

// Σ_{t≥2} Σ_{k<t} γ^{t−k} scale·‖x_t − X_k‖² for one stream, with gradient.
double stream_term(const std::vector<Eigen::VectorXd>& xs, double gamma, double rho, double scale,
                   std::vector<Eigen::VectorXd>* grad) {
    const std::size_t n = xs.size();
    const auto agg = aggregates(xs, rho);
    double value = 0.0;
    std::vector<Eigen::VectorXd> dagg;
    if (grad) {
        grad->assign(n, Eigen::VectorXd::Zero(xs.empty() ? 0 : xs[0].size()));
        dagg.assign(n, Eigen::VectorXd::Zero(xs.empty() ? 0 : xs[0].size()));
    }
    for (std::size_t t = 1; t < n; ++t) {
        double decay = 1.0;
        for (std::size_t k = t; k-- > 0;) {
            decay *= gamma;
            const Eigen::VectorXd diff = xs[t] - agg[k];
            value += decay * scale * diff.squaredNorm();
            if (grad) {
                (*grad)[t] += 2.0 * decay * scale * diff;
                dagg[k] -= 2.0 * decay * scale * diff;
            }
        }
    }
    if (grad) {
        for (std::size_t k = n; k-- > 1;) {
            (*grad)[k] += rho * dagg[k];
            dagg[k - 1] += (1.0 - rho) * dagg[k];
        }
        if (n > 0) {
            (*grad)[0] += dagg[0];
        }
    }
    return value;
}

}  // namespace

double tcl(std::span<const Trajectory> trajs, const LossWeights& w, std::vector<TrajectoryGrad>* grad) {
    w.validate();
    if (grad) {
        grad->assign(trajs.size(), {});
    }
    if (trajs.empty()) {
        return 0.0;
    }
    const double inv_n = 1.0 / static_cast<double>(trajs.size());
    double total = 0.0;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        const auto& tr = trajs[i];
        if (!tr.embeddings.empty() && tr.embeddings.size() != tr.centers.size()) {
            throw ShapeError("trajectory embeddings and centers differ in length");
        }
        TrajectoryGrad* g = grad ? &(*grad)[i] : nullptr;
        total += stream_term(tr.centers, w.gamma, w.rho, w.lambda * inv_n, g ? &g->centers : nullptr);
        if (!tr.embeddings.empty()) {
            total += stream_term(tr.embeddings, w.gamma, w.rho, inv_n, g ? &g->embeddings : nullptr);
        }
    }
    return total;
}

double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::VectorXd* grad_a) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine: vectors of different length");
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) {
        throw NumericError("cosine similarity of a zero-norm vector");
    }
    const double cos = a.dot(b) / (na * nb);
    if (grad_a) {
        *grad_a = -(b / (na * nb) - cos * a / (na * na));
    }
    return 1.0 - cos;
}

double scl(std::span<const Eigen::VectorXd> pred, std::span<const Eigen::VectorXd> gt) {
    if (pred.size() != gt.size()) {
        throw ShapeError("scl: prediction and ground-truth counts differ");
    }
    if (pred.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        sum += cosine_distance(pred[i], gt[i]);
    }
    return sum / static_cast<double>(pred.size());
}

double ciou_loss(const Box& pred, const Box& gt, Eigen::VectorXd* grad_pred) {
    check_box(pred, "prediction");
    check_box(gt, "ground-truth");
    if (pred.size() != gt.size()) {
        throw ShapeError("ciou: boxes of different dimension");
    }
    const int dim = static_cast<int>(pred.size());
    const int n = dim / 2;
    if (!grad_pred) {
        std::vector<double> p(pred.data(), pred.data() + dim);
        return ciou_generic(p, gt, n);
    }
    using AD = Eigen::AutoDiffScalar<Eigen::VectorXd>;
    std::vector<AD> p(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k) {
        p[static_cast<std::size_t>(k)] = AD(pred[k], dim, k);
    }
    const AD loss = ciou_generic(p, gt, n);
    *grad_pred = loss.derivatives();
    return loss.value();
}

LossBreakdown total_loss(double tcl_value, double scl_value, double pcl_value, const LossWeights& w) {
    LossBreakdown out;
    out.tcl = tcl_value;
    out.scl = scl_value;
    out.pcl = pcl_value;
    out.alpha = w.alpha();
    out.beta = w.beta();
    out.total = out.tcl + out.alpha * out.scl + out.beta * out.pcl;
    out.grad_alpha_raw = out.scl * sigmoid(w.alpha_raw);
    out.grad_beta_raw = out.pcl * sigmoid(w.beta_raw);
    return out;
}

}  // namespace speedtrack::losses
