#include "speedtrack/association.hpp"

#include "speedtrack/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace speedtrack {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double iou_nd(std::span<const double> a, std::span<const double> b, std::size_t n) {
    if (a.size() != 2 * n || b.size() != 2 * n) {
        throw ShapeError("iou: box has the wrong number of components");
    }
    double inter = 1.0;
    double vol_a = 1.0;
    double vol_b = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double lo = std::max(a[k] - 0.5 * a[n + k], b[k] - 0.5 * b[n + k]);
        const double hi = std::min(a[k] + 0.5 * a[n + k], b[k] + 0.5 * b[n + k]);
        inter *= std::max(0.0, hi - lo);
        vol_a *= a[n + k];
        vol_b *= b[n + k];
    }
    const double uni = vol_a + vol_b - inter;
    if (!(uni > 0.0)) {
        return 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace

double iou_2d(std::span<const double> a, std::span<const double> b) { return iou_nd(a, b, 2); }

double iou_3d(std::span<const double> a, std::span<const double> b) { return iou_nd(a, b, 3); }

double box_iou(const Box& a, const Box& b) {
    const std::span<const double> sa(a.data(), static_cast<std::size_t>(a.size()));
    const std::span<const double> sb(b.data(), static_cast<std::size_t>(b.size()));
    return a.size() == 6 ? iou_3d(sa, sb) : iou_2d(sa, sb);
}

std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost_in) {
    const int rows = static_cast<int>(cost_in.rows());
    const int cols = static_cast<int>(cost_in.cols());
    if (rows == 0 || cols == 0) {
        return std::vector<int>(rows, -1);
    }
    if (rows > cols) {
        const auto col_to_row = min_cost_assignment(cost_in.transpose());
        std::vector<int> row_to_col(rows, -1);
        for (int j = 0; j < cols; ++j) {
            row_to_col[col_to_row[j]] = j;
        }
        return row_to_col;
    }

    // Forbidden entries become a cost larger than any feasible assignment.
    double finite_max = 0.0;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const double c = cost_in(i, j);
            if (std::isnan(c) || c == -kInf) {
                throw NumericError("assignment cost matrix contains NaN or -inf");
            }
            if (c != kInf) {
                finite_max = std::max(finite_max, std::abs(c));
            }
        }
    }
    const double big = (finite_max + 1.0) * (rows + 1) * 4.0;
    Eigen::MatrixXd cost = cost_in;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            if (cost(i, j) == kInf) {
                cost(i, j) = big;
            }
        }
    }

    // Shortest augmenting paths with row/column potentials, 1-based.
    std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
    std::vector<int> p(cols + 1, 0), way(cols + 1, 0);
    for (int i = 1; i <= rows; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(cols + 1, kInf);
        std::vector<char> used(cols + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= cols; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= cols; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(rows, -1);
    for (int j = 1; j <= cols; ++j) {
        if (p[j] != 0) {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    for (int i = 0; i < rows; ++i) {
        if (cost_in(i, row_to_col[i]) == kInf) {
            throw NumericError("assignment infeasible: every complete matching uses a forbidden pair");
        }
    }
    return row_to_col;
}

AssociationResult solve_assignment(const CostMatrix& cost, double max_cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    if (!cost.allFinite()) {
        throw NumericError("assignment costs must be finite");
    }

    std::vector<int> row_to_col(n, -1);
    if (n > 0 && m > 0) {
        if (std::isinf(max_cost) && max_cost > 0) {
            row_to_col = min_cost_assignment(cost);
        } else {
            // Pad with dummy rows/columns: leaving a row or column unmatched
            // costs max_cost/2, dummies pair with each other for free.
            const int size = n + m;
            Eigen::MatrixXd ext = Eigen::MatrixXd::Zero(size, size);
            const double half = 0.5 * max_cost;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < m; ++j) {
                    ext(i, j) = cost(i, j) <= max_cost ? cost(i, j) : kInf;
                }
            }
            ext.topRightCorner(n, n).setConstant(half);
            ext.bottomLeftCorner(m, m).setConstant(half);
            const auto assign = min_cost_assignment(ext);
            for (int i = 0; i < n; ++i) {
                if (assign[i] < m) {
                    row_to_col[i] = assign[i];
                }
            }
        }
    }

    AssociationResult out;
    std::vector<char> det_used(m, 0);
    for (int i = 0; i < n; ++i) {
        if (row_to_col[i] >= 0) {
            out.matches.emplace_back(i, row_to_col[i]);
            det_used[row_to_col[i]] = 1;
        } else {
            out.unmatched_tracks.push_back(i);
        }
    }
    for (int j = 0; j < m; ++j) {
        if (!det_used[j]) {
            out.unmatched_detections.push_back(j);
        }
    }
    return out;
}

void AssociationConfig::validate() const {
    if (!(tau_low <= tau_high) || tau_low < 0.0 || tau_high > 1.0) {
        throw ConfigError("association thresholds need 0 <= tau_low <= tau_high <= 1");
    }
    if (!(gate_stage1 >= 0.0) || !(gate_stage2 >= 0.0)) {
        throw ConfigError("association gates must be nonnegative");
    }
}

CostMatrix iou_cost(std::span<const TrackBox> tracks, std::span<const Detection> dets,
                    std::span<const int> det_indices, bool class_aware) {
    CostMatrix cost(static_cast<Eigen::Index>(tracks.size()),
                    static_cast<Eigen::Index>(det_indices.size()));
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        for (std::size_t j = 0; j < det_indices.size(); ++j) {
            const auto& det = dets[static_cast<std::size_t>(det_indices[j])];
            double c = 1.0;
            if (!class_aware || det.class_id == tracks[i].class_id) {
                c = 1.0 - box_iou(tracks[i].box, det.box);
            }
            cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c;
        }
    }
    return cost;
}

TwoStageResult two_stage_associate(std::span<const TrackBox> tracks,
                                   std::span<const Detection> dets,
                                   const AssociationConfig& cfg) {
    cfg.validate();
    TwoStageResult out;

    std::vector<int> high;
    std::vector<int> low;
    for (int j = 0; j < static_cast<int>(dets.size()); ++j) {
        const double s = dets[static_cast<std::size_t>(j)].score;
        if (s >= cfg.tau_high) {
            high.push_back(j);
        } else if (s >= cfg.tau_low) {
            low.push_back(j);
        } else {
            out.discarded.push_back(j);
        }
    }

    const auto first = solve_assignment(iou_cost(tracks, dets, high, cfg.class_aware), cfg.gate_stage1);
    for (auto [ti, dj] : first.matches) {
        out.stage1.matches.emplace_back(ti, high[static_cast<std::size_t>(dj)]);
    }
    for (int dj : first.unmatched_detections) {
        out.stage1.unmatched_detections.push_back(high[static_cast<std::size_t>(dj)]);
        out.new_track_candidates.push_back(high[static_cast<std::size_t>(dj)]);
    }
    out.stage1.unmatched_tracks = first.unmatched_tracks;

    std::vector<TrackBox> leftover;
    leftover.reserve(first.unmatched_tracks.size());
    for (int ti : first.unmatched_tracks) {
        leftover.push_back(tracks[static_cast<std::size_t>(ti)]);
    }
    const auto second = solve_assignment(iou_cost(leftover, dets, low, cfg.class_aware), cfg.gate_stage2);
    for (auto [li, dj] : second.matches) {
        out.stage2.matches.emplace_back(first.unmatched_tracks[static_cast<std::size_t>(li)],
                                        low[static_cast<std::size_t>(dj)]);
    }
    for (int li : second.unmatched_tracks) {
        out.stage2.unmatched_tracks.push_back(first.unmatched_tracks[static_cast<std::size_t>(li)]);
    }
    for (int dj : second.unmatched_detections) {
        out.stage2.unmatched_detections.push_back(low[static_cast<std::size_t>(dj)]);
        out.discarded.push_back(low[static_cast<std::size_t>(dj)]);
    }
    std::sort(out.discarded.begin(), out.discarded.end());
    return out;
}

}  // namespace speedtrack
