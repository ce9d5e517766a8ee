#include "speedtrack/metrics.hpp"

#include "speedtrack/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

namespace speedtrack::metrics {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd similarity(const EvalFrame& f) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<long>(f.gt.size()), static_cast<long>(f.pred.size()));
    for (std::size_t i = 0; i < f.gt.size(); ++i) {
        for (std::size_t j = 0; j < f.pred.size(); ++j) {
            if (f.gt[i].class_id == f.pred[j].class_id) {
                s(static_cast<long>(i), static_cast<long>(j)) = box_iou(f.gt[i].box, f.pred[j].box);
            }
        }
    }
    return s;
}

// Maximum-weight matching over allowed pairs; unmatched rows and columns cost nothing.
std::vector<std::pair<int, int>> max_weight_matching(const Eigen::MatrixXd& weight,
                                                      const Eigen::Array<bool, -1, -1>& allowed) {
    const int n = static_cast<int>(weight.rows());
    const int m = static_cast<int>(weight.cols());
    std::vector<std::pair<int, int>> out;
    if (n == 0 || m == 0 || !allowed.any()) {
        return out;
    }
    Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(n + m, n + m);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            cost(i, j) = allowed(i, j) ? -weight(i, j) : kInf;
        }
    }
    const auto assign = min_cost_assignment(cost);
    for (int i = 0; i < n; ++i) {
        if (assign[static_cast<std::size_t>(i)] < m) {
            out.emplace_back(i, assign[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

std::map<int, int> index_ids(std::span<const EvalFrame> frames, bool gt_side) {
    std::map<int, int> ids;
    for (const auto& f : frames) {
        for (const auto& o : gt_side ? f.gt : f.pred) {
            ids.emplace(o.id, 0);
        }
    }
    int k = 0;
    for (auto& [id, idx] : ids) {
        idx = k++;
    }
    return ids;
}

void check_unique(const std::vector<EvalObject>& objs, int frame) {
    for (std::size_t i = 0; i < objs.size(); ++i) {
        for (std::size_t j = i + 1; j < objs.size(); ++j) {
            if (objs[i].id == objs[j].id) {
                throw FormatError("duplicate id " + std::to_string(objs[i].id) + " in frame " + std::to_string(frame));
            }
        }
    }
}

// CLEAR matching of one sequence; reports per-frame (iou list, idsw count).
struct ClearFrame {
    std::vector<double> ious;
    int idsw = 0;
};

std::vector<ClearFrame> clear_matching(std::span<const EvalFrame> frames) {
    std::map<int, int> last_pred;       // gt id → last matched pred id
    std::map<int, int> prev_step_pred;  // gt id → pred id matched in the previous frame
    std::vector<ClearFrame> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        const Eigen::MatrixXd s = similarity(f);
        Eigen::MatrixXd w = s;
        Eigen::Array<bool, -1, -1> allowed = (s.array() >= 0.5 - kEps);
        for (std::size_t i = 0; i < f.gt.size(); ++i) {
            const auto it = prev_step_pred.find(f.gt[i].id);
            if (it == prev_step_pred.end()) {
                continue;
            }
            for (std::size_t j = 0; j < f.pred.size(); ++j) {
                if (f.pred[j].id == it->second) {
                    w(static_cast<long>(i), static_cast<long>(j)) += 1000.0;
                }
            }
        }
        ClearFrame cf;
        std::map<int, int> this_step;
        for (auto [i, j] : max_weight_matching(w, allowed)) {
            const int gid = f.gt[static_cast<std::size_t>(i)].id;
            const int pid = f.pred[static_cast<std::size_t>(j)].id;
            cf.ious.push_back(s(i, j));
            const auto it = last_pred.find(gid);
            if (it != last_pred.end() && it->second != pid) {
                cf.idsw += 1;
            }
            last_pred[gid] = pid;
            this_step[gid] = pid;
        }
        prev_step_pred = std::move(this_step);
        out.push_back(std::move(cf));
    }
    return out;
}

}  // namespace

std::vector<EvalFrame> make_frames(const io::SequenceBundle& bundle, const std::vector<io::ResultRow>& results) {
    if (!bundle.has_gt) {
        throw IoError("bundle '" + bundle.id + "' has no ground truth to evaluate against");
    }
    std::vector<EvalFrame> frames(static_cast<std::size_t>(bundle.n_frames));
    for (int t = 0; t < bundle.n_frames; ++t) {
        auto& f = frames[static_cast<std::size_t>(t)];
        f.frame = t;
        f.speed = bundle.speed.kmh[static_cast<std::size_t>(t)];
        for (const auto& g : bundle.gt[static_cast<std::size_t>(t)]) {
            if (g.dont_care()) {
                f.ignore.push_back(g.box);
            } else {
                f.gt.push_back(EvalObject{g.track_id, g.class_id, g.box});
            }
        }
    }
    for (const auto& r : results) {
        if (r.frame < 0 || r.frame >= bundle.n_frames) {
            throw FormatError("result row for frame " + std::to_string(r.frame) + " outside sequence '" +
                              bundle.id + "'");
        }
        if (r.box.size() != bundle.state_dim / 2) {
            throw ShapeError("result box dimension does not match the sequence");
        }
        frames[static_cast<std::size_t>(r.frame)].pred.push_back(EvalObject{r.track_id, r.class_id, r.box});
    }
    return frames;
}

void apply_ignore_regions(std::vector<EvalFrame>& frames) {
    for (auto& f : frames) {
        if (f.ignore.empty() || f.pred.empty()) {
            continue;
        }
        const Eigen::MatrixXd s = similarity(f);
        std::vector<char> keep(f.pred.size(), 0);
        for (auto [i, j] : max_weight_matching(s, s.array() >= 0.5 - kEps)) {
            (void)i;
            keep[static_cast<std::size_t>(j)] = 1;
        }
        std::vector<EvalObject> kept;
        for (std::size_t j = 0; j < f.pred.size(); ++j) {
            bool drop = false;
            if (!keep[j]) {
                const Box& p = f.pred[j].box;
                const int n = static_cast<int>(p.size()) / 2;
                for (const auto& region : f.ignore) {
                    double inter = 1.0;
                    double area = 1.0;
                    for (int k = 0; k < n; ++k) {
                        const double lo = std::max(p[k] - 0.5 * p[n + k], region[k] - 0.5 * region[n + k]);
                        const double hi = std::min(p[k] + 0.5 * p[n + k], region[k] + 0.5 * region[n + k]);
                        inter *= std::max(0.0, hi - lo);
                        area *= p[n + k];
                    }
                    if (area > 0.0 && inter / area >= 0.5) {
                        drop = true;
                        break;
                    }
                }
            }
            if (!drop) {
                kept.push_back(f.pred[j]);
            }
        }
        f.pred = std::move(kept);
    }
}

std::vector<double> default_alphas() {
    std::vector<double> a;
    for (int k = 1; k <= 19; ++k) {
        a.push_back(0.05 * k);
    }
    return a;
}

EvalCounts& EvalCounts::operator+=(const EvalCounts& o) {
    if (hota.empty()) {
        hota = o.hota;
        for (auto& h : hota) {
            h = HotaCounts{h.alpha};
        }
    }
    if (hota.size() != o.hota.size()) {
        throw ShapeError("cannot combine counts over different alpha sets");
    }
    for (std::size_t k = 0; k < hota.size(); ++k) {
        auto& a = hota[k];
        const auto& b = o.hota[k];
        a.tp += b.tp;
        a.fn += b.fn;
        a.fp += b.fp;
        a.ass_a_sum += b.ass_a_sum;
        a.ass_re_sum += b.ass_re_sum;
        a.ass_pr_sum += b.ass_pr_sum;
        a.loc_sum += b.loc_sum;
    }
    clear_tp += o.clear_tp;
    clear_fn += o.clear_fn;
    clear_fp += o.clear_fp;
    idsw += o.idsw;
    motp_sum += o.motp_sum;
    num_gt += o.num_gt;
    num_pred += o.num_pred;
    return *this;
}

EvalCounts count_sequence(std::span<const EvalFrame> frames, std::span<const double> alphas) {
    EvalCounts c;
    for (double a : alphas) {
        if (!(a > 0.0 && a <= 1.0)) {
            throw ConfigError("HOTA thresholds must lie in (0, 1]");
        }
        c.hota.push_back(HotaCounts{a});
    }
    for (const auto& f : frames) {
        check_unique(f.gt, f.frame);
        check_unique(f.pred, f.frame);
        c.num_gt += static_cast<double>(f.gt.size());
        c.num_pred += static_cast<double>(f.pred.size());
    }

    const auto gt_ids = index_ids(frames, true);
    const auto pr_ids = index_ids(frames, false);
    const long ng = static_cast<long>(gt_ids.size());
    const long np = static_cast<long>(pr_ids.size());

    // Global alignment between identities.
    Eigen::MatrixXd potential = Eigen::MatrixXd::Zero(ng, np);
    Eigen::VectorXd gt_count = Eigen::VectorXd::Zero(ng);
    Eigen::VectorXd pr_count = Eigen::VectorXd::Zero(np);
    std::vector<Eigen::MatrixXd> sims;
    sims.reserve(frames.size());
    for (const auto& f : frames) {
        sims.push_back(similarity(f));
        const auto& s = sims.back();
        for (const auto& g : f.gt) {
            gt_count[gt_ids.at(g.id)] += 1.0;
        }
        for (const auto& p : f.pred) {
            pr_count[pr_ids.at(p.id)] += 1.0;
        }
        if (s.size() == 0) {
            continue;
        }
        const Eigen::VectorXd row_sum = s.rowwise().sum();
        const Eigen::RowVectorXd col_sum = s.colwise().sum();
        for (long i = 0; i < s.rows(); ++i) {
            for (long j = 0; j < s.cols(); ++j) {
                const double denom = row_sum[i] + col_sum[j] - s(i, j);
                if (denom > kEps) {
                    potential(gt_ids.at(f.gt[static_cast<std::size_t>(i)].id),
                              pr_ids.at(f.pred[static_cast<std::size_t>(j)].id)) += s(i, j) / denom;
                }
            }
        }
    }
    Eigen::MatrixXd align = Eigen::MatrixXd::Zero(ng, np);
    for (long g = 0; g < ng; ++g) {
        for (long p = 0; p < np; ++p) {
            align(g, p) = potential(g, p) / (gt_count[g] + pr_count[p] - potential(g, p));
        }
    }

    std::vector<Eigen::MatrixXd> match_counts(alphas.size(), Eigen::MatrixXd::Zero(ng, np));
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const auto& f = frames[t];
        const auto& s = sims[t];
        const double n_gt = static_cast<double>(f.gt.size());
        const double n_pr = static_cast<double>(f.pred.size());
        Eigen::MatrixXd score(s.rows(), s.cols());
        for (long i = 0; i < s.rows(); ++i) {
            for (long j = 0; j < s.cols(); ++j) {
                score(i, j) = align(gt_ids.at(f.gt[static_cast<std::size_t>(i)].id),
                                    pr_ids.at(f.pred[static_cast<std::size_t>(j)].id)) *
                              s(i, j);
            }
        }
        for (std::size_t k = 0; k < alphas.size(); ++k) {
            auto& h = c.hota[k];
            const Eigen::Array<bool, -1, -1> allowed = (s.array() >= alphas[k] - kEps) && (s.array() > 0.0);
            const auto matches = max_weight_matching(score, allowed);
            h.tp += static_cast<double>(matches.size());
            h.fn += n_gt - static_cast<double>(matches.size());
            h.fp += n_pr - static_cast<double>(matches.size());
            for (auto [i, j] : matches) {
                h.loc_sum += s(i, j);
                match_counts[k](gt_ids.at(f.gt[static_cast<std::size_t>(i)].id),
                                pr_ids.at(f.pred[static_cast<std::size_t>(j)].id)) += 1.0;
            }
        }
    }
    for (std::size_t k = 0; k < alphas.size(); ++k) {
        const auto& mc = match_counts[k];
        auto& h = c.hota[k];
        for (long g = 0; g < ng; ++g) {
            for (long p = 0; p < np; ++p) {
                const double m = mc(g, p);
                if (m <= 0.0) {
                    continue;
                }
                h.ass_a_sum += m * m / (gt_count[g] + pr_count[p] - m);
                h.ass_re_sum += m * m / gt_count[g];
                h.ass_pr_sum += m * m / pr_count[p];
            }
        }
    }

    for (const auto& cf : clear_matching(frames)) {
        c.clear_tp += static_cast<double>(cf.ious.size());
        c.idsw += cf.idsw;
        for (double v : cf.ious) {
            c.motp_sum += v;
        }
    }
    c.clear_fn = c.num_gt - c.clear_tp;
    c.clear_fp = c.num_pred - c.clear_tp;
    return c;
}

EvalReport summarize(const EvalCounts& c) {
    EvalReport r;
    r.num_gt = static_cast<int>(c.num_gt);
    r.num_pred = static_cast<int>(c.num_pred);
    r.idsw = static_cast<int>(c.idsw);
    if (c.num_gt == 0.0 && c.num_pred == 0.0) {
        r.vacuous = true;
        r.hota = r.deta = r.assa = r.detre = r.detpr = r.assre = r.asspr = r.loca = 100.0;
        r.mota = r.motp = 100.0;
        for (const auto& h : c.hota) {
            r.per_alpha.push_back(AlphaScores{h.alpha, 100, 100, 100, 100, 100, 100, 100, 100});
        }
        return r;
    }
    for (const auto& h : c.hota) {
        AlphaScores a;
        a.alpha = h.alpha;
        const double tp1 = std::max(1.0, h.tp);
        a.detre = h.tp / std::max(1.0, h.tp + h.fn);
        a.detpr = h.tp / std::max(1.0, h.tp + h.fp);
        a.deta = h.tp / std::max(1.0, h.tp + h.fn + h.fp);
        a.assa = h.ass_a_sum / tp1;
        a.assre = h.ass_re_sum / tp1;
        a.asspr = h.ass_pr_sum / tp1;
        a.loca = h.tp > 0.0 ? h.loc_sum / h.tp : 0.0;
        a.hota = std::sqrt(a.deta * a.assa);
        r.per_alpha.push_back(a);
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, r.per_alpha.size()));
    for (const auto& a : r.per_alpha) {
        r.hota += a.hota / n;
        r.deta += a.deta / n;
        r.assa += a.assa / n;
        r.detre += a.detre / n;
        r.detpr += a.detpr / n;
        r.assre += a.assre / n;
        r.asspr += a.asspr / n;
        r.loca += a.loca / n;
    }
    for (double* v : {&r.hota, &r.deta, &r.assa, &r.detre, &r.detpr, &r.assre, &r.asspr, &r.loca}) {
        *v *= 100.0;
    }
    for (auto& a : r.per_alpha) {
        for (double* v : {&a.hota, &a.deta, &a.assa, &a.detre, &a.detpr, &a.assre, &a.asspr, &a.loca}) {
            *v *= 100.0;
        }
    }
    r.mota = c.num_gt > 0.0 ? 100.0 * (c.clear_tp - c.clear_fp - c.idsw) / c.num_gt : 0.0;
    r.motp = c.clear_tp > 0.0 ? 100.0 * c.motp_sum / c.clear_tp : 0.0;
    return r;
}

EvalReport evaluate(std::span<const EvalFrame> frames, std::span<const double> alphas) {
    return summarize(count_sequence(frames, alphas));
}

EvalReport evaluate(std::span<const EvalFrame> frames) {
    const auto alphas = default_alphas();
    return evaluate(frames, alphas);
}

std::optional<double> BucketStats::mean_iou() const {
    if (matches == 0) {
        return std::nullopt;
    }
    return iou_sum / matches;
}

std::optional<double> BucketStats::idsw_rate() const {
    if (matches == 0) {
        return std::nullopt;
    }
    return static_cast<double>(idsw) / matches;
}

std::vector<double> default_bucket_centers(int state_dim) {
    return state_dim == 12 ? std::vector<double>{0, 15, 25, 35} : std::vector<double>{0, 20, 40, 60};
}

std::vector<BucketStats> speed_buckets(std::span<const EvalFrame> frames, std::span<const double> centers,
                                       double half_width) {
    if (!(half_width >= 0.0)) {
        throw ConfigError("bucket half width must be nonnegative");
    }
    std::vector<BucketStats> out;
    for (double c : centers) {
        out.push_back(BucketStats{c, half_width});
    }
    const auto clear = clear_matching(frames);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        for (auto& b : out) {
            if (std::abs(frames[t].speed - b.center) <= half_width) {
                b.frames += 1;
                b.matches += static_cast<int>(clear[t].ious.size());
                for (double v : clear[t].ious) {
                    b.iou_sum += v;
                }
                b.idsw += clear[t].idsw;
            }
        }
    }
    return out;
}

void add_buckets(std::vector<BucketStats>& into, const std::vector<BucketStats>& more) {
    if (into.empty()) {
        into = more;
        return;
    }
    if (into.size() != more.size()) {
        throw ShapeError("cannot combine different bucket sets");
    }
    for (std::size_t k = 0; k < into.size(); ++k) {
        into[k].frames += more[k].frames;
        into[k].matches += more[k].matches;
        into[k].iou_sum += more[k].iou_sum;
        into[k].idsw += more[k].idsw;
    }
}

std::string report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["HOTA"] = r.hota;
    j["DetA"] = r.deta;
    j["AssA"] = r.assa;
    j["DetRe"] = r.detre;
    j["DetPr"] = r.detpr;
    j["AssRe"] = r.assre;
    j["AssPr"] = r.asspr;
    j["LocA"] = r.loca;
    j["MOTA"] = r.mota;
    j["MOTP"] = r.motp;
    j["IDSW"] = r.idsw;
    j["num_gt"] = r.num_gt;
    j["num_pred"] = r.num_pred;
    j["vacuous"] = r.vacuous;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& a : r.per_alpha) {
        arr.push_back({{"alpha", a.alpha}, {"HOTA", a.hota}, {"DetA", a.deta}, {"AssA", a.assa}, {"LocA", a.loca}});
    }
    j["per_alpha"] = arr;
    return j.dump(2) + "\n";
}

std::string report_text(const EvalReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%-8s%-8s%-8s%-8s%-8s%-8s%-8s%-8s%-9s%-8s%s\n"
                  "%-8.3f%-8.3f%-8.3f%-8.3f%-8.3f%-8.3f%-8.3f%-8.3f%-9.3f%-8.3f%d\n",
                  "HOTA", "DetA", "AssA", "DetRe", "DetPr", "AssRe", "AssPr", "LocA", "MOTA", "MOTP", "IDSW",
                  r.hota, r.deta, r.assa, r.detre, r.detpr, r.assre, r.asspr, r.loca, r.mota, r.motp, r.idsw);
    std::string s = buf;
    if (r.vacuous) {
        s += "(no ground truth and no predictions: scores are vacuous)\n";
    }
    return s;
}

std::string buckets_csv(const std::vector<BucketStats>& buckets) {
    std::string out = "center,frames,matches,mean_iou,idsw,idsw_rate\n";
    char buf[256];
    for (const auto& b : buckets) {
        std::snprintf(buf, sizeof buf, "%g,%d,%d,", b.center, b.frames, b.matches);
        out += buf;
        if (auto m = b.mean_iou()) {
            std::snprintf(buf, sizeof buf, "%.6f", *m);
            out += buf;
        }
        out += "," + std::to_string(b.idsw) + ",";
        if (auto r = b.idsw_rate()) {
            std::snprintf(buf, sizeof buf, "%.6f", *r);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

}  // namespace speedtrack::metrics
