#pragma once

#include "speedtrack/association.hpp"
#include "speedtrack/io_formats.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace speedtrack::metrics {

struct EvalObject {
    int id = 0;
    int class_id = 0;
    Box box;
};

struct EvalFrame {
    int frame = 0;
    double speed = 0.0;
    std::vector<EvalObject> gt;
    std::vector<EvalObject> pred;
    std::vector<Box> ignore;  ///< DontCare regions
};

/// Joins results and a bundle's GT into per-frame evaluation input. Result
/// rows outside the sequence are rejected with FormatError.
std::vector<EvalFrame> make_frames(const io::SequenceBundle& bundle, const std::vector<io::ResultRow>& results);

/// Drops predictions that match no GT (IoU ≥ 0.5) but lie mostly
/// (intersection over prediction area ≥ 0.5) inside an ignore region.
void apply_ignore_regions(std::vector<EvalFrame>& frames);

/// {0.05, 0.10, …, 0.95}.
std::vector<double> default_alphas();

/// Raw per-α sums for one or more sequences; adding counts combines sequences.
struct HotaCounts {
    double alpha = 0.0;
    double tp = 0.0;
    double fn = 0.0;
    double fp = 0.0;
    double ass_a_sum = 0.0;   ///< Σ over TPs of the pair's association accuracy
    double ass_re_sum = 0.0;
    double ass_pr_sum = 0.0;
    double loc_sum = 0.0;     ///< Σ IoU of TPs
};

struct EvalCounts {
    std::vector<HotaCounts> hota;
    double clear_tp = 0.0;
    double clear_fn = 0.0;
    double clear_fp = 0.0;
    double idsw = 0.0;
    double motp_sum = 0.0;
    double num_gt = 0.0;
    double num_pred = 0.0;

    EvalCounts& operator+=(const EvalCounts& o);
};

struct AlphaScores {
    double alpha = 0.0;
    double hota = 0.0, deta = 0.0, assa = 0.0, detre = 0.0, detpr = 0.0, assre = 0.0, asspr = 0.0, loca = 0.0;
};

/// Percentages except IDSW (a count).
struct EvalReport {
    double hota = 0.0, deta = 0.0, assa = 0.0, detre = 0.0, detpr = 0.0, assre = 0.0, asspr = 0.0, loca = 0.0;
    double mota = 0.0;  ///< may be negative
    double motp = 0.0;
    int idsw = 0;
    int num_gt = 0;
    int num_pred = 0;
    bool vacuous = false;  ///< no GT and no predictions: every score is 100 by convention
    std::vector<AlphaScores> per_alpha;
};

/// HOTA: identities are aligned globally, then each α matches pairs with
/// IoU ≥ α maximising Σ A(g,p)·IoU. CLEAR: IoU ≥ 0.5 with preference for
/// the previous frame's pairs. Cross-class pairs never match.
EvalCounts count_sequence(std::span<const EvalFrame> frames, std::span<const double> alphas);
EvalReport summarize(const EvalCounts& counts);
EvalReport evaluate(std::span<const EvalFrame> frames);
EvalReport evaluate(std::span<const EvalFrame> frames, std::span<const double> alphas);

struct BucketStats {
    double center = 0.0;
    double half_width = 5.0;
    int frames = 0;
    int matches = 0;
    double iou_sum = 0.0;
    int idsw = 0;

    bool populated() const { return matches > 0; }
    std::optional<double> mean_iou() const;
    /// ID switches per matched pair.
    std::optional<double> idsw_rate() const;
};

std::vector<double> default_bucket_centers(int state_dim = 8);

/// Frames with |speed − center| ≤ half_width fall in a bucket. Matches and
/// ID switches come from the CLEAR matching of the whole sequence.
std::vector<BucketStats> speed_buckets(std::span<const EvalFrame> frames, std::span<const double> centers,
                                       double half_width = 5.0);
void add_buckets(std::vector<BucketStats>& into, const std::vector<BucketStats>& more);

std::string report_json(const EvalReport& r);
std::string report_text(const EvalReport& r);
/// center,frames,matches,mean_iou,idsw,idsw_rate; absent values are empty.
std::string buckets_csv(const std::vector<BucketStats>& buckets);

}  // namespace speedtrack::metrics
