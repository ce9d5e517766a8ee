#pragma once

#include "speedtrack/association.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace speedtrack::io {

/// KITTI object types in a fixed order; the index is the class id.
const std::vector<std::string>& class_names();
/// Unknown names throw FormatError. "DontCare" maps to -1.
int class_id(const std::string& name);
const std::string& class_name(int id);

/// One row of a KITTI tracking label (or result) file, with the box already
/// converted to center layout: 2D [cx, cy, w, h] from the bbox columns,
/// 3D [x, y, z, w, h, l] from location and dimensions.
struct LabelRow {
    int frame = 0;
    int track_id = -1;
    std::string type;
    int class_id = 0;  ///< -1 for DontCare
    double truncated = 0.0;
    int occluded = 0;
    double alpha = -10.0;
    Box box;
    double rotation_y = 0.0;
    std::optional<double> score;

    bool dont_care() const { return class_id < 0; }
};

/// Parses KITTI tracking label rows (17 columns, or 18 with a trailing
/// score). `state_dim` 8 reads the 2D bbox, 12 the 3D location/dimensions.
std::vector<LabelRow> parse_kitti_tracking_labels(const std::filesystem::path& path, int state_dim = 8);
std::vector<LabelRow> parse_kitti_tracking_text(const std::string& text, int state_dim = 8);

/// Writes rows in the 18-column submission layout, sorted by (frame, track id).
/// 2D rows carry the bbox; 3D rows carry dimensions h w l and location.
std::string format_kitti_rows(std::vector<LabelRow> rows, int state_dim);
void write_kitti_rows(const std::vector<LabelRow>& rows, const std::filesystem::path& path, int state_dim);

struct SpeedSeries {
    std::vector<double> kmh;
    std::vector<bool> held;  ///< value copied from the previous frame (missing input)
};

/// One km/h value per line. Empty, "nan" or "-" lines are missing and take
/// the previous value; a missing first value becomes 0. When `expected_frames`
/// is nonzero the line count must match it.
SpeedSeries parse_speed_text(const std::string& text, std::size_t expected_frames = 0);
SpeedSeries parse_speed_file(const std::filesystem::path& path, std::size_t expected_frames = 0);

/// KITTI oxts: one file per frame or one row per frame; speed from the north
/// and east velocities (0-based columns 6 and 7), √(vn²+ve²)·3.6.
double oxts_speed_kmh(const std::string& row);
SpeedSeries parse_oxts_text(const std::string& text, std::size_t expected_frames = 0);

enum class PerturbMode { Relative, PureNoise };

/// Relative: v·(1 + σ·n); pure noise: v·n; n ~ 𝒩(0,1) per frame; negatives
/// become 0. Deterministic for a given seed.
std::vector<double> perturb_speed(const std::vector<double>& kmh, PerturbMode mode, double sigma,
                                  std::uint64_t seed);

/// (frame, ground-truth track id) → embedding.
using EmbeddingTable = std::map<std::pair<int, int>, Eigen::VectorXd>;

/// "frame gt_id f1 … fd" per line; every line must have the same d.
EmbeddingTable parse_embeddings_text(const std::string& text);
std::string format_embeddings(const EmbeddingTable& table);

/// Everything one sequence needs: detections, speeds, and optionally GT.
struct SequenceBundle {
    std::string id;
    int n_frames = 0;
    int state_dim = 8;
    double image_width = 1242.0;   ///< 2D only
    double image_height = 375.0;
    double scene_extent = 100.0;   ///< 3D only, meters
    std::string source = "file";
    std::vector<std::vector<Detection>> detections;  ///< per frame
    std::vector<std::vector<LabelRow>> gt;           ///< per frame; empty when has_gt is false
    bool has_gt = false;
    SpeedSeries speed;
    EmbeddingTable embeddings;

    /// Normalizer for TCL centers: the image diagonal in 2D, 10 m in 3D.
    double center_scale() const;
    void validate() const;
};

/// Detections as jsonl: {"frame", "class", "score", "box", "embedding"?}.
std::vector<Detection> parse_detections_jsonl(const std::string& text, int state_dim);
std::string format_detections_jsonl(const std::vector<std::vector<Detection>>& per_frame);

/// Directory layout: meta.json, detections.jsonl, speed.txt (or oxts.txt),
/// gt.txt and embeddings.txt when present. An explicit speed.txt wins over oxts.
SequenceBundle read_bundle(const std::filesystem::path& dir);
void write_bundle(const SequenceBundle& bundle, const std::filesystem::path& dir);

/// One tracker output row; box in center layout.
struct ResultRow {
    int frame = 0;
    int track_id = 0;
    int class_id = 0;
    Box box;
    double score = 1.0;

    bool operator==(const ResultRow&) const = default;
};

enum class ResultFormat { Kitti, Jsonl };

std::string format_results(std::vector<ResultRow> rows, ResultFormat fmt, int state_dim);
void write_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path,
                   ResultFormat fmt, int state_dim);
std::vector<ResultRow> parse_results_jsonl(const std::string& text);
/// Reads either format, chosen by extension (.jsonl or anything else as KITTI).
std::vector<ResultRow> read_results(const std::filesystem::path& path, int state_dim);

std::string read_text(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: truncate then write; throws IoError.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace speedtrack::io
