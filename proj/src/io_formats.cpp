#include "speedtrack/io_formats.hpp"

#include "speedtrack/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace speedtrack::io {

using nlohmann::json;

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) {
        out.push_back(tok);
    }
    return out;
}

double to_double(const std::string& s, int line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw FormatError("trailing characters in number '" + s + "'", line);
        }
        return v;
    } catch (const std::invalid_argument&) {
        throw FormatError("expected a number, got '" + s + "'", line);
    } catch (const std::out_of_range&) {
        throw FormatError("number out of range: '" + s + "'", line);
    }
}

int to_int(const std::string& s, int line) {
    const double v = to_double(s, line);
    if (v != std::floor(v) || std::abs(v) > 2e9) {
        throw FormatError("expected an integer, got '" + s + "'", line);
    }
    return static_cast<int>(v);
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        out.push_back(line);
    }
    return out;
}

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

Box box_from_json(const json& j, int state_dim, int line) {
    if (!j.is_array() || static_cast<int>(j.size()) != state_dim / 2) {
        throw FormatError("box must be an array of " + std::to_string(state_dim / 2) + " numbers", line);
    }
    Box b(state_dim / 2);
    for (int k = 0; k < b.size(); ++k) {
        b[k] = j[static_cast<std::size_t>(k)].get<double>();
    }
    return b;
}

json box_to_json(const Box& b) {
    json arr = json::array();
    for (int k = 0; k < b.size(); ++k) {
        arr.push_back(b[k]);
    }
    return arr;
}

}  // namespace

const std::vector<std::string>& class_names() {
    static const std::vector<std::string> names{"Car", "Pedestrian", "Cyclist", "Van",
                                                "Truck", "Person_sitting", "Tram", "Misc"};
    return names;
}

int class_id(const std::string& name) {
    if (name == "DontCare") {
        return -1;
    }
    const auto& names = class_names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
        throw FormatError("unknown object type '" + name + "'");
    }
    return static_cast<int>(it - names.begin());
}

const std::string& class_name(int id) {
    static const std::string dont_care = "DontCare";
    if (id < 0) {
        return dont_care;
    }
    const auto& names = class_names();
    if (id >= static_cast<int>(names.size())) {
        throw FormatError("class id out of range: " + std::to_string(id));
    }
    return names[static_cast<std::size_t>(id)];
}

std::vector<LabelRow> parse_kitti_tracking_text(const std::string& text, int state_dim) {
    if (state_dim != 8 && state_dim != 12) {
        throw ConfigError("state dimension must be 8 or 12");
    }
    std::vector<LabelRow> rows;
    int line_no = 0;
    for (const auto& line : lines_of(text)) {
        ++line_no;
        if (blank(line)) {
            continue;
        }
        const auto f = split_ws(line);
        if (f.size() != 17 && f.size() != 18) {
            throw FormatError("expected 17 or 18 fields, got " + std::to_string(f.size()), line_no);
        }
        LabelRow r;
        r.frame = to_int(f[0], line_no);
        r.track_id = to_int(f[1], line_no);
        r.type = f[2];
        try {
            r.class_id = class_id(r.type);
        } catch (const FormatError& e) {
            throw FormatError(e.what(), line_no);
        }
        r.truncated = to_double(f[3], line_no);
        r.occluded = to_int(f[4], line_no);
        r.alpha = to_double(f[5], line_no);
        double v[11];
        for (int k = 0; k < 11; ++k) {
            v[k] = to_double(f[static_cast<std::size_t>(6 + k)], line_no);
        }
        r.rotation_y = v[10];
        if (f.size() == 18) {
            r.score = to_double(f[17], line_no);
        }
        if (r.frame < 0) {
            throw FormatError("negative frame index", line_no);
        }
        if (state_dim == 8) {
            const double l = v[0], t = v[1], rr = v[2], b = v[3];
            if (!(rr > l) || !(b > t)) {
                throw FormatError("bbox needs left < right and top < bottom", line_no);
            }
            r.box = Box(4);
            r.box << 0.5 * (l + rr), 0.5 * (t + b), rr - l, b - t;
        } else {
            // dimensions are h w l, location x y z
            r.box = Box(6);
            r.box << v[7], v[8], v[9], v[5], v[4], v[6];
            if (!r.dont_care() && (r.box.tail(3).array() <= 0.0).any()) {
                throw FormatError("3D dimensions must be positive", line_no);
            }
        }
        if (!r.box.allFinite()) {
            throw FormatError("non-finite box", line_no);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<LabelRow> parse_kitti_tracking_labels(const std::filesystem::path& path, int state_dim) {
    try {
        return parse_kitti_tracking_text(read_text(path), state_dim);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string format_kitti_rows(std::vector<LabelRow> rows, int state_dim) {
    std::stable_sort(rows.begin(), rows.end(), [](const LabelRow& a, const LabelRow& b) {
        return a.frame != b.frame ? a.frame < b.frame : a.track_id < b.track_id;
    });
    std::string out;
    for (const auto& r : rows) {
        std::string line = std::to_string(r.frame) + " " + std::to_string(r.track_id) + " " +
                           (r.type.empty() ? class_name(r.class_id) : r.type) + " " +
                           fmt6(r.truncated) + " " + std::to_string(r.occluded) + " " + fmt6(r.alpha);
        if (state_dim == 8) {
            const Box& b = r.box;
            line += " " + fmt6(b[0] - 0.5 * b[2]) + " " + fmt6(b[1] - 0.5 * b[3]) + " " +
                    fmt6(b[0] + 0.5 * b[2]) + " " + fmt6(b[1] + 0.5 * b[3]);
            line += " -1.000000 -1.000000 -1.000000 -1000.000000 -1000.000000 -1000.000000";
        } else {
            const Box& b = r.box;
            line += " 0.000000 0.000000 0.000000 0.000000";
            line += " " + fmt6(b[4]) + " " + fmt6(b[3]) + " " + fmt6(b[5]) + " " + fmt6(b[0]) + " " +
                    fmt6(b[1]) + " " + fmt6(b[2]);
        }
        line += " " + fmt6(r.rotation_y);
        if (r.score) {
            line += " " + fmt6(*r.score);
        }
        out += line + "\n";
    }
    return out;
}

void write_kitti_rows(const std::vector<LabelRow>& rows, const std::filesystem::path& path, int state_dim) {
    write_text(path, format_kitti_rows(rows, state_dim));
}

SpeedSeries parse_speed_text(const std::string& text, std::size_t expected_frames) {
    SpeedSeries s;
    auto lines = lines_of(text);
    while (!lines.empty() && blank(lines.back()) && (expected_frames == 0 || lines.size() > expected_frames)) {
        lines.pop_back();
    }
    int line_no = 0;
    for (const auto& raw : lines) {
        ++line_no;
        const auto f = split_ws(raw);
        if (f.size() > 1) {
            throw FormatError("speed file holds one value per line", line_no);
        }
        if (f.empty() || f[0] == "nan" || f[0] == "NaN" || f[0] == "-") {
            s.kmh.push_back(s.kmh.empty() ? 0.0 : s.kmh.back());
            s.held.push_back(true);
            continue;
        }
        const double v = to_double(f[0], line_no);
        if (!std::isfinite(v) || v < 0.0) {
            throw FormatError("speed must be finite and nonnegative", line_no);
        }
        s.kmh.push_back(v);
        s.held.push_back(false);
    }
    if (expected_frames != 0 && s.kmh.size() != expected_frames) {
        throw FormatError("speed count " + std::to_string(s.kmh.size()) + " does not match " +
                          std::to_string(expected_frames) + " frames");
    }
    return s;
}

SpeedSeries parse_speed_file(const std::filesystem::path& path, std::size_t expected_frames) {
    try {
        return parse_speed_text(read_text(path), expected_frames);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

double oxts_speed_kmh(const std::string& row) {
    const auto f = split_ws(row);
    if (f.size() < 8) {
        throw FormatError("oxts row needs at least 8 fields");
    }
    const double vn = to_double(f[6], 0);
    const double ve = to_double(f[7], 0);
    return std::sqrt(vn * vn + ve * ve) * 3.6;
}

SpeedSeries parse_oxts_text(const std::string& text, std::size_t expected_frames) {
    SpeedSeries s;
    int line_no = 0;
    for (const auto& line : lines_of(text)) {
        ++line_no;
        if (blank(line)) {
            continue;
        }
        try {
            s.kmh.push_back(oxts_speed_kmh(line));
        } catch (const FormatError& e) {
            throw FormatError(e.what(), line_no);
        }
        s.held.push_back(false);
    }
    if (expected_frames != 0 && s.kmh.size() != expected_frames) {
        throw FormatError("oxts row count " + std::to_string(s.kmh.size()) + " does not match " +
                          std::to_string(expected_frames) + " frames");
    }
    return s;
}

std::vector<double> perturb_speed(const std::vector<double>& kmh, PerturbMode mode, double sigma,
                                  std::uint64_t seed) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
        throw ConfigError("perturbation sigma must be finite and nonnegative");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out;
    out.reserve(kmh.size());
    for (double v : kmh) {
        const double n = normal(rng);
        const double p = mode == PerturbMode::Relative ? v * (1.0 + sigma * n) : v * n;
        out.push_back(std::max(0.0, p));
    }
    return out;
}

EmbeddingTable parse_embeddings_text(const std::string& text) {
    EmbeddingTable table;
    long dim = -1;
    int line_no = 0;
    for (const auto& line : lines_of(text)) {
        ++line_no;
        if (blank(line)) {
            continue;
        }
        const auto f = split_ws(line);
        if (f.size() < 3) {
            throw FormatError("embedding row needs frame, id and at least one value", line_no);
        }
        const long d = static_cast<long>(f.size()) - 2;
        if (dim >= 0 && d != dim) {
            throw FormatError("embedding dimension changes between rows", line_no);
        }
        dim = d;
        Eigen::VectorXd v(d);
        for (long k = 0; k < d; ++k) {
            v[k] = to_double(f[static_cast<std::size_t>(k + 2)], line_no);
        }
        table[{to_int(f[0], line_no), to_int(f[1], line_no)}] = std::move(v);
    }
    return table;
}

std::string format_embeddings(const EmbeddingTable& table) {
    std::string out;
    for (const auto& [key, v] : table) {
        out += std::to_string(key.first) + " " + std::to_string(key.second);
        for (int k = 0; k < v.size(); ++k) {
            out += " " + fmt6(v[k]);
        }
        out += "\n";
    }
    return out;
}

double SequenceBundle::center_scale() const {
    if (state_dim == 12) {
        return 10.0;
    }
    return std::hypot(image_width, image_height);
}

void SequenceBundle::validate() const {
    if (state_dim != 8 && state_dim != 12) {
        throw ConfigError("bundle state dimension must be 8 or 12");
    }
    if (n_frames < 0 || static_cast<int>(detections.size()) != n_frames ||
        static_cast<int>(speed.kmh.size()) != n_frames) {
        throw FormatError("bundle '" + id + "': detections and speeds must cover every frame");
    }
    if (has_gt && static_cast<int>(gt.size()) != n_frames) {
        throw FormatError("bundle '" + id + "': ground truth must cover every frame");
    }
}

std::vector<Detection> parse_detections_jsonl(const std::string& text, int state_dim) {
    std::vector<Detection> dets;
    int line_no = 0;
    for (const auto& line : lines_of(text)) {
        ++line_no;
        if (blank(line)) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        try {
            Detection d;
            d.frame = j.at("frame").get<int>();
            const auto& cls = j.at("class");
            d.class_id = cls.is_string() ? class_id(cls.get<std::string>()) : cls.get<int>();
            d.score = j.value("score", 1.0);
            d.box = box_from_json(j.at("box"), state_dim, line_no);
            if (j.contains("embedding") && !j["embedding"].is_null()) {
                const auto& e = j["embedding"];
                Eigen::VectorXd v(static_cast<long>(e.size()));
                for (std::size_t k = 0; k < e.size(); ++k) {
                    v[static_cast<long>(k)] = e[k].get<double>();
                }
                d.embedding = std::move(v);
            }
            if (d.frame < 0 || !(d.score >= 0.0 && d.score <= 1.0) || d.class_id < 0 || !d.box.allFinite() ||
                (d.box.tail(state_dim / 4).array() <= 0.0).any()) {
                throw FormatError("detection needs frame ≥ 0, score in [0,1], a known class and positive sizes",
                                  line_no);
            }
            dets.push_back(std::move(d));
        } catch (const json::exception& e) {
            throw FormatError(std::string("bad detection: ") + e.what(), line_no);
        }
    }
    return dets;
}

std::string format_detections_jsonl(const std::vector<std::vector<Detection>>& per_frame) {
    std::string out;
    for (const auto& frame : per_frame) {
        for (const auto& d : frame) {
            json j;
            j["frame"] = d.frame;
            j["class"] = class_name(d.class_id);
            j["score"] = d.score;
            j["box"] = box_to_json(d.box);
            if (d.embedding) {
                j["embedding"] = box_to_json(*d.embedding);
            }
            out += j.dump() + "\n";
        }
    }
    return out;
}

SequenceBundle read_bundle(const std::filesystem::path& dir) {
    SequenceBundle b;
    json meta;
    try {
        meta = json::parse(read_text(dir / "meta.json"));
    } catch (const json::exception& e) {
        throw FormatError((dir / "meta.json").string() + ": " + e.what());
    }
    try {
        b.id = meta.value("sequence", dir.filename().string());
        b.n_frames = meta.at("frames").get<int>();
        b.state_dim = meta.value("state_dim", 8);
        b.image_width = meta.value("image_width", 1242.0);
        b.image_height = meta.value("image_height", 375.0);
        b.scene_extent = meta.value("scene_extent", 100.0);
        b.source = meta.value("source", std::string("file"));
    } catch (const json::exception& e) {
        throw FormatError((dir / "meta.json").string() + ": " + e.what());
    }
    if (b.n_frames < 0) {
        throw FormatError((dir / "meta.json").string() + ": negative frame count");
    }
    if (b.state_dim != 8 && b.state_dim != 12) {
        throw FormatError((dir / "meta.json").string() + ": state_dim must be 8 or 12");
    }

    b.detections.assign(static_cast<std::size_t>(b.n_frames), {});
    std::vector<Detection> dets;
    try {
        dets = parse_detections_jsonl(read_text(dir / "detections.jsonl"), b.state_dim);
    } catch (const FormatError& e) {
        throw FormatError((dir / "detections.jsonl").string() + ": " + e.what());
    }
    for (auto& d : dets) {
        if (d.frame >= b.n_frames) {
            throw FormatError((dir / "detections.jsonl").string() + ": frame " + std::to_string(d.frame) +
                              " beyond sequence length");
        }
        b.detections[static_cast<std::size_t>(d.frame)].push_back(std::move(d));
    }

    const auto n = static_cast<std::size_t>(b.n_frames);
    if (std::filesystem::exists(dir / "speed.txt")) {
        b.speed = parse_speed_file(dir / "speed.txt", n);
    } else if (std::filesystem::exists(dir / "oxts.txt")) {
        try {
            b.speed = parse_oxts_text(read_text(dir / "oxts.txt"), n);
        } catch (const FormatError& e) {
            throw FormatError((dir / "oxts.txt").string() + ": " + e.what());
        }
    } else {
        throw IoError("bundle " + dir.string() + " has neither speed.txt nor oxts.txt");
    }

    if (std::filesystem::exists(dir / "gt.txt")) {
        b.has_gt = true;
        b.gt.assign(n, {});
        for (auto& r : parse_kitti_tracking_labels(dir / "gt.txt", b.state_dim)) {
            if (r.frame >= b.n_frames) {
                throw FormatError((dir / "gt.txt").string() + ": frame beyond sequence length");
            }
            b.gt[static_cast<std::size_t>(r.frame)].push_back(std::move(r));
        }
    }
    if (std::filesystem::exists(dir / "embeddings.txt")) {
        try {
            b.embeddings = parse_embeddings_text(read_text(dir / "embeddings.txt"));
        } catch (const FormatError& e) {
            throw FormatError((dir / "embeddings.txt").string() + ": " + e.what());
        }
    }
    return b;
}

void write_bundle(const SequenceBundle& b, const std::filesystem::path& dir) {
    b.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    json meta;
    meta["sequence"] = b.id;
    meta["frames"] = b.n_frames;
    meta["state_dim"] = b.state_dim;
    meta["image_width"] = b.image_width;
    meta["image_height"] = b.image_height;
    meta["scene_extent"] = b.scene_extent;
    meta["source"] = b.source;
    write_text(dir / "meta.json", meta.dump(2) + "\n");
    write_text(dir / "detections.jsonl", format_detections_jsonl(b.detections));
    std::string speeds;
    for (double v : b.speed.kmh) {
        speeds += fmt6(v) + "\n";
    }
    write_text(dir / "speed.txt", speeds);
    if (b.has_gt) {
        std::vector<LabelRow> rows;
        for (const auto& f : b.gt) {
            rows.insert(rows.end(), f.begin(), f.end());
        }
        write_kitti_rows(rows, dir / "gt.txt", b.state_dim);
    }
    if (!b.embeddings.empty()) {
        write_text(dir / "embeddings.txt", format_embeddings(b.embeddings));
    }
}

std::string format_results(std::vector<ResultRow> rows, ResultFormat fmt, int state_dim) {
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return a.frame != b.frame ? a.frame < b.frame : a.track_id < b.track_id;
    });
    if (fmt == ResultFormat::Kitti) {
        std::vector<LabelRow> labels;
        labels.reserve(rows.size());
        for (const auto& r : rows) {
            LabelRow l;
            l.frame = r.frame;
            l.track_id = r.track_id;
            l.class_id = r.class_id;
            l.type = class_name(r.class_id);
            l.truncated = -1.0;
            l.occluded = -1;
            l.alpha = -10.0;
            l.box = r.box;
            l.rotation_y = -10.0;
            l.score = r.score;
            labels.push_back(std::move(l));
        }
        return format_kitti_rows(std::move(labels), state_dim);
    }
    std::string out;
    for (const auto& r : rows) {
        json j;
        j["frame"] = r.frame;
        j["id"] = r.track_id;
        j["class"] = class_name(r.class_id);
        j["box"] = box_to_json(r.box);
        j["score"] = r.score;
        out += j.dump() + "\n";
    }
    return out;
}

void write_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path, ResultFormat fmt,
                   int state_dim) {
    write_text(path, format_results(rows, fmt, state_dim));
}

std::vector<ResultRow> parse_results_jsonl(const std::string& text) {
    std::vector<ResultRow> rows;
    int line_no = 0;
    for (const auto& line : lines_of(text)) {
        ++line_no;
        if (blank(line)) {
            continue;
        }
        try {
            const json j = json::parse(line);
            ResultRow r;
            r.frame = j.at("frame").get<int>();
            r.track_id = j.at("id").get<int>();
            const auto& cls = j.at("class");
            r.class_id = cls.is_string() ? class_id(cls.get<std::string>()) : cls.get<int>();
            const auto& box = j.at("box");
            r.box = Box(static_cast<long>(box.size()));
            for (std::size_t k = 0; k < box.size(); ++k) {
                r.box[static_cast<long>(k)] = box[k].get<double>();
            }
            r.score = j.value("score", 1.0);
            rows.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw FormatError(std::string("bad result row: ") + e.what(), line_no);
        }
    }
    return rows;
}

std::vector<ResultRow> read_results(const std::filesystem::path& path, int state_dim) {
    if (path.extension() == ".jsonl") {
        try {
            return parse_results_jsonl(read_text(path));
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
    }
    std::vector<ResultRow> rows;
    for (const auto& l : parse_kitti_tracking_labels(path, state_dim)) {
        if (l.dont_care()) {
            continue;
        }
        rows.push_back(ResultRow{l.frame, l.track_id, l.class_id, l.box, l.score.value_or(1.0)});
    }
    return rows;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    os << text;
    if (!os) {
        throw IoError("failed writing " + path.string());
    }
}

}  // namespace speedtrack::io
