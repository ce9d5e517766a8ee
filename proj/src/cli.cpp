#include "speedtrack/cli.hpp"

#include "speedtrack/config.hpp"
#include "speedtrack/errors.hpp"
#include "speedtrack/msnet.hpp"
#include "speedtrack/synth.hpp"
#include "speedtrack/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#ifndef SPEEDTRACK_VERSION
#define SPEEDTRACK_VERSION "0.1.0"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace speedtrack::cli {

std::vector<fs::path> discover_bundles(const fs::path& root) {
    if (fs::exists(root / "meta.json")) {
        return {root};
    }
    if (!fs::is_directory(root)) {
        throw IoError("not a directory: " + root.string());
    }
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::exists(e.path() / "meta.json")) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) {
        throw IoError("no sequence bundles under " + root.string());
    }
    return out;
}

std::vector<fs::path> read_sequence_list(const fs::path& file) {
    std::istringstream in(io::read_text(file));
    std::vector<fs::path> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') {
            continue;
        }
        const auto e = line.find_last_not_of(" \t\r");
        fs::path p = line.substr(b, e - b + 1);
        out.push_back(p.is_relative() ? file.parent_path() / p : p);
    }
    if (out.empty()) {
        throw IoError("sequence list is empty: " + file.string());
    }
    return out;
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace

std::vector<std::vector<io::ResultRow>> track_bundles(const std::vector<io::SequenceBundle>& bundles,
                                                      const TrackerConfig& cfg,
                                                      std::shared_ptr<const NoiseModel> noise, int jobs,
                                                      const std::vector<std::vector<double>>* speeds) {
    if (speeds && speeds->size() != bundles.size()) {
        throw ShapeError("one speed series per bundle expected");
    }
    std::vector<std::vector<io::ResultRow>> out(bundles.size());
    parallel_for(bundles.size(), jobs, [&](std::size_t i) {
        out[i] = run_sequence(bundles[i], cfg, noise, speeds ? &(*speeds)[i] : nullptr);
    });
    return out;
}

metrics::EvalCounts count_bundles(const std::vector<io::SequenceBundle>& bundles,
                                  const std::vector<std::vector<io::ResultRow>>& results) {
    if (results.size() != bundles.size()) {
        throw ShapeError("one result list per bundle expected");
    }
    const auto alphas = metrics::default_alphas();
    metrics::EvalCounts total;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        auto frames = metrics::make_frames(bundles[i], results[i]);
        metrics::apply_ignore_regions(frames);
        total += metrics::count_sequence(frames, alphas);
    }
    return total;
}

std::vector<metrics::BucketStats> bucket_bundles(const std::vector<io::SequenceBundle>& bundles,
                                                 const std::vector<std::vector<io::ResultRow>>& results,
                                                 const std::vector<double>& centers, double half_width) {
    if (results.size() != bundles.size()) {
        throw ShapeError("one result list per bundle expected");
    }
    std::vector<metrics::BucketStats> total;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        auto frames = metrics::make_frames(bundles[i], results[i]);
        metrics::apply_ignore_regions(frames);
        metrics::add_buckets(total, metrics::speed_buckets(frames, centers, half_width));
    }
    return total;
}

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunContext {
    std::string command;
    fs::path out_dir;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::uint64_t seed = 0;
    config::KeyValues snapshot;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    std::ostream* out = nullptr;
};

void write_manifest(const RunContext& ctx) {
    ordered_json m;
    m["command"] = ctx.command;
    m["version"] = SPEEDTRACK_VERSION;
    m["seed"] = ctx.seed;
    m["inputs"] = ctx.inputs;
    m["outputs"] = ctx.outputs;
    ordered_json cfg = ordered_json::object();
    for (const auto& [k, v] : ctx.snapshot) {
        cfg[k] = v;
    }
    m["config"] = cfg;
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ts;
    ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    m["finished_at"] = ts.str();
    m["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
    io::write_text(ctx.out_dir / "manifest.json", m.dump(2) + "\n");
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) {
        throw IoError("cannot create directory " + p.string() + ": " + ec.message());
    }
}

std::vector<io::SequenceBundle> load_bundles(const std::vector<fs::path>& dirs) {
    std::vector<io::SequenceBundle> out;
    for (const auto& d : dirs) {
        out.push_back(io::read_bundle(d));
    }
    return out;
}

int common_state_dim(const std::vector<io::SequenceBundle>& bundles) {
    const int dim = bundles.front().state_dim;
    for (const auto& b : bundles) {
        if (b.state_dim != dim) {
            throw ConfigError("bundles mix 2D and 3D sequences");
        }
    }
    return dim;
}

// ---- option structs; defaults mirror the module defaults -------------------

struct SynthOpts {
    std::string out;
    std::string suite = "default";
    int state_dim = 8;
    int count = 12;
    int frames = 100;
    std::uint64_t seed = 1;
    double speed = 0.0;
    std::string id = "synth";
    bool perfect = false;
};

struct TrainOpts {
    std::string data;
    std::string list;
    std::string out;
    std::string init;
    train::TrainConfig cfg;
    bool no_override = false;
    bool verbose = false;
    double alpha = 1.0;
    double beta = 1.0;
    bool fixed_weights = false;
};

struct TrackerOpts {
    TrackerConfig cfg;
    bool no_override = false;
    double fixed_std_position = 1.0 / 20.0;
    double fixed_std_velocity = 1.0 / 160.0;
};

struct TrackOpts {
    std::string data;
    std::string out;
    std::string checkpoint;
    bool fixed_kf = false;
    int jobs = 1;
    std::string format = "kitti";
    TrackerOpts tracker;
};

struct EvalOpts {
    std::string results;
    std::string data;
    std::string out;
};

struct SpeedOpts {
    std::string results;
    std::string data;
    std::string out;
    std::vector<double> centers;
    double half_width = 5.0;
};

struct PerturbOpts {
    std::string data;
    std::string out;
    std::string checkpoint;
    std::vector<double> levels{0.0, 0.1, 0.2, 0.3};
    std::string mode = "relative";
    std::uint64_t seed = 11;
    int jobs = 1;
    bool write_bundles = false;
    TrackerOpts tracker;
};

void add_tracker_options(CLI::App* sub, TrackerOpts& t) {
    auto& c = t.cfg;
    sub->add_option("--tau-high", c.association.tau_high, "Score threshold of the first association stage");
    sub->add_option("--tau-low", c.association.tau_low, "Lowest score considered in the second stage");
    sub->add_option("--gate-stage1", c.association.gate_stage1, "Max 1-IoU cost in stage one");
    sub->add_option("--gate-stage2", c.association.gate_stage2, "Max 1-IoU cost in stage two");
    sub->add_option("--base-age", c.base_age, "Lost-track lifetime at standstill, frames");
    sub->add_option("--v-ref", c.v_ref, "Speed (km/h) at which the lifetime reaches its floor");
    sub->add_option("--min-age-frac", c.min_age_frac, "Lifetime floor as a fraction of base-age");
    sub->add_option("--confirm-hits", c.confirm_hits, "Matches needed before a track is reported");
    sub->add_option("--rate-var-factor", c.rate_var_factor, "Scale on initial rate variances");
    sub->add_flag("--no-override", t.no_override, "Use the Joseph posterior instead of the learned P");
    sub->add_option("--fixed-std-position", t.fixed_std_position, "Fixed baseline: position noise per unit size");
    sub->add_option("--fixed-std-velocity", t.fixed_std_velocity, "Fixed baseline: rate noise per unit size");
}

std::shared_ptr<const NoiseModel> make_noise(bool fixed, const std::string& checkpoint, const TrackerOpts& t,
                                             int state_dim) {
    if (fixed) {
        return std::make_shared<FixedNoise>(state_dim, t.fixed_std_position, t.fixed_std_velocity);
    }
    if (checkpoint.empty()) {
        throw UsageError("--checkpoint is required unless --fixed-kf is given");
    }
    auto params = msnet::load(checkpoint);
    if (params.config.q_dim != state_dim) {
        throw ShapeError("checkpoint state dimension " + std::to_string(params.config.q_dim) +
                         " does not match the data (" + std::to_string(state_dim) + ")");
    }
    return std::make_shared<LearnedNoise>(std::move(params), t.cfg.rate_var_factor, !t.no_override);
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) {
        throw UsageError(std::string(flag) + " is required");
    }
}

// ---- subcommands ----------------------------------------------------------

int cmd_synth(const SynthOpts& o, RunContext& ctx) {
    require(o.out, "--out");
    std::vector<synth::ScenarioConfig> suite;
    if (o.suite == "default") {
        suite = synth::default_suite(o.state_dim);
    } else if (o.suite == "training") {
        suite = synth::training_suite(o.count, o.frames, o.state_dim);
    } else if (o.suite == "single") {
        synth::ScenarioConfig c = o.state_dim == 12 ? synth::ScenarioConfig::three_d() : synth::ScenarioConfig{};
        c.id = o.id;
        c.seed = o.seed;
        c.n_frames = o.frames;
        c.ego_speed = {o.speed};
        suite.push_back(c);
    } else {
        throw UsageError("--suite must be default, training or single");
    }
    ctx.out_dir = o.out;
    ensure_dir(ctx.out_dir);
    std::string list;
    for (auto c : suite) {
        if (o.perfect) {
            c.sigma0 = c.k_sigma = c.p0 = c.k_p = 0.0;
        }
        const auto bundle = synth::generate(c);
        io::write_bundle(bundle, ctx.out_dir / bundle.id);
        list += bundle.id + "\n";
        ctx.outputs.push_back(bundle.id);
    }
    io::write_text(ctx.out_dir / "sequences.txt", list);
    *ctx.out << "wrote " << suite.size() << " sequences to " << o.out << "\n";
    return 0;
}

int cmd_train(TrainOpts& o, RunContext& ctx) {
    require(o.out, "--out");
    std::vector<fs::path> dirs;
    if (!o.list.empty()) {
        dirs = read_sequence_list(o.list);
        ctx.inputs.push_back(o.list);
    } else {
        require(o.data, "--data or --list");
        dirs = discover_bundles(o.data);
        ctx.inputs.push_back(o.data);
    }
    o.cfg.posterior_override = !o.no_override;
    o.cfg.weights.set_alpha(o.alpha);
    o.cfg.weights.set_beta(o.beta);
    o.cfg.weights.trainable = !o.fixed_weights;
    ctx.seed = o.cfg.seed;
    const auto bundles = load_bundles(dirs);
    common_state_dim(bundles);
    std::vector<train::TrainSequence> data;
    for (const auto& b : bundles) {
        data.push_back(train::build_train_sequence(b, o.cfg.match_iou));
    }
    std::optional<msnet::MSNetParams> init;
    if (!o.init.empty()) {
        init = msnet::load(o.init);
        ctx.inputs.push_back(o.init);
    }
    ctx.out_dir = o.out;
    ensure_dir(ctx.out_dir);
    std::string curve;
    auto result = train::train(data, o.cfg, std::move(init), [&](const train::EpochMetrics& m) {
        const auto line = train::epoch_json(m);
        curve += line + "\n";
        if (o.verbose) {
            *ctx.out << line << "\n" << std::flush;
        }
    });
    msnet::save(result.params, ctx.out_dir / "model.msn");
    ordered_json w;
    w["alpha_raw"] = result.weights.alpha_raw;
    w["beta_raw"] = result.weights.beta_raw;
    w["alpha"] = result.weights.alpha();
    w["beta"] = result.weights.beta();
    io::write_text(ctx.out_dir / "loss_weights.json", w.dump(2) + "\n");
    io::write_text(ctx.out_dir / "curve.jsonl", curve);
    ctx.outputs = {"model.msn", "loss_weights.json", "curve.jsonl"};
    *ctx.out << "trained " << o.cfg.total_epochs << " epochs on " << data.size() << " sequences; final loss "
             << result.curve.back().loss << "\n";
    return 0;
}

int cmd_track(const TrackOpts& o, RunContext& ctx) {
    require(o.data, "--data");
    require(o.out, "--out");
    io::ResultFormat fmt;
    if (o.format == "kitti") {
        fmt = io::ResultFormat::Kitti;
    } else if (o.format == "jsonl") {
        fmt = io::ResultFormat::Jsonl;
    } else {
        throw UsageError("--format must be kitti or jsonl");
    }
    const auto bundles = load_bundles(discover_bundles(o.data));
    const int dim = common_state_dim(bundles);
    auto noise = make_noise(o.fixed_kf, o.checkpoint, o.tracker, dim);
    ctx.inputs.push_back(o.data);
    if (!o.fixed_kf) {
        ctx.inputs.push_back(o.checkpoint);
    }
    const auto results = track_bundles(bundles, o.tracker.cfg, noise, o.jobs);
    ctx.out_dir = o.out;
    ensure_dir(ctx.out_dir);
    const std::string ext = fmt == io::ResultFormat::Kitti ? ".txt" : ".jsonl";
    std::size_t rows = 0;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        io::write_results(results[i], ctx.out_dir / (bundles[i].id + ext), fmt, dim);
        ctx.outputs.push_back(bundles[i].id + ext);
        rows += results[i].size();
    }
    *ctx.out << "tracked " << bundles.size() << " sequences (" << rows << " rows) with "
             << (o.fixed_kf ? "fixed" : "learned") << " noise\n";
    return 0;
}

fs::path find_results(const fs::path& dir, const std::string& id) {
    for (const char* ext : {".txt", ".jsonl"}) {
        const auto p = dir / (id + ext);
        if (fs::exists(p)) {
            return p;
        }
    }
    throw IoError("no results for sequence '" + id + "' in " + dir.string());
}

std::vector<std::vector<io::ResultRow>> load_results(const fs::path& dir,
                                                     const std::vector<io::SequenceBundle>& bundles) {
    std::vector<std::vector<io::ResultRow>> out;
    for (const auto& b : bundles) {
        out.push_back(io::read_results(find_results(dir, b.id), b.state_dim));
    }
    return out;
}

int cmd_eval(const EvalOpts& o, RunContext& ctx) {
    require(o.results, "--results");
    require(o.data, "--data");
    require(o.out, "--out");
    const auto bundles = load_bundles(discover_bundles(o.data));
    common_state_dim(bundles);
    const auto results = load_results(o.results, bundles);
    ctx.inputs = {o.results, o.data};
    ordered_json per_seq = ordered_json::object();
    metrics::EvalCounts total;
    const auto alphas = metrics::default_alphas();
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        auto frames = metrics::make_frames(bundles[i], results[i]);
        metrics::apply_ignore_regions(frames);
        const auto c = metrics::count_sequence(frames, alphas);
        per_seq[bundles[i].id] = ordered_json::parse(metrics::report_json(metrics::summarize(c)));
        total += c;
    }
    const auto report = metrics::summarize(total);
    ordered_json j;
    j["combined"] = ordered_json::parse(metrics::report_json(report));
    j["sequences"] = per_seq;
    ctx.out_dir = o.out;
    ensure_dir(ctx.out_dir);
    io::write_text(ctx.out_dir / "report.json", j.dump(2) + "\n");
    io::write_text(ctx.out_dir / "report.txt", metrics::report_text(report));
    ctx.outputs = {"report.json", "report.txt"};
    *ctx.out << metrics::report_text(report);
    return 0;
}

int cmd_speed(const SpeedOpts& o, RunContext& ctx) {
    require(o.results, "--results");
    require(o.data, "--data");
    require(o.out, "--out");
    const auto bundles = load_bundles(discover_bundles(o.data));
    const int dim = common_state_dim(bundles);
    const auto results = load_results(o.results, bundles);
    ctx.inputs = {o.results, o.data};
    const auto centers = o.centers.empty() ? metrics::default_bucket_centers(dim) : o.centers;
    const auto buckets = bucket_bundles(bundles, results, centers, o.half_width);
    ctx.out_dir = o.out;
    ensure_dir(ctx.out_dir);
    const auto csv = metrics::buckets_csv(buckets);
    io::write_text(ctx.out_dir / "buckets.csv", csv);
    ctx.outputs = {"buckets.csv"};
    *ctx.out << csv;
    return 0;
}

int cmd_perturb(const PerturbOpts& o, RunContext& ctx) {
    require(o.data, "--data");
    require(o.out, "--out");
    io::PerturbMode mode;
    if (o.mode == "relative") {
        mode = io::PerturbMode::Relative;
    } else if (o.mode == "noise") {
        mode = io::PerturbMode::PureNoise;
    } else {
        throw UsageError("--mode must be relative or noise");
    }
    const auto bundles = load_bundles(discover_bundles(o.data));
    const int dim = common_state_dim(bundles);
    auto noise = make_noise(false, o.checkpoint, o.tracker, dim);
    ctx.inputs = {o.data, o.checkpoint};
    ctx.seed = o.seed;
    ctx.out_dir = o.out;
    ensure_dir(ctx.out_dir);

    std::ostringstream csv;
    csv << std::setprecision(10) << "level,hota,deta,assa,mota,idsw,relative_hota_change\n";
    std::optional<double> clean_hota;
    for (std::size_t li = 0; li < o.levels.size(); ++li) {
        const double level = o.levels[li];
        std::vector<std::vector<double>> speeds;
        for (std::size_t i = 0; i < bundles.size(); ++i) {
            const std::uint64_t s = o.seed + 7919u * static_cast<std::uint64_t>(i) +
                                    104729u * static_cast<std::uint64_t>(li);
            speeds.push_back(level == 0.0 && mode == io::PerturbMode::Relative
                                 ? bundles[i].speed.kmh
                                 : io::perturb_speed(bundles[i].speed.kmh, mode, level, s));
        }
        const auto results = track_bundles(bundles, o.tracker.cfg, noise, o.jobs, &speeds);
        const auto r = metrics::summarize(count_bundles(bundles, results));
        if (!clean_hota) {
            clean_hota = r.hota;
        }
        const double rel = *clean_hota > 0.0 ? (r.hota - *clean_hota) / *clean_hota : 0.0;
        csv << level << ',' << r.hota << ',' << r.deta << ',' << r.assa << ',' << r.mota << ',' << r.idsw << ','
            << rel << '\n';
        if (o.write_bundles) {
            for (std::size_t i = 0; i < bundles.size(); ++i) {
                auto b = bundles[i];
                b.speed.kmh = speeds[i];
                b.speed.held.assign(speeds[i].size(), false);
                b.source = "perturbed";
                std::ostringstream name;
                name << "level_" << level;
                io::write_bundle(b, ctx.out_dir / name.str() / b.id);
            }
        }
    }
    io::write_text(ctx.out_dir / "table.csv", csv.str());
    ctx.outputs = {"table.csv"};
    *ctx.out << csv.str();
    return 0;
}

// ---- config resolution ----------------------------------------------------

std::string option_key(const CLI::Option* opt) {
    const auto& l = opt->get_lnames();
    return l.empty() ? std::string() : l.front();
}

std::string joined_results(const CLI::Option* opt) {
    std::string s;
    for (const auto& r : opt->results()) {
        s += s.empty() ? r : "," + r;
    }
    return s;
}

// Fills options the command line left unset from SPEEDTRACK_* variables,
// then from the config file, and records the effective values.
config::KeyValues resolve(CLI::App* sub, const std::string& config_path) {
    config::KeyValues file;
    if (!config_path.empty()) {
        file = config::read_key_values(config_path);
    }
    std::set<std::string> known;
    config::KeyValues snapshot;
    for (CLI::Option* opt : sub->get_options()) {
        const std::string key = option_key(opt);
        if (key.empty() || key == "help" || key == "config") {
            continue;
        }
        known.insert(key);
        std::string alt = key;
        std::replace(alt.begin(), alt.end(), '-', '_');
        known.insert(alt);
        if (opt->count() == 0) {
            if (auto v = config::lookup(key, file)) {
                try {
                    if (opt->get_expected_max() > 1) {
                        std::string item;
                        std::istringstream in(*v);
                        while (std::getline(in, item, ',')) {
                            opt->add_result(item);
                        }
                    } else {
                        opt->add_result(*v);
                    }
                    opt->run_callback();
                } catch (const CLI::Error& e) {
                    throw ConfigError("bad value for '" + key + "': " + e.what());
                }
            }
        }
        snapshot[key] = opt->count() > 0 ? joined_results(opt) : opt->get_default_str();
    }
    for (const auto& [k, v] : file) {
        if (!known.count(k)) {
            throw ConfigError("unknown key '" + k + "' in " + config_path);
        }
    }
    return snapshot;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-object tracking with ego-speed-dependent Kalman noise", "speedtrack"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_version_flag("--version", SPEEDTRACK_VERSION);
    app.failure_message(CLI::FailureMessage::help);

    std::map<CLI::App*, std::string> config_paths;
    auto add_sub = [&](const char* name, const char* desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_paths[sub], "key = value file; flags and SPEEDTRACK_* override it");
        return sub;
    };

    SynthOpts so;
    CLI::App* s_synth = add_sub("synth", "Generate synthetic sequence bundles");
    s_synth->add_option("--out", so.out, "Output directory (one bundle per sequence)");
    s_synth->add_option("--suite", so.suite, "default, training or single")
        ->check(CLI::IsMember({"default", "training", "single"}));
    s_synth->add_option("--state-dim", so.state_dim, "8 for image boxes, 12 for 3D boxes")
        ->check(CLI::IsMember({8, 12}));
    s_synth->add_option("--count", so.count, "Training suite size");
    s_synth->add_option("--frames", so.frames, "Frames per sequence (training and single suites)");
    s_synth->add_option("--seed", so.seed, "Seed of the single scenario");
    s_synth->add_option("--speed", so.speed, "Ego speed of the single scenario, km/h");
    s_synth->add_option("--id", so.id, "Id of the single scenario");
    s_synth->add_flag("--perfect", so.perfect, "Noise-free detections with no dropout");

    TrainOpts to;
    CLI::App* s_train = add_sub("train", "Train MSNet on bundles with ground truth");
    s_train->add_option("--data", to.data, "Bundle directory or a folder of bundles");
    s_train->add_option("--list", to.list, "Text file listing bundle directories");
    s_train->add_option("--out", to.out, "Output directory");
    s_train->add_option("--init", to.init, "Start from this checkpoint");
    s_train->add_option("--epochs", to.cfg.total_epochs, "Total epochs (cosine schedule length)");
    s_train->add_option("--warmup", to.cfg.warmup_epochs, "Linear warm-up epochs");
    s_train->add_option("--lr", to.cfg.lr0, "Peak learning rate");
    s_train->add_option("--weight-decay", to.cfg.weight_decay, "Decoupled weight decay");
    s_train->add_option("--batch", to.cfg.batch, "Sequences per step");
    s_train->add_option("--seed", to.cfg.seed, "Initialisation and shuffling seed");
    s_train->add_option("--grad-clip", to.cfg.grad_clip, "Global gradient norm limit, 0 disables");
    s_train->add_option("--window", to.cfg.window, "Backprop window, frames");
    s_train->add_option("--overlap", to.cfg.overlap, "Window overlap, frames");
    s_train->add_option("--match-iou", to.cfg.match_iou, "Detection to GT matching threshold");
    s_train->add_option("--rate-var-factor", to.cfg.rate_var_factor, "Scale on initial rate variances");
    s_train->add_option("--lambda", to.cfg.weights.lambda, "TCL center term weight");
    s_train->add_option("--gamma", to.cfg.weights.gamma, "TCL temporal decay");
    s_train->add_option("--rho", to.cfg.weights.rho, "TCL aggregate decay");
    s_train->add_option("--alpha", to.alpha, "Initial SCL weight");
    s_train->add_option("--beta", to.beta, "Initial PCL weight");
    s_train->add_flag("--fixed-weights", to.fixed_weights, "Keep alpha and beta constant");
    s_train->add_flag("--no-override", to.no_override, "Use the Joseph posterior instead of the learned P");
    s_train->add_flag("--verbose", to.verbose, "Print per-epoch metrics");

    TrackOpts tro;
    CLI::App* s_track = add_sub("track", "Run the tracker over bundles");
    s_track->add_option("--data", tro.data, "Bundle directory or a folder of bundles");
    s_track->add_option("--out", tro.out, "Output directory for per-sequence results");
    s_track->add_option("--checkpoint", tro.checkpoint, "MSNet checkpoint");
    s_track->add_flag("--fixed-kf", tro.fixed_kf, "Constant size-proportional noise baseline");
    s_track->add_option("--jobs", tro.jobs, "Sequences tracked in parallel")->check(CLI::PositiveNumber);
    s_track->add_option("--format", tro.format, "kitti or jsonl")->check(CLI::IsMember({"kitti", "jsonl"}));
    add_tracker_options(s_track, tro.tracker);

    EvalOpts eo;
    CLI::App* s_eval = add_sub("eval", "HOTA and CLEAR metrics against ground truth");
    s_eval->add_option("--results", eo.results, "Directory of per-sequence results");
    s_eval->add_option("--data", eo.data, "Bundles with ground truth");
    s_eval->add_option("--out", eo.out, "Output directory");

    SpeedOpts spo;
    CLI::App* s_speed = add_sub("speed-analysis", "Matched IoU and ID switches per ego-speed bucket");
    s_speed->add_option("--results", spo.results, "Directory of per-sequence results");
    s_speed->add_option("--data", spo.data, "Bundles with ground truth and speeds");
    s_speed->add_option("--out", spo.out, "Output directory");
    s_speed->add_option("--centers", spo.centers, "Bucket centers, km/h (default 0,20,40,60; 3D 0,15,25,35)")
        ->delimiter(',');
    s_speed->add_option("--half-width", spo.half_width, "Bucket half width, km/h");

    PerturbOpts po;
    CLI::App* s_perturb = add_sub("perturb-speed", "Tracking quality under noisy ego speed");
    s_perturb->add_option("--data", po.data, "Bundles with ground truth");
    s_perturb->add_option("--out", po.out, "Output directory");
    s_perturb->add_option("--checkpoint", po.checkpoint, "MSNet checkpoint");
    s_perturb->add_option("--levels", po.levels, "Noise levels")->delimiter(',');
    s_perturb->add_option("--mode", po.mode, "relative: v(1+s*n); noise: v*n")
        ->check(CLI::IsMember({"relative", "noise"}));
    s_perturb->add_option("--seed", po.seed, "Perturbation seed");
    s_perturb->add_option("--jobs", po.jobs, "Sequences tracked in parallel")->check(CLI::PositiveNumber);
    s_perturb->add_flag("--write-bundles", po.write_bundles, "Also write the perturbed bundles");
    add_tracker_options(s_perturb, po.tracker);

    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    RunContext ctx;
    ctx.command = sub->get_name();
    ctx.out = &out;
    try {
        try {
            ctx.snapshot = resolve(sub, config_paths[sub]);
            tro.tracker.cfg.validate();
            po.tracker.cfg.validate();
            int code = 0;
            if (sub == s_synth) {
                ctx.seed = so.seed;
                code = cmd_synth(so, ctx);
            } else if (sub == s_train) {
                code = cmd_train(to, ctx);
            } else if (sub == s_track) {
                code = cmd_track(tro, ctx);
            } else if (sub == s_eval) {
                code = cmd_eval(eo, ctx);
            } else if (sub == s_speed) {
                code = cmd_speed(spo, ctx);
            } else {
                code = cmd_perturb(po, ctx);
            }
            write_manifest(ctx);
            return code;
        } catch (const fs::filesystem_error& e) {
            throw IoError(e.what());
        }
    } catch (const UsageError& e) {
        err << "usage: " << e.what() << "\n" << sub->help();
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << "\n";
        return 1;
    }
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace speedtrack::cli
