#include "speedtrack/trainer.hpp"

#include "speedtrack/errors.hpp"
#include "speedtrack/kf_core.hpp"
#include "speedtrack/track_manager.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace speedtrack::train {

void TrainConfig::validate() const {
    if (!(lr0 >= 0.0) || !std::isfinite(lr0)) {
        throw ConfigError("lr0 must be finite and nonnegative");
    }
    if (!(weight_decay >= 0.0)) {
        throw ConfigError("weight_decay must be nonnegative");
    }
    if (total_epochs < 1 || warmup_epochs < 0 || warmup_epochs >= total_epochs) {
        throw ConfigError("need 0 <= warmup_epochs < total_epochs");
    }
    if (batch < 1) {
        throw ConfigError("batch must be at least 1");
    }
    if (!(grad_clip >= 0.0)) {
        throw ConfigError("grad_clip must be nonnegative");
    }
    if (window < 2 || overlap < 0 || overlap >= window) {
        throw ConfigError("need window >= 2 and 0 <= overlap < window");
    }
    if (!(match_iou > 0.0 && match_iou <= 1.0)) {
        throw ConfigError("match_iou must lie in (0, 1]");
    }
    if (!(rate_var_factor > 0.0)) {
        throw ConfigError("rate_var_factor must be positive");
    }
    weights.validate();
}

double lr_schedule(double epoch, const TrainConfig& cfg) {
    if (!(epoch >= 0.0) || epoch > cfg.total_epochs) {
        throw ConfigError("epoch outside [0, total_epochs]");
    }
    if (epoch < cfg.warmup_epochs) {
        return cfg.lr0 * (epoch + 1.0) / cfg.warmup_epochs;
    }
    const double span = static_cast<double>(cfg.total_epochs - cfg.warmup_epochs);
    return cfg.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * (epoch - cfg.warmup_epochs) / span));
}

bool optimizer_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                    double weight_decay, std::span<const char> decay_mask) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    const std::size_t n = params.size();
    if (grads.size() != n || decay_mask.size() != n) {
        throw ShapeError("optimizer: parameter, gradient and mask sizes differ");
    }
    if (state.m.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    }
    if (state.m.size() != n || state.v.size() != n) {
        throw ShapeError("optimizer state does not match the parameters");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            return false;
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        if (decay_mask[i]) {
            params[i] -= lr * weight_decay * params[i];
        }
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    return true;
}

std::vector<char> decay_mask(const msnet::MSNetConfig& config) {
    const msnet::ParamLayout layout(config);
    std::vector<char> mask(layout.total(), 0);
    for (const auto& t : layout.tensors()) {
        if (t.group == msnet::ParamGroup::Weight) {
            std::fill(mask.begin() + static_cast<long>(t.offset),
                      mask.begin() + static_cast<long>(t.offset + t.size()), 1);
        }
    }
    return mask;
}

TrainSequence build_train_sequence(const io::SequenceBundle& bundle, double match_iou) {
    bundle.validate();
    if (!bundle.has_gt) {
        throw IoError("training sequence '" + bundle.id + "' has no ground truth");
    }
    TrainSequence seq;
    seq.id = bundle.id;
    seq.state_dim = bundle.state_dim;
    seq.center_scale = bundle.center_scale();
    seq.speeds = bundle.speed.kmh;

    // Per GT id, the frames it appears in with its teacher-matched detection.
    std::map<int, std::vector<TrainFrame>> per_object;
    std::map<int, int> classes;
    for (int t = 0; t < bundle.n_frames; ++t) {
        const auto& gts = bundle.gt[static_cast<std::size_t>(t)];
        const auto& dets = bundle.detections[static_cast<std::size_t>(t)];
        std::vector<int> gt_idx;
        for (int i = 0; i < static_cast<int>(gts.size()); ++i) {
            if (!gts[static_cast<std::size_t>(i)].dont_care()) {
                gt_idx.push_back(i);
            }
        }
        CostMatrix cost(static_cast<long>(gt_idx.size()), static_cast<long>(dets.size()));
        for (std::size_t i = 0; i < gt_idx.size(); ++i) {
            const auto& g = gts[static_cast<std::size_t>(gt_idx[i])];
            for (std::size_t j = 0; j < dets.size(); ++j) {
                cost(static_cast<long>(i), static_cast<long>(j)) =
                    g.class_id == dets[j].class_id ? 1.0 - box_iou(g.box, dets[j].box) : 1.0;
            }
        }
        const auto assign = solve_assignment(cost, 1.0 - match_iou);
        std::vector<int> det_of(gt_idx.size(), -1);
        for (auto [i, j] : assign.matches) {
            det_of[static_cast<std::size_t>(i)] = j;
        }
        for (std::size_t i = 0; i < gt_idx.size(); ++i) {
            const auto& g = gts[static_cast<std::size_t>(gt_idx[i])];
            TrainFrame f;
            f.frame = t;
            f.gt = g.box;
            if (det_of[i] >= 0) {
                const auto& d = dets[static_cast<std::size_t>(det_of[i])];
                f.det = d.box;
                f.det_embedding = d.embedding;
            }
            const auto it = bundle.embeddings.find({t, g.track_id});
            if (it != bundle.embeddings.end()) {
                f.gt_embedding = it->second;
            }
            per_object[g.track_id].push_back(std::move(f));
            classes[g.track_id] = g.class_id;
        }
    }

    for (auto& [id, frames] : per_object) {
        std::size_t start = 0;
        while (start < frames.size()) {
            std::size_t end = start + 1;
            while (end < frames.size() && frames[end].frame == frames[end - 1].frame + 1) {
                ++end;
            }
            std::size_t birth = start;
            while (birth < end && !frames[birth].det) {
                ++birth;
            }
            if (end - birth >= 2) {
                TrainTrack tr;
                tr.gt_id = id;
                tr.class_id = classes[id];
                tr.frames.assign(frames.begin() + static_cast<long>(birth), frames.begin() + static_cast<long>(end));
                seq.tracks.push_back(std::move(tr));
            }
            start = end;
        }
    }
    return seq;
}

TermSums& TermSums::operator+=(const TermSums& o) {
    pcl += o.pcl;
    pcl_count += o.pcl_count;
    scl += o.scl;
    scl_count += o.scl_count;
    tcl += o.tcl;
    tcl_count += o.tcl_count;
    return *this;
}

namespace {

struct Window {
    int begin = 0;
    int end = 0;
    int loss_begin = 0;
};

std::vector<Window> windows_for(int length, const TrainConfig& cfg) {
    std::vector<Window> out;
    const int stride = cfg.window - cfg.overlap;
    for (int a = 0; a < length; a += stride) {
        const int b = std::min(a + cfg.window, length);
        const int lb = a == 0 ? 0 : a + cfg.overlap;
        if (lb < b) {
            out.push_back(Window{a, b, lb});
        }
        if (b == length) {
            break;
        }
    }
    return out;
}

struct StepRecord {
    bool has_det = false;
    msnet::ForwardTape q_tape;
    msnet::ForwardTape rp_tape;
    msnet::ForwardTape p0_tape;
    kf::Matrix cov_pred;
    Eigen::Array<bool, Eigen::Dynamic, 1> pred_clamped;
    Eigen::Array<bool, Eigen::Dynamic, 1> post_clamped;
    kf::Matrix gain;
    kf::Matrix innovation_inv;
    kf::Vector innovation;
    kf::Vector r;
};

class TrackRollout {
public:
    TrackRollout(const TrainSequence& seq, const TrainTrack& track, const msnet::MSNetParams& params,
                 const TrainConfig& cfg)
        : seq_(seq), track_(track), params_(params), cfg_(cfg), layout_(kf::StateLayout::for_dim(seq.state_dim)),
          f_(kf::make_transition(seq.state_dim)), h_(kf::observation_matrix(seq.state_dim)) {
        const std::size_t n = track.frames.size();
        states_.resize(n);
        covs_.resize(n);
        held_embedding_.resize(n);
        std::optional<Eigen::VectorXd> last;
        for (std::size_t i = 0; i < n; ++i) {
            if (track.frames[i].det_embedding) {
                last = track.frames[i].det_embedding;
            }
            held_embedding_[i] = last;
        }
    }

    void run(TermSums& sums, double coef_tcl, double coef_pcl, std::vector<double>* grad) {
        for (const auto& w : windows_for(static_cast<int>(track_.frames.size()), cfg_)) {
            run_window(w, sums, coef_tcl, coef_pcl, grad);
        }
    }

private:
    double speed(int frame) const { return seq_.speeds.at(static_cast<std::size_t>(frame)); }

    void forward_step(int i, StepRecord& s) {
        const int dim = layout_.dim;
        const int half = layout_.obs_dim();
        const TrainFrame& fr = track_.frames[static_cast<std::size_t>(i)];
        if (i == 0) {
            const auto in = msnet_inputs(speed(fr.frame), *fr.det, dim);
            kf::Vector p = msnet::forward(params_, in, &s.p0_tape, msnet::kHeadP).p;
            p.tail(half) *= cfg_.rate_var_factor;
            states_[0] = kf::Vector::Zero(dim);
            states_[0].head(half) = *fr.det;
            covs_[0] = p.asDiagonal();
            return;
        }
        const kf::Vector& x_prev = states_[static_cast<std::size_t>(i - 1)];
        const double v_prev = speed(fr.frame - 1);
        const double v_cur = speed(fr.frame);
        const kf::Vector q =
            msnet::forward(params_, msnet_inputs(v_prev, x_prev, dim), &s.q_tape, msnet::kHeadQ).q;
        auto pred = kf::predict(x_prev, covs_[static_cast<std::size_t>(i - 1)], q);
        s.pred_clamped = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(dim, false);
        for (int k = 0; k < layout_.n_sizes(); ++k) {
            const int idx = layout_.size_offset() + k;
            if (pred.state[idx] < kf::kMinSize) {
                pred.state[idx] = kf::kMinSize;
                s.pred_clamped[idx] = true;
            }
        }
        s.cov_pred = pred.cov;
        s.has_det = fr.det.has_value();
        if (!s.has_det) {
            states_[static_cast<std::size_t>(i)] = std::move(pred.state);
            covs_[static_cast<std::size_t>(i)] = std::move(pred.cov);
            return;
        }
        const msnet::HeadMask heads = cfg_.posterior_override ? (msnet::kHeadR | msnet::kHeadP) : msnet::kHeadR;
        const auto out = msnet::forward(params_, msnet_inputs(v_cur, *fr.det, dim), &s.rp_tape, heads);
        std::optional<kf::Matrix> override_cov;
        if (cfg_.posterior_override) {
            override_cov = kf::Matrix(out.p.asDiagonal());
        }
        auto up = kf::update(pred.state, pred.cov, *fr.det, out.r, override_cov);
        s.gain = up.gain.gain;
        s.innovation_inv = up.gain.innovation_inv;
        s.innovation = up.innovation;
        s.r = out.r;
        s.post_clamped = up.clamped;
        states_[static_cast<std::size_t>(i)] = std::move(up.state);
        covs_[static_cast<std::size_t>(i)] = std::move(up.cov);
    }

    void run_window(const Window& w, TermSums& sums, double coef_tcl, double coef_pcl, std::vector<double>* grad) {
        const int dim = layout_.dim;
        const int half = layout_.obs_dim();
        const int nsp = layout_.spatial_dims();
        const int len = w.end - w.begin;
        std::vector<StepRecord> steps(static_cast<std::size_t>(len));
        for (int i = w.begin; i < w.end; ++i) {
            forward_step(i, steps[static_cast<std::size_t>(i - w.begin)]);
        }

        std::vector<kf::Vector> gx_loss(static_cast<std::size_t>(len), kf::Vector::Zero(dim));
        losses::Trajectory traj;
        bool embeddings_complete = true;
        for (int i = w.loss_begin; i < w.end; ++i) {
            const TrainFrame& fr = track_.frames[static_cast<std::size_t>(i)];
            const kf::Vector& x = states_[static_cast<std::size_t>(i)];
            Eigen::VectorXd g;
            sums.pcl += losses::ciou_loss(x.head(half), fr.gt, grad ? &g : nullptr);
            sums.pcl_count += 1;
            if (grad) {
                gx_loss[static_cast<std::size_t>(i - w.begin)].head(half) += coef_pcl * g;
            }
            if (fr.det_embedding && fr.gt_embedding) {
                sums.scl += losses::cosine_distance(*fr.det_embedding, *fr.gt_embedding);
                sums.scl_count += 1;
            }
            traj.centers.push_back(x.head(nsp) / seq_.center_scale);
            if (held_embedding_[static_cast<std::size_t>(i)]) {
                traj.embeddings.push_back(*held_embedding_[static_cast<std::size_t>(i)]);
            } else {
                embeddings_complete = false;
            }
        }
        if (!embeddings_complete) {
            traj.embeddings.clear();
        }
        std::vector<losses::TrajectoryGrad> tg;
        sums.tcl += losses::tcl(std::span<const losses::Trajectory>(&traj, 1), cfg_.weights, grad ? &tg : nullptr);
        sums.tcl_count += 1;
        if (!grad) {
            return;
        }
        for (int i = w.loss_begin; i < w.end; ++i) {
            gx_loss[static_cast<std::size_t>(i - w.begin)].head(nsp) +=
                coef_tcl * tg[0].centers[static_cast<std::size_t>(i - w.loss_begin)] / seq_.center_scale;
        }
        backward_window(w, steps, gx_loss, *grad);
    }

    void backward_window(const Window& w, std::vector<StepRecord>& steps, const std::vector<kf::Vector>& gx_loss,
                         std::vector<double>& grad) {
        const int dim = layout_.dim;
        const int half = layout_.obs_dim();
        kf::Vector gx = kf::Vector::Zero(dim);
        kf::Matrix gp = kf::Matrix::Zero(dim, dim);
        for (int i = w.end - 1; i >= w.begin; --i) {
            StepRecord& s = steps[static_cast<std::size_t>(i - w.begin)];
            gx += gx_loss[static_cast<std::size_t>(i - w.begin)];
            if (i == 0) {
                msnet::Outputs go;
                go.p = gp.diagonal();
                go.p.tail(half) *= cfg_.rate_var_factor;
                msnet::backward_accumulate(params_, s.p0_tape, go, grad, {});
                return;
            }
            kf::Vector gx_pred;
            kf::Matrix gp_pred;
            if (s.has_det) {
                for (int k = 0; k < dim; ++k) {
                    if (s.post_clamped[k]) {
                        gx[k] = 0.0;
                    }
                }
                msnet::Outputs go;
                kf::Vector r_bar = kf::Vector::Zero(half);
                kf::Matrix gk = kf::Matrix::Zero(dim, half);
                if (cfg_.posterior_override) {
                    go.p = gp.diagonal();
                    gp_pred = kf::Matrix::Zero(dim, dim);
                } else {
                    const kf::Matrix g_sym = 0.5 * (gp + gp.transpose());
                    const kf::Matrix b = kf::Matrix::Identity(dim, dim) - s.gain * h_;
                    gp_pred = b.transpose() * g_sym * b;
                    gk += -2.0 * g_sym * b * s.cov_pred * h_.transpose() + 2.0 * g_sym * s.gain * s.r.asDiagonal();
                    r_bar += (s.gain.transpose() * g_sym * s.gain).diagonal();
                }
                gk += gx * s.innovation.transpose();
                const kf::Vector y_bar = s.gain.transpose() * gx;
                gx_pred = gx - h_.transpose() * y_bar;
                const kf::Matrix a = s.cov_pred * h_.transpose();
                const kf::Matrix a_bar = gk * s.innovation_inv.transpose();
                const kf::Matrix sinv_bar = a.transpose() * gk;
                const kf::Matrix s_bar = -s.innovation_inv.transpose() * sinv_bar * s.innovation_inv.transpose();
                gp_pred += a_bar * h_ + h_.transpose() * s_bar * h_;
                r_bar += s_bar.diagonal();
                go.r = r_bar;
                msnet::backward_accumulate(params_, s.rp_tape, go, grad, {});
            } else {
                gx_pred = gx;
                gp_pred = gp;
            }
            for (int k = 0; k < dim; ++k) {
                if (s.pred_clamped[k]) {
                    gx_pred[k] = 0.0;
                }
            }
            gx = f_.transpose() * gx_pred;
            gp = f_.transpose() * gp_pred * f_;
            msnet::Outputs gq;
            gq.q = gp_pred.diagonal();
            std::vector<double> gin(static_cast<std::size_t>(params_.config.n_tokens), 0.0);
            msnet::backward_accumulate(params_, s.q_tape, gq, grad, gin);
            if (i == w.begin) {
                return;  // the state before the window is treated as a constant
            }
            for (int k = 0; k < layout_.n_sizes(); ++k) {
                gx[layout_.size_offset() + k] += gin[static_cast<std::size_t>(1 + k)];
            }
        }
    }

    const TrainSequence& seq_;
    const TrainTrack& track_;
    const msnet::MSNetParams& params_;
    const TrainConfig& cfg_;
    kf::StateLayout layout_;
    kf::Matrix f_;
    kf::Matrix h_;
    std::vector<kf::Vector> states_;
    std::vector<kf::Matrix> covs_;
    std::vector<std::optional<Eigen::VectorXd>> held_embedding_;
};

void check_sequence(const TrainSequence& seq, const msnet::MSNetParams& params) {
    if (params.config.q_dim != seq.state_dim) {
        throw ShapeError("MSNet config does not match the sequence state dimension");
    }
}

BatchResult rollout_batch(const std::vector<const TrainSequence*>& batch, const msnet::MSNetParams& params,
                          const TrainConfig& cfg, const losses::LossWeights& weights, bool with_grad) {
    BatchResult out;
    TermSums counts;
    for (const auto* s : batch) {
        counts += count_terms(*s, cfg);
    }
    if (with_grad) {
        out.grad_params.assign(params.values.size(), 0.0);
    }
    if (counts.pcl_count == 0) {
        out.no_matches = true;
        out.loss = losses::total_loss(0.0, 0.0, 0.0, weights);
        return out;
    }
    const double coef_tcl = counts.tcl_count > 0 ? 1.0 / static_cast<double>(counts.tcl_count) : 0.0;
    const double coef_pcl = weights.beta() / static_cast<double>(counts.pcl_count);
    for (const auto* s : batch) {
        out.sums += rollout(*s, params, cfg, coef_tcl, coef_pcl, with_grad ? &out.grad_params : nullptr);
    }
    const auto mean = [](double sum, long n) { return n > 0 ? sum / static_cast<double>(n) : 0.0; };
    out.loss = losses::total_loss(mean(out.sums.tcl, out.sums.tcl_count), mean(out.sums.scl, out.sums.scl_count),
                                  mean(out.sums.pcl, out.sums.pcl_count), weights);
    return out;
}

}  // namespace

TermSums count_terms(const TrainSequence& seq, const TrainConfig& cfg) {
    TermSums c;
    for (const auto& tr : seq.tracks) {
        for (const auto& w : windows_for(static_cast<int>(tr.frames.size()), cfg)) {
            c.pcl_count += w.end - w.loss_begin;
            c.tcl_count += 1;
            for (int i = w.loss_begin; i < w.end; ++i) {
                const auto& f = tr.frames[static_cast<std::size_t>(i)];
                if (f.det_embedding && f.gt_embedding) {
                    c.scl_count += 1;
                }
            }
        }
    }
    return c;
}

TermSums rollout(const TrainSequence& seq, const msnet::MSNetParams& params, const TrainConfig& cfg,
                 double coef_tcl, double coef_pcl, std::vector<double>* grad) {
    check_sequence(seq, params);
    if (grad && grad->size() != params.values.size()) {
        throw ShapeError("gradient buffer does not match the parameters");
    }
    TermSums sums;
    for (const auto& tr : seq.tracks) {
        if (tr.frames.empty() || !tr.frames.front().det) {
            throw ShapeError("training track must start at a matched detection");
        }
        TrackRollout roll(seq, tr, params, cfg);
        roll.run(sums, coef_tcl, coef_pcl, grad);
    }
    return sums;
}

BatchResult rollout_and_grad(std::span<const TrainSequence> batch, const msnet::MSNetParams& params,
                             const TrainConfig& cfg, const losses::LossWeights& weights, bool with_grad) {
    std::vector<const TrainSequence*> ptrs;
    for (const auto& s : batch) {
        ptrs.push_back(&s);
    }
    return rollout_batch(ptrs, params, cfg, weights, with_grad);
}

std::string epoch_json(const EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["lr"] = m.lr;
    j["loss"] = m.loss;
    j["tcl"] = m.tcl;
    j["scl"] = m.scl;
    j["pcl"] = m.pcl;
    j["alpha"] = m.alpha;
    j["beta"] = m.beta;
    j["skipped_steps"] = m.skipped_steps;
    return j.dump();
}

TrainResult train(std::span<const TrainSequence> data, const TrainConfig& cfg, std::optional<msnet::MSNetParams> init,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
    cfg.validate();
    if (data.empty()) {
        throw ConfigError("training needs at least one sequence");
    }
    const int dim = data.front().state_dim;
    for (const auto& s : data) {
        if (s.state_dim != dim) {
            throw ConfigError("training sequences mix 2D and 3D");
        }
    }
    TrainResult res;
    res.params = init ? std::move(*init) : msnet::init_params(msnet::MSNetConfig::for_state_dim(dim), cfg.seed);
    res.weights = cfg.weights;

    const std::size_t n = res.params.values.size();
    std::vector<char> mask = decay_mask(res.params.config);
    mask.push_back(0);
    mask.push_back(0);
    std::vector<double> theta = res.params.values;
    theta.push_back(res.weights.alpha_raw);
    theta.push_back(res.weights.beta_raw);
    AdamState adam;

    std::vector<std::size_t> order(data.size());
    for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1));
        std::shuffle(order.begin(), order.end(), rng);

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            std::vector<const TrainSequence*> batch;
            for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch)); ++k) {
                batch.push_back(&data[order[k]]);
            }
            auto br = rollout_batch(batch, res.params, cfg, res.weights, true);
            em.loss += br.loss.total;
            em.tcl += br.loss.tcl;
            em.scl += br.loss.scl;
            em.pcl += br.loss.pcl;
            batches += 1;
            if (br.no_matches) {
                continue;
            }
            std::vector<double> g = std::move(br.grad_params);
            g.push_back(res.weights.trainable ? br.loss.grad_alpha_raw : 0.0);
            g.push_back(res.weights.trainable ? br.loss.grad_beta_raw : 0.0);
            if (cfg.grad_clip > 0.0) {
                double norm2 = 0.0;
                for (double v : g) {
                    norm2 += v * v;
                }
                const double norm = std::sqrt(norm2);
                if (norm > cfg.grad_clip) {
                    for (double& v : g) {
                        v *= cfg.grad_clip / norm;
                    }
                }
            }
            if (!optimizer_step(theta, g, adam, lr, cfg.weight_decay, mask)) {
                em.skipped_steps += 1;
                continue;
            }
            std::copy(theta.begin(), theta.begin() + static_cast<long>(n), res.params.values.begin());
            res.weights.alpha_raw = theta[n];
            res.weights.beta_raw = theta[n + 1];
        }
        if (batches > 0) {
            em.loss /= batches;
            em.tcl /= batches;
            em.scl /= batches;
            em.pcl /= batches;
        }
        em.alpha = res.weights.alpha();
        em.beta = res.weights.beta();
        res.curve.push_back(em);
        if (on_epoch) {
            on_epoch(em);
        }
    }
    return res;
}

}  // namespace speedtrack::train
