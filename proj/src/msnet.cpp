#include "speedtrack/msnet.hpp"

#include "speedtrack/errors.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace speedtrack::msnet {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMap = Eigen::Map<const Mat>;
using MMap = Eigen::Map<Mat>;
using CVecMap = Eigen::Map<const Vec>;
using MVecMap = Eigen::Map<Vec>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kSoftplusFloor = 1e-6;

const ParamLayout& cached_layout(const MSNetConfig& config) {
    thread_local MSNetConfig key{};
    thread_local std::optional<ParamLayout> layout;
    if (!layout || !(key == config)) {
        layout.emplace(config);
        key = config;
    }
    return *layout;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Exact GELU x·Φ(x); writes the activation and its derivative Φ(x) + x·φ(x).
template <class In, class Out>
void gelu(const In& pre, Out& act, Out& deriv) {
    constexpr double inv_sqrt2 = 0.7071067811865476;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    act.resize(pre.rows(), pre.cols());
    deriv.resize(pre.rows(), pre.cols());
    for (Eigen::Index j = 0; j < pre.cols(); ++j) {
        for (Eigen::Index i = 0; i < pre.rows(); ++i) {
            const double x = pre(i, j);
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            act(i, j) = x * cdf;
            deriv(i, j) = cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        }
    }
}

}  // namespace

MSNetConfig MSNetConfig::for_state_dim(int state_dim) {
    MSNetConfig cfg;
    if (state_dim == 8) {
        return cfg;
    }
    if (state_dim != 12) {
        throw ConfigError("MSNet supports state dimension 8 or 12");
    }
    cfg.n_tokens = 4;
    cfg.q_dim = 12;
    cfg.r_dim = 6;
    cfg.p_dim = 12;
    return cfg;
}

void MSNetConfig::validate() const {
    if (n_tokens != 3 && n_tokens != 4) {
        throw ConfigError("MSNet n_tokens must be 3 (2D) or 4 (3D)");
    }
    if (layers <= 0 || layers % 2 != 0) {
        throw ConfigError("MSNet layer count must be a positive even number");
    }
    if (channels <= 0 || token_hidden <= 0 || channel_hidden <= 0 || head_hidden <= 0 ||
        q_dim <= 0 || r_dim <= 0 || p_dim <= 0) {
        throw ConfigError("MSNet dimensions must be positive");
    }
}

Normalization Normalization::for_state_dim(int state_dim) {
    if (state_dim == 12) {
        return Normalization{100.0, 10.0, 0.1};
    }
    return Normalization{};
}

ParamLayout::ParamLayout(const MSNetConfig& config) {
    config.validate();
    const int t = config.n_tokens;
    const int c = config.channels;
    const int n_backbones = config.shared_backbone ? 1 : 3;
    for (int b = 0; b < n_backbones; ++b) {
        const std::string prefix = "backbone" + std::to_string(b) + ".";
        Backbone bb;
        bb.embed_w = add(prefix + "embed.w", t, c, ParamGroup::Weight);
        bb.embed_b = add(prefix + "embed.b", t, c, ParamGroup::Bias);
        for (int l = 0; l < config.layers; ++l) {
            const std::string lp = prefix + "layer" + std::to_string(l) + ".";
            MixLayer layer;
            // Layers are numbered from 1 in the residual recursion: odd mixes tokens.
            layer.token_mixing = (l % 2 == 0);
            layer.ln_gamma = add(lp + "ln.gamma", 1, c, ParamGroup::Norm);
            layer.ln_beta = add(lp + "ln.beta", 1, c, ParamGroup::Norm);
            if (layer.token_mixing) {
                layer.w1 = add(lp + "fc1.w", config.token_hidden, t, ParamGroup::Weight);
                layer.b1 = add(lp + "fc1.b", config.token_hidden, 1, ParamGroup::Bias);
                layer.w2 = add(lp + "fc2.w", t, config.token_hidden, ParamGroup::Weight);
                layer.b2 = add(lp + "fc2.b", t, 1, ParamGroup::Bias);
            } else {
                layer.w1 = add(lp + "fc1.w", config.channel_hidden, c, ParamGroup::Weight);
                layer.b1 = add(lp + "fc1.b", config.channel_hidden, 1, ParamGroup::Bias);
                layer.w2 = add(lp + "fc2.w", c, config.channel_hidden, ParamGroup::Weight);
                layer.b2 = add(lp + "fc2.b", c, 1, ParamGroup::Bias);
            }
            bb.layers.push_back(layer);
        }
        backbones_.push_back(std::move(bb));
    }
    const std::array<const char*, 3> names{"q", "r", "p"};
    const std::array<int, 3> outs{config.q_dim, config.r_dim, config.p_dim};
    for (int k = 0; k < 3; ++k) {
        const std::string hp = std::string("head.") + names[static_cast<std::size_t>(k)] + ".";
        Head head;
        head.out = outs[static_cast<std::size_t>(k)];
        head.backbone = config.shared_backbone ? 0 : k;
        head.w1 = add(hp + "fc1.w", config.head_hidden, t * c, ParamGroup::Weight);
        head.b1 = add(hp + "fc1.b", config.head_hidden, 1, ParamGroup::Bias);
        head.w2 = add(hp + "fc2.w", head.out, config.head_hidden, ParamGroup::Weight);
        head.b2 = add(hp + "fc2.b", head.out, 1, ParamGroup::Bias);
        heads_[static_cast<std::size_t>(k)] = head;
    }
}

std::size_t ParamLayout::add(std::string name, int rows, int cols, ParamGroup group) {
    TensorInfo info{std::move(name), total_, rows, cols, group};
    total_ += info.size();
    tensors_.push_back(std::move(info));
    return tensors_.back().offset;
}

std::size_t param_count(const MSNetConfig& config) { return ParamLayout(config).total(); }

MSNetParams init_params(const MSNetConfig& config, std::uint64_t seed,
                        const std::optional<Normalization>& norm) {
    const ParamLayout layout(config);
    MSNetParams params;
    params.config = config;
    params.norm = norm.value_or(Normalization::for_state_dim(config.q_dim));
    params.values.assign(layout.total(), 0.0);

    std::mt19937_64 rng(seed);
    // Fan-in of the layer each tensor belongs to, keyed by tensor shape role.
    auto fan_in_of = [&](const TensorInfo& info) -> int {
        if (info.name.find("embed") != std::string::npos) {
            return 1;
        }
        if (info.name.ends_with(".w")) {
            return info.cols;
        }
        // A bias shares the fan-in of the weight stored right before it.
        return 0;
    };
    int last_fan_in = 1;
    for (const auto& info : layout.tensors()) {
        double* dst = params.values.data() + info.offset;
        if (info.group == ParamGroup::Norm) {
            const double fill = info.name.ends_with("gamma") ? 1.0 : 0.0;
            std::fill(dst, dst + info.size(), fill);
            continue;
        }
        int fan_in = fan_in_of(info);
        if (fan_in == 0) {
            fan_in = last_fan_in;
        }
        last_fan_in = fan_in;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < info.size(); ++i) {
            dst[i] = dist(rng);
        }
    }
    return params;
}

Outputs forward(const MSNetParams& params, std::span<const double> inputs, ForwardTape* tape_ptr,
                HeadMask heads) {
    const auto& cfg = params.config;
    const auto& layout = cached_layout(cfg);
    if (params.values.size() != layout.total()) {
        throw ShapeError("MSNet parameter vector does not match its config");
    }
    if (static_cast<int>(inputs.size()) != cfg.n_tokens) {
        throw ShapeError("MSNet expects " + std::to_string(cfg.n_tokens) + " inputs, got " +
                         std::to_string(inputs.size()));
    }
    for (double x : inputs) {
        if (!std::isfinite(x)) {
            throw NumericError("non-finite MSNet input");
        }
    }
    if (inputs[0] < 0.0) {
        throw NumericError("MSNet speed input must be nonnegative");
    }

    ForwardTape local;
    ForwardTape& tape = tape_ptr ? *tape_ptr : local;
    tape.inputs_.assign(inputs.begin(), inputs.end());
    tape.heads_ = heads;
    tape.backbones_.resize(layout.backbones().size());
    tape.outputs_ = Outputs{};

    const double* p = params.values.data();
    const int t = cfg.n_tokens;
    const int c = cfg.channels;

    for (std::size_t b = 0; b < layout.backbones().size(); ++b) {
        auto& bt = tape.backbones_[b];
        bt.used = false;
        for (int k = 0; k < 3; ++k) {
            if ((heads & (1u << k)) && layout.heads()[static_cast<std::size_t>(k)].backbone == static_cast<int>(b)) {
                bt.used = true;
            }
        }
        if (!bt.used) {
            continue;
        }
        const auto& bb = layout.backbones()[b];
        bt.scaled.resize(t);
        bt.scaled[0] = inputs[0] / params.norm.speed_scale;
        for (int i = 1; i < t; ++i) {
            bt.scaled[i] = inputs[static_cast<std::size_t>(i)] / params.norm.size_scale;
        }

        const CMap we(p + bb.embed_w, t, c);
        const CMap be(p + bb.embed_b, t, c);
        Mat x(t, c);
        for (int i = 0; i < t; ++i) {
            x.row(i) = bt.scaled[i] * we.row(i) + be.row(i);
        }

        bt.layers.resize(bb.layers.size());
        for (std::size_t l = 0; l < bb.layers.size(); ++l) {
            const auto& lay = bb.layers[l];
            auto& lt = bt.layers[l];
            const Eigen::Map<const Eigen::RowVectorXd> gamma(p + lay.ln_gamma, c);
            const Eigen::Map<const Eigen::RowVectorXd> beta(p + lay.ln_beta, c);

            lt.xhat.resize(t, c);
            lt.rstd.resize(t);
            for (int i = 0; i < t; ++i) {
                const double mean = x.row(i).mean();
                const double var = (x.row(i).array() - mean).square().mean();
                lt.rstd[i] = 1.0 / std::sqrt(var + kLayerNormEps);
                lt.xhat.row(i) = (x.row(i).array() - mean) * lt.rstd[i];
            }
            lt.z = (lt.xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();

            if (lay.token_mixing) {
                const CMap w1(p + lay.w1, cfg.token_hidden, t);
                const CVecMap b1(p + lay.b1, cfg.token_hidden);
                const CMap w2(p + lay.w2, t, cfg.token_hidden);
                const CVecMap b2(p + lay.b2, t);
                const Mat pre = (w1 * lt.z).colwise() + b1;
                gelu(pre, lt.hidden, lt.dgelu);
                x.noalias() += w2 * lt.hidden;
                x.colwise() += b2;
            } else {
                const CMap w1(p + lay.w1, cfg.channel_hidden, c);
                const CVecMap b1(p + lay.b1, cfg.channel_hidden);
                const CMap w2(p + lay.w2, c, cfg.channel_hidden);
                const CVecMap b2(p + lay.b2, c);
                const Mat pre = (lt.z * w1.transpose()).rowwise() + b1.transpose();
                gelu(pre, lt.hidden, lt.dgelu);
                x.noalias() += lt.hidden * w2.transpose();
                x.rowwise() += b2.transpose();
            }
        }

        bt.flat.resize(t * c);
        for (int i = 0; i < t; ++i) {
            bt.flat.segment(i * c, c) = x.row(i).transpose();
        }
    }

    for (int k = 0; k < 3; ++k) {
        if (!(heads & (1u << k))) {
            continue;
        }
        const auto& hd = layout.heads()[static_cast<std::size_t>(k)];
        auto& ht = tape.head_tapes_[static_cast<std::size_t>(k)];
        const auto& flat = tape.backbones_[static_cast<std::size_t>(hd.backbone)].flat;
        const CMap w1(p + hd.w1, cfg.head_hidden, t * c);
        const CVecMap b1(p + hd.b1, cfg.head_hidden);
        const CMap w2(p + hd.w2, hd.out, cfg.head_hidden);
        const CVecMap b2(p + hd.b2, hd.out);
        const Vec pre = w1 * flat + b1;
        gelu(pre, ht.hidden, ht.dgelu);
        const Vec a = w2 * ht.hidden + b2;
        Vec out(hd.out);
        ht.dsoftplus.resize(hd.out);
        for (int i = 0; i < hd.out; ++i) {
            out[i] = (softplus(a[i]) + kSoftplusFloor) * params.norm.output_unit;
            ht.dsoftplus[i] = sigmoid(a[i]);
        }
        (k == kQ ? tape.outputs_.q : (k == kR ? tape.outputs_.r : tape.outputs_.p)) = std::move(out);
    }
    return tape.outputs_;
}

Outputs replay(const MSNetParams& params, const ForwardTape& tape) {
    return forward(params, tape.inputs(), nullptr, tape.heads());
}

void backward_accumulate(const MSNetParams& params, const ForwardTape& tape,
                         const Outputs& grad_outputs, std::span<double> grad_params,
                         std::span<double> grad_inputs) {
    const auto& cfg = params.config;
    const auto& layout = cached_layout(cfg);
    if (grad_params.size() != layout.total() || tape.inputs_.size() != static_cast<std::size_t>(cfg.n_tokens) ||
        tape.backbones_.size() != layout.backbones().size()) {
        throw ShapeError("MSNet backward: tape or gradient buffer does not match the parameters");
    }
    if (!grad_inputs.empty() && grad_inputs.size() != static_cast<std::size_t>(cfg.n_tokens)) {
        throw ShapeError("MSNet backward: input gradient buffer has the wrong size");
    }

    const double* p = params.values.data();
    double* g = grad_params.data();
    const int t = cfg.n_tokens;
    const int c = cfg.channels;

    std::vector<Vec> dflat(layout.backbones().size());
    bool any = false;
    for (int k = 0; k < 3; ++k) {
        const Vec& go = grad_outputs.head(k);
        if (go.size() == 0) {
            continue;
        }
        if (!(tape.heads_ & (1u << k))) {
            throw ShapeError("MSNet backward: gradient supplied for a head the tape did not record");
        }
        const auto& hd = layout.heads()[static_cast<std::size_t>(k)];
        if (go.size() != hd.out) {
            throw ShapeError("MSNet backward: head gradient has the wrong size");
        }
        const auto& ht = tape.head_tapes_[static_cast<std::size_t>(k)];
        const auto& flat = tape.backbones_[static_cast<std::size_t>(hd.backbone)].flat;

        const Vec da = (go.array() * ht.dsoftplus.array() * params.norm.output_unit).matrix();
        MMap(g + hd.w2, hd.out, cfg.head_hidden).noalias() += da * ht.hidden.transpose();
        MVecMap(g + hd.b2, hd.out) += da;
        const CMap w2(p + hd.w2, hd.out, cfg.head_hidden);
        const Vec dpre = ((w2.transpose() * da).array() * ht.dgelu.array()).matrix();
        MMap(g + hd.w1, cfg.head_hidden, t * c).noalias() += dpre * flat.transpose();
        MVecMap(g + hd.b1, cfg.head_hidden) += dpre;
        const CMap w1(p + hd.w1, cfg.head_hidden, t * c);
        auto& df = dflat[static_cast<std::size_t>(hd.backbone)];
        if (df.size() == 0) {
            df = Vec::Zero(t * c);
        }
        df.noalias() += w1.transpose() * dpre;
        any = true;
    }
    if (!any) {
        return;
    }

    for (std::size_t b = 0; b < layout.backbones().size(); ++b) {
        if (dflat[b].size() == 0) {
            continue;
        }
        const auto& bb = layout.backbones()[b];
        const auto& bt = tape.backbones_[b];
        Mat dx(t, c);
        for (int i = 0; i < t; ++i) {
            dx.row(i) = dflat[b].segment(i * c, c).transpose();
        }

        for (std::size_t li = bb.layers.size(); li-- > 0;) {
            const auto& lay = bb.layers[li];
            const auto& lt = bt.layers[li];
            Mat dz;
            if (lay.token_mixing) {
                const CMap w1(p + lay.w1, cfg.token_hidden, t);
                const CMap w2(p + lay.w2, t, cfg.token_hidden);
                MMap(g + lay.w2, t, cfg.token_hidden).noalias() += dx * lt.hidden.transpose();
                MVecMap(g + lay.b2, t) += dx.rowwise().sum();
                const Mat dpre = ((w2.transpose() * dx).array() * lt.dgelu.array()).matrix();
                MMap(g + lay.w1, cfg.token_hidden, t).noalias() += dpre * lt.z.transpose();
                MVecMap(g + lay.b1, cfg.token_hidden) += dpre.rowwise().sum();
                dz.noalias() = w1.transpose() * dpre;
            } else {
                const CMap w1(p + lay.w1, cfg.channel_hidden, c);
                const CMap w2(p + lay.w2, c, cfg.channel_hidden);
                MMap(g + lay.w2, c, cfg.channel_hidden).noalias() += dx.transpose() * lt.hidden;
                MVecMap(g + lay.b2, c) += dx.colwise().sum().transpose();
                const Mat dpre = ((dx * w2).array() * lt.dgelu.array()).matrix();
                MMap(g + lay.w1, cfg.channel_hidden, c).noalias() += dpre.transpose() * lt.z;
                MVecMap(g + lay.b1, cfg.channel_hidden) += dpre.colwise().sum().transpose();
                dz.noalias() = dpre * w1;
            }

            // LayerNorm, row by row; the residual path passes dx through unchanged.
            const Eigen::Map<const Eigen::RowVectorXd> gamma(p + lay.ln_gamma, c);
            Eigen::Map<Eigen::RowVectorXd> dgamma(g + lay.ln_gamma, c);
            Eigen::Map<Eigen::RowVectorXd> dbeta(g + lay.ln_beta, c);
            dgamma += (dz.array() * lt.xhat.array()).colwise().sum().matrix();
            dbeta += dz.colwise().sum();
            for (int i = 0; i < t; ++i) {
                const Eigen::RowVectorXd dxhat = dz.row(i).cwiseProduct(gamma);
                const double mean_d = dxhat.mean();
                const double mean_dx = dxhat.cwiseProduct(lt.xhat.row(i)).mean();
                dx.row(i) += lt.rstd[i] *
                             (dxhat.array() - mean_d - lt.xhat.row(i).array() * mean_dx).matrix();
            }
        }

        const CMap we(p + bb.embed_w, t, c);
        MMap dwe(g + bb.embed_w, t, c);
        MMap(g + bb.embed_b, t, c) += dx;
        for (int i = 0; i < t; ++i) {
            dwe.row(i) += bt.scaled[i] * dx.row(i);
            if (!grad_inputs.empty()) {
                const double scale = i == 0 ? params.norm.speed_scale : params.norm.size_scale;
                grad_inputs[static_cast<std::size_t>(i)] += dx.row(i).dot(we.row(i)) / scale;
            }
        }
    }
}

Gradients backward(const MSNetParams& params, const ForwardTape& tape, const Outputs& grad_outputs) {
    Gradients out;
    out.params.assign(params.values.size(), 0.0);
    out.inputs.assign(static_cast<std::size_t>(params.config.n_tokens), 0.0);
    backward_accumulate(params, tape, grad_outputs, out.params, out.inputs);
    return out;
}

namespace {

constexpr char kMagic[4] = {'M', 'S', 'N', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    }
    os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    }
    os.write(b, 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_uint(std::istream& is, int bytes, const std::string& what) {
    unsigned char b[8] = {};
    is.read(reinterpret_cast<char*>(b), bytes);
    if (is.gcount() != bytes) {
        throw ShapeError("checkpoint truncated while reading " + what);
    }
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

}  // namespace

void save(const MSNetParams& params, const std::filesystem::path& path) {
    const auto& cfg = params.config;
    if (params.values.size() != param_count(cfg)) {
        throw ShapeError("refusing to save parameters that do not match their config");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open checkpoint for writing: " + path.string());
    }
    os.write(kMagic, 4);
    for (int v : {cfg.n_tokens, cfg.channels, cfg.layers, cfg.token_hidden, cfg.channel_hidden,
                  cfg.head_hidden, cfg.q_dim, cfg.r_dim, cfg.p_dim, cfg.shared_backbone ? 1 : 0}) {
        put_u32(os, static_cast<std::uint32_t>(v));
    }
    put_u64(os, params.values.size());
    for (double v : params.values) {
        put_f64(os, v);
    }
    put_f64(os, params.norm.speed_scale);
    put_f64(os, params.norm.size_scale);
    put_f64(os, params.norm.output_unit);
    if (!os) {
        throw IoError("failed writing checkpoint: " + path.string());
    }
}

MSNetParams load(const std::filesystem::path& path, const std::optional<MSNetConfig>& expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open checkpoint: " + path.string());
    }
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4) {
        throw ShapeError("checkpoint truncated while reading magic");
    }
    if (!std::equal(magic, magic + 4, kMagic)) {
        throw FormatError("not an MSNet checkpoint (bad magic/version): " + path.string());
    }
    MSNetParams params;
    auto& cfg = params.config;
    int* fields[] = {&cfg.n_tokens, &cfg.channels, &cfg.layers, &cfg.token_hidden,
                     &cfg.channel_hidden, &cfg.head_hidden, &cfg.q_dim, &cfg.r_dim, &cfg.p_dim};
    for (int* f : fields) {
        *f = static_cast<int>(get_uint(is, 4, "config"));
    }
    cfg.shared_backbone = get_uint(is, 4, "config") != 0;
    cfg.validate();
    if (expected && !(*expected == cfg)) {
        throw ShapeError("checkpoint config does not match the expected MSNet config");
    }
    const std::uint64_t n = get_uint(is, 8, "parameter count");
    if (n != param_count(cfg)) {
        throw ShapeError("checkpoint parameter count " + std::to_string(n) +
                         " does not match its config (" + std::to_string(param_count(cfg)) + ")");
    }
    params.values.resize(n);
    for (auto& v : params.values) {
        v = std::bit_cast<double>(get_uint(is, 8, "parameters"));
    }
    params.norm.speed_scale = std::bit_cast<double>(get_uint(is, 8, "normalisation"));
    params.norm.size_scale = std::bit_cast<double>(get_uint(is, 8, "normalisation"));
    params.norm.output_unit = std::bit_cast<double>(get_uint(is, 8, "normalisation"));
    return params;
}

}  // namespace speedtrack::msnet
