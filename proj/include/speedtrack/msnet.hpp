#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace speedtrack::msnet {

/// MotionScaleNet: maps [v (km/h), w, h(, l)] to positive diagonal entries
/// for the process noise Q, observation noise R and posterior covariance P.
///
/// Each scalar input is its own token, embedded by a per-token affine map to
/// C channels. L residual layers alternate token mixing (odd layers, an MLP
/// across tokens applied per channel) and channel mixing (even layers, an
/// MLP across channels applied per token), each behind a LayerNorm. The
/// token grid is flattened into three regression heads whose outputs pass
/// through softplus(x) + 1e-6 and are scaled by a fixed variance unit.
struct MSNetConfig {
    int n_tokens = 3;
    int channels = 64;
    int layers = 6;
    int token_hidden = 8;
    int channel_hidden = 128;
    int head_hidden = 48;
    int q_dim = 8;
    int r_dim = 4;
    int p_dim = 8;
    /// One backbone feeding all three heads; false gives each head its own backbone.
    bool shared_backbone = true;

    static MSNetConfig for_state_dim(int state_dim);
    void validate() const;
    bool operator==(const MSNetConfig&) const = default;
};

/// Fixed scales stored alongside the weights in every checkpoint.
struct Normalization {
    double speed_scale = 100.0;  ///< km/h
    double size_scale = 100.0;   ///< px in 2D, 10 m in 3D
    double output_unit = 100.0;  ///< variance unit multiplying the softplus outputs

    static Normalization for_state_dim(int state_dim);
    bool operator==(const Normalization&) const = default;
};

enum class ParamGroup { Weight, Bias, Norm };

struct TensorInfo {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    ParamGroup group = ParamGroup::Weight;
    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Offsets of every tensor inside the flat parameter vector. Tensors are
/// stored column-major, in the order listed by `tensors()`:
/// per backbone: embed.w (T×C), embed.b (T×C), then per layer
/// ln.gamma (1×C), ln.beta (1×C), fc1.w, fc1.b, fc2.w, fc2.b;
/// then per head (Q, R, P): fc1.w (hidden×T·C), fc1.b, fc2.w (out×hidden), fc2.b.
class ParamLayout {
public:
    explicit ParamLayout(const MSNetConfig& config);

    struct MixLayer {
        bool token_mixing = true;
        std::size_t ln_gamma = 0, ln_beta = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0;
    };
    struct Backbone {
        std::size_t embed_w = 0, embed_b = 0;
        std::vector<MixLayer> layers;
    };
    struct Head {
        std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
        int out = 0;
        int backbone = 0;
    };

    std::size_t total() const { return total_; }
    const std::vector<TensorInfo>& tensors() const { return tensors_; }
    const std::vector<Backbone>& backbones() const { return backbones_; }
    const std::array<Head, 3>& heads() const { return heads_; }

private:
    std::size_t add(std::string name, int rows, int cols, ParamGroup group);

    std::size_t total_ = 0;
    std::vector<TensorInfo> tensors_;
    std::vector<Backbone> backbones_;
    std::array<Head, 3> heads_{};
};

struct MSNetParams {
    MSNetConfig config;
    Normalization norm;
    std::vector<double> values;

    ParamLayout layout() const { return ParamLayout(config); }
};

/// Exact number of scalars in MSNetParams::values.
std::size_t param_count(const MSNetConfig& config);

/// Deterministic fan-in scaled uniform initialisation, U(±1/√fan_in) for
/// weights and biases; LayerNorm gamma = 1, beta = 0.
MSNetParams init_params(const MSNetConfig& config, std::uint64_t seed,
                        const std::optional<Normalization>& norm = {});

enum Head : int { kQ = 0, kR = 1, kP = 2 };

/// Bit set over heads; only requested heads (and the backbones they need) run.
using HeadMask = unsigned;
inline constexpr HeadMask kHeadQ = 1u << kQ;
inline constexpr HeadMask kHeadR = 1u << kR;
inline constexpr HeadMask kHeadP = 1u << kP;
inline constexpr HeadMask kAllHeads = kHeadQ | kHeadR | kHeadP;

struct Outputs {
    Eigen::VectorXd q;  ///< empty unless requested
    Eigen::VectorXd r;
    Eigen::VectorXd p;

    const Eigen::VectorXd& head(int k) const { return k == kQ ? q : (k == kR ? r : p); }
};

class ForwardTape;

/// Evaluates the requested heads. Throws NumericError on non-finite input or
/// negative speed, ShapeError when the input count differs from n_tokens.
Outputs forward(const MSNetParams& params, std::span<const double> inputs,
                ForwardTape* tape = nullptr, HeadMask heads = kAllHeads);

/// Reverse pass. `grad_outputs` holds one vector per head; empty vectors
/// mean zero. Gradients are accumulated into the given spans; grad_inputs
/// may be empty when input gradients are not needed.
void backward_accumulate(const MSNetParams& params, const ForwardTape& tape,
                         const Outputs& grad_outputs, std::span<double> grad_params,
                         std::span<double> grad_inputs);

/// Activations recorded by a forward pass, enough to run it in reverse.
class ForwardTape {
public:
    const std::vector<double>& inputs() const { return inputs_; }
    HeadMask heads() const { return heads_; }
    const Outputs& outputs() const { return outputs_; }

private:
    friend Outputs forward(const MSNetParams&, std::span<const double>, ForwardTape*, HeadMask);
    friend void backward_accumulate(const MSNetParams&, const ForwardTape&, const Outputs&,
                                    std::span<double>, std::span<double>);

    struct LayerTape {
        Eigen::MatrixXd xhat;   // normalised rows before the LN affine
        Eigen::VectorXd rstd;   // 1/σ per token
        Eigen::MatrixXd z;      // LN output fed to the MLP
        Eigen::MatrixXd hidden; // GELU output
        Eigen::MatrixXd dgelu;  // GELU'(pre-activation)
    };
    struct BackboneTape {
        bool used = false;
        Eigen::VectorXd scaled;  // normalised inputs
        std::vector<LayerTape> layers;
        Eigen::VectorXd flat;    // final token grid, row-major (token, channel)
    };
    struct HeadTape {
        Eigen::VectorXd hidden;
        Eigen::VectorXd dgelu;
        Eigen::VectorXd dsoftplus;  // sigmoid(pre-activation)
    };

    std::vector<double> inputs_;
    HeadMask heads_ = 0;
    std::vector<BackboneTape> backbones_;
    std::array<HeadTape, 3> head_tapes_;
    Outputs outputs_;
};

/// Re-runs the forward pass recorded on a tape.
Outputs replay(const MSNetParams& params, const ForwardTape& tape);

struct Gradients {
    std::vector<double> params;
    std::vector<double> inputs;  ///< d/d raw input (km/h, size units)
};

Gradients backward(const MSNetParams& params, const ForwardTape& tape, const Outputs& grad_outputs);

/// Binary checkpoint: "MSN1", ten little-endian u32 config fields
/// (n_tokens, channels, layers, token_hidden, channel_hidden, head_hidden,
/// q_dim, r_dim, p_dim, shared_backbone), u64 parameter count, the f64
/// parameters in ParamLayout order, then three f64 normalisation constants
/// (speed_scale, size_scale, output_unit).
void save(const MSNetParams& params, const std::filesystem::path& path);
MSNetParams load(const std::filesystem::path& path,
                 const std::optional<MSNetConfig>& expected = {});

}  // namespace speedtrack::msnet
