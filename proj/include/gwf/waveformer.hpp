#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gwf/attention.hpp"
#include "gwf/geometry.hpp"
#include "gwf/graph_op.hpp"
#include "gwf/wavelet.hpp"

namespace gwf {

/// Per-channel normalization statistics (training split).
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stdev;
};

struct WaveformerConfig {
    // latent geometry
    std::array<int, 3> grid_resolution{6, 6, 6};
    double grid_pad = 0.05;
    GraphOpConfig graph;

    // field layout
    int field_channels = 1;              // d0
    std::vector<int> dataset_channels{0};  // dataset columns the model consumes
    int window = 10;                     // k

    // lifts (one hidden layer each)
    int lift_width = 16;
    int lift_hidden = 16;

    // dual-branch dynamics
    AttentionConfig attention;
    int wavelet_order = 4;
    int wavelet_levels = 1;
    BoundaryMode wavelet_mode = BoundaryMode::Symmetric;

    // modified variant: reduce the 3-D latent to a 2-D latent for the
    // transformer branches, expand afterwards
    bool use_reduction = false;
    int reduce_c1 = 8;
    int reduce_c2 = 8;

    std::uint64_t seed = 0;
};

/// Geometry-adaptive waveformer: graph-kernel encoder to a latent grid,
/// dual-branch transformer dynamics over a sliding window of latent fields,
/// graph-kernel decoder back to the cloud. Operates on normalized fields;
/// the stored NormStats map to and from physical units at the boundaries.
class GeoWaveformer {
public:
    GeoWaveformer(const PointCloud& cloud, WaveformerConfig cfg);

    const WaveformerConfig& config() const { return cfg_; }
    const LatentGrid& grid() const { return grid_; }
    const GeometryCodec& codec() const { return *codec_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const PointCloud& cloud() const { return cloud_; }

    NormStats& norm() { return norm_; }
    const NormStats& norm() const { return norm_; }

    /// Static-edge kernels evaluated once per parameter version; reuse the
    /// same session across all fields of one training or roll-out step.
    struct Session {
        GeometryCodec::KernelCache kernels;
    };
    Session begin_session() const;

    /// u: (N, d0) normalized field -> latent (c, S1, S2, S3).
    Tensor encode_field(const Tensor& u, const Session& s) const;
    /// latent -> (N, d0) normalized field.
    Tensor decode_latent(const Tensor& latent, const Session& s) const;

    /// Latent window u^g_{0:k} (k fields, k >= 2) -> next latent field.
    /// Splits into encoder sequence (first k-1) and decoder sequence
    /// (last k-1), lifts with P, runs the dual-branch integral layer,
    /// projects back with Q.
    Tensor waveformer_next(const std::vector<Tensor>& latent_window) const;

    /// Full step: encode every window field, advance, decode.
    Tensor predict_next(const std::vector<Tensor>& window_fields, const Session& s) const;

    // Pieces exposed for contract tests.
    Tensor lift(const Tensor& latent) const;                    // P
    Tensor unlift(const Tensor& lifted) const;                  // Q
    Tensor integral_layer(const std::vector<Tensor>& enc_seq,
                          const std::vector<Tensor>& dec_seq) const;
    Tensor reduce_latent(const Tensor& lifted3d) const;
    Tensor expand_latent(const Tensor& latent2d) const;
    Tensor wavelet_branch(const std::vector<Tensor>& enc_seq,
                          const std::vector<Tensor>& dec_seq) const;
    Tensor physical_branch(const std::vector<Tensor>& enc_seq,
                           const std::vector<Tensor>& dec_seq) const;
    const DwtPlan& dwt_plan() const { return *plan_; }
    std::array<int, 2> reduced_shape() const { return {red_h_, red_w_}; }

    // checkpoint + config sidecar ("<prefix>.gwf" / "<prefix>.json")
    void save(const std::string& path_prefix, int precision_bits = 64) const;
    static GeoWaveformer load(const std::string& path_prefix, const PointCloud& cloud);
    static WaveformerConfig load_config(const std::string& path_prefix,
                                        NormStats* norm = nullptr);

private:
    Tensor pointwise_mlp(const Tensor& field, const Tensor& w1, const Tensor& b1,
                         const Tensor& w2, const Tensor& b2) const;
    Tensor branch(const std::vector<Tensor>& enc_seq, const std::vector<Tensor>& dec_seq,
                  bool wavelet_domain) const;

    WaveformerConfig cfg_;
    PointCloud cloud_;
    LatentGrid grid_;
    std::unique_ptr<GeometryCodec> codec_;
    ParamStore store_;
    Tensor grid_coords_;  // (3, S1, S2, S3), normalized to [0,1]
    Tensor t_cloud_;      // (N, 1) distance features at the cloud points

    // dynamics operates on this spatial shape (3-D latent or reduced 2-D)
    std::vector<int> dyn_shape_;
    int dyn_channels_ = 0;
    std::unique_ptr<DwtPlan> plan_;
    int red_h_ = 0, red_w_ = 0;
    std::array<int, 3> mid_shape_{};  // after the first reduction conv

    // parameters (also registered in store_)
    Tensor p_w1_, p_b1_, p_w2_, p_b2_;
    Tensor q_w1_, q_b1_, q_w2_, q_b2_;
    Tensor win_w_, win_b_, wout_w_, wout_b_;
    Tensor rin_w_, rin_b_, rout_w_, rout_b_;
    TransformerParams t_wave_, t_phys_;
    Tensor red_w1_, red_b1_, red_w2_, red_b2_;
    Tensor exp_w1_, exp_b1_, exp_w2_, exp_b2_;

    NormStats norm_;
};

/// Nearest-square factorization: h*w == m with h <= w and h the largest
/// divisor of m not exceeding sqrt(m).
std::array<int, 2> nearest_square_factorization(int m);

}  // namespace gwf
