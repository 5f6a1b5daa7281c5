#include "gwf/waveformer.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace gwf {

std::array<int, 2> nearest_square_factorization(int m) {
    if (m < 1) throw ShapeError("nearest_square_factorization: need positive count");
    int h = static_cast<int>(std::sqrt(static_cast<double>(m)));
    while (h > 1 && m % h != 0) --h;
    return {h, m / h};
}

GeoWaveformer::GeoWaveformer(const PointCloud& cloud, WaveformerConfig cfg)
    : cfg_(std::move(cfg)), cloud_(cloud) {
    if (cfg_.window < 2) throw ShapeError("GeoWaveformer: window k must be >= 2");
    grid_ = build_latent_grid(cloud_, cfg_.grid_resolution, cfg_.grid_pad);
    Rng rng(cfg_.seed);

    const int d_a = cfg_.field_channels + 1;  // field values plus T(x)
    codec_ = std::make_unique<GeometryCodec>(cloud_, grid_, cfg_.graph, d_a,
                                             cfg_.field_channels, store_, rng);
    const int c = codec_->latent_channels();
    const auto& R = grid_.resolution;
    const int S = grid_.num_nodes();

    // normalized grid coordinates stacked onto the latent before P
    {
        std::vector<double> coords(static_cast<size_t>(3) * S);
        const Vec3 lo = grid_.origin;
        const Vec3 hi = grid_.box_max();
        for (int n = 0; n < S; ++n) {
            const Vec3 p = grid_.node(n);
            for (int a = 0; a < 3; ++a)
                coords[static_cast<size_t>(a) * S + n] =
                    (p[a] - lo[a]) / std::max(hi[a] - lo[a], 1e-12);
        }
        grid_coords_ = Tensor({3, R[0], R[1], R[2]}, std::move(coords));
    }
    {
        DistanceFeatures tvals = distance_features(cloud_.coords, cloud_);
        t_cloud_ = Tensor({static_cast<int>(cloud_.size()), 1}, std::move(tvals.values));
    }

    // P: (c+3) -> hidden -> lift, Q: lift -> hidden -> c, both pointwise
    p_w1_ = store_.add("p.w1", init_param({c + 3, cfg_.lift_hidden}, c + 3, rng));
    p_b1_ = store_.add("p.b1", zeros_param({cfg_.lift_hidden}));
    p_w2_ = store_.add("p.w2",
                       init_param({cfg_.lift_hidden, cfg_.lift_width}, cfg_.lift_hidden, rng));
    p_b2_ = store_.add("p.b2", zeros_param({cfg_.lift_width}));
    q_w1_ = store_.add("q.w1",
                       init_param({cfg_.lift_width, cfg_.lift_hidden}, cfg_.lift_width, rng));
    q_b1_ = store_.add("q.b1", zeros_param({cfg_.lift_hidden}));
    q_w2_ = store_.add("q.w2", init_param({cfg_.lift_hidden, c}, cfg_.lift_hidden, rng));
    q_b2_ = store_.add("q.b2", zeros_param({c}));

    // dynamics space: full 3-D latent, or the reduced 2-D latent
    if (cfg_.use_reduction) {
        Shape mid = conv3d_out_shape({R[0], R[1], R[2]}, 4, 2, 1);
        mid_shape_ = {mid[0], mid[1], mid[2]};
        Shape red = conv3d_out_shape(mid, 4, 2, 1);
        const int flat_spatial = red[0] * red[1] * red[2];
        auto hw = nearest_square_factorization(flat_spatial);
        red_h_ = hw[0];
        red_w_ = hw[1];
        dyn_shape_ = {red_h_, red_w_};
        dyn_channels_ = cfg_.reduce_c2;
        red_w1_ = store_.add("red.w1",
                             init_param({cfg_.reduce_c1, cfg_.lift_width, 4, 4, 4},
                                        cfg_.lift_width * 64, rng));
        red_b1_ = store_.add("red.b1", zeros_param({cfg_.reduce_c1}));
        red_w2_ = store_.add("red.w2",
                             init_param({cfg_.reduce_c2, cfg_.reduce_c1, 4, 4, 4},
                                        cfg_.reduce_c1 * 64, rng));
        red_b2_ = store_.add("red.b2", zeros_param({cfg_.reduce_c2}));
        exp_w1_ = store_.add("exp.w1",
                             init_param({cfg_.reduce_c2, cfg_.reduce_c1, 4, 4, 4},
                                        cfg_.reduce_c2 * 64, rng));
        exp_b1_ = store_.add("exp.b1", zeros_param({cfg_.reduce_c1}));
        exp_w2_ = store_.add("exp.w2",
                             init_param({cfg_.reduce_c1, cfg_.lift_width, 4, 4, 4},
                                        cfg_.reduce_c1 * 64, rng));
        exp_b2_ = store_.add("exp.b2", zeros_param({cfg_.lift_width}));
    } else {
        dyn_shape_ = {R[0], R[1], R[2]};
        dyn_channels_ = cfg_.lift_width;
    }

    plan_ = std::make_unique<DwtPlan>(dyn_shape_, filter_bank(cfg_.wavelet_order),
                                      cfg_.wavelet_levels, cfg_.wavelet_mode);

    int dyn_count = 1;
    for (int e : dyn_shape_) dyn_count *= e;
    const int flat_r = dyn_channels_ * dyn_count;
    const int flat_w = dyn_channels_ * plan_->coeff_size();
    const int td = cfg_.attention.token_dim;
    win_w_ = store_.add("tw.in_w", init_param({flat_w, td}, flat_w, rng));
    win_b_ = store_.add("tw.in_b", zeros_param({td}));
    wout_w_ = store_.add("tw.out_w", init_param({td, flat_w}, td, rng));
    wout_b_ = store_.add("tw.out_b", zeros_param({flat_w}));
    rin_w_ = store_.add("tr.in_w", init_param({flat_r, td}, flat_r, rng));
    rin_b_ = store_.add("tr.in_b", zeros_param({td}));
    rout_w_ = store_.add("tr.out_w", init_param({td, flat_r}, td, rng));
    rout_b_ = store_.add("tr.out_b", zeros_param({flat_r}));
    t_wave_ = make_transformer(store_, "tw", cfg_.attention, rng);
    t_phys_ = make_transformer(store_, "tr", cfg_.attention, rng);

    norm_.mean.assign(static_cast<size_t>(cfg_.field_channels), 0.0);
    norm_.stdev.assign(static_cast<size_t>(cfg_.field_channels), 1.0);

    // unit-gain probes for the pointwise lifts (the transformer stages are
    // scale-free thanks to their layer norms; P and Q are not)
    {
        NoGradGuard ng;
        Rng probe_rng(cfg_.seed ^ 0xbeef);
        auto calibrate = [&](Tensor& w2, int in_dim, const Tensor& w1, const Tensor& b1,
                             const Tensor& b2) {
            Tensor probe({S, in_dim});
            for (std::int64_t i = 0; i < probe.size(); ++i)
                probe.data()[i] = probe_rng.normal(0.0, 1.0);
            Tensor h = gelu(add_rowvec(matmul(probe, w1), b1));
            Tensor out = add_rowvec(matmul(h, w2), b2);
            double ss = 0.0;
            for (std::int64_t i = 0; i < out.size(); ++i) ss += out.at(i) * out.at(i);
            const double rms = std::sqrt(ss / static_cast<double>(out.size()));
            if (rms > 0.0 && std::isfinite(rms))
                for (std::int64_t i = 0; i < w2.size(); ++i)
                    w2.data()[i] *= std::min(1.0 / rms, 1e6);
        };
        calibrate(p_w2_, c + 3, p_w1_, p_b1_, p_b2_);
        calibrate(q_w2_, cfg_.lift_width, q_w1_, q_b1_, q_b2_);
    }
}

GeoWaveformer::Session GeoWaveformer::begin_session() const {
    return Session{codec_->static_kernels()};
}

Tensor GeoWaveformer::encode_field(const Tensor& u, const Session& s) const {
    const int n = static_cast<int>(cloud_.size());
    if (u.rank() != 2 || u.dim(0) != n || u.dim(1) != cfg_.field_channels)
        throw ShapeError("encode_field: expected (" + std::to_string(n) + "," +
                         std::to_string(cfg_.field_channels) + "), got " +
                         shape_str(u.shape()));
    Tensor a = concat({u, t_cloud_}, 1);  // a = {field values, T(x)}
    return codec_->encode(a, s.kernels);
}

Tensor GeoWaveformer::decode_latent(const Tensor& latent, const Session& s) const {
    return codec_->decode(latent, s.kernels);
}

Tensor GeoWaveformer::pointwise_mlp(const Tensor& field, const Tensor& w1, const Tensor& b1,
                                    const Tensor& w2, const Tensor& b2) const {
    // field: (C, spatial...) -> rows (S, C) -> mlp -> (C', spatial...)
    const int C = field.dim(0);
    int S = 1;
    for (int a = 1; a < field.rank(); ++a) S *= field.dim(a);
    Tensor rows = transpose2d(reshape(field, {C, S}));
    Tensor h = gelu(add_rowvec(matmul(rows, w1), b1));
    Tensor out = add_rowvec(matmul(h, w2), b2);
    Shape out_shape{out.dim(1)};
    for (int a = 1; a < field.rank(); ++a) out_shape.push_back(field.dim(a));
    return reshape(transpose2d(out), std::move(out_shape));
}

Tensor GeoWaveformer::lift(const Tensor& latent) const {
    Tensor with_coords = concat({latent, grid_coords_}, 0);
    return pointwise_mlp(with_coords, p_w1_, p_b1_, p_w2_, p_b2_);
}

Tensor GeoWaveformer::unlift(const Tensor& lifted) const {
    return pointwise_mlp(lifted, q_w1_, q_b1_, q_w2_, q_b2_);
}

Tensor GeoWaveformer::reduce_latent(const Tensor& lifted3d) const {
    if (!cfg_.use_reduction) throw ShapeError("reduce_latent: reduction disabled");
    Tensor h = gelu(conv3d(lifted3d, red_w1_, red_b1_, 2, 1));
    Tensor h2 = gelu(conv3d(h, red_w2_, red_b2_, 2, 1));
    const int m = h2.dim(1) * h2.dim(2) * h2.dim(3);
    if (m != red_h_ * red_w_)
        throw ShapeError("reduce_latent: flatten count " + std::to_string(m) +
                         " does not match 2-D latent " + std::to_string(red_h_) + "x" +
                         std::to_string(red_w_));
    return reshape(h2, {cfg_.reduce_c2, red_h_, red_w_});
}

Tensor GeoWaveformer::expand_latent(const Tensor& latent2d) const {
    if (!cfg_.use_reduction) throw ShapeError("expand_latent: reduction disabled");
    if (latent2d.shape() != Shape{cfg_.reduce_c2, red_h_, red_w_})
        throw ShapeError("expand_latent: expected " +
                         shape_str({cfg_.reduce_c2, red_h_, red_w_}) + ", got " +
                         shape_str(latent2d.shape()));
    Shape red = conv3d_out_shape({mid_shape_[0], mid_shape_[1], mid_shape_[2]}, 4, 2, 1);
    Tensor cube = reshape(latent2d, {cfg_.reduce_c2, red[0], red[1], red[2]});
    Tensor h = gelu(conv3d_transpose(cube, exp_w1_, exp_b1_, 2, 1,
                                     {mid_shape_[0], mid_shape_[1], mid_shape_[2]}));
    const auto& R = grid_.resolution;
    return conv3d_transpose(h, exp_w2_, exp_b2_, 2, 1, {R[0], R[1], R[2]});
}

Tensor GeoWaveformer::branch(const std::vector<Tensor>& enc_seq,
                             const std::vector<Tensor>& dec_seq,
                             bool wavelet_domain) const {
    const Tensor& in_w = wavelet_domain ? win_w_ : rin_w_;
    const Tensor& in_b = wavelet_domain ? win_b_ : rin_b_;
    const Tensor& out_w = wavelet_domain ? wout_w_ : rout_w_;
    const Tensor& out_b = wavelet_domain ? wout_b_ : rout_b_;
    const TransformerParams& tf = wavelet_domain ? t_wave_ : t_phys_;

    int dyn_count = 1;
    for (int e : dyn_shape_) dyn_count *= e;
    const int flat = wavelet_domain ? dyn_channels_ * plan_->coeff_size()
                                    : dyn_channels_ * dyn_count;

    auto tokens_of = [&](const std::vector<Tensor>& seq) {
        std::vector<Tensor> rows;
        rows.reserve(seq.size());
        for (const Tensor& x : seq) {
            Tensor t = wavelet_domain ? dwt_op(x, *plan_) : x;
            rows.push_back(reshape(t, {1, flat}));
        }
        return add_rowvec(matmul(concat(rows, 0), in_w), in_b);
    };
    Tensor enc_tokens = tokens_of(enc_seq);
    Tensor dec_tokens = tokens_of(dec_seq);
    Tensor z = transformer_forward(tf, cfg_.attention, enc_tokens, dec_tokens);
    Tensor last = slice(z, 0, z.dim(0) - 1, z.dim(0));  // one-step-ahead readout
    Tensor flat_out = add_rowvec(matmul(last, out_w), out_b);
    if (wavelet_domain)
        return idwt_op(reshape(flat_out, {dyn_channels_, plan_->coeff_size()}), *plan_);
    Shape shape{dyn_channels_};
    for (int e : dyn_shape_) shape.push_back(e);
    return reshape(flat_out, std::move(shape));
}

Tensor GeoWaveformer::wavelet_branch(const std::vector<Tensor>& enc_seq,
                                     const std::vector<Tensor>& dec_seq) const {
    return branch(enc_seq, dec_seq, true);
}

Tensor GeoWaveformer::physical_branch(const std::vector<Tensor>& enc_seq,
                                      const std::vector<Tensor>& dec_seq) const {
    return branch(enc_seq, dec_seq, false);
}

Tensor GeoWaveformer::integral_layer(const std::vector<Tensor>& enc_seq,
                                     const std::vector<Tensor>& dec_seq) const {
    if (enc_seq.size() != dec_seq.size() || enc_seq.empty())
        throw ShapeError("integral_layer: encoder/decoder sequences must have equal "
                         "nonzero length, got " + std::to_string(enc_seq.size()) +
                         " and " + std::to_string(dec_seq.size()));
    return gelu(add(branch(enc_seq, dec_seq, true), branch(enc_seq, dec_seq, false)));
}

Tensor GeoWaveformer::waveformer_next(const std::vector<Tensor>& latent_window) const {
    const int k = static_cast<int>(latent_window.size());
    if (k < 2) throw ShapeError("waveformer_next: window length must be >= 2, got " +
                                std::to_string(k));
    std::vector<Tensor> lifted;
    lifted.reserve(latent_window.size());
    for (const Tensor& lat : latent_window) {
        Tensor l = lift(lat);
        lifted.push_back(cfg_.use_reduction ? reduce_latent(l) : l);
    }
    std::vector<Tensor> enc_seq(lifted.begin(), lifted.end() - 1);
    std::vector<Tensor> dec_seq(lifted.begin() + 1, lifted.end());
    Tensor out = integral_layer(enc_seq, dec_seq);
    if (cfg_.use_reduction) out = expand_latent(out);
    return unlift(out);
}

Tensor GeoWaveformer::predict_next(const std::vector<Tensor>& window_fields,
                                   const Session& s) const {
    std::vector<Tensor> latents;
    latents.reserve(window_fields.size());
    for (const Tensor& u : window_fields) latents.push_back(encode_field(u, s));
    return decode_latent(waveformer_next(latents), s);
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

namespace {

nlohmann::json config_to_json(const WaveformerConfig& c, const NormStats& norm) {
    nlohmann::json j;
    j["grid_resolution"] = c.grid_resolution;
    j["grid_pad"] = c.grid_pad;
    j["graph"] = {{"width1", c.graph.width1},
                  {"width2", c.graph.width2},
                  {"kernel_hidden", c.graph.kernel_hidden},
                  {"cloud_radius_factor", c.graph.cloud_radius_factor},
                  {"grid_radius_factor", c.graph.grid_radius_factor},
                  {"cap", c.graph.cap},
                  {"seed", c.graph.seed}};
    j["field_channels"] = c.field_channels;
    j["dataset_channels"] = c.dataset_channels;
    j["window"] = c.window;
    j["lift_width"] = c.lift_width;
    j["lift_hidden"] = c.lift_hidden;
    j["attention"] = {{"token_dim", c.attention.token_dim},
                      {"num_heads", c.attention.num_heads},
                      {"ff_dim", c.attention.ff_dim},
                      {"encoder_blocks", c.attention.encoder_blocks},
                      {"decoder_blocks", c.attention.decoder_blocks},
                      {"positional_encoding", c.attention.positional_encoding}};
    j["wavelet"] = {{"order", c.wavelet_order},
                    {"levels", c.wavelet_levels},
                    {"mode", c.wavelet_mode == BoundaryMode::Periodic ? "periodic"
                                                                      : "symmetric"}};
    j["reduction"] = {{"enabled", c.use_reduction},
                      {"c1", c.reduce_c1},
                      {"c2", c.reduce_c2}};
    j["seed"] = c.seed;
    j["norm"] = {{"mean", norm.mean}, {"stdev", norm.stdev}};
    return j;
}

WaveformerConfig config_from_json(const nlohmann::json& j, NormStats* norm) {
    WaveformerConfig c;
    c.grid_resolution = j.at("grid_resolution").get<std::array<int, 3>>();
    c.grid_pad = j.at("grid_pad").get<double>();
    const auto& g = j.at("graph");
    c.graph.width1 = g.at("width1").get<int>();
    c.graph.width2 = g.at("width2").get<int>();
    c.graph.kernel_hidden = g.at("kernel_hidden").get<int>();
    c.graph.cloud_radius_factor = g.at("cloud_radius_factor").get<double>();
    c.graph.grid_radius_factor = g.at("grid_radius_factor").get<double>();
    c.graph.cap = g.at("cap").get<int>();
    c.graph.seed = g.at("seed").get<std::uint64_t>();
    c.field_channels = j.at("field_channels").get<int>();
    c.dataset_channels = j.at("dataset_channels").get<std::vector<int>>();
    c.window = j.at("window").get<int>();
    c.lift_width = j.at("lift_width").get<int>();
    c.lift_hidden = j.at("lift_hidden").get<int>();
    const auto& a = j.at("attention");
    c.attention.token_dim = a.at("token_dim").get<int>();
    c.attention.num_heads = a.at("num_heads").get<int>();
    c.attention.ff_dim = a.at("ff_dim").get<int>();
    c.attention.encoder_blocks = a.at("encoder_blocks").get<int>();
    c.attention.decoder_blocks = a.at("decoder_blocks").get<int>();
    c.attention.positional_encoding = a.at("positional_encoding").get<bool>();
    const auto& w = j.at("wavelet");
    c.wavelet_order = w.at("order").get<int>();
    c.wavelet_levels = w.at("levels").get<int>();
    c.wavelet_mode = w.at("mode").get<std::string>() == "periodic"
                         ? BoundaryMode::Periodic
                         : BoundaryMode::Symmetric;
    const auto& r = j.at("reduction");
    c.use_reduction = r.at("enabled").get<bool>();
    c.reduce_c1 = r.at("c1").get<int>();
    c.reduce_c2 = r.at("c2").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (norm) {
        norm->mean = j.at("norm").at("mean").get<std::vector<double>>();
        norm->stdev = j.at("norm").at("stdev").get<std::vector<double>>();
    }
    return c;
}

}  // namespace

void GeoWaveformer::save(const std::string& path_prefix, int precision_bits) const {
    save_checkpoint(store_, path_prefix + ".gwf", precision_bits);
    std::ofstream os(path_prefix + ".json");
    if (!os) throw DataError("GeoWaveformer::save: cannot open '" + path_prefix + ".json'");
    os << config_to_json(cfg_, norm_).dump(2) << "\n";
}

WaveformerConfig GeoWaveformer::load_config(const std::string& path_prefix,
                                            NormStats* norm) {
    std::ifstream is(path_prefix + ".json");
    if (!is)
        throw DataError("GeoWaveformer::load: cannot open '" + path_prefix + ".json'");
    nlohmann::json j;
    is >> j;
    return config_from_json(j, norm);
}

GeoWaveformer GeoWaveformer::load(const std::string& path_prefix, const PointCloud& cloud) {
    NormStats norm;
    WaveformerConfig cfg = load_config(path_prefix, &norm);
    GeoWaveformer model(cloud, cfg);
    load_checkpoint(model.store_, path_prefix + ".gwf");
    model.norm_ = std::move(norm);
    return model;
}

}  // namespace gwf
