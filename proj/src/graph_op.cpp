#include "gwf/graph_op.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace gwf {

Tensor KernelNet::forward(const Tensor& edge_features) const {
    if (edge_features.rank() != 2 || edge_features.dim(1) != edge_dim)
        throw ShapeError("KernelNet: expected (E," + std::to_string(edge_dim) +
                         ") edge features, got " + shape_str(edge_features.shape()));
    Tensor h = tanh_act(add_rowvec(matmul(edge_features, w1), b1));
    return add_rowvec(matmul(h, w2), b2);
}

KernelNet make_kernel_net(ParamStore& store, const std::string& prefix, int edge_dim,
                          int hidden, int c_in, int c_out, Rng& rng) {
    KernelNet net;
    net.edge_dim = edge_dim;
    net.hidden = hidden;
    net.c_in = c_in;
    net.c_out = c_out;
    net.w1 = store.add(prefix + ".w1", init_param({edge_dim, hidden}, edge_dim, rng));
    net.b1 = store.add(prefix + ".b1", zeros_param({hidden}));
    net.w2 = store.add(prefix + ".w2", init_param({hidden, c_in * c_out}, hidden, rng));
    net.b2 = store.add(prefix + ".b2", zeros_param({c_in * c_out}));
    return net;
}

EdgeGeometry build_edge_geometry(const std::vector<Vec3>& queries,
                                 const std::vector<Vec3>& targets,
                                 const NeighborSet& neighbors, WeightMode mode,
                                 const std::vector<double>& target_mu,
                                 const DistanceFeatures& t_queries,
                                 const DistanceFeatures& t_targets,
                                 const LatentGrid& norm_box) {
    if (neighbors.lists.size() != queries.size())
        throw ShapeError("build_edge_geometry: neighbor lists do not match queries");
    if (mode == WeightMode::PerTarget && target_mu.size() != targets.size())
        throw ShapeError("build_edge_geometry: weights not aligned with targets");

    EdgeGeometry eg;
    eg.n_queries = static_cast<int>(queries.size());
    eg.n_targets = static_cast<int>(targets.size());

    // normalize coordinates to the grid box, distances to its largest extent
    const Vec3 lo = norm_box.origin;
    const Vec3 hi = norm_box.box_max();
    Vec3 ext{hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
    for (double& e : ext) e = std::max(e, 1e-12);
    const double tscale = std::max({ext[0], ext[1], ext[2]});

    std::vector<double> geo;
    for (size_t q = 0; q < queries.size(); ++q) {
        const auto& list = neighbors.lists[q];
        const double uniform_w = list.empty() ? 0.0 : 1.0 / static_cast<double>(list.size());
        for (const auto& e : list) {
            eg.query_of.push_back(static_cast<int>(q));
            eg.target_of.push_back(e.target);
            eg.mu.push_back(mode == WeightMode::PerTarget
                                ? target_mu[static_cast<size_t>(e.target)]
                                : uniform_w);
            const Vec3& xq = queries[q];
            const Vec3& yt = targets[static_cast<size_t>(e.target)];
            for (int a = 0; a < 3; ++a) geo.push_back((xq[a] - lo[a]) / ext[a]);
            for (int a = 0; a < 3; ++a) geo.push_back((yt[a] - lo[a]) / ext[a]);
            geo.push_back(t_queries.values[q] / tscale);
            geo.push_back(t_targets.values[static_cast<size_t>(e.target)] / tscale);
        }
    }
    eg.geo = Tensor({eg.num_edges(), 8}, std::move(geo));
    return eg;
}

Tensor kernel_contract(const Tensor& kappa, const Tensor& values, const EdgeGeometry& eg,
                       int c_in, int c_out) {
    if (kappa.rank() != 2 || kappa.dim(0) != eg.num_edges() ||
        kappa.dim(1) != c_in * c_out)
        throw ShapeError("kernel_contract: kappa " + shape_str(kappa.shape()) +
                         " does not match " + std::to_string(eg.num_edges()) +
                         " edges x " + std::to_string(c_in * c_out));
    if (values.rank() != 2 || values.dim(0) != eg.n_targets || values.dim(1) != c_in)
        throw ShapeError("kernel_contract: values " + shape_str(values.shape()) +
                         " must be (" + std::to_string(eg.n_targets) + "," +
                         std::to_string(c_in) + ")");

    const int E = eg.num_edges();
    std::vector<double> out(static_cast<size_t>(eg.n_queries) * c_out, 0.0);
    for (int e = 0; e < E; ++e) {
        const double* k = kappa.data() + static_cast<std::int64_t>(e) * c_in * c_out;
        const double* v = values.data() + static_cast<std::int64_t>(eg.target_of[size_t(e)]) * c_in;
        double* o = out.data() + static_cast<std::int64_t>(eg.query_of[size_t(e)]) * c_out;
        const double w = eg.mu[static_cast<size_t>(e)];
        for (int ci = 0; ci < c_in; ++ci) {
            const double vw = v[ci] * w;
            if (vw == 0.0) continue;
            const double* krow = k + static_cast<std::int64_t>(ci) * c_out;
            for (int co = 0; co < c_out; ++co) o[co] += vw * krow[co];
        }
    }

    const bool needs_grad =
        grad_recording_enabled() && (kappa.requires_grad() || values.requires_grad());
    auto node = std::make_shared<detail::TensorNode>();
    node->op = "kernel_contract";
    node->shape = {eg.n_queries, c_out};
    node->value = std::move(out);
    if (needs_grad) {
        node->requires_grad = true;
        node->inputs = {kappa.node(), values.node()};
        auto kn = kappa.node();
        auto vn = values.node();
        const EdgeGeometry* egp = &eg;
        node->backward_fn = [kn, vn, egp, c_in, c_out](detail::TensorNode& o) {
            const int ne = egp->num_edges();
            if (kn->requires_grad) kn->ensure_grad();
            if (vn->requires_grad) vn->ensure_grad();
            for (int e = 0; e < ne; ++e) {
                const double w = egp->mu[static_cast<size_t>(e)];
                const double* g = o.grad.data() +
                                  static_cast<std::int64_t>(egp->query_of[size_t(e)]) * c_out;
                const std::int64_t voff =
                    static_cast<std::int64_t>(egp->target_of[size_t(e)]) * c_in;
                const std::int64_t koff = static_cast<std::int64_t>(e) * c_in * c_out;
                for (int ci = 0; ci < c_in; ++ci) {
                    double gv = 0.0;
                    const std::int64_t krow = koff + static_cast<std::int64_t>(ci) * c_out;
                    for (int co = 0; co < c_out; ++co) {
                        const double gw = g[co] * w;
                        if (kn->requires_grad)
                            kn->grad[static_cast<size_t>(krow + co)] += gw * vn->value[static_cast<size_t>(voff + ci)];
                        gv += gw * kn->value[static_cast<size_t>(krow + co)];
                    }
                    if (vn->requires_grad) vn->grad[static_cast<size_t>(voff + ci)] += gv;
                }
            }
        };
    }
    return detail::make_tensor(node);
}

Tensor kernel_integrate(const KernelNet& net, const EdgeGeometry& eg, const Tensor& values,
                        bool values_in_edge_features) {
    if (values.dim(1) != net.c_in)
        throw ShapeError("kernel_integrate: net expects " + std::to_string(net.c_in) +
                         " value channels, got " + shape_str(values.shape()));
    Tensor feats = eg.geo;
    if (values_in_edge_features) {
        Tensor gathered = gather_rows(values, eg.target_of);
        feats = concat({feats, gathered}, 1);
    }
    Tensor kappa = net.forward(feats);
    return kernel_contract(kappa, values, eg, net.c_in, net.c_out);
}

Tensor kernel_integrate_averaging(const EdgeGeometry& eg, const Tensor& values) {
    const int c = values.dim(1);
    std::vector<double> out(static_cast<size_t>(eg.n_queries) * c, 0.0);
    std::vector<double> wsum(static_cast<size_t>(eg.n_queries), 0.0);
    for (int e = 0; e < eg.num_edges(); ++e)
        wsum[static_cast<size_t>(eg.query_of[size_t(e)])] += eg.mu[static_cast<size_t>(e)];
    for (int e = 0; e < eg.num_edges(); ++e) {
        const int q = eg.query_of[static_cast<size_t>(e)];
        if (wsum[static_cast<size_t>(q)] <= 0.0) continue;
        const double w = eg.mu[static_cast<size_t>(e)] / wsum[static_cast<size_t>(q)];
        const double* v = values.data() + static_cast<std::int64_t>(eg.target_of[size_t(e)]) * c;
        double* o = out.data() + static_cast<std::int64_t>(q) * c;
        for (int j = 0; j < c; ++j) o[j] += w * v[j];
    }
    return Tensor({eg.n_queries, c}, std::move(out));
}

// ---------------------------------------------------------------------------
// GeometryCodec
// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Unit-variance probe value keyed on the point's coordinates (not its index)
// so calibration is invariant to target ordering.
double probe_value(std::uint64_t seed, const Vec3& p, int channel) {
    std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(channel) + 1));
    for (double c : p) {
        std::uint64_t bits;
        std::memcpy(&bits, &c, sizeof(bits));
        h = mix64(h ^ bits);
    }
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0,1)
    return (2.0 * u - 1.0) * 1.7320508075688772;                // variance 1
}

// Rescales the kernel net's output layer so the integration layer preserves
// unit RMS on a coordinate-keyed probe. The Riemann weights carry
// local-volume units, so raw kernel sums start orders of magnitude off
// scale; folding the correction into the learnable kernel's init keeps the
// integration formula intact while making gradients usable from the first
// step.
void calibrate_kernel_scale(KernelNet& net, const EdgeGeometry& eg,
                            bool values_in_features, const std::vector<Vec3>& targets,
                            std::uint64_t probe_seed) {
    NoGradGuard ng;
    Tensor probe({eg.n_targets, net.c_in});
    for (int i = 0; i < eg.n_targets; ++i)
        for (int c = 0; c < net.c_in; ++c)
            probe.data()[static_cast<std::int64_t>(i) * net.c_in + c] =
                probe_value(probe_seed, targets[static_cast<size_t>(i)], c);
    Tensor out = kernel_integrate(net, eg, probe, values_in_features);
    double ss = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) ss += out.at(i) * out.at(i);
    const double rms = std::sqrt(ss / static_cast<double>(out.size()));
    if (!(rms > 0.0) || !std::isfinite(rms)) return;
    const double scale = std::min(1.0 / rms, 1e6);
    for (std::int64_t i = 0; i < net.w2.size(); ++i) net.w2.data()[i] *= scale;
    for (std::int64_t i = 0; i < net.b2.size(); ++i) net.b2.data()[i] *= scale;
}

}  // namespace

GeometryCodec::GeometryCodec(const PointCloud& cloud, const LatentGrid& grid,
                             const GraphOpConfig& cfg, int in_channels, int out_channels,
                             ParamStore& store, Rng& rng)
    : cfg_(cfg), grid_(grid), in_channels_(in_channels), out_channels_(out_channels) {
    if (cloud.coords.empty()) throw DataError("GeometryCodec: empty cloud");
    cloud.validate();
    n_points_ = static_cast<int>(cloud.size());

    const std::vector<Vec3> grid_nodes = grid.nodes();
    const double cloud_r = cfg.cloud_radius_factor * mean_nn_spacing(cloud);
    const double grid_r =
        cfg.grid_radius_factor * std::max({grid.spacing[0], grid.spacing[1], grid.spacing[2]});

    DistanceFeatures t_cloud = distance_features(cloud.coords, cloud);  // zero at nodes
    DistanceFeatures t_grid = distance_features(grid_nodes, cloud);
    QuadratureWeights cloud_mu = riemann_weights(cloud, std::min(4, n_points_ - 1));

    NeighborSet enc_ns =
        ball_neighbors(grid_nodes, cloud.coords, cloud_r, cfg.cap, cfg.seed);
    uncovered_ = enc_ns.empty_queries();
    NeighborSet gg_ns = ball_neighbors(grid_nodes, grid_nodes, grid_r, cfg.cap, cfg.seed + 1);
    NeighborSet dec_ns =
        ball_neighbors(cloud.coords, grid_nodes, grid_r, cfg.cap, cfg.seed + 2);

    enc1_ = build_edge_geometry(grid_nodes, cloud.coords, enc_ns, WeightMode::PerTarget,
                                cloud_mu.mu, t_grid, t_cloud, grid);
    gg_ = build_edge_geometry(grid_nodes, grid_nodes, gg_ns, WeightMode::UniformPerQuery,
                              {}, t_grid, t_grid, grid);
    dec2_ = build_edge_geometry(cloud.coords, grid_nodes, dec_ns,
                                WeightMode::UniformPerQuery, {}, t_cloud, t_grid, grid);

    // geometric edge features are 8-dim; the first encoder layer appends a(y)
    k_enc1_ = make_kernel_net(store, "enc.k1", 8 + in_channels, cfg.kernel_hidden,
                              in_channels, cfg.width1, rng);
    k_enc2_ = make_kernel_net(store, "enc.k2", 8, cfg.kernel_hidden, cfg.width1,
                              cfg.width2, rng);
    k_dec1_ = make_kernel_net(store, "dec.k1", 8, cfg.kernel_hidden, cfg.width2,
                              cfg.width1, rng);
    k_dec2_ = make_kernel_net(store, "dec.k2", 8, cfg.kernel_hidden, cfg.width1,
                              cfg.width2, rng);
    out_w_ = store.add("dec.out_w", init_param({cfg.width2, out_channels}, cfg.width2, rng));
    out_b_ = store.add("dec.out_b", zeros_param({out_channels}));

    calibrate_kernel_scale(k_enc1_, enc1_, true, cloud.coords, cfg.seed ^ 0xabc1);
    calibrate_kernel_scale(k_enc2_, gg_, false, grid_nodes, cfg.seed ^ 0xabc2);
    calibrate_kernel_scale(k_dec1_, gg_, false, grid_nodes, cfg.seed ^ 0xabc3);
    calibrate_kernel_scale(k_dec2_, dec2_, false, grid_nodes, cfg.seed ^ 0xabc4);

    // final projection: unit gain through the whole decode chain
    {
        NoGradGuard ng;
        Rng probe_rng(cfg.seed ^ 0xabc5);
        Tensor probe({grid.num_nodes(), cfg.width2});
        for (std::int64_t i = 0; i < probe.size(); ++i)
            probe.data()[i] = probe_rng.normal(0.0, 1.0);
        const auto& R = grid.resolution;
        Tensor latent = reshape(transpose2d(probe), {cfg.width2, R[0], R[1], R[2]});
        Tensor out = decode(latent, static_kernels());
        double ss = 0.0;
        for (std::int64_t i = 0; i < out.size(); ++i) ss += out.at(i) * out.at(i);
        const double rms = std::sqrt(ss / static_cast<double>(out.size()));
        if (rms > 0.0 && std::isfinite(rms)) {
            const double scale = std::min(1.0 / rms, 1e6);
            for (std::int64_t i = 0; i < out_w_.size(); ++i) out_w_.data()[i] *= scale;
        }
    }
}

GeometryCodec::KernelCache GeometryCodec::static_kernels() const {
    KernelCache c;
    c.enc2 = k_enc2_.forward(gg_.geo);
    c.dec1 = k_dec1_.forward(gg_.geo);
    c.dec2 = k_dec2_.forward(dec2_.geo);
    return c;
}

Tensor GeometryCodec::encode(const Tensor& a_values, const KernelCache& cache) const {
    if (a_values.rank() != 2 || a_values.dim(0) != n_points_ ||
        a_values.dim(1) != in_channels_)
        throw ShapeError("encode: expected (" + std::to_string(n_points_) + "," +
                         std::to_string(in_channels_) + ") cloud values, got " +
                         shape_str(a_values.shape()));
    Tensor v1 = gelu(kernel_integrate(k_enc1_, enc1_, a_values, true));
    Tensor v0 = kernel_contract(cache.enc2, v1, gg_, cfg_.width1, cfg_.width2);
    const auto& R = grid_.resolution;
    return reshape(transpose2d(v0), {cfg_.width2, R[0], R[1], R[2]});
}

Tensor GeometryCodec::decode(const Tensor& latent, const KernelCache& cache) const {
    const auto& R = grid_.resolution;
    if (latent.shape() != Shape{cfg_.width2, R[0], R[1], R[2]})
        throw ShapeError("decode: latent " + shape_str(latent.shape()) +
                         " does not match grid (" + std::to_string(cfg_.width2) + "," +
                         std::to_string(R[0]) + "," + std::to_string(R[1]) + "," +
                         std::to_string(R[2]) + ")");
    Tensor rows = transpose2d(reshape(latent, {cfg_.width2, grid_.num_nodes()}));
    Tensor u1 = gelu(kernel_contract(cache.dec1, rows, gg_, cfg_.width2, cfg_.width1));
    Tensor u2 = gelu(kernel_contract(cache.dec2, u1, dec2_, cfg_.width1, cfg_.width2));
    return add_rowvec(matmul(u2, out_w_), out_b_);
}

}  // namespace gwf
