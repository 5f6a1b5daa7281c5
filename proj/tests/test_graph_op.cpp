#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gwf/graph_op.hpp"
#include "test_util.hpp"

using namespace gwf;
using gwf::testutil::param_fd_check;
using gwf::testutil::random_tensor;

namespace {

PointCloud random_cloud(int n, Rng& rng, double scale = 1.0) {
    PointCloud c;
    for (int i = 0; i < n; ++i)
        c.coords.push_back({rng.uniform(0, scale), rng.uniform(0, scale), rng.uniform(0, scale)});
    return c;
}

// Plain-loop evaluation of the kernel net on one edge feature vector.
std::vector<double> oracle_kappa(const KernelNet& net, const std::vector<double>& feat) {
    std::vector<double> h(static_cast<size_t>(net.hidden), 0.0);
    for (int j = 0; j < net.hidden; ++j) {
        double s = net.b1.at(j);
        for (int i = 0; i < net.edge_dim; ++i) s += feat[size_t(i)] * net.w1.at(i * net.hidden + j);
        h[size_t(j)] = std::tanh(s);
    }
    std::vector<double> out(static_cast<size_t>(net.c_in * net.c_out), 0.0);
    for (int k = 0; k < net.c_in * net.c_out; ++k) {
        double s = net.b2.at(k);
        for (int j = 0; j < net.hidden; ++j) s += h[size_t(j)] * net.w2.at(j * net.c_in * net.c_out + k);
        out[size_t(k)] = s;
    }
    return out;
}

std::vector<double> edge_feature(const Vec3& q, const Vec3& t, double tq, double tt,
                                 const LatentGrid& box) {
    const Vec3 lo = box.origin;
    const Vec3 hi = box.box_max();
    Vec3 ext{std::max(hi[0] - lo[0], 1e-12), std::max(hi[1] - lo[1], 1e-12),
             std::max(hi[2] - lo[2], 1e-12)};
    const double ts = std::max({ext[0], ext[1], ext[2]});
    std::vector<double> f;
    for (int a = 0; a < 3; ++a) f.push_back((q[a] - lo[a]) / ext[a]);
    for (int a = 0; a < 3; ++a) f.push_back((t[a] - lo[a]) / ext[a]);
    f.push_back(tq / ts);
    f.push_back(tt / ts);
    return f;
}

double euclid(const Vec3& a, const Vec3& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                     (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

TEST_CASE("identity kernel with one neighbor passes the value through") {
    EdgeGeometry eg;
    eg.n_queries = 1;
    eg.n_targets = 1;
    eg.query_of = {0};
    eg.target_of = {0};
    eg.mu = {1.0};
    eg.geo = Tensor({1, 8}, 0.0);
    const int c = 3;
    Tensor kappa({1, c * c}, 0.0);
    for (int i = 0; i < c; ++i) kappa.data()[i * c + i] = 1.0;
    Tensor v({1, c}, {0.5, -1.25, 2.0});
    Tensor out = kernel_contract(kappa, v, eg, c, c);
    for (int i = 0; i < c; ++i) CHECK(out.at(i) == v.at(i));
}

TEST_CASE("zero values give zero output regardless of kernel") {
    Rng rng(5);
    EdgeGeometry eg;
    eg.n_queries = 2;
    eg.n_targets = 3;
    eg.query_of = {0, 0, 1, 1};
    eg.target_of = {0, 2, 1, 2};
    eg.mu = {0.3, 0.7, 1.1, 0.2};
    eg.geo = random_tensor({4, 8}, rng);
    Tensor kappa = random_tensor({4, 6}, rng);
    Tensor v({3, 2}, 0.0);
    Tensor out = kernel_contract(kappa, v, eg, 2, 3);
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out.at(i) == 0.0);
}

TEST_CASE("kernel_integrate matches dense double-loop brute force") {
    Rng rng(11);
    PointCloud cloud = random_cloud(20, rng);
    LatentGrid box = build_latent_grid(cloud, {2, 2, 2}, 0.05);
    DistanceFeatures t_cloud = distance_features(cloud.coords, cloud);
    QuadratureWeights mu = riemann_weights(cloud, 3);
    const double r = 10.0;  // full connectivity
    NeighborSet ns = ball_neighbors(cloud.coords, cloud.coords, r, 64, 9);
    EdgeGeometry eg = build_edge_geometry(cloud.coords, cloud.coords, ns,
                                          WeightMode::PerTarget, mu.mu, t_cloud,
                                          t_cloud, box);
    ParamStore store;
    KernelNet net = make_kernel_net(store, "k", 8 + 2, 8, 2, 3, rng);
    Tensor values = random_tensor({20, 2}, rng);
    Tensor out = kernel_integrate(net, eg, values, true);

    for (int q = 0; q < 20; ++q) {
        double acc[3] = {0, 0, 0};
        for (int t = 0; t < 20; ++t) {
            if (euclid(cloud.coords[size_t(q)], cloud.coords[size_t(t)]) > r) continue;
            auto feat = edge_feature(cloud.coords[size_t(q)], cloud.coords[size_t(t)],
                                     t_cloud.values[size_t(q)], t_cloud.values[size_t(t)], box);
            feat.push_back(values.at(t * 2 + 0));
            feat.push_back(values.at(t * 2 + 1));
            auto kap = oracle_kappa(net, feat);
            for (int ci = 0; ci < 2; ++ci)
                for (int co = 0; co < 3; ++co)
                    acc[co] += kap[size_t(ci * 3 + co)] * values.at(t * 2 + ci) * mu.mu[size_t(t)];
        }
        for (int co = 0; co < 3; ++co)
            CHECK(out.at(q * 3 + co) == doctest::Approx(acc[co]).epsilon(1e-6));
    }
}

TEST_CASE("linearity in field values with value-free edge features") {
    Rng rng(13);
    PointCloud cloud = random_cloud(15, rng);
    LatentGrid box = build_latent_grid(cloud, {2, 2, 2}, 0.05);
    DistanceFeatures t_cloud = distance_features(cloud.coords, cloud);
    NeighborSet ns = ball_neighbors(cloud.coords, cloud.coords, 0.8, 8, 3);
    EdgeGeometry eg = build_edge_geometry(cloud.coords, cloud.coords, ns,
                                          WeightMode::UniformPerQuery, {}, t_cloud,
                                          t_cloud, box);
    ParamStore store;
    KernelNet net = make_kernel_net(store, "k", 8, 8, 2, 2, rng);
    Tensor v = random_tensor({15, 2}, rng);
    Tensor out1 = kernel_integrate(net, eg, v, false);
    Tensor out2 = kernel_integrate(net, eg, scale(v, 2.0), false);
    for (std::int64_t i = 0; i < out1.size(); ++i)
        CHECK(out2.at(i) == doctest::Approx(2.0 * out1.at(i)).epsilon(1e-10));
}

TEST_CASE("codec encode: averaging kernel reproduces constants on covered nodes") {
    Rng rng(17);
    PointCloud cloud = random_cloud(40, rng);
    LatentGrid grid = build_latent_grid(cloud, {5, 5, 5}, 0.05);
    DistanceFeatures t_cloud = distance_features(cloud.coords, cloud);
    DistanceFeatures t_grid = distance_features(grid, cloud);
    QuadratureWeights mu = riemann_weights(cloud, 4);
    NeighborSet ns = ball_neighbors(grid.nodes(), cloud.coords,
                                    2.5 * mean_nn_spacing(cloud), 32, 7);
    EdgeGeometry eg = build_edge_geometry(grid.nodes(), cloud.coords, ns,
                                          WeightMode::PerTarget, mu.mu, t_grid,
                                          t_cloud, grid);
    const double cval = -1.75;
    Tensor v({40, 1}, cval);
    Tensor out = kernel_integrate_averaging(eg, v);
    auto empty = ns.empty_queries();
    std::vector<bool> is_empty(static_cast<size_t>(grid.num_nodes()), false);
    for (int q : empty) is_empty[size_t(q)] = true;
    for (int q = 0; q < grid.num_nodes(); ++q) {
        if (is_empty[size_t(q)])
            CHECK(out.at(q) == 0.0);
        else
            CHECK(out.at(q) == doctest::Approx(cval).epsilon(1e-9));
    }
}

TEST_CASE("ball support: distant cluster lights up only nearby grid nodes") {
    PointCloud cloud;
    // dense short segment plus a far anchor; the box middle stays uncovered
    for (int i = 0; i < 10; ++i) cloud.coords.push_back({0.5 + 0.11 * i, 0.5, 0.5});
    cloud.coords.push_back({7.5, 7.5, 7.5});
    LatentGrid grid = build_latent_grid(cloud, {8, 8, 8}, 0.0);
    ParamStore store;
    Rng rng(23);
    GraphOpConfig cfg;
    cfg.width1 = 6;
    cfg.width2 = 4;
    cfg.kernel_hidden = 6;
    cfg.cap = 8;
    GeometryCodec codec(cloud, grid, cfg, 2, 1, store, rng);
    auto cache = codec.static_kernels();
    Tensor a = random_tensor({static_cast<int>(cloud.size()), 2}, rng);
    Tensor latent = codec.encode(a, cache);
    // nodes beyond the cloud radius of any point must be exactly zero before
    // the grid-to-grid hop; after it, support grows by one grid ball only.
    const double r_cloud = 2.5 * mean_nn_spacing(cloud);
    const double r_grid = 1.8 * std::max({grid.spacing[0], grid.spacing[1], grid.spacing[2]});
    const int S = grid.num_nodes();
    for (int n = 0; n < S; ++n) {
        double mind = 1e300;
        for (const auto& p : cloud.coords) mind = std::min(mind, euclid(grid.node(n), p));
        if (mind > r_cloud + r_grid) {
            for (int c = 0; c < 4; ++c) {
                const int R = 8;
                const int iz = n % R, iy = (n / R) % R, ix = n / (R * R);
                CHECK(latent.at(((c * R + ix) * R + iy) * R + iz) == 0.0);
            }
        }
    }
    CHECK(!codec.uncovered_grid_nodes().empty());
}

TEST_CASE("codec encode/decode against dense brute force") {
    Rng rng(29);
    PointCloud cloud = random_cloud(25, rng);
    LatentGrid grid = build_latent_grid(cloud, {4, 4, 4}, 0.05);
    ParamStore store;
    GraphOpConfig cfg;
    cfg.width1 = 5;
    cfg.width2 = 3;
    cfg.kernel_hidden = 6;
    cfg.cap = 1000;  // no subsampling so the oracle enumerates identical edges
    GeometryCodec codec(cloud, grid, cfg, 2, 2, store, rng);
    auto cache = codec.static_kernels();
    Tensor a = random_tensor({25, 2}, rng);
    Tensor latent = codec.encode(a, cache);
    Tensor out = codec.decode(latent, cache);
    CHECK(out.shape() == Shape{25, 2});

    // oracle: dense loops over (query,target) pairs per layer
    DistanceFeatures t_cloud = distance_features(cloud.coords, cloud);
    DistanceFeatures t_grid = distance_features(grid, cloud);
    QuadratureWeights mu = riemann_weights(cloud, 4);
    const double r_cloud = 2.5 * mean_nn_spacing(cloud);
    const double r_grid = 1.8 * std::max({grid.spacing[0], grid.spacing[1], grid.spacing[2]});
    const int S = grid.num_nodes();
    auto nodes = grid.nodes();

    // encoder layer 1
    std::vector<double> v1(static_cast<size_t>(S) * 5, 0.0);
    for (int q = 0; q < S; ++q)
        for (int t = 0; t < 25; ++t) {
            if (euclid(nodes[size_t(q)], cloud.coords[size_t(t)]) > r_cloud) continue;
            auto feat = edge_feature(nodes[size_t(q)], cloud.coords[size_t(t)],
                                     t_grid.values[size_t(q)], t_cloud.values[size_t(t)], grid);
            feat.push_back(a.at(t * 2));
            feat.push_back(a.at(t * 2 + 1));
            auto kap = oracle_kappa(codec.kernel_enc1(), feat);
            for (int ci = 0; ci < 2; ++ci)
                for (int co = 0; co < 5; ++co)
                    v1[size_t(q * 5 + co)] +=
                        kap[size_t(ci * 5 + co)] * a.at(t * 2 + ci) * mu.mu[size_t(t)];
        }
    for (auto& x : v1) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    // grid-to-grid layer with 1/M weights
    std::vector<int> gcount(static_cast<size_t>(S), 0);
    for (int q = 0; q < S; ++q)
        for (int t = 0; t < S; ++t)
            if (euclid(nodes[size_t(q)], nodes[size_t(t)]) <= r_grid) ++gcount[size_t(q)];
    std::vector<double> v0(static_cast<size_t>(S) * 3, 0.0);
    for (int q = 0; q < S; ++q)
        for (int t = 0; t < S; ++t) {
            if (euclid(nodes[size_t(q)], nodes[size_t(t)]) > r_grid) continue;
            auto feat = edge_feature(nodes[size_t(q)], nodes[size_t(t)],
                                     t_grid.values[size_t(q)], t_grid.values[size_t(t)], grid);
            auto kap = oracle_kappa(codec.kernel_enc2(), feat);
            const double w = 1.0 / gcount[size_t(q)];
            for (int ci = 0; ci < 5; ++ci)
                for (int co = 0; co < 3; ++co)
                    v0[size_t(q * 3 + co)] += kap[size_t(ci * 3 + co)] * v1[size_t(t * 5 + ci)] * w;
        }
    for (int q = 0; q < S; ++q)
        for (int c = 0; c < 3; ++c) {
            const int R = 4;
            const int iz = q % R, iy = (q / R) % R, ix = q / (R * R);
            CHECK(latent.at(((c * R + ix) * R + iy) * R + iz) ==
                  doctest::Approx(v0[size_t(q * 3 + c)]).epsilon(1e-6));
        }
}

TEST_CASE("decode of constant latent with normalized weights is convex") {
    Rng rng(31);
    PointCloud cloud = random_cloud(30, rng);
    LatentGrid grid = build_latent_grid(cloud, {4, 4, 4}, 0.05);
    DistanceFeatures t_cloud = distance_features(cloud.coords, cloud);
    DistanceFeatures t_grid = distance_features(grid, cloud);
    const double r_grid = 1.8 * std::max({grid.spacing[0], grid.spacing[1], grid.spacing[2]});
    NeighborSet ns = ball_neighbors(cloud.coords, grid.nodes(), r_grid, 32, 5);
    EdgeGeometry eg = build_edge_geometry(cloud.coords, grid.nodes(), ns,
                                          WeightMode::UniformPerQuery, {}, t_cloud,
                                          t_grid, grid);
    Tensor latent_rows({grid.num_nodes(), 2}, 3.5);
    Tensor out = kernel_integrate_averaging(eg, latent_rows);
    for (std::int64_t i = 0; i < out.size(); ++i)
        CHECK(out.at(i) == doctest::Approx(3.5).epsilon(1e-10));
}

TEST_CASE("permuting the cloud permutes encode inputs consistently") {
    Rng rng(37);
    PointCloud cloud = random_cloud(18, rng);
    LatentGrid grid = build_latent_grid(cloud, {3, 3, 3}, 0.05);

    PointCloud perm;
    std::vector<int> order(18);
    for (int i = 0; i < 18; ++i) order[size_t(i)] = 17 - i;
    for (int i : order) perm.coords.push_back(cloud.coords[size_t(i)]);

    GraphOpConfig cfg;
    cfg.width1 = 4;
    cfg.width2 = 3;
    cfg.kernel_hidden = 5;
    cfg.cap = 6;  // cap binds: subsampling must still be stable under permutation
    ParamStore s1, s2;
    Rng r1(7), r2(7);
    GeometryCodec c1(cloud, grid, cfg, 1, 1, s1, r1);
    GeometryCodec c2(perm, grid, cfg, 1, 1, s2, r2);
    Tensor a1 = random_tensor({18, 1}, rng);
    Tensor a2({18, 1});
    for (int i = 0; i < 18; ++i) a2.data()[i] = a1.at(order[size_t(i)]);
    Tensor l1 = c1.encode(a1, c1.static_kernels());
    Tensor l2 = c2.encode(a2, c2.static_kernels());
    for (std::int64_t i = 0; i < l1.size(); ++i)
        CHECK(l1.at(i) == doctest::Approx(l2.at(i)).epsilon(1e-9));
}

TEST_CASE("resolution consistency of the averaging round trip") {
    // dense helical centerline; both ball radii track the grid spacing so the
    // averaging blur shrinks as the grid refines
    const int N = 600;
    PointCloud cloud;
    for (int i = 0; i < N; ++i) {
        const double t = static_cast<double>(i) / (N - 1);
        cloud.coords.push_back({0.5 + 0.4 * std::cos(4.0 * std::numbers::pi * t),
                                0.5 + 0.4 * std::sin(4.0 * std::numbers::pi * t), t});
    }
    auto field_at = [](const Vec3& p) {
        return std::sin(3.1 * p[0]) * std::sin(2.3 * p[1] + 0.4) * std::sin(1.7 * p[2] + 1.1);
    };
    Tensor values({N, 1});
    for (int i = 0; i < N; ++i) values.data()[i] = field_at(cloud.coords[size_t(i)]);
    DistanceFeatures t_cloud = distance_features(cloud.coords, cloud);

    double prev = 1e300;
    for (int res : {8, 16, 32}) {
        LatentGrid grid = build_latent_grid(cloud, {res, res, res}, 0.05);
        DistanceFeatures t_grid = distance_features(grid, cloud);
        const double r =
            1.8 * std::max({grid.spacing[0], grid.spacing[1], grid.spacing[2]});
        NeighborSet enc_ns = ball_neighbors(grid.nodes(), cloud.coords, r, 64, 3);
        EdgeGeometry enc = build_edge_geometry(grid.nodes(), cloud.coords, enc_ns,
                                               WeightMode::UniformPerQuery, {}, t_grid,
                                               t_cloud, grid);
        Tensor lat = kernel_integrate_averaging(enc, values);
        NeighborSet dec_ns = ball_neighbors(cloud.coords, grid.nodes(), r, 64, 4);
        EdgeGeometry dec = build_edge_geometry(cloud.coords, grid.nodes(), dec_ns,
                                               WeightMode::UniformPerQuery, {}, t_cloud,
                                               t_grid, grid);
        Tensor back = kernel_integrate_averaging(dec, lat);
        double l2 = 0.0;
        for (int i = 0; i < N; ++i) {
            const double d = back.at(i) - values.at(i);
            l2 += d * d;
        }
        l2 = std::sqrt(l2 / N);
        INFO("res " << res << " err " << l2);
        CHECK(l2 < prev);
        prev = l2;
    }
}

TEST_CASE("gradients flow through encode and decode") {
    Rng rng(43);
    PointCloud cloud = random_cloud(12, rng);
    LatentGrid grid = build_latent_grid(cloud, {3, 3, 3}, 0.05);
    ParamStore store;
    GraphOpConfig cfg;
    cfg.width1 = 4;
    cfg.width2 = 3;
    cfg.kernel_hidden = 4;
    cfg.cap = 8;
    GeometryCodec codec(cloud, grid, cfg, 1, 1, store, rng);
    Tensor a = random_tensor({12, 1}, rng);

    auto loss = [&]() {
        auto cache = codec.static_kernels();
        Tensor lat = codec.encode(a, cache);
        Tensor out = codec.decode(lat, cache);
        return sum_squares(out);
    };
    for (const char* name : {"enc.k1.w1", "enc.k2.w2", "dec.k1.w1", "dec.k2.w2",
                             "dec.out_w", "enc.k1.b2", "dec.k2.b1"}) {
        Tensor* p = store.find(name);
        REQUIRE(p != nullptr);
        INFO("param " << name);
        CHECK(param_fd_check(loss, *p, 1e-6) < 1e-4);
    }
}
