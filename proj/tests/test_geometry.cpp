#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "gwf/geometry.hpp"
#include "gwf/tensor.hpp"

using namespace gwf;

namespace {

PointCloud unit_cube_corners() {
    PointCloud c;
    for (int x = 0; x <= 1; ++x)
        for (int y = 0; y <= 1; ++y)
            for (int z = 0; z <= 1; ++z)
                c.coords.push_back({double(x), double(y), double(z)});
    return c;
}

PointCloud random_cloud(int n, Rng& rng, double scale = 1.0) {
    PointCloud c;
    for (int i = 0; i < n; ++i)
        c.coords.push_back({rng.uniform(0, scale), rng.uniform(0, scale),
                            rng.uniform(0, scale)});
    return c;
}

double euclid(const Vec3& a, const Vec3& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                     (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

TEST_CASE("grid over unit cube corners, no padding") {
    auto cloud = unit_cube_corners();
    LatentGrid g = build_latent_grid(cloud, {2, 2, 2}, 0.0);
    std::set<std::array<long, 3>> nodes;
    for (int i = 0; i < g.num_nodes(); ++i) {
        Vec3 p = g.node(i);
        nodes.insert({std::lround(p[0] * 1e9), std::lround(p[1] * 1e9), std::lround(p[2] * 1e9)});
    }
    CHECK(nodes.size() == 8);
    for (const auto& c : cloud.coords)
        CHECK(nodes.count({std::lround(c[0] * 1e9), std::lround(c[1] * 1e9),
                           std::lround(c[2] * 1e9)}) == 1);
}

TEST_CASE("grid padding arithmetic") {
    auto cloud = unit_cube_corners();
    LatentGrid g = build_latent_grid(cloud, {4, 4, 4}, 0.1);
    for (int a = 0; a < 3; ++a) {
        CHECK(g.origin[a] == doctest::Approx(-0.1));
        CHECK(g.spacing[a] == doctest::Approx(0.4));
    }
    CHECK(g.box_max()[0] == doctest::Approx(1.1));
}

TEST_CASE("collinear cloud gets degenerate axes widened") {
    PointCloud c;
    for (int i = 0; i < 8; ++i) c.coords.push_back({double(i), 0.0, 0.0});
    std::vector<std::string> warnings;
    LatentGrid g = build_latent_grid(c, {4, 4, 4}, 0.0, &warnings);
    CHECK(warnings.size() == 2);
    for (int a = 0; a < 3; ++a) CHECK(g.spacing[a] > 0.0);
}

TEST_CASE("distance features basics") {
    PointCloud c;
    c.coords = {{0, 0, 0}, {1, 0, 0}};
    auto d = distance_features(std::vector<Vec3>{{0, 0, 0}, {2, 0, 0}}, c);
    CHECK(d.values[0] == doctest::Approx(0.0));
    CHECK(d.values[1] == doctest::Approx(1.0));
}

TEST_CASE("distance features match brute-force double loop on 1000 queries") {
    Rng rng(2024);
    PointCloud cloud = random_cloud(700, rng);
    std::vector<Vec3> queries;
    for (int i = 0; i < 1000; ++i)
        queries.push_back({rng.uniform(-0.4, 1.4), rng.uniform(-0.4, 1.4),
                           rng.uniform(-0.4, 1.4)});
    auto fast = distance_features(queries, cloud);
    for (size_t q = 0; q < queries.size(); ++q) {
        double best = 1e300;
        for (const Vec3& p : cloud.coords) best = std::min(best, euclid(queries[q], p));
        CHECK(fast.values[q] == best);  // identical arithmetic path, exact match
    }
}

TEST_CASE("distance features are 1-Lipschitz") {
    Rng rng(7);
    PointCloud cloud = random_cloud(200, rng);
    for (int t = 0; t < 200; ++t) {
        Vec3 p{rng.uniform(-1, 2), rng.uniform(-1, 2), rng.uniform(-1, 2)};
        Vec3 q{rng.uniform(-1, 2), rng.uniform(-1, 2), rng.uniform(-1, 2)};
        auto d = distance_features(std::vector<Vec3>{p, q}, cloud);
        CHECK(std::abs(d.values[0] - d.values[1]) <= euclid(p, q) + 1e-12);
    }
}

TEST_CASE("ball neighbors: full coverage when radius spans everything") {
    Rng rng(3);
    PointCloud cloud = random_cloud(40, rng);
    auto ns = ball_neighbors(cloud.coords, cloud.coords, 10.0, 64, 1);
    for (const auto& list : ns.lists) CHECK(list.size() == 40);
}

TEST_CASE("ball boundary is closed at exactly r") {
    std::vector<Vec3> targets = {{1, 0, 0}, {-1, 0, 0}, {0, 2, 0}};
    auto ns = ball_neighbors({{0, 0, 0}}, targets, 1.0, 8, 0);
    CHECK(ns.lists[0].size() == 2);
    for (const auto& e : ns.lists[0]) CHECK(e.distance == doctest::Approx(1.0));
}

TEST_CASE("capped subsample is reproducible and permutation invariant") {
    Rng rng(99);
    PointCloud cloud = random_cloud(300, rng, 0.2);  // clustered: everything close
    std::vector<Vec3> queries = {{0.1, 0.1, 0.1}, {0.05, 0.15, 0.02}};
    auto a = ball_neighbors(queries, cloud.coords, 0.5, 8, 42);
    auto b = ball_neighbors(queries, cloud.coords, 0.5, 8, 42);
    REQUIRE(a.lists.size() == b.lists.size());
    for (size_t q = 0; q < a.lists.size(); ++q) {
        CHECK(a.lists[q].size() == 8);
        for (size_t i = 0; i < a.lists[q].size(); ++i) {
            CHECK(a.lists[q][i].target == b.lists[q][i].target);
        }
    }
    // permute targets; selected points (as coordinates) must be unchanged
    std::vector<Vec3> shuffled = cloud.coords;
    std::reverse(shuffled.begin(), shuffled.end());
    auto c = ball_neighbors(queries, shuffled, 0.5, 8, 42);
    for (size_t q = 0; q < a.lists.size(); ++q) {
        REQUIRE(c.lists[q].size() == a.lists[q].size());
        for (size_t i = 0; i < a.lists[q].size(); ++i) {
            const Vec3& pa = cloud.coords[size_t(a.lists[q][i].target)];
            const Vec3& pc = shuffled[size_t(c.lists[q][i].target)];
            CHECK(pa == pc);
        }
    }
    // different seed picks a different subsample
    auto d = ball_neighbors(queries, cloud.coords, 0.5, 8, 43);
    bool any_diff = false;
    for (size_t i = 0; i < 8; ++i)
        any_diff = any_diff || d.lists[0][i].target != a.lists[0][i].target;
    CHECK(any_diff);
}

TEST_CASE("neighbor symmetry without cap") {
    Rng rng(5);
    PointCloud cloud = random_cloud(60, rng);
    auto ns = ball_neighbors(cloud.coords, cloud.coords, 0.3, 1000, 7);
    for (size_t i = 0; i < ns.lists.size(); ++i)
        for (const auto& e : ns.lists[i]) {
            bool back = false;
            for (const auto& r : ns.lists[size_t(e.target)])
                back = back || size_t(r.target) == i;
            CHECK(back);
        }
}

TEST_CASE("riemann weights: uniform lattice symmetry") {
    PointCloud lattice;
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y)
            for (int z = 0; z < 4; ++z) lattice.coords.push_back({x * 0.5, y * 0.5, z * 0.5});
    for (int k : {1, 3}) {
        auto w = riemann_weights(lattice, k);
        for (double m : w.mu) CHECK(m == doctest::Approx(w.mu[0]).epsilon(1e-9));
    }
}

TEST_CASE("riemann weights: two points, k=1") {
    PointCloud two;
    two.coords = {{0, 0, 0}, {0, 0, 2}};
    auto w = riemann_weights(two, 1);
    const double expect = 4.0 * std::numbers::pi / 3.0 * 8.0;
    CHECK(w.mu[0] == doctest::Approx(expect));
    CHECK(w.mu[1] == doctest::Approx(expect));
}

TEST_CASE("riemann weights: denser cluster gets smaller weights") {
    Rng rng(11);
    PointCloud cloud;
    // sparse cluster in [0,1]^3, dense cluster (2x density) in [3,4]^3
    for (int i = 0; i < 250; ++i)
        cloud.coords.push_back({rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)});
    for (int i = 0; i < 500; ++i)
        cloud.coords.push_back({3 + rng.uniform(0, 1), 3 + rng.uniform(0, 1), 3 + rng.uniform(0, 1)});
    auto w = riemann_weights(cloud, 4);
    double sparse = 0.0, dense = 0.0;
    for (int i = 0; i < 250; ++i) sparse += w.mu[size_t(i)];
    for (int i = 250; i < 750; ++i) dense += w.mu[size_t(i)];
    sparse /= 250.0;
    dense /= 500.0;
    CHECK(dense / sparse == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("riemann weights total approximates sampled volume") {
    Rng rng(13);
    PointCloud cloud = random_cloud(1000, rng, 2.0);  // box volume 8
    auto w = riemann_weights(cloud, 4);
    double total = 0.0;
    for (double m : w.mu) total += m;
    CHECK(total == doctest::Approx(8.0).epsilon(0.3));
}

TEST_CASE("riemann weights reject duplicates") {
    PointCloud bad;
    bad.coords = {{0, 0, 0}, {1, 0, 0}, {0, 0, 0}};
    CHECK_THROWS_AS(riemann_weights(bad, 1), DataError);
}

TEST_CASE("grid weights are uniform per query and sum to 1") {
    std::vector<Vec3> targets;
    for (int i = 0; i < 5; ++i) targets.push_back({i * 0.1, 0, 0});
    auto ns = ball_neighbors({{0.2, 0, 0}, {10, 10, 10}}, targets, 0.25, 32, 0);
    auto w = grid_weights(ns);
    REQUIRE(ns.lists[0].size() == 5);
    for (double v : w[0]) CHECK(v == doctest::Approx(0.2));
    double s = 0.0;
    for (double v : w[0]) s += v;
    CHECK(s == doctest::Approx(1.0));
    CHECK(w[1].empty());
    CHECK(ns.empty_queries() == std::vector<int>{1});
}

TEST_CASE("point cloud CSV round trip") {
    Rng rng(17);
    PointCloud c = random_cloud(20, rng);
    c.arc_length.resize(20);
    for (int i = 0; i < 20; ++i) c.arc_length[size_t(i)] = i * 0.25;
    const std::string path = "cloud_test.csv";
    write_pointcloud_csv(c, path);
    PointCloud back = read_pointcloud_csv(path);
    REQUIRE(back.size() == c.size());
    for (size_t i = 0; i < c.size(); ++i) {
        CHECK(back.coords[i] == c.coords[i]);
        CHECK(back.arc_length[i] == c.arc_length[i]);
    }
    std::filesystem::remove(path);
}
