#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gwf/errors.hpp"

namespace gwf {

using Vec3 = std::array<double, 3>;

/// Scattered 3-D points carrying the irregular physical domain. Coordinates
/// in cm; an optional arc-length parameter tags each point's position along
/// a centerline.
struct PointCloud {
    std::vector<Vec3> coords;
    std::vector<double> arc_length;  // empty when absent

    std::size_t size() const { return coords.size(); }

    /// N >= 2, finite coordinates, no two points within 1e-9 of each other.
    void validate() const;
};

/// Uniform lattice over a padded bounding box of the cloud. Node linear
/// index is x-major: idx = (ix*S2 + iy)*S3 + iz.
struct LatentGrid {
    Vec3 origin{};
    Vec3 spacing{};
    std::array<int, 3> resolution{};

    int num_nodes() const { return resolution[0] * resolution[1] * resolution[2]; }
    Vec3 node(int idx) const;
    std::vector<Vec3> nodes() const;
    /// Axis-aligned box covered by the grid: [origin, origin + (res-1)*spacing].
    Vec3 box_max() const;
};

/// Per-query unsigned distance to the nearest cloud point (cm).
struct DistanceFeatures {
    std::vector<double> values;
};

/// Radius-limited neighbor lists, capped at M samples per query.
struct NeighborSet {
    struct Entry {
        int target;
        double distance;
    };
    std::vector<std::vector<Entry>> lists;  // one list per query
    double radius = 0.0;
    int cap = 0;

    std::size_t num_queries() const { return lists.size(); }
    std::size_t num_edges() const;
    std::vector<int> empty_queries() const;
};

/// Riemann-sum weight per target point (cm^3).
struct QuadratureWeights {
    std::vector<double> mu;
};

/// Box-shaped padded grid over the cloud. pad_fraction expands each side of
/// the bounding box; degenerate axes are widened to the largest remaining
/// extent (or 1.0 when all collapse) with a warning appended.
LatentGrid build_latent_grid(const PointCloud& cloud, std::array<int, 3> resolution,
                             double pad_fraction,
                             std::vector<std::string>* warnings = nullptr);

DistanceFeatures distance_features(const std::vector<Vec3>& queries,
                                   const PointCloud& cloud);
DistanceFeatures distance_features(const LatentGrid& grid, const PointCloud& cloud);

/// Closed-ball neighbors within radius r. When a query has more than `cap`
/// candidates, a subsample of size cap is drawn with priorities derived from
/// the seed and the point coordinates, so results do not depend on target
/// ordering. Lists are sorted by (distance, priority).
NeighborSet ball_neighbors(const std::vector<Vec3>& queries,
                           const std::vector<Vec3>& targets, double r, int cap,
                           std::uint64_t seed);

/// mu_i = V3 * d_k(i)^3 / k where d_k is the distance to the k-th nearest
/// other target and V3 the unit-ball volume; an inverse local-density
/// estimate so scattered sums approximate integrals.
QuadratureWeights riemann_weights(const PointCloud& targets, int k_density);

/// Uniform 1/M weights per query over an existing neighbor set (latent-grid
/// targets); weight index parallels the neighbor lists.
std::vector<std::vector<double>> grid_weights(const NeighborSet& neighbors);

/// Mean nearest-neighbor distance over the cloud; drives default radii.
double mean_nn_spacing(const PointCloud& cloud);

// CSV exchange: header "x,y,z" or "x,y,z,s", one point per row, cm units.
PointCloud read_pointcloud_csv(const std::string& path);
void write_pointcloud_csv(const PointCloud& cloud, const std::string& path);

}  // namespace gwf
