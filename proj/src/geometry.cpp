#include "gwf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace gwf {

namespace {

double dist2(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// splitmix64; used both as hash combiner and for coordinate identities.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_point(std::uint64_t h, const Vec3& p) {
    for (double c : p) {
        std::uint64_t bits;
        std::memcpy(&bits, &c, sizeof(bits));
        h = mix64(h ^ bits);
    }
    return h;
}

// Uniform hash over integer cells.
struct CellKey {
    int x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
    std::size_t operator()(const CellKey& k) const {
        return static_cast<std::size_t>(
            mix64(static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.x)) ^
                  (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.y)) << 21) ^
                  (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.z)) << 42)));
    }
};

// Bins points into cubic cells of a given size for radius and nearest
// queries without tree balancing.
class SpatialHash {
public:
    SpatialHash(const std::vector<Vec3>& points, double cell_size)
        : points_(points), cell_(cell_size) {
        if (!(cell_ > 0.0)) throw ShapeError("SpatialHash: cell size must be positive");
        lo_ = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
               std::numeric_limits<double>::max()};
        hi_ = {-std::numeric_limits<double>::max(), -std::numeric_limits<double>::max(),
               -std::numeric_limits<double>::max()};
        for (const Vec3& p : points) {
            for (int a = 0; a < 3; ++a) {
                lo_[a] = std::min(lo_[a], p[a]);
                hi_[a] = std::max(hi_[a], p[a]);
            }
        }
        for (int i = 0; i < static_cast<int>(points.size()); ++i)
            cells_[key_of(points[static_cast<size_t>(i)])].push_back(i);
        for (int a = 0; a < 3; ++a) {
            cell_lo_[a] = coord_cell(lo_[a]);
            cell_hi_[a] = coord_cell(hi_[a]);
        }
    }

    // All targets with |p - q| <= r (closed ball).
    void ball(const Vec3& q, double r, std::vector<std::pair<int, double>>& out) const {
        out.clear();
        const double r2 = r * r;
        const int span = static_cast<int>(std::ceil(r / cell_));
        const CellKey c = key_of(q);
        for (int dx = -span; dx <= span; ++dx)
            for (int dy = -span; dy <= span; ++dy)
                for (int dz = -span; dz <= span; ++dz) {
                    auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == cells_.end()) continue;
                    for (int idx : it->second) {
                        const double d2 = dist2(q, points_[static_cast<size_t>(idx)]);
                        if (d2 <= r2) out.emplace_back(idx, std::sqrt(d2));
                    }
                }
    }

    // Distances to the k nearest points, optionally skipping one index
    // (ascending; exact by expanding-ring search).
    std::vector<double> knearest(const Vec3& q, int k, int skip_index = -1) const {
        std::vector<double> best;  // kept sorted ascending, size <= k
        const CellKey c = key_of(q);
        const int max_ring = max_ring_from(c);
        const int first_ring = min_ring_from(c);  // rings before the occupied box are empty
        for (int ring = first_ring; ring <= max_ring; ++ring) {
            // Any point in a farther ring is at least (ring-1)*cell away.
            if (static_cast<int>(best.size()) == k &&
                best.back() < static_cast<double>(ring - 1) * cell_)
                break;
            visit_ring(c, ring, [&](int idx) {
                if (idx == skip_index) return;
                const double d = std::sqrt(dist2(q, points_[static_cast<size_t>(idx)]));
                if (static_cast<int>(best.size()) < k) {
                    best.insert(std::upper_bound(best.begin(), best.end(), d), d);
                } else if (d < best.back()) {
                    best.pop_back();
                    best.insert(std::upper_bound(best.begin(), best.end(), d), d);
                }
            });
        }
        return best;
    }

private:
    CellKey key_of(const Vec3& p) const {
        return {coord_cell(p[0]), coord_cell(p[1]), coord_cell(p[2])};
    }
    int coord_cell(double v) const { return static_cast<int>(std::floor(v / cell_)); }

    int max_ring_from(const CellKey& c) const {
        int m = 0;
        m = std::max(m, std::abs(c.x - cell_lo_[0]));
        m = std::max(m, std::abs(c.x - cell_hi_[0]));
        m = std::max(m, std::abs(c.y - cell_lo_[1]));
        m = std::max(m, std::abs(c.y - cell_hi_[1]));
        m = std::max(m, std::abs(c.z - cell_lo_[2]));
        m = std::max(m, std::abs(c.z - cell_hi_[2]));
        return m;
    }

    int min_ring_from(const CellKey& c) const {
        const int dx = std::max({cell_lo_[0] - c.x, 0, c.x - cell_hi_[0]});
        const int dy = std::max({cell_lo_[1] - c.y, 0, c.y - cell_hi_[1]});
        const int dz = std::max({cell_lo_[2] - c.z, 0, c.z - cell_hi_[2]});
        return std::max({dx, dy, dz});
    }

    template <typename F>
    void visit_ring(const CellKey& c, int ring, F&& f) const {
        auto visit_cell = [&](int x, int y, int z) {
            auto it = cells_.find({x, y, z});
            if (it == cells_.end()) return;
            for (int idx : it->second) f(idx);
        };
        if (ring == 0) {
            visit_cell(c.x, c.y, c.z);
            return;
        }
        for (int dx = -ring; dx <= ring; ++dx)
            for (int dy = -ring; dy <= ring; ++dy)
                for (int dz = -ring; dz <= ring; ++dz) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
                        continue;
                    visit_cell(c.x + dx, c.y + dy, c.z + dz);
                }
    }

    const std::vector<Vec3>& points_;
    double cell_;
    Vec3 lo_{}, hi_{};
    std::array<int, 3> cell_lo_{}, cell_hi_{};
    std::unordered_map<CellKey, std::vector<int>, CellKeyHash> cells_;
};

// Sized from the largest bbox extent so collinear clouds (centerlines) do not
// collapse the cells; ring counts stay bounded for nearest-neighbor search.
double default_cell_size(const std::vector<Vec3>& pts) {
    Vec3 lo = pts[0], hi = pts[0];
    for (const Vec3& p : pts)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    const double max_extent =
        std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-9});
    const double divisions =
        std::clamp(2.0 * std::cbrt(static_cast<double>(pts.size())), 4.0, 64.0);
    return max_extent / divisions;
}

}  // namespace

// ---------------------------------------------------------------------------
// PointCloud
// ---------------------------------------------------------------------------

void PointCloud::validate() const {
    if (coords.size() < 2) throw DataError("PointCloud: need at least 2 points");
    for (const Vec3& p : coords)
        for (double c : p)
            if (!std::isfinite(c)) throw DataError("PointCloud: non-finite coordinate");
    if (!arc_length.empty() && arc_length.size() != coords.size())
        throw DataError("PointCloud: arc-length count does not match point count");
    // duplicate detection via hashing at 1e-9 granularity, then exact check
    SpatialHash hash(coords, std::max(default_cell_size(coords), 1e-6));
    std::vector<std::pair<int, double>> near;
    for (size_t i = 0; i < coords.size(); ++i) {
        hash.ball(coords[i], 1e-9, near);
        for (auto& [idx, d] : near) {
            if (static_cast<size_t>(idx) != i)
                throw DataError("PointCloud: points " + std::to_string(i) + " and " +
                                std::to_string(idx) + " coincide within 1e-9");
        }
    }
}

// ---------------------------------------------------------------------------
// LatentGrid
// ---------------------------------------------------------------------------

Vec3 LatentGrid::node(int idx) const {
    const int S2 = resolution[1], S3 = resolution[2];
    const int iz = idx % S3;
    const int iy = (idx / S3) % S2;
    const int ix = idx / (S2 * S3);
    return {origin[0] + ix * spacing[0], origin[1] + iy * spacing[1],
            origin[2] + iz * spacing[2]};
}

std::vector<Vec3> LatentGrid::nodes() const {
    std::vector<Vec3> out;
    out.reserve(static_cast<size_t>(num_nodes()));
    for (int i = 0; i < num_nodes(); ++i) out.push_back(node(i));
    return out;
}

Vec3 LatentGrid::box_max() const {
    return {origin[0] + (resolution[0] - 1) * spacing[0],
            origin[1] + (resolution[1] - 1) * spacing[1],
            origin[2] + (resolution[2] - 1) * spacing[2]};
}

LatentGrid build_latent_grid(const PointCloud& cloud, std::array<int, 3> resolution,
                             double pad_fraction, std::vector<std::string>* warnings) {
    cloud.validate();
    for (int a = 0; a < 3; ++a)
        if (resolution[a] < 2)
            throw ShapeError("build_latent_grid: resolution must be >= 2 per axis");
    if (pad_fraction < 0.0) throw ShapeError("build_latent_grid: pad_fraction must be >= 0");

    Vec3 lo = cloud.coords[0], hi = cloud.coords[0];
    for (const Vec3& p : cloud.coords)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    Vec3 extent{hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
    const double max_extent = std::max({extent[0], extent[1], extent[2]});
    for (int a = 0; a < 3; ++a) {
        if (extent[a] <= 0.0) {
            const double widened = max_extent > 0.0 ? max_extent : 1.0;
            lo[a] -= widened / 2.0;
            hi[a] += widened / 2.0;
            extent[a] = widened;
            if (warnings)
                warnings->push_back("grid axis " + std::to_string(a) +
                                    " is degenerate; widened to " + std::to_string(widened));
        }
    }
    LatentGrid g;
    g.resolution = resolution;
    for (int a = 0; a < 3; ++a) {
        const double pad = pad_fraction * extent[a];
        g.origin[a] = lo[a] - pad;
        g.spacing[a] = (extent[a] + 2.0 * pad) / static_cast<double>(resolution[a] - 1);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Distance features
// ---------------------------------------------------------------------------

DistanceFeatures distance_features(const std::vector<Vec3>& queries,
                                   const PointCloud& cloud) {
    if (cloud.coords.empty()) throw DataError("distance_features: empty cloud");
    SpatialHash hash(cloud.coords, default_cell_size(cloud.coords));
    DistanceFeatures out;
    out.values.reserve(queries.size());
    for (const Vec3& q : queries) {
        auto nearest = hash.knearest(q, 1);
        out.values.push_back(nearest.empty() ? 0.0 : nearest[0]);
    }
    return out;
}

DistanceFeatures distance_features(const LatentGrid& grid, const PointCloud& cloud) {
    return distance_features(grid.nodes(), cloud);
}

// ---------------------------------------------------------------------------
// Ball neighborhoods
// ---------------------------------------------------------------------------

std::size_t NeighborSet::num_edges() const {
    std::size_t n = 0;
    for (const auto& l : lists) n += l.size();
    return n;
}

std::vector<int> NeighborSet::empty_queries() const {
    std::vector<int> out;
    for (size_t i = 0; i < lists.size(); ++i)
        if (lists[i].empty()) out.push_back(static_cast<int>(i));
    return out;
}

NeighborSet ball_neighbors(const std::vector<Vec3>& queries,
                           const std::vector<Vec3>& targets, double r, int cap,
                           std::uint64_t seed) {
    if (!(r > 0.0)) throw ShapeError("ball_neighbors: radius must be positive");
    if (cap < 1) throw ShapeError("ball_neighbors: cap must be >= 1");
    if (targets.empty()) throw ShapeError("ball_neighbors: no targets");

    SpatialHash hash(targets, r);
    NeighborSet ns;
    ns.radius = r;
    ns.cap = cap;
    ns.lists.resize(queries.size());

    struct Cand {
        int target;
        double distance;
        std::uint64_t priority;
    };
    std::vector<std::pair<int, double>> found;
    std::vector<Cand> cands;
    for (size_t qi = 0; qi < queries.size(); ++qi) {
        hash.ball(queries[qi], r, found);
        cands.clear();
        const std::uint64_t qh = hash_point(seed, queries[qi]);
        for (auto& [ti, d] : found)
            cands.push_back({ti, d, hash_point(qh, targets[static_cast<size_t>(ti)])});
        if (static_cast<int>(cands.size()) > cap) {
            // priority subsample keyed on point identity, independent of input order
            std::nth_element(cands.begin(), cands.begin() + cap, cands.end(),
                             [](const Cand& a, const Cand& b) { return a.priority < b.priority; });
            cands.resize(static_cast<size_t>(cap));
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.distance != b.distance) return a.distance < b.distance;
            return a.priority < b.priority;
        });
        auto& list = ns.lists[qi];
        list.reserve(cands.size());
        for (const Cand& c : cands) list.push_back({c.target, c.distance});
    }
    return ns;
}

// ---------------------------------------------------------------------------
// Quadrature weights
// ---------------------------------------------------------------------------

QuadratureWeights riemann_weights(const PointCloud& targets, int k_density) {
    targets.validate();
    const int n = static_cast<int>(targets.size());
    if (k_density < 1 || k_density >= n)
        throw ShapeError("riemann_weights: need N > k_density >= 1");
    SpatialHash hash(targets.coords, default_cell_size(targets.coords));
    constexpr double kUnitBallVolume = 4.0 * std::numbers::pi / 3.0;
    QuadratureWeights w;
    w.mu.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto dists = hash.knearest(targets.coords[static_cast<size_t>(i)], k_density, i);
        const double dk = dists.back();
        if (!(dk > 0.0))
            throw DataError("riemann_weights: duplicate points (zero k-NN distance at " +
                            std::to_string(i) + ")");
        w.mu[static_cast<size_t>(i)] =
            kUnitBallVolume * dk * dk * dk / static_cast<double>(k_density);
    }
    return w;
}

std::vector<std::vector<double>> grid_weights(const NeighborSet& neighbors) {
    std::vector<std::vector<double>> w(neighbors.lists.size());
    for (size_t q = 0; q < neighbors.lists.size(); ++q) {
        const size_t m = neighbors.lists[q].size();
        if (m == 0) continue;  // flagged through NeighborSet::empty_queries
        w[q].assign(m, 1.0 / static_cast<double>(m));
    }
    return w;
}

double mean_nn_spacing(const PointCloud& cloud) {
    cloud.validate();
    SpatialHash hash(cloud.coords, default_cell_size(cloud.coords));
    double total = 0.0;
    for (size_t i = 0; i < cloud.size(); ++i)
        total += hash.knearest(cloud.coords[i], 1, static_cast<int>(i)).back();
    return total / static_cast<double>(cloud.size());
}

// ---------------------------------------------------------------------------
// CSV exchange
// ---------------------------------------------------------------------------

PointCloud read_pointcloud_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("read_pointcloud_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw DataError("read_pointcloud_csv: empty file '" + path + "'");
    const bool with_s = line == "x,y,z,s";
    if (!with_s && line != "x,y,z")
        throw DataError("read_pointcloud_csv: bad header '" + line + "' in '" + path + "'");
    PointCloud cloud;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Vec3 p;
        double s = 0.0;
        char comma;
        if (!(ls >> p[0] >> comma >> p[1] >> comma >> p[2]))
            throw DataError("read_pointcloud_csv: parse error at " + path + ":" +
                            std::to_string(lineno));
        if (with_s && !(ls >> comma >> s))
            throw DataError("read_pointcloud_csv: missing arc length at " + path + ":" +
                            std::to_string(lineno));
        cloud.coords.push_back(p);
        if (with_s) cloud.arc_length.push_back(s);
    }
    cloud.validate();
    return cloud;
}

void write_pointcloud_csv(const PointCloud& cloud, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("write_pointcloud_csv: cannot open '" + path + "'");
    const bool with_s = !cloud.arc_length.empty();
    os << (with_s ? "x,y,z,s\n" : "x,y,z\n");
    os.precision(17);
    for (size_t i = 0; i < cloud.size(); ++i) {
        os << cloud.coords[i][0] << ',' << cloud.coords[i][1] << ',' << cloud.coords[i][2];
        if (with_s) os << ',' << cloud.arc_length[i];
        os << '\n';
    }
    if (!os) throw DataError("write_pointcloud_csv: write failed for '" + path + "'");
}

}  // namespace gwf
